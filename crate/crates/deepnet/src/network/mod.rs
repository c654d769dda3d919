//! LSTM trunk with an input projection and per-step output heads.
//!
//! Activations are stored feature-major (one column per sequence). A batch
//! is ordered by decreasing length so that the sequences still running at
//! step `t` are the first `n_t` columns; finished sequences cost nothing.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use dlnice_core::rng::StreamRng;
use dlnice_core::simulator::expit;
use dlnice_core::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Linear output trained with squared error.
    Gaussian,
    /// Logit output trained with binary cross-entropy.
    Bernoulli,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub name: String,
    pub kind: HeadKind,
    /// Whether the head also sees the per-step side inputs.
    pub uses_side: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub side_dim: usize,
    pub feature_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: Vec<HeadSpec>,
}

/// One named parameter matrix inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Architecture {
    fn head_in(&self, h: &HeadSpec) -> usize {
        self.hidden + if h.uses_side { self.side_dim } else { 0 }
    }

    fn layer_in(&self, l: usize) -> usize {
        if l == 0 {
            self.feature_dim
        } else {
            self.hidden
        }
    }

    /// Parameter blocks in declaration order (column-major storage).
    pub fn blocks(&self) -> Vec<Block> {
        let mut shapes = vec![
            ("proj.w".to_string(), self.feature_dim, self.input_dim),
            ("proj.b".to_string(), self.feature_dim, 1),
        ];
        for l in 0..self.layers {
            shapes.push((format!("lstm{l}.w_x"), 4 * self.hidden, self.layer_in(l)));
            shapes.push((format!("lstm{l}.w_h"), 4 * self.hidden, self.hidden));
            shapes.push((format!("lstm{l}.b"), 4 * self.hidden, 1));
        }
        for h in &self.heads {
            shapes.push((format!("head.{}.w", h.name), 1, self.head_in(h)));
            shapes.push((format!("head.{}.b", h.name), 1, 1));
        }
        let mut offset = 0;
        shapes
            .into_iter()
            .map(|(name, rows, cols)| {
                let b = Block { name, rows, cols, offset };
                offset += rows * cols;
                b
            })
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.blocks().iter().map(Block::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.feature_dim == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::Shape(format!("degenerate architecture {self:?}")));
        }
        if self.heads.is_empty() {
            return Err(Error::Shape("architecture has no heads".into()));
        }
        Ok(())
    }
}

/// Block indices, resolved once.
#[derive(Clone, Debug)]
struct Index {
    proj_w: Block,
    proj_b: Block,
    w_x: Vec<Block>,
    w_h: Vec<Block>,
    b: Vec<Block>,
    head_w: Vec<Block>,
    head_b: Vec<Block>,
}

impl Index {
    fn new(arch: &Architecture) -> Self {
        let mut it = arch.blocks().into_iter();
        let mut next = || it.next().expect("block layout");
        let proj_w = next();
        let proj_b = next();
        let (mut w_x, mut w_h, mut b) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..arch.layers {
            w_x.push(next());
            w_h.push(next());
            b.push(next());
        }
        let (mut head_w, mut head_b) = (Vec::new(), Vec::new());
        for _ in &arch.heads {
            head_w.push(next());
            head_b.push(next());
        }
        Self { proj_w, proj_b, w_x, w_h, b, head_w, head_b }
    }
}

fn view<'a>(p: &'a [f64], b: &Block) -> DMatrixView<'a, f64> {
    DMatrixView::from_slice(&p[b.offset..b.offset + b.len()], b.rows, b.cols)
}

fn view_mut<'a>(p: &'a mut [f64], b: &Block) -> DMatrixViewMut<'a, f64> {
    DMatrixViewMut::from_slice(&mut p[b.offset..b.offset + b.len()], b.rows, b.cols)
}

fn sigmoid(x: f64) -> f64 {
    expit(x)
}

/// Network structure plus its flat parameter vector.
#[derive(Clone, Debug)]
pub struct Network {
    pub arch: Architecture,
    pub params: Vec<f64>,
    index: Index,
}

/// One training sequence. Row `t` of each field belongs to step `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    /// `len * input_dim`
    pub inputs: Vec<f64>,
    /// `len * side_dim`
    pub side: Vec<f64>,
    /// `len * n_heads`
    pub targets: Vec<f64>,
    /// `len * n_heads`; false entries contribute no loss.
    pub mask: Vec<bool>,
    pub len: usize,
}

/// Sequences laid out by time step, longest first.
#[derive(Clone, Debug)]
pub struct SequenceBatch {
    /// Position in the caller's slice of batch column `j`.
    pub order: Vec<usize>,
    /// Active column count per step.
    pub active: Vec<usize>,
    pub x: Vec<DMatrix<f64>>,
    pub side: Vec<DMatrix<f64>>,
    pub y: Vec<DMatrix<f64>>,
    pub m: Vec<DMatrix<f64>>,
    /// Unmasked entries per head over the batch.
    pub counts: Vec<usize>,
}

impl SequenceBatch {
    pub fn new(arch: &Architecture, seqs: &[&Sequence]) -> Result<Self> {
        let nh = arch.heads.len();
        for s in seqs {
            if s.inputs.len() != s.len * arch.input_dim
                || s.side.len() != s.len * arch.side_dim
                || s.targets.len() != s.len * nh
                || s.mask.len() != s.len * nh
            {
                return Err(Error::Shape("sequence fields do not match its length".into()));
            }
        }
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        order.sort_by(|&a, &b| seqs[b].len.cmp(&seqs[a].len));
        let t_max = order.first().map_or(0, |&i| seqs[i].len);
        let mut batch = Self {
            active: Vec::with_capacity(t_max),
            x: Vec::with_capacity(t_max),
            side: Vec::with_capacity(t_max),
            y: Vec::with_capacity(t_max),
            m: Vec::with_capacity(t_max),
            counts: vec![0; nh],
            order,
        };
        for t in 0..t_max {
            let n = batch.order.iter().take_while(|&&i| seqs[i].len > t).count();
            let cols = &batch.order[..n];
            let pick = |dim: usize, f: &dyn Fn(&Sequence) -> &[f64]| {
                DMatrix::from_fn(dim, n, |r, j| f(seqs[cols[j]])[t * dim + r])
            };
            batch.x.push(pick(arch.input_dim, &|s| &s.inputs));
            batch.side.push(pick(arch.side_dim, &|s| &s.side));
            batch.y.push(pick(nh, &|s| &s.targets));
            let m = DMatrix::from_fn(nh, n, |r, j| f64::from(u8::from(seqs[cols[j]].mask[t * nh + r])));
            for (h, c) in batch.counts.iter_mut().enumerate() {
                *c += m.row(h).iter().filter(|&&v| v > 0.0).count();
            }
            batch.m.push(m);
            batch.active.push(n);
        }
        Ok(batch)
    }

    pub fn steps(&self) -> usize {
        self.active.len()
    }
}

/// Activations of one layer at one step.
#[derive(Clone, Debug)]
struct LayerCache {
    input: DMatrix<f64>,
    /// Gate activations stacked as `[i; f; g; o]`.
    gates: DMatrix<f64>,
    c: DMatrix<f64>,
    tanh_c: DMatrix<f64>,
    /// Dropout multipliers applied to this layer's output (empty if none).
    drop: Option<DMatrix<f64>>,
}

/// Forward pass record used by [`Network::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    layers: Vec<Vec<LayerCache>>,
    /// Hidden state of each layer per step, before dropout.
    hidden: Vec<Vec<DMatrix<f64>>>,
    /// Trunk output fed to the heads (after dropout).
    top: Vec<DMatrix<f64>>,
    /// Raw head outputs `n_heads x n_t` (logits for Bernoulli heads).
    pub outputs: Vec<DMatrix<f64>>,
}

/// Per-head mean losses and their sum.
#[derive(Clone, Debug, PartialEq)]
pub struct Loss {
    pub per_head: Vec<f64>,
    pub total: f64,
}

/// `log(1 + e^z) - y z`, the cross-entropy of a logit.
fn bce_logit(z: f64, y: f64) -> f64 {
    let sp = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    sp - y * z
}

impl Network {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases except
    /// the forget gate bias, which starts at 1.
    pub fn init(arch: Architecture, rng: &mut StreamRng) -> Result<Self> {
        arch.validate()?;
        let index = Index::new(&arch);
        let mut params = vec![0.0; arch.n_params()];
        for b in arch.blocks() {
            let is_bias = b.cols == 1 && b.name.ends_with(".b");
            if is_bias {
                continue;
            }
            let bound = if b.name.starts_with("lstm") {
                1.0 / (arch.hidden as f64).sqrt()
            } else {
                1.0 / (b.cols as f64).sqrt()
            };
            for v in &mut params[b.offset..b.offset + b.len()] {
                *v = bound * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
        let h = arch.hidden;
        for b in &index.b {
            for v in &mut params[b.offset + h..b.offset + 2 * h] {
                *v = 1.0;
            }
        }
        Ok(Self { arch, params, index })
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.n_params() {
            return Err(Error::Shape(format!(
                "{} parameters for an architecture with {}",
                params.len(),
                arch.n_params()
            )));
        }
        let index = Index::new(&arch);
        Ok(Self { arch, params, index })
    }

    pub fn head_index(&self, name: &str) -> Option<usize> {
        self.arch.heads.iter().position(|h| h.name == name)
    }

    /// Sets the bias of head `j`.
    pub fn set_head_bias(&mut self, j: usize, v: f64) {
        self.params[self.index.head_b[j].offset] = v;
    }

    /// Runs the batch. With `dropout = Some((rate, rng))` layer outputs are
    /// dropped (inverted scaling); `None` is evaluation mode.
    pub fn forward(
        &self,
        batch: &SequenceBatch,
        mut dropout: Option<(f64, &mut StreamRng)>,
    ) -> ForwardCache {
        let a = &self.arch;
        let p = &self.params;
        let ix = &self.index;
        let (hd, nl) = (a.hidden, a.layers);
        let mut layers: Vec<Vec<LayerCache>> = vec![Vec::with_capacity(batch.steps()); nl];
        let mut hidden: Vec<Vec<DMatrix<f64>>> = vec![Vec::with_capacity(batch.steps()); nl];
        let mut top = Vec::with_capacity(batch.steps());
        let mut outputs = Vec::with_capacity(batch.steps());
        for t in 0..batch.steps() {
            let n = batch.active[t];
            let mut u = view(p, &ix.proj_w) * &batch.x[t];
            add_bias(&mut u, &view(p, &ix.proj_b));
            for l in 0..nl {
                let mut z = view(p, &ix.w_x[l]) * &u;
                add_bias(&mut z, &view(p, &ix.b[l]));
                if t > 0 {
                    let h_prev = hidden[l][t - 1].columns(0, n);
                    z.gemm(1.0, &view(p, &ix.w_h[l]), &h_prev, 1.0);
                }
                let mut gates = z;
                for j in 0..n {
                    let mut col = gates.column_mut(j);
                    for r in 0..hd {
                        col[r] = sigmoid(col[r]);
                        col[hd + r] = sigmoid(col[hd + r]);
                        col[2 * hd + r] = col[2 * hd + r].tanh();
                        col[3 * hd + r] = sigmoid(col[3 * hd + r]);
                    }
                }
                let mut c = DMatrix::zeros(hd, n);
                let mut tanh_c = DMatrix::zeros(hd, n);
                let mut h = DMatrix::zeros(hd, n);
                for j in 0..n {
                    for r in 0..hd {
                        let c_prev = if t > 0 { layers[l][t - 1].c[(r, j)] } else { 0.0 };
                        let g = gates.column(j);
                        let cv = g[hd + r] * c_prev + g[r] * g[2 * hd + r];
                        c[(r, j)] = cv;
                        tanh_c[(r, j)] = cv.tanh();
                        h[(r, j)] = g[3 * hd + r] * tanh_c[(r, j)];
                    }
                }
                let drop = match dropout.as_mut() {
                    Some((rate, rng)) if *rate > 0.0 => {
                        let keep = 1.0 - *rate;
                        Some(DMatrix::from_fn(hd, n, |_, _| {
                            if rng.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        }))
                    }
                    _ => None,
                };
                let out = match &drop {
                    Some(d) => h.component_mul(d),
                    None => h.clone(),
                };
                layers[l].push(LayerCache { input: u, gates, c, tanh_c, drop });
                hidden[l].push(h);
                u = out;
            }
            let mut o = DMatrix::zeros(a.heads.len(), n);
            for (k, head) in a.heads.iter().enumerate() {
                let w = view(p, &ix.head_w[k]);
                let b = p[ix.head_b[k].offset];
                let mut row = w.columns(0, hd) * &u;
                if head.uses_side {
                    row.gemm(1.0, &w.columns(hd, a.side_dim), &batch.side[t], 1.0);
                }
                for j in 0..n {
                    o[(k, j)] = row[(0, j)] + b;
                }
            }
            top.push(u);
            outputs.push(o);
        }
        ForwardCache { layers, hidden, top, outputs }
    }

    /// Mean masked loss of each head; zero for heads with no unmasked entry.
    pub fn loss(&self, batch: &SequenceBatch, cache: &ForwardCache) -> Loss {
        let sums = self.loss_sums(batch, cache);
        let per_head: Vec<f64> = sums
            .iter()
            .zip(&batch.counts)
            .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect();
        Loss { total: per_head.iter().sum(), per_head }
    }

    /// Summed (not averaged) masked loss of each head.
    pub fn loss_sums(&self, batch: &SequenceBatch, cache: &ForwardCache) -> Vec<f64> {
        let mut sums = vec![0.0; self.arch.heads.len()];
        for t in 0..batch.steps() {
            let (o, y, m) = (&cache.outputs[t], &batch.y[t], &batch.m[t]);
            for (k, head) in self.arch.heads.iter().enumerate() {
                for j in 0..batch.active[t] {
                    if m[(k, j)] == 0.0 {
                        continue;
                    }
                    sums[k] += match head.kind {
                        HeadKind::Gaussian => (o[(k, j)] - y[(k, j)]).powi(2),
                        HeadKind::Bernoulli => bce_logit(o[(k, j)], y[(k, j)]),
                    };
                }
            }
        }
        sums
    }

    /// Gradient of [`Network::loss`] with respect to every parameter, by
    /// backpropagation through time.
    pub fn backward(&self, batch: &SequenceBatch, cache: &ForwardCache) -> Vec<f64> {
        let a = &self.arch;
        let p = &self.params;
        let ix = &self.index;
        let (hd, nl, nh) = (a.hidden, a.layers, a.heads.len());
        let mut g = vec![0.0; p.len()];
        let steps = batch.steps();
        // Recurrent gradients flowing into step t from t + 1.
        let mut dh_next: Vec<DMatrix<f64>> = vec![DMatrix::zeros(hd, 0); nl];
        let mut dc_next: Vec<DMatrix<f64>> = vec![DMatrix::zeros(hd, 0); nl];
        for t in (0..steps).rev() {
            let n = batch.active[t];
            // Head output gradients.
            let mut dout = DMatrix::zeros(nh, n);
            for (k, head) in a.heads.iter().enumerate() {
                let c = batch.counts[k];
                if c == 0 {
                    continue;
                }
                for j in 0..n {
                    if batch.m[t][(k, j)] == 0.0 {
                        continue;
                    }
                    let (o, y) = (cache.outputs[t][(k, j)], batch.y[t][(k, j)]);
                    dout[(k, j)] = match head.kind {
                        HeadKind::Gaussian => 2.0 * (o - y),
                        HeadKind::Bernoulli => sigmoid(o) - y,
                    } / c as f64;
                }
            }
            let mut dtop = DMatrix::zeros(hd, n);
            for (k, head) in a.heads.iter().enumerate() {
                let dz = dout.row(k);
                let w = view(p, &ix.head_w[k]);
                {
                    let mut gw = view_mut(&mut g, &ix.head_w[k]);
                    gw.columns_mut(0, hd).gemm(1.0, &dz, &cache.top[t].transpose(), 1.0);
                    if head.uses_side {
                        gw.columns_mut(hd, a.side_dim).gemm(1.0, &dz, &batch.side[t].transpose(), 1.0);
                    }
                }
                g[ix.head_b[k].offset] += dz.sum();
                dtop.gemm(1.0, &w.columns(0, hd).transpose(), &dz, 1.0);
            }
            // Down through the layers.
            let mut d_above = dtop;
            for l in (0..nl).rev() {
                let lc = &cache.layers[l][t];
                let mut dh = match &lc.drop {
                    Some(d) => d_above.component_mul(d),
                    None => d_above,
                };
                let m_next = dh_next[l].ncols().min(n);
                if m_next > 0 {
                    let mut cols = dh.columns_mut(0, m_next);
                    cols += dh_next[l].columns(0, m_next);
                }
                let mut dz = DMatrix::zeros(4 * hd, n);
                let mut dc_prev = DMatrix::zeros(hd, n);
                for j in 0..n {
                    let gt = lc.gates.column(j);
                    for r in 0..hd {
                        let (i, f, gg, o) = (gt[r], gt[hd + r], gt[2 * hd + r], gt[3 * hd + r]);
                        let tc = lc.tanh_c[(r, j)];
                        let dhv = dh[(r, j)];
                        let mut dc = dhv * o * (1.0 - tc * tc);
                        if j < dc_next[l].ncols() {
                            dc += dc_next[l][(r, j)];
                        }
                        let c_prev = if t > 0 { cache.layers[l][t - 1].c[(r, j)] } else { 0.0 };
                        dz[(r, j)] = dc * gg * i * (1.0 - i);
                        dz[(hd + r, j)] = dc * c_prev * f * (1.0 - f);
                        dz[(2 * hd + r, j)] = dc * i * (1.0 - gg * gg);
                        dz[(3 * hd + r, j)] = dhv * tc * o * (1.0 - o);
                        dc_prev[(r, j)] = dc * f;
                    }
                }
                view_mut(&mut g, &ix.w_x[l]).gemm(1.0, &dz, &lc.input.transpose(), 1.0);
                {
                    let mut gb = view_mut(&mut g, &ix.b[l]);
                    for j in 0..n {
                        gb.column_mut(0).axpy(1.0, &dz.column(j), 1.0);
                    }
                }
                if t > 0 {
                    let h_prev = cache.hidden[l][t - 1].columns(0, n);
                    view_mut(&mut g, &ix.w_h[l]).gemm(1.0, &dz, &h_prev.transpose(), 1.0);
                    dh_next[l] = view(p, &ix.w_h[l]).tr_mul(&dz);
                } else {
                    dh_next[l] = DMatrix::zeros(hd, 0);
                }
                dc_next[l] = dc_prev;
                d_above = view(p, &ix.w_x[l]).tr_mul(&dz);
            }
            // d_above is now the gradient of the projection output.
            view_mut(&mut g, &ix.proj_w).gemm(1.0, &d_above, &batch.x[t].transpose(), 1.0);
            let mut gb = view_mut(&mut g, &ix.proj_b);
            for j in 0..n {
                gb.column_mut(0).axpy(1.0, &d_above.column(j), 1.0);
            }
        }
        g
    }

    pub fn new_state(&self) -> State {
        State {
            h: vec![DVector::zeros(self.arch.hidden); self.arch.layers],
            c: vec![DVector::zeros(self.arch.hidden); self.arch.layers],
            steps: 0,
        }
    }

    /// Advances a single sequence by one step (evaluation mode).
    pub fn step(&self, state: &mut State, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim {
            return Err(Error::Shape(format!(
                "step input has {} values, network expects {}",
                x.len(),
                self.arch.input_dim
            )));
        }
        let p = &self.params;
        let ix = &self.index;
        let hd = self.arch.hidden;
        let xv = DVector::from_column_slice(x);
        let mut u = view(p, &ix.proj_w) * xv + view(p, &ix.proj_b).column(0);
        for l in 0..self.arch.layers {
            let mut z = view(p, &ix.w_x[l]) * &u + view(p, &ix.b[l]).column(0);
            z.gemv(1.0, &view(p, &ix.w_h[l]), &state.h[l], 1.0);
            for r in 0..hd {
                let (i, f, g, o) =
                    (sigmoid(z[r]), sigmoid(z[hd + r]), z[2 * hd + r].tanh(), sigmoid(z[3 * hd + r]));
                let c = f * state.c[l][r] + i * g;
                state.c[l][r] = c;
                state.h[l][r] = o * c.tanh();
            }
            u = state.h[l].clone();
        }
        state.steps += 1;
        Ok(())
    }

    /// Raw output of head `k` on the current state.
    pub fn head(&self, state: &State, k: usize, side: &[f64]) -> f64 {
        let hd = self.arch.hidden;
        let w = &self.params[self.index.head_w[k].offset..];
        let top = &state.h[self.arch.layers - 1];
        let mut z = self.params[self.index.head_b[k].offset];
        for r in 0..hd {
            z += w[r] * top[r];
        }
        if self.arch.heads[k].uses_side {
            for (r, s) in side.iter().enumerate() {
                z += w[hd + r] * s;
            }
        }
        z
    }
}

fn add_bias(m: &mut DMatrix<f64>, b: &DMatrixView<f64>) {
    for mut col in m.column_iter_mut() {
        col += b.column(0);
    }
}

/// Recurrent state of one sequence during incremental evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub h: Vec<DVector<f64>>,
    pub c: Vec<DVector<f64>>,
    /// Steps consumed so far.
    pub steps: usize,
}


/// Sigmoid of a logit, kept strictly inside (0, 1).
pub fn probability(logit: f64) -> f64 {
    const EDGE: f64 = 1e-12;
    expit(logit).clamp(EDGE, 1.0 - EDGE)
}
