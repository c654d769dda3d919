//! Row-major design matrices and the column scaling shared by the fitters.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Dense row-major design matrix with named columns.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Design {
    pub names: Vec<String>,
    data: Vec<f64>,
}

impl Design {
    pub fn new(names: Vec<String>) -> Self {
        Self { names, data: Vec::new() }
    }

    /// Builds a design from rows; every row must have `names.len()` entries.
    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let mut d = Self::new(names);
        for r in rows {
            d.push_row(r)?;
        }
        Ok(d)
    }

    pub fn cols(&self) -> usize {
        self.names.len()
    }

    pub fn rows(&self) -> usize {
        if self.names.is_empty() {
            0
        } else {
            self.data.len() / self.names.len()
        }
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.cols() {
            return Err(Error::Shape(format!(
                "row has {} entries, design has {} columns",
                row.len(),
                self.cols()
            )));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn append(&mut self, other: Design) -> Result<()> {
        if other.names != self.names {
            return Err(Error::Shape("appending designs with different columns".into()));
        }
        self.data.extend(other.data);
        Ok(())
    }

    pub(crate) fn check(&self, y: &[f64]) -> Result<()> {
        if self.cols() == 0 {
            return Err(Error::Shape("design has no columns".into()));
        }
        if self.data.len() % self.cols() != 0 {
            return Err(Error::Shape("ragged design buffer".into()));
        }
        if self.rows() == 0 {
            return Err(Error::Shape("design has no rows".into()));
        }
        if y.len() != self.rows() {
            return Err(Error::Shape(format!(
                "{} responses for {} design rows",
                y.len(),
                self.rows()
            )));
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            let c = self.cols();
            return Err(Error::NonFinite(format!(
                "design row {} column '{}'",
                i / c,
                self.names[i % c]
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("response row {i}")));
        }
        Ok(())
    }
}

/// Affine column map `z = (x - center) / scale`. Columns are centred only
/// when the design has an intercept column to absorb the shift; constant
/// columns are left as they are.
#[derive(Clone, Debug)]
pub(crate) struct Scaling {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    pub intercept: Option<usize>,
}

impl Scaling {
    pub fn fit(x: &Design) -> Self {
        let (n, c) = (x.rows(), x.cols());
        let mut mean = vec![0.0; c];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut ss = vec![0.0; c];
        let mut constant = vec![true; c];
        let first = x.row(0).to_vec();
        for i in 0..n {
            for (j, v) in x.row(i).iter().enumerate() {
                let d = v - mean[j];
                ss[j] += d * d;
                if *v != first[j] {
                    constant[j] = false;
                }
            }
        }
        let intercept = (0..c).find(|&j| constant[j] && first[j] == 1.0);
        let mut center = vec![0.0; c];
        let mut scale = vec![1.0; c];
        for j in 0..c {
            if constant[j] {
                continue;
            }
            let sd = (ss[j] / n as f64).sqrt();
            if sd > 0.0 {
                scale[j] = sd;
            }
            if intercept.is_some() {
                center[j] = mean[j];
            }
        }
        Self { center, scale, intercept }
    }

    /// Column-major scaled copy for the decompositions.
    pub fn apply(&self, x: &Design) -> DMatrix<f64> {
        let (n, c) = (x.rows(), x.cols());
        DMatrix::from_fn(n, c, |i, j| (x.row(i)[j] - self.center[j]) / self.scale[j])
    }

    /// Row-major scaled copy.
    pub fn apply_rows(&self, x: &Design) -> Vec<f64> {
        let c = x.cols();
        x.data
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.center[i % c]) / self.scale[i % c])
            .collect()
    }

    /// Maps coefficients on the scaled columns back to the original ones.
    pub fn unscale(&self, beta: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = beta.iter().zip(&self.scale).map(|(b, s)| b / s).collect();
        if let Some(i) = self.intercept {
            let shift: f64 = out.iter().zip(&self.center).map(|(b, m)| b * m).sum();
            out[i] -= shift;
        }
        out
    }

    /// Jacobian of [`Scaling::unscale`], used to carry covariances across.
    pub fn unscale_matrix(&self) -> DMatrix<f64> {
        let c = self.scale.len();
        let mut t = DMatrix::zeros(c, c);
        for j in 0..c {
            t[(j, j)] = 1.0 / self.scale[j];
            if let Some(i) = self.intercept {
                if i != j {
                    t[(i, j)] -= self.center[j] / self.scale[j];
                }
            }
        }
        t
    }
}

/// Columns kept by a greedy Gram-Schmidt pass over the Gram matrix, in
/// their original order. A column is dropped when its residual norm after
/// projecting out the kept columns falls below `rel_tol` of its own norm.
pub(crate) fn independent_columns(gram: &DMatrix<f64>, rel_tol: f64) -> Vec<usize> {
    let c = gram.nrows();
    let mut kept: Vec<usize> = Vec::new();
    // Cholesky factor rows of the kept columns.
    let mut l: Vec<Vec<f64>> = Vec::new();
    for j in 0..c {
        let diag = gram[(j, j)];
        if diag <= 0.0 {
            continue;
        }
        let mut row = Vec::with_capacity(kept.len());
        for (a, &i) in kept.iter().enumerate() {
            let s: f64 = (0..a).map(|b| l[a][b] * row[b]).sum();
            row.push((gram[(i, j)] - s) / l[a][a]);
        }
        let resid = diag - row.iter().map(|v| v * v).sum::<f64>();
        if resid > rel_tol * diag {
            row.push(resid.sqrt());
            l.push(row);
            kept.push(j);
        }
    }
    kept
}

/// `X^T diag(w) X` for a row-major `x` with `c` columns.
pub(crate) fn weighted_gram(x: &[f64], c: usize, w: &[f64]) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(c, c);
    for (row, &wi) in x.chunks_exact(c).zip(w) {
        for a in 0..c {
            let ra = wi * row[a];
            for b in a..c {
                g[(a, b)] += ra * row[b];
            }
        }
    }
    for a in 0..c {
        for b in 0..a {
            g[(a, b)] = g[(b, a)];
        }
    }
    g
}
