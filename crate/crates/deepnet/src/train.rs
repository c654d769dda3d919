//! Mini-batch training with early stopping on a person-level validation
//! split.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use dlnice_core::rng::{derive_seed, stream_rng};
use dlnice_core::{Cohort, Error, Result};

use crate::config::{NetworkConfig, NetworkKind};
use crate::data::{covariate_architecture, outcome_architecture, split_persons, Normalizer, CD4, RNA};
use crate::network::{Architecture, HeadKind, Network, Sequence, SequenceBatch};
use crate::optim::AdamW;

pub const VALIDATION_FRACTION: f64 = 0.2;
/// Batch size used when only evaluating.
const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean pre-clipping gradient norm.
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct Fit {
    /// Parameters from the epoch with the lowest validation loss.
    pub net: Network,
    pub history: Vec<EpochLog>,
    /// 1-based.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Validation loss: sum over heads of the per-head masked mean.
pub fn evaluate(net: &Network, seqs: &[Sequence]) -> Result<f64> {
    let nh = net.arch.heads.len();
    let mut sums = vec![0.0; nh];
    let mut counts = vec![0usize; nh];
    for chunk in seqs.chunks(EVAL_BATCH) {
        let refs: Vec<&Sequence> = chunk.iter().collect();
        let batch = SequenceBatch::new(&net.arch, &refs)?;
        let cache = net.forward(&batch, None);
        for (h, s) in net.loss_sums(&batch, &cache).into_iter().enumerate() {
            sums[h] += s;
            counts[h] += batch.counts[h];
        }
    }
    Ok(sums.iter().zip(&counts).map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).sum())
}

fn history_tail(history: &[EpochLog]) -> String {
    let from = history.len().saturating_sub(3);
    history[from..]
        .iter()
        .map(|e| format!("epoch {} train {:.6} val {:.6}", e.epoch, e.train_loss, e.val_loss))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Trains `net` in place and returns the best-validation parameters.
/// Shuffling and dropout draw from streams of `seed`.
pub fn fit(mut net: Network, train: &[Sequence], val: &[Sequence], cfg: &NetworkConfig, seed: u64) -> Result<Fit> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Domain("training and validation sets must be nonempty".into()));
    }
    let mut opt = AdamW::new(net.params.len(), cfg.learning_rate, cfg.weight_decay);
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, net.params.clone());
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut stream_rng(derive_seed(seed, 1), epoch as u64));
        let mut drop_rng = stream_rng(derive_seed(seed, 2), epoch as u64);
        let (mut loss_sum, mut norm_sum, mut batches) = (0.0, 0.0, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&Sequence> = idx.iter().map(|&i| &train[i]).collect();
            let batch = SequenceBatch::new(&net.arch, &refs)?;
            let cache = net.forward(&batch, Some((cfg.dropout_rate, &mut drop_rng)));
            let loss = net.loss(&batch, &cache).total;
            let mut grad = net.backward(&batch, &cache);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "training diverged at epoch {epoch}, batch {b} (loss {loss}); {}",
                    history_tail(&history)
                )));
            }
            norm_sum += opt.step(&mut net.params, &mut grad);
            loss_sum += loss;
            batches += 1;
        }
        let val_loss = evaluate(&net, val)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "validation loss {val_loss} at epoch {epoch}; {}",
                history_tail(&history)
            )));
        }
        history.push(EpochLog {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_loss,
            grad_norm: norm_sum / batches as f64,
        });
        log::debug!("epoch {epoch}: train {:.6} val {val_loss:.6}", loss_sum / batches as f64);
        if val_loss < best.0 {
            best = (val_loss, epoch, net.params.clone());
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
    }
    let (best_val_loss, best_epoch, params) = best;
    net.params = params;
    Ok(Fit { net, history, best_epoch, best_val_loss })
}

/// A trained network with everything needed to apply it to new histories.
#[derive(Clone, Debug)]
pub struct TrainedNetwork {
    pub kind: NetworkKind,
    pub config: NetworkConfig,
    pub seed: u64,
    pub net: Network,
    pub norm: Normalizer,
    /// Validation residual sd of each Gaussian head, in original units.
    pub residual_sd: BTreeMap<String, f64>,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainedNetwork {
    pub fn residual(&self, head: &str) -> Result<f64> {
        self.residual_sd
            .get(head)
            .copied()
            .ok_or_else(|| Error::Domain(format!("no residual sd for head {head}")))
    }
}

/// Root mean squared validation residual of Gaussian head `h` on the
/// standardized scale.
fn residual_rms(net: &Network, val: &[Sequence], h: usize) -> Result<f64> {
    let (mut ss, mut n) = (0.0, 0usize);
    for chunk in val.chunks(EVAL_BATCH) {
        let refs: Vec<&Sequence> = chunk.iter().collect();
        let batch = SequenceBatch::new(&net.arch, &refs)?;
        let cache = net.forward(&batch, None);
        for t in 0..batch.steps() {
            for j in 0..batch.active[t] {
                if batch.m[t][(h, j)] > 0.0 {
                    ss += (cache.outputs[t][(h, j)] - batch.y[t][(h, j)]).powi(2);
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::Domain("validation set has no unmasked covariate targets".into()));
    }
    Ok((ss / n as f64).sqrt())
}

/// Sets each Bernoulli head bias to the logit of its training prevalence.
fn init_bernoulli_biases(net: &mut Network, seqs: &[Sequence]) {
    let nh = net.arch.heads.len();
    for h in 0..nh {
        if net.arch.heads[h].kind != HeadKind::Bernoulli {
            continue;
        }
        let (mut pos, mut n) = (0.0, 0.0);
        for s in seqs {
            for t in 0..s.len {
                if s.mask[t * nh + h] {
                    pos += s.targets[t * nh + h];
                    n += 1.0;
                }
            }
        }
        if n > 0.0 {
            let p = ((pos + 0.5) / (n + 1.0)).clamp(1e-6, 1.0 - 1e-6);
            net.set_head_bias(h, (p / (1.0 - p)).ln());
        }
    }
}

fn train_kind(
    cohort: &Cohort,
    cfg: &NetworkConfig,
    seed: u64,
    kind: NetworkKind,
) -> Result<TrainedNetwork> {
    cfg.validate()?;
    let (train, val) = split_persons(cohort, VALIDATION_FRACTION, seed)?;
    let norm = Normalizer::fit(&train, cohort.horizon())?;
    let (arch, encode): (Architecture, fn(&Normalizer, &_) -> Sequence) = match kind {
        NetworkKind::Covariate => (
            covariate_architecture(cfg.feature_dim, cfg.hidden_size, cfg.num_layers),
            Normalizer::covariate_sequence,
        ),
        NetworkKind::Outcome => (
            outcome_architecture(cfg.feature_dim, cfg.hidden_size, cfg.num_layers),
            Normalizer::outcome_sequence,
        ),
    };
    let train_seqs: Vec<Sequence> = train.iter().map(|p| encode(&norm, p)).collect();
    let val_seqs: Vec<Sequence> = val.iter().map(|p| encode(&norm, p)).collect();
    let mut net = Network::init(arch, &mut stream_rng(derive_seed(seed, 3), 0))?;
    init_bernoulli_biases(&mut net, &train_seqs);
    let fit = fit(net, &train_seqs, &val_seqs, cfg, seed)?;
    let mut residual_sd = BTreeMap::new();
    if kind == NetworkKind::Covariate {
        residual_sd.insert("cd4".to_string(), residual_rms(&fit.net, &val_seqs, CD4)? * norm.cd4.sd);
        residual_sd.insert("rna".to_string(), residual_rms(&fit.net, &val_seqs, RNA)? * norm.rna.sd);
    }
    log::info!(
        "{kind:?} network: best epoch {} of {}, validation loss {:.6}",
        fit.best_epoch,
        fit.history.len(),
        fit.best_val_loss
    );
    Ok(TrainedNetwork {
        kind,
        config: cfg.clone(),
        seed,
        net: fit.net,
        norm,
        residual_sd,
        history: fit.history,
        best_epoch: fit.best_epoch,
        best_val_loss: fit.best_val_loss,
    })
}

/// Multitask network for cd4, rna, high_bmi and insti.
pub fn train_covariate_network(cohort: &Cohort, cfg: &NetworkConfig, seed: u64) -> Result<TrainedNetwork> {
    train_kind(cohort, cfg, seed, NetworkKind::Covariate)
}

/// Discrete-time hazard network.
pub fn train_outcome_network(cohort: &Cohort, cfg: &NetworkConfig, seed: u64) -> Result<TrainedNetwork> {
    train_kind(cohort, cfg, seed, NetworkKind::Outcome)
}
