//! Random search over a hyperparameter space.

use serde::{Deserialize, Serialize};

use dlnice_core::rng::stream_rng;
use dlnice_core::{Error, Result};

use crate::config::{NetworkConfig, SearchSpace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial: usize,
    pub config: NetworkConfig,
    pub val_loss: f64,
    /// True if the configuration repeated an earlier trial and its loss was
    /// reused instead of retraining.
    pub cached: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: NetworkConfig,
    pub best_val_loss: f64,
    pub best_trial: usize,
    /// Number of configurations actually trained.
    pub evaluations: usize,
    pub trials: Vec<Trial>,
}

/// Samples `trials` configurations from `space` (from stream 0 of `seed`)
/// and scores each with `evaluate`, which returns a validation loss. Ties
/// keep the earliest trial.
pub fn random_search(
    space: &SearchSpace,
    trials: usize,
    seed: u64,
    mut evaluate: impl FnMut(&NetworkConfig) -> Result<f64>,
) -> Result<SearchResult> {
    space.validate()?;
    if trials == 0 {
        return Err(Error::Domain("random search needs at least one trial".into()));
    }
    let mut rng = stream_rng(seed, 0);
    let mut log: Vec<Trial> = Vec::with_capacity(trials);
    let mut evaluations = 0;
    for trial in 0..trials {
        let config = space.sample(&mut rng);
        config.validate()?;
        let (val_loss, cached) = match log.iter().find(|t| t.config == config) {
            Some(t) => (t.val_loss, true),
            None => {
                evaluations += 1;
                let loss = evaluate(&config)?;
                log::info!("trial {trial}: validation loss {loss:.6}");
                (loss, false)
            }
        };
        log.push(Trial { trial, config, val_loss, cached });
    }
    let best = log
        .iter()
        .filter(|t| t.val_loss.is_finite())
        .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
        .ok_or_else(|| Error::NonFinite("every trial produced a non-finite loss".into()))?;
    Ok(SearchResult {
        best: best.config.clone(),
        best_val_loss: best.val_loss,
        best_trial: best.trial,
        evaluations,
        trials: log,
    })
}
