//! Network hyperparameters, the reference settings and the search space.

use rand::Rng;
use serde::{Deserialize, Serialize};

use dlnice_core::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Width of the input projection.
    pub feature_dim: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::Domain(format!("network config {field}: {msg}")));
        if self.feature_dim == 0 {
            return bad("feature_dim", "must be positive");
        }
        if self.hidden_size == 0 {
            return bad("hidden_size", "must be positive");
        }
        if self.num_layers == 0 {
            return bad("num_layers", "must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate", "must lie in [0, 1)");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay", "must be finite and non-negative");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs", "must be positive");
        }
        Ok(())
    }

    /// A small network that trains in minutes on one core.
    pub fn compact() -> Self {
        Self {
            feature_dim: 32,
            hidden_size: 32,
            num_layers: 1,
            dropout_rate: 0.0,
            learning_rate: 3e-3,
            batch_size: 64,
            weight_decay: 1e-5,
            max_epochs: 60,
            patience: 8,
        }
    }
}

/// Network role, selecting the matching preset row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    Covariate,
    Outcome,
}

fn preset(
    hidden_size: usize,
    num_layers: usize,
    feature_dim: usize,
    dropout_rate: f64,
    max_epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    weight_decay: f64,
) -> NetworkConfig {
    NetworkConfig {
        feature_dim,
        hidden_size,
        num_layers,
        dropout_rate,
        learning_rate,
        batch_size,
        weight_decay,
        max_epochs,
        patience: 50,
    }
}

/// Settings reported for each scenario, sample size and network.
pub fn reference_config(complex: bool, n: usize, kind: NetworkKind) -> Option<NetworkConfig> {
    use NetworkKind::*;
    Some(match (complex, n, kind) {
        (false, 10_000, Covariate) => preset(64, 3, 128, 0.19, 5000, 1024, 4.1e-4, 3.3e-6),
        (false, 10_000, Outcome) => preset(64, 4, 128, 0.15, 1000, 512, 4.7e-5, 7.4e-4),
        (false, 1_000, Covariate) => preset(64, 2, 512, 0.45, 5000, 512, 3.8e-4, 4.1e-5),
        (false, 1_000, Outcome) => preset(128, 2, 128, 0.23, 1000, 512, 6.7e-4, 3.6e-5),
        (true, 10_000, Covariate) => preset(64, 2, 128, 0.36, 5000, 512, 4.4e-4, 4.7e-5),
        (true, 10_000, Outcome) => preset(256, 2, 512, 0.30, 1000, 1024, 2.4e-5, 4.4e-4),
        (true, 1_000, Covariate) => preset(64, 2, 512, 0.36, 5000, 1024, 1.8e-4, 3.1e-4),
        (true, 1_000, Outcome) => preset(128, 2, 512, 0.19, 1000, 1024, 5.5e-4, 1.4e-6),
        _ => return None,
    })
}

/// Distribution of one hyperparameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dist {
    Choice(Vec<f64>),
    Uniform(f64, f64),
    LogUniform(f64, f64),
}

impl Dist {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Dist::Choice(v) => v[rng.random_range(0..v.len())],
            Dist::Uniform(a, b) => a + (b - a) * rng.random::<f64>(),
            Dist::LogUniform(a, b) => (a.ln() + (b.ln() - a.ln()) * rng.random::<f64>()).exp(),
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            Dist::Choice(v) => !v.is_empty() && v.iter().all(|x| x.is_finite()),
            Dist::Uniform(a, b) => a.is_finite() && b.is_finite() && a <= b,
            Dist::LogUniform(a, b) => *a > 0.0 && b.is_finite() && a <= b,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("search space {name}: invalid distribution {self:?}")))
        }
    }
}

/// Hyperparameter search space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub feature_dim: Dist,
    pub hidden_size: Dist,
    pub num_layers: Dist,
    pub dropout_rate: Dist,
    pub learning_rate: Dist,
    pub batch_size: Dist,
    pub weight_decay: Dist,
    pub max_epochs: usize,
    pub patience: usize,
}

impl SearchSpace {
    /// The reference search space; max epochs 5000 for the covariate
    /// network and 1000 for the outcome network.
    pub fn reference(kind: NetworkKind) -> Self {
        Self {
            feature_dim: Dist::Choice(vec![128.0, 512.0]),
            hidden_size: Dist::Choice(vec![64.0, 128.0, 256.0]),
            num_layers: Dist::Choice(vec![2.0, 3.0, 4.0]),
            dropout_rate: Dist::Uniform(0.0, 0.5),
            learning_rate: Dist::LogUniform(1e-5, 1e-3),
            batch_size: Dist::Choice(vec![512.0, 1024.0]),
            weight_decay: Dist::LogUniform(1e-6, 1e-3),
            max_epochs: match kind {
                NetworkKind::Covariate => 5000,
                NetworkKind::Outcome => 1000,
            },
            patience: 50,
        }
    }

    /// The space containing only `c`.
    pub fn point(c: &NetworkConfig) -> Self {
        let one = |v: f64| Dist::Choice(vec![v]);
        Self {
            feature_dim: one(c.feature_dim as f64),
            hidden_size: one(c.hidden_size as f64),
            num_layers: one(c.num_layers as f64),
            dropout_rate: one(c.dropout_rate),
            learning_rate: one(c.learning_rate),
            batch_size: one(c.batch_size as f64),
            weight_decay: one(c.weight_decay),
            max_epochs: c.max_epochs,
            patience: c.patience,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.feature_dim.validate("feature_dim")?;
        self.hidden_size.validate("hidden_size")?;
        self.num_layers.validate("num_layers")?;
        self.dropout_rate.validate("dropout_rate")?;
        self.learning_rate.validate("learning_rate")?;
        self.batch_size.validate("batch_size")?;
        self.weight_decay.validate("weight_decay")
    }

    /// Draws one configuration; parameters are drawn in field order.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> NetworkConfig {
        NetworkConfig {
            feature_dim: self.feature_dim.sample(rng).round() as usize,
            hidden_size: self.hidden_size.sample(rng).round() as usize,
            num_layers: self.num_layers.sample(rng).round() as usize,
            dropout_rate: self.dropout_rate.sample(rng),
            learning_rate: self.learning_rate.sample(rng),
            batch_size: self.batch_size.sample(rng).round() as usize,
            weight_decay: self.weight_decay.sample(rng),
            max_epochs: self.max_epochs,
            patience: self.patience,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dlnice_core::rng::stream_rng;

    #[test]
    fn simple_10000_covariate_preset() {
        let c = reference_config(false, 10_000, NetworkKind::Covariate).unwrap();
        assert_eq!((c.hidden_size, c.num_layers, c.feature_dim), (64, 3, 128));
        assert_eq!(c.dropout_rate, 0.19);
        assert_eq!(c.learning_rate, 4.1e-4);
        assert_eq!(c.patience, 50);
        assert!(reference_config(false, 500, NetworkKind::Covariate).is_none());
    }

    #[test]
    fn samples_stay_in_space() {
        let space = SearchSpace::reference(NetworkKind::Outcome);
        let mut rng = stream_rng(1, 0);
        for _ in 0..200 {
            let c = space.sample(&mut rng);
            c.validate().unwrap();
            assert!([128, 512].contains(&c.feature_dim));
            assert!([64, 128, 256].contains(&c.hidden_size));
            assert!((2..=4).contains(&c.num_layers));
            assert!((0.0..0.5).contains(&c.dropout_rate));
            assert!((1e-5..=1e-3).contains(&c.learning_rate));
            assert!((1e-6..=1e-3).contains(&c.weight_decay));
            assert_eq!(c.max_epochs, 1000);
        }
    }

    #[test]
    fn invalid_config_names_field() {
        let mut c = NetworkConfig::compact();
        c.dropout_rate = 1.0;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("dropout_rate"));
    }
}
