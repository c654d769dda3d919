//! Experiment configuration: one JSON document, every default materialized.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dlnice_core::parametric::FeatureSpec;
use dlnice_core::simulator::{Scenario, ScenarioKind};
use dlnice_deepnet::{reference_config, NetworkConfig, NetworkKind, SearchSpace};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Parametric(FeatureSpec),
    Dl,
}

impl Method {
    pub fn label(self) -> String {
        match self {
            Method::Parametric(s) => format!("parametric:{}", s.as_str()),
            Method::Dl => "dl".to_string(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "dl" {
            return Ok(Method::Dl);
        }
        s.strip_prefix("parametric:")
            .and_then(|spec| spec.parse().ok())
            .map(Method::Parametric)
            .ok_or_else(|| {
                format!(
                    "unknown method {s:?} (expected parametric:dgp_matched, parametric:lag1, \
                     parametric:lag_cumavg or dl)"
                )
            })
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub simulation: u64,
    pub training: u64,
    pub monte_carlo: u64,
    pub truth: u64,
}

/// Base network settings before overrides.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// A small network that trains in minutes.
    Compact,
    /// The settings reported for the matching scenario and sample size
    /// (compact for sample sizes without a reported row).
    Reference,
}

/// Fields replacing those of the preset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_layers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
}

impl NetworkOverrides {
    fn apply(&self, mut c: NetworkConfig) -> NetworkConfig {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(feature_dim, hidden_size, num_layers, dropout_rate, learning_rate, batch_size, weight_decay, max_epochs, patience);
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSettings {
    pub trials: usize,
    /// Epoch cap per trial; the reference space uses 5000 (covariate) and 1000
    /// (outcome).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSettings {
    #[serde(default = "default_preset")]
    pub preset: Preset,
    #[serde(default)]
    pub covariate: NetworkOverrides,
    #[serde(default)]
    pub outcome: NetworkOverrides,
    /// When set, networks are chosen by random search instead.
    #[serde(default)]
    pub search: Option<SearchSettings>,
}

fn default_preset() -> Preset {
    Preset::Compact
}

impl Default for NetworkSettings {
    fn default() -> Self {
        Self { preset: Preset::Compact, covariate: Default::default(), outcome: Default::default(), search: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub scenario: ScenarioKind,
    #[serde(default = "yes")]
    pub include_u: bool,
    pub sample_sizes: Vec<usize>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    pub seeds: Seeds,
    #[serde(default = "default_truth_n")]
    pub truth_n: usize,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub network: NetworkSettings,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub svg: bool,
}

fn yes() -> bool {
    true
}
fn default_horizon() -> usize {
    60
}
fn default_truth_n() -> usize {
    1_000_000
}
fn default_mc_samples() -> usize {
    dlnice_core::montecarlo::DEFAULT_SAMPLES
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    /// Parses and validates; errors name the offending field.
    pub fn from_json(text: &str) -> CliResult<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))?;
        Self::from_value(value)
    }

    pub fn from_value(value: serde_json::Value) -> CliResult<Self> {
        // Checked first so that the error names the entry.
        if let Some(methods) = value.get("methods").and_then(|m| m.as_array()) {
            for (i, m) in methods.iter().enumerate() {
                let parsed = m.as_str().ok_or_else(|| "expected a string".to_string()).and_then(str::parse::<Method>);
                if let Err(e) = parsed {
                    return Err(CliError::config(format!("methods[{i}]: {e}")));
                }
            }
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| CliError::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |field: &str, msg: &str| Err(CliError::config(format!("{field}: {msg}")));
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == "." || self.name == ".." {
            return bad("name", "must be a nonempty directory name");
        }
        if self.sample_sizes.is_empty() {
            return bad("sample_sizes", "must list at least one size");
        }
        if let Some(i) = self.sample_sizes.iter().position(|&n| n < 2) {
            return bad(&format!("sample_sizes[{i}]"), "must be at least 2");
        }
        let mut sizes = self.sample_sizes.clone();
        sizes.sort_unstable();
        sizes.dedup();
        if sizes.len() != self.sample_sizes.len() {
            return bad("sample_sizes", "must not repeat");
        }
        if self.horizon == 0 {
            return bad("horizon", "must be positive");
        }
        if self.truth_n == 0 {
            return bad("truth_n", "must be positive");
        }
        if self.methods.is_empty() {
            return bad("methods", "must list at least one method");
        }
        let distinct: std::collections::HashSet<_> = self.methods.iter().collect();
        if distinct.len() != self.methods.len() {
            return bad("methods", "must not repeat");
        }
        if self.mc_samples == 0 {
            return bad("mc_samples", "must be positive");
        }
        if self.uses_dl() {
            for &n in &self.sample_sizes {
                for kind in [NetworkKind::Covariate, NetworkKind::Outcome] {
                    let field = match kind {
                        NetworkKind::Covariate => "network.covariate",
                        NetworkKind::Outcome => "network.outcome",
                    };
                    self.network_config(n, kind)
                        .validate()
                        .map_err(|e| CliError::config(format!("{field}: {e}")))?;
                }
            }
            if let Some(s) = &self.network.search {
                if s.trials == 0 {
                    return bad("network.search.trials", "must be positive");
                }
                if s.max_epochs == Some(0) {
                    return bad("network.search.max_epochs", "must be positive");
                }
            }
        }
        Ok(())
    }

    pub fn uses_dl(&self) -> bool {
        self.methods.contains(&Method::Dl)
    }

    pub fn scenario(&self) -> Scenario {
        let s = match self.scenario {
            ScenarioKind::Simple => Scenario::simple(),
            ScenarioKind::Complex => Scenario::complex(),
        };
        if self.include_u {
            s
        } else {
            s.without_u()
        }
    }

    pub fn scenario_name(&self) -> &'static str {
        match self.scenario {
            ScenarioKind::Simple => "simple",
            ScenarioKind::Complex => "complex",
        }
    }

    /// Network settings used without search: preset, then overrides.
    pub fn network_config(&self, n: usize, kind: NetworkKind) -> NetworkConfig {
        let base = match self.network.preset {
            Preset::Compact => NetworkConfig::compact(),
            Preset::Reference => reference_config(self.scenario == ScenarioKind::Complex, n, kind)
                .unwrap_or_else(NetworkConfig::compact),
        };
        match kind {
            NetworkKind::Covariate => self.network.covariate.apply(base),
            NetworkKind::Outcome => self.network.outcome.apply(base),
        }
    }

    pub fn search_space(&self, kind: NetworkKind) -> Option<(SearchSpace, usize)> {
        let s = self.network.search.as_ref()?;
        let mut space = SearchSpace::reference(kind);
        if let Some(e) = s.max_epochs {
            space.max_epochs = e;
        }
        if let Some(p) = s.patience {
            space.patience = p;
        }
        Some((space, s.trials))
    }

    /// Canonical JSON of the materialized config.
    pub fn canonical_json(&self) -> String {
        // Round trip through Value to sort object keys.
        let v = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&v).expect("value serializes")
    }

    /// SHA-256 of the canonical JSON; a function of the config alone.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.name)
    }
}
