//! Design features for the pooled parametric models.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::{Covariate, History};
use crate::simulator::dgp::{simple, Term, TermContext};

/// Which history summary the parametric models condition on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSpec {
    /// Every term of the simple process (without `U`), plus regime
    /// interactions of the lagged terms whose coefficients switch at month 6.
    DgpMatched,
    /// Lagged covariates and treatment.
    Lag1,
    /// Lagged values plus cumulative means over months `0..k`.
    LagPlusCumAvg,
}

impl FeatureSpec {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSpec::DgpMatched => "dgp_matched",
            FeatureSpec::Lag1 => "lag1",
            FeatureSpec::LagPlusCumAvg => "lag_cumavg",
        }
    }
}

impl fmt::Display for FeatureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dgp_matched" => Ok(FeatureSpec::DgpMatched),
            "lag1" => Ok(FeatureSpec::Lag1),
            "lag_cumavg" => Ok(FeatureSpec::LagPlusCumAvg),
            other => Err(Error::Domain(format!("unknown feature spec '{other}'"))),
        }
    }
}

/// Model response.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Cd4,
    Rna,
    HighBmi,
    Treatment,
    Outcome,
}

impl Target {
    pub const ALL: [Target; 5] =
        [Target::Cd4, Target::Rna, Target::HighBmi, Target::Treatment, Target::Outcome];

    /// Covariate targets condition on months `< k`; treatment additionally
    /// sees the month-`k` covariates; the outcome sees everything at `k`.
    pub fn first_month(self) -> usize {
        match self {
            // Month-0 covariates are baseline confounders, not modelled.
            Target::Cd4 | Target::Rna | Target::HighBmi => 1,
            Target::Treatment | Target::Outcome => 0,
        }
    }
}

const SHARED: [&str; 7] = ["intercept", "sex", "age", "smoking", "k", "k^2", "early"];

/// Terms of the simple process minus `U` and minus those already in the
/// shared block.
fn dgp_terms(target: Target) -> Vec<Term> {
    let eq = match target {
        Target::Cd4 => simple::CD4_EARLY,
        Target::Rna => simple::RNA_EARLY,
        Target::HighBmi => simple::HIGH_BMI,
        Target::Treatment => simple::INSTI,
        Target::Outcome => simple::OUTCOME,
    };
    eq.iter()
        .map(|&(t, _)| t)
        .filter(|t| !matches!(t, Term::U | Term::Intercept | Term::Sex | Term::Age | Term::Smoking))
        .collect()
}

/// Lagged terms whose coefficient differs between the early and late
/// regimes of the simple process.
fn regime_terms(target: Target) -> &'static [Term] {
    match target {
        Target::Cd4 => &[Term::Cd4Lag, Term::Cd4LagSq],
        Target::Rna => &[Term::RnaLag],
        _ => &[],
    }
}

fn lag_names() -> [&'static str; 4] {
    ["cd4[k-1]", "rna[k-1]", "high_bmi[k-1]", "insti[k-1]"]
}

/// Ordered feature names of a (spec, target) design.
pub fn feature_names(spec: FeatureSpec, target: Target) -> Vec<String> {
    let mut names: Vec<String> = SHARED.iter().map(|s| s.to_string()).collect();
    match spec {
        FeatureSpec::DgpMatched => {
            names.extend(dgp_terms(target).iter().map(|t| t.name().to_string()));
            names.extend(regime_terms(target).iter().map(|t| format!("early*{}", t.name())));
        }
        FeatureSpec::Lag1 | FeatureSpec::LagPlusCumAvg => {
            names.extend(lag_names().iter().map(|s| s.to_string()));
            if spec == FeatureSpec::LagPlusCumAvg {
                names.extend(
                    ["cd4", "rna", "high_bmi", "insti"].iter().map(|s| format!("mean({s}[0..k-1])")),
                );
            }
            match target {
                Target::Treatment => {
                    names.extend(["cd4", "rna", "high_bmi"].iter().map(|s| s.to_string()))
                }
                Target::Outcome => names
                    .extend(["cd4", "rna", "high_bmi", "insti"].iter().map(|s| s.to_string())),
                _ => {}
            }
        }
    }
    names
}

pub fn feature_len(spec: FeatureSpec, target: Target) -> usize {
    feature_names(spec, target).len()
}

fn required_len(target: Target, k: usize) -> (usize, usize) {
    // (covariate months, treatment months) that must be present.
    match target {
        Target::Cd4 | Target::Rna | Target::HighBmi => (k, k),
        Target::Treatment => (k + 1, k),
        Target::Outcome => (k + 1, k + 1),
    }
}

/// Appends the feature vector of `target` at month `k` to `out`.
///
/// `history` must hold covariates and treatment through `k - 1` for the
/// covariate targets, covariates through `k` for treatment, and both through
/// `k` for the outcome. Lags at month 0 carry the baseline value back;
/// lagged treatment at month 0 is 0.
pub fn build_features(
    history: &History,
    k: usize,
    spec: FeatureSpec,
    target: Target,
    out: &mut Vec<f64>,
) -> Result<()> {
    let (need_cov, need_trt) = required_len(target, k);
    if history.len() < need_cov.max(1) || history.insti.len() < need_trt {
        return Err(Error::Shape(format!(
            "{target:?} features at k={k} need {need_cov} covariate and {need_trt} treatment months, history has {} and {}",
            history.len(),
            history.insti.len()
        )));
    }
    let b = &history.baseline;
    let kf = k as f64;
    let early = f64::from(u8::from(k <= 5));
    out.extend_from_slice(&[1.0, f64::from(b.sex), b.age, f64::from(b.smoking), kf, kf * kf, early]);

    let current = matches!(target, Target::Treatment | Target::Outcome);
    match spec {
        FeatureSpec::DgpMatched => {
            let mut ctx = TermContext {
                sex: f64::from(b.sex),
                age: b.age,
                smoking: f64::from(b.smoking),
                cd4_lag: history.lagged(Covariate::Cd4, k),
                rna_lag: history.lagged(Covariate::Rna, k),
                bmi_lag: history.lagged(Covariate::HighBmi, k),
                insti_lag: history.lagged_treatment(k),
                ..TermContext::default()
            };
            if current {
                ctx.cd4 = history.cd4[k];
                ctx.rna = history.rna[k];
                ctx.bmi = history.high_bmi[k];
            }
            if target == Target::Outcome {
                ctx.insti = history.insti[k];
            }
            out.extend(dgp_terms(target).iter().map(|t| t.value(&ctx)));
            out.extend(regime_terms(target).iter().map(|t| early * t.value(&ctx)));
        }
        FeatureSpec::Lag1 | FeatureSpec::LagPlusCumAvg => {
            out.extend_from_slice(&[
                history.lagged(Covariate::Cd4, k),
                history.lagged(Covariate::Rna, k),
                history.lagged(Covariate::HighBmi, k),
                history.lagged_treatment(k),
            ]);
            if spec == FeatureSpec::LagPlusCumAvg {
                out.extend_from_slice(&[
                    history.cumulative_mean(Covariate::Cd4, k),
                    history.cumulative_mean(Covariate::Rna, k),
                    history.cumulative_mean(Covariate::HighBmi, k),
                    history.cumulative_treatment(k),
                ]);
            }
            if current {
                out.extend_from_slice(&[history.cd4[k], history.rna[k], history.high_bmi[k]]);
            }
            if target == Target::Outcome {
                out.push(history.insti[k]);
            }
        }
    }
    Ok(())
}
