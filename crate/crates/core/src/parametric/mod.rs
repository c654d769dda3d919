//! Pooled parametric models: Gaussian linear models for CD4 and RNA,
//! logistic models for high BMI, treatment and the event.

pub mod design;
pub mod features;
pub mod linear;
pub mod logistic;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use design::Design;
pub use features::{build_features, feature_len, feature_names, FeatureSpec, Target};
pub use linear::{fit_linear, LinearModel};
pub use logistic::{fit_logistic, LogisticModel, LogisticOptions};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::history::History;
use crate::montecarlo::{BoundedNormal, CovariateDistribution, ModelSet};

/// The five fitted models, in simulation order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParametricModelSet {
    pub spec: FeatureSpec,
    pub cd4: LinearModel,
    pub rna: LinearModel,
    pub high_bmi: LogisticModel,
    pub treatment: LogisticModel,
    pub outcome: LogisticModel,
}

/// Person-month rows of each target.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub cd4: (Design, Vec<f64>),
    pub rna: (Design, Vec<f64>),
    pub high_bmi: (Design, Vec<f64>),
    pub treatment: (Design, Vec<f64>),
    pub outcome: (Design, Vec<f64>),
}

/// Pools the person-months of `cohort` into one design per target. Every
/// record precedes or coincides with the person's event, so all rows are
/// in the risk set. Covariate rows start at month 1.
pub fn training_designs(cohort: &Cohort, spec: FeatureSpec) -> Result<TrainingData> {
    let new = |t: Target| (Design::new(feature_names(spec, t)), Vec::new());
    let mut data = TrainingData {
        cd4: new(Target::Cd4),
        rna: new(Target::Rna),
        high_bmi: new(Target::HighBmi),
        treatment: new(Target::Treatment),
        outcome: new(Target::Outcome),
    };
    let mut buf = Vec::new();
    for p in &cohort.persons {
        let h = History::from_trajectory(p);
        for k in 0..h.len() {
            let r = &p.records[k];
            let targets: [(Target, &mut (Design, Vec<f64>), f64); 5] = [
                (Target::Cd4, &mut data.cd4, r.cd4),
                (Target::Rna, &mut data.rna, r.rna),
                (Target::HighBmi, &mut data.high_bmi, f64::from(r.high_bmi)),
                (Target::Treatment, &mut data.treatment, f64::from(r.insti)),
                (Target::Outcome, &mut data.outcome, f64::from(u8::from(p.event_at(k)))),
            ];
            for (target, (x, y), value) in targets {
                if k < target.first_month() {
                    continue;
                }
                buf.clear();
                build_features(&h, k, spec, target, &mut buf)?;
                x.push_row(&buf)?;
                y.push(value);
            }
        }
    }
    Ok(data)
}

/// Fits all five models on the pooled person-months of `cohort`.
pub fn fit_parametric_modelset(cohort: &Cohort, spec: FeatureSpec) -> Result<ParametricModelSet> {
    if cohort.is_empty() {
        return Err(Error::Domain("cannot fit models to an empty cohort".into()));
    }
    let d = training_designs(cohort, spec)?;
    let opts = LogisticOptions::default();
    let ((cd4, rna), (high_bmi, (treatment, outcome))) = rayon::join(
        || rayon::join(|| fit_linear(&d.cd4.0, &d.cd4.1), || fit_linear(&d.rna.0, &d.rna.1)),
        || {
            rayon::join(
                || fit_logistic(&d.high_bmi.0, &d.high_bmi.1, opts),
                || {
                    rayon::join(
                        || fit_logistic(&d.treatment.0, &d.treatment.1, opts),
                        || fit_logistic(&d.outcome.0, &d.outcome.1, opts),
                    )
                },
            )
        },
    );
    Ok(ParametricModelSet {
        spec,
        cd4: cd4?,
        rna: rna?,
        high_bmi: high_bmi?,
        treatment: treatment?,
        outcome: outcome?,
    })
}

impl ModelSet for ParametricModelSet {
    type Scratch = Vec<f64>;

    fn new_scratch(&self) -> Vec<f64> {
        Vec::with_capacity(32)
    }

    fn covariate_step(
        &self,
        history: &History,
        k: usize,
        buf: &mut Vec<f64>,
    ) -> Result<CovariateDistribution> {
        let normal = |m: &LinearModel, target, buf: &mut Vec<f64>| -> Result<BoundedNormal> {
            buf.clear();
            build_features(history, k, self.spec, target, buf)?;
            Ok(BoundedNormal::clamped(m.predict(buf), m.residual_sd, m.range.0, m.range.1))
        };
        let cd4 = normal(&self.cd4, Target::Cd4, buf)?;
        let rna = normal(&self.rna, Target::Rna, buf)?;
        buf.clear();
        build_features(history, k, self.spec, Target::HighBmi, buf)?;
        Ok(CovariateDistribution { cd4, rna, high_bmi: self.high_bmi.predict(buf) })
    }

    fn treatment_prob(&self, history: &History, k: usize, buf: &mut Vec<f64>) -> Result<f64> {
        buf.clear();
        build_features(history, k, self.spec, Target::Treatment, buf)?;
        Ok(self.treatment.predict(buf))
    }

    fn hazard(&self, history: &History, k: usize, buf: &mut Vec<f64>) -> Result<f64> {
        buf.clear();
        build_features(history, k, self.spec, Target::Outcome, buf)?;
        Ok(self.outcome.predict(buf))
    }
}

pub const FORMAT: &str = "dlnice-parametric";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LinearDoc {
    coefficients: BTreeMap<String, f64>,
    residual_sd: f64,
    range: (f64, f64),
    rank: usize,
    n_obs: usize,
    dropped: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct LogisticDoc {
    coefficients: BTreeMap<String, f64>,
    iterations: usize,
    grad_norm: f64,
    converged: bool,
    separation: bool,
    n_obs: usize,
    dropped: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ModelSetDoc {
    format: String,
    version: u32,
    spec: FeatureSpec,
    cd4: LinearDoc,
    rna: LinearDoc,
    high_bmi: LogisticDoc,
    treatment: LogisticDoc,
    outcome: LogisticDoc,
}

fn keyed(names: &[String], coef: &[f64]) -> BTreeMap<String, f64> {
    names.iter().cloned().zip(coef.iter().copied()).collect()
}

fn ordered(map: &BTreeMap<String, f64>, spec: FeatureSpec, target: Target) -> Result<(Vec<String>, Vec<f64>)> {
    let names = feature_names(spec, target);
    if map.len() != names.len() {
        return Err(Error::Shape(format!(
            "{target:?} model has {} coefficients, spec {spec} expects {}",
            map.len(),
            names.len()
        )));
    }
    let coef = names
        .iter()
        .map(|n| {
            map.get(n).copied().ok_or_else(|| {
                Error::Shape(format!("{target:?} model lacks coefficient '{n}'"))
            })
        })
        .collect::<Result<_>>()?;
    Ok((names, coef))
}

impl ParametricModelSet {
    pub fn to_json(&self) -> Result<String> {
        let lin = |m: &LinearModel| LinearDoc {
            coefficients: keyed(&m.feature_names, &m.coefficients),
            residual_sd: m.residual_sd,
            range: m.range,
            rank: m.rank,
            n_obs: m.n_obs,
            dropped: m.dropped.clone(),
        };
        let log = |m: &LogisticModel| LogisticDoc {
            coefficients: keyed(&m.feature_names, &m.coefficients),
            iterations: m.iterations,
            grad_norm: m.grad_norm,
            converged: m.converged,
            separation: m.separation,
            n_obs: m.n_obs,
            dropped: m.dropped.clone(),
        };
        let doc = ModelSetDoc {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            spec: self.spec,
            cd4: lin(&self.cd4),
            rna: lin(&self.rna),
            high_bmi: log(&self.high_bmi),
            treatment: log(&self.treatment),
            outcome: log(&self.outcome),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelSetDoc = serde_json::from_str(text)?;
        if doc.format != FORMAT || doc.version != FORMAT_VERSION {
            return Err(Error::Domain(format!(
                "unsupported model document {} v{}",
                doc.format, doc.version
            )));
        }
        let spec = doc.spec;
        let lin = |d: LinearDoc, t: Target| -> Result<LinearModel> {
            let (feature_names, coefficients) = ordered(&d.coefficients, spec, t)?;
            Ok(LinearModel {
                std_errors: vec![0.0; coefficients.len()],
                feature_names,
                coefficients,
                residual_sd: d.residual_sd,
                range: d.range,
                rank: d.rank,
                n_obs: d.n_obs,
                dropped: d.dropped,
            })
        };
        let log = |d: LogisticDoc, t: Target| -> Result<LogisticModel> {
            let (feature_names, coefficients) = ordered(&d.coefficients, spec, t)?;
            Ok(LogisticModel {
                std_errors: vec![0.0; coefficients.len()],
                feature_names,
                coefficients,
                iterations: d.iterations,
                grad_norm: d.grad_norm,
                converged: d.converged,
                separation: d.separation,
                n_obs: d.n_obs,
                dropped: d.dropped,
                log_likelihood: Vec::new(),
            })
        };
        Ok(Self {
            spec,
            cd4: lin(doc.cd4, Target::Cd4)?,
            rna: lin(doc.rna, Target::Rna)?,
            high_bmi: log(doc.high_bmi, Target::HighBmi)?,
            treatment: log(doc.treatment, Target::Treatment)?,
            outcome: log(doc.outcome, Target::Outcome)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
