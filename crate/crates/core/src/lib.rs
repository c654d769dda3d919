//! Simulation and g-formula estimation for sustained treatment strategies in
//! longitudinal cohorts with time-varying confounding.
//!
//! The crate covers the data model and file format ([`cohort`], [`io`]),
//! the two data-generating processes ([`simulator`]), pooled parametric
//! models ([`parametric`]), the Monte Carlo g-formula engine
//! ([`montecarlo`]) and bias evaluation against ground truth
//! ([`evaluation`]).

pub mod cohort;
pub mod error;
pub mod evaluation;
pub mod history;
pub mod io;
pub mod montecarlo;
pub mod parametric;
pub mod rng;
pub mod risk;
pub mod simulator;

pub use cohort::{
    Baseline, Cohort, CovariateSchema, PersonTrajectory, Record, ScenarioTag, TreatmentStrategy,
};
pub use error::{Error, Result};
pub use history::{Covariate, History};
pub use risk::{cumulative_incidence, EffectCurve, RiskCurve};
