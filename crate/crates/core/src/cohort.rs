//! Longitudinal cohort data model.
//!
//! A person is followed monthly from baseline (`k = 0`). At month `k` the
//! time-varying covariates and treatment are recorded and an event indicator
//! is drawn from them; an event at step `k` means `event_time = k + 1` and
//! ends follow-up. Without an event, a person contributes records for
//! `k = 0..K-1`.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Follow-up horizon used throughout the experiments (months).
pub const DEFAULT_HORIZON: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableKind {
    Binary,
    Continuous,
    /// Ordered integer score with the given number of levels.
    Categorical(u8),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableRole {
    Baseline,
    TimeVarying,
    Treatment,
    Outcome,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub name: &'static str,
    pub kind: VariableKind,
    pub role: VariableRole,
}

const VARIABLES: [Variable; 8] = [
    Variable { name: "sex", kind: VariableKind::Binary, role: VariableRole::Baseline },
    Variable { name: "age", kind: VariableKind::Continuous, role: VariableRole::Baseline },
    Variable { name: "smoking", kind: VariableKind::Categorical(3), role: VariableRole::Baseline },
    Variable { name: "cd4", kind: VariableKind::Continuous, role: VariableRole::TimeVarying },
    Variable { name: "rna", kind: VariableKind::Continuous, role: VariableRole::TimeVarying },
    Variable { name: "high_bmi", kind: VariableKind::Binary, role: VariableRole::TimeVarying },
    Variable { name: "insti", kind: VariableKind::Binary, role: VariableRole::Treatment },
    Variable { name: "event", kind: VariableKind::Binary, role: VariableRole::Outcome },
];

/// Variable layout shared by every person of a cohort. Names and kinds are
/// fixed; only the horizon varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSchema {
    pub horizon: usize,
}

impl CovariateSchema {
    pub fn new(horizon: usize) -> Self {
        Self { horizon }
    }

    pub fn variables(&self) -> &'static [Variable] {
        &VARIABLES
    }

    pub fn variable(&self, name: &str) -> Option<&'static Variable> {
        VARIABLES.iter().find(|v| v.name == name)
    }
}

impl Default for CovariateSchema {
    fn default() -> Self {
        Self::new(DEFAULT_HORIZON)
    }
}

/// Time-fixed covariates. Smoking is an integer score (0 never, 1 current,
/// 2 former) used numerically in linear predictors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub sex: u8,
    pub age: f64,
    pub smoking: u8,
}

/// One person-month.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub cd4: f64,
    pub rna: f64,
    pub high_bmi: u8,
    pub insti: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonTrajectory {
    pub id: u64,
    pub baseline: Baseline,
    /// Records for `k = 0..=T`.
    pub records: Vec<Record>,
    /// Month (1-based) in which the event occurred, if any.
    pub event_time: Option<usize>,
}

impl PersonTrajectory {
    /// Index of the last observed month.
    pub fn last_k(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    /// Event indicator drawn at step `k`.
    pub fn event_at(&self, k: usize) -> bool {
        self.event_time == Some(k + 1)
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::Domain(format!("person {}: {msg}", self.id)));
        if self.records.is_empty() {
            return fail("no records".into());
        }
        if self.baseline.sex > 1 || self.baseline.smoking > 2 || !self.baseline.age.is_finite() {
            return fail("invalid baseline covariates".into());
        }
        match self.event_time {
            Some(e) if e == 0 || e > horizon => {
                return fail(format!("event_time {e} outside 1..={horizon}"))
            }
            Some(e) if self.records.len() != e => {
                return fail(format!(
                    "event at month {e} requires {e} records, found {}",
                    self.records.len()
                ))
            }
            None if self.records.len() != horizon => {
                return fail(format!(
                    "event-free follow-up requires {horizon} records, found {}",
                    self.records.len()
                ))
            }
            _ => {}
        }
        for (k, r) in self.records.iter().enumerate() {
            if !r.cd4.is_finite() || !r.rna.is_finite() || r.high_bmi > 1 || r.insti > 1 {
                return fail(format!("invalid record at k={k}"));
            }
        }
        Ok(())
    }
}

/// Where a cohort came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioTag {
    Simple,
    Complex,
    External,
}

impl fmt::Display for ScenarioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioTag::Simple => "simple",
            ScenarioTag::Complex => "complex",
            ScenarioTag::External => "external",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub schema: CovariateSchema,
    pub persons: Vec<PersonTrajectory>,
    pub scenario: ScenarioTag,
}

impl Cohort {
    /// Validates every person and id uniqueness.
    pub fn new(
        schema: CovariateSchema,
        persons: Vec<PersonTrajectory>,
        scenario: ScenarioTag,
    ) -> Result<Self> {
        if persons.is_empty() {
            return Err(Error::Domain("cohort is empty".into()));
        }
        let mut seen = HashSet::with_capacity(persons.len());
        for p in &persons {
            if !seen.insert(p.id) {
                return Err(Error::Domain(format!("duplicate person id {}", p.id)));
            }
            p.validate(schema.horizon)?;
        }
        Ok(Self { schema, persons, scenario })
    }

    pub fn horizon(&self) -> usize {
        self.schema.horizon
    }

    pub fn len(&self) -> usize {
        self.persons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.persons.is_empty()
    }

    /// Number of person-months.
    pub fn person_months(&self) -> usize {
        self.persons.iter().map(|p| p.records.len()).sum()
    }

    /// Splits persons into two cohorts; persons for which `first` returns
    /// true go to the first.
    pub fn partition(&self, mut first: impl FnMut(usize, &PersonTrajectory) -> bool) -> (Vec<PersonTrajectory>, Vec<PersonTrajectory>) {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (i, p) in self.persons.iter().enumerate() {
            if first(i, p) {
                a.push(p.clone());
            } else {
                b.push(p.clone());
            }
        }
        (a, b)
    }
}

/// A sustained treatment strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentStrategy {
    AlwaysTreat,
    NeverTreat,
    /// No intervention: treatment follows a treatment model.
    NaturalCourse,
}

impl TreatmentStrategy {
    pub const ALL: [TreatmentStrategy; 3] = [
        TreatmentStrategy::NaturalCourse,
        TreatmentStrategy::AlwaysTreat,
        TreatmentStrategy::NeverTreat,
    ];

    /// The treatment value imposed by a static strategy.
    pub fn forced(self) -> Option<u8> {
        match self {
            TreatmentStrategy::AlwaysTreat => Some(1),
            TreatmentStrategy::NeverTreat => Some(0),
            TreatmentStrategy::NaturalCourse => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TreatmentStrategy::AlwaysTreat => "always",
            TreatmentStrategy::NeverTreat => "never",
            TreatmentStrategy::NaturalCourse => "natural",
        }
    }
}

impl fmt::Display for TreatmentStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TreatmentStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "always" | "always_treat" => Ok(TreatmentStrategy::AlwaysTreat),
            "never" | "never_treat" => Ok(TreatmentStrategy::NeverTreat),
            "natural" | "natural_course" => Ok(TreatmentStrategy::NaturalCourse),
            other => Err(Error::Domain(format!("unknown strategy '{other}'"))),
        }
    }
}
