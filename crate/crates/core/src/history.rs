//! Covariate and treatment history of one person, observed or simulated.

use crate::cohort::{Baseline, PersonTrajectory, Record};

/// Time-varying covariate selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Covariate {
    Cd4,
    Rna,
    HighBmi,
}

impl Covariate {
    pub const ALL: [Covariate; 3] = [Covariate::Cd4, Covariate::Rna, Covariate::HighBmi];

    pub fn name(self) -> &'static str {
        match self {
            Covariate::Cd4 => "cd4",
            Covariate::Rna => "rna",
            Covariate::HighBmi => "high_bmi",
        }
    }
}

/// Values indexed by month `k = 0..len`. Binary series are stored as 0.0/1.0.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub baseline: Baseline,
    pub cd4: Vec<f64>,
    pub rna: Vec<f64>,
    pub high_bmi: Vec<f64>,
    pub insti: Vec<f64>,
}

impl Default for Baseline {
    fn default() -> Self {
        Baseline { sex: 0, age: 0.0, smoking: 0 }
    }
}

impl History {
    pub fn new(baseline: Baseline, capacity: usize) -> Self {
        Self {
            baseline,
            cd4: Vec::with_capacity(capacity),
            rna: Vec::with_capacity(capacity),
            high_bmi: Vec::with_capacity(capacity),
            insti: Vec::with_capacity(capacity),
        }
    }

    pub fn from_trajectory(p: &PersonTrajectory) -> Self {
        let mut h = Self::new(p.baseline, p.records.len());
        for r in &p.records {
            h.push_covariates(r.cd4, r.rna, f64::from(r.high_bmi));
            h.insti.push(f64::from(r.insti));
        }
        h
    }

    pub fn push_covariates(&mut self, cd4: f64, rna: f64, high_bmi: f64) {
        self.cd4.push(cd4);
        self.rna.push(rna);
        self.high_bmi.push(high_bmi);
    }

    /// Number of months with covariates recorded.
    pub fn len(&self) -> usize {
        self.cd4.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cd4.is_empty()
    }

    pub fn series(&self, c: Covariate) -> &[f64] {
        match c {
            Covariate::Cd4 => &self.cd4,
            Covariate::Rna => &self.rna,
            Covariate::HighBmi => &self.high_bmi,
        }
    }

    pub fn covariate(&self, c: Covariate, k: usize) -> f64 {
        self.series(c)[k]
    }

    /// Value at `k - 1`. Month 0 has no observed predecessor, so the baseline
    /// value is carried back.
    pub fn lagged(&self, c: Covariate, k: usize) -> f64 {
        self.series(c)[k.saturating_sub(1)]
    }

    /// Treatment at `k - 1`; zero before baseline.
    pub fn lagged_treatment(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.insti[k - 1]
        }
    }

    /// Mean over months `0..k`; the baseline value at `k = 0`.
    pub fn cumulative_mean(&self, c: Covariate, k: usize) -> f64 {
        let s = self.series(c);
        if k == 0 {
            s[0]
        } else {
            s[..k].iter().sum::<f64>() / k as f64
        }
    }

    /// Mean treatment over months `0..k`; zero at `k = 0`.
    pub fn cumulative_treatment(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.insti[..k].iter().sum::<f64>() / k as f64
        }
    }

    pub fn record(&self, k: usize) -> Record {
        Record {
            cd4: self.cd4[k],
            rna: self.rna[k],
            high_bmi: self.high_bmi[k] as u8,
            insti: self.insti[k] as u8,
        }
    }
}
