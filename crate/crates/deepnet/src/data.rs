//! Encoding of histories as network inputs.
//!
//! Covariate network, position `k`: baseline, time, `L_{k-1}`, `A_{k-1}`;
//! heads predict `cd4_k`, `rna_k`, `high_bmi_k` (masked at `k = 0`, where
//! covariates are baseline draws) and `insti_k`, whose head also sees the
//! current covariates `L_k` as side inputs.
//!
//! Outcome network, position `k`: baseline, time, `L_k`, `A_k`; the head
//! predicts the event at `k`.

use serde::{Deserialize, Serialize};

use dlnice_core::{Cohort, Error, History, PersonTrajectory, Result};

use crate::network::{Architecture, HeadKind, HeadSpec, Sequence};

pub const BASELINE_DIM: usize = 4;
pub const TIME_DIM: usize = 2;
pub const INPUT_DIM: usize = BASELINE_DIM + TIME_DIM + 4;
pub const SIDE_DIM: usize = 3;

/// Covariate network head order.
pub const CD4: usize = 0;
pub const RNA: usize = 1;
pub const HIGH_BMI: usize = 2;
pub const INSTI: usize = 3;

/// Months up to this one belong to the early regime.
pub const EARLY_LAST_MONTH: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub sd: f64,
}

impl Moments {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.collect();
        let n = v.len().max(1) as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        Self { mean, sd }
    }

    pub fn z(&self, x: f64) -> f64 {
        (x - self.mean) / self.sd
    }

    pub fn unz(&self, z: f64) -> f64 {
        z * self.sd + self.mean
    }
}

/// Training-set statistics used to standardize continuous inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub horizon: usize,
    pub age: Moments,
    pub cd4: Moments,
    pub rna: Moments,
    /// Observed (min, max) of cd4 and rna.
    pub cd4_range: (f64, f64),
    pub rna_range: (f64, f64),
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
}

impl Normalizer {
    pub fn fit(persons: &[PersonTrajectory], horizon: usize) -> Result<Self> {
        if persons.is_empty() {
            return Err(Error::Domain("no persons to normalize".into()));
        }
        let records = || persons.iter().flat_map(|p| p.records.iter());
        Ok(Self {
            horizon,
            age: Moments::of(persons.iter().map(|p| p.baseline.age)),
            cd4: Moments::of(records().map(|r| r.cd4)),
            rna: Moments::of(records().map(|r| r.rna)),
            cd4_range: range(records().map(|r| r.cd4)),
            rna_range: range(records().map(|r| r.rna)),
        })
    }

    fn prefix(&self, h: &History, k: usize, out: &mut [f64]) {
        let b = &h.baseline;
        out[0] = f64::from(b.sex);
        out[1] = self.age.z(b.age);
        out[2] = f64::from(u8::from(b.smoking == 1));
        out[3] = f64::from(u8::from(b.smoking == 2));
        out[4] = k as f64 / self.horizon.max(1) as f64;
        out[5] = f64::from(u8::from(k <= EARLY_LAST_MONTH));
    }

    /// Covariate network input at `k`; needs months `0..k` (month 0 if
    /// `k = 0`, whose values are carried back).
    pub fn covariate_input(&self, h: &History, k: usize, out: &mut [f64]) {
        self.prefix(h, k, out);
        let j = k.saturating_sub(1);
        out[6] = self.cd4.z(h.cd4[j]);
        out[7] = self.rna.z(h.rna[j]);
        out[8] = h.high_bmi[j];
        out[9] = h.lagged_treatment(k);
    }

    /// Current covariates seen by the treatment head at `k`.
    pub fn covariate_side(&self, h: &History, k: usize, out: &mut [f64]) {
        out[0] = self.cd4.z(h.cd4[k]);
        out[1] = self.rna.z(h.rna[k]);
        out[2] = h.high_bmi[k];
    }

    /// Outcome network input at `k`; needs covariates and treatment at `k`.
    pub fn outcome_input(&self, h: &History, k: usize, out: &mut [f64]) {
        self.prefix(h, k, out);
        out[6] = self.cd4.z(h.cd4[k]);
        out[7] = self.rna.z(h.rna[k]);
        out[8] = h.high_bmi[k];
        out[9] = h.insti[k];
    }

    pub fn covariate_sequence(&self, p: &PersonTrajectory) -> Sequence {
        let h = History::from_trajectory(p);
        let len = h.len();
        let mut s = Sequence {
            inputs: vec![0.0; len * INPUT_DIM],
            side: vec![0.0; len * SIDE_DIM],
            targets: vec![0.0; len * 4],
            mask: vec![true; len * 4],
            len,
        };
        for k in 0..len {
            self.covariate_input(&h, k, &mut s.inputs[k * INPUT_DIM..(k + 1) * INPUT_DIM]);
            self.covariate_side(&h, k, &mut s.side[k * SIDE_DIM..(k + 1) * SIDE_DIM]);
            let t = &mut s.targets[k * 4..(k + 1) * 4];
            t[CD4] = self.cd4.z(h.cd4[k]);
            t[RNA] = self.rna.z(h.rna[k]);
            t[HIGH_BMI] = h.high_bmi[k];
            t[INSTI] = h.insti[k];
            if k == 0 {
                s.mask[CD4] = false;
                s.mask[RNA] = false;
                s.mask[HIGH_BMI] = false;
            }
        }
        s
    }

    pub fn outcome_sequence(&self, p: &PersonTrajectory) -> Sequence {
        let h = History::from_trajectory(p);
        let len = h.len();
        let mut s = Sequence {
            inputs: vec![0.0; len * INPUT_DIM],
            side: Vec::new(),
            targets: (0..len).map(|k| f64::from(u8::from(p.event_at(k)))).collect(),
            mask: vec![true; len],
            len,
        };
        for k in 0..len {
            self.outcome_input(&h, k, &mut s.inputs[k * INPUT_DIM..(k + 1) * INPUT_DIM]);
        }
        s
    }
}

pub fn covariate_architecture(feature_dim: usize, hidden: usize, layers: usize) -> Architecture {
    let head = |name: &str, kind, uses_side| HeadSpec { name: name.into(), kind, uses_side };
    Architecture {
        input_dim: INPUT_DIM,
        side_dim: SIDE_DIM,
        feature_dim,
        hidden,
        layers,
        heads: vec![
            head("cd4", HeadKind::Gaussian, false),
            head("rna", HeadKind::Gaussian, false),
            head("high_bmi", HeadKind::Bernoulli, false),
            head("insti", HeadKind::Bernoulli, true),
        ],
    }
}

pub fn outcome_architecture(feature_dim: usize, hidden: usize, layers: usize) -> Architecture {
    Architecture {
        input_dim: INPUT_DIM,
        side_dim: 0,
        feature_dim,
        hidden,
        layers,
        heads: vec![HeadSpec { name: "event".into(), kind: HeadKind::Bernoulli, uses_side: false }],
    }
}

/// Seeded person-level split; `fraction` of persons (at least one, and at
/// least one left over) go to validation.
pub fn split_persons(
    cohort: &Cohort,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<PersonTrajectory>, Vec<PersonTrajectory>)> {
    use rand::seq::SliceRandom;
    let n = cohort.len();
    if n < 2 {
        return Err(Error::Domain("need at least two persons to split".into()));
    }
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut dlnice_core::rng::stream_rng(seed, 0));
    let mut is_val = vec![false; n];
    for &i in &idx[..n_val] {
        is_val[i] = true;
    }
    let (val, train) = cohort.partition(|i, _| is_val[i]);
    Ok((train, val))
}
