//! Hazard-to-risk arithmetic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cumulative incidence by month: `values[k-1]` is the risk by month `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskCurve {
    pub values: Vec<f64>,
}

impl RiskCurve {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for (i, &v) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("risk {v} at month {} outside [0,1]", i + 1)));
            }
            if i > 0 && v < values[i - 1] {
                return Err(Error::Domain(format!("risk decreases at month {}", i + 1)));
            }
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Risk by month `k` (1-based).
    pub fn at(&self, k: usize) -> f64 {
        self.values[k - 1]
    }
}

/// Per-month risk ratio and risk difference of two strategies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectCurve {
    /// `None` where the reference risk is zero.
    pub rr: Vec<Option<f64>>,
    pub rd: Vec<f64>,
}

/// Converts per-month hazards `h_1..h_K` to cumulative incidence
/// `1 - prod_{s<=k} (1 - h_s)`.
pub fn cumulative_incidence(hazards: &[f64]) -> Result<RiskCurve> {
    let mut survival = 1.0;
    let mut values = Vec::with_capacity(hazards.len());
    for (i, &h) in hazards.iter().enumerate() {
        if !(0.0..=1.0).contains(&h) {
            return Err(Error::Domain(format!("hazard {h} at month {} outside [0,1]", i + 1)));
        }
        survival *= 1.0 - h;
        values.push(1.0 - survival);
    }
    Ok(RiskCurve { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_hazard_gives_zero_risk() {
        assert_eq!(cumulative_incidence(&[0.0, 0.0, 0.0]).unwrap().values, vec![0.0; 3]);
    }

    #[test]
    fn certain_event_in_first_month() {
        assert_eq!(cumulative_incidence(&[1.0, 0.5]).unwrap().values, vec![1.0, 1.0]);
    }

    #[test]
    fn constant_hazard_matches_hand_expansion() {
        // 1 - 0.9^k for k = 1, 2, 3
        let r = cumulative_incidence(&[0.1, 0.1, 0.1]).unwrap();
        for (got, want) in r.values.iter().zip([0.1, 0.19, 0.271]) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn rejects_out_of_range_hazard() {
        assert!(matches!(cumulative_incidence(&[0.1, 1.5]), Err(Error::Domain(_))));
        assert!(cumulative_incidence(&[-0.01]).is_err());
        assert!(cumulative_incidence(&[f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn monotone_and_bounded(h in prop::collection::vec(0.0f64..=1.0, 0..80)) {
            let r = cumulative_incidence(&h).unwrap();
            prop_assert_eq!(r.len(), h.len());
            for w in r.values.windows(2) {
                prop_assert!(w[1] >= w[0]);
            }
            for &v in &r.values {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn agrees_with_recursive_survival(h in prop::collection::vec(0.0f64..=1.0, 1..80)) {
            let r = cumulative_incidence(&h).unwrap();
            let mut s_prev = 1.0;
            for (k, &hk) in h.iter().enumerate() {
                let s = s_prev * (1.0 - hk);
                prop_assert!((r.values[k] - (1.0 - s)).abs() <= 1e-12);
                s_prev = s;
            }
        }
    }
}
