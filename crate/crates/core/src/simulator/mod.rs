//! Cohort simulation from the two data-generating processes and
//! ground-truth risks from large simulated populations.

pub mod dgp;
pub mod truncnorm;

use rayon::prelude::*;

pub use dgp::{BaselineDraw, Scenario, ScenarioKind};
pub use truncnorm::{expit, logit, sample_truncated_normal, TruncatedNormal};

use crate::cohort::{Cohort, CovariateSchema, ScenarioTag, TreatmentStrategy};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, StreamRng};
use crate::risk::RiskCurve;

/// Draws `n` independent baseline rows (sex, age, smoking, U).
pub fn sample_baseline(n: usize, rng: &mut StreamRng) -> Result<Vec<BaselineDraw>> {
    if n == 0 {
        return Err(Error::Domain("sample_baseline: n must be at least 1".into()));
    }
    Ok((0..n).map(|_| dgp::draw_baseline(rng)).collect())
}

fn check_sizes(n: usize, horizon: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Domain("cohort size must be at least 1".into()));
    }
    if horizon == 0 || horizon > 60 {
        return Err(Error::Domain(format!("horizon must be in 1..=60, got {horizon}")));
    }
    Ok(())
}

/// Simulates `n` persons followed for up to `horizon` months. Person `i` has
/// id `i` and draws from stream `i` of `seed`, so the result is independent
/// of thread count and baselines are shared across strategies.
pub fn simulate_cohort(
    scenario: Scenario,
    n: usize,
    horizon: usize,
    strategy: TreatmentStrategy,
    seed: u64,
) -> Result<Cohort> {
    check_sizes(n, horizon)?;
    let persons = (0..n as u64)
        .into_par_iter()
        .map(|i| dgp::simulate_person(&scenario, i, horizon, strategy, &mut stream_rng(seed, i)))
        .collect::<Result<Vec<_>>>()?;
    let tag = match scenario.kind {
        ScenarioKind::Simple => ScenarioTag::Simple,
        ScenarioKind::Complex => ScenarioTag::Complex,
    };
    Ok(Cohort { schema: CovariateSchema::new(horizon), persons, scenario: tag })
}

/// Fraction of persons with `event_time <= k`, for `k = 1..=horizon`.
pub fn empirical_risk(
    event_times: impl IntoIterator<Item = Option<usize>>,
    horizon: usize,
) -> RiskCurve {
    let mut counts = vec![0usize; horizon];
    let mut n = 0usize;
    for e in event_times {
        n += 1;
        if let Some(t) = e {
            if (1..=horizon).contains(&t) {
                counts[t - 1] += 1;
            }
        }
    }
    let mut cum = 0usize;
    let values = counts
        .into_iter()
        .map(|c| {
            cum += c;
            if n == 0 {
                0.0
            } else {
                cum as f64 / n as f64
            }
        })
        .collect();
    RiskCurve { values }
}

/// Cumulative incidence of a cohort.
pub fn cohort_risk(cohort: &Cohort) -> RiskCurve {
    empirical_risk(cohort.persons.iter().map(|p| p.event_time), cohort.horizon())
}

/// Ground-truth risk under `strategy`: the empirical cumulative incidence of
/// `n` simulated persons. Persons are not retained, so `n = 1e6` runs in
/// bounded memory.
pub fn ground_truth_risk(
    scenario: Scenario,
    strategy: TreatmentStrategy,
    n: usize,
    horizon: usize,
    seed: u64,
) -> Result<RiskCurve> {
    check_sizes(n, horizon)?;
    let counts = (0..n as u64)
        .into_par_iter()
        .try_fold(
            || vec![0usize; horizon],
            |mut acc, i| {
                let p = dgp::simulate_person(
                    &scenario,
                    i,
                    horizon,
                    strategy,
                    &mut stream_rng(seed, i),
                )?;
                if let Some(t) = p.event_time {
                    acc[t - 1] += 1;
                }
                Ok::<_, Error>(acc)
            },
        )
        .try_reduce(
            || vec![0usize; horizon],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    let mut cum = 0usize;
    let values = counts
        .into_iter()
        .map(|c| {
            cum += c;
            cum as f64 / n as f64
        })
        .collect();
    Ok(RiskCurve { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::write_cohort_to;

    #[test]
    fn baseline_ages_truncated() {
        let draws = sample_baseline(20_000, &mut stream_rng(1, 0)).unwrap();
        assert!(draws.iter().all(|d| (18.0..=80.0).contains(&d.age)));
        assert!(sample_baseline(0, &mut stream_rng(1, 0)).is_err());
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        for scenario in [Scenario::simple(), Scenario::complex()] {
            let a = simulate_cohort(scenario, 200, 60, TreatmentStrategy::NaturalCourse, 42).unwrap();
            let b = simulate_cohort(scenario, 200, 60, TreatmentStrategy::NaturalCourse, 42).unwrap();
            let (mut ba, mut bb) = (Vec::new(), Vec::new());
            write_cohort_to(&a, &mut ba).unwrap();
            write_cohort_to(&b, &mut bb).unwrap();
            assert_eq!(ba, bb);
            let c = simulate_cohort(scenario, 200, 60, TreatmentStrategy::NaturalCourse, 43).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn strategies_share_baselines() {
        let a = simulate_cohort(Scenario::complex(), 100, 30, TreatmentStrategy::AlwaysTreat, 7).unwrap();
        let b = simulate_cohort(Scenario::complex(), 100, 30, TreatmentStrategy::NeverTreat, 7).unwrap();
        for (pa, pb) in a.persons.iter().zip(&b.persons) {
            assert_eq!(pa.baseline, pb.baseline);
        }
    }

    #[test]
    fn switched_off_outcome_gives_flat_zero_truth() {
        let scenario = Scenario { outcome_shift: f64::NEG_INFINITY, ..Scenario::simple() };
        for strategy in TreatmentStrategy::ALL {
            let r = ground_truth_risk(scenario, strategy, 500, 24, 3).unwrap();
            assert_eq!(r.values, vec![0.0; 24]);
        }
    }

    #[test]
    fn truth_matches_simulated_cohort_risk() {
        let c = simulate_cohort(Scenario::simple(), 2000, 60, TreatmentStrategy::NaturalCourse, 11)
            .unwrap();
        let t = ground_truth_risk(Scenario::simple(), TreatmentStrategy::NaturalCourse, 2000, 60, 11)
            .unwrap();
        assert_eq!(cohort_risk(&c), t);
        for w in t.values.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn empirical_risk_counts() {
        let r = empirical_risk([Some(1), None, Some(3), Some(3)], 3);
        assert_eq!(r.values, vec![0.25, 0.25, 0.75]);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(simulate_cohort(Scenario::simple(), 0, 60, TreatmentStrategy::NaturalCourse, 1).is_err());
        assert!(simulate_cohort(Scenario::simple(), 5, 61, TreatmentStrategy::NaturalCourse, 1).is_err());
    }
}
