use dlnice_core::montecarlo::{estimate_risk, BaselinePool, MonteCarloConfig};
use dlnice_core::parametric::*;
use dlnice_core::simulator::dgp::{simple, Equation, Term};
use dlnice_core::simulator::{simulate_cohort, Scenario};
use dlnice_core::TreatmentStrategy;

/// DGP value of every DgpMatched coefficient; terms absent from the
/// equation (time features, intercepts the process lacks) are zero.
fn truth(names: &[String], early: Equation, late: Option<Equation>) -> Vec<f64> {
    let coef = |eq: Equation, name: &str| {
        eq.iter().find(|(t, _)| t.name() == name).map_or(0.0, |(_, c)| *c)
    };
    let base = late.unwrap_or(early);
    names
        .iter()
        .map(|n| match n.strip_prefix("early*") {
            Some(inner) => coef(early, inner) - coef(base, inner),
            None => coef(base, n),
        })
        .collect()
}

fn within(model_coef: &[f64], se: &[f64], truth: &[f64], z: f64) -> Vec<usize> {
    (0..truth.len())
        .filter(|&j| (model_coef[j] - truth[j]).abs() > z * se[j])
        .collect()
}

#[test]
fn logistic_models_recover_dgp_coefficients() {
    let sc = Scenario::simple().without_u();
    let mut ok = [0usize; 3];
    let seeds = 20;
    for seed in 0..seeds {
        let cohort = simulate_cohort(sc, 10_000, 60, TreatmentStrategy::NaturalCourse, 1000 + seed).unwrap();
        let d = training_designs(&cohort, FeatureSpec::DgpMatched).unwrap();
        let opts = LogisticOptions::default();
        for (i, ((x, y), eq)) in
            [(&d.high_bmi, simple::HIGH_BMI), (&d.treatment, simple::INSTI), (&d.outcome, simple::OUTCOME)]
                .into_iter()
                .enumerate()
        {
            let m = fit_logistic(x, y, opts).unwrap();
            let t = truth(&m.feature_names, eq, None);
            let off = within(&m.coefficients, &m.std_errors, &t, 4.0);
            if off.is_empty() {
                ok[i] += 1;
            }
        }
    }
    for (name, n) in ["high_bmi", "treatment", "outcome"].iter().zip(ok) {
        assert!(n as f64 >= 0.95 * seeds as f64, "{name}: recovered in {n} of {seeds} seeds");
    }
}

/// The continuous covariates are truncated far from their linear
/// predictor, so the Gaussian linear fit estimates a different mean
/// function and cannot recover the DGP coefficients.
#[test]
fn gaussian_cd4_model_does_not_recover_truncated_process() {
    let sc = Scenario::simple().without_u();
    let cohort = simulate_cohort(sc, 10_000, 60, TreatmentStrategy::NaturalCourse, 1000).unwrap();
    let m = fit_parametric_modelset(&cohort, FeatureSpec::DgpMatched).unwrap();
    let t = truth(&m.cd4.feature_names, simple::CD4_EARLY, Some(simple::CD4_LATE));
    let j = m.cd4.feature_names.iter().position(|n| n == Term::Cd4LagAge.name()).unwrap();
    assert_eq!(t[j], -0.1);
    assert!(!within(&m.cd4.coefficients, &m.cd4.std_errors, &t, 4.0).is_empty());
    assert!(m.cd4.range.0 >= 350.0 && m.cd4.range.1 <= 800.0);
}

#[test]
fn outcome_rows_are_the_risk_set() {
    let cohort =
        simulate_cohort(Scenario::simple(), 500, 24, TreatmentStrategy::NaturalCourse, 3).unwrap();
    let d = training_designs(&cohort, FeatureSpec::Lag1).unwrap();
    assert_eq!(d.outcome.1.len(), cohort.person_months());
    let events = cohort.persons.iter().filter(|p| p.event_time.is_some()).count();
    assert_eq!(d.outcome.1.iter().sum::<f64>() as usize, events);
    assert_eq!(d.cd4.1.len(), cohort.person_months() - cohort.len());
    assert_eq!(d.treatment.1.len(), cohort.person_months());
}

#[test]
fn model_set_json_round_trip_preserves_predictions() {
    let cohort =
        simulate_cohort(Scenario::complex(), 800, 36, TreatmentStrategy::NaturalCourse, 5).unwrap();
    for spec in [FeatureSpec::Lag1, FeatureSpec::LagPlusCumAvg, FeatureSpec::DgpMatched] {
        let m = fit_parametric_modelset(&cohort, spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("models.json");
        m.save(&path).unwrap();
        let back = ParametricModelSet::load(&path).unwrap();
        assert_eq!(back.spec, spec);
        assert_eq!(back.cd4.coefficients, m.cd4.coefficients);
        assert_eq!(back.outcome.coefficients, m.outcome.coefficients);
        assert_eq!(back.rna.residual_sd, m.rna.residual_sd);
        let pool = BaselinePool::from_cohort(&cohort).unwrap();
        let cfg = MonteCarloConfig::new(200, 36, 1);
        let a = estimate_risk(&m, &pool, TreatmentStrategy::NaturalCourse, &cfg).unwrap();
        let b = estimate_risk(&back, &pool, TreatmentStrategy::NaturalCourse, &cfg).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn json_names_coefficients_and_rejects_tampering() {
    let cohort =
        simulate_cohort(Scenario::simple(), 300, 12, TreatmentStrategy::NaturalCourse, 2).unwrap();
    let m = fit_parametric_modelset(&cohort, FeatureSpec::Lag1).unwrap();
    let text = m.to_json().unwrap();
    assert!(text.contains("\"cd4[k-1]\""));
    assert!(text.contains("\"version\": 1"));
    let bad = text.replacen("\"insti[k-1]\"", "\"insti_lag\"", 1);
    assert!(ParametricModelSet::from_json(&bad).is_err());
}

#[test]
fn fitted_model_set_yields_valid_risk_curves() {
    let cohort =
        simulate_cohort(Scenario::complex(), 1000, 60, TreatmentStrategy::NaturalCourse, 8).unwrap();
    let m = fit_parametric_modelset(&cohort, FeatureSpec::LagPlusCumAvg).unwrap();
    let pool = BaselinePool::from_cohort(&cohort).unwrap();
    for s in TreatmentStrategy::ALL {
        let est = estimate_risk(&m, &pool, s, &MonteCarloConfig::new(500, 60, 4)).unwrap();
        assert_eq!(est.risk.len(), 60);
        assert!(est.risk.values.windows(2).all(|w| w[1] >= w[0]));
        assert!(est.risk.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
