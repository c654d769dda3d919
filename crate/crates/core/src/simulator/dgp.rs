//! The two data-generating processes: "simple" (first-order Markov in the
//! covariates) and "complex" (dependence on windowed history means).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::truncnorm::{expit, TruncatedNormal};
use crate::cohort::{Baseline, PersonTrajectory, Record, TreatmentStrategy};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Simple,
    Complex,
}

/// Data-generating process selection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    /// When false, every coefficient of the unmeasured confounder `U` is 0.
    pub include_u: bool,
    /// Added to the outcome linear predictor. Zero reproduces the published
    /// process; `-inf` switches the outcome off.
    #[serde(default)]
    pub outcome_shift: f64,
}

impl Scenario {
    pub fn simple() -> Self {
        Self { kind: ScenarioKind::Simple, include_u: true, outcome_shift: 0.0 }
    }

    pub fn complex() -> Self {
        Self { kind: ScenarioKind::Complex, include_u: true, outcome_shift: 0.0 }
    }

    pub fn without_u(mut self) -> Self {
        self.include_u = false;
        self
    }

    fn u_scale(&self) -> f64 {
        if self.include_u {
            1.0
        } else {
            0.0
        }
    }
}

/// Baseline draw including the unmeasured confounder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineDraw {
    pub sex: u8,
    pub age: f64,
    pub smoking: u8,
    pub u: f64,
}

impl BaselineDraw {
    pub fn observed(&self) -> Baseline {
        Baseline { sex: self.sex, age: self.age, smoking: self.smoking }
    }
}

pub fn draw_baseline<R: Rng + ?Sized>(rng: &mut R) -> BaselineDraw {
    let age = TruncatedNormal { mu: 50.0, sigma: 12.0, a: 18.0, b: 80.0 }.sample(rng);
    let sex = u8::from(rng.random::<f64>() < 0.8);
    let s: f64 = rng.random();
    let smoking = if s < 0.45 {
        0
    } else if s < 0.85 {
        1
    } else {
        2
    };
    let u = rng.random::<f64>();
    BaselineDraw { sex, age, smoking, u }
}

/// Linear-predictor terms of the simple process. Names with `Lag` refer to
/// month `k - 1`; the others to month `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Term {
    Intercept,
    U,
    Sex,
    Age,
    AgeSq,
    Smoking,
    Cd4Lag,
    Cd4LagSq,
    RnaLag,
    BmiLag,
    InstiLag,
    BmiLagRnaLag,
    BmiLagSex,
    Cd4LagAge,
    Cd4,
    Cd4Sq,
    Rna,
    RnaSq,
    Bmi,
    Insti,
    BmiRna,
    BmiSex,
    Cd4Age,
}

impl Term {
    pub fn name(self) -> &'static str {
        match self {
            Term::Intercept => "intercept",
            Term::U => "u",
            Term::Sex => "sex",
            Term::Age => "age",
            Term::AgeSq => "age^2",
            Term::Smoking => "smoking",
            Term::Cd4Lag => "cd4[k-1]",
            Term::Cd4LagSq => "cd4[k-1]^2",
            Term::RnaLag => "rna[k-1]",
            Term::BmiLag => "high_bmi[k-1]",
            Term::InstiLag => "insti[k-1]",
            Term::BmiLagRnaLag => "high_bmi[k-1]*rna[k-1]",
            Term::BmiLagSex => "high_bmi[k-1]*sex",
            Term::Cd4LagAge => "cd4[k-1]*age",
            Term::Cd4 => "cd4",
            Term::Cd4Sq => "cd4^2",
            Term::Rna => "rna",
            Term::RnaSq => "rna^2",
            Term::Bmi => "high_bmi",
            Term::Insti => "insti",
            Term::BmiRna => "high_bmi*rna",
            Term::BmiSex => "high_bmi*sex",
            Term::Cd4Age => "cd4*age",
        }
    }

    pub fn value(self, c: &TermContext) -> f64 {
        match self {
            Term::Intercept => 1.0,
            Term::U => c.u,
            Term::Sex => c.sex,
            Term::Age => c.age,
            Term::AgeSq => c.age * c.age,
            Term::Smoking => c.smoking,
            Term::Cd4Lag => c.cd4_lag,
            Term::Cd4LagSq => c.cd4_lag * c.cd4_lag,
            Term::RnaLag => c.rna_lag,
            Term::BmiLag => c.bmi_lag,
            Term::InstiLag => c.insti_lag,
            Term::BmiLagRnaLag => c.bmi_lag * c.rna_lag,
            Term::BmiLagSex => c.bmi_lag * c.sex,
            Term::Cd4LagAge => c.cd4_lag * c.age,
            Term::Cd4 => c.cd4,
            Term::Cd4Sq => c.cd4 * c.cd4,
            Term::Rna => c.rna,
            Term::RnaSq => c.rna * c.rna,
            Term::Bmi => c.bmi,
            Term::Insti => c.insti,
            Term::BmiRna => c.bmi * c.rna,
            Term::BmiSex => c.bmi * c.sex,
            Term::Cd4Age => c.cd4 * c.age,
        }
    }
}

/// Values the simple-process terms are evaluated on.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TermContext {
    pub u: f64,
    pub sex: f64,
    pub age: f64,
    pub smoking: f64,
    pub cd4_lag: f64,
    pub rna_lag: f64,
    pub bmi_lag: f64,
    pub insti_lag: f64,
    pub cd4: f64,
    pub rna: f64,
    pub bmi: f64,
    pub insti: f64,
}

/// A linear predictor as (term, coefficient) pairs.
pub type Equation = &'static [(Term, f64)];

pub fn eval_equation(eq: Equation, ctx: &TermContext, u_scale: f64) -> f64 {
    eq.iter()
        .map(|&(t, c)| if t == Term::U { c * u_scale * ctx.u } else { c * t.value(ctx) })
        .sum()
}

/// Noise and truncation of a continuous covariate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Truncation {
    pub sigma: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Months `0..=5` follow the early equations, later months the late ones.
pub fn is_early(k: usize) -> bool {
    k <= 5
}

pub const CD4_EARLY_NOISE: Truncation = Truncation { sigma: 100.0, lo: 350.0, hi: 800.0 };
pub const CD4_LATE_NOISE: Truncation = Truncation { sigma: 80.0, lo: 400.0, hi: 800.0 };
pub const RNA_EARLY_NOISE: Truncation = Truncation { sigma: 30.0, lo: 40.0, hi: 80.0 };
pub const RNA_LATE_NOISE: Truncation = Truncation { sigma: 20.0, lo: 20.0, hi: 70.0 };
pub const CD4_PRE_BASELINE: TruncatedNormal =
    TruncatedNormal { mu: 450.0, sigma: 100.0, a: 350.0, b: 800.0 };
pub const RNA_PRE_BASELINE: TruncatedNormal =
    TruncatedNormal { mu: 60.0, sigma: 30.0, a: 40.0, b: 90.0 };

pub fn cd4_noise(k: usize) -> Truncation {
    if is_early(k) {
        CD4_EARLY_NOISE
    } else {
        CD4_LATE_NOISE
    }
}

pub fn rna_noise(k: usize) -> Truncation {
    if is_early(k) {
        RNA_EARLY_NOISE
    } else {
        RNA_LATE_NOISE
    }
}

pub mod simple {
    //! Coefficients of the simple process.
    use super::Equation;
    use super::Term::*;

    pub const CD4_EARLY: Equation = &[
        (U, -0.8),
        (Sex, 0.7),
        (Age, -0.8),
        (AgeSq, -0.05),
        (Smoking, 0.6),
        (Cd4Lag, 2.0),
        (Cd4LagSq, 0.005),
        (RnaLag, -1.0),
        (BmiLag, -0.1),
        (InstiLag, 0.05),
        (BmiLagRnaLag, 0.1),
        (BmiLagSex, 0.08),
        (Cd4LagAge, -0.1),
    ];

    pub const CD4_LATE: Equation = &[
        (U, -0.8),
        (Sex, 0.7),
        (Age, -0.8),
        (AgeSq, -0.05),
        (Smoking, 0.6),
        (Cd4Lag, 1.8),
        (Cd4LagSq, 0.008),
        (RnaLag, -1.0),
        (BmiLag, -0.1),
        (InstiLag, 0.05),
        (BmiLagRnaLag, 0.1),
        (BmiLagSex, 0.08),
        (Cd4LagAge, -0.1),
    ];

    pub const RNA_EARLY: Equation = &[
        (U, 0.5),
        (Sex, 0.5),
        (Age, 0.3),
        (AgeSq, 0.006),
        (Smoking, 0.8),
        (Cd4Lag, -0.5),
        (Cd4LagSq, -0.0001),
        (RnaLag, 2.0),
        (BmiLag, 0.3),
        (InstiLag, 0.05),
        (BmiLagRnaLag, 0.08),
        (BmiLagSex, 0.1),
        (Cd4LagAge, -0.01),
    ];

    pub const RNA_LATE: Equation = &[
        (U, 0.5),
        (Sex, 0.5),
        (Age, 0.3),
        (AgeSq, 0.006),
        (Smoking, 0.8),
        (Cd4Lag, -0.5),
        (Cd4LagSq, -0.0001),
        (RnaLag, 1.8),
        (BmiLag, 0.3),
        (InstiLag, 0.05),
        (BmiLagRnaLag, 0.08),
        (BmiLagSex, 0.1),
        (Cd4LagAge, -0.01),
    ];

    pub const HIGH_BMI: Equation = &[
        (Intercept, -8.0),
        (U, -2.0),
        (Sex, 0.03),
        (Age, 0.01),
        (AgeSq, 0.0001),
        (Smoking, 0.04),
        (Cd4Lag, -0.0001),
        (RnaLag, 0.001),
        (BmiLag, 10.0),
        (InstiLag, 5.0),
        (BmiLagRnaLag, 0.001),
        (BmiLagSex, 0.004),
        (Cd4LagAge, 0.00001),
    ];

    pub const INSTI: Equation = &[
        (Intercept, -4.5),
        (Sex, 0.5),
        (Age, 0.01),
        (AgeSq, 0.0001),
        (Smoking, 0.1),
        (Cd4, 0.001),
        (Rna, 0.01),
        (Bmi, -7.0),
        (InstiLag, 10.0),
        (BmiRna, 0.0001),
        (BmiSex, 0.001),
        (Cd4Age, 0.00001),
    ];

    pub const OUTCOME: Equation = &[
        (U, -0.08),
        (Sex, 0.005),
        (Age, 0.015),
        (AgeSq, 0.000_000_05),
        (Smoking, 0.025),
        (Cd4, -0.015),
        (Rna, 0.03),
        (RnaSq, 0.000_000_4),
        (Bmi, 0.1),
        (Insti, 0.09),
    ];

    pub fn cd4(k: usize) -> Equation {
        if super::is_early(k) {
            CD4_EARLY
        } else {
            CD4_LATE
        }
    }

    pub fn rna(k: usize) -> Equation {
        if super::is_early(k) {
            RNA_EARLY
        } else {
            RNA_LATE
        }
    }
}

/// Mean of a CD4 draw at month `k` in the simple process. At `k = 0` the
/// lagged-treatment coefficient is zero since no treatment precedes
/// baseline.
pub fn simple_cd4_mean(ctx: &TermContext, k: usize, u_scale: f64) -> f64 {
    let mut c = *ctx;
    if k == 0 {
        c.insti_lag = 0.0;
    }
    eval_equation(simple::cd4(k), &c, u_scale)
}

fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> u8 {
    u8::from(rng.random::<f64>() < p)
}

/// Draws treatment at month `k`. A uniform is consumed under every strategy
/// so that random streams stay aligned across strategies.
fn assign_treatment<R: Rng + ?Sized>(
    strategy: TreatmentStrategy,
    p_natural: impl FnOnce() -> f64,
    rng: &mut R,
) -> u8 {
    let u: f64 = rng.random();
    match strategy.forced() {
        Some(a) => a,
        None => u8::from(u < p_natural()),
    }
}

/// Simulates one person. All draws come from `rng`, baseline first.
pub fn simulate_person<R: Rng + ?Sized>(
    scenario: &Scenario,
    id: u64,
    horizon: usize,
    strategy: TreatmentStrategy,
    rng: &mut R,
) -> Result<PersonTrajectory> {
    let base = draw_baseline(rng);
    let (records, event_time) = match scenario.kind {
        ScenarioKind::Simple => simulate_simple(scenario, &base, horizon, strategy, rng)?,
        ScenarioKind::Complex => simulate_complex(scenario, &base, horizon, strategy, rng)?,
    };
    Ok(PersonTrajectory { id, baseline: base.observed(), records, event_time })
}

type Simulated = (Vec<Record>, Option<usize>);

fn simulate_simple<R: Rng + ?Sized>(
    scenario: &Scenario,
    base: &BaselineDraw,
    horizon: usize,
    strategy: TreatmentStrategy,
    rng: &mut R,
) -> Result<Simulated> {
    let us = scenario.u_scale();
    let mut ctx = TermContext {
        u: base.u,
        sex: f64::from(base.sex),
        age: base.age,
        smoking: f64::from(base.smoking),
        ..TermContext::default()
    };

    // Month -1: lagged terms of the BMI equation use the month -1 values,
    // with no prior high BMI or treatment.
    let cd4_pre = CD4_PRE_BASELINE.sample(rng);
    let rna_pre = RNA_PRE_BASELINE.sample(rng);
    ctx.cd4_lag = cd4_pre;
    ctx.rna_lag = rna_pre;
    let bmi_pre = bernoulli(expit(eval_equation(simple::HIGH_BMI, &ctx, us)), rng);
    ctx.bmi_lag = f64::from(bmi_pre);
    ctx.insti_lag = 0.0;

    let mut records = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let noise = cd4_noise(k);
        let cd4 =
            TruncatedNormal::new(simple_cd4_mean(&ctx, k, us), noise.sigma, noise.lo, noise.hi)?
                .sample(rng);
        let noise = rna_noise(k);
        let rna = TruncatedNormal::new(
            eval_equation(simple::rna(k), &ctx, us),
            noise.sigma,
            noise.lo,
            noise.hi,
        )?
        .sample(rng);
        let bmi = bernoulli(expit(eval_equation(simple::HIGH_BMI, &ctx, us)), rng);
        ctx.cd4 = cd4;
        ctx.rna = rna;
        ctx.bmi = f64::from(bmi);
        let insti =
            assign_treatment(strategy, || expit(eval_equation(simple::INSTI, &ctx, us)), rng);
        ctx.insti = f64::from(insti);
        let y = bernoulli(
            expit(eval_equation(simple::OUTCOME, &ctx, us) + scenario.outcome_shift),
            rng,
        );
        records.push(Record { cd4, rna, high_bmi: bmi, insti });
        if y == 1 {
            return Ok((records, Some(k + 1)));
        }
        ctx.cd4_lag = cd4;
        ctx.rna_lag = rna;
        ctx.bmi_lag = ctx.bmi;
        ctx.insti_lag = ctx.insti;
    }
    Ok((records, None))
}

/// Number of pre-baseline months in the complex process (`k = -30..=-1`).
pub const PRE_BASELINE_MONTHS: usize = 30;

/// A series indexed from month -30 with prefix sums for window means.
#[derive(Clone, Debug)]
pub struct WindowedSeries {
    values: Vec<f64>,
    prefix: Vec<f64>,
}

impl WindowedSeries {
    pub fn with_capacity(n: usize) -> Self {
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(0.0);
        Self { values: Vec::with_capacity(n), prefix }
    }

    pub fn push(&mut self, v: f64) {
        self.prefix.push(self.prefix.last().unwrap() + v);
        self.values.push(v);
    }

    /// Value at month `k` (`k >= -30`).
    pub fn at(&self, k: i64) -> f64 {
        self.values[(k + PRE_BASELINE_MONTHS as i64) as usize]
    }

    /// Mean over months `from..=to`, truncated at month -30. Empty windows
    /// give 0.
    pub fn mean(&self, from: i64, to: i64) -> f64 {
        let lo = from.max(-(PRE_BASELINE_MONTHS as i64));
        if to < lo {
            return 0.0;
        }
        let i = (lo + PRE_BASELINE_MONTHS as i64) as usize;
        let j = (to + PRE_BASELINE_MONTHS as i64) as usize + 1;
        (self.prefix[j] - self.prefix[i]) / (j - i) as f64
    }

    /// Window means preceding month `k`: last value, months `k-6..=k-1`,
    /// `k-24..=k-7`, and everything from -30 to `k-25`.
    pub fn windows(&self, k: i64) -> Windows {
        Windows {
            lag: self.at(k - 1),
            recent: self.mean(k - 6, k - 1),
            middle: self.mean(k - 24, k - 7),
            old: self.mean(-(PRE_BASELINE_MONTHS as i64), k - 25),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Windows {
    pub lag: f64,
    pub recent: f64,
    pub middle: f64,
    pub old: f64,
}

/// Inputs of the complex-process equations at month `k`.
#[derive(Clone, Copy, Debug, Default)]
pub struct ComplexContext {
    pub u: f64,
    pub sex: f64,
    pub age: f64,
    pub smoking: f64,
    pub cd4: Windows,
    pub rna: Windows,
    pub bmi: Windows,
    pub insti_lag: f64,
    /// Mean treatment over months `0..k`; 0 at baseline.
    pub insti_mean: f64,
}

pub mod complex {
    //! Linear predictors of the complex process.
    use super::ComplexContext;

    pub fn cd4_mean(c: &ComplexContext, early: bool, us: f64) -> f64 {
        let (b_lag, b_sq, b_recent, b_middle, b_old) =
            if early { (1.0, 0.005, 0.8, 0.6, 0.5) } else { (1.8, 0.008, 1.0, 0.5, 0.2) };
        -2.0 * us * c.u + 0.1 * c.sex - 1.0 * c.age - 0.05 * c.age * c.age + 0.3 * c.smoking
            + b_lag * c.cd4.lag
            + b_sq * c.cd4.lag * c.cd4.lag
            + b_recent * c.cd4.recent
            + b_middle * c.cd4.middle
            + b_old * c.cd4.old
            - 0.8 * c.rna.lag
            - 0.5 * c.rna.recent
            - 0.3 * c.rna.middle
            - 0.1 * c.rna.old
            - 0.1 * c.bmi.lag
            - 0.08 * c.bmi.recent
            - 0.04 * c.bmi.middle
            - 0.02 * c.bmi.old
            + 0.05 * c.insti_lag
            + 0.02 * c.insti_mean
            + 0.1 * c.bmi.lag * c.rna.lag
            + 0.08 * c.bmi.lag * c.sex
            - 0.1 * c.cd4.lag * c.age
    }

    /// Same mean in both regimes; only noise and truncation change.
    pub fn rna_mean(c: &ComplexContext, us: f64) -> f64 {
        2.0 * us * c.u + 1.0 * c.sex + 1.5 * c.age + 0.006 * c.age * c.age + 0.5 * c.smoking
            - 0.5 * c.cd4.lag
            - 0.0001 * c.cd4.lag * c.cd4.lag
            - 0.2 * c.cd4.recent
            - 0.05 * c.cd4.middle
            - 0.01 * c.cd4.old
            + 6.0 * c.rna.lag
            + 5.0 * c.rna.recent
            + 3.0 * c.rna.middle
            + 2.0 * c.rna.old
            + 0.3 * c.bmi.lag
            + 0.1 * c.bmi.recent
            + 0.06 * c.bmi.middle
            + 0.03 * c.bmi.old
            + 0.05 * c.insti_lag
            + 0.01 * c.insti_mean
            + 0.08 * c.bmi.lag * c.rna.lag
            + 0.1 * c.bmi.lag * c.sex
            - 0.01 * c.cd4.lag * c.age
    }

    pub fn high_bmi_logit(c: &ComplexContext, us: f64) -> f64 {
        -6.5 - 1.0 * us * c.u - 0.6 * c.sex + 0.01 * c.age + 0.0001 * c.age * c.age
            - 0.04 * c.smoking
            - 0.0001 * c.cd4.lag
            + 0.000_001 * c.cd4.lag * c.cd4.lag
            - 0.001 * c.cd4.recent
            - 0.0001 * c.cd4.middle
            - 0.001 * c.cd4.old
            + 0.01 * c.rna.lag
            + 0.01 * c.rna.recent
            + 0.007 * c.rna.middle
            + 0.006 * c.rna.old
            + 4.5 * c.bmi.lag
            + 3.0 * c.bmi.recent
            + 1.6 * c.bmi.middle
            + 1.0 * c.bmi.old
            + 2.0 * c.insti_lag
            + 1.0 * c.insti_mean
    }

    /// Treatment log-odds given the current covariates.
    pub fn insti_logit(c: &ComplexContext, cd4: f64, rna: f64, bmi: f64) -> f64 {
        -4.0 + 0.5 * c.sex + 0.05 * c.age + 0.000_05 * c.age * c.age + 0.2 * c.smoking
            - 0.001 * cd4
            + 0.000_000_1 * cd4 * cd4
            - 0.0001 * c.cd4.recent
            + 0.001 * rna
            + 0.0003 * c.rna.recent
            - 3.0 * bmi
            - 2.0 * c.bmi.recent
            - 1.3 * c.bmi.middle
            - 0.8 * c.bmi.old
            + 6.0 * c.insti_lag
            + 4.0 * c.insti_mean
    }

    pub fn outcome_logit(c: &ComplexContext, cd4: f64, rna: f64, bmi: f64, insti: f64, us: f64) -> f64 {
        -0.05 * us * c.u + 0.007 * c.sex + 0.02 * c.age + 0.000_000_05 * c.age * c.age
            + 0.03 * c.smoking
            - 0.009 * cd4
            - 0.008 * c.cd4.recent
            - 0.006 * c.cd4.middle
            - 0.004 * c.cd4.old
            + 0.045 * rna
            + 0.000_000_4 * rna * rna
            + 0.03 * c.rna.recent
            + 0.025 * c.rna.middle
            + 0.02 * c.rna.old
            + 0.14 * bmi
            + 0.11 * c.bmi.recent
            + 0.08 * c.bmi.middle
            + 0.06 * c.bmi.old
            + 0.13 * insti
            + 0.11 * c.insti_mean
    }
}

fn simulate_complex<R: Rng + ?Sized>(
    scenario: &Scenario,
    base: &BaselineDraw,
    horizon: usize,
    strategy: TreatmentStrategy,
    rng: &mut R,
) -> Result<Simulated> {
    let us = scenario.u_scale();
    let n = PRE_BASELINE_MONTHS + horizon;
    let mut cd4 = WindowedSeries::with_capacity(n);
    let mut rna = WindowedSeries::with_capacity(n);
    let mut bmi = WindowedSeries::with_capacity(n);
    let mut ctx = ComplexContext {
        u: base.u,
        sex: f64::from(base.sex),
        age: base.age,
        smoking: f64::from(base.smoking),
        ..ComplexContext::default()
    };

    // Month -30: the BMI equation sees the month -30 values as lags and
    // empty (zero) windows.
    let first = -(PRE_BASELINE_MONTHS as i64);
    let cd4_0 = CD4_PRE_BASELINE.sample(rng);
    let rna_0 = RNA_PRE_BASELINE.sample(rng);
    ctx.cd4 = Windows { lag: cd4_0, ..Windows::default() };
    ctx.rna = Windows { lag: rna_0, ..Windows::default() };
    let bmi_0 = bernoulli(expit(complex::high_bmi_logit(&ctx, us)), rng);
    cd4.push(cd4_0);
    rna.push(rna_0);
    bmi.push(f64::from(bmi_0));
    for k in first + 1..0 {
        ctx.cd4 = cd4.windows(k);
        ctx.rna = rna.windows(k);
        ctx.bmi = bmi.windows(k);
        let b = bernoulli(expit(complex::high_bmi_logit(&ctx, us)), rng);
        cd4.push(cd4.at(k - 1) * 0.995);
        rna.push(rna.at(k - 1) * 1.01);
        bmi.push(f64::from(b));
    }

    let mut records = Vec::with_capacity(horizon);
    let mut insti_sum = 0.0;
    let mut insti_lag = 0.0;
    for k in 0..horizon {
        let kk = k as i64;
        ctx.cd4 = cd4.windows(kk);
        ctx.rna = rna.windows(kk);
        ctx.bmi = bmi.windows(kk);
        ctx.insti_lag = insti_lag;
        ctx.insti_mean = if k == 0 { 0.0 } else { insti_sum / k as f64 };

        let noise = cd4_noise(k);
        let c = TruncatedNormal::new(
            complex::cd4_mean(&ctx, is_early(k), us),
            noise.sigma,
            noise.lo,
            noise.hi,
        )?
        .sample(rng);
        let noise = rna_noise(k);
        let r = TruncatedNormal::new(complex::rna_mean(&ctx, us), noise.sigma, noise.lo, noise.hi)?
            .sample(rng);
        let b = f64::from(bernoulli(expit(complex::high_bmi_logit(&ctx, us)), rng));
        let a = assign_treatment(strategy, || expit(complex::insti_logit(&ctx, c, r, b)), rng);
        let y = bernoulli(
            expit(complex::outcome_logit(&ctx, c, r, b, f64::from(a), us) + scenario.outcome_shift),
            rng,
        );
        records.push(Record { cd4: c, rna: r, high_bmi: b as u8, insti: a });
        if y == 1 {
            return Ok((records, Some(k + 1)));
        }
        cd4.push(c);
        rna.push(r);
        bmi.push(b);
        insti_sum += f64::from(a);
        insti_lag = f64::from(a);
    }
    Ok((records, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn simple_cd4_mean_drops_treatment_at_baseline() {
        let ctx = TermContext {
            sex: 1.0,
            age: 40.0,
            smoking: 1.0,
            cd4_lag: 500.0,
            rna_lag: 60.0,
            bmi_lag: 1.0,
            insti_lag: 1.0,
            ..TermContext::default()
        };
        let without = TermContext { insti_lag: 0.0, ..ctx };
        assert_eq!(simple_cd4_mean(&ctx, 0, 1.0), simple_cd4_mean(&without, 0, 1.0));
        let diff = simple_cd4_mean(&ctx, 1, 1.0) - simple_cd4_mean(&without, 1, 1.0);
        assert!((diff - 0.05).abs() < 1e-9);
    }

    #[test]
    fn simple_cd4_equation_hand_value() {
        let ctx = TermContext {
            u: 0.5,
            sex: 1.0,
            age: 40.0,
            smoking: 2.0,
            cd4_lag: 500.0,
            rna_lag: 60.0,
            bmi_lag: 1.0,
            insti_lag: 1.0,
            ..TermContext::default()
        };
        let want = -0.8 * 0.5 + 0.7 - 0.8 * 40.0 - 0.05 * 1600.0 + 0.6 * 2.0 + 2.0 * 500.0
            + 0.005 * 250_000.0
            - 60.0
            - 0.1
            + 0.05
            + 0.1 * 60.0
            + 0.08
            - 0.1 * 500.0 * 40.0;
        assert!((eval_equation(simple::CD4_EARLY, &ctx, 1.0) - want).abs() < 1e-9);
    }

    #[test]
    fn window_means() {
        let mut s = WindowedSeries::with_capacity(40);
        for i in 0..35 {
            s.push(i as f64); // month i - 30
        }
        // month 5: recent = months -1..4 -> values 29..34
        let w = s.windows(5);
        assert_eq!(w.lag, 34.0);
        assert_eq!(w.recent, (29..=34).sum::<i32>() as f64 / 6.0);
        // middle = months -19..-2 -> values 11..28
        assert_eq!(w.middle, (11..=28).sum::<i32>() as f64 / 18.0);
        // old = months -30..-20 -> values 0..10
        assert_eq!(w.old, 5.0);
        // month -29: only the -30 value exists
        let w = s.windows(-29);
        assert_eq!(w.recent, 0.0);
        assert_eq!(w.middle, 0.0);
        assert_eq!(w.old, 0.0);
        assert_eq!(s.mean(-40, -29), 0.5);
    }

    #[test]
    fn forced_strategies_fix_treatment() {
        for scenario in [Scenario::simple(), Scenario::complex()] {
            for (strategy, value) in
                [(TreatmentStrategy::AlwaysTreat, 1), (TreatmentStrategy::NeverTreat, 0)]
            {
                for i in 0..50 {
                    let p = simulate_person(&scenario, i, 60, strategy, &mut stream_rng(5, i))
                        .unwrap();
                    assert!(p.records.iter().all(|r| r.insti == value));
                }
            }
        }
    }

    #[test]
    fn values_stay_within_regime_bounds() {
        for scenario in [Scenario::simple(), Scenario::complex()] {
            for i in 0..300 {
                let p = simulate_person(
                    &scenario,
                    i,
                    60,
                    TreatmentStrategy::NaturalCourse,
                    &mut stream_rng(9, i),
                )
                .unwrap();
                for (k, r) in p.records.iter().enumerate() {
                    let c = cd4_noise(k);
                    let n = rna_noise(k);
                    assert!(r.cd4 >= c.lo && r.cd4 <= c.hi, "cd4 {} at {k}", r.cd4);
                    assert!(r.rna >= n.lo && r.rna <= n.hi, "rna {} at {k}", r.rna);
                }
                p.validate(60).unwrap();
            }
        }
    }
}
