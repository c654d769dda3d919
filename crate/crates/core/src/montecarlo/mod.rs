//! Monte Carlo evaluation of the g-formula under a treatment strategy.
//!
//! Histories are simulated forward from a fitted [`ModelSet`]; the event is
//! never drawn. Each history contributes its cumulative incidence
//! `1 - prod(1 - h)` and the risk curve is the average over histories.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Baseline, Cohort, TreatmentStrategy};
use crate::error::{Error, Result};
use crate::history::History;
use crate::risk::RiskCurve;
use crate::rng::{stream_rng, StreamRng};
use crate::simulator::{cohort_risk, TruncatedNormal};

/// Default number of simulated histories.
pub const DEFAULT_SAMPLES: usize = 10_000;

/// How a [`BoundedNormal`] keeps draws inside `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bounding {
    /// Draw from the unbounded normal, then clamp.
    Clamp,
    /// Draw from the normal conditioned on the interval.
    Truncate,
}

/// Normal distribution restricted to `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundedNormal {
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
    pub bounding: Bounding,
}

impl BoundedNormal {
    pub fn clamped(mean: f64, sd: f64, lo: f64, hi: f64) -> Self {
        Self { mean, sd, lo, hi, bounding: Bounding::Clamp }
    }

    pub fn truncated(mean: f64, sd: f64, lo: f64, hi: f64) -> Self {
        Self { mean, sd, lo, hi, bounding: Bounding::Truncate }
    }

    /// Returns the draw and whether it was clamped.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(f64, bool)> {
        match self.bounding {
            Bounding::Clamp => {
                let z: f64 = StandardNormal.sample(rng);
                let v = self.mean + self.sd * z;
                let c = v.clamp(self.lo, self.hi);
                Ok((c, c != v))
            }
            Bounding::Truncate => Ok((
                TruncatedNormal::new(self.mean, self.sd, self.lo, self.hi)?.sample(rng),
                false,
            )),
        }
    }
}

/// Conditional law of the month-`k` covariates given the history through
/// `k - 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CovariateDistribution {
    pub cd4: BoundedNormal,
    pub rna: BoundedNormal,
    pub high_bmi: f64,
}

/// Fitted conditional models the engine simulates from.
///
/// For one history the engine calls, for `k = 0..K`: `covariate_step`
/// (only for `k >= 1`; month-0 covariates are resampled from the cohort),
/// then `treatment_prob` (natural course only), then `hazard`. Scratch
/// state is created per history, so recurrent models may advance
/// incrementally.
pub trait ModelSet: Sync {
    type Scratch: Send;

    fn new_scratch(&self) -> Self::Scratch;

    /// `history` holds covariates and treatment through `k - 1`.
    fn covariate_step(
        &self,
        history: &History,
        k: usize,
        scratch: &mut Self::Scratch,
    ) -> Result<CovariateDistribution>;

    /// `history` holds covariates through `k` and treatment through `k - 1`.
    fn treatment_prob(&self, history: &History, k: usize, scratch: &mut Self::Scratch)
        -> Result<f64>;

    /// Probability of the event in month `k` given survival to `k`;
    /// `history` holds everything through `k`.
    fn hazard(&self, history: &History, k: usize, scratch: &mut Self::Scratch) -> Result<f64>;
}

/// Observed month-0 row: baseline confounders together with the first
/// covariate values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineRow {
    pub baseline: Baseline,
    pub cd4: f64,
    pub rna: f64,
    pub high_bmi: f64,
}

/// Empirical distribution of month-0 rows, resampled with replacement.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselinePool {
    pub rows: Vec<BaselineRow>,
}

impl BaselinePool {
    pub fn from_cohort(cohort: &Cohort) -> Result<Self> {
        let rows: Vec<BaselineRow> = cohort
            .persons
            .iter()
            .filter_map(|p| {
                p.records.first().map(|r| BaselineRow {
                    baseline: p.baseline,
                    cd4: r.cd4,
                    rna: r.rna,
                    high_bmi: f64::from(r.high_bmi),
                })
            })
            .collect();
        Self::new(rows)
    }

    pub fn new(rows: Vec<BaselineRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Domain("baseline pool is empty".into()));
        }
        Ok(Self { rows })
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> BaselineRow {
        self.rows[rng.random_range(0..self.rows.len())]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub n_samples: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl MonteCarloConfig {
    pub fn new(n_samples: usize, horizon: usize, seed: u64) -> Self {
        Self { n_samples, horizon, seed }
    }

    fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Domain("n_samples must be at least 1".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Domain("horizon must be at least 1".into()));
        }
        Ok(())
    }
}

/// One simulated intervention history. `hazards[k]` is the event
/// probability in month `k`, i.e. `h_{k+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedHistory {
    pub history: History,
    pub hazards: Vec<f64>,
    /// Covariate draws clamped to the model's range (cd4, rna).
    pub clamped: [usize; 2],
}

impl SimulatedHistory {
    pub fn risk(&self) -> RiskCurve {
        let mut s = 1.0;
        RiskCurve {
            values: self
                .hazards
                .iter()
                .map(|h| {
                    s *= 1.0 - h;
                    1.0 - s
                })
                .collect(),
        }
    }
}

fn check_probability(p: f64, what: &str, k: usize) -> Result<f64> {
    if p.is_finite() && (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(Error::NonFinite(format!("{what} at k={k} is {p}")))
    }
}

fn check_normal(d: &BoundedNormal, what: &str, k: usize) -> Result<()> {
    if d.mean.is_finite() && d.sd.is_finite() && d.sd >= 0.0 && d.lo <= d.hi {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} distribution at k={k} is {d:?}")))
    }
}

/// Simulates one history. Draw order per month: covariates (`k >= 1`:
/// cd4, rna, high_bmi), then one uniform for treatment, consumed under
/// every strategy so that paired runs share their random numbers.
pub fn simulate_history<M: ModelSet>(
    model: &M,
    start: &BaselineRow,
    strategy: TreatmentStrategy,
    horizon: usize,
    rng: &mut StreamRng,
) -> Result<SimulatedHistory> {
    let mut scratch = model.new_scratch();
    let mut h = History::new(start.baseline, horizon);
    let mut hazards = Vec::with_capacity(horizon);
    let mut clamped = [0usize; 2];
    for k in 0..horizon {
        if k == 0 {
            h.push_covariates(start.cd4, start.rna, start.high_bmi);
        } else {
            let d = model.covariate_step(&h, k, &mut scratch)?;
            check_normal(&d.cd4, "cd4", k)?;
            check_normal(&d.rna, "rna", k)?;
            let p_bmi = check_probability(d.high_bmi, "high_bmi probability", k)?;
            let (cd4, c1) = d.cd4.sample(rng)?;
            let (rna, c2) = d.rna.sample(rng)?;
            let bmi = f64::from(u8::from(rng.random::<f64>() < p_bmi));
            clamped[0] += usize::from(c1);
            clamped[1] += usize::from(c2);
            h.push_covariates(cd4, rna, bmi);
        }
        let u: f64 = rng.random();
        let a = match strategy.forced() {
            Some(a) => f64::from(a),
            None => {
                let p = check_probability(
                    model.treatment_prob(&h, k, &mut scratch)?,
                    "treatment probability",
                    k,
                )?;
                f64::from(u8::from(u < p))
            }
        };
        h.insti.push(a);
        hazards.push(check_probability(model.hazard(&h, k, &mut scratch)?, "hazard", k)?);
    }
    Ok(SimulatedHistory { history: h, hazards, clamped })
}

/// Risk curve with its Monte Carlo standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub strategy: TreatmentStrategy,
    pub risk: RiskCurve,
    pub mc_se: Vec<f64>,
    pub n_samples: usize,
    /// Number of clamped (cd4, rna) draws over all histories.
    pub clamp_counts: [usize; 2],
}

const CHUNK: usize = 256;

/// Running mean and sum of squared deviations per month (Welford), merged
/// across chunks with Chan's update.
struct Accum {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    clamped: [usize; 2],
}

impl Accum {
    fn new(kk: usize) -> Self {
        Self { n: 0.0, mean: vec![0.0; kk], m2: vec![0.0; kk], clamped: [0, 0] }
    }

    fn push(&mut self, values: &[f64]) {
        self.n += 1.0;
        for ((m, q), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(values) {
            let d = v - *m;
            *m += d / self.n;
            *q += d * (v - *m);
        }
    }

    fn merge(&mut self, other: &Accum) {
        let n = self.n + other.n;
        if other.n == 0.0 {
            return;
        }
        for k in 0..self.mean.len() {
            let d = other.mean[k] - self.mean[k];
            self.mean[k] += d * other.n / n;
            self.m2[k] += other.m2[k] + d * d * self.n * other.n / n;
        }
        self.n = n;
        self.clamped[0] += other.clamped[0];
        self.clamped[1] += other.clamped[1];
    }
}

/// Averages cumulative incidence over `config.n_samples` histories. History
/// `m` uses stream `m` of `config.seed`, so equal seeds give paired
/// (common random number) contrasts across strategies and the first `n`
/// histories of a larger run reproduce a smaller one. Partial sums are
/// combined in a fixed order, making the result independent of thread
/// count.
pub fn estimate_risk<M: ModelSet>(
    model: &M,
    pool: &BaselinePool,
    strategy: TreatmentStrategy,
    config: &MonteCarloConfig,
) -> Result<RiskEstimate> {
    config.validate()?;
    let n = config.n_samples;
    let kk = config.horizon;
    let chunks: Vec<Accum> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = Accum::new(kk);
            for m in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let mut rng = stream_rng(config.seed, m as u64);
                let start = pool.draw(&mut rng);
                let sim = simulate_history(model, &start, strategy, kk, &mut rng)
                    .map_err(|e| match e {
                        Error::NonFinite(msg) => Error::NonFinite(format!("history {m}: {msg}")),
                        other => other,
                    })?;
                acc.push(&sim.risk().values);
                acc.clamped[0] += sim.clamped[0];
                acc.clamped[1] += sim.clamped[1];
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;

    let mut total = Accum::new(kk);
    for a in &chunks {
        total.merge(a);
    }
    let clamp_counts = total.clamped;
    let nf = n as f64;
    let mut values: Vec<f64> = total.mean.iter().map(|m| m.clamp(0.0, 1.0)).collect();
    // Guard against rounding in the running means.
    for k in 1..kk {
        values[k] = values[k].max(values[k - 1]);
    }
    let mc_se = total
        .m2
        .iter()
        .map(|q| if n < 2 { 0.0 } else { (q.max(0.0) / (nf - 1.0) / nf).sqrt() })
        .collect();
    if clamp_counts.iter().any(|&c| c > 0) {
        log::info!(
            "{strategy}: clamped {} cd4 and {} rna draws over {n} histories",
            clamp_counts[0],
            clamp_counts[1]
        );
    }
    Ok(RiskEstimate { strategy, risk: RiskCurve::new(values)?, mc_se, n_samples: n, clamp_counts })
}

/// Simulated natural-course risk minus the cohort's empirical risk, per
/// month `1..=config.horizon`.
pub fn natural_course_diagnostic<M: ModelSet>(
    model: &M,
    cohort: &Cohort,
    config: &MonteCarloConfig,
) -> Result<Vec<f64>> {
    if config.horizon > cohort.horizon() {
        return Err(Error::Domain(format!(
            "horizon {} exceeds cohort follow-up {}",
            config.horizon,
            cohort.horizon()
        )));
    }
    let pool = BaselinePool::from_cohort(cohort)?;
    let est = estimate_risk(model, &pool, TreatmentStrategy::NaturalCourse, config)?;
    let observed = cohort_risk(cohort);
    Ok(est.risk.values.iter().zip(&observed.values).map(|(a, b)| a - b).collect())
}

/// Writes `k,risk,mc_se` rows for `k = 1..=K`.
pub fn write_risk_csv(path: &Path, est: &RiskEstimate) -> Result<()> {
    let mut out = String::from("k,risk,mc_se\n");
    for (k, (r, se)) in est.risk.values.iter().zip(&est.mc_se).enumerate() {
        out.push_str(&format!("{},{},{}\n", k + 1, r, se));
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Reads a file written by [`write_risk_csv`].
pub fn read_risk_csv(path: &Path) -> Result<(RiskCurve, Vec<f64>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut values = Vec::new();
    let mut se = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |j: usize| -> Result<f64> {
            rec.get(j).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                row: i + 2,
                msg: format!("bad or missing column {j}"),
            })
        };
        if field(0)? as usize != i + 1 {
            return Err(Error::Parse { path: path.to_path_buf(), row: i + 2, msg: "k out of sequence".into() });
        }
        values.push(field(1)?);
        se.push(field(2)?);
    }
    Ok((RiskCurve::new(values)?, se))
}

/// Provenance of one estimation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub model_id: String,
    pub strategy: TreatmentStrategy,
    pub n_samples: usize,
    pub horizon: usize,
    pub seed: u64,
    pub clamp_counts: [usize; 2],
    pub elapsed_seconds: f64,
}
