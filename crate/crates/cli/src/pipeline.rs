//! Pipeline stages over the run directory
//! `<output_dir>/<name>/{data,models,risks,report,manifest.json}`.
//!
//! Every stage skips artifacts that already exist and writes new ones
//! through a temporary path renamed into place, so an interrupted run
//! resumes without recomputing or trusting partial files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use dlnice_core::evaluation::{render_report, BiasReport, ReportMeta, StrategyRisks};
use dlnice_core::io::{read_cohort, write_cohort};
use dlnice_core::montecarlo::{
    estimate_risk, read_risk_csv, write_risk_csv, BaselinePool, ModelSet, MonteCarloConfig, RiskEstimate,
    RunManifest,
};
use dlnice_core::parametric::{fit_parametric_modelset, ParametricModelSet};
use dlnice_core::simulator::{ground_truth_risk, simulate_cohort};
use dlnice_core::{Cohort, RiskCurve, TreatmentStrategy};
use dlnice_deepnet::{
    random_search, train_covariate_network, train_outcome_network, DeepModelSet, NetworkConfig, NetworkKind,
    SearchResult,
};

use crate::config::{ExperimentConfig, Method};
use crate::error::{CliError, CliResult};

pub const MANIFEST_FORMAT: &str = "dlnice-run";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub seconds: f64,
    /// Artifacts produced by the last invocation.
    pub computed: usize,
    /// Artifacts found on disk and reused.
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub crate_version: String,
    pub threads: usize,
    pub stages: BTreeMap<String, StageRecord>,
}

/// Writes through `<path>.partial` and renames into place.
fn atomic<T>(path: &Path, write: impl FnOnce(&Path) -> CliResult<T>) -> CliResult<T> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    if tmp.is_dir() {
        fs::remove_dir_all(&tmp)?;
    } else if tmp.exists() {
        fs::remove_file(&tmp)?;
    }
    let out = write(&tmp)?;
    fs::rename(&tmp, path)?;
    Ok(out)
}

fn require(path: &Path, producer: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::config(format!("missing input {}; run `dlnice {producer}` first", path.display())))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    atomic(path, |tmp| {
        fs::write(tmp, serde_json::to_string_pretty(value)? + "\n")?;
        Ok(())
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

pub struct Run {
    pub cfg: ExperimentConfig,
    pub dir: PathBuf,
    pub manifest: Manifest,
}

struct Tally {
    computed: usize,
    skipped: usize,
}

impl Run {
    /// Opens (creating if needed) the run directory. An existing run of a
    /// different config is an error unless `force`, which clears it.
    pub fn open(cfg: ExperimentConfig, force: bool) -> CliResult<Self> {
        cfg.validate()?;
        let dir = cfg.run_dir();
        let manifest_path = dir.join("manifest.json");
        let hash = cfg.hash();
        let mut stages = BTreeMap::new();
        if manifest_path.exists() {
            let old: Manifest = read_json(&manifest_path)?;
            if old.config_hash == hash {
                stages = old.stages;
            } else if force {
                fs::remove_dir_all(&dir)?;
            } else {
                return Err(CliError::config(format!(
                    "name: run directory {} holds a different config (hash {}); use another name or --force",
                    dir.display(),
                    old.config_hash
                )));
            }
        }
        for sub in ["data", "models", "risks", "report"] {
            fs::create_dir_all(dir.join(sub))?;
        }
        let manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            config_hash: hash,
            config: cfg.clone(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            threads: rayon::current_num_threads(),
            stages,
        };
        let run = Self { cfg, dir, manifest };
        run.save_manifest()?;
        Ok(run)
    }

    fn save_manifest(&self) -> CliResult<()> {
        write_json(&self.dir.join("manifest.json"), &self.manifest)
    }

    fn stage(&mut self, name: &str, body: impl FnOnce(&Self, &mut Tally) -> CliResult<()>) -> CliResult<()> {
        let start = Instant::now();
        let mut tally = Tally { computed: 0, skipped: 0 };
        log::info!("stage {name}");
        body(self, &mut tally)?;
        self.manifest.stages.insert(
            name.to_string(),
            StageRecord { seconds: start.elapsed().as_secs_f64(), computed: tally.computed, skipped: tally.skipped },
        );
        self.save_manifest()
    }

    pub fn cohort_path(&self, n: usize) -> PathBuf {
        self.dir.join("data").join(format!("cohort_{n}.csv"))
    }

    pub fn truth_path(&self, s: TreatmentStrategy) -> PathBuf {
        self.dir.join("data").join(format!("truth_{s}.csv"))
    }

    pub fn parametric_path(&self, spec: dlnice_core::parametric::FeatureSpec, n: usize) -> PathBuf {
        self.dir.join("models").join(format!("parametric_{}_{n}.json", spec.as_str()))
    }

    pub fn dl_dir(&self, n: usize) -> PathBuf {
        self.dir.join("models").join(format!("dl_{n}"))
    }

    pub fn search_path(&self, kind: NetworkKind, n: usize) -> PathBuf {
        let k = match kind {
            NetworkKind::Covariate => "covariate",
            NetworkKind::Outcome => "outcome",
        };
        self.dir.join("models").join(format!("search_{k}_{n}.json"))
    }

    fn method_file(m: Method) -> String {
        m.label().replace(':', "_")
    }

    pub fn risk_path(&self, m: Method, n: usize, s: TreatmentStrategy) -> PathBuf {
        self.dir.join("risks").join(format!("{}_{n}_{s}.csv", Self::method_file(m)))
    }

    pub fn reports_path(&self) -> PathBuf {
        self.dir.join("report").join("bias_reports.json")
    }

    fn load_cohort(&self, n: usize) -> CliResult<Cohort> {
        let p = self.cohort_path(n);
        require(&p, "simulate")?;
        Ok(read_cohort(&p)?)
    }

    pub fn simulate(&mut self) -> CliResult<()> {
        self.stage("simulate", |run, t| {
            for &n in &run.cfg.sample_sizes {
                let path = run.cohort_path(n);
                if path.exists() {
                    t.skipped += 1;
                    continue;
                }
                let c = simulate_cohort(
                    run.cfg.scenario(),
                    n,
                    run.cfg.horizon,
                    TreatmentStrategy::NaturalCourse,
                    run.cfg.seeds.simulation,
                )?;
                atomic(&path, |tmp| Ok(write_cohort(&c, tmp)?))?;
                t.computed += 1;
            }
            Ok(())
        })
    }

    pub fn truth(&mut self) -> CliResult<()> {
        self.stage("truth", |run, t| {
            for s in TreatmentStrategy::ALL {
                let path = run.truth_path(s);
                if path.exists() {
                    t.skipped += 1;
                    continue;
                }
                let n = run.cfg.truth_n;
                let risk = ground_truth_risk(run.cfg.scenario(), s, n, run.cfg.horizon, run.cfg.seeds.truth)?;
                let se = risk.values.iter().map(|p| (p * (1.0 - p) / n as f64).sqrt()).collect();
                let est = RiskEstimate { strategy: s, risk, mc_se: se, n_samples: n, clamp_counts: [0, 0] };
                atomic(&path, |tmp| Ok(write_risk_csv(tmp, &est)?))?;
                t.computed += 1;
            }
            Ok(())
        })
    }

    pub fn fit_parametric(&mut self) -> CliResult<()> {
        self.stage("fit-parametric", |run, t| {
            for &n in &run.cfg.sample_sizes {
                for m in &run.cfg.methods {
                    let Method::Parametric(spec) = *m else { continue };
                    let path = run.parametric_path(spec, n);
                    if path.exists() {
                        t.skipped += 1;
                        continue;
                    }
                    let models = fit_parametric_modelset(&run.load_cohort(n)?, spec)?;
                    atomic(&path, |tmp| Ok(models.save(tmp)?))?;
                    t.computed += 1;
                }
            }
            Ok(())
        })
    }

    pub fn search_dl(&mut self) -> CliResult<()> {
        self.stage("search-dl", |run, t| {
            if !run.cfg.uses_dl() {
                return Ok(());
            }
            for &n in &run.cfg.sample_sizes {
                for kind in [NetworkKind::Covariate, NetworkKind::Outcome] {
                    let Some((space, trials)) = run.cfg.search_space(kind) else {
                        return Err(CliError::config("network.search: not configured"));
                    };
                    let path = run.search_path(kind, n);
                    if path.exists() {
                        t.skipped += 1;
                        continue;
                    }
                    let cohort = run.load_cohort(n)?;
                    let seed = run.cfg.seeds.training;
                    let result = random_search(&space, trials, seed, |c| {
                        let trained = match kind {
                            NetworkKind::Covariate => train_covariate_network(&cohort, c, seed)?,
                            NetworkKind::Outcome => train_outcome_network(&cohort, c, seed)?,
                        };
                        Ok(trained.best_val_loss)
                    })?;
                    write_json(&path, &result)?;
                    t.computed += 1;
                }
            }
            Ok(())
        })
    }

    /// Network settings for sample size `n`: the search winner when search
    /// is configured, else preset plus overrides.
    pub fn chosen_config(&self, n: usize, kind: NetworkKind) -> CliResult<NetworkConfig> {
        if self.cfg.network.search.is_none() {
            return Ok(self.cfg.network_config(n, kind));
        }
        let path = self.search_path(kind, n);
        require(&path, "search-dl")?;
        Ok(read_json::<SearchResult>(&path)?.best)
    }

    pub fn fit_dl(&mut self) -> CliResult<()> {
        self.stage("fit-dl", |run, t| {
            if !run.cfg.uses_dl() {
                return Ok(());
            }
            for &n in &run.cfg.sample_sizes {
                let dir = run.dl_dir(n);
                if dir.exists() {
                    t.skipped += 1;
                    continue;
                }
                let cohort = run.load_cohort(n)?;
                let seed = run.cfg.seeds.training;
                let cov = train_covariate_network(&cohort, &run.chosen_config(n, NetworkKind::Covariate)?, seed)?;
                let out = train_outcome_network(&cohort, &run.chosen_config(n, NetworkKind::Outcome)?, seed)?;
                let models = DeepModelSet::new(cov, out)?;
                atomic(&dir, |tmp| Ok(models.save(tmp)?))?;
                t.computed += 1;
            }
            Ok(())
        })
    }

    fn estimate_one<M: ModelSet>(&self, model: &M, m: Method, n: usize, pool: &BaselinePool, t: &mut Tally) -> CliResult<()> {
        let mc = MonteCarloConfig::new(self.cfg.mc_samples, self.cfg.horizon, self.cfg.seeds.monte_carlo);
        for s in TreatmentStrategy::ALL {
            let path = self.risk_path(m, n, s);
            if path.exists() {
                t.skipped += 1;
                continue;
            }
            let start = Instant::now();
            let est = estimate_risk(model, pool, s, &mc)?;
            let manifest = RunManifest {
                model_id: format!("{}_{n}", Self::method_file(m)),
                strategy: s,
                n_samples: mc.n_samples,
                horizon: mc.horizon,
                seed: mc.seed,
                clamp_counts: est.clamp_counts,
                elapsed_seconds: start.elapsed().as_secs_f64(),
            };
            write_json(&path.with_extension("json"), &manifest)?;
            atomic(&path, |tmp| Ok(write_risk_csv(tmp, &est)?))?;
            t.computed += 1;
        }
        Ok(())
    }

    fn pending(&self, m: Method, n: usize) -> bool {
        TreatmentStrategy::ALL.iter().any(|&s| !self.risk_path(m, n, s).exists())
    }

    pub fn estimate(&mut self) -> CliResult<()> {
        self.stage("estimate", |run, t| {
            for &n in &run.cfg.sample_sizes {
                for &m in &run.cfg.methods {
                    if !run.pending(m, n) {
                        t.skipped += TreatmentStrategy::ALL.len();
                        continue;
                    }
                    let pool = BaselinePool::from_cohort(&run.load_cohort(n)?)?;
                    match m {
                        Method::Parametric(spec) => {
                            let path = run.parametric_path(spec, n);
                            require(&path, "fit-parametric")?;
                            run.estimate_one(&ParametricModelSet::load(&path)?, m, n, &pool, t)?;
                        }
                        Method::Dl => {
                            let dir = run.dl_dir(n);
                            require(&dir, "fit-dl")?;
                            run.estimate_one(&DeepModelSet::load(&dir)?, m, n, &pool, t)?;
                        }
                    }
                }
            }
            Ok(())
        })
    }

    fn read_curve(path: &Path, producer: &str) -> CliResult<RiskCurve> {
        require(path, producer)?;
        Ok(read_risk_csv(path)?.0)
    }

    fn strategy_risks(&self, path: impl Fn(TreatmentStrategy) -> PathBuf, producer: &str) -> CliResult<StrategyRisks> {
        Ok(StrategyRisks {
            natural: Self::read_curve(&path(TreatmentStrategy::NaturalCourse), producer)?,
            always: Self::read_curve(&path(TreatmentStrategy::AlwaysTreat), producer)?,
            never: Self::read_curve(&path(TreatmentStrategy::NeverTreat), producer)?,
        })
    }

    /// Bias of every (method, n) against ground truth; always recomputed
    /// since it is cheap.
    pub fn evaluate(&mut self) -> CliResult<Vec<BiasReport>> {
        let mut reports = Vec::new();
        self.stage("evaluate", |run, t| {
            let truth = run.strategy_risks(|s| run.truth_path(s), "truth")?;
            for &n in &run.cfg.sample_sizes {
                for &m in &run.cfg.methods {
                    let est = run.strategy_risks(|s| run.risk_path(m, n, s), "estimate")?;
                    let meta = ReportMeta {
                        scenario: run.cfg.scenario_name().into(),
                        n,
                        method: m.label(),
                        simulation_seed: run.cfg.seeds.simulation,
                        training_seed: run.cfg.seeds.training,
                        monte_carlo_seed: run.cfg.seeds.monte_carlo,
                    };
                    reports.push(BiasReport::new(meta, est, truth.clone())?);
                }
            }
            write_json(&run.reports_path(), &reports)?;
            t.computed += 1;
            Ok(())
        })?;
        Ok(reports)
    }

    pub fn report(&mut self) -> CliResult<Vec<PathBuf>> {
        let mut files = Vec::new();
        self.stage("report", |run, t| {
            let path = run.reports_path();
            require(&path, "evaluate")?;
            let reports: Vec<BiasReport> = read_json(&path)?;
            files = render_report(&reports, &run.dir.join("report"), run.cfg.svg)?;
            t.computed += files.len();
            Ok(())
        })?;
        Ok(files)
    }

    pub fn run_all(&mut self) -> CliResult<Vec<BiasReport>> {
        self.simulate()?;
        self.truth()?;
        self.fit_parametric()?;
        if self.cfg.uses_dl() && self.cfg.network.search.is_some() {
            self.search_dl()?;
        }
        self.fit_dl()?;
        self.estimate()?;
        let reports = self.evaluate()?;
        self.report()?;
        Ok(reports)
    }
}

/// One line per report: method, n and the mean absolute biases.
pub fn summary_lines(reports: &[BiasReport]) -> Vec<String> {
    reports
        .iter()
        .map(|r| {
            format!(
                "{} n={} {}: natural {:.3} always {:.3} never {:.3} rd {:.3} rr {:.3}",
                r.meta.scenario,
                r.meta.n,
                r.meta.method,
                r.natural.mean_abs,
                r.always.mean_abs,
                r.never.mean_abs,
                r.effect.rd.mean_abs,
                r.effect.rr.mean_abs
            )
        })
        .collect()
}
