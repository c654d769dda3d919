use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use dlnice_cli::pipeline::summary_lines;
use dlnice_cli::{CliError, CliResult, ExperimentConfig, Run};

#[derive(Parser)]
#[command(name = "dlnice", version, about = "g-formula experiments with parametric and recurrent-network models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Replace an existing run directory that holds a different config.
    #[arg(long, global = true)]
    force: bool,
    #[command(flatten)]
    fields: ConfigArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate observational cohorts for each sample size.
    Simulate,
    /// Ground-truth risk curves under each strategy.
    Truth,
    /// Fit the pooled parametric model sets.
    FitParametric,
    /// Train the covariate and outcome networks.
    FitDl,
    /// Random hyperparameter search for the networks.
    SearchDl,
    /// Monte Carlo risk curves for every method and strategy.
    Estimate,
    /// Bias against ground truth.
    Evaluate,
    /// Tables and figure data from the evaluation.
    Report,
    /// The whole pipeline.
    Run,
    /// Print the materialized config and its hash.
    Config,
}

/// Overrides of config fields; without `--config` the required ones must
/// all be given.
#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    name: Option<String>,
    /// simple or complex.
    #[arg(long, global = true)]
    scenario: Option<String>,
    #[arg(long, global = true)]
    include_u: Option<bool>,
    /// Comma-separated, e.g. 1000,10000.
    #[arg(long, global = true, value_delimiter = ',')]
    sample_sizes: Option<Vec<usize>>,
    #[arg(long, global = true)]
    horizon: Option<usize>,
    #[arg(long, global = true)]
    seed_simulation: Option<u64>,
    #[arg(long, global = true)]
    seed_training: Option<u64>,
    #[arg(long, global = true)]
    seed_monte_carlo: Option<u64>,
    #[arg(long, global = true)]
    seed_truth: Option<u64>,
    #[arg(long, global = true)]
    truth_n: Option<usize>,
    /// Comma-separated: parametric:dgp_matched, parametric:lag1,
    /// parametric:lag_cumavg, dl.
    #[arg(long, global = true, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, global = true)]
    mc_samples: Option<usize>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Also write SVG line charts.
    #[arg(long, global = true)]
    svg: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> CliResult<ExperimentConfig> {
        let mut v = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::config(format!("config: {e}")))?
            }
            None => json!({}),
        };
        let obj = v.as_object_mut().ok_or_else(|| CliError::config("config: expected a JSON object"))?;
        let mut set = |k: &str, val: Value| {
            obj.insert(k.to_string(), val);
        };
        if let Some(x) = &self.name {
            set("name", json!(x));
        }
        if let Some(x) = &self.scenario {
            set("scenario", json!(x));
        }
        if let Some(x) = self.include_u {
            set("include_u", json!(x));
        }
        if let Some(x) = &self.sample_sizes {
            set("sample_sizes", json!(x));
        }
        if let Some(x) = self.horizon {
            set("horizon", json!(x));
        }
        if let Some(x) = self.truth_n {
            set("truth_n", json!(x));
        }
        if let Some(x) = &self.methods {
            set("methods", json!(x));
        }
        if let Some(x) = self.mc_samples {
            set("mc_samples", json!(x));
        }
        if let Some(x) = &self.output_dir {
            set("output_dir", json!(x));
        }
        if self.svg {
            set("svg", json!(true));
        }
        let seeds = [
            ("simulation", self.seed_simulation),
            ("training", self.seed_training),
            ("monte_carlo", self.seed_monte_carlo),
            ("truth", self.seed_truth),
        ];
        if seeds.iter().any(|(_, s)| s.is_some()) {
            let entry = obj.entry("seeds").or_insert_with(|| json!({}));
            let seeds_obj = entry.as_object_mut().ok_or_else(|| CliError::config("seeds: expected an object"))?;
            for (k, s) in seeds {
                if let Some(s) = s {
                    seeds_obj.insert(k.to_string(), json!(s));
                }
            }
        }
        ExperimentConfig::from_value(v)
    }
}

fn execute(cli: &Cli) -> CliResult<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::config("threads: must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    let cfg = cli.fields.resolve()?;
    if let Command::Config = cli.command {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        println!("hash {}", cfg.hash());
        return Ok(());
    }
    let mut run = Run::open(cfg, cli.force)?;
    let stage = match cli.command {
        Command::Simulate => run.simulate().map(|_| "simulate"),
        Command::Truth => run.truth().map(|_| "truth"),
        Command::FitParametric => run.fit_parametric().map(|_| "fit-parametric"),
        Command::FitDl => run.fit_dl().map(|_| "fit-dl"),
        Command::SearchDl => run.search_dl().map(|_| "search-dl"),
        Command::Estimate => run.estimate().map(|_| "estimate"),
        Command::Evaluate => {
            for line in summary_lines(&run.evaluate()?) {
                println!("{line}");
            }
            Ok("evaluate")
        }
        Command::Report => {
            for f in run.report()? {
                println!("{}", f.display());
            }
            Ok("report")
        }
        Command::Run => {
            for line in summary_lines(&run.run_all()?) {
                println!("{line}");
            }
            Ok("run")
        }
        Command::Config => unreachable!(),
    }?;
    if let Some(r) = run.manifest.stages.get(stage) {
        eprintln!("{stage}: {} computed, {} reused, {:.1} s", r.computed, r.skipped, r.seconds);
    }
    eprintln!("run directory {} (config hash {})", run.dir.display(), run.manifest.config_hash);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.machine_line());
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
