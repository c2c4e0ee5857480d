use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cpbo_core::cost::{CostModel, Strategy};
use cpbo_core::experiment::{
    cost_study_configs, format_summary, gamma_sweep_configs, read_rows, run_all, run_once,
    summarize, write_results, GammaMode, RunConfig, RunResult, ScalePreset,
};
use cpbo_core::preference::OracleKind;
use cpbo_core::CpboError;

#[derive(Parser)]
#[command(name = "cpbo", version, about = "Consecutive preferential Bayesian optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single simulated optimization.
    Run {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Multi-run studies.
    #[command(subcommand)]
    Study(Study),
    /// Summarize an aggregate CSV.
    Report {
        csv: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum Study {
    /// Strategies under cost regimes at a fixed budget.
    Cost {
        #[command(flatten)]
        run: RunArgs,
        /// Regimes as `c_p:c_e`, comma separated.
        #[arg(long, default_value = "0:1,1:1,1:0", value_delimiter = ',')]
        regimes: Vec<String>,
        #[arg(long, default_value = "standard,consecutive,multiple5", value_delimiter = ',')]
        strategies: Vec<String>,
        #[arg(long = "study-budget", default_value_t = 30.0)]
        study_budget: f64,
        #[arg(long, default_value = "0..10")]
        seeds: String,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Sweep the true indifference threshold.
    Gamma {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "0,0.02,0.04,0.1", value_delimiter = ',')]
        gammas: Vec<f64>,
        #[arg(long, default_value = "0..10")]
        seeds: String,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Oracle {
    ThreeOutcome,
    BinaryTieBreak,
}

#[derive(Clone, Copy, ValueEnum)]
enum Gamma {
    Learnable,
    FrozenZero,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Full,
    Desk,
}

/// Overrides applied on top of `--config` (or the defaults).
#[derive(Args, Default)]
struct RunArgs {
    /// JSON run specification.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    benchmark: Option<String>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    c_p: Option<f64>,
    #[arg(long)]
    c_e: Option<f64>,
    /// Total produced candidates, initial design included.
    #[arg(long)]
    iterations: Option<usize>,
    /// Cost budget; replaces the iteration count unless both are given.
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    gamma_true: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, value_enum)]
    oracle: Option<Oracle>,
    #[arg(long)]
    n_init: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    gamma_mode: Option<Gamma>,
    #[arg(long, value_enum)]
    scale: Option<Scale>,
    #[arg(long)]
    lengthscale_prior: bool,
    #[arg(long)]
    metric_pairs: Option<usize>,
    /// Adam iterations per surrogate fit.
    #[arg(long)]
    training_iterations: Option<usize>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<CpboError> for Failure {
    fn from(e: CpboError) -> Self {
        let code = match e {
            CpboError::InvalidRunConfig(_) | CpboError::InvalidParameter(_) => 2,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

fn invalid(message: String) -> Failure {
    Failure { code: 2, message }
}

impl RunArgs {
    fn build(&self) -> Result<RunConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| invalid(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| invalid(format!("bad config: {e}")))?
            }
            None => RunConfig::default(),
        };
        if let Some(b) = &self.benchmark {
            cfg.benchmark = b.clone();
        }
        if let Some(s) = &self.strategy {
            cfg.strategy = s.parse::<Strategy>()?;
        }
        if let Some(v) = self.c_p {
            cfg.cost_model.c_p = v;
        }
        if let Some(v) = self.c_e {
            cfg.cost_model.c_e = v;
        }
        match (self.iterations, self.budget) {
            (Some(n), None) => {
                cfg.iterations = Some(n);
                cfg.budget = None;
            }
            (None, Some(b)) => {
                cfg.iterations = None;
                cfg.budget = Some(b);
            }
            (Some(n), Some(b)) => {
                cfg.iterations = Some(n);
                cfg.budget = Some(b);
            }
            (None, None) => {}
        }
        if let Some(v) = self.gamma_true {
            cfg.gamma_true = v;
        }
        if let Some(v) = self.sigma {
            cfg.sigma = v;
        }
        if let Some(o) = self.oracle {
            cfg.oracle_kind = match o {
                Oracle::ThreeOutcome => OracleKind::ThreeOutcome,
                Oracle::BinaryTieBreak => OracleKind::BinaryTieBreak,
            };
        }
        if let Some(v) = self.n_init {
            cfg.n_init = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(g) = self.gamma_mode {
            cfg.gamma_mode = match g {
                Gamma::Learnable => GammaMode::Learnable,
                Gamma::FrozenZero => GammaMode::FrozenZero,
            };
        }
        if let Some(s) = self.scale {
            cfg.scale_preset = match s {
                Scale::Full => ScalePreset::Full,
                Scale::Desk => ScalePreset::Desk,
            };
        }
        if self.lengthscale_prior {
            cfg.lengthscale_prior = true;
        }
        if let Some(v) = self.metric_pairs {
            cfg.metric_pairs = v;
        }
        if let Some(v) = self.training_iterations {
            cfg.training.iterations = v;
        }
        Ok(cfg)
    }
}

/// `a..b` (exclusive) or a comma list.
fn parse_seeds(s: &str) -> Result<Vec<u64>, Failure> {
    let bad = || invalid(format!("bad seed list {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if a >= b {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect()
}

fn parse_regime(s: &str) -> Result<CostModel, Failure> {
    let (p, e) = s.split_once(':').ok_or_else(|| invalid(format!("bad regime {s:?}, want c_p:c_e")))?;
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| invalid(format!("bad regime {s:?}")));
    Ok(CostModel::new(num(p)?, num(e)?))
}

fn validate_all(cfgs: &[RunConfig]) -> Result<(), Failure> {
    for c in cfgs {
        c.validate()?;
    }
    Ok(())
}

fn collect(results: Vec<cpbo_core::Result<RunResult>>, out: &Path) -> Result<(), Failure> {
    let mut ok = Vec::with_capacity(results.len());
    let mut first_err = None;
    for r in results {
        match r {
            Ok(r) => ok.push(r),
            Err(e) => {
                eprintln!("run failed: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    let csv = write_results(out, &ok)?;
    println!("wrote {} runs to {}", ok.len(), csv.display());
    match first_err {
        Some(e) => Err(Failure { code: 1, message: e.to_string() }),
        None => Ok(()),
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { run, out } => {
            let cfg = run.build()?;
            cfg.validate()?;
            let result = run_once(&cfg).map_err(|e| {
                if let CpboError::RunAborted { partial: Some(p), .. } = &e {
                    let _ = fs::create_dir_all(&out).and_then(|_| fs::write(out.join("partial.json"), p));
                }
                Failure { code: 1, message: e.to_string() }
            })?;
            if let Some(m) = &result.metrics {
                println!(
                    "simple_regret {:.4} inference_regret {:.4} ordinal {:.3} choice {:.3} gamma_hat {:.4}",
                    m.simple_regret,
                    m.inference_regret,
                    m.ordinal_accuracy,
                    m.choice_accuracy,
                    result.gamma_trajectory.last().copied().unwrap_or(0.0)
                );
            }
            collect(vec![Ok(result)], &out)
        }
        Command::Study(Study::Cost { run, regimes, strategies, study_budget, seeds, out }) => {
            let base = run.build()?;
            let regimes = regimes.iter().map(|r| parse_regime(r)).collect::<Result<Vec<_>, _>>()?;
            let strategies = strategies
                .iter()
                .map(|s| s.parse::<Strategy>().map_err(Failure::from))
                .collect::<Result<Vec<_>, _>>()?;
            let cfgs = cost_study_configs(&base, &regimes, &strategies, study_budget, &parse_seeds(&seeds)?)?;
            validate_all(&cfgs)?;
            collect(run_all(&cfgs), &out)
        }
        Command::Study(Study::Gamma { run, gammas, seeds, out }) => {
            let base = run.build()?;
            let cfgs = gamma_sweep_configs(&base, &gammas, &parse_seeds(&seeds)?)?;
            validate_all(&cfgs)?;
            collect(run_all(&cfgs), &out)
        }
        Command::Report { csv, json } => {
            let file = fs::File::open(&csv)
                .map_err(|e| Failure { code: 1, message: format!("cannot open {}: {e}", csv.display()) })?;
            let rows = summarize(&read_rows(file)?);
            if json {
                let text = serde_json::to_string_pretty(&rows)
                    .map_err(|e| Failure { code: 1, message: e.to_string() })?;
                println!("{text}");
            } else {
                print!("{}", format_summary(&rows));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
