mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use fairbound::bounds::CovMode;
use fairbound::dataset::CsvSchema;
use fairbound::metrics::LossKind;

use config::{
    default_specs, CheckKind, CommandKind, ConfigFile, Format, RunConfig, ShiftInput, ThresholdGrid,
};
use output::OutDir;

const THREADS_ENV: &str = "FAIRBOUND_THREADS";

#[derive(Parser)]
#[command(
    name = "fairbound",
    version,
    about = "Group fairness audits and bound checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Input CSV with group, label, optional score and feature columns
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Experiment configuration (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, default_value = "fairbound-out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[arg(long = "cov-mode", global = true, value_parser = parse_cov_mode)]
    cov_mode: Option<CovMode>,
    #[arg(long, global = true, value_parser = parse_loss)]
    loss: Option<LossKind>,
    /// Saved linear model used to score records
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Loss upper bound
    #[arg(long = "M", global = true)]
    loss_bound: Option<f64>,
    /// Lipschitz constant
    #[arg(long = "L", global = true)]
    lipschitz: Option<f64>,
    /// Loss bound for the group expected-loss bounds
    #[arg(long = "B", global = true)]
    shift_scale: Option<f64>,
    #[arg(long, global = true)]
    dvc: Option<u64>,
    #[arg(long, global = true)]
    delta: Option<f64>,
    #[arg(long, global = true)]
    eps: Option<f64>,
    #[arg(long, global = true)]
    k: Option<u64>,
    #[arg(long = "group-col", global = true)]
    group_col: Option<String>,
    #[arg(long = "label-col", global = true)]
    label_col: Option<String>,
    #[arg(long = "score-col", global = true)]
    score_col: Option<String>,
    /// Comma-separated feature columns (default: f0, f1, ...)
    #[arg(long, global = true, value_delimiter = ',')]
    features: Option<Vec<String>>,
}

#[derive(Subcommand)]
enum Command {
    /// Per-group feature statistics, distance histograms and score metrics
    Stats,
    /// Full audit: metrics, shifts and every applicable bound
    Audit,
    /// Evaluate the closed-form bounds
    Bounds {
        /// Sample size for the VC-type bounds
        #[arg(long)]
        m: Option<u64>,
        /// Per-group sample size for the Hoeffding bound
        #[arg(long)]
        n: Option<u64>,
        #[arg(long = "min-r")]
        min_r: Option<f64>,
        #[arg(long = "mean-shift")]
        mean_shift: Option<f64>,
        #[arg(long = "sigma-diff")]
        sigma_diff: Option<f64>,
        #[arg(long = "cov-frob")]
        cov_frob: Option<f64>,
        /// One-dimensional moments `group_mean,group_std,overall_mean,overall_std`
        #[arg(long = "shift-stats", value_delimiter = ',')]
        shift_stats: Option<Vec<f64>>,
        /// Empirical fairness gap
        #[arg(long)]
        gap: Option<f64>,
        #[arg(long = "overall-loss")]
        overall_loss: Option<f64>,
        #[arg(long = "class-size")]
        class_size: Option<u64>,
    },
    /// Fair and supervised empirical risk minimization over score thresholds
    Erm {
        /// `lo,hi,count`
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
    },
    /// Draw a synthetic dataset and optionally run Monte Carlo bound checks
    Simulate {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, value_enum)]
        check: Vec<CheckKind>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long = "n-oracle")]
        n_oracle: Option<usize>,
        /// Exit with status 1 when a check fails
        #[arg(long)]
        assert: bool,
    },
    /// Convergence study of the empirical fairness-risk minimizer
    Converge {
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long = "n-oracle")]
        n_oracle: Option<usize>,
        #[arg(long = "m-values", value_delimiter = ',')]
        m_values: Option<Vec<u64>>,
    },
    /// Re-run from a manifest.json written by an earlier run
    Replay { manifest: PathBuf },
}

fn parse_cov_mode(s: &str) -> Result<CovMode, String> {
    s.parse().map_err(|e: fairbound::Error| e.to_string())
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    s.parse().map_err(|e: fairbound::Error| e.to_string())
}

fn resolve(cli: &Cli) -> anyhow::Result<RunConfig> {
    let c = &cli.common;
    let file = match &c.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let command = match &cli.command {
        Command::Stats => CommandKind::Stats,
        Command::Audit => CommandKind::Audit,
        Command::Bounds { .. } => CommandKind::Bounds,
        Command::Erm { .. } => CommandKind::Erm,
        Command::Simulate { .. } => CommandKind::Simulate,
        Command::Converge { .. } => CommandKind::Converge,
        Command::Replay { .. } => unreachable!("handled before resolution"),
    };
    let mut params = file.params;
    let mut exp = file.experiment;
    let specs = if file.specs.is_empty() {
        default_specs()
    } else {
        file.specs
    };
    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v;
            }
        };
    }
    set!(params.loss_bound, c.loss_bound);
    set!(params.lipschitz, c.lipschitz);
    set!(params.shift_scale, c.shift_scale);
    set!(params.d_vc, c.dvc);
    set!(params.delta, c.delta);
    set!(params.epsilon, c.eps);
    set!(params.k, c.k);
    set!(exp.seed, c.seed);
    set!(exp.cov_mode, c.cov_mode);
    set!(exp.loss, c.loss);
    match &cli.command {
        Command::Bounds {
            m,
            n,
            min_r,
            mean_shift,
            sigma_diff,
            cov_frob,
            shift_stats,
            gap,
            overall_loss,
            class_size,
        } => {
            set!(params.sample_size, m);
            set!(params.hoeffding_n, n);
            set!(params.min_r, min_r);
            set!(exp.gap, gap);
            set!(exp.overall_loss, overall_loss);
            set!(exp.class_size, class_size);
            if let Some(s) = shift_stats {
                if s.len() != 4 {
                    anyhow::bail!("--shift-stats takes four comma-separated numbers");
                }
                let m = fairbound::groupstats::shift_1d(s[0], s[1], s[2], s[3])?;
                exp.shift = Some(ShiftInput {
                    mean_shift: m.mean_shift,
                    sigma_diff: m.sigma_diff,
                    cov_shift_frob: Some(m.cov_shift_frob),
                });
            }
            if mean_shift.is_some() || sigma_diff.is_some() || cov_frob.is_some() {
                let base = exp.shift.unwrap_or(ShiftInput {
                    mean_shift: 0.0,
                    sigma_diff: 0.0,
                    cov_shift_frob: None,
                });
                exp.shift = Some(ShiftInput {
                    mean_shift: mean_shift.unwrap_or(base.mean_shift),
                    sigma_diff: sigma_diff.unwrap_or(base.sigma_diff),
                    cov_shift_frob: cov_frob.or(base.cov_shift_frob),
                });
            }
        }
        Command::Erm { thresholds } => {
            if let Some(t) = thresholds {
                if t.len() != 3 {
                    anyhow::bail!("--thresholds takes `lo,hi,count`");
                }
                if t[2] < 1.0 || t[2].fract() != 0.0 {
                    anyhow::bail!("threshold count must be a positive integer");
                }
                exp.thresholds = ThresholdGrid {
                    lo: t[0],
                    hi: t[1],
                    count: t[2] as usize,
                };
            }
            if c.loss.is_none() && c.config.is_none() {
                exp.loss = LossKind::ZeroOne;
            }
        }
        Command::Simulate {
            n,
            check,
            trials,
            n_oracle,
            assert,
        } => {
            set!(exp.n, n);
            exp.trials = trials.or(exp.trials);
            exp.n_oracle = n_oracle.or(exp.n_oracle);
            if !check.is_empty() {
                exp.checks = check.clone();
            }
            exp.assert |= assert;
        }
        Command::Converge {
            trials,
            n_oracle,
            m_values,
        } => {
            exp.trials = trials.or(exp.trials);
            exp.n_oracle = n_oracle.or(exp.n_oracle);
            set!(exp.m_values, m_values);
            if c.loss.is_none() && c.config.is_none() {
                exp.loss = LossKind::ZeroOne;
            }
        }
        _ => {}
    }
    exp.fill_defaults(command);
    let defaults = CsvSchema::default();
    let schema = CsvSchema {
        group: c.group_col.clone().unwrap_or(defaults.group),
        label: c.label_col.clone().unwrap_or(defaults.label),
        score: c.score_col.clone(),
        features: c.features.clone().unwrap_or_default(),
    };
    Ok(RunConfig {
        tool: "fairbound".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command,
        format: c.format.unwrap_or(Format::Both),
        input: c.input.clone(),
        model: c.model.clone(),
        schema,
        params,
        specs,
        experiment: exp,
    })
}

fn load_manifest(path: &Path) -> anyhow::Result<RunConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: RunConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing manifest {}", path.display()))?;
    if cfg.version != env!("CARGO_PKG_VERSION") {
        log::warn!(
            "manifest was written by version {}, this is {}",
            cfg.version,
            env!("CARGO_PKG_VERSION")
        );
    }
    Ok(cfg)
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .with_context(|| format!("{THREADS_ENV} must be a positive integer, got `{v}`"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn execute(cli: &Cli) -> anyhow::Result<bool> {
    configure_threads()?;
    let cfg = match &cli.command {
        Command::Replay { manifest } => load_manifest(manifest)?,
        _ => resolve(cli)?,
    };
    let mut out = OutDir::create(&cli.common.out)?;
    out.json("manifest.json", &cfg)?;
    let outcome = commands::run(&cfg, &mut out)?;
    for f in out.written() {
        log::info!("wrote {}", out.path(f).display());
    }
    Ok(outcome.violation)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("bound violation found");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
