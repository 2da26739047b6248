use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use gstar::checks::{run_configured, CheckReport};
use gstar::config::{RunConfig, SweepConfig};
use gstar::constants::equivalence_report;
use gstar::martingale::build_stopping_tree;
use gstar::measures::SampledFunction;
use gstar::sweep::{grid_stats, sweep, to_csv};

/// Two-weight constants and estimate checks for the fractional g*-lambda function.
#[derive(Debug, Parser)]
#[command(name = "gstar", version)]
struct Cli {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Write the report here instead of standard output.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Comma-separated check ids to run.
    #[arg(long, global = true, value_name = "IDS", value_delimiter = ',')]
    only: Option<Vec<String>>,

    /// Seed overriding every configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Write the stopping trees of the constants run as JSON.
    #[arg(long, global = true, value_name = "PATH")]
    dump_tree: Option<PathBuf>,

    /// Include wall-clock runtimes in check reports.
    #[arg(long, global = true)]
    timing: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// A2, testing, pivotal and operator-norm estimates for the configured pair.
    Constants,
    /// Run registered estimate checks.
    Check,
    /// Good-cube probability table as CSV.
    GridStats {
        #[arg(long, default_value_t = 2000)]
        samples: usize,
    },
    /// Constants over a (lambda, alpha, shift) grid as CSV.
    Sweep,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            std::fs::write(p, text).with_context(|| format!("cannot write `{}`", p.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json<T: serde::Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn constants(cli: &Cli, cfg: &RunConfig) -> Result<bool> {
    let pair = cfg.weight_pair()?;
    let cc = cfg.constants_config()?;
    let report = equivalence_report(&pair, &cc)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    emit(cli.out.as_deref(), &json(&report)?)?;
    if let Some(path) = &cli.dump_tree {
        let (lo, hi) = pair.bounding_box().context("the pair has no atoms")?;
        let f = SampledFunction::constant(&pair.sigma, 1.0);
        let mut trees = Vec::new();
        for root in cc.grid.top_cubes_covering(&lo, &hi)? {
            if pair.sigma.mass_on(&root)? == 0.0 {
                continue;
            }
            let tree = build_stopping_tree(
                &f,
                &pair.sigma,
                &pair.w,
                &root,
                &cc.grid,
                &cc.kernel,
                &cc.goodbad,
                cfg.stopping.c0,
                report.pivotal_sq.unwrap_or(f64::INFINITY),
            )?;
            if tree.truncated {
                log::warn!("stopping tree truncated at the grid's minimum scale");
            }
            trees.push(tree.record());
        }
        std::fs::write(path, json(&trees)?)
            .with_context(|| format!("cannot write `{}`", path.display()))?;
    }
    Ok(true)
}

fn check(cli: &Cli, cfg: &RunConfig) -> Result<bool> {
    let reports: Vec<CheckReport> = run_configured(cfg, cli.only.as_deref(), cli.seed, cli.timing)?;
    for r in &reports {
        if !r.pass {
            log::error!("{} failed: {}", r.id, r.failures.join("; "));
        }
    }
    emit(cli.out.as_deref(), &json(&reports)?)?;
    Ok(reports.iter().all(|r| r.pass))
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    let cfg = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Constants => constants(cli, &cfg),
        Command::Check => check(cli, &cfg),
        Command::GridStats { samples } => {
            let p = cfg.kernel.params()?;
            let template = cfg.grid.grid(p.n())?.template();
            let gb = cfg.grid.goodbad(&p)?;
            let rows = grid_stats(&template, &gb, *samples, cli.seed.unwrap_or(0))?;
            emit(cli.out.as_deref(), &to_csv(&rows)?)?;
            Ok(true)
        }
        Command::Sweep => {
            let pair = cfg.weight_pair()?;
            let sw = cfg.sweep.clone().unwrap_or_else(SweepConfig::default);
            let rows = sweep(&pair, &cfg, &sw)?;
            emit(cli.out.as_deref(), &to_csv(&rows)?)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            // Configuration, input and numerical errors alike.
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
