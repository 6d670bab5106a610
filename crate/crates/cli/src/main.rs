//! `rqe`: runs the solver experiments from a TOML config and writes CSV
//! trajectories, summaries and a reproducible manifest.
//!
//! Exit status: 0 on success, 1 for configuration or input errors, 2 when an
//! experiment fails at runtime (partial outputs are kept next to a `FAILED`
//! marker).

mod config;
mod output;
mod run;
mod summarize;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use config::{ConfigError, ExperimentConfig, Kind, Provenance};
use output::{prepare_out_dir, write_failed, MANIFEST};

#[derive(Parser)]
#[command(name = "rqe", version, about = "Risk-averse quantal response equilibrium experiments")]
struct Cli {
    /// Worker threads for seed-level parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monotonicity certificate for the configured profile and game.
    Certify(RunArgs),
    /// Solver trajectories on a normal-form game across τ, plus the
    /// risk-neutral baseline.
    NormalFormDynamics(RunArgs),
    /// Value iteration on a Markov game.
    ValueIteration(RunArgs),
    /// Deterministic two-timescale actor/critic iteration.
    TwoTimescale(RunArgs),
    /// Sample-based multi-agent actor-critic.
    Maac(RunArgs),
    /// Empirical Lipschitz constant of the equilibrium under payoff noise.
    LipschitzProbe(RunArgs),
    /// Final values, moving-window means and cross-file median/IQR of one
    /// column of trajectory CSVs.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; every key has a default.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's `out_dir`).
    #[arg(long, env = "RQE_OUT_DIR")]
    out: Option<PathBuf>,
    /// Comma-separated seeds (overrides the config's `seeds`).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Trajectory CSV files, one per seed.
    #[arg(required = true)]
    files: Vec<PathBuf>,
    /// Column to summarize (default: the last column).
    #[arg(long)]
    column: Option<String>,
    /// Moving-average window for the final-window mean.
    #[arg(long, default_value_t = config::default_window())]
    window: usize,
    /// Write summary.csv (and plot.gp with --plot) here instead of printing.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a gnuplot script.
    #[arg(long, requires = "out")]
    plot: bool,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Certify(a) => experiment(Kind::Certify, a),
        Command::NormalFormDynamics(a) => experiment(Kind::NormalFormDynamics, a),
        Command::ValueIteration(a) => experiment(Kind::ValueIteration, a),
        Command::TwoTimescale(a) => experiment(Kind::TwoTimescale, a),
        Command::Maac(a) => experiment(Kind::Maac, a),
        Command::LipschitzProbe(a) => experiment(Kind::LipschitzProbe, a),
        Command::Summarize(a) => summarize_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("runtime error: {m}");
            ExitCode::from(2)
        }
    }
}

fn resolve(kind: Kind, args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::parse("", None)?,
    };
    if let Some(k) = cfg.kind {
        if k != kind {
            return Err(Failure::Config(format!(
                "config is for `{}` but the `{}` subcommand was used",
                k.name(),
                kind.name()
            )));
        }
    }
    cfg.kind = Some(kind);
    if let Some(seeds) = &args.seeds {
        cfg.seeds = seeds.clone();
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    let source = args.config.as_deref();
    cfg.validate().map_err(|(table, key, message)| {
        let line =
            source.and_then(|p| std::fs::read_to_string(p).ok()).and_then(|src| config::locate(&src, table, key));
        Failure::from(ConfigError { path: source.map(Path::to_path_buf), line, message })
    })?;
    cfg.provenance = Some(Provenance { tool: "rqe".into(), library_version: env!("CARGO_PKG_VERSION").into() });
    Ok(cfg)
}

fn experiment(kind: Kind, args: RunArgs) -> Result<(), Failure> {
    let cfg = resolve(kind, &args)?;
    let out = cfg.out_dir.clone();
    prepare_out_dir(&out).map_err(|e| Failure::Runtime(format!("{e:#}")))?;
    std::fs::write(out.join(MANIFEST), cfg.to_toml())
        .map_err(|e| Failure::Runtime(format!("cannot write manifest: {e}")))?;

    let results: Vec<(u64, anyhow::Result<Vec<run::RunRecord>>)> =
        cfg.seeds.par_iter().map(|&seed| (seed, run::run_seed(kind, &cfg, seed, &out))).collect();
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(mut recs) => records.append(&mut recs),
            Err(e) => errors.push(format!("seed {seed}: {e:#}")),
        }
    }
    let summary = run::write_summaries(&records, &out);
    if let Err(e) = summary {
        errors.push(format!("summary: {e:#}"));
    }
    if !errors.is_empty() {
        let message = errors.join("\n");
        write_failed(&out, &message);
        return Err(Failure::Runtime(message));
    }
    eprintln!("{} run(s) written to {}", records.len(), out.display());
    Ok(())
}

fn summarize_cmd(args: SummarizeArgs) -> Result<(), Failure> {
    let summary = summarize::summarize(&args.files, args.column.as_deref(), args.window).map_err(Failure::Config)?;
    let csv = summary.to_csv();
    match &args.out {
        None => print!("{csv}"),
        Some(dir) => {
            let io = |e: std::io::Error| Failure::Runtime(format!("{}: {e}", dir.display()));
            std::fs::create_dir_all(dir).map_err(io)?;
            std::fs::write(dir.join("summary.csv"), &csv).map_err(io)?;
            if args.plot {
                std::fs::write(dir.join("plot.gp"), summary.gnuplot("plot.png")).map_err(io)?;
            }
        }
    }
    if let Some(f) = summary.files.iter().find(|f| f.window_clipped) {
        eprintln!(
            "note: {} has {} rows, fewer than the window of {}; its window mean uses all rows",
            f.path.display(),
            f.rows,
            summary.window
        );
    }
    Ok(())
}
