//! Batch driver for the reduced-order-model experiments.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 assimilation did not converge (outputs are still written).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use romfsm::experiment::{run_pipeline, ExperimentConfig, Method, PipelineOutcome, Scale, Stage};
use romfsm::Error;

#[derive(Parser, Debug)]
#[command(name = "romfsm", version, about = "POD-Galerkin reduced models with eddy-viscosity estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config file; `run` accepts several.
    #[arg(long, global = true, value_name = "PATH")]
    config: Vec<PathBuf>,

    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,

    /// Top-level seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, value_enum)]
    scale: Option<ScaleArg>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run (or load) the full-order model.
    Fom,
    /// Build the POD basis.
    Pod,
    /// Build the reduced model and integrate it without closure.
    Grom,
    /// Estimate the eddy viscosity from synthetic observations.
    Assimilate,
    /// Run the whole pipeline for one or more configs.
    Run {
        /// Concurrent experiments (default: available cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run the whole pipeline and print the error metrics.
    Metrics,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScaleArg {
    Paper,
    Desk,
}

fn exit_code_for(e: &Error) -> u8 {
    if e.is_config() {
        return 2;
    }
    match e.root() {
        Error::Io(_) | Error::Format(_) => 2,
        _ => 3,
    }
}

fn load(cli: &Cli, path: &Path, several: bool) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(s) = cli.scale {
        cfg.scale = match s {
            ScaleArg::Paper => Scale::Paper,
            ScaleArg::Desk => Scale::Desk,
        };
    }
    if let Some(out) = &cli.output {
        if cfg.cache_dir.is_none() {
            cfg.cache_dir = Some(out.join("cache"));
        }
        cfg.output_dir = if several {
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "experiment".into());
            out.join(stem)
        } else {
            out.clone()
        };
    }
    Ok(cfg)
}

fn describe(stage: Stage, out: &PipelineOutcome) -> String {
    let mut lines = Vec::new();
    for s in &out.stages {
        lines.push(format!("{}: {}", s.stage.name(), if s.cached { "cached" } else { "done" }));
    }
    if stage >= Stage::Assimilate {
        match &out.assimilation {
            Some(a) => lines.push(a.report()),
            None => lines.push("assimilation: skipped (no observation times)".into()),
        }
    }
    if let Some(r) = &out.report {
        lines.push(r.summary());
        if stage == Stage::Metrics {
            lines.push(rmse_table(r));
        }
    }
    lines.push(format!("outputs: {}", out.resolved.output_dir.display()));
    lines.join("\n")
}

fn rmse_table(r: &romfsm::experiment::MetricsReport) -> String {
    let methods: Vec<Method> = r.series.iter().map(|s| s.method).collect();
    let mut s = format!("{:>10}", "time");
    for m in &methods {
        s += &format!("  {:>12}", m.label());
    }
    let Some(tp) = r.series(Method::Tp) else { return s };
    let step = (tp.points.len() / 20).max(1);
    let mut rows: Vec<f64> = tp.points.iter().step_by(step).map(|p| p.0).collect();
    if let Some(last) = tp.points.last() {
        if rows.last() != Some(&last.0) {
            rows.push(last.0);
        }
    }
    for t in rows {
        s += &format!("\n{t:>10.4}");
        for m in &methods {
            match r.rmse_at(*m, t) {
                Some(v) => s += &format!("  {v:>12.5e}"),
                None => s += &format!("  {:>12}", "diverged"),
            }
        }
    }
    s
}

/// Config errors outrank numerical failures, which outrank non-convergence.
fn severity(code: u8) -> u8 {
    match code {
        0 => 0,
        4 => 1,
        3 => 2,
        _ => 3,
    }
}

fn run_one(cli: &Cli, path: &Path, stage: Stage, several: bool) -> (u8, String) {
    let result = load(cli, path, several).and_then(|cfg| run_pipeline(&cfg, stage));
    match result {
        Ok(out) => (out.exit_code() as u8, describe(stage, &out)),
        Err(e) => (exit_code_for(&e), format!("error: {e}")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.config.is_empty() {
        eprintln!("error: --config <PATH> is required");
        return ExitCode::from(2);
    }
    let (stage, jobs) = match &cli.command {
        Command::Fom => (Stage::Fom, 1),
        Command::Pod => (Stage::Pod, 1),
        Command::Grom => (Stage::Grom, 1),
        Command::Assimilate => (Stage::Assimilate, 1),
        Command::Metrics => (Stage::Metrics, 1),
        Command::Run { jobs } => {
            (Stage::Metrics, jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
        }
    };
    if !matches!(cli.command, Command::Run { .. }) && cli.config.len() > 1 {
        eprintln!("error: only `run` accepts several configs");
        return ExitCode::from(2);
    }
    let several = cli.config.len() > 1;
    let jobs = jobs.clamp(1, cli.config.len());

    let mut results: Vec<Option<(u8, String)>> = vec![None; cli.config.len()];
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots = std::sync::Mutex::new(&mut results);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= cli.config.len() {
                    break;
                }
                let r = run_one(&cli, &cli.config[i], stage, several);
                slots.lock().expect("result lock")[i] = Some(r);
            });
        }
    });

    let mut code = 0;
    for (path, r) in cli.config.iter().zip(results) {
        let (c, text) = r.expect("every config ran");
        if several {
            println!("== {}", path.display());
        }
        if c == 0 || c == 4 {
            println!("{text}");
        } else {
            eprintln!("{}: {text}", path.display());
        }
        if severity(c) > severity(code) {
            code = c;
        }
    }
    ExitCode::from(code)
}
