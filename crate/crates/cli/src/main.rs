//! `phonon <experiment> --config <file> [--out <dir>] [--seed <n>]`
//!
//! Exit codes: 0 success, 1 an embedded acceptance check failed, 2 config
//! error, 3 numerical (or I/O) failure. `PHONON_THREADS` caps the worker
//! count.

mod config;
mod experiments;
mod output;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde_json::Value;

use config::{Config, ConfigError};
use experiments::{Ctx, Experiment};
use output::{write_manifest, Artifacts, FailureRecord, Manifest};
use setup::Failure;

#[derive(Debug, Parser)]
#[command(name = "phonon", version, about = "Phonon Boltzmann equation experiments")]
struct Args {
    experiment: Experiment,
    /// Flat `section.key = value` file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: `run.out_dir`, else `phonon-out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for every random stream (default: `run.seed`, else 42).
    #[arg(long)]
    seed: Option<u64>,
}

const DEFAULT_SEED: u64 = 42;

fn configure_threads() -> Result<(), ConfigError> {
    let Ok(raw) = std::env::var("PHONON_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| ConfigError::invalid("PHONON_THREADS", format!("expected a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| ConfigError::invalid("PHONON_THREADS", e.to_string()))
}

fn failure_record(f: &Failure) -> (i32, &'static str, FailureRecord) {
    let (code, status, kind, key) = match f {
        Failure::Config(e) => (2, "config_error", "config", e.key().map(str::to_string)),
        Failure::Numerical(_) => (3, "numerical_failure", "numerical", None),
        Failure::Io(_) => (3, "io_failure", "io", None),
    };
    let message = match f {
        Failure::Config(e) => e.to_string(),
        Failure::Numerical(e) => e.to_string(),
        Failure::Io(e) => e.to_string(),
    };
    (
        code,
        status,
        FailureRecord {
            kind: kind.to_string(),
            message,
            key,
        },
    )
}

/// Settings resolved before the experiment runs.
struct Prepared {
    cfg: Config,
    seed: u64,
    out_dir: PathBuf,
}

fn prepare(args: &Args) -> (Result<Prepared, ConfigError>, PathBuf, u64) {
    let fallback_dir = args.out.clone().unwrap_or_else(|| PathBuf::from("phonon-out"));
    let fallback_seed = args.seed.unwrap_or(DEFAULT_SEED);
    let result = (|| {
        let cfg = Config::load(&args.config)?;
        let seed = match args.seed {
            Some(s) => {
                // still mark the key as read so it is not reported as unknown
                let _: Option<u64> = cfg.get("run.seed")?;
                s
            }
            None => cfg.get_or("run.seed", DEFAULT_SEED)?,
        };
        let configured_dir: Option<String> = cfg.get("run.out_dir")?;
        let out_dir = args
            .out
            .clone()
            .or(configured_dir.map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("phonon-out"));
        configure_threads()?;
        Ok(Prepared { cfg, seed, out_dir })
    })();
    let (dir, seed) = match &result {
        Ok(p) => (p.out_dir.clone(), p.seed),
        Err(_) => (fallback_dir, fallback_seed),
    };
    (result, dir, seed)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let name = args.experiment.name();
    let (prepared, out_dir, seed) = prepare(&args);

    let mut config_snapshot = Default::default();
    let mut files = Vec::new();
    let mut checks = Vec::new();
    let mut summary = Value::Null;
    let failure = match prepared {
        Err(e) => Some(Failure::Config(e)),
        Ok(p) => {
            config_snapshot = p.cfg.snapshot();
            match Artifacts::new(&p.out_dir) {
                Err(e) => Some(Failure::Config(ConfigError::invalid("output_dir", e.to_string()))),
                Ok(out) => {
                    let mut ctx = Ctx {
                        cfg: &p.cfg,
                        seed: p.seed,
                        seed_from_cli: args.seed.is_some(),
                        out,
                        checks: Vec::new(),
                        summary: Value::Null,
                    };
                    let result = experiments::run(args.experiment, &mut ctx);
                    files = ctx.out.files().to_vec();
                    checks = ctx.checks;
                    summary = ctx.summary;
                    result.err()
                }
            }
        }
    };

    let (code, status, record) = match &failure {
        Some(f) => {
            let (code, status, record) = failure_record(f);
            (code, status, Some(record))
        }
        None if checks.iter().any(|c| !c.passed) => (1, "acceptance_failure", None),
        None => (0, "ok", None),
    };
    for c in &checks {
        println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(r) = &record {
        match &r.key {
            Some(k) => eprintln!("error ({}): {k}: {}", r.kind, r.message),
            None => eprintln!("error ({}): {}", r.kind, r.message),
        }
    }
    let manifest = Manifest {
        experiment: name,
        seed,
        status,
        exit_code: code,
        config: config_snapshot,
        files,
        checks,
        failure: record,
        summary,
    };
    if let Err(e) = write_manifest(&out_dir, &manifest) {
        eprintln!("error: cannot write manifest to {}: {e}", out_dir.display());
        return ExitCode::from(if code == 0 { 3 } else { code as u8 });
    }
    println!("{status}: manifest written to {}", out_dir.join("manifest.json").display());
    ExitCode::from(code as u8)
}
