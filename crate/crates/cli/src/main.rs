use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Parser;
use dynwalk_cli::{constants_summary, parse_config, run_experiment, write_manifest, write_report, RunManifest, KINDS};

/// Random walks in a dynamic random environment: simulation, exact
/// enumeration and statistical checks.
#[derive(Debug, Parser)]
#[command(name = "dynwalk", version)]
struct Args {
    /// Experiment kind.
    #[arg(value_parser = clap::builder::PossibleValuesParser::new(KINDS))]
    kind: String,
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
}

fn run(args: &Args) -> Result<bool> {
    let cfg = parse_config(&args.config, &args.kind)?;
    if let Some(t) = args.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("building the thread pool")?;
    }
    let seed = args.seed.unwrap_or(cfg.raw.seed);
    eprintln!("{}", constants_summary(&cfg));
    let started = Instant::now();
    let report = run_experiment(&cfg, seed);
    let mut manifest = RunManifest::new(&report, &cfg.source, seed, rayon::current_num_threads(), started.elapsed().as_secs_f64());
    manifest.files = write_report(&report, &args.out)?;
    manifest.files.push("manifest.json".into());
    write_manifest(&manifest, &args.out)?;
    for c in &report.checks {
        eprintln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(e) = &report.error {
        eprintln!("error: {e}");
    }
    eprintln!("{} written to {}", manifest.files.join(", "), args.out.display());
    Ok(report.passed)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
