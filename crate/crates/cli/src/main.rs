use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use safe_aci::barrier::verify_construction;
use safe_aci::config::ExperimentConfig;
use safe_aci::experiment::{self, format_table, RunManifest, MANIFEST_FILE};
use safe_aci::Error;

/// Safe actor-critic-identifier experiments on a two-link manipulator.
///
/// Keys can also be set through environment variables named
/// `SAFE_ACI_<SECTION>__<KEY>`, e.g. `SAFE_ACI_LEARNER__ETA_C=2`.
/// Precedence: defaults < --config < environment < --set < --seed/--decimate.
#[derive(Parser, Debug)]
#[command(name = "safe-aci", version)]
struct Cli {
    /// Configuration file (`key = value` lines) or a run manifest.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set safety.lambda=50`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Keep every N-th integration step in the CSV.
    #[arg(long, global = true)]
    decimate: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One episode; writes trajectory.csv and manifest.json.
    Run,
    /// Safe and baseline runs from the same initial condition.
    Compare {
        /// Run the comparison over this many seeds instead of one.
        #[arg(long)]
        sweep: Option<u64>,
    },
    /// Sampled pre-flight checks of the barrier and the safety certificate.
    Verify,
    /// Comparison over consecutive seeds, in parallel.
    Sweep {
        /// Number of seeds; defaults to `sweep.seeds`.
        #[arg(long)]
        seeds: Option<u64>,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_VIOLATION: u8 = 3;
const EXIT_NUMERIC: u8 = 4;
const EXIT_CONSTRUCTION: u8 = 5;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => EXIT_CONFIG,
        Error::OutsideSafeSet { .. } => EXIT_VIOLATION,
        Error::NonFinite { .. }
        | Error::CovarianceNotPositiveDefinite { .. }
        | Error::ProjectionEscaped { .. }
        | Error::SingularMassMatrix { .. }
        | Error::DegenerateKernel { .. } => EXIT_NUMERIC,
        _ => 1,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) if p.extension().is_some_and(|e| e == "json") => RunManifest::load(p)?.resolved_config()?,
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_env(std::env::vars())?;
    for pair in &cli.overrides {
        cfg.apply_override(pair)?;
    }
    if let Some(seed) = cli.seed {
        cfg.episode.seed = seed;
    }
    if let Some(d) = cli.decimate {
        if d == 0 {
            return Err(Error::Config {
                key: "episode.decimate".into(),
                message: "must be >= 1".into(),
            });
        }
        cfg.episode.decimate = d;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(cfg: &ExperimentConfig, out: &Path) -> Result<u8, Error> {
    let res = experiment::run_to_dir(cfg, out)?;
    let v = &res.manifest.violation;
    println!("wrote {}", out.join(MANIFEST_FILE).display());
    println!(
        "steps={} max_Bf={:.6} max_excursion={:.6} max_xtilde={:.6}",
        v.steps, v.max_bf, v.max_excursion, v.max_xtilde_norm
    );
    if v.violated {
        println!(
            "violation: coordinate {} left the safe set at t = {}",
            v.index.unwrap_or(0),
            v.first_violation_t.unwrap_or(f64::NAN)
        );
        return Ok(EXIT_VIOLATION);
    }
    if !v.within_ceiling {
        println!("norm ceiling exceeded");
        return Ok(EXIT_NUMERIC);
    }
    Ok(0)
}

fn cmd_compare(cfg: &ExperimentConfig, out: &Path, jobs: usize, sweep: Option<u64>) -> Result<u8, Error> {
    let rows = match sweep {
        Some(count) => experiment::sweep(cfg, cfg.episode.seed, count, jobs, Some(out))?,
        None => {
            let report = experiment::compare_to_dir(cfg, out)?;
            let rows = vec![experiment::ComparisonRow::from(&report)];
            experiment::write_summary(&out.join("summary.csv"), &rows)?;
            rows
        }
    };
    print!("{}", format_table(&rows));
    let contrast = rows.iter().filter(|r| r.contrast).count();
    println!("contrast seeds: {contrast}/{}", rows.len());
    Ok(0)
}

fn cmd_verify(cfg: &ExperimentConfig) -> Result<u8, Error> {
    let barrier = cfg.barrier()?;
    let report = verify_construction(&barrier, cfg.construction_samples, cfg.verify_seed)?;
    println!(
        "gamma check: {} (gamma = {}, worst B/|grad B| = {:.6}, {} samples)",
        if report.holds { "holds" } else { "FAILS" },
        cfg.barrier_gamma,
        report.worst_ratio,
        report.samples
    );
    let e = experiment::build(cfg)?;
    let cert = experiment::certificate_summary(cfg, &e);
    match (cert.b_bar_d, cert.bound) {
        (Some(b), Some(bound)) => {
            println!("B_bar_d = {b:.6e}");
            println!("barrier bound max(B(x0), gamma B_bar_d) = {bound:.6e}");
        }
        _ => println!(
            "certificate unavailable ({}): {}",
            cert.status,
            cert.message.as_deref().unwrap_or("")
        ),
    }
    Ok(if report.holds { 0 } else { EXIT_CONSTRUCTION })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = load_config(&cli).and_then(|cfg| match &cli.command {
        Command::Run => cmd_run(&cfg, &cli.out),
        Command::Compare { sweep } => cmd_compare(&cfg, &cli.out, cli.jobs, *sweep),
        Command::Verify => cmd_verify(&cfg),
        Command::Sweep { seeds } => cmd_compare(&cfg, &cli.out, cli.jobs, Some(seeds.unwrap_or(cfg.sweep_seeds))),
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
