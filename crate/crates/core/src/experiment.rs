//! Experiment assembly from configuration, CSV export, run manifests, and
//! the parallel seed sweep.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barrier::BarrierLyapunov;
use crate::config::ExperimentConfig;
use crate::dynamics::ControlAffine;
use crate::error::{Error, Result};
use crate::harness::{
    compare_runs, compute_certificate, run_episode, Bundle, ClosedLoop, ComparisonReport, ControllerMode, DriftSource,
    EpisodeConfig, RunStatus, TrajectoryLog,
};
use crate::value_approx::SigmoidBasis;

pub const CSV_FILE: &str = "trajectory.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SNAPSHOT_FILE: &str = "config.resolved.toml";

/// A closed loop and its initial condition, ready to integrate.
#[derive(Clone)]
pub struct Experiment {
    pub system: ClosedLoop,
    pub episode: EpisodeConfig,
    pub init: Bundle,
}

/// Builds the closed loop for `cfg`. One generator seeded with
/// `episode.seed` draws the critic features first, then the initial weights.
pub fn build(cfg: &ExperimentConfig) -> Result<Experiment> {
    cfg.validate()?;
    let plant = cfg.manipulator()?;
    let n = plant.state_dim();
    let m = plant.input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.episode.seed);
    let basis = SigmoidBasis::random(n, cfg.critic_p, cfg.critic_inner_scale, &mut rng)?;
    let system = ClosedLoop {
        plant: Arc::new(plant),
        barrier: Arc::new(cfg.barrier()?),
        cost: cfg.cost(m)?,
        basis: Arc::new(basis),
        learner: cfg.learner_gains(),
        identifier: cfg.identifier_gains(n),
        lambda: cfg.lambda,
        mode: cfg.episode.mode,
        drift_source: DriftSource::Identifier,
        excitation: cfg.excitation,
        hidden: cfg.id_l,
    };
    system.validate()?;
    let ep = &cfg.episode;
    let init = system.initial_bundle(
        &DVector::from_column_slice(&ep.x0),
        &ep.initial_estimate(),
        ep.gamma0,
        ep.weight_init_range,
        &mut rng,
    )?;
    Ok(Experiment {
        system,
        episode: cfg.episode.clone(),
        init,
    })
}

pub fn run(cfg: &ExperimentConfig) -> Result<TrajectoryLog> {
    let e = build(cfg)?;
    run_episode(&e.system, &e.episode, e.init)
}

pub fn csv_header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|i| format!("x{i}")));
    h.extend((1..=n).map(|i| format!("xhat{i}")));
    h.extend((1..=m).map(|i| format!("u{i}")));
    for s in [
        "delta_hjb",
        "Bf",
        "xtilde_norm",
        "Wc_norm",
        "Wa_norm",
        "gamma_min",
        "gamma_max",
        "safe",
    ] {
        h.push(s.to_string());
    }
    h
}

pub fn write_csv_to<W: Write>(w: W, log: &TrajectoryLog) -> Result<()> {
    let (n, m) = log.records.first().map_or((0, 0), |r| (r.x.len(), r.u.len()));
    let mut out = csv::Writer::from_writer(w);
    out.write_record(csv_header(n, m))?;
    for r in &log.records {
        let mut row: Vec<String> = Vec::with_capacity(2 * n + m + 9);
        row.push(r.t.to_string());
        row.extend(r.x.iter().map(f64::to_string));
        row.extend(r.x_hat.iter().map(f64::to_string));
        row.extend(r.u.iter().map(f64::to_string));
        for v in [
            r.delta,
            r.bf,
            r.xtilde_norm,
            r.wc_norm,
            r.wa_norm,
            r.gamma_min,
            r.gamma_max,
        ] {
            row.push(v.to_string());
        }
        row.push(u8::from(r.safe).to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_csv(path: &Path, log: &TrajectoryLog) -> Result<()> {
    let mut buf = Vec::new();
    write_csv_to(&mut buf, log)?;
    write_atomic(path, &buf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationSummary {
    pub violated: bool,
    pub first_violation_t: Option<f64>,
    pub index: Option<usize>,
    pub steps: usize,
    pub max_bf: f64,
    pub max_excursion: f64,
    pub max_x_norm: f64,
    pub max_xtilde_norm: f64,
    pub max_wc_norm: f64,
    pub max_wa_norm: f64,
    pub max_wf_norm: f64,
    pub max_vf_norm: f64,
    pub min_gamma_eig: f64,
    pub gamma_resets: usize,
    pub projection_rescales: usize,
    /// Every tracked norm is finite and below `monitor.norm_ceiling`.
    pub within_ceiling: bool,
}

impl ViolationSummary {
    pub fn from_log(log: &TrajectoryLog, ceiling: f64) -> Self {
        let s = &log.summary;
        let (violated, first_violation_t, index) = match log.status {
            RunStatus::Completed => (false, None, None),
            RunStatus::Violated { t, index } => (true, Some(t), Some(index)),
        };
        let norms = [
            s.max_x_norm,
            s.max_xtilde_norm,
            s.max_wc_norm,
            s.max_wa_norm,
            s.max_wf_norm,
            s.max_vf_norm,
        ];
        Self {
            violated,
            first_violation_t,
            index,
            steps: s.steps,
            max_bf: s.max_bf,
            max_excursion: s.max_excursion,
            max_x_norm: s.max_x_norm,
            max_xtilde_norm: s.max_xtilde_norm,
            max_wc_norm: s.max_wc_norm,
            max_wa_norm: s.max_wa_norm,
            max_wf_norm: s.max_wf_norm,
            max_vf_norm: s.max_vf_norm,
            min_gamma_eig: s.min_gamma_eig,
            gamma_resets: s.gamma_resets,
            projection_rescales: s.projection_rescales,
            within_ceiling: norms.iter().all(|v| v.is_finite() && *v < ceiling),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub status: String,
    pub b_bar_d: Option<f64>,
    pub bound: Option<f64>,
    pub rg_min: Option<f64>,
    pub samples: usize,
    pub message: Option<String>,
}

/// Certificate for the configured plant, or the reason it is unavailable.
pub fn certificate_summary(cfg: &ExperimentConfig, e: &Experiment) -> CertificateSummary {
    let samples = cfg.certificate_samples;
    let res = compute_certificate(
        e.system.barrier.as_ref(),
        e.system.plant.as_ref(),
        &e.system.cost,
        e.system.basis.as_ref(),
        cfg.resolved_w_bar(),
        cfg.lambda,
        &e.init.x,
        samples,
        cfg.verify_seed,
    );
    match res {
        Ok(c) => CertificateSummary {
            status: "ok".into(),
            b_bar_d: Some(c.b_bar_d),
            bound: Some(c.bound),
            rg_min: Some(c.rg_min),
            samples,
            message: None,
        },
        Err(Error::DegenerateKernel { lambda_min }) => CertificateSummary {
            status: "degenerate_kernel".into(),
            b_bar_d: None,
            bound: None,
            rg_min: Some(lambda_min),
            samples,
            message: Some(Error::DegenerateKernel { lambda_min }.to_string()),
        },
        Err(other) => CertificateSummary {
            status: "error".into(),
            b_bar_d: None,
            bound: None,
            rg_min: None,
            samples,
            message: Some(other.to_string()),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Every resolved key as `key = value` lines.
    pub config: String,
    pub seed: u64,
    pub mode: String,
    /// Unix time in milliseconds.
    pub started_ms: u128,
    pub finished_ms: u128,
    pub artifacts: Vec<PathBuf>,
    pub violation: ViolationSummary,
    pub certificate: CertificateSummary,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// The configuration this run used.
    pub fn resolved_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_toml(&self.config)?;
        Ok(cfg)
    }
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

pub struct RunOutput {
    pub manifest: RunManifest,
    pub log: TrajectoryLog,
    pub dir: PathBuf,
}

/// Runs one episode and writes the CSV, the resolved config, and the
/// manifest into `dir`.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let started_ms = now_ms();
    let e = build(cfg)?;
    let log = run_episode(&e.system, &e.episode, e.init.clone())?;
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(CSV_FILE);
    write_csv(&csv_path, &log)?;
    let snapshot = cfg.to_snapshot();
    let snap_path = dir.join(SNAPSHOT_FILE);
    write_atomic(&snap_path, snapshot.as_bytes())?;
    let certificate = if cfg.lambda > 0.0 && cfg.episode.mode == ControllerMode::Safe {
        certificate_summary(cfg, &e)
    } else {
        CertificateSummary {
            status: "not_applicable".into(),
            b_bar_d: None,
            bound: None,
            rg_min: None,
            samples: 0,
            message: Some("certificate requires safe mode with lambda > 0".into()),
        }
    };
    let manifest = RunManifest {
        config: snapshot,
        seed: cfg.episode.seed,
        mode: cfg.episode.mode.as_str().into(),
        started_ms,
        finished_ms: now_ms(),
        artifacts: vec![csv_path, snap_path],
        violation: ViolationSummary::from_log(&log, cfg.norm_ceiling),
        certificate,
    };
    write_atomic(
        &dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    Ok(RunOutput {
        manifest,
        log,
        dir: dir.to_path_buf(),
    })
}

/// Outcome row of a comparison, recomputable from the paired CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub seed: u64,
    pub safe_first_violation: f64,
    pub safe_max_excursion: f64,
    pub baseline_first_violation: f64,
    pub baseline_max_excursion: f64,
    pub contrast: bool,
}

impl From<&ComparisonReport> for ComparisonRow {
    fn from(r: &ComparisonReport) -> Self {
        Self {
            seed: r.seed,
            safe_first_violation: r.safe.first_violation,
            safe_max_excursion: r.safe.max_excursion,
            baseline_first_violation: r.baseline.first_violation,
            baseline_max_excursion: r.baseline.max_excursion,
            contrast: r.contrast_holds(),
        }
    }
}

pub fn compare(cfg: &ExperimentConfig) -> Result<ComparisonReport> {
    let e = build(cfg)?;
    compare_runs(&e.system, &e.episode, &e.init, cfg.compare_window)
}

/// Runs the comparison and writes `safe.csv` and `baseline.csv` into `dir`.
pub fn compare_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<ComparisonReport> {
    let report = compare(cfg)?;
    fs::create_dir_all(dir)?;
    write_csv(&dir.join("safe.csv"), &report.safe_log)?;
    write_csv(&dir.join("baseline.csv"), &report.baseline_log)?;
    write_atomic(&dir.join(SNAPSHOT_FILE), cfg.to_snapshot().as_bytes())?;
    Ok(report)
}

/// Comparisons for seeds `first..first + count`, run in parallel on `jobs`
/// threads (`0` picks the rayon default). With `out`, each seed writes into
/// its own `seed_<k>` directory.
pub fn sweep(
    cfg: &ExperimentConfig,
    first: u64,
    count: u64,
    jobs: usize,
    out: Option<&Path>,
) -> Result<Vec<ComparisonRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let rows: Result<Vec<ComparisonRow>> = pool.install(|| {
        (first..first + count)
            .into_par_iter()
            .map(|seed| {
                let mut c = cfg.clone();
                c.episode.seed = seed;
                let report = match out {
                    Some(dir) => compare_to_dir(&c, &dir.join(format!("seed_{seed}")))?,
                    None => compare(&c)?,
                };
                Ok(ComparisonRow::from(&report))
            })
            .collect()
    });
    let rows = rows?;
    if let Some(dir) = out {
        write_summary(&dir.join("summary.csv"), &rows)?;
    }
    Ok(rows)
}

pub fn write_summary(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    write_atomic(path, &buf)
}

/// Human-readable table of comparison rows.
pub fn format_table(rows: &[ComparisonRow]) -> String {
    let mut s = format!(
        "{:>6} {:>14} {:>12} {:>14} {:>12} {:>8}\n",
        "seed", "safe_exit_t", "safe_exc", "base_exit_t", "base_exc", "contrast"
    );
    for r in rows {
        s.push_str(&format!(
            "{:>6} {:>14.4} {:>12.4} {:>14.4} {:>12.4} {:>8}\n",
            r.seed,
            r.safe_first_violation,
            r.safe_max_excursion,
            r.baseline_first_violation,
            r.baseline_max_excursion,
            r.contrast
        ));
    }
    s
}

/// Max excursion of a barrier over a log, recomputed from the states.
pub fn excursion_from_records<B: BarrierLyapunov + ?Sized>(barrier: &B, log: &TrajectoryLog) -> f64 {
    log.records
        .iter()
        .map(|r| barrier.normalized_excursion(&DVector::from_column_slice(&r.x)))
        .fold(0.0, f64::max)
}
