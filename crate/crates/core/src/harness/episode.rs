//! Fixed-step closed-loop episodes with safety and boundedness monitors.

use std::collections::VecDeque;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::harness::bundle::Bundle;
use crate::harness::closed_loop::{ClosedLoop, ControllerMode, RateEval};
use crate::harness::integrator::rk4_step_from;
use crate::learner::outer_radius;

/// Relative overshoot of a projection radius that is attributed to the
/// discrete integrator and pulled back onto the ball.
const PROJECTION_SLACK: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub dt: f64,
    /// Horizon `T` in seconds.
    pub horizon: f64,
    pub seed: u64,
    pub x0: Vec<f64>,
    /// Initial estimator state; `None` means `x0`.
    pub x_hat0: Option<Vec<f64>>,
    pub mode: ControllerMode,
    pub weight_init_range: (f64, f64),
    /// `Gamma(0) = gamma0 I`.
    pub gamma0: f64,
    /// Keep every `decimate`-th step in the log.
    pub decimate: usize,
    pub stop_on_violation: bool,
    /// Sample-and-hold control over each step instead of continuous control.
    pub zoh: bool,
    /// Window length (s) of the excitation diagnostic; `0` disables it.
    pub pe_window: f64,
    /// Resets `Gamma` to `Gamma(0)` when its largest eigenvalue exceeds this
    /// value. `0` disables the check.
    pub gamma_max: f64,
    /// Whether exceeding `gamma_max` resets (`true`) or only warns.
    pub gamma_reset: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 60.0,
            seed: 0,
            x0: vec![2.0, -2.0, 0.0, 0.0],
            x_hat0: None,
            mode: ControllerMode::Safe,
            weight_init_range: (-1.0, 1.0),
            gamma0: 1.0,
            decimate: 10,
            stop_on_violation: true,
            zoh: false,
            pe_window: 1.0,
            gamma_max: 0.0,
            gamma_reset: false,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("episode.dt", format!("must be > 0, got {}", self.dt)));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::config(
                "episode.T",
                format!("must be >= 0, got {}", self.horizon),
            ));
        }
        if self.horizon > 0.0 && self.horizon < self.dt {
            return Err(Error::config("episode.T", "must be >= dt"));
        }
        if self.decimate == 0 {
            return Err(Error::config("episode.decimate", "must be >= 1"));
        }
        if !(self.gamma0 > 0.0) {
            return Err(Error::config("episode.gamma0", "must be > 0"));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn initial_estimate(&self) -> DVector<f64> {
        DVector::from_column_slice(self.x_hat0.as_deref().unwrap_or(&self.x0))
    }
}

/// One logged step.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub t: f64,
    pub x: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub u: Vec<f64>,
    pub delta: f64,
    /// Barrier value, `inf` outside the safe set.
    pub bf: f64,
    pub xtilde_norm: f64,
    pub wc_norm: f64,
    pub wa_norm: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub safe: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunStatus {
    Completed,
    /// The state left the safe set at time `t` through coordinate `index`.
    Violated {
        t: f64,
        index: usize,
    },
}

impl RunStatus {
    pub fn violation_time(&self) -> Option<f64> {
        match self {
            RunStatus::Completed => None,
            RunStatus::Violated { t, .. } => Some(*t),
        }
    }
}

/// Per-step extrema; these are tracked on every integration step, not only
/// on logged records.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub steps: usize,
    pub first_violation: Option<f64>,
    /// Largest barrier value over in-set states.
    pub max_bf: f64,
    /// Largest `|x_i| / a_i` over the run.
    pub max_excursion: f64,
    pub max_x_norm: f64,
    pub max_xtilde_norm: f64,
    pub max_wc_norm: f64,
    pub max_wa_norm: f64,
    pub max_wf_norm: f64,
    pub max_vf_norm: f64,
    /// Smallest eigenvalue of `Gamma` over logged records.
    pub min_gamma_eig: f64,
    pub max_gamma_eig: f64,
    /// `Gamma` passed a Cholesky factorization after every step.
    pub gamma_pd_every_step: bool,
    pub gamma_resets: usize,
    /// Steps where a projected parameter overshot its ball and was rescaled.
    pub projection_rescales: usize,
    /// Smallest eigenvalue of the windowed integral of `psi psi'`.
    pub pe_min_eig: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrajectoryLog {
    pub records: Vec<Record>,
    pub status: RunStatus,
    pub summary: EpisodeSummary,
    pub final_bundle: Bundle,
}

impl TrajectoryLog {
    pub fn is_safe(&self) -> bool {
        self.status == RunStatus::Completed && self.records.iter().all(|r| r.safe)
    }
}

/// Raw values kept for the diagnostic dump; formatted only on failure.
struct Snapshot {
    t: f64,
    x: Vec<f64>,
    u: Vec<f64>,
    delta: f64,
    wc_norm: f64,
    wa_norm: f64,
}

struct Monitor<'a> {
    sys: &'a ClosedLoop,
    summary: EpisodeSummary,
    recent: VecDeque<Snapshot>,
    pe_accum: Option<DMatrix<f64>>,
    pe_steps: usize,
    pe_window_steps: usize,
}

impl<'a> Monitor<'a> {
    fn new(sys: &'a ClosedLoop, cfg: &EpisodeConfig) -> Self {
        let layout = sys.layout();
        let pe_window_steps = if cfg.pe_window > 0.0 {
            ((cfg.pe_window / cfg.dt).round() as usize).max(1)
        } else {
            0
        };
        Self {
            sys,
            summary: EpisodeSummary {
                steps: 0,
                first_violation: None,
                max_bf: 0.0,
                max_excursion: 0.0,
                max_x_norm: 0.0,
                max_xtilde_norm: 0.0,
                max_wc_norm: 0.0,
                max_wa_norm: 0.0,
                max_wf_norm: 0.0,
                max_vf_norm: 0.0,
                min_gamma_eig: f64::INFINITY,
                max_gamma_eig: 0.0,
                gamma_pd_every_step: true,
                gamma_resets: 0,
                projection_rescales: 0,
                pe_min_eig: None,
            },
            recent: VecDeque::with_capacity(10),
            pe_accum: (pe_window_steps > 0).then(|| DMatrix::zeros(layout.p, layout.p)),
            pe_steps: 0,
            pe_window_steps,
        }
    }

    /// Updates per-step extrema; returns the barrier value and safety flag.
    fn observe(&mut self, t: f64, b: &Bundle, eval: Option<&RateEval>, dt: f64) -> Result<(f64, bool)> {
        let s = &mut self.summary;
        let safe = self.sys.barrier.contains(&b.x)?;
        let bf = if safe {
            self.sys.barrier.value(&b.x).unwrap_or(f64::INFINITY)
        } else {
            f64::INFINITY
        };
        if safe {
            s.max_bf = s.max_bf.max(bf);
        }
        let xtilde = (&b.x - &b.x_hat).norm();
        s.max_x_norm = s.max_x_norm.max(b.x.norm());
        s.max_xtilde_norm = s.max_xtilde_norm.max(xtilde);
        s.max_wc_norm = s.max_wc_norm.max(b.wc.norm());
        s.max_wa_norm = s.max_wa_norm.max(b.wa.norm());
        s.max_wf_norm = s.max_wf_norm.max(b.wf.norm());
        s.max_vf_norm = s.max_vf_norm.max(b.vf.norm());
        let exc = self.sys.barrier.normalized_excursion(&b.x);
        let s = &mut self.summary;
        s.max_excursion = s.max_excursion.max(exc);

        if self.recent.len() == 10 {
            self.recent.pop_front();
        }
        let (u, delta) = eval
            .map(|e| (e.u_applied.as_slice().to_vec(), e.delta))
            .unwrap_or((vec![], f64::NAN));
        self.recent.push_back(Snapshot {
            t,
            x: b.x.as_slice().to_vec(),
            u,
            delta,
            wc_norm: b.wc.norm(),
            wa_norm: b.wa.norm(),
        });

        if let (Some(acc), Some(e)) = (self.pe_accum.as_mut(), eval) {
            acc.ger(dt, &e.psi, &e.psi, 1.0);
            self.pe_steps += 1;
            if self.pe_steps == self.pe_window_steps {
                let lmin = acc.clone().symmetric_eigenvalues().min();
                let s = &mut self.summary;
                s.pe_min_eig = Some(s.pe_min_eig.map_or(lmin, |m: f64| m.min(lmin)));
                acc.fill(0.0);
                self.pe_steps = 0;
            }
        }
        Ok((bf, safe))
    }

    fn record(&mut self, t: f64, b: &Bundle, eval: Option<&RateEval>, bf: f64, safe: bool) -> Record {
        let eig = b.gamma.clone().symmetric_eigenvalues();
        let (gmin, gmax) = (eig.min(), eig.max());
        let s = &mut self.summary;
        s.min_gamma_eig = s.min_gamma_eig.min(gmin);
        s.max_gamma_eig = s.max_gamma_eig.max(gmax);
        Record {
            t,
            x: b.x.as_slice().to_vec(),
            x_hat: b.x_hat.as_slice().to_vec(),
            u: eval
                .map(|e| e.u_applied.as_slice().to_vec())
                .unwrap_or_else(|| vec![f64::NAN; self.sys.plant.input_dim()]),
            delta: eval.map_or(f64::NAN, |e| e.delta),
            bf,
            xtilde_norm: (&b.x - &b.x_hat).norm(),
            wc_norm: b.wc.norm(),
            wa_norm: b.wa.norm(),
            gamma_min: gmin,
            gamma_max: gmax,
            safe,
        }
    }

    fn dump(&self) -> String {
        self.recent
            .iter()
            .map(|r| {
                format!(
                    "t={:.6} x={:?} u={:?} delta={:e} |Wc|={:e} |Wa|={:e}",
                    r.t, r.x, r.u, r.delta, r.wc_norm, r.wa_norm
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Returns whether `values` had to be pulled back onto the ball.
fn enforce_radius(values: &mut [f64], limit: f64, what: &'static str) -> Result<bool> {
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > limit * (1.0 + PROJECTION_SLACK) {
        return Err(Error::ProjectionEscaped { what, norm, limit });
    }
    if norm > limit {
        let scale = limit / norm;
        values.iter_mut().for_each(|v| *v *= scale);
        return Ok(true);
    }
    Ok(false)
}

/// Post-step bookkeeping on the packed state: symmetrize `Gamma`, check it
/// is positive definite, apply the optional covariance reset, and keep the
/// projected parameters on their balls.
fn condition_state(
    sys: &ClosedLoop,
    cfg: &EpisodeConfig,
    t: f64,
    y: DVector<f64>,
    summary: &mut EpisodeSummary,
    warned: &mut bool,
) -> Result<DVector<f64>> {
    let layout = sys.layout();
    let mut b = layout.unpack(&y);
    let sym = (&b.gamma + b.gamma.transpose()) * 0.5;
    b.gamma = sym;
    if b.gamma.clone().cholesky().is_none() {
        summary.gamma_pd_every_step = false;
        return Err(Error::CovarianceNotPositiveDefinite { t });
    }
    if cfg.gamma_max > 0.0 && b.gamma.trace() > cfg.gamma_max {
        let lmax = b.gamma.clone().symmetric_eigenvalues().max();
        if lmax > cfg.gamma_max {
            if cfg.gamma_reset {
                b.gamma = DMatrix::identity(layout.p, layout.p) * cfg.gamma0;
                summary.gamma_resets += 1;
            } else if !*warned {
                warn!(
                    "covariance eigenvalue {lmax:.3e} exceeds gamma_max {} at t = {t}",
                    cfg.gamma_max
                );
                *warned = true;
            }
        }
    }
    let lg = &sys.learner;
    let ig = &sys.identifier;
    let rescaled = [
        enforce_radius(
            b.wa.as_mut_slice(),
            outer_radius(lg.w_bar, lg.proj_eps),
            "actor weights",
        )?,
        enforce_radius(
            b.wf.as_mut_slice(),
            outer_radius(ig.wf_bar, ig.proj_eps),
            "identifier W_f",
        )?,
        enforce_radius(
            b.vf.as_mut_slice(),
            outer_radius(ig.vf_bar, ig.proj_eps),
            "identifier V_f",
        )?,
    ];
    if rescaled.contains(&true) {
        summary.projection_rescales += 1;
    }
    Ok(layout.pack(&b))
}

fn violation_index(sys: &ClosedLoop, x: &DVector<f64>) -> usize {
    match sys.barrier.value(x) {
        Err(Error::OutsideSafeSet { index, .. }) => index,
        _ => 0,
    }
}

/// Integrates the closed loop from `init` over `[0, T]` with RK4.
///
/// Leaving the safe set halts the run with [`RunStatus::Violated`] unless
/// the controller is the baseline and `stop_on_violation` is off. Numeric
/// failures are errors.
pub fn run_episode(sys: &ClosedLoop, cfg: &EpisodeConfig, init: Bundle) -> Result<TrajectoryLog> {
    cfg.validate()?;
    sys.validate()?;
    let layout = sys.layout();
    let dt = cfg.dt;
    let steps = cfg.steps();
    let mut monitor = Monitor::new(sys, cfg);
    let mut records = Vec::with_capacity(steps / cfg.decimate + 2);
    let mut status = RunStatus::Completed;
    let mut warned = false;
    let mut y = layout.pack(&init);
    let non_finite = |monitor: &Monitor, t: f64| Error::NonFinite {
        t,
        dump: monitor.dump(),
    };

    if !sys.barrier.contains(&init.x)? && cfg.mode == ControllerMode::Safe {
        return Err(Error::InvalidArgument(
            "x0 must lie strictly inside the safe set".into(),
        ));
    }

    let mut k = 0usize;
    loop {
        let t = k as f64 * dt;
        let b = layout.unpack(&y);
        let eval = match sys.augmented_rate(t, &y, None) {
            Ok(e) => Some(e),
            Err(Error::OutsideSafeSet { index, .. }) => {
                status = RunStatus::Violated { t, index };
                None
            }
            Err(e) => return Err(e),
        };
        if let Some(e) = &eval {
            if !(e.delta.is_finite() && e.rate.iter().all(|v| v.is_finite())) {
                return Err(non_finite(&monitor, t));
            }
        }
        let (bf, safe) = monitor.observe(t, &b, eval.as_ref(), dt)?;
        if !safe && monitor.summary.first_violation.is_none() {
            monitor.summary.first_violation = Some(t);
            if status == RunStatus::Completed {
                status = RunStatus::Violated {
                    t,
                    index: violation_index(sys, &b.x),
                };
            }
        }
        let halt = !safe && (cfg.stop_on_violation || cfg.mode == ControllerMode::Safe);
        if k.is_multiple_of(cfg.decimate) || k == steps || halt || eval.is_none() {
            records.push(monitor.record(t, &b, eval.as_ref(), bf, safe));
        }
        monitor.summary.steps = k;
        if halt || k == steps {
            break;
        }
        let Some(eval) = eval else { break };

        let held = cfg.zoh.then(|| eval.u_policy.clone());
        let stage = |ts: f64, ys: &DVector<f64>| sys.augmented_rate(ts, ys, held.as_ref()).map(|e| e.rate);
        let next = match rk4_step_from(stage, t, &y, dt, eval.rate) {
            Ok(next) => next,
            Err(Error::OutsideSafeSet { index, .. }) if cfg.mode == ControllerMode::Safe => {
                // An intermediate stage left the set, so the step crosses the
                // boundary.
                status = RunStatus::Violated { t: t + dt, index };
                monitor.summary.first_violation = Some(t + dt);
                break;
            }
            Err(Error::NonFinite { t, .. }) => return Err(non_finite(&monitor, t)),
            Err(e) => return Err(e),
        };
        y = condition_state(sys, cfg, t + dt, next, &mut monitor.summary, &mut warned)?;
        k += 1;
    }

    Ok(TrajectoryLog {
        records,
        status,
        summary: monitor.summary,
        final_bundle: layout.unpack(&y),
    })
}
