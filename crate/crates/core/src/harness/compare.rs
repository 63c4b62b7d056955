//! Paired safe/baseline runs from identical initial conditions.

use crate::error::Result;
use crate::harness::bundle::Bundle;
use crate::harness::closed_loop::{ClosedLoop, ControllerMode};
use crate::harness::episode::{run_episode, EpisodeConfig, TrajectoryLog};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeOutcome {
    /// `inf` when the run never left the safe set.
    pub first_violation: f64,
    /// `max_i max_t |x_i| / a_i`
    pub max_excursion: f64,
    pub max_bf: f64,
}

impl ModeOutcome {
    fn from_log(log: &TrajectoryLog) -> Self {
        Self {
            first_violation: log.summary.first_violation.unwrap_or(f64::INFINITY),
            max_excursion: log.summary.max_excursion,
            max_bf: log.summary.max_bf,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub seed: u64,
    pub safe: ModeOutcome,
    pub baseline: ModeOutcome,
    pub window: f64,
    pub safe_log: TrajectoryLog,
    pub baseline_log: TrajectoryLog,
}

impl ComparisonReport {
    /// The safe run never left the set.
    pub fn safe_held(&self) -> bool {
        self.safe.first_violation.is_infinite()
    }

    /// The baseline left the set within the window.
    pub fn baseline_violated_in_window(&self) -> bool {
        self.baseline.first_violation <= self.window
    }

    pub fn contrast_holds(&self) -> bool {
        self.safe_held() && self.baseline_violated_in_window()
    }
}

/// Runs `sys` once in each mode from the same initial bundle. Both runs
/// halt at their first exit from the safe set.
pub fn compare_runs(sys: &ClosedLoop, cfg: &EpisodeConfig, init: &Bundle, window: f64) -> Result<ComparisonReport> {
    let mut safe_sys = sys.clone();
    safe_sys.mode = ControllerMode::Safe;
    let mut safe_cfg = cfg.clone();
    safe_cfg.mode = ControllerMode::Safe;

    let mut base_sys = sys.clone();
    base_sys.mode = ControllerMode::BaselineAci;
    let mut base_cfg = cfg.clone();
    base_cfg.mode = ControllerMode::BaselineAci;
    base_cfg.stop_on_violation = true;

    let safe_log = run_episode(&safe_sys, &safe_cfg, init.clone())?;
    let baseline_log = run_episode(&base_sys, &base_cfg, init.clone())?;
    Ok(ComparisonReport {
        seed: cfg.seed,
        safe: ModeOutcome::from_log(&safe_log),
        baseline: ModeOutcome::from_log(&baseline_log),
        window,
        safe_log,
        baseline_log,
    })
}
