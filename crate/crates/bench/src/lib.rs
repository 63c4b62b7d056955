//! Fixtures shared by the benchmarks.

use nalgebra::DVector;
use safe_aci::experiment::{build, Experiment};
use safe_aci::{ExperimentConfig, Result};

/// Default experiment for `seed`, with its packed initial state.
pub fn fixture(seed: u64) -> Result<(Experiment, DVector<f64>)> {
    let mut cfg = ExperimentConfig::default();
    cfg.episode.seed = seed;
    let e = build(&cfg)?;
    let y = e.system.layout().pack(&e.init);
    Ok((e, y))
}

/// Default configuration shortened to `horizon` seconds.
pub fn short_config(horizon: f64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.episode.horizon = horizon;
    cfg
}
