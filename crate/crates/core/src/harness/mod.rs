//! Closed-loop simulation: integration, episodes, comparison, certificates.

pub mod bundle;
pub mod certificate;
pub mod closed_loop;
pub mod compare;
pub mod episode;
pub mod integrator;

pub use bundle::{Bundle, Layout};
pub use certificate::{
    compute_certificate, monitor_barrier_bound, sample_kernel_bounds, BarrierBoundReport, KernelBounds,
    SafetyCertificate,
};
pub use closed_loop::{ClosedLoop, ControllerMode, DriftSource, Excitation, IdentifierGains, LearnerGains, RateEval};
pub use compare::{compare_runs, ComparisonReport, ModeOutcome};
pub use episode::{run_episode, EpisodeConfig, EpisodeSummary, Record, RunStatus, TrajectoryLog};
pub use integrator::rk4_step;
