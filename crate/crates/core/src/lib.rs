//! Safe online actor-critic-identifier control with a barrier Lyapunov
//! term, plus a closed-loop simulation harness for a two-link manipulator.

// `!(a < b)` comparisons are deliberate: they treat NaN as failing.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barrier;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod harness;
pub mod identifier;
pub mod learner;
pub mod value_approx;

pub use barrier::{BarrierLyapunov, RectangularBarrier};
pub use config::ExperimentConfig;
pub use dynamics::{ControlAffine, LinearPlant, ManipulatorParams};
pub use error::{Error, Result};
pub use value_approx::{CostConfig, FeatureBasis, QuadraticBasis, SigmoidBasis};
