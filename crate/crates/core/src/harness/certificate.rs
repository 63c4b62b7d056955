//! Sampled bound on the barrier value along closed-loop trajectories.
//!
//! Outside `{x : |grad B(x)| <= B_d}` the barrier derivative under the safe
//! law is negative, with
//! `B_d = (f_bar + phi_d_bar W_bar Rg_bar / 2) / (lambda lambda_min(R_g) / 2)`.
//! Together with `gamma |grad B| >= B` this caps `B(x(t))` at
//! `max(B(x0), gamma B_d)`.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::barrier::{BarrierLyapunov, SAMPLING_SHRINK};
use crate::dynamics::ControlAffine;
use crate::error::{Error, Result};
use crate::harness::episode::TrajectoryLog;
use crate::value_approx::{input_kernel, CostConfig, FeatureBasis};

/// Smallest admissible sampled `lambda_min(R_g)`.
pub const DEGENERATE_KERNEL: f64 = 1e-10;

/// Relative slack allowed when comparing a trajectory to the certificate.
pub const BOUND_SLACK: f64 = 0.01;

/// Extremes of the plant and basis over samples of the safe set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelBounds {
    /// `max |f(x)|`
    pub f_bar: f64,
    /// `max |jac(phi)(x)|` (spectral norm)
    pub phi_d_bar: f64,
    /// `max |R_g(x)|`
    pub rg_bar: f64,
    /// `min lambda_min(R_g(x))`
    pub rg_min: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyCertificate {
    pub b_bar_d: f64,
    pub gamma: f64,
    pub bf_x0: f64,
    /// `max(B(x0), gamma B_d)`
    pub bound: f64,
    pub f_bar: f64,
    pub phi_d_bar: f64,
    pub rg_bar: f64,
    pub rg_min: f64,
    pub samples: usize,
}

pub fn sample_kernel_bounds<B, M, F>(
    barrier: &B,
    model: &M,
    cost: &CostConfig,
    basis: &F,
    samples: usize,
    seed: u64,
) -> Result<KernelBounds>
where
    B: BarrierLyapunov + ?Sized,
    M: ControlAffine + ?Sized,
    F: FeatureBasis + ?Sized,
{
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bounds = KernelBounds {
        f_bar: 0.0,
        phi_d_bar: 0.0,
        rg_bar: 0.0,
        rg_min: f64::INFINITY,
        samples,
    };
    for _ in 0..samples {
        let x = barrier.sample_interior(&mut rng, SAMPLING_SHRINK);
        let (f, g) = model.evaluate(&x)?;
        bounds.f_bar = bounds.f_bar.max(f.norm());
        let jac = basis.jacobian(&x)?;
        let jtj = jac.tr_mul(&jac);
        bounds.phi_d_bar = bounds.phi_d_bar.max(jtj.symmetric_eigenvalues().max().max(0.0).sqrt());
        let eig = input_kernel(cost.r_inv(), &g).symmetric_eigenvalues();
        bounds.rg_bar = bounds.rg_bar.max(eig.max());
        bounds.rg_min = bounds.rg_min.min(eig.min());
    }
    Ok(bounds)
}

/// `B_d` from sampled constants.
pub fn barrier_gradient_bound(bounds: &KernelBounds, w_bar: f64, lambda: f64) -> f64 {
    (bounds.f_bar + 0.5 * bounds.phi_d_bar * w_bar * bounds.rg_bar) / (0.5 * lambda * bounds.rg_min)
}

#[allow(clippy::too_many_arguments)]
pub fn compute_certificate<B, M, F>(
    barrier: &B,
    model: &M,
    cost: &CostConfig,
    basis: &F,
    w_bar: f64,
    lambda: f64,
    x0: &DVector<f64>,
    samples: usize,
    seed: u64,
) -> Result<SafetyCertificate>
where
    B: BarrierLyapunov + ?Sized,
    M: ControlAffine + ?Sized,
    F: FeatureBasis + ?Sized,
{
    if samples < 1000 {
        return Err(Error::InvalidArgument(format!(
            "certificate needs >= 1000 samples, got {samples}"
        )));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "certificate needs lambda > 0, got {lambda}"
        )));
    }
    let bounds = sample_kernel_bounds(barrier, model, cost, basis, samples, seed)?;
    if !(bounds.rg_min >= DEGENERATE_KERNEL) {
        return Err(Error::DegenerateKernel {
            lambda_min: bounds.rg_min,
        });
    }
    let b_bar_d = barrier_gradient_bound(&bounds, w_bar, lambda);
    let bf_x0 = barrier.value(x0)?;
    let gamma = barrier.gamma();
    Ok(SafetyCertificate {
        b_bar_d,
        gamma,
        bf_x0,
        bound: bf_x0.max(gamma * b_bar_d),
        f_bar: bounds.f_bar,
        phi_d_bar: bounds.phi_d_bar,
        rg_bar: bounds.rg_bar,
        rg_min: bounds.rg_min,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierBoundReport {
    pub max_bf: f64,
    pub bound: f64,
    pub holds: bool,
    /// Indices of logged records above the slackened bound.
    pub offending_records: Vec<usize>,
}

/// Checks `max_t B(x(t)) <= bound` with 1% slack.
pub fn monitor_barrier_bound(log: &TrajectoryLog, cert: &SafetyCertificate) -> BarrierBoundReport {
    let limit = cert.bound * (1.0 + BOUND_SLACK);
    let offending_records: Vec<usize> = log
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| !(r.bf <= limit))
        .map(|(i, _)| i)
        .collect();
    let max_bf = log.records.iter().map(|r| r.bf).fold(log.summary.max_bf, f64::max);
    BarrierBoundReport {
        max_bf,
        bound: cert.bound,
        holds: max_bf <= limit && offending_records.is_empty(),
        offending_records,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::RectangularBarrier;
    use crate::dynamics::{LinearPlant, ManipulatorParams};
    use crate::value_approx::{QuadraticBasis, SigmoidBasis};
    use nalgebra::DMatrix;

    fn full_rank_setup() -> (RectangularBarrier, LinearPlant, CostConfig, QuadraticBasis) {
        let plant = LinearPlant::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.5]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        (
            RectangularBarrier::uniform(2, 2.0, 5.0).unwrap(),
            plant,
            CostConfig::quadratic(DMatrix::identity(2, 2)).unwrap(),
            QuadraticBasis::new(2),
        )
    }

    #[test]
    fn bound_shrinks_with_lambda_and_grows_with_radius() {
        let (b, plant, cost, basis) = full_rank_setup();
        let x0 = DVector::from_column_slice(&[0.5, 0.5]);
        let c = |w: f64, l: f64| compute_certificate(&b, &plant, &cost, &basis, w, l, &x0, 2000, 1).unwrap();
        assert!(c(1.0, 1e12).b_bar_d < 1e-9);
        assert!(c(2.0, 10.0).b_bar_d > c(1.0, 10.0).b_bar_d);
        let ratio = c(1.0, 10.0).b_bar_d / c(1.0, 20.0).b_bar_d;
        assert!((ratio - 2.0).abs() < 1e-12);
        let cert = c(1.0, 10.0);
        assert!(cert.b_bar_d.is_finite() && cert.b_bar_d > 0.0);
        assert_eq!(cert.bound, cert.bf_x0.max(cert.gamma * cert.b_bar_d));
    }

    #[test]
    fn underactuated_plant_has_degenerate_kernel() {
        let b = RectangularBarrier::uniform(4, 5.0, 5.0).unwrap();
        let plant = ManipulatorParams::default();
        let cost = CostConfig::quadratic(DMatrix::identity(2, 2)).unwrap();
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(0);
        let basis = SigmoidBasis::random(4, 30, 1.0, &mut rng).unwrap();
        let err = compute_certificate(&b, &plant, &cost, &basis, 16.4, 100.0, &DVector::zeros(4), 1000, 0);
        assert!(matches!(err, Err(Error::DegenerateKernel { .. })));
    }

    #[test]
    fn rejects_too_few_samples() {
        let (b, plant, cost, basis) = full_rank_setup();
        assert!(compute_certificate(&b, &plant, &cost, &basis, 1.0, 1.0, &DVector::zeros(2), 999, 0).is_err());
    }
}
