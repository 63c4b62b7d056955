//! Critic and actor adaptation laws.
//!
//! Everything here returns time derivatives; the closed-loop integrator in
//! [`crate::harness`] advances them together with the plant.

use nalgebra::{DMatrix, DVector};

use crate::barrier::BarrierLyapunov;
use crate::error::{check_dim, Error, Result};
use crate::value_approx::{FeatureBasis, Kernels};

/// Least-squares critic with forgetting.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticState {
    pub wc: DVector<f64>,
    pub gamma: DMatrix<f64>,
    pub eta_c: f64,
    pub nu: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorState {
    pub wa: DVector<f64>,
    pub eta_a1: f64,
    pub eta_a2: f64,
    /// Radius of the projection ball.
    pub w_bar: f64,
    /// Width of the smoothing shell outside `w_bar`.
    pub proj_eps: f64,
}

impl ActorState {
    /// Hard limit on `|W_a|` maintained by the projection.
    pub fn outer_radius(&self) -> f64 {
        outer_radius(self.w_bar, self.proj_eps)
    }
}

pub fn outer_radius(w_bar: f64, proj_eps: f64) -> f64 {
    w_bar * (1.0 + proj_eps).sqrt()
}

impl CriticState {
    fn check(&self, omega: &DVector<f64>) -> Result<()> {
        check_dim("critic regressor", self.wc.len(), omega.len())?;
        check_dim("covariance", self.wc.len(), self.gamma.nrows())
    }

    /// `1 + nu omega' Gamma omega` together with `Gamma omega`.
    fn normalizer(&self, omega: &DVector<f64>) -> (f64, DVector<f64>) {
        let gw = &self.gamma * omega;
        (1.0 + self.nu * omega.dot(&gw), gw)
    }

    pub fn psi(&self, omega: &DVector<f64>) -> Result<DVector<f64>> {
        regressor_psi(self, omega)
    }
}

/// `-eta_c Gamma omega delta / (1 + nu omega' Gamma omega)`: descent on `delta^2`.
pub fn critic_rate(cs: &CriticState, omega: &DVector<f64>, delta: f64) -> Result<DVector<f64>> {
    cs.check(omega)?;
    let (norm, gw) = cs.normalizer(omega);
    Ok(gw * (-cs.eta_c * delta / norm))
}

/// `beta Gamma - eta_c Gamma omega omega' Gamma / (1 + nu omega' Gamma omega)`.
pub fn covariance_rate(cs: &CriticState, omega: &DVector<f64>) -> Result<DMatrix<f64>> {
    cs.check(omega)?;
    let (norm, gw) = cs.normalizer(omega);
    let mut rate = &cs.gamma * cs.beta;
    rate.ger(-cs.eta_c / norm, &gw, &gw, 1.0);
    Ok(rate)
}

/// Normalized regressor `omega / sqrt(1 + nu omega' Gamma omega)`.
pub fn regressor_psi(cs: &CriticState, omega: &DVector<f64>) -> Result<DVector<f64>> {
    cs.check(omega)?;
    let (norm, _) = cs.normalizer(omega);
    Ok(omega / norm.sqrt())
}

/// Critic rate, covariance rate, and normalized regressor in one pass.
pub(crate) fn critic_rates_from_parts(
    gamma: &DMatrix<f64>,
    eta_c: f64,
    nu: f64,
    beta: f64,
    omega: &DVector<f64>,
    delta: f64,
) -> (DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let gw = gamma * omega;
    let norm = 1.0 + nu * omega.dot(&gw);
    let mut gamma_rate = gamma * beta;
    gamma_rate.ger(-eta_c / norm, &gw, &gw, 1.0);
    let psi = omega / norm.sqrt();
    (gw * (-eta_c * delta / norm), gamma_rate, psi)
}

/// Smooth projection onto a norm ball, applied to a flat parameter slice.
///
/// Inside `|theta| <= w_bar`, or when the update points inward, the rate is
/// returned unchanged. In the shell up to `w_bar sqrt(1 + eps)` the outward
/// radial component is scaled away progressively; on the outer surface it is
/// removed entirely.
pub fn proj_slice(theta: &[f64], raw: &[f64], w_bar: f64, proj_eps: f64) -> Result<Vec<f64>> {
    check_dim("projection", theta.len(), raw.len())?;
    check_within("parameter", theta, w_bar, proj_eps)?;
    Ok(project(theta, raw, w_bar, proj_eps))
}

pub(crate) fn check_within(what: &'static str, theta: &[f64], w_bar: f64, proj_eps: f64) -> Result<()> {
    let norm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
    let limit = outer_radius(w_bar, proj_eps);
    if norm > limit * (1.0 + 1e-9) {
        return Err(Error::ProjectionEscaped { what, norm, limit });
    }
    Ok(())
}

/// The projection without the precondition. Past the outer radius `h`
/// saturates at 1, so intermediate integrator stages that overshoot the
/// ball still get a non-expanding rate.
pub(crate) fn project(theta: &[f64], raw: &[f64], w_bar: f64, proj_eps: f64) -> Vec<f64> {
    let norm2: f64 = theta.iter().map(|t| t * t).sum();
    let h = (norm2 - w_bar * w_bar) / (proj_eps * w_bar * w_bar);
    let outward: f64 = theta.iter().zip(raw).map(|(t, r)| t * r).sum();
    if h <= 0.0 || outward <= 0.0 {
        return raw.to_vec();
    }
    let scale = h.clamp(0.0, 1.0) * outward / norm2;
    raw.iter().zip(theta).map(|(r, t)| r - scale * t).collect()
}

pub fn proj(theta: &DVector<f64>, raw: &DVector<f64>, w_bar: f64, proj_eps: f64) -> Result<DVector<f64>> {
    Ok(DVector::from_vec(proj_slice(
        theta.as_slice(),
        raw.as_slice(),
        w_bar,
        proj_eps,
    )?))
}

/// Actor rate from precomputed pieces, without the ball precondition.
///
/// `jac` is the `p x n` basis Jacobian and `grad_b` the barrier gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn actor_rate_from_parts(
    actor: &ActorState,
    wc: &DVector<f64>,
    rg: &DMatrix<f64>,
    jac: &DMatrix<f64>,
    grad_b: &DVector<f64>,
    omega: &DVector<f64>,
    delta: f64,
    lambda: f64,
) -> Result<DVector<f64>> {
    let diff = &actor.wa - wc;
    let gain = actor.eta_a1 / (1.0 + omega.norm_squared()).sqrt();
    // R_s (Wa - Wc) without forming the p x p kernel.
    let rs_diff = jac * (rg * jac.tr_mul(&diff));
    let mut raw = rs_diff * (-gain * delta) - &diff * actor.eta_a2;
    if lambda != 0.0 {
        raw -= jac * (rg * grad_b) * (0.5 * lambda);
    }
    Ok(DVector::from_vec(project(
        actor.wa.as_slice(),
        raw.as_slice(),
        actor.w_bar,
        actor.proj_eps,
    )))
}

/// Projected actor update:
/// `proj[-eta_a1/sqrt(1+omega'omega) R_s (Wa-Wc) delta - eta_a2 (Wa-Wc)
///       - lambda/2 jac(phi) R_g grad B]`.
#[allow(clippy::too_many_arguments)]
pub fn actor_rate<B, F>(
    actor: &ActorState,
    critic: &CriticState,
    basis: &F,
    kernels: &Kernels,
    barrier: &B,
    x: &DVector<f64>,
    omega: &DVector<f64>,
    delta: f64,
    lambda: f64,
) -> Result<DVector<f64>>
where
    B: BarrierLyapunov + ?Sized,
    F: FeatureBasis + ?Sized,
{
    check_dim("actor weights", basis.len(), actor.wa.len())?;
    check_dim("critic weights", basis.len(), critic.wc.len())?;
    check_dim("actor regressor", basis.len(), omega.len())?;
    check_dim("R_s", basis.len(), kernels.rs.nrows())?;
    check_within("actor weights", actor.wa.as_slice(), actor.w_bar, actor.proj_eps)?;
    let grad_b = barrier.gradient(x)?;
    let jac = basis.jacobian(x)?;
    actor_rate_from_parts(actor, &critic.wc, &kernels.rg, &jac, &grad_b, omega, delta, lambda)
}
