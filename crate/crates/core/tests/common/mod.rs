//! Oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use safe_aci::harness::{rk4_step, ClosedLoop, ControllerMode, DriftSource, EpisodeConfig, Excitation};
use safe_aci::identifier::{sigma, sigma_jac};
use safe_aci::value_approx::{estimated_safe_control, lagrangian};
use safe_aci::{
    BarrierLyapunov, ControlAffine, CostConfig, ExperimentConfig, FeatureBasis, LinearPlant, QuadraticBasis,
    RectangularBarrier, Result,
};

pub fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

pub fn uniform_box(rng: &mut dyn RngCore, half_widths: &[f64], shrink: f64) -> DVector<f64> {
    DVector::from_iterator(
        half_widths.len(),
        half_widths.iter().map(|a| rng.random_range(-shrink * a..=shrink * a)),
    )
}

/// Central-difference Jacobian of `f` at `x` (rows are outputs).
pub fn central_jacobian<F>(f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let cols: Vec<DVector<f64>> = (0..x.len())
        .map(|i| {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[i] += h;
            lo[i] -= h;
            (f(&hi) - f(&lo)) / (2.0 * h)
        })
        .collect();
    DMatrix::from_columns(&cols)
}

pub fn rel_err(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    (analytic - numeric).norm() / analytic.norm().max(1e-8)
}

/// Worst relative error of the barrier gradient over `points` draws in `0.9 C`.
pub fn barrier_fd_error(barrier: &RectangularBarrier, points: usize, rng: &mut dyn RngCore) -> f64 {
    let a: Vec<f64> = barrier.half_widths().iter().copied().collect();
    (0..points)
        .map(|_| {
            let x = uniform_box(rng, &a, 0.9);
            let g = barrier.gradient(&x).unwrap();
            let fd = central_jacobian(|y| v(&[barrier.value(y).unwrap()]), &x, 1e-5);
            rel_err(&DMatrix::from_row_slice(1, g.len(), g.as_slice()), &fd)
        })
        .fold(0.0, f64::max)
}

pub fn basis_fd_error<F: FeatureBasis>(basis: &F, half_widths: &[f64], points: usize, rng: &mut dyn RngCore) -> f64 {
    (0..points)
        .map(|_| {
            let x = uniform_box(rng, half_widths, 0.9);
            let fd = central_jacobian(|y| basis.features(y).unwrap(), &x, 1e-5);
            rel_err(&basis.jacobian(&x).unwrap(), &fd)
        })
        .fold(0.0, f64::max)
}

pub fn sigma_fd_error(l: usize, points: usize, rng: &mut dyn RngCore) -> f64 {
    (0..points)
        .map(|_| {
            let z = uniform_box(rng, &vec![10.0; l], 1.0);
            let fd = central_jacobian(sigma, &z, 1e-5);
            rel_err(&sigma_jac(&z), &fd)
        })
        .fold(0.0, f64::max)
}

/// Terminal errors of RK4 on the unit oscillator over `[0, 1]` at `dt0`
/// and its successive halvings.
pub fn rk4_terminal_errors(dt0: f64, levels: usize) -> Vec<f64> {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
    let y0 = v(&[1.0, 0.0]);
    let exact = v(&[1f64.cos(), -1f64.sin()]);
    (0..levels)
        .map(|i| {
            let dt = dt0 / 2f64.powi(i as i32);
            let steps = (1.0 / dt).round() as usize;
            let mut y = y0.clone();
            for k in 0..steps {
                y = rk4_step(|_, s| Ok(&a * s), k as f64 * dt, &y, dt).unwrap();
            }
            (y - &exact).norm()
        })
        .collect()
}

/// Newton's method on the Lagrangian in `u` with finite-difference
/// derivatives; does not use the closed-form minimizer.
pub fn numeric_lagrangian_minimizer<M, B>(
    cost: &CostConfig,
    model: &M,
    barrier: &B,
    x: &DVector<f64>,
    grad_v: &DVector<f64>,
    lambda: f64,
) -> DVector<f64>
where
    M: ControlAffine,
    B: BarrierLyapunov,
{
    let m = model.input_dim();
    let l = |u: &DVector<f64>| lagrangian(cost, model, barrier, x, u, grad_v, lambda).unwrap();
    let grad = |u: &DVector<f64>| {
        let h = 1e-3;
        DVector::from_fn(m, |i, _| {
            let mut hi = u.clone();
            let mut lo = u.clone();
            hi[i] += h;
            lo[i] -= h;
            (l(&hi) - l(&lo)) / (2.0 * h)
        })
    };
    let hess = |u: &DVector<f64>| {
        let h = 1e-2;
        DMatrix::from_fn(m, m, |i, j| {
            let shifted = |si: f64, sj: f64| {
                let mut w = u.clone();
                w[i] += si * h;
                w[j] += sj * h;
                l(&w)
            };
            (shifted(1.0, 1.0) - shifted(1.0, -1.0) - shifted(-1.0, 1.0) + shifted(-1.0, -1.0)) / (4.0 * h * h)
        })
    };
    let mut u = DVector::zeros(m);
    for _ in 0..4 {
        let step = hess(&u).lu().solve(&grad(&u)).expect("Lagrangian Hessian is singular");
        u -= step;
    }
    u
}

/// `d L / d u = 2 R u + g' (grad V + lambda grad B)`, written out directly.
pub fn lagrangian_u_gradient<M, B>(
    cost: &CostConfig,
    model: &M,
    barrier: &B,
    x: &DVector<f64>,
    u: &DVector<f64>,
    grad_v: &DVector<f64>,
    lambda: f64,
) -> DVector<f64>
where
    M: ControlAffine,
    B: BarrierLyapunov,
{
    let g = model.input_map(x).unwrap();
    let gb = barrier.gradient(x).unwrap();
    cost.r() * u * 2.0 + g.tr_mul(&(grad_v + gb * lambda))
}

/// Worst `(|u_analytic - u_numeric|, |dL/du at u_analytic|)` over random
/// states in `0.9 C` and actor weights in the `W_bar` ball.
#[allow(clippy::too_many_arguments)]
pub fn lagrangian_oracle<M, B, F>(
    cost: &CostConfig,
    model: &M,
    barrier: &B,
    basis: &F,
    half_widths: &[f64],
    w_bar: f64,
    lambda: f64,
    points: usize,
    rng: &mut dyn RngCore,
) -> (f64, f64)
where
    M: ControlAffine,
    B: BarrierLyapunov,
    F: FeatureBasis,
{
    let p = basis.len();
    let mut worst = (0.0f64, 0.0f64);
    for _ in 0..points {
        let x = uniform_box(rng, half_widths, 0.9);
        let dir = DVector::from_fn(p, |_, _| rng.random_range(-1.0..=1.0));
        let wa = dir.normalize() * (w_bar * rng.random_range(0.0..=1.0));
        let u = estimated_safe_control(cost, model, barrier, basis, &wa, &x, lambda).unwrap();
        let grad_v = basis.jacobian(&x).unwrap().tr_mul(&wa);
        let u_num = numeric_lagrangian_minimizer(cost, model, barrier, &x, &grad_v, lambda);
        let dl = lagrangian_u_gradient(cost, model, barrier, &x, &u, &grad_v, lambda);
        worst.0 = worst.0.max((&u - u_num).norm());
        worst.1 = worst.1.max(dl.norm());
    }
    worst
}

/// Scalar integrator `x' = u` with cost `x^2 + u^2`, basis `{x^2}`, the true
/// drift in the residual, and a sinusoidal probing input. The Riccati
/// solution is `P = 1`.
pub fn scalar_lqr() -> Result<(ClosedLoop, EpisodeConfig, safe_aci::harness::Bundle)> {
    let defaults = ExperimentConfig::default();
    let mut learner = defaults.learner_gains();
    learner.w_bar = 3.0;
    let sys = ClosedLoop {
        plant: Arc::new(LinearPlant::scalar_integrator()),
        barrier: Arc::new(RectangularBarrier::uniform(1, 1e3, 5.0)?),
        cost: CostConfig::quadratic(DMatrix::identity(1, 1))?,
        basis: Arc::new(QuadraticBasis::new(1)),
        learner,
        identifier: defaults.identifier_gains(1),
        lambda: 0.0,
        mode: ControllerMode::BaselineAci,
        drift_source: DriftSource::TrueModel,
        excitation: Excitation {
            amplitude: 5.0,
            decay: 0.0,
        },
        hidden: defaults.id_l,
    };
    let cfg = EpisodeConfig {
        horizon: 30.0,
        x0: vec![1.0],
        mode: ControllerMode::BaselineAci,
        weight_init_range: (0.3, 0.3),
        stop_on_violation: false,
        ..EpisodeConfig::default()
    };
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let init = sys.initial_bundle(
        &v(&cfg.x0),
        &cfg.initial_estimate(),
        cfg.gamma0,
        cfg.weight_init_range,
        &mut rng,
    )?;
    Ok((sys, cfg, init))
}
