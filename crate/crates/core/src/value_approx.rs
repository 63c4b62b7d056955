//! Value-function approximation: cost, Hamiltonian, control laws derived
//! from it, and the Bellman residual that drives learning.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};

use crate::barrier::BarrierLyapunov;
use crate::dynamics::ControlAffine;
use crate::error::{check_dim, Error, Result};

type StateCostFn = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;

/// Running cost `r(x, u) = Q(x) + u' R u`.
#[derive(Clone)]
pub struct CostConfig {
    state_cost: Arc<StateCostFn>,
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
}

impl fmt::Debug for CostConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostConfig").field("r", &self.r).finish_non_exhaustive()
    }
}

impl CostConfig {
    /// `Q(x) = x'x` with the given control weight.
    pub fn quadratic(r: DMatrix<f64>) -> Result<Self> {
        Self::new(|x: &DVector<f64>| x.norm_squared(), r)
    }

    /// `Q` must be zero at the origin and positive elsewhere; `R` must be
    /// symmetric positive definite.
    pub fn new<F>(state_cost: F, r: DMatrix<f64>) -> Result<Self>
    where
        F: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        if !r.is_square() || r.nrows() == 0 {
            return Err(Error::InvalidArgument("R must be a non-empty square matrix".into()));
        }
        if (&r - r.transpose()).amax() > 1e-12 * r.amax().max(1.0) {
            return Err(Error::InvalidArgument("R must be symmetric".into()));
        }
        let chol = r
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("R must be positive definite".into()))?;
        let r_inv = chol.inverse();
        Ok(Self {
            state_cost: Arc::new(state_cost),
            r,
            r_inv,
        })
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn r_inv(&self) -> &DMatrix<f64> {
        &self.r_inv
    }

    pub fn state_cost(&self, x: &DVector<f64>) -> f64 {
        (self.state_cost)(x)
    }

    pub fn input_dim(&self) -> usize {
        self.r.nrows()
    }
}

/// Features `phi(x)` of a linear-in-weights value approximation
/// `V(x) ~ W' phi(x)`, with `phi(0) = 0`.
pub trait FeatureBasis: Send + Sync {
    fn state_dim(&self) -> usize;

    /// Number of features `p`.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn features(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    /// Jacobian of `phi`, a `p x n` matrix.
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;
}

#[inline]
pub(crate) fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Random-feature sigmoid layer with frozen inner weights:
/// `phi_j(x) = s(v_j' x) - s(0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmoidBasis {
    /// `n x p`; column `j` is the inner weight vector of feature `j`.
    inner: DMatrix<f64>,
}

impl SigmoidBasis {
    pub fn new(inner: DMatrix<f64>) -> Result<Self> {
        if inner.nrows() == 0 || inner.ncols() == 0 {
            return Err(Error::InvalidArgument("basis needs n, p >= 1".into()));
        }
        Ok(Self { inner })
    }

    /// Inner weights drawn uniformly from `[-scale, scale]`, column by column.
    pub fn random(n: usize, p: usize, scale: f64, rng: &mut dyn RngCore) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidArgument(format!("inner scale must be > 0, got {scale}")));
        }
        let mut inner = DMatrix::zeros(n, p);
        for j in 0..p {
            for i in 0..n {
                inner[(i, j)] = rng.random_range(-scale..=scale);
            }
        }
        Self::new(inner)
    }

    pub fn inner_weights(&self) -> &DMatrix<f64> {
        &self.inner
    }
}

impl FeatureBasis for SigmoidBasis {
    fn state_dim(&self) -> usize {
        self.inner.nrows()
    }

    fn len(&self) -> usize {
        self.inner.ncols()
    }

    fn features(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("basis state", self.inner.nrows(), x.len())?;
        let z = self.inner.tr_mul(x);
        Ok(z.map(|zj| logistic(zj) - 0.5))
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim("basis state", self.inner.nrows(), x.len())?;
        let z = self.inner.tr_mul(x);
        let mut jac = self.inner.transpose();
        for (j, mut row) in jac.row_iter_mut().enumerate() {
            let s = logistic(z[j]);
            row *= s * (1.0 - s);
        }
        Ok(jac)
    }
}

/// All degree-two monomials `x_i x_j`, `i <= j`. For a scalar state this is
/// the single feature `x^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadraticBasis {
    n: usize,
}

impl QuadraticBasis {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
}

impl FeatureBasis for QuadraticBasis {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn len(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    fn features(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("basis state", self.n, x.len())?;
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.n {
            for j in i..self.n {
                out.push(x[i] * x[j]);
            }
        }
        Ok(DVector::from_vec(out))
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim("basis state", self.n, x.len())?;
        let mut jac = DMatrix::zeros(self.len(), self.n);
        let mut k = 0;
        for i in 0..self.n {
            for j in i..self.n {
                jac[(k, i)] += x[j];
                jac[(k, j)] += x[i];
                k += 1;
            }
        }
        Ok(jac)
    }
}

pub fn instantaneous_cost(cost: &CostConfig, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
    check_dim("control", cost.input_dim(), u.len())?;
    Ok(cost.state_cost(x) + u.dot(&(cost.r() * u)))
}

/// `H(x, u, grad V) = r(x, u) + grad V' (f(x) + g(x) u)`.
pub fn hamiltonian<M: ControlAffine + ?Sized>(
    cost: &CostConfig,
    model: &M,
    x: &DVector<f64>,
    u: &DVector<f64>,
    grad_v: &DVector<f64>,
) -> Result<f64> {
    check_dim("value gradient", model.state_dim(), grad_v.len())?;
    check_dim("control", model.input_dim(), u.len())?;
    let (f, g) = model.evaluate(x)?;
    Ok(instantaneous_cost(cost, x, u)? + grad_v.dot(&(f + g * u)))
}

/// Hamiltonian plus `lambda` times the barrier derivative along `f + g u`.
pub fn lagrangian<M: ControlAffine + ?Sized, B: BarrierLyapunov + ?Sized>(
    cost: &CostConfig,
    model: &M,
    barrier: &B,
    x: &DVector<f64>,
    u: &DVector<f64>,
    grad_v: &DVector<f64>,
    lambda: f64,
) -> Result<f64> {
    let (f, g) = model.evaluate(x)?;
    let grad_b = barrier.gradient(x)?;
    Ok(hamiltonian(cost, model, x, u, grad_v)? + lambda * grad_b.dot(&(f + g * u)))
}

/// `-1/2 R^-1 g' p` for an already-evaluated input map and co-state `p`.
pub(crate) fn control_from_costate(r_inv: &DMatrix<f64>, g: &DMatrix<f64>, costate: &DVector<f64>) -> DVector<f64> {
    r_inv * g.tr_mul(costate) * -0.5
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")))
    }
}

/// Minimizer of the Hamiltonian: `-1/2 R^-1 g(x)' grad V`.
pub fn unconstrained_optimal_control<M: ControlAffine + ?Sized>(
    cost: &CostConfig,
    model: &M,
    x: &DVector<f64>,
    grad_v: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim("value gradient", model.state_dim(), grad_v.len())?;
    let g = model.input_map(x)?;
    check_dim("R vs input map", g.ncols(), cost.input_dim())?;
    Ok(control_from_costate(cost.r_inv(), &g, grad_v))
}

/// Minimizer of the Lagrangian: `-1/2 R^-1 g(x)' (grad V + lambda grad B)`.
pub fn safe_optimal_control<M: ControlAffine + ?Sized, B: BarrierLyapunov + ?Sized>(
    cost: &CostConfig,
    model: &M,
    barrier: &B,
    x: &DVector<f64>,
    grad_v: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    check_lambda(lambda)?;
    check_dim("value gradient", model.state_dim(), grad_v.len())?;
    let grad_b = barrier.gradient(x)?;
    let g = model.input_map(x)?;
    check_dim("R vs input map", g.ncols(), cost.input_dim())?;
    Ok(control_from_costate(cost.r_inv(), &g, &(grad_v + grad_b * lambda)))
}

/// The control applied in closed loop: the safe law with the value gradient
/// replaced by the actor estimate `jac(phi)' W_a`.
pub fn estimated_safe_control<M, B, F>(
    cost: &CostConfig,
    model: &M,
    barrier: &B,
    basis: &F,
    wa: &DVector<f64>,
    x: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>>
where
    M: ControlAffine + ?Sized,
    B: BarrierLyapunov + ?Sized,
    F: FeatureBasis + ?Sized,
{
    check_dim("actor weights", basis.len(), wa.len())?;
    let grad_v = basis.jacobian(x)?.tr_mul(wa);
    safe_optimal_control(cost, model, barrier, x, &grad_v, lambda)
}

/// `R_g = g R^-1 g'` and `R_s = jac(phi) R_g jac(phi)'`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernels {
    pub rg: DMatrix<f64>,
    pub rs: DMatrix<f64>,
}

pub(crate) fn input_kernel(r_inv: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let rg = g * r_inv * g.transpose();
    (&rg + rg.transpose()) * 0.5
}

pub fn kernels<M: ControlAffine + ?Sized, F: FeatureBasis + ?Sized>(
    cost: &CostConfig,
    model: &M,
    basis: &F,
    x: &DVector<f64>,
) -> Result<Kernels> {
    let g = model.input_map(x)?;
    check_dim("R vs input map", g.ncols(), cost.input_dim())?;
    let rg = input_kernel(cost.r_inv(), &g);
    let jac = basis.jacobian(x)?;
    let rs = &jac * &rg * jac.transpose();
    let rs = (&rs + rs.transpose()) * 0.5;
    Ok(Kernels { rg, rs })
}

/// Estimated Hamiltonian and its gradient in the critic weights.
///
/// `omega = jac(phi)(x) (f_hat + g u)` and `delta = W_c' omega + r(x, u)`;
/// the optimal Hamiltonian is zero, so `delta` is the Bellman residual.
pub fn bellman_residual<F: FeatureBasis + ?Sized>(
    cost: &CostConfig,
    f_hat: &DVector<f64>,
    g: &DMatrix<f64>,
    basis: &F,
    wc: &DVector<f64>,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    check_dim("estimated drift", x.len(), f_hat.len())?;
    check_dim("input map rows", x.len(), g.nrows())?;
    check_dim("control", g.ncols(), u.len())?;
    check_dim("critic weights", basis.len(), wc.len())?;
    check_dim("R vs control", cost.input_dim(), u.len())?;
    Ok(bellman_residual_from_parts(
        cost,
        &basis.jacobian(x)?,
        f_hat,
        g,
        wc,
        x,
        u,
    ))
}

/// [`bellman_residual`] with the basis Jacobian already evaluated.
pub(crate) fn bellman_residual_from_parts(
    cost: &CostConfig,
    jac: &DMatrix<f64>,
    f_hat: &DVector<f64>,
    g: &DMatrix<f64>,
    wc: &DVector<f64>,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> (f64, DVector<f64>) {
    let omega = jac * (f_hat + g * u);
    let r = cost.state_cost(x) + u.dot(&(cost.r() * u));
    (wc.dot(&omega) + r, omega)
}
