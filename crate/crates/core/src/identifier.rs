//! Two-layer sigmoid network that learns the plant drift online from the
//! state-estimation error.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::ControlAffine;
use crate::error::{check_dim, Result};
use crate::learner::{check_within, outer_radius, project};
use crate::value_approx::logistic;

pub fn sigma(z: &DVector<f64>) -> DVector<f64> {
    z.map(logistic)
}

/// Diagonal Jacobian of [`sigma`].
pub fn sigma_jac(z: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(&z.map(|zi| {
        let s = logistic(zi);
        s * (1.0 - s)
    }))
}

/// Identifier weights and estimator state. `wf` is `l x n`, `vf` is `n x l`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentifierState {
    pub wf: DMatrix<f64>,
    pub vf: DMatrix<f64>,
    pub x_hat: DVector<f64>,
    pub k: f64,
    pub gamma_wf: DMatrix<f64>,
    pub gamma_vf: DMatrix<f64>,
    pub wf_bar: f64,
    pub vf_bar: f64,
    pub proj_eps: f64,
}

impl IdentifierState {
    pub fn hidden(&self) -> usize {
        self.wf.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.vf.nrows()
    }

    fn check(&self, x: &DVector<f64>) -> Result<()> {
        let (l, n) = (self.hidden(), self.state_dim());
        check_dim("identifier state", n, x.len())?;
        check_dim("identifier W_f columns", n, self.wf.ncols())?;
        check_dim("identifier V_f columns", l, self.vf.ncols())?;
        check_dim("identifier estimate", n, self.x_hat.len())?;
        check_dim("Gamma_wf", l, self.gamma_wf.nrows())?;
        check_dim("Gamma_vf", n, self.gamma_vf.nrows())
    }

    /// Whether both weight matrices are inside their projection balls.
    pub fn weights_within_radii(&self, tol: f64) -> bool {
        self.wf.norm() <= outer_radius(self.wf_bar, self.proj_eps) + tol
            && self.vf.norm() <= outer_radius(self.vf_bar, self.proj_eps) + tol
    }
}

/// `f_hat(x) = W_f' sigma(V_f' x)`.
pub fn estimated_drift(id: &IdentifierState, x: &DVector<f64>) -> Result<DVector<f64>> {
    id.check(x)?;
    Ok(id.wf.tr_mul(&sigma(&id.vf.tr_mul(x))))
}

pub(crate) fn estimator_rate_from_parts(
    id: &IdentifierState,
    f_hat: &DVector<f64>,
    g: &DMatrix<f64>,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> DVector<f64> {
    f_hat + g * u + (x - &id.x_hat) * id.k
}

/// `x_hat' = W_f' sigma(V_f' x) + g(x) u + k (x - x_hat)`, with the network
/// evaluated at the measured state.
pub fn estimator_rate<M: ControlAffine + ?Sized>(
    id: &IdentifierState,
    model: &M,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    let f_hat = estimated_drift(id, x)?;
    let g = model.input_map(x)?;
    check_dim("control", g.ncols(), u.len())?;
    Ok(estimator_rate_from_parts(id, &f_hat, &g, x, u))
}

/// Projected adaptive laws
/// `W_f' = proj(Gamma_wf sigma_hat x_tilde')` and
/// `V_f' = proj(Gamma_vf x x_tilde' W_f' jac(sigma_hat))`,
/// using the Frobenius norm for the projection ball.
pub fn weight_rates(
    id: &IdentifierState,
    x: &DVector<f64>,
    x_tilde: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    id.check(x)?;
    check_dim("estimation error", x.len(), x_tilde.len())?;
    check_within("identifier W_f", id.wf.as_slice(), id.wf_bar, id.proj_eps)?;
    check_within("identifier V_f", id.vf.as_slice(), id.vf_bar, id.proj_eps)?;
    Ok(weight_rates_unchecked(id, x, x_tilde))
}

/// [`weight_rates`] without dimension or ball checks; used at integrator
/// stages.
pub(crate) fn weight_rates_unchecked(
    id: &IdentifierState,
    x: &DVector<f64>,
    x_tilde: &DVector<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let z = id.vf.tr_mul(x);
    let s = sigma(&z);
    let ds = sigma_jac(&z);
    let wf_raw = &id.gamma_wf * s * x_tilde.transpose();
    let vf_raw = &id.gamma_vf * x * (x_tilde.transpose() * id.wf.transpose() * ds);
    let wf = project(id.wf.as_slice(), wf_raw.as_slice(), id.wf_bar, id.proj_eps);
    let vf = project(id.vf.as_slice(), vf_raw.as_slice(), id.vf_bar, id.proj_eps);
    (
        DMatrix::from_vec(wf_raw.nrows(), wf_raw.ncols(), wf),
        DMatrix::from_vec(vf_raw.nrows(), vf_raw.ncols(), vf),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::LinearPlant;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_id(wf: f64, vf: f64, x_hat: f64) -> IdentifierState {
        IdentifierState {
            wf: DMatrix::from_element(1, 1, wf),
            vf: DMatrix::from_element(1, 1, vf),
            x_hat: DVector::from_element(1, x_hat),
            k: 10.0,
            gamma_wf: DMatrix::from_element(1, 1, 10.0),
            gamma_vf: DMatrix::from_element(1, 1, 10.0),
            wf_bar: 10.0,
            vf_bar: 10.0,
            proj_eps: 0.1,
        }
    }

    fn random_id(rng: &mut ChaCha8Rng, l: usize, n: usize) -> IdentifierState {
        IdentifierState {
            wf: DMatrix::from_fn(l, n, |_, _| rng.random_range(-1.0..1.0)),
            vf: DMatrix::from_fn(n, l, |_, _| rng.random_range(-1.0..1.0)),
            x_hat: DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
            k: 10.0,
            gamma_wf: DMatrix::identity(l, l) * 10.0,
            gamma_vf: DMatrix::identity(n, n) * 10.0,
            wf_bar: 10.0,
            vf_bar: 10.0,
            proj_eps: 0.1,
        }
    }

    #[test]
    fn sigma_at_origin() {
        let z = DVector::zeros(5);
        assert_eq!(sigma(&z), DVector::from_element(5, 0.5));
        assert_eq!(sigma_jac(&z), DMatrix::identity(5, 5) * 0.25);
        let big = DVector::from_element(5, 800.0);
        assert_eq!(sigma(&big), DVector::from_element(5, 1.0));
        assert!(sigma(&big).norm() <= 5f64.sqrt());
    }

    #[test]
    fn estimator_rate_examples() {
        let plant = LinearPlant::scalar_integrator();
        let x = DVector::from_element(1, 0.7);
        let id = scalar_id(0.0, 0.3, 0.7);
        assert_eq!(estimator_rate(&id, &plant, &x, &DVector::zeros(1)).unwrap()[0], 0.0);
        let id = scalar_id(2.0, 0.3, 0.7);
        let rate = estimator_rate(&id, &plant, &x, &DVector::zeros(1)).unwrap();
        assert_relative_eq!(rate[0], 2.0 * logistic(0.21), epsilon = 1e-15);
    }

    #[test]
    fn weight_rate_examples() {
        let id = scalar_id(2.0, 0.0, 0.5);
        let (wf, vf) = weight_rates(&id, &DVector::from_element(1, 1.0), &DVector::from_element(1, 0.5)).unwrap();
        assert_relative_eq!(wf[(0, 0)], 2.5, epsilon = 1e-15);
        assert_relative_eq!(vf[(0, 0)], 2.5, epsilon = 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let id = random_id(&mut rng, 5, 4);
        let x = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let (wf, vf) = weight_rates(&id, &x, &DVector::zeros(4)).unwrap();
        assert_eq!(wf, DMatrix::zeros(5, 4));
        assert_eq!(vf, DMatrix::zeros(4, 5));
        let (_, vf) = weight_rates(&id, &DVector::zeros(4), &x).unwrap();
        assert_eq!(vf, DMatrix::zeros(4, 5));
    }

    #[test]
    fn drift_estimate_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let id = random_id(&mut rng, 5, 4);
            let x = DVector::from_fn(4, |_, _| rng.random_range(-5.0..5.0));
            let f = estimated_drift(&id, &x).unwrap();
            assert!(f.norm() <= id.wf.norm() * 5f64.sqrt() + 1e-12);
        }
        let mut zero = random_id(&mut rng, 5, 4);
        zero.wf.fill(0.0);
        assert_eq!(
            estimated_drift(&zero, &DVector::from_element(4, 1.0)).unwrap(),
            DVector::zeros(4)
        );
    }

    #[test]
    fn error_energy_derivative() {
        // d/dt (1/2 |x - x_hat|^2) = x_tilde' (f - f_hat) - k |x_tilde|^2
        // along the true plant x' = f + g u and the estimator.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let plant = crate::dynamics::ManipulatorParams::default();
        for _ in 0..50 {
            let id = random_id(&mut rng, 5, 4);
            let x = DVector::from_fn(4, |_, _| rng.random_range(-2.0..2.0));
            let u = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let (f, g) = plant.evaluate(&x).unwrap();
            let xdot = &f + &g * &u;
            let xhat_dot = estimator_rate(&id, &plant, &x, &u).unwrap();
            let xt = &x - &id.x_hat;
            let lhs = xt.dot(&(xdot - xhat_dot));
            let rhs = xt.dot(&(&f - estimated_drift(&id, &x).unwrap())) - id.k * xt.norm_squared();
            assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn dimension_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let id = random_id(&mut rng, 5, 4);
        assert!(estimated_drift(&id, &DVector::zeros(3)).is_err());
        assert!(weight_rates(&id, &DVector::zeros(4), &DVector::zeros(2)).is_err());
    }
}
