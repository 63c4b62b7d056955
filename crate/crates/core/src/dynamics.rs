//! Control-affine plants `x' = f(x) + g(x) u`.
//!
//! The built-in plant is a planar two-link manipulator with viscous joint
//! friction and no gravity, written in the state `x = [q1, q2, q1', q2']`
//! with joint torques as inputs.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::error::{check_dim, Error, Result};

/// Condition number above which a mass matrix is treated as singular.
pub const MASS_CONDITION_LIMIT: f64 = 1e12;

/// A plant of the form `x' = f(x) + g(x) u`.
pub trait ControlAffine: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;

    /// Drift `f(x)`.
    fn drift(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    /// Input map `g(x)`, an `n x m` matrix.
    fn input_map(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// `(f(x), g(x))` in one call. Plants that share work between the two
    /// should override this.
    fn evaluate(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        Ok((self.drift(x)?, self.input_map(x)?))
    }
}

/// Inertia and friction constants of the two-link arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManipulatorParams {
    p1: f64,
    p2: f64,
    p3: f64,
    fd1: f64,
    fd2: f64,
}

impl Default for ManipulatorParams {
    fn default() -> Self {
        Self {
            p1: 3.473,
            p2: 0.196,
            p3: 0.242,
            fd1: 5.3,
            fd2: 1.1,
        }
    }
}

impl ManipulatorParams {
    /// Inertia parameters must be positive, friction non-negative, and the
    /// mass matrix must stay positive definite for every `q2`.
    pub fn new(p1: f64, p2: f64, p3: f64, fd1: f64, fd2: f64) -> Result<Self> {
        for (name, v) in [("p1", p1), ("p2", p2), ("p3", p3)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [("fd1", fd1), ("fd2", fd2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be >= 0, got {v}")));
            }
        }
        let params = Self { p1, p2, p3, fd1, fd2 };
        // det M(q) = p1 p2 - p2^2 - p3^2 cos^2(q2), smallest at cos^2 = 1.
        let worst_det = p1 * p2 - p2 * p2 - p3 * p3;
        if worst_det <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "mass matrix is not positive definite for all q (min det {worst_det})"
            )));
        }
        Ok(params)
    }

    pub fn p1(&self) -> f64 {
        self.p1
    }
    pub fn p2(&self) -> f64 {
        self.p2
    }
    pub fn p3(&self) -> f64 {
        self.p3
    }
    pub fn fd1(&self) -> f64 {
        self.fd1
    }
    pub fn fd2(&self) -> f64 {
        self.fd2
    }

    pub fn mass_matrix(&self, q: &Vector2<f64>) -> Matrix2<f64> {
        let c2 = q[1].cos();
        let off = self.p2 + self.p3 * c2;
        Matrix2::new(self.p1 + 2.0 * self.p3 * c2, off, off, self.p2)
    }

    pub fn coriolis_matrix(&self, q: &Vector2<f64>, qdot: &Vector2<f64>) -> Matrix2<f64> {
        let h = self.p3 * q[1].sin();
        Matrix2::new(-h * qdot[1], -h * (qdot[0] + qdot[1]), h * qdot[0], 0.0)
    }

    pub fn friction(&self, qdot: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(self.fd1 * qdot[0], self.fd2 * qdot[1])
    }

    /// Closed-form inverse of `M(q)`, refusing ill-conditioned matrices.
    pub fn inverse_mass_matrix(&self, q: &Vector2<f64>) -> Result<Matrix2<f64>> {
        let m = self.mass_matrix(q);
        let (a, b, d) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
        let det = a * d - b * b;
        // Eigenvalues of a symmetric 2x2.
        let mean = 0.5 * (a + d);
        let rad = (0.25 * (a - d).powi(2) + b * b).sqrt();
        let (hi, lo) = (mean + rad, mean - rad);
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(det.is_finite() && det > 0.0) || !(condition < MASS_CONDITION_LIMIT) {
            return Err(Error::SingularMassMatrix { condition });
        }
        Ok(Matrix2::new(d, -b, -b, a) / det)
    }

    fn split(x: &DVector<f64>) -> Result<(Vector2<f64>, Vector2<f64>)> {
        check_dim("manipulator state", 4, x.len())?;
        Ok((Vector2::new(x[0], x[1]), Vector2::new(x[2], x[3])))
    }
}

impl ControlAffine for ManipulatorParams {
    fn state_dim(&self) -> usize {
        4
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn drift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.evaluate(x)?.0)
    }

    fn input_map(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.evaluate(x)?.1)
    }

    fn evaluate(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (q, qdot) = Self::split(x)?;
        let m_inv = self.inverse_mass_matrix(&q)?;
        let c = self.coriolis_matrix(&q, &qdot);
        let accel = m_inv * (-(c * qdot) - self.friction(&qdot));
        let f = DVector::from_column_slice(&[qdot[0], qdot[1], accel[0], accel[1]]);
        let mut g = DMatrix::zeros(4, 2);
        g.view_mut((2, 0), (2, 2)).copy_from(&m_inv);
        Ok((f, g))
    }
}

/// Linear time-invariant plant `x' = A x + B u`; mostly used for desk
/// checks such as the scalar integrator `x' = u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPlant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LinearPlant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::InvalidArgument("A must be square".into()));
        }
        check_dim("LinearPlant B rows", a.nrows(), b.nrows())?;
        Ok(Self { a, b })
    }

    /// `x' = u` with scalar state and input.
    pub fn scalar_integrator() -> Self {
        Self {
            a: DMatrix::zeros(1, 1),
            b: DMatrix::identity(1, 1),
        }
    }
}

impl ControlAffine for LinearPlant {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn drift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("LinearPlant state", self.a.ncols(), x.len())?;
        Ok(&self.a * x)
    }

    fn input_map(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim("LinearPlant state", self.a.ncols(), x.len())?;
        Ok(self.b.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn defaults() -> ManipulatorParams {
        ManipulatorParams::default()
    }

    #[test]
    fn mass_matrix_at_right_angle() {
        let m = defaults().mass_matrix(&Vector2::new(0.3, PI / 2.0));
        assert_relative_eq!(m, Matrix2::new(3.473, 0.196, 0.196, 0.196), epsilon = 1e-12);
    }

    #[test]
    fn mass_matrix_straight_arm() {
        let m = defaults().mass_matrix(&Vector2::new(0.0, 0.0));
        assert_relative_eq!(m, Matrix2::new(3.957, 0.438, 0.438, 0.196), epsilon = 1e-12);
        assert_relative_eq!(m.determinant(), 0.583728, epsilon = 1e-9);
    }

    #[test]
    fn mass_matrix_positive_definite_over_grid() {
        let p = defaults();
        for i in 0..100 {
            let q2 = -PI + 2.0 * PI * i as f64 / 99.0;
            let m = p.mass_matrix(&Vector2::new(0.0, q2));
            assert_eq!(m, m.transpose());
            assert!(m.cholesky().is_some(), "q2 = {q2}");
        }
    }

    #[test]
    fn coriolis_cases() {
        let p = defaults();
        assert_eq!(
            p.coriolis_matrix(&Vector2::new(1.0, 2.0), &Vector2::zeros()),
            Matrix2::zeros()
        );
        assert_eq!(
            p.coriolis_matrix(&Vector2::new(1.0, 0.0), &Vector2::new(3.0, -2.0)),
            Matrix2::zeros()
        );
        let c = p.coriolis_matrix(&Vector2::new(0.0, PI / 2.0), &Vector2::new(1.0, 1.0));
        assert_relative_eq!(c, Matrix2::new(-0.242, -0.484, 0.242, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn drift_at_origin_and_kinematics() {
        let p = defaults();
        assert_eq!(p.drift(&DVector::zeros(4)).unwrap(), DVector::zeros(4));
        let f = p.drift(&DVector::from_column_slice(&[0.0, 0.0, 1.0, 0.0])).unwrap();
        assert_eq!((f[0], f[1]), (1.0, 0.0));
    }

    #[test]
    fn drift_matches_cofactor_oracle() {
        // Independent evaluation at q2 = pi/2, qdot = (1, 1):
        // M = [[3.473, .196], [.196, .196]], C qdot = (-.242 - .484, .242),
        // F = (5.3, 1.1).
        let rhs = [0.242 + 0.484 - 5.3, -0.242 - 1.1];
        let (a, b, d) = (3.473, 0.196, 0.196);
        let det = a * d - b * b;
        let acc = [(d * rhs[0] - b * rhs[1]) / det, (-b * rhs[0] + a * rhs[1]) / det];
        let f = defaults()
            .drift(&DVector::from_column_slice(&[0.0, PI / 2.0, 1.0, 1.0]))
            .unwrap();
        assert_relative_eq!(f[2], acc[0], max_relative = 1e-12);
        assert_relative_eq!(f[3], acc[1], max_relative = 1e-12);
    }

    #[test]
    fn input_matrix_structure() {
        let p = defaults();
        let g = p
            .input_map(&DVector::from_column_slice(&[0.0, PI / 2.0, 0.5, -0.5]))
            .unwrap();
        assert!(g.view((0, 0), (2, 2)).iter().all(|&v| v == 0.0));
        let m = DMatrix::from_row_slice(2, 2, &[3.473, 0.196, 0.196, 0.196]);
        let prod = &m * g.view((2, 0), (2, 2));
        assert_relative_eq!(prod, DMatrix::identity(2, 2), epsilon = 1e-12);
        assert!((g.transpose() * &g).cholesky().is_some());
    }

    #[test]
    fn rejects_indefinite_mass_matrix() {
        assert!(ManipulatorParams::new(0.1, 0.196, 0.242, 0.0, 0.0).is_err());
        assert!(ManipulatorParams::new(-1.0, 0.196, 0.242, 0.0, 0.0).is_err());
        assert!(ManipulatorParams::new(3.473, 0.196, 0.242, 0.0, 0.0).is_ok());
    }

    #[test]
    fn wrong_state_dimension() {
        assert!(matches!(
            defaults().drift(&DVector::zeros(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
