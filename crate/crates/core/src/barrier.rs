//! Barrier Lyapunov functions over an open safe set containing the origin.

use nalgebra::DVector;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};

/// Distance to the boundary below which evaluation reports a violation
/// instead of returning an enormous value.
pub const BOUNDARY_GUARD: f64 = 1e-12;

/// Shrink factor of the region sampled by [`verify_construction`].
pub const SAMPLING_SHRINK: f64 = 0.999;

pub trait BarrierLyapunov: Send + Sync {
    fn dim(&self) -> usize;

    /// Constant `gamma` with `gamma * |grad B(x)| >= B(x)` on the safe set.
    fn gamma(&self) -> f64;

    fn contains(&self, x: &DVector<f64>) -> Result<bool>;

    fn value(&self, x: &DVector<f64>) -> Result<f64>;

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    /// Distance-like excursion measure: `< 1` inside the set, `>= 1` outside.
    fn normalized_excursion(&self, x: &DVector<f64>) -> f64;

    /// Uniform draw from the safe set scaled by `shrink` about the origin.
    fn sample_interior(&self, rng: &mut dyn RngCore, shrink: f64) -> DVector<f64>;
}

/// `B(x) = sum_i ln(a_i^2 / (a_i^2 - x_i^2))` on the box `|x_i| < a_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RectangularBarrier {
    a: DVector<f64>,
    gamma: f64,
}

impl RectangularBarrier {
    pub fn new(a: DVector<f64>, gamma: f64) -> Result<Self> {
        if a.is_empty() || a.iter().any(|&ai| !(ai.is_finite() && ai > 0.0)) {
            return Err(Error::InvalidArgument(
                "barrier half-widths must be finite and positive".into(),
            ));
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidArgument(format!("gamma must be > 0, got {gamma}")));
        }
        Ok(Self { a, gamma })
    }

    pub fn uniform(n: usize, half_width: f64, gamma: f64) -> Result<Self> {
        Self::new(DVector::from_element(n, half_width), gamma)
    }

    pub fn half_widths(&self) -> &DVector<f64> {
        &self.a
    }

    fn guard(&self, x: &DVector<f64>) -> Result<()> {
        check_dim("barrier state", self.a.len(), x.len())?;
        for (i, (&xi, &ai)) in x.iter().zip(self.a.iter()).enumerate() {
            // NaN fails this comparison as well.
            if !(ai - xi.abs() > BOUNDARY_GUARD) {
                return Err(Error::OutsideSafeSet {
                    index: i,
                    value: xi,
                    bound: ai,
                });
            }
        }
        Ok(())
    }
}

impl BarrierLyapunov for RectangularBarrier {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn contains(&self, x: &DVector<f64>) -> Result<bool> {
        check_dim("barrier state", self.a.len(), x.len())?;
        Ok(x.iter().zip(self.a.iter()).all(|(xi, ai)| xi.abs() < *ai))
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        self.guard(x)?;
        Ok(x.iter()
            .zip(self.a.iter())
            // ln(a^2 / (a^2 - x^2)) = -ln(1 - (x/a)^2)
            .map(|(&xi, &ai)| -(-(xi / ai).powi(2)).ln_1p())
            .sum())
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.guard(x)?;
        Ok(DVector::from_iterator(
            x.len(),
            x.iter()
                .zip(self.a.iter())
                .map(|(&xi, &ai)| 2.0 * xi / (ai * ai - xi * xi)),
        ))
    }

    /// Largest `|x_i| / a_i`.
    fn normalized_excursion(&self, x: &DVector<f64>) -> f64 {
        x.iter()
            .zip(self.a.iter())
            .map(|(xi, ai)| xi.abs() / ai)
            .fold(0.0, f64::max)
    }

    fn sample_interior(&self, rng: &mut dyn RngCore, shrink: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.a.len(),
            self.a.iter().map(|&ai| {
                let half = shrink * ai;
                rng.random_range(-half..half)
            }),
        )
    }
}

/// Outcome of a sampled check of `gamma * |grad B| >= B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstructionReport {
    pub holds: bool,
    /// Largest `B / |grad B|` seen; zero at the origin.
    pub worst_ratio: f64,
    pub samples: usize,
}

/// Samples `samples` states uniformly over `0.999 * C` and checks the
/// gradient-domination condition at each of them.
pub fn verify_construction<B: BarrierLyapunov + ?Sized>(
    barrier: &B,
    samples: usize,
    seed: u64,
) -> Result<ConstructionReport> {
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = barrier.gamma();
    let mut holds = true;
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..samples {
        let x = barrier.sample_interior(&mut rng, SAMPLING_SHRINK);
        let value = barrier.value(&x)?;
        let grad_norm = barrier.gradient(&x)?.norm();
        if gamma * grad_norm < value {
            holds = false;
        }
        if grad_norm > 0.0 {
            worst_ratio = worst_ratio.max(value / grad_norm);
        }
    }
    Ok(ConstructionReport {
        holds,
        worst_ratio,
        samples,
    })
}

/// Time derivative of `B` along the state velocity `xdot`.
pub fn barrier_rate<B: BarrierLyapunov + ?Sized>(barrier: &B, x: &DVector<f64>, xdot: &DVector<f64>) -> Result<f64> {
    check_dim("barrier_rate velocity", barrier.dim(), xdot.len())?;
    Ok(barrier.gradient(x)?.dot(xdot))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn box4() -> RectangularBarrier {
        RectangularBarrier::uniform(4, 5.0, 5.0).unwrap()
    }

    fn unit() -> RectangularBarrier {
        RectangularBarrier::uniform(1, 1.0, 0.5).unwrap()
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn membership() {
        assert!(box4().contains(&DVector::zeros(4)).unwrap());
        assert!(!box4().contains(&v(&[5.0, 0.0, 0.0, 0.0])).unwrap());
        assert!(unit().contains(&v(&[0.999])).unwrap());
        assert!(matches!(
            box4().contains(&DVector::zeros(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn values() {
        assert_eq!(box4().value(&DVector::zeros(4)).unwrap(), 0.0);
        assert_relative_eq!(unit().value(&v(&[0.6])).unwrap(), (1.0f64 / 0.64).ln(), epsilon = 1e-14);
        assert_relative_eq!(unit().value(&v(&[0.6])).unwrap(), 0.44629, epsilon = 1e-5);
        assert_relative_eq!(
            box4().value(&v(&[1.0, 0.0, 0.0, 0.0])).unwrap(),
            0.040822,
            epsilon = 1e-6
        );
    }

    #[test]
    fn outside_and_boundary_are_errors() {
        assert!(matches!(
            box4().value(&v(&[5.0, 0.0, 0.0, 0.0])),
            Err(Error::OutsideSafeSet { index: 0, .. })
        ));
        assert!(matches!(
            box4().gradient(&v(&[0.0, -6.0, 0.0, 0.0])),
            Err(Error::OutsideSafeSet { index: 1, .. })
        ));
        assert!(unit().value(&v(&[1.0 - 1e-13])).is_err());
        assert!(unit().value(&v(&[f64::NAN])).is_err());
    }

    #[test]
    fn gradient_values() {
        assert_eq!(box4().gradient(&DVector::zeros(4)).unwrap(), DVector::zeros(4));
        assert_relative_eq!(unit().gradient(&v(&[0.5])).unwrap()[0], 4.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn construction_examples() {
        assert!(verify_construction(&unit(), 10_000, 1).unwrap().holds);
        assert!(verify_construction(&box4(), 10_000, 1).unwrap().holds);
        let tiny = RectangularBarrier::uniform(1, 1.0, 1e-6).unwrap();
        let report = verify_construction(&tiny, 1000, 1).unwrap();
        assert!(!report.holds);
        assert!(report.worst_ratio > 1e-6);
        assert!(verify_construction(&unit(), 0, 1).is_err());
    }

    #[test]
    fn rate_examples() {
        let b = unit();
        assert_eq!(barrier_rate(&b, &v(&[0.3]), &v(&[0.0])).unwrap(), 0.0);
        assert_eq!(
            barrier_rate(&box4(), &DVector::zeros(4), &v(&[1.0, 2.0, 3.0, 4.0])).unwrap(),
            0.0
        );
        assert_relative_eq!(
            barrier_rate(&b, &v(&[0.5]), &v(&[-1.0])).unwrap(),
            -4.0 / 3.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn grows_without_bound_toward_boundary() {
        let b = unit();
        let mut last = 0.0;
        for k in 1..12 {
            let x = 1.0 - 10f64.powi(-k);
            let val = b.value(&v(&[x])).unwrap();
            assert!(val > last);
            last = val;
        }
        assert!(last > 24.0);
    }

    proptest! {
        #[test]
        fn positive_and_outward(x in prop::collection::vec(-4.99f64..4.99, 4)) {
            let b = box4();
            let x = DVector::from_vec(x);
            prop_assume!(x.norm() > 1e-9);
            prop_assert!(b.value(&x).unwrap() > 0.0);
            let g = b.gradient(&x).unwrap();
            for i in 0..4 {
                if x[i] == 0.0 {
                    prop_assert_eq!(g[i], 0.0);
                } else {
                    prop_assert_eq!(g[i].signum(), x[i].signum());
                }
            }
        }

        #[test]
        fn radially_monotone(x in prop::collection::vec(-4.9f64..4.9, 4), i in 0usize..4, step in 0.001f64..0.09) {
            let b = box4();
            let x = DVector::from_vec(x);
            let mut y = x.clone();
            y[i] += step * if x[i] >= 0.0 { 1.0 } else { -1.0 };
            prop_assert!(b.value(&y).unwrap() > b.value(&x).unwrap());
        }
    }
}
