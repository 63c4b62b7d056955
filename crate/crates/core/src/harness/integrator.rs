use nalgebra::DVector;

use crate::error::{Error, Result};

/// One classical fourth-order Runge-Kutta step of `y' = f(t, y)`.
pub fn rk4_step<F>(mut rate: F, t: f64, y: &DVector<f64>, dt: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let k1 = rate(t, y)?;
    rk4_step_from(rate, t, y, dt, k1)
}

/// RK4 step reusing an already evaluated first stage `k1 = f(t, y)`.
pub(crate) fn rk4_step_from<F>(mut rate: F, t: f64, y: &DVector<f64>, dt: f64, k1: DVector<f64>) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    let half = 0.5 * dt;
    let k2 = rate(t + half, &(y + &k1 * half))?;
    let k3 = rate(t + half, &(y + &k2 * half))?;
    let k4 = rate(t + dt, &(y + &k3 * dt))?;
    let next = y + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0);
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::NonFinite {
            t: t + dt,
            dump: String::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exponential_decay_single_step() {
        let y = DVector::from_element(1, 1.0);
        let next = rk4_step(|_, y| Ok(-y), 0.0, &y, 0.1).unwrap();
        assert_relative_eq!(next[0], 0.9048375, epsilon = 1e-7);
        assert!((next[0] - (-0.1f64).exp()).abs() < 2e-7);
    }

    #[test]
    fn zero_rate_is_identity() {
        let y = DVector::from_column_slice(&[1.0, -2.0, 3.5]);
        let next = rk4_step(|_, y| Ok(DVector::zeros(y.len())), 0.0, &y, 0.5).unwrap();
        assert_eq!(next, y);
    }

    #[test]
    fn rejects_bad_step_and_blowup() {
        let y = DVector::from_element(1, 1.0);
        assert!(rk4_step(|_, y| Ok(-y), 0.0, &y, 0.0).is_err());
        assert!(matches!(
            rk4_step(|_, y| Ok(y.map(|v| v * 1e308)), 0.0, &y, 10.0),
            Err(Error::NonFinite { .. })
        ));
    }

    fn oscillator_error(dt: f64) -> f64 {
        // y'' = -y over one period, starting at (1, 0).
        let period = 2.0 * std::f64::consts::PI;
        let steps = (period / dt).round() as usize;
        let dt = period / steps as f64;
        let mut y = DVector::from_column_slice(&[1.0, 0.0]);
        for k in 0..steps {
            y = rk4_step(
                |_, y| Ok(DVector::from_column_slice(&[y[1], -y[0]])),
                k as f64 * dt,
                &y,
                dt,
            )
            .unwrap();
        }
        ((y[0] - 1.0).powi(2) + y[1].powi(2)).sqrt()
    }

    #[test]
    fn fourth_order_convergence() {
        let e1 = oscillator_error(0.2);
        let e2 = oscillator_error(0.1);
        let ratio = e1 / e2;
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }
}
