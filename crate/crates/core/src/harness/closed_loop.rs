//! The augmented vector field: plant, critic, covariance, actor, and
//! identifier stacked into one ODE.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};

use crate::barrier::BarrierLyapunov;
use crate::dynamics::ControlAffine;
use crate::error::{check_dim, Error, Result};
use crate::harness::bundle::{Bundle, Layout};
use crate::identifier::{self, IdentifierState};
use crate::learner::{self, ActorState, CriticState};
use crate::value_approx::{self, control_from_costate, input_kernel, CostConfig, FeatureBasis};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerMode {
    /// Barrier-augmented control and actor laws.
    Safe,
    /// Same architecture with the barrier multiplier forced to zero.
    BaselineAci,
}

impl ControllerMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerMode::Safe => "safe",
            ControllerMode::BaselineAci => "baseline_aci",
        }
    }
}

impl std::str::FromStr for ControllerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "safe" => Ok(ControllerMode::Safe),
            "baseline_aci" | "baseline" => Ok(ControllerMode::BaselineAci),
            other => Err(Error::InvalidArgument(format!(
                "unknown controller mode `{other}` (expected safe or baseline_aci)"
            ))),
        }
    }
}

/// Which drift estimate enters the Bellman residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftSource {
    Identifier,
    /// The true plant drift; isolates the learner from identifier error.
    TrueModel,
}

/// Optional probing input added to the applied control.
///
/// `e_j(t) = A exp(-decay t) / 4 * sum_k sin(w_k t + phi_jk)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Excitation {
    pub amplitude: f64,
    pub decay: f64,
}

const EXCITATION_FREQS: [f64; 4] = [0.5, 1.1, 2.3, 4.7];

impl Excitation {
    pub fn is_active(&self) -> bool {
        self.amplitude != 0.0
    }

    pub fn signal(&self, t: f64, m: usize) -> DVector<f64> {
        if !self.is_active() {
            return DVector::zeros(m);
        }
        let envelope = self.amplitude * (-self.decay * t).exp() / EXCITATION_FREQS.len() as f64;
        DVector::from_fn(m, |j, _| {
            EXCITATION_FREQS
                .iter()
                .enumerate()
                .map(|(k, w)| (w * t + (j + 1) as f64 * (k + 1) as f64 * std::f64::consts::FRAC_PI_3).sin())
                .sum::<f64>()
                * envelope
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerGains {
    pub eta_c: f64,
    pub nu: f64,
    pub beta: f64,
    pub eta_a1: f64,
    pub eta_a2: f64,
    pub w_bar: f64,
    pub proj_eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifierGains {
    pub k: f64,
    pub gamma_wf: DMatrix<f64>,
    pub gamma_vf: DMatrix<f64>,
    pub wf_bar: f64,
    pub vf_bar: f64,
    pub proj_eps: f64,
}

/// Everything a rate evaluation produces besides the rate itself.
#[derive(Debug, Clone)]
pub struct RateEval {
    pub rate: DVector<f64>,
    /// Control fed to the plant (policy plus excitation, or the held value).
    pub u_applied: DVector<f64>,
    /// Actor policy evaluated at the current state.
    pub u_policy: DVector<f64>,
    pub delta: f64,
    pub omega: DVector<f64>,
    pub psi: DVector<f64>,
}

/// A fully specified closed-loop system.
#[derive(Clone)]
pub struct ClosedLoop {
    pub plant: Arc<dyn ControlAffine>,
    pub barrier: Arc<dyn BarrierLyapunov>,
    pub cost: CostConfig,
    pub basis: Arc<dyn FeatureBasis>,
    pub learner: LearnerGains,
    pub identifier: IdentifierGains,
    /// Barrier multiplier used in safe mode.
    pub lambda: f64,
    pub mode: ControllerMode,
    pub drift_source: DriftSource,
    pub excitation: Excitation,
    pub hidden: usize,
}

impl ClosedLoop {
    pub fn layout(&self) -> Layout {
        Layout {
            n: self.plant.state_dim(),
            p: self.basis.len(),
            l: self.hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.plant.state_dim();
        check_dim("barrier dimension", n, self.barrier.dim())?;
        check_dim("basis state dimension", n, self.basis.state_dim())?;
        check_dim("R dimension", self.plant.input_dim(), self.cost.input_dim())?;
        check_dim("Gamma_wf", self.hidden, self.identifier.gamma_wf.nrows())?;
        check_dim("Gamma_vf", n, self.identifier.gamma_vf.nrows())?;
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// Barrier multiplier actually applied in the current mode.
    pub fn effective_lambda(&self) -> f64 {
        match self.mode {
            ControllerMode::Safe => self.lambda,
            ControllerMode::BaselineAci => 0.0,
        }
    }

    pub fn critic_state(&self, b: &Bundle) -> CriticState {
        CriticState {
            wc: b.wc.clone(),
            gamma: b.gamma.clone(),
            eta_c: self.learner.eta_c,
            nu: self.learner.nu,
            beta: self.learner.beta,
        }
    }

    pub fn actor_state(&self, b: &Bundle) -> ActorState {
        ActorState {
            wa: b.wa.clone(),
            eta_a1: self.learner.eta_a1,
            eta_a2: self.learner.eta_a2,
            w_bar: self.learner.w_bar,
            proj_eps: self.learner.proj_eps,
        }
    }

    pub fn identifier_state(&self, b: &Bundle) -> IdentifierState {
        IdentifierState {
            wf: b.wf.clone(),
            vf: b.vf.clone(),
            x_hat: b.x_hat.clone(),
            k: self.identifier.k,
            gamma_wf: self.identifier.gamma_wf.clone(),
            gamma_vf: self.identifier.gamma_vf.clone(),
            wf_bar: self.identifier.wf_bar,
            vf_bar: self.identifier.vf_bar,
            proj_eps: self.identifier.proj_eps,
        }
    }

    /// Initial bundle: `x0`, `x_hat0`, `Gamma = gamma0 I`, and critic, actor,
    /// and identifier weights drawn uniformly from `init_range` in that order.
    pub fn initial_bundle(
        &self,
        x0: &DVector<f64>,
        x_hat0: &DVector<f64>,
        gamma0: f64,
        init_range: (f64, f64),
        rng: &mut dyn RngCore,
    ) -> Result<Bundle> {
        let layout = self.layout();
        check_dim("x0", layout.n, x0.len())?;
        check_dim("x_hat0", layout.n, x_hat0.len())?;
        let (lo, hi) = init_range;
        if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad weight init range [{lo}, {hi}]")));
        }
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len)
                .map(|_| if lo == hi { lo } else { rng.random_range(lo..=hi) })
                .collect()
        };
        let Layout { n, p, l } = layout;
        Ok(Bundle {
            x: x0.clone(),
            x_hat: x_hat0.clone(),
            wc: DVector::from_vec(draw(p)),
            gamma: DMatrix::identity(p, p) * gamma0,
            wa: DVector::from_vec(draw(p)),
            wf: DMatrix::from_vec(l, n, draw(l * n)),
            vf: DMatrix::from_vec(n, l, draw(n * l)),
        })
    }

    /// Time derivative of the packed closed-loop state.
    ///
    /// The policy is evaluated once and shared by every sub-law. With
    /// `held_u` set, the plant and identifier see that control instead of
    /// the current policy (sample-and-hold); learning still uses the policy.
    pub fn augmented_rate(&self, t: f64, y: &DVector<f64>, held_u: Option<&DVector<f64>>) -> Result<RateEval> {
        let layout = self.layout();
        check_dim("augmented state", layout.len(), y.len())?;
        let b = layout.unpack(y);
        let x = &b.x;
        let lambda = self.effective_lambda();

        if self.mode == ControllerMode::Safe && !self.barrier.contains(x)? {
            // Reuse the barrier's own error reporting for the offending coordinate.
            self.barrier.gradient(x)?;
            return Err(Error::InvalidArgument("state left the safe set".into()));
        }

        let (f, g) = self.plant.evaluate(x)?;
        let jac = self.basis.jacobian(x)?;
        let grad_b = if lambda > 0.0 {
            self.barrier.gradient(x)?
        } else {
            DVector::zeros(layout.n)
        };
        let r_inv = self.cost.r_inv();

        let u_policy = control_from_costate(r_inv, &g, &(jac.tr_mul(&b.wa) + &grad_b * lambda));
        let m = u_policy.len();
        let u_applied = held_u.unwrap_or(&u_policy) + self.excitation.signal(t, m);

        let id_state = self.identifier_state(&b);
        let f_id = identifier::estimated_drift(&id_state, x)?;
        let f_hat = match self.drift_source {
            DriftSource::Identifier => &f_id,
            DriftSource::TrueModel => &f,
        };

        let (delta, omega) =
            value_approx::bellman_residual_from_parts(&self.cost, &jac, f_hat, &g, &b.wc, x, &u_policy);
        let lg = &self.learner;
        let (wc_rate, gamma_rate, psi) =
            learner::critic_rates_from_parts(&b.gamma, lg.eta_c, lg.nu, lg.beta, &omega, delta);

        let rg = input_kernel(r_inv, &g);
        let actor = self.actor_state(&b);
        let wa_rate = learner::actor_rate_from_parts(&actor, &b.wc, &rg, &jac, &grad_b, &omega, delta, lambda)?;

        let x_rate = &f + &g * &u_applied;
        let x_hat_rate = identifier::estimator_rate_from_parts(&id_state, &f_id, &g, x, &u_applied);
        let x_tilde = x - &b.x_hat;
        let (wf_rate, vf_rate) = identifier::weight_rates_unchecked(&id_state, x, &x_tilde);

        let rate = layout.pack(&Bundle {
            x: x_rate,
            x_hat: x_hat_rate,
            wc: wc_rate,
            gamma: gamma_rate,
            wa: wa_rate,
            wf: wf_rate,
            vf: vf_rate,
        });
        Ok(RateEval {
            rate,
            u_applied,
            u_policy,
            delta,
            omega,
            psi,
        })
    }
}
