//! Flat dotted-key experiment configuration.
//!
//! Files are `key = value` lines (TOML syntax, so `[section]` headers work
//! too). Every key has a default declared here; unknown keys are rejected.
//! Overrides apply in the order: defaults, file, environment
//! (`SAFE_ACI_<SECTION>__<KEY>`), then explicit `key=value` pairs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use toml::Value;

use crate::barrier::RectangularBarrier;
use crate::dynamics::ManipulatorParams;
use crate::error::{Error, Result};
use crate::harness::{EpisodeConfig, Excitation, IdentifierGains, LearnerGains};
use crate::value_approx::CostConfig;

pub const ENV_PREFIX: &str = "SAFE_ACI_";

#[derive(Debug, Clone, PartialEq)]
pub enum ControlWeight {
    Identity,
    Scaled(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub plant: [f64; 5],
    pub barrier_a: Vec<f64>,
    pub barrier_gamma: f64,
    pub cost_r: ControlWeight,
    pub critic_p: usize,
    pub critic_inner_scale: f64,
    pub lambda: f64,
    pub eta_c: f64,
    pub eta_a1: f64,
    pub eta_a2: f64,
    pub nu: f64,
    pub beta: f64,
    /// `None` resolves to `3 sqrt(p)`.
    pub w_bar: Option<f64>,
    pub proj_eps: f64,
    pub id_l: usize,
    pub id_k: f64,
    pub id_gamma_wf: f64,
    pub id_gamma_vf: f64,
    pub id_wf_bar: f64,
    pub id_vf_bar: f64,
    pub id_proj_eps: f64,
    pub episode: EpisodeConfig,
    pub excitation: Excitation,
    pub norm_ceiling: f64,
    pub compare_window: f64,
    pub sweep_seeds: u64,
    pub construction_samples: usize,
    pub certificate_samples: usize,
    pub verify_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let p = ManipulatorParams::default();
        Self {
            plant: [p.p1(), p.p2(), p.p3(), p.fd1(), p.fd2()],
            barrier_a: vec![5.0; 4],
            barrier_gamma: 5.0,
            cost_r: ControlWeight::Identity,
            critic_p: 30,
            critic_inner_scale: 1.0,
            lambda: 100.0,
            eta_c: 2.0,
            eta_a1: 1.0,
            eta_a2: 50.0,
            nu: 5.0,
            beta: 0.001,
            w_bar: None,
            proj_eps: 0.1,
            id_l: 5,
            id_k: 10.0,
            id_gamma_wf: 10.0,
            id_gamma_vf: 10.0,
            id_wf_bar: 10.0,
            id_vf_bar: 10.0,
            id_proj_eps: 0.1,
            episode: EpisodeConfig::default(),
            excitation: Excitation::default(),
            norm_ceiling: 1e6,
            compare_window: 2.0,
            sweep_seeds: 50,
            construction_samples: 100_000,
            certificate_samples: 100_000,
            verify_seed: 0,
        }
    }
}

/// Every recognized key, in snapshot order.
pub const KEYS: &[&str] = &[
    "plant.p1",
    "plant.p2",
    "plant.p3",
    "plant.fd1",
    "plant.fd2",
    "barrier.a",
    "barrier.gamma",
    "cost.R",
    "critic.p",
    "critic.inner_scale",
    "safety.lambda",
    "learner.eta_c",
    "learner.eta_a1",
    "learner.eta_a2",
    "learner.nu",
    "learner.beta",
    "learner.W_bar",
    "learner.proj_eps",
    "learner.gamma_max",
    "learner.gamma_reset",
    "identifier.l",
    "identifier.k",
    "identifier.gamma_wf",
    "identifier.gamma_vf",
    "identifier.wf_bar",
    "identifier.vf_bar",
    "identifier.proj_eps",
    "episode.dt",
    "episode.T",
    "episode.seed",
    "episode.x0",
    "episode.xhat0",
    "episode.mode",
    "episode.weight_init_range",
    "episode.gamma0",
    "episode.decimate",
    "episode.stop_on_violation",
    "episode.zoh",
    "episode.pe_window",
    "excitation.amplitude",
    "excitation.decay",
    "monitor.norm_ceiling",
    "compare.window",
    "sweep.seeds",
    "verify.construction_samples",
    "verify.certificate_samples",
    "verify.seed",
];

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::config(key, format!("expected a number, got {v}"))),
    }
}

fn as_pos(key: &str, v: &Value) -> Result<f64> {
    let f = as_f64(key, v)?;
    if f.is_finite() && f > 0.0 {
        Ok(f)
    } else {
        Err(Error::config(key, format!("must be > 0, got {f}")))
    }
}

fn as_nonneg(key: &str, v: &Value) -> Result<f64> {
    let f = as_f64(key, v)?;
    if f.is_finite() && f >= 0.0 {
        Ok(f)
    } else {
        Err(Error::config(key, format!("must be >= 0, got {f}")))
    }
}

fn as_uint(key: &str, v: &Value) -> Result<u64> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(Error::config(key, format!("expected a non-negative integer, got {v}"))),
    }
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool()
        .ok_or_else(|| Error::config(key, format!("expected true or false, got {v}")))
}

fn as_vec(key: &str, v: &Value) -> Result<Vec<f64>> {
    match v {
        Value::Array(items) => items.iter().map(|x| as_f64(key, x)).collect(),
        _ => Err(Error::config(key, format!("expected a list of numbers, got {v}"))),
    }
}

fn num(f: f64) -> Value {
    Value::Float(f)
}

fn list(xs: &[f64]) -> Value {
    Value::Array(xs.iter().copied().map(Value::Float).collect())
}

/// Parses a bare value the way it would appear on the right of `=`.
/// Anything that is not valid TOML is taken as a string.
pub fn parse_value(raw: &str) -> Value {
    let raw = raw.trim();
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

fn canonical_key(key: &str) -> Option<&'static str> {
    KEYS.iter().copied().find(|k| k.eq_ignore_ascii_case(key))
}

impl ExperimentConfig {
    /// Applies one key. Keys match case-insensitively.
    pub fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        let key = canonical_key(key).ok_or_else(|| Error::config(key, "unknown key"))?;
        match key {
            "plant.p1" => self.plant[0] = as_pos(key, v)?,
            "plant.p2" => self.plant[1] = as_pos(key, v)?,
            "plant.p3" => self.plant[2] = as_pos(key, v)?,
            "plant.fd1" => self.plant[3] = as_nonneg(key, v)?,
            "plant.fd2" => self.plant[4] = as_nonneg(key, v)?,
            "barrier.a" => self.barrier_a = as_vec(key, v)?,
            "barrier.gamma" => self.barrier_gamma = as_pos(key, v)?,
            "cost.R" => {
                self.cost_r = match v {
                    Value::String(s) if s == "identity" => ControlWeight::Identity,
                    Value::Array(rows) if rows.iter().all(|r| r.is_array()) => {
                        ControlWeight::Matrix(rows.iter().map(|r| as_vec(key, r)).collect::<Result<_>>()?)
                    }
                    other => ControlWeight::Scaled(as_pos(key, other)?),
                }
            }
            "critic.p" => self.critic_p = as_uint(key, v)? as usize,
            "critic.inner_scale" => self.critic_inner_scale = as_pos(key, v)?,
            "safety.lambda" => self.lambda = as_nonneg(key, v)?,
            "learner.eta_c" => self.eta_c = as_pos(key, v)?,
            "learner.eta_a1" => self.eta_a1 = as_pos(key, v)?,
            "learner.eta_a2" => self.eta_a2 = as_pos(key, v)?,
            "learner.nu" => self.nu = as_pos(key, v)?,
            "learner.beta" => self.beta = as_nonneg(key, v)?,
            "learner.W_bar" => self.w_bar = Some(as_pos(key, v)?),
            "learner.proj_eps" => self.proj_eps = as_pos(key, v)?,
            "learner.gamma_max" => self.episode.gamma_max = as_nonneg(key, v)?,
            "learner.gamma_reset" => self.episode.gamma_reset = as_bool(key, v)?,
            "identifier.l" => self.id_l = as_uint(key, v)? as usize,
            "identifier.k" => self.id_k = as_pos(key, v)?,
            "identifier.gamma_wf" => self.id_gamma_wf = as_pos(key, v)?,
            "identifier.gamma_vf" => self.id_gamma_vf = as_pos(key, v)?,
            "identifier.wf_bar" => self.id_wf_bar = as_pos(key, v)?,
            "identifier.vf_bar" => self.id_vf_bar = as_pos(key, v)?,
            "identifier.proj_eps" => self.id_proj_eps = as_pos(key, v)?,
            "episode.dt" => self.episode.dt = as_pos(key, v)?,
            "episode.T" => self.episode.horizon = as_nonneg(key, v)?,
            "episode.seed" => self.episode.seed = as_uint(key, v)?,
            "episode.x0" => self.episode.x0 = as_vec(key, v)?,
            "episode.xhat0" => {
                self.episode.x_hat0 = match v {
                    Value::String(s) if s == "x0" => None,
                    other => Some(as_vec(key, other)?),
                }
            }
            "episode.mode" => {
                let s = v
                    .as_str()
                    .ok_or_else(|| Error::config(key, "expected \"safe\" or \"baseline_aci\""))?;
                self.episode.mode = s.parse().map_err(|e: Error| Error::config(key, e.to_string()))?;
            }
            "episode.weight_init_range" => {
                let r = as_vec(key, v)?;
                if r.len() != 2 || !(r[0] <= r[1]) {
                    return Err(Error::config(key, "expected [lo, hi] with lo <= hi"));
                }
                self.episode.weight_init_range = (r[0], r[1]);
            }
            "episode.gamma0" => self.episode.gamma0 = as_pos(key, v)?,
            "episode.decimate" => {
                let d = as_uint(key, v)?;
                if d == 0 {
                    return Err(Error::config(key, "must be >= 1"));
                }
                self.episode.decimate = d as usize;
            }
            "episode.stop_on_violation" => self.episode.stop_on_violation = as_bool(key, v)?,
            "episode.zoh" => self.episode.zoh = as_bool(key, v)?,
            "episode.pe_window" => self.episode.pe_window = as_nonneg(key, v)?,
            "excitation.amplitude" => self.excitation.amplitude = as_nonneg(key, v)?,
            "excitation.decay" => self.excitation.decay = as_nonneg(key, v)?,
            "monitor.norm_ceiling" => self.norm_ceiling = as_pos(key, v)?,
            "compare.window" => self.compare_window = as_pos(key, v)?,
            "sweep.seeds" => self.sweep_seeds = as_uint(key, v)?,
            "verify.construction_samples" => self.construction_samples = as_uint(key, v)?.max(1) as usize,
            "verify.certificate_samples" => self.certificate_samples = as_uint(key, v)? as usize,
            "verify.seed" => self.verify_seed = as_uint(key, v)?,
            _ => unreachable!("key table and setter out of sync: {key}"),
        }
        Ok(())
    }

    /// Applies every entry of a TOML document.
    pub fn apply_toml(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<file>", e.to_string()))?;
        let mut entries = Vec::new();
        flatten("", &table, &mut entries);
        for (k, v) in entries {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::default();
        cfg.apply_toml(&text)?;
        Ok(cfg)
    }

    /// Applies `SAFE_ACI_<SECTION>__<KEY>=value` pairs.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<()> {
        let mut pairs: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|rest| (rest.replace("__", "."), v)))
            .collect();
        pairs.sort();
        for (k, v) in pairs {
            self.set(&k, &parse_value(&v))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::config(pair, "override must look like key=value"))?;
        self.set(k.trim(), &parse_value(v))
    }

    pub fn resolved_w_bar(&self) -> f64 {
        self.w_bar.unwrap_or(3.0 * (self.critic_p as f64).sqrt())
    }

    /// Every key with its effective value, defaults included.
    pub fn entries(&self) -> BTreeMap<&'static str, Value> {
        let e = &self.episode;
        let mut m = BTreeMap::new();
        let names = ["plant.p1", "plant.p2", "plant.p3", "plant.fd1", "plant.fd2"];
        for (k, v) in names.iter().zip(self.plant) {
            m.insert(*k, num(v));
        }
        m.insert("barrier.a", list(&self.barrier_a));
        m.insert("barrier.gamma", num(self.barrier_gamma));
        m.insert(
            "cost.R",
            match &self.cost_r {
                ControlWeight::Identity => Value::String("identity".into()),
                ControlWeight::Scaled(s) => num(*s),
                ControlWeight::Matrix(rows) => Value::Array(rows.iter().map(|r| list(r)).collect()),
            },
        );
        m.insert("critic.p", Value::Integer(self.critic_p as i64));
        m.insert("critic.inner_scale", num(self.critic_inner_scale));
        m.insert("safety.lambda", num(self.lambda));
        m.insert("learner.eta_c", num(self.eta_c));
        m.insert("learner.eta_a1", num(self.eta_a1));
        m.insert("learner.eta_a2", num(self.eta_a2));
        m.insert("learner.nu", num(self.nu));
        m.insert("learner.beta", num(self.beta));
        m.insert("learner.W_bar", num(self.resolved_w_bar()));
        m.insert("learner.proj_eps", num(self.proj_eps));
        m.insert("learner.gamma_max", num(e.gamma_max));
        m.insert("learner.gamma_reset", Value::Boolean(e.gamma_reset));
        m.insert("identifier.l", Value::Integer(self.id_l as i64));
        m.insert("identifier.k", num(self.id_k));
        m.insert("identifier.gamma_wf", num(self.id_gamma_wf));
        m.insert("identifier.gamma_vf", num(self.id_gamma_vf));
        m.insert("identifier.wf_bar", num(self.id_wf_bar));
        m.insert("identifier.vf_bar", num(self.id_vf_bar));
        m.insert("identifier.proj_eps", num(self.id_proj_eps));
        m.insert("episode.dt", num(e.dt));
        m.insert("episode.T", num(e.horizon));
        m.insert("episode.seed", Value::Integer(e.seed as i64));
        m.insert("episode.x0", list(&e.x0));
        m.insert(
            "episode.xhat0",
            e.x_hat0.as_ref().map_or(Value::String("x0".into()), |v| list(v)),
        );
        m.insert("episode.mode", Value::String(e.mode.as_str().into()));
        m.insert(
            "episode.weight_init_range",
            list(&[e.weight_init_range.0, e.weight_init_range.1]),
        );
        m.insert("episode.gamma0", num(e.gamma0));
        m.insert("episode.decimate", Value::Integer(e.decimate as i64));
        m.insert("episode.stop_on_violation", Value::Boolean(e.stop_on_violation));
        m.insert("episode.zoh", Value::Boolean(e.zoh));
        m.insert("episode.pe_window", num(e.pe_window));
        m.insert("excitation.amplitude", num(self.excitation.amplitude));
        m.insert("excitation.decay", num(self.excitation.decay));
        m.insert("monitor.norm_ceiling", num(self.norm_ceiling));
        m.insert("compare.window", num(self.compare_window));
        m.insert("sweep.seeds", Value::Integer(self.sweep_seeds as i64));
        m.insert(
            "verify.construction_samples",
            Value::Integer(self.construction_samples as i64),
        );
        m.insert(
            "verify.certificate_samples",
            Value::Integer(self.certificate_samples as i64),
        );
        m.insert("verify.seed", Value::Integer(self.verify_seed as i64));
        m
    }

    /// Resolved configuration as `key = value` lines, in [`KEYS`] order.
    pub fn to_snapshot(&self) -> String {
        let entries = self.entries();
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", entries[key]);
        }
        out
    }

    pub fn manipulator(&self) -> Result<ManipulatorParams> {
        let [p1, p2, p3, fd1, fd2] = self.plant;
        ManipulatorParams::new(p1, p2, p3, fd1, fd2).map_err(|e| Error::config("plant", e.to_string()))
    }

    pub fn barrier(&self) -> Result<RectangularBarrier> {
        RectangularBarrier::new(DVector::from_column_slice(&self.barrier_a), self.barrier_gamma)
            .map_err(|e| Error::config("barrier.a", e.to_string()))
    }

    pub fn cost(&self, m: usize) -> Result<CostConfig> {
        let r = match &self.cost_r {
            ControlWeight::Identity => DMatrix::identity(m, m),
            ControlWeight::Scaled(s) => DMatrix::identity(m, m) * *s,
            ControlWeight::Matrix(rows) => {
                if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                    return Err(Error::config("cost.R", format!("expected a {m}x{m} matrix")));
                }
                DMatrix::from_fn(m, m, |i, j| rows[i][j])
            }
        };
        CostConfig::quadratic(r).map_err(|e| Error::config("cost.R", e.to_string()))
    }

    pub fn learner_gains(&self) -> LearnerGains {
        LearnerGains {
            eta_c: self.eta_c,
            nu: self.nu,
            beta: self.beta,
            eta_a1: self.eta_a1,
            eta_a2: self.eta_a2,
            w_bar: self.resolved_w_bar(),
            proj_eps: self.proj_eps,
        }
    }

    pub fn identifier_gains(&self, n: usize) -> IdentifierGains {
        IdentifierGains {
            k: self.id_k,
            gamma_wf: DMatrix::identity(self.id_l, self.id_l) * self.id_gamma_wf,
            gamma_vf: DMatrix::identity(n, n) * self.id_gamma_vf,
            wf_bar: self.id_wf_bar,
            vf_bar: self.id_vf_bar,
            proj_eps: self.id_proj_eps,
        }
    }

    /// Cross-key checks that single-key parsing cannot do.
    pub fn validate(&self) -> Result<()> {
        if self.barrier_a.len() != 4 {
            return Err(Error::config("barrier.a", "the manipulator needs 4 half-widths"));
        }
        if self.episode.x0.len() != 4 {
            return Err(Error::config("episode.x0", "the manipulator needs a 4-element state"));
        }
        if let Some(xh) = &self.episode.x_hat0 {
            if xh.len() != 4 {
                return Err(Error::config("episode.xhat0", "expected 4 elements"));
            }
        }
        if self.critic_p == 0 {
            return Err(Error::config("critic.p", "must be >= 1"));
        }
        if self.id_l == 0 {
            return Err(Error::config("identifier.l", "must be >= 1"));
        }
        if self.certificate_samples < 1000 {
            return Err(Error::config("verify.certificate_samples", "must be >= 1000"));
        }
        self.manipulator()?;
        self.barrier()?;
        self.cost(2)?;
        self.episode.validate()
    }
}
