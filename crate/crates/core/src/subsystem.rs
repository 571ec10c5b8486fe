//! Subsystem contract `dx/dt = f(t, x, u)`, `y = g(t, x, u)` and the fixed-step
//! RK4 micro-integrator that advances a subsystem between communication times.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coupling::{classify, TopologyTag, MAX_ORDER};
use crate::error::SubsystemError;
use crate::poly::{Polynomial, MAX_DEGREE};

/// Right-hand side and output map of an ODE subsystem.
pub trait Dynamics: Send + Sync + fmt::Debug {
    fn derivative(&self, t: f64, x: &[f64], u: &[f64], dx: &mut [f64]);
    fn output(&self, t: f64, x: &[f64], u: &[f64], y: &mut [f64]);
}

#[derive(Debug, Clone)]
pub struct SubsystemSpec {
    pub label: String,
    pub n_st: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub x_init: Vec<f64>,
    pub dynamics: Arc<dyn Dynamics>,
}

impl SubsystemSpec {
    pub fn new(
        label: impl Into<String>,
        n_in: usize,
        n_out: usize,
        x_init: Vec<f64>,
        dynamics: Arc<dyn Dynamics>,
    ) -> Self {
        Self {
            label: label.into(),
            n_st: x_init.len(),
            n_in,
            n_out,
            x_init,
            dynamics,
        }
    }

    pub fn topology(&self) -> TopologyTag {
        classify(self.n_in, self.n_out)
    }

    /// Evaluates `g` with input values already sampled at `t`.
    pub fn output_at(&self, t: f64, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_out];
        self.dynamics.output(t, x, u, &mut y);
        y
    }
}

/// What the subsystem's host platform supports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capabilities {
    /// Highest input polynomial degree accepted (`m_k`).
    pub max_input_degree: usize,
    pub variable_step: bool,
    /// Fixed communication grid spacing, when the platform imposes one.
    pub imposed_step: Option<f64>,
}

impl Default for Capabilities {
    fn default() -> Self {
        Self {
            max_input_degree: MAX_DEGREE,
            variable_step: true,
            imposed_step: None,
        }
    }
}

impl Capabilities {
    pub fn imposed(step: f64) -> Self {
        Self {
            max_input_degree: MAX_DEGREE,
            variable_step: false,
            imposed_step: Some(step),
        }
    }

    pub fn with_max_input_degree(mut self, m: usize) -> Self {
        self.max_input_degree = m;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.imposed_step {
            Some(_) if self.variable_step => {
                Err("imposed_step requires variable_step = false".into())
            }
            Some(h) if !(h > 0.0 && h.is_finite()) => {
                Err(format!("imposed_step must be positive, got {h}"))
            }
            _ => Ok(()),
        }
    }

    /// Inputs of degree 3 are required for C1 smoothing.
    pub fn smoothing_eligible(&self) -> bool {
        self.max_input_degree >= MAX_DEGREE
    }
}

/// `M_k = min(M, m_k)`: the degree ceiling for non-smoothed inputs.
pub fn effective_max_degree(caps: &Capabilities) -> usize {
    caps.max_input_degree.min(MAX_ORDER)
}

/// Degree ceiling when smoothing is active.
pub fn smoothing_max_degree(caps: &Capabilities) -> usize {
    caps.max_input_degree.min(MAX_DEGREE)
}

/// Fixed-step RK4 settings: `h = min(macro / steps_per_macro, max_step)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroSolver {
    pub max_step: f64,
    pub steps_per_macro: usize,
}

impl Default for MicroSolver {
    fn default() -> Self {
        Self {
            max_step: 1e-3,
            steps_per_macro: 50,
        }
    }
}

impl MicroSolver {
    pub fn step_for(&self, macro_step: f64) -> f64 {
        (macro_step / self.steps_per_macro as f64).min(self.max_step)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroStepResult {
    pub t_reached: f64,
    pub outputs: Vec<f64>,
}

/// Advances `state` from `t_start` to exactly `t_target` holding `inputs` as
/// continuous polynomials of time. `observer` sees every micro-step end.
#[allow(clippy::too_many_arguments)]
pub fn step_to_observed(
    spec: &SubsystemSpec,
    caps: &Capabilities,
    state: &[f64],
    inputs: &[Polynomial],
    t_start: f64,
    t_target: f64,
    smoothing: bool,
    micro: &MicroSolver,
    observer: &mut dyn FnMut(f64, &[f64]),
) -> Result<(Vec<f64>, MacroStepResult), SubsystemError> {
    let violation = |detail: String| SubsystemError::ContractViolation {
        label: spec.label.clone(),
        detail,
    };
    if !(t_target > t_start) {
        return Err(violation(format!(
            "step to t = {t_target} does not advance from t = {t_start}"
        )));
    }
    if inputs.len() != spec.n_in {
        return Err(violation(format!(
            "expected {} inputs, got {}",
            spec.n_in,
            inputs.len()
        )));
    }
    if state.len() != spec.n_st {
        return Err(violation(format!(
            "expected {} states, got {}",
            spec.n_st,
            state.len()
        )));
    }
    let limit = if smoothing {
        smoothing_max_degree(caps)
    } else {
        effective_max_degree(caps)
    };
    if let Some((i, p)) = inputs.iter().enumerate().find(|(_, p)| p.degree() > limit) {
        return Err(violation(format!(
            "input {i} has degree {} above the supported {limit}",
            p.degree()
        )));
    }

    let span = t_target - t_start;
    let h = micro.step_for(span);
    let n_steps = ((span / h) - 1e-9).ceil().max(1.0) as usize;

    let n = spec.n_st;
    let mut x = state.to_vec();
    let mut u = vec![0.0; spec.n_in];
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let f = &spec.dynamics;
    let sample = |t: f64, u: &mut [f64]| {
        for (slot, p) in u.iter_mut().zip(inputs) {
            *slot = p.eval(t);
        }
    };

    for i in 0..n_steps {
        let t0 = t_start + i as f64 * h;
        let t1 = if i + 1 == n_steps {
            t_target
        } else {
            t_start + (i + 1) as f64 * h
        };
        let dt = t1 - t0;
        let tm = t0 + 0.5 * dt;

        sample(t0, &mut u);
        f.derivative(t0, &x, &u, &mut k1);
        for j in 0..n {
            tmp[j] = x[j] + 0.5 * dt * k1[j];
        }
        sample(tm, &mut u);
        f.derivative(tm, &tmp, &u, &mut k2);
        for j in 0..n {
            tmp[j] = x[j] + 0.5 * dt * k2[j];
        }
        f.derivative(tm, &tmp, &u, &mut k3);
        for j in 0..n {
            tmp[j] = x[j] + dt * k3[j];
        }
        sample(t1, &mut u);
        f.derivative(t1, &tmp, &u, &mut k4);
        for j in 0..n {
            x[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SubsystemError::Divergence {
                label: spec.label.clone(),
                last_good_time: t0,
            });
        }
        observer(t1, &x);
    }

    sample(t_target, &mut u);
    let outputs = spec.output_at(t_target, &x, &u);
    if outputs.iter().any(|v| !v.is_finite()) {
        return Err(SubsystemError::Divergence {
            label: spec.label.clone(),
            last_good_time: t_target,
        });
    }
    Ok((
        x,
        MacroStepResult {
            t_reached: t_target,
            outputs,
        },
    ))
}

/// [`step_to_observed`] without a micro-step observer.
#[allow(clippy::too_many_arguments)]
pub fn step_to(
    spec: &SubsystemSpec,
    caps: &Capabilities,
    state: &[f64],
    inputs: &[Polynomial],
    t_start: f64,
    t_target: f64,
    smoothing: bool,
    micro: &MicroSolver,
) -> Result<(Vec<f64>, MacroStepResult), SubsystemError> {
    step_to_observed(
        spec,
        caps,
        state,
        inputs,
        t_start,
        t_target,
        smoothing,
        micro,
        &mut |_, _| {},
    )
}
