//! Macro-step size control from a posteriori prediction errors.
//!
//! After a step of size `dt` the producer knows how far its published
//! estimate `y~` drifted from the value it actually reached. That residual is
//! normalized (by magnitude, by observed amplitude, or by a damped amplitude),
//! turned into a dilatation candidate `(1/err)^(1/(p+1))` per output, and the
//! most conservative candidate scales the next step.

use serde::{Deserialize, Serialize};

use crate::coupling::TopologyTag;
use crate::error::{Error, Result};

/// Scale used to normalize prediction residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorNorm {
    /// `|y|` at the communication time.
    Magnitude,
    /// Span of every value observed so far.
    Amplitude,
    /// Span of the damped min/max sequences.
    #[default]
    Damped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub tol_rel: f64,
    pub tol_abs: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    /// Damping rate of the amplitude bounds, in 1/s.
    pub nu: f64,
    pub dt_min: f64,
    pub dt_max: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tol_rel: 1e-3,
            tol_abs: 1e-6,
            rho_min: 0.10,
            rho_max: 1.05,
            nu: 0.05,
            dt_min: 1e-2,
            dt_max: f64::INFINITY,
        }
    }
}

impl Tolerances {
    /// Defaults tied to a run: `dt_min = dt0`, `dt_max` a tenth of the horizon.
    pub fn for_run(dt0: f64, t_init: f64, t_end: f64) -> Self {
        Self {
            dt_min: dt0,
            dt_max: (t_end - t_init) / 10.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.tol_rel > 0.0) {
            return fail(format!("tol_rel must be > 0, got {}", self.tol_rel));
        }
        if !(self.tol_abs >= 0.0) {
            return fail(format!("tol_abs must be >= 0, got {}", self.tol_abs));
        }
        if !(self.rho_min > 0.0 && self.rho_min <= 1.0 && self.rho_max >= 1.0) {
            return fail(format!(
                "need 0 < rho_min <= 1 <= rho_max, got [{}, {}]",
                self.rho_min, self.rho_max
            ));
        }
        if !(self.nu >= 0.0) {
            return fail(format!("nu must be >= 0, got {}", self.nu));
        }
        if !(self.dt_min > 0.0 && self.dt_max >= self.dt_min) {
            return fail(format!(
                "need 0 < dt_min <= dt_max, got [{}, {}]",
                self.dt_min, self.dt_max
            ));
        }
        Ok(())
    }
}

/// Running and damped extrema of one output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DampedBounds {
    pub damp_max: f64,
    pub damp_min: f64,
    pub alpha: f64,
    pub global_max: f64,
    pub global_min: f64,
}

impl DampedBounds {
    /// Base case: both sequences start at the first sample, `alpha = 0`.
    pub fn new(y0: f64) -> Self {
        Self {
            damp_max: y0,
            damp_min: y0,
            alpha: 0.0,
            global_max: y0,
            global_min: y0,
        }
    }

    pub fn amplitude(&self) -> f64 {
        self.global_max - self.global_min
    }
}

/// One recursion step of the damped bounds; `dt_prev` is the step that
/// ended with `y_new`.
pub fn update_damped_bounds(b: &DampedBounds, y_new: f64, dt_prev: f64, nu: f64) -> DampedBounds {
    let shrink = 0.5 * nu * dt_prev * b.alpha;
    let damp_max = y_new.max(b.damp_max - shrink);
    let damp_min = y_new.min(b.damp_min + shrink);
    DampedBounds {
        damp_max,
        damp_min,
        alpha: damp_max - damp_min,
        global_max: b.global_max.max(y_new),
        global_min: b.global_min.min(y_new),
    }
}

/// Residual `|y_new - y_pred|` over `tol_abs + tol_rel * scale`. `bounds`
/// must already include `y_new`.
pub fn normalized_error(
    y_new: f64,
    y_pred: f64,
    norm: ErrorNorm,
    bounds: &DampedBounds,
    tol: &Tolerances,
) -> f64 {
    let residual = (y_new - y_pred).abs();
    if residual == 0.0 {
        return 0.0;
    }
    let scale = match norm {
        ErrorNorm::Magnitude => y_new.abs(),
        ErrorNorm::Amplitude => bounds.amplitude().max(0.0),
        ErrorNorm::Damped => bounds.alpha.max(0.0),
    };
    let denom = tol.tol_abs + tol.tol_rel * scale;
    if denom > 0.0 {
        residual / denom
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepProposal {
    pub rho: f64,
    pub dt_next: f64,
    pub t_next_estimated: f64,
}

/// Dilatation candidate for one output: `(1/err)^(1/(order+1))`.
pub fn rho_candidate(error: f64, order: usize) -> f64 {
    if error.is_nan() {
        return 0.0;
    }
    (1.0 / error).powf(1.0 / (order as f64 + 1.0))
}

/// Next-step estimate from per-output normalized errors and the orders used
/// on the step that just finished.
pub fn propose(
    errors: &[f64],
    orders: &[usize],
    dt_prev: f64,
    t_now: f64,
    t_end: f64,
    tol: &Tolerances,
) -> Result<StepProposal> {
    if errors.is_empty() {
        return Err(Error::Usage("step proposal needs at least one output".into()));
    }
    if errors.len() != orders.len() {
        return Err(Error::Usage(format!(
            "{} errors but {} orders",
            errors.len(),
            orders.len()
        )));
    }
    let raw = errors
        .iter()
        .zip(orders)
        .map(|(&e, &p)| rho_candidate(e, p))
        .fold(f64::INFINITY, f64::min);
    let rho = raw.clamp(tol.rho_min, tol.rho_max);
    let dt_next = (rho * dt_prev).clamp(tol.dt_min, tol.dt_max);
    Ok(StepProposal {
        rho,
        dt_next,
        t_next_estimated: (t_now + dt_next).min(t_end),
    })
}

/// Estimated next time for subsystems without outputs; `None` when the
/// subsystem has outputs and [`propose`] applies instead.
pub fn no_output_rule(topology: TopologyTag, t_end: f64) -> Option<f64> {
    match topology {
        TopologyTag::NO | TopologyTag::NINO => Some(t_end),
        TopologyTag::NI | TopologyTag::IO => None,
    }
}

/// First two communication times `(t_init, t_init + dt0)`.
pub fn startup(dt0: f64, t_init: f64) -> Result<(f64, f64)> {
    if !(dt0 > 0.0 && dt0.is_finite()) {
        return Err(Error::Config(format!("initial step dt0 must be > 0, got {dt0}")));
    }
    Ok((t_init, t_init + dt0))
}
