//! Flexible order selection for each output and the estimated-output
//! polynomials built from it.
//!
//! After every communication the producer compares its newest value against
//! extrapolations of order `0..=min(M, n-1)` calibrated on the preceding
//! samples only. The order with the smallest a posteriori error is used for
//! the next window, which is why the estimate for a window only ever depends
//! on data available when the window starts.

use serde::{Deserialize, Serialize};

use crate::coupling::{SampleHistory, MAX_ORDER};
use crate::error::{Error, Result, SequencingError};
use crate::poly::{
    fit_constrained_least_squares, fit_extrapolation, CalibrationPoints, Polynomial,
};

/// How an estimated output is calibrated once its order is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMode {
    /// Exact fit through the `q + 1` newest samples.
    #[default]
    Extrapolation,
    /// Least squares over the `q + 2` newest samples, exact at the newest.
    Cls,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderDecision {
    pub order: usize,
    /// `candidate_errors[q]` is the absolute error of the order-`q` extrapolant.
    pub candidate_errors: Vec<f64>,
    /// Start of the window this order applies to (time of the new sample).
    pub valid_from: f64,
}

/// The estimate `y~` published by a producer for the window starting at
/// `window_start`; it stays evaluable on the whole real line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatedOutput {
    pub poly: Polynomial,
    pub window_start: f64,
    /// Mode actually used (CLS falls back to extrapolation on short histories).
    pub mode: CalibrationMode,
}

impl EstimatedOutput {
    pub fn order(&self) -> usize {
        self.poly.degree()
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.poly.eval(t)
    }
}

/// Chooses the order for the window starting at the new sample's time.
/// `history` holds the samples strictly before `new_sample`.
pub fn select_order(history: &SampleHistory, new_sample: (f64, f64)) -> Result<OrderDecision> {
    select_order_capped(history, new_sample, MAX_ORDER)
}

/// [`select_order`] with the admissible range further limited to `max_order`.
pub fn select_order_capped(
    history: &SampleHistory,
    new_sample: (f64, f64),
    max_order: usize,
) -> Result<OrderDecision> {
    let n = history.len();
    if n == 0 {
        return Err(Error::Usage(
            "order selection needs at least one completed exchange".into(),
        ));
    }
    let (t_new, y_new) = new_sample;
    if let Some((t_last, _)) = history.newest() {
        if !(t_new > t_last) {
            return Err(SequencingError::NonIncreasingTime {
                time: t_new,
                last: t_last,
            }
            .into());
        }
    }
    let top = max_order.min(MAX_ORDER).min(n - 1);
    let mut candidate_errors = Vec::with_capacity(top + 1);
    for q in 0..=top {
        let pts = calibration_points(history, q + 1)?;
        let omega = fit_extrapolation(&pts)?;
        candidate_errors.push((y_new - omega.eval(t_new)).abs());
    }
    // Strict comparison keeps the smallest order on ties.
    let mut order = 0;
    for (q, &e) in candidate_errors.iter().enumerate().skip(1) {
        if e < candidate_errors[order] {
            order = q;
        }
    }
    Ok(OrderDecision {
        order,
        candidate_errors,
        valid_from: t_new,
    })
}

/// Calibrates the estimated output of degree `order` on a history that
/// already contains the newest sample.
pub fn estimate_output(
    history: &SampleHistory,
    order: usize,
    mode: CalibrationMode,
) -> Result<EstimatedOutput> {
    let (window_start, _) = history.newest().ok_or(SequencingError::EmptyHistory)?;
    if order > MAX_ORDER {
        return Err(Error::Usage(format!(
            "estimated output order {order} exceeds {MAX_ORDER}"
        )));
    }
    if history.len() < order + 1 {
        return Err(Error::Usage(format!(
            "order {order} needs {} samples, history has {}",
            order + 1,
            history.len()
        )));
    }
    let used_mode = match mode {
        CalibrationMode::Cls if history.len() >= order + 2 => CalibrationMode::Cls,
        _ => CalibrationMode::Extrapolation,
    };
    let poly = match used_mode {
        CalibrationMode::Extrapolation => fit_extrapolation(&calibration_points(history, order + 1)?)?,
        CalibrationMode::Cls => {
            fit_constrained_least_squares(&calibration_points(history, order + 2)?)?
        }
    };
    Ok(EstimatedOutput {
        poly,
        window_start,
        mode: used_mode,
    })
}

fn calibration_points(history: &SampleHistory, count: usize) -> Result<CalibrationPoints> {
    let (t, z): (Vec<f64>, Vec<f64>) = history.latest(count).unzip();
    Ok(CalibrationPoints::new(t, z)?)
}
