//! Consumer-side input construction: pick the producer estimate in force at
//! the window start, reduce its degree to what the consumer accepts, and
//! optionally replace it by a C1-continuous Hermite cubic.

use crate::coupling::Port;
use crate::error::SequencingError;
use crate::poly::{fit_anchored_least_squares, fit_hermite, CalibrationPoints, Polynomial};
use crate::subsystem::Capabilities;

/// The polynomial a consumer integrates with on `[window.0, window.1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputPlan {
    pub poly: Polynomial,
    pub window: (f64, f64),
    /// Producer output feeding this input.
    pub source: Port,
    /// Index of the producer estimate used, in the producer's window sequence.
    pub source_window: usize,
    pub smoothed: bool,
    /// Set when smoothing was requested but the consumer cannot take cubics.
    pub smoothing_skipped: bool,
}

/// Left limits carried from the previously used input polynomial.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SmoothingContext {
    left: Option<(f64, f64)>,
}

impl SmoothingContext {
    pub fn new() -> Self {
        Self::default()
    }

    /// Value and derivative at the end of the previous window, if one exists.
    pub fn left(&self) -> Option<(f64, f64)> {
        self.left
    }

    /// Records the left limits at `t_end` of the polynomial actually used.
    pub fn carry(&mut self, used: &Polynomial, t_end: f64) {
        self.left = Some((used.eval(t_end), used.eval_derivative(t_end)));
    }
}

/// Index of the latest producer window starting at or before `t_start`.
/// `window_starts` must be increasing.
pub fn resolve_source(window_starts: &[f64], t_start: f64) -> Result<usize, SequencingError> {
    let count = window_starts.partition_point(|&s| s <= t_start);
    count
        .checked_sub(1)
        .ok_or(SequencingError::NoEligibleWindow { time: t_start })
}

/// Reduces `source` to degree `max_degree` over `window`.
///
/// Polynomials already within the limit pass through unchanged. Otherwise the
/// source is sampled at `max_degree + 2` equispaced points spanning the window
/// and refitted by least squares, exact at the window start so no jump is
/// added there.
pub fn cap_degree(source: &Polynomial, max_degree: usize, window: (f64, f64)) -> Polynomial {
    if source.degree() <= max_degree {
        return *source;
    }
    let (t0, t1) = window;
    let n = max_degree + 2;
    let times: Vec<f64> = (0..n)
        .map(|i| {
            if i + 1 == n {
                t1
            } else {
                t0 + (t1 - t0) * i as f64 / (n - 1) as f64
            }
        })
        .collect();
    let values = times.iter().map(|&t| source.eval(t)).collect();
    CalibrationPoints::new(times, values)
        .and_then(|pts| fit_anchored_least_squares(&pts, 0, max_degree))
        // A degenerate window has no shape to track; keep the start value.
        .unwrap_or_else(|_| Polynomial::constant(source.eval(t0), t0))
}

/// Replaces the plan's polynomial by the Hermite cubic joining the previous
/// window's end (value and slope from `ctx`) to the plan's own value and slope
/// at the window end, then carries the new left limits forward.
///
/// The first window (no left limits yet) and consumers that cannot accept
/// cubic inputs keep the plan unchanged.
pub fn smooth(plan: &InputPlan, ctx: &mut SmoothingContext, caps: &Capabilities) -> InputPlan {
    let (t0, t1) = plan.window;
    let mut out = *plan;
    if !caps.smoothing_eligible() {
        out.smoothing_skipped = true;
        ctx.carry(&plan.poly, t1);
        return out;
    }
    if let Some((u_left, du_left)) = ctx.left {
        let right = (plan.poly.eval(t1), plan.poly.eval_derivative(t1));
        if let Ok(h) = fit_hermite((t0, t1), (u_left, right.0), (du_left, right.1)) {
            out.poly = h;
            out.smoothed = true;
        }
    }
    ctx.carry(&out.poly, t1);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(poly: Polynomial, window: (f64, f64)) -> InputPlan {
        InputPlan {
            poly,
            window,
            source: Port::new(0, 0),
            source_window: 0,
            smoothed: false,
            smoothing_skipped: false,
        }
    }

    #[test]
    fn resolve_examples() {
        let starts = [0.0, 0.5, 1.0];
        assert_eq!(resolve_source(&starts, 0.7), Ok(1));
        assert_eq!(resolve_source(&starts, 0.5), Ok(1));
        assert_eq!(resolve_source(&starts, 0.4), Ok(0));
        assert_eq!(resolve_source(&starts, 3.0), Ok(2));
        assert_eq!(
            resolve_source(&starts, -0.1),
            Err(SequencingError::NoEligibleWindow { time: -0.1 })
        );
    }

    #[test]
    fn overrunning_window_keeps_extension() {
        // Consumer window [0.4, 1.2) overruns producer window [0, 0.5); the
        // estimate starting at 0 is used on the whole consumer window.
        let estimates = [Polynomial::new(0.0, &[1.0, 2.0]), Polynomial::constant(-5.0, 0.5)];
        let m = resolve_source(&[0.0, 0.5], 0.4).unwrap();
        assert_eq!(m, 0);
        assert_eq!(estimates[m].eval(1.2), 1.0 + 2.0 * 1.2);
    }

    #[test]
    fn cap_is_identity_within_limit() {
        let p = Polynomial::new(0.0, &[1.0, 2.0]);
        assert_eq!(cap_degree(&p, 2, (0.0, 1.0)), p);
    }

    #[test]
    fn cap_to_constant_keeps_start_value() {
        let sq = Polynomial::new(0.0, &[0.0, 0.0, 1.0]);
        let c = cap_degree(&sq, 0, (0.0, 1.0));
        assert_eq!(c.degree(), 0);
        assert_eq!(c.eval(0.7), 0.0);
    }

    #[test]
    fn cap_to_line_matches_grid_search() {
        // Best line through (t0, p(t0)) for samples at t0, t0+h/2, t1; compare
        // against a brute-force scan over slopes.
        let src = Polynomial::new(0.0, &[0.5, -1.0, 3.0]);
        let w = (0.2, 1.0);
        let line = cap_degree(&src, 1, w);
        assert_eq!(line.degree(), 1);
        assert!((line.eval(w.0) - src.eval(w.0)).abs() < 1e-14);
        let ts = [0.2, 0.6, 1.0];
        let sse = |slope: f64| {
            ts.iter()
                .map(|&t| (src.eval(w.0) + slope * (t - w.0) - src.eval(t)).powi(2))
                .sum::<f64>()
        };
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=200_000 {
            let s = -5.0 + 10.0 * i as f64 / 200_000.0;
            let e = sse(s);
            if e < best.0 {
                best = (e, s);
            }
        }
        assert!((line.coeffs()[1] - best.1).abs() < 1e-4);
        assert!(sse(line.coeffs()[1]) <= best.0 + 1e-12);
    }

    #[test]
    fn smoothstep_between_constants() {
        let caps = Capabilities::default();
        let mut ctx = SmoothingContext::new();
        ctx.carry(&Polynomial::constant(0.0, 0.0), 1.0);
        let out = smooth(&plan(Polynomial::constant(1.0, 1.0), (1.0, 2.0)), &mut ctx, &caps);
        assert!(out.smoothed);
        assert!((out.poly.eval(1.5) - 0.5).abs() < 1e-15);
        assert_eq!(out.poly.eval(1.0), 0.0);
        assert!((out.poly.eval(2.0) - 1.0).abs() < 1e-15);
        assert_eq!(ctx.left(), Some((out.poly.eval(2.0), out.poly.eval_derivative(2.0))));
    }

    #[test]
    fn consistent_line_is_reproduced() {
        let caps = Capabilities::default();
        let line = Polynomial::new(0.0, &[1.0, 2.0]);
        let mut ctx = SmoothingContext::new();
        ctx.carry(&line, 1.0);
        let out = smooth(&plan(line, (1.0, 2.0)), &mut ctx, &caps);
        for t in [1.0, 1.3, 2.0] {
            assert!((out.poly.eval(t) - line.eval(t)).abs() < 1e-14);
        }
    }

    #[test]
    fn first_window_is_left_alone() {
        let caps = Capabilities::default();
        let mut ctx = SmoothingContext::new();
        let p = plan(Polynomial::new(0.0, &[1.0, 1.0]), (0.0, 1.0));
        let out = smooth(&p, &mut ctx, &caps);
        assert_eq!(out, p);
        assert_eq!(ctx.left(), Some((2.0, 1.0)));
    }

    #[test]
    fn incapable_consumer_skips_smoothing() {
        let caps = Capabilities::default().with_max_input_degree(2);
        let mut ctx = SmoothingContext::new();
        ctx.carry(&Polynomial::constant(0.0, 0.0), 1.0);
        let p = plan(Polynomial::constant(1.0, 1.0), (1.0, 2.0));
        let out = smooth(&p, &mut ctx, &caps);
        assert!(!out.smoothed);
        assert!(out.smoothing_skipped);
        assert_eq!(out.poly, p.poly);
    }
}
