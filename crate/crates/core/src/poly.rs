//! Low-degree polynomials in a shifted local time variable.
//!
//! Every coupling signal in the engine (estimated outputs, consumer inputs,
//! smoothed inputs) is carried as a [`Polynomial`] of degree at most 3,
//! written in `tau = t - t_ref`. Three calibration families are provided:
//!
//! * [`fit_extrapolation`]: the unique degree `q-1` polynomial through `q` points;
//! * [`fit_constrained_least_squares`]: the degree `q-2` least-squares fit over
//!   `q` points, forced through the most recent one;
//! * [`fit_hermite`]: the two-point cubic matching values and first derivatives.
//!
//! Systems are solved in a rescaled variable `s = tau / h` (with `h` the window
//! span) so that windows far from the time origin keep full relative accuracy.

use crate::error::CalibrationError;

/// Highest degree any polynomial in the engine may carry.
pub const MAX_DEGREE: usize = 3;
const N_COEFFS: usize = MAX_DEGREE + 1;

/// Relative gap under which two calibration times count as the same time.
pub const DUPLICATE_TIME_RTOL: f64 = 1e-12;

/// A real polynomial `a0 + a1*tau + ... + ad*tau^d` with `tau = t - t_ref`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Polynomial {
    t_ref: f64,
    coeffs: [f64; N_COEFFS],
    degree: usize,
}

impl Polynomial {
    /// Builds a polynomial from coefficients in ascending order of power.
    ///
    /// Panics if more than four coefficients are supplied or none at all.
    pub fn new(t_ref: f64, coeffs: &[f64]) -> Self {
        assert!(
            !coeffs.is_empty() && coeffs.len() <= N_COEFFS,
            "polynomial needs 1..=4 coefficients, got {}",
            coeffs.len()
        );
        let mut c = [0.0; N_COEFFS];
        c[..coeffs.len()].copy_from_slice(coeffs);
        Self {
            t_ref,
            coeffs: c,
            degree: coeffs.len() - 1,
        }
    }

    pub fn constant(value: f64, t_ref: f64) -> Self {
        Self::new(t_ref, &[value])
    }

    pub fn zero() -> Self {
        Self::constant(0.0, 0.0)
    }

    pub fn t_ref(&self) -> f64 {
        self.t_ref
    }

    /// Nominal degree. Leading coefficients may be zero; the degree reports
    /// the space the polynomial was calibrated in, not a trimmed value.
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs[..=self.degree]
    }

    /// Horner evaluation at global time `t`.
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        let tau = t - self.t_ref;
        let mut acc = self.coeffs[self.degree];
        for k in (0..self.degree).rev() {
            acc = acc * tau + self.coeffs[k];
        }
        acc
    }

    /// First time-derivative evaluated at `t`.
    #[inline]
    pub fn eval_derivative(&self, t: f64) -> f64 {
        if self.degree == 0 {
            return 0.0;
        }
        let tau = t - self.t_ref;
        let mut acc = self.coeffs[self.degree] * self.degree as f64;
        for k in (1..self.degree).rev() {
            acc = acc * tau + self.coeffs[k] * k as f64;
        }
        acc
    }

    /// The derivative polynomial, of degree `max(0, d - 1)`.
    pub fn derivative(&self) -> Polynomial {
        if self.degree == 0 {
            return Polynomial::constant(0.0, self.t_ref);
        }
        let mut c = [0.0; N_COEFFS];
        for k in 1..=self.degree {
            c[k - 1] = self.coeffs[k] * k as f64;
        }
        Polynomial {
            t_ref: self.t_ref,
            coeffs: c,
            degree: self.degree - 1,
        }
    }

    /// Same polynomial expanded about a different origin.
    pub fn recentered(&self, t_ref: f64) -> Polynomial {
        // Taylor expansion about the new origin: a_k' = p^(k)(t_ref) / k!
        let mut c = [0.0; N_COEFFS];
        let mut p = *self;
        let mut factorial = 1.0;
        for (k, slot) in c.iter_mut().enumerate().take(self.degree + 1) {
            if k > 0 {
                factorial *= k as f64;
            }
            *slot = p.eval(t_ref) / factorial;
            p = p.derivative();
        }
        Polynomial {
            t_ref,
            coeffs: c,
            degree: self.degree,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.t_ref.is_finite() && self.coeffs().iter().all(|c| c.is_finite())
    }
}

/// A validated set of calibration samples: distinct, strictly increasing
/// times; the last entry is the most recent sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationPoints {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl CalibrationPoints {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self, CalibrationError> {
        if times.len() != values.len() {
            return Err(CalibrationError::LengthMismatch {
                times: times.len(),
                values: values.len(),
            });
        }
        for (index, (t, z)) in times.iter().zip(&values).enumerate() {
            if !t.is_finite() || !z.is_finite() {
                return Err(CalibrationError::NonFinite { index });
            }
        }
        for index in 1..times.len() {
            let (a, b) = (times[index - 1], times[index]);
            let tol = DUPLICATE_TIME_RTOL * a.abs().max(b.abs()).max(1.0);
            if (b - a).abs() < tol {
                return Err(CalibrationError::DuplicateTime { time: b });
            }
            if b < a {
                return Err(CalibrationError::Unordered { index });
            }
        }
        Ok(Self { times, values })
    }

    /// Convenience constructor from `(time, value)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self, CalibrationError> {
        let (t, z) = pairs.iter().copied().unzip();
        Self::new(t, z)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn newest_time(&self) -> Option<f64> {
        self.times.last().copied()
    }
}

/// Unique polynomial of degree `q-1` through all `q` points, about the newest time.
pub fn fit_extrapolation(pts: &CalibrationPoints) -> Result<Polynomial, CalibrationError> {
    let q = pts.len();
    if q == 0 {
        return Err(CalibrationError::TooFewPoints { needed: 1, got: 0 });
    }
    let degree = q - 1;
    if degree > MAX_DEGREE {
        return Err(CalibrationError::DegreeTooHigh { degree });
    }
    let t_ref = pts.times[q - 1];
    let scale = span_scale(&pts.times, t_ref);

    let mut a = [[0.0; N_COEFFS]; N_COEFFS];
    let mut b = [0.0; N_COEFFS];
    for r in 0..q {
        let s = (pts.times[r] - t_ref) / scale;
        let mut pow = 1.0;
        for entry in a[r].iter_mut().take(q) {
            *entry = pow;
            pow *= s;
        }
        b[r] = pts.values[r];
    }
    let scaled = solve_dense(&mut a, &mut b, q)
        .ok_or(CalibrationError::DuplicateTime { time: t_ref })?;
    Ok(unscale(t_ref, &scaled[..q], scale))
}

/// Degree `q-2` least-squares polynomial over all `q` points, constrained to
/// pass exactly through the most recent one.
pub fn fit_constrained_least_squares(
    pts: &CalibrationPoints,
) -> Result<Polynomial, CalibrationError> {
    let q = pts.len();
    if q < 2 {
        return Err(CalibrationError::TooFewPoints { needed: 2, got: q });
    }
    fit_anchored_least_squares(pts, q - 1, q - 2)
}

/// Least-squares polynomial of `degree` over `pts`, forced through the point
/// at `anchor`; the result is expanded about that point's time.
pub(crate) fn fit_anchored_least_squares(
    pts: &CalibrationPoints,
    anchor: usize,
    degree: usize,
) -> Result<Polynomial, CalibrationError> {
    let q = pts.len();
    if degree > MAX_DEGREE {
        return Err(CalibrationError::DegreeTooHigh { degree });
    }
    if q < degree + 1 || anchor >= q {
        return Err(CalibrationError::TooFewPoints {
            needed: degree + 1,
            got: q,
        });
    }
    let t_ref = pts.times[anchor];
    let z_ref = pts.values[anchor];
    if degree == 0 {
        return Ok(Polynomial::constant(z_ref, t_ref));
    }
    let scale = span_scale(&pts.times, t_ref);

    // With tau measured from the anchor, the constraint fixes a0 = z_ref and
    // leaves an unconstrained problem in a1..ad on the shifted residuals.
    let mut normal = [[0.0; N_COEFFS]; N_COEFFS];
    let mut rhs = [0.0; N_COEFFS];
    for r in 0..q {
        let s = (pts.times[r] - t_ref) / scale;
        let resid = pts.values[r] - z_ref;
        let mut basis = [0.0; N_COEFFS];
        let mut pow = s;
        for slot in basis.iter_mut().take(degree) {
            *slot = pow;
            pow *= s;
        }
        for i in 0..degree {
            rhs[i] += basis[i] * resid;
            for j in 0..degree {
                normal[i][j] += basis[i] * basis[j];
            }
        }
    }
    let sol = solve_dense(&mut normal, &mut rhs, degree)
        .ok_or(CalibrationError::DuplicateTime { time: t_ref })?;
    let mut scaled = [0.0; N_COEFFS];
    scaled[0] = z_ref;
    scaled[1..=degree].copy_from_slice(&sol[..degree]);
    Ok(unscale(t_ref, &scaled[..=degree], scale))
}

/// Cubic Hermite polynomial matching values and first derivatives at two
/// distinct times. The result is expanded about the first time.
pub fn fit_hermite(
    t_pair: (f64, f64),
    z_pair: (f64, f64),
    dz_pair: (f64, f64),
) -> Result<Polynomial, CalibrationError> {
    let (t0, t1) = t_pair;
    let all = [t0, t1, z_pair.0, z_pair.1, dz_pair.0, dz_pair.1];
    if let Some(index) = all.iter().position(|v| !v.is_finite()) {
        return Err(CalibrationError::NonFinite { index });
    }
    let h = t1 - t0;
    if h.abs() < DUPLICATE_TIME_RTOL * t0.abs().max(t1.abs()).max(1.0) {
        return Err(CalibrationError::DuplicateTime { time: t1 });
    }
    let slope = (z_pair.1 - z_pair.0) / h;
    let a2 = (3.0 * slope - 2.0 * dz_pair.0 - dz_pair.1) / h;
    let a3 = (dz_pair.0 + dz_pair.1 - 2.0 * slope) / (h * h);
    Ok(Polynomial::new(t0, &[z_pair.0, dz_pair.0, a2, a3]))
}

fn span_scale(times: &[f64], t_ref: f64) -> f64 {
    let span = times
        .iter()
        .map(|t| (t - t_ref).abs())
        .fold(0.0_f64, f64::max);
    if span > 0.0 {
        span
    } else {
        1.0
    }
}

fn unscale(t_ref: f64, scaled: &[f64], scale: f64) -> Polynomial {
    let mut c = [0.0; N_COEFFS];
    let mut factor = 1.0;
    for (k, &b) in scaled.iter().enumerate() {
        c[k] = b / factor;
        factor *= scale;
    }
    Polynomial::new(t_ref, &c[..scaled.len()])
}

/// Gaussian elimination with partial pivoting on the leading `n x n` block.
fn solve_dense(
    a: &mut [[f64; N_COEFFS]; N_COEFFS],
    b: &mut [f64; N_COEFFS],
    n: usize,
) -> Option<[f64; N_COEFFS]> {
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = [0.0; N_COEFFS];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}
