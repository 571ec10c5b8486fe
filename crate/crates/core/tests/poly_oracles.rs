//! Polynomial fits checked against independent formulations: Lagrange
//! interpolation for extrapolants, the KKT system of the equality-constrained
//! least-squares problem for CLS, and the Hermite basis for smoothing cubics.

use fornits_core::poly::{
    fit_constrained_least_squares, fit_extrapolation, fit_hermite, CalibrationPoints,
};
use proptest::prelude::*;

fn lagrange_eval(ts: &[f64], zs: &[f64], t: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..ts.len() {
        let mut w = zs[i];
        for j in 0..ts.len() {
            if i != j {
                w *= (t - ts[j]) / (ts[i] - ts[j]);
            }
        }
        acc += w;
    }
    acc
}

/// Gauss-Jordan elimination with partial pivoting on a dense system.
fn gauss_jordan(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Vec<f64> {
    let n = rhs.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        m.swap(col, piv);
        rhs.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..n {
                    m[r][c] -= f * m[col][c];
                }
                rhs[r] -= f * rhs[col];
            }
        }
    }
    (0..n).map(|i| rhs[i] / m[i][i]).collect()
}

/// Degree-`d` least squares through all points, exact at the last one,
/// solved via Lagrange multipliers in time centered on the mean.
fn cls_oracle(ts: &[f64], zs: &[f64], d: usize) -> impl Fn(f64) -> f64 {
    let mean = ts.iter().sum::<f64>() / ts.len() as f64;
    let basis = move |t: f64| -> Vec<f64> { (0..=d).map(|k| (t - mean).powi(k as i32)).collect() };
    let n = d + 2;
    let mut kkt = vec![vec![0.0; n]; n];
    let mut rhs = vec![0.0; n];
    for (&t, &z) in ts.iter().zip(zs) {
        let v = basis(t);
        for i in 0..=d {
            rhs[i] += 2.0 * v[i] * z;
            for j in 0..=d {
                kkt[i][j] += 2.0 * v[i] * v[j];
            }
        }
    }
    let last = basis(*ts.last().unwrap());
    for i in 0..=d {
        kkt[i][d + 1] = last[i];
        kkt[d + 1][i] = last[i];
    }
    rhs[d + 1] = *zs.last().unwrap();
    let sol = gauss_jordan(kkt, rhs);
    move |t: f64| {
        basis(t)
            .iter()
            .zip(&sol)
            .map(|(b, a)| b * a)
            .sum::<f64>()
    }
}

fn grid(start: f64, gaps: &[f64]) -> Vec<f64> {
    let mut t = vec![start];
    for g in gaps {
        t.push(t.last().unwrap() + g);
    }
    t
}

#[test]
fn cls_line_example() {
    let oracle = cls_oracle(&[0.0, 1.0, 2.0], &[0.0, 0.0, 6.0], 1);
    assert!((oracle(2.0) - 6.0).abs() < 1e-12);
    assert!((oracle(3.0) - oracle(2.0) - 3.6).abs() < 1e-12);
    assert!((oracle(0.0) + 1.2).abs() < 1e-12);
    assert!((oracle(1.0) - 2.4).abs() < 1e-12);
}

proptest! {
    #[test]
    fn extrapolation_matches_lagrange(
        start in -50.0f64..50.0,
        gaps in prop::collection::vec(0.05f64..1.0, 0..=3),
        zs in prop::collection::vec(-10.0f64..10.0, 4),
        ahead in 0.0f64..1.0,
    ) {
        let ts = grid(start, &gaps);
        let zs = &zs[..ts.len()];
        let p = fit_extrapolation(&CalibrationPoints::new(ts.clone(), zs.to_vec()).unwrap()).unwrap();
        let t = ts.last().unwrap() + ahead;
        let expect = lagrange_eval(&ts, zs, t);
        let scale = 1.0 + zs.iter().fold(0.0f64, |m, z| m.max(z.abs())) * 1e3;
        prop_assert!((p.eval(t) - expect).abs() <= 1e-9 * scale, "{} vs {}", p.eval(t), expect);
    }

    #[test]
    fn cls_matches_kkt_oracle(
        start in -50.0f64..50.0,
        gaps in prop::collection::vec(0.05f64..1.0, 1..=3),
        zs in prop::collection::vec(-10.0f64..10.0, 4),
        probe in -1.0f64..1.0,
    ) {
        let ts = grid(start, &gaps);
        let zs = &zs[..ts.len()];
        let d = ts.len() - 2;
        let p = fit_constrained_least_squares(&CalibrationPoints::new(ts.clone(), zs.to_vec()).unwrap()).unwrap();
        let oracle = cls_oracle(&ts, zs, d);
        let t = ts.last().unwrap() + probe;
        prop_assert_eq!(p.degree(), d);
        prop_assert!((p.eval(t) - oracle(t)).abs() <= 1e-7, "{} vs {}", p.eval(t), oracle(t));
    }

    #[test]
    fn hermite_matches_basis_form(
        t0 in -100.0f64..100.0,
        h in 0.01f64..5.0,
        z0 in -5.0f64..5.0, z1 in -5.0f64..5.0,
        d0 in -5.0f64..5.0, d1 in -5.0f64..5.0,
        s in 0.0f64..1.0,
    ) {
        let p = fit_hermite((t0, t0 + h), (z0, z1), (d0, d1)).unwrap();
        let h00 = 2.0 * s.powi(3) - 3.0 * s * s + 1.0;
        let h10 = s.powi(3) - 2.0 * s * s + s;
        let h01 = -2.0 * s.powi(3) + 3.0 * s * s;
        let h11 = s.powi(3) - s * s;
        let expect = h00 * z0 + h10 * h * d0 + h01 * z1 + h11 * h * d1;
        prop_assert!((p.eval(t0 + s * h) - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
    }
}
