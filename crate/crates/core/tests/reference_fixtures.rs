//! Golden values of the monolithic two-mass reference, cross-checked by a
//! separately written second-order integrator of the same equations.

use fornits_core::{build_two_mass, monolithic_reference, TwoMassParams};

/// `[x1, v1, x2, v2]` at t = 50, 100, 150 s with the default parameters.
const GOLDEN: [(f64, [f64; 4]); 3] = [
    (50.0, [0.002197052257903317, -0.01095852760988396, 0.002247738049648021, -0.011087608934431947]),
    (100.0, [-0.00014422519562543238, -0.0009556675262766724, -0.00014424533212416117, -0.0009555383406928374]),
    (150.0, [3.0862041964198325e-6, 6.1549932472078976e-6, 2.4587538159203103e-7, -5.552395225535442e-6]),
];

/// Heun's method on the closed-loop equations, written out by hand.
fn heun_two_mass(p: &TwoMassParams, h: f64, stops: &[f64]) -> Vec<[f64; 4]> {
    let f = |t: f64, s: [f64; 4]| -> [f64; 4] {
        let [x1, v1, x2, v2] = s;
        let k3 = if t < p.t_switch { p.k3 } else { p.k3_after };
        let fc = p.k2 * (x1 - x2) + p.d2 * (v1 - v2);
        [
            v1,
            (-p.k1 * x1 - p.d1 * v1 - fc) / p.m1,
            v2,
            (-k3 * x2 - p.d3 * v2 + fc) / p.m2,
        ]
    };
    let mut s = [p.x1_0, p.v1_0, p.x2_0, p.v2_0];
    let mut out = Vec::new();
    let mut t0: f64 = 0.0;
    for &stop in stops {
        // Segment boundaries fall on the switch so it never sits inside a step.
        let n = ((stop - t0) / h).round() as usize;
        let hh = (stop - t0) / n as f64;
        for i in 0..n {
            let t = t0 + i as f64 * hh;
            let t_end = if i + 1 == n { stop.next_down() } else { t + hh };
            let k1 = f(t, s);
            let pred: [f64; 4] = std::array::from_fn(|j| s[j] + hh * k1[j]);
            let k2 = f(t_end, pred);
            s = std::array::from_fn(|j| s[j] + 0.5 * hh * (k1[j] + k2[j]));
        }
        out.push(s);
        t0 = stop;
    }
    out
}

#[test]
fn reference_matches_golden_values() {
    let model = build_two_mass(&TwoMassParams::default()).unwrap();
    let r = monolithic_reference(&model, 0.5, 1e-4).unwrap();
    for (t, expect) in GOLDEN {
        let n = r.times.iter().position(|&x| x == t).unwrap();
        let got = [r.states[0][n][0], r.states[0][n][1], r.states[1][n][0], r.states[1][n][1]];
        for (g, e) in got.iter().zip(expect) {
            assert!((g - e).abs() <= 1e-15, "t = {t}: {g} vs {e}");
        }
    }
}

#[test]
fn second_order_integrator_agrees() {
    let p = TwoMassParams::default();
    let heun = heun_two_mass(&p, 2e-5, &[50.0, 100.0, 150.0]);
    for ((t, golden), h) in GOLDEN.iter().zip(&heun) {
        for (g, x) in golden.iter().zip(h) {
            assert!((g - x).abs() <= 1e-8, "t = {t}: {g} vs {x}");
        }
    }
}

#[test]
fn halving_the_micro_step_is_invisible() {
    let model = build_two_mass(&TwoMassParams::default()).unwrap();
    let a = monolithic_reference(&model, 0.5, 1e-4).unwrap();
    let b = monolithic_reference(&model, 0.5, 5e-5).unwrap();
    for k in 0..2 {
        for i in 0..2 {
            let sa = a.series(k, i);
            let sb = b.series(k, i);
            let amp = sa.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let worst = sa.iter().zip(&sb).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(worst <= 1e-8 * amp, "state {k}.{i}: {worst:e} vs amplitude {amp:e}");
        }
    }
}

#[test]
fn coupling_force_kinks_at_the_switch() {
    // The right mass's acceleration jumps by (k3_after - k3) * x2 / m2, so the
    // coupling force slope jumps by d2 times that.
    let p = TwoMassParams::default();
    let model = build_two_mass(&p).unwrap();
    let r = monolithic_reference(&model, 0.01, 1e-4).unwrap();
    let n = r.times.iter().position(|&t| t == p.t_switch).unwrap();
    let fc = |m: usize| {
        let (a, b) = (&r.states[0][m], &r.states[1][m]);
        p.k2 * (a[0] - b[0]) + p.d2 * (a[1] - b[1])
    };
    let h = 0.01;
    // One-sided second-order differences.
    let left = (3.0 * fc(n) - 4.0 * fc(n - 1) + fc(n - 2)) / (2.0 * h);
    let right = (-3.0 * fc(n) + 4.0 * fc(n + 1) - fc(n + 2)) / (2.0 * h);
    let expected = p.d2 * (p.k3_after - p.k3) * r.states[1][n][0] / p.m2;
    assert!(((right - left) - expected).abs() <= 0.05 * expected.abs(), "{} vs {expected}", right - left);
}
