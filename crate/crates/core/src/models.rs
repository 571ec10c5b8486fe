//! Built-in benchmark systems and the monolithic reference integrator.
//!
//! * two-mass oscillator: two damped masses tied by a spring/damper, the
//!   right wall spring stiffens halfway through the run;
//! * controlled-speed car: a 1000 kg point mass pushed by a controller that
//!   differentiates the exchanged position to estimate speed;
//! * linear network: arbitrary `x' = Ax + Bu, y = Cx + Du` subsystems, used
//!   for configuration-defined graphs and randomized tests.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coupling::{CouplingGraph, Port};
use crate::error::{Error, Result, SubsystemError};
use crate::subsystem::{Capabilities, Dynamics, SubsystemSpec};

/// Subsystems, their capabilities, the coupling graph and the time horizon.
#[derive(Debug, Clone)]
pub struct CoSimModel {
    pub name: String,
    pub subsystems: Vec<SubsystemSpec>,
    pub capabilities: Vec<Capabilities>,
    pub graph: CouplingGraph,
    pub t_init: f64,
    pub t_end: f64,
    /// Times where the dynamics switch discontinuously, increasing.
    pub breakpoints: Vec<f64>,
}

impl CoSimModel {
    pub fn n_sys(&self) -> usize {
        self.subsystems.len()
    }

    pub fn with_capabilities(mut self, caps: Vec<Capabilities>) -> Self {
        self.capabilities = caps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.subsystems.is_empty() {
            return Err(Error::Config("model has no subsystems".into()));
        }
        if self.capabilities.len() != self.subsystems.len() {
            return Err(Error::Config(format!(
                "{} capability entries for {} subsystems",
                self.capabilities.len(),
                self.subsystems.len()
            )));
        }
        if !(self.t_end > self.t_init) {
            return Err(Error::Config(format!(
                "t_end ({}) must exceed t_init ({})",
                self.t_end, self.t_init
            )));
        }
        if self.graph.n_sys() != self.n_sys() {
            return Err(Error::Config("graph and subsystem counts differ".into()));
        }
        for (k, s) in self.subsystems.iter().enumerate() {
            if s.n_in != self.graph.n_in(k) || s.n_out != self.graph.n_out(k) {
                return Err(Error::Config(format!(
                    "subsystem `{}` arity disagrees with the coupling graph",
                    s.label
                )));
            }
            if s.x_init.len() != s.n_st {
                return Err(Error::Config(format!("subsystem `{}` state size mismatch", s.label)));
            }
        }
        for (c, s) in self.capabilities.iter().zip(&self.subsystems) {
            c.validate()
                .map_err(|e| Error::Config(format!("subsystem `{}`: {e}", s.label)))?;
        }
        self.graph.validate().map_err(|diags| {
            Error::Config(
                diags
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join("; "),
            )
        })
    }

    /// Output values of every subsystem at `t` for the given states, resolving
    /// direct feedthrough by repeated sweeps (exact for acyclic feedthrough).
    pub fn coupled_outputs(&self, t: f64, states: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut outputs: Vec<Vec<f64>> =
            self.subsystems.iter().map(|s| vec![0.0; s.n_out]).collect();
        for _ in 0..=self.n_sys() {
            let mut next = Vec::with_capacity(self.n_sys());
            for (k, s) in self.subsystems.iter().enumerate() {
                let u = self.gather_inputs(k, &outputs);
                next.push(s.output_at(t, &states[k], &u));
            }
            outputs = next;
        }
        outputs
    }

    /// Input values of subsystem `k` given every subsystem's outputs.
    pub fn gather_inputs(&self, k: usize, outputs: &[Vec<f64>]) -> Vec<f64> {
        (0..self.subsystems[k].n_in)
            .map(|i| {
                self.graph
                    .source_of(k, i)
                    .map_or(0.0, |Port { system, port }| outputs[system][port])
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Two masses, springs and dampers

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoMassParams {
    pub m1: f64,
    pub m2: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub k3_after: f64,
    pub t_switch: f64,
    pub x1_0: f64,
    pub x2_0: f64,
    pub v1_0: f64,
    pub v2_0: f64,
    pub t_end: f64,
}

impl Default for TwoMassParams {
    fn default() -> Self {
        Self {
            m1: 1.0,
            m2: 1.0,
            k1: 10.0,
            k2: 10.0,
            k3: 10.0,
            d1: 0.1,
            d2: 0.1,
            d3: 0.1,
            k3_after: 100.0,
            t_switch: 100.0,
            x1_0: 0.1,
            x2_0: 0.0,
            v1_0: 0.0,
            v2_0: 0.0,
            t_end: 200.0,
        }
    }
}

impl TwoMassParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.m1 > 0.0 && self.m2 > 0.0) {
            return Err(Error::Config("masses must be positive".into()));
        }
        if !(self.t_end > 0.0) {
            return Err(Error::Config("t_end must be positive".into()));
        }
        let all = [
            self.k1, self.k2, self.k3, self.d1, self.d2, self.d3, self.k3_after, self.t_switch,
            self.x1_0, self.x2_0, self.v1_0, self.v2_0,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("two-mass parameters must be finite".into()));
        }
        Ok(())
    }

    /// Total mechanical energy for the stiffness in force at time `t`.
    pub fn energy(&self, t: f64, x1: f64, v1: f64, x2: f64, v2: f64) -> f64 {
        let k3 = if t < self.t_switch { self.k3 } else { self.k3_after };
        0.5 * (self.m1 * v1 * v1
            + self.m2 * v2 * v2
            + self.k1 * x1 * x1
            + self.k2 * (x1 - x2).powi(2)
            + k3 * x2 * x2)
    }
}

/// Left mass: state `[x1, v1]`, input coupling force, outputs `[x1, v1]`.
#[derive(Debug)]
struct LeftMass(TwoMassParams);

impl Dynamics for LeftMass {
    fn derivative(&self, _t: f64, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let p = &self.0;
        dx[0] = x[1];
        dx[1] = (-p.k1 * x[0] - p.d1 * x[1] - u[0]) / p.m1;
    }
    fn output(&self, _t: f64, x: &[f64], _u: &[f64], y: &mut [f64]) {
        y[0] = x[0];
        y[1] = x[1];
    }
}

/// Right mass: state `[x2, v2]`, inputs `[x1, v1]`, output coupling force.
#[derive(Debug)]
struct RightMass(TwoMassParams);

impl RightMass {
    fn coupling_force(&self, x: &[f64], u: &[f64]) -> f64 {
        self.0.k2 * (u[0] - x[0]) + self.0.d2 * (u[1] - x[1])
    }
}

impl Dynamics for RightMass {
    fn derivative(&self, t: f64, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let p = &self.0;
        let k3 = if t < p.t_switch { p.k3 } else { p.k3_after };
        dx[0] = x[1];
        dx[1] = (-k3 * x[0] - p.d3 * x[1] + self.coupling_force(x, u)) / p.m2;
    }
    fn output(&self, _t: f64, x: &[f64], u: &[f64], y: &mut [f64]) {
        y[0] = self.coupling_force(x, u);
    }
}

pub fn build_two_mass(p: &TwoMassParams) -> Result<CoSimModel> {
    p.validate()?;
    let s1 = SubsystemSpec::new("left_mass", 1, 2, vec![p.x1_0, p.v1_0], Arc::new(LeftMass(*p)));
    let s2 = SubsystemSpec::new("right_mass", 2, 1, vec![p.x2_0, p.v2_0], Arc::new(RightMass(*p)));
    let graph = CouplingGraph::new(&[(1, 2), (2, 1)])
        .connect(0, 0, 1, 0)
        .connect(1, 0, 0, 0)
        .connect(1, 1, 0, 1);
    Ok(CoSimModel {
        name: "two_mass".into(),
        subsystems: vec![s1, s2],
        capabilities: vec![Capabilities::default(); 2],
        graph,
        t_init: 0.0,
        t_end: p.t_end,
        breakpoints: vec![p.t_switch],
    })
}

// ---------------------------------------------------------------------------
// Car with controlled speed

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarParams {
    pub mass: f64,
    pub v_target: f64,
    pub t_control_on: f64,
    pub kp: f64,
    /// Preset controller force as `(time, force)` breakpoints, linearly
    /// interpolated and held at the last value until `t_control_on`.
    pub preset_force: Vec<(f64, f64)>,
    pub perturb_amp: f64,
    pub perturb_dwell: f64,
    pub prng_seed: u64,
    pub tau_diff: f64,
    pub t_end: f64,
}

impl Default for CarParams {
    fn default() -> Self {
        Self {
            mass: 1000.0,
            v_target: 16.0,
            t_control_on: 10.0,
            kp: 2000.0,
            preset_force: vec![(0.0, 0.0), (2.0, 4000.0), (4.0, 4000.0), (6.0, 0.0), (10.0, 0.0)],
            perturb_amp: 200.0,
            perturb_dwell: 0.1,
            prng_seed: 0x5eed,
            tau_diff: 1e-3,
            t_end: 30.0,
        }
    }
}

impl CarParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) {
            return Err(Error::Config("car mass must be positive".into()));
        }
        if !(self.t_control_on < self.t_end) {
            return Err(Error::Config("t_control_on must precede t_end".into()));
        }
        if !(self.tau_diff > 0.0 && self.perturb_dwell > 0.0) {
            return Err(Error::Config("tau_diff and perturb_dwell must be positive".into()));
        }
        if self.preset_force.is_empty()
            || self.preset_force.windows(2).any(|w| !(w[1].0 > w[0].0))
        {
            return Err(Error::Config(
                "preset_force needs increasing breakpoint times".into(),
            ));
        }
        Ok(())
    }

    pub fn preset(&self, t: f64) -> f64 {
        let pts = &self.preset_force;
        if t <= pts[0].0 {
            return pts[0].1;
        }
        for w in pts.windows(2) {
            let ((t0, f0), (t1, f1)) = (w[0], w[1]);
            if t <= t1 {
                return f0 + (f1 - f0) * (t - t0) / (t1 - t0);
            }
        }
        pts[pts.len() - 1].1
    }

    /// Piecewise-constant perturbation force, a pure function of time.
    pub fn perturbation(&self, t: f64) -> f64 {
        self.perturb_amp * (2.0 * unit_uniform(self.prng_seed, self.perturbation_slot(t)) - 1.0)
    }

    /// Index `k` of the slot `[k * dwell, (k + 1) * dwell)` holding `t`, with
    /// slot starts computed exactly as in [`CarParams::switch_times`].
    fn perturbation_slot(&self, t: f64) -> u64 {
        let dwell = self.perturb_dwell;
        let mut k = (t / dwell).floor().max(0.0);
        if k * dwell > t && k > 0.0 {
            k -= 1.0;
        } else if (k + 1.0) * dwell <= t {
            k += 1.0;
        }
        k as u64
    }

    /// Discontinuities of the closed loop on `(0, t_end)`.
    pub fn switch_times(&self) -> Vec<f64> {
        let mut times: Vec<f64> = (1..)
            .map(|k| k as f64 * self.perturb_dwell)
            .take_while(|&t| t < self.t_end)
            .collect();
        times.push(self.t_control_on);
        times.sort_by(f64::total_cmp);
        times.dedup();
        times
    }
}

/// Uniform draw in `[0, 1)` for stream `seed` at position `index`:
/// a splitmix64 seeding step followed by one xorshift64* round.
pub fn unit_uniform(seed: u64, index: u64) -> f64 {
    let mut z = seed
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    let mut x = z | 1;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    let r = x.wrapping_mul(0x2545_F491_4F6C_DD1D);
    (r >> 11) as f64 / (1u64 << 53) as f64
}

/// Vehicle: state `[x, v]`, input force, output position.
#[derive(Debug)]
struct Vehicle(Arc<CarParams>);

impl Dynamics for Vehicle {
    fn derivative(&self, t: f64, x: &[f64], u: &[f64], dx: &mut [f64]) {
        dx[0] = x[1];
        dx[1] = (u[0] + self.0.perturbation(t)) / self.0.mass;
    }
    fn output(&self, _t: f64, x: &[f64], _u: &[f64], y: &mut [f64]) {
        y[0] = x[0];
    }
}

/// Controller: a fast first-order filter `x_c' = (u - x_c)/tau` whose rate
/// `(u - x_c)/tau` estimates the vehicle speed from the position input.
#[derive(Debug)]
struct SpeedController(Arc<CarParams>);

impl SpeedController {
    fn speed_estimate(&self, x: &[f64], u: &[f64]) -> f64 {
        (u[0] - x[0]) / self.0.tau_diff
    }
}

impl Dynamics for SpeedController {
    fn derivative(&self, _t: f64, x: &[f64], u: &[f64], dx: &mut [f64]) {
        dx[0] = self.speed_estimate(x, u);
    }
    fn output(&self, t: f64, x: &[f64], u: &[f64], y: &mut [f64]) {
        let p = &self.0;
        y[0] = if t < p.t_control_on {
            p.preset(t)
        } else {
            p.kp * (p.v_target - self.speed_estimate(x, u))
        };
    }
}

/// Speed seen by the controller for its state and position input.
pub fn car_observed_speed(p: &CarParams, controller_state: f64, position_input: f64) -> f64 {
    (position_input - controller_state) / p.tau_diff
}

pub fn build_car(p: &CarParams) -> Result<CoSimModel> {
    p.validate()?;
    let shared = Arc::new(p.clone());
    let s1 = SubsystemSpec::new("vehicle", 1, 1, vec![0.0, 0.0], Arc::new(Vehicle(shared.clone())));
    let s2 = SubsystemSpec::new("controller", 1, 1, vec![0.0], Arc::new(SpeedController(shared)));
    let graph = CouplingGraph::new(&[(1, 1), (1, 1)])
        .connect(0, 0, 1, 0)
        .connect(1, 0, 0, 0);
    Ok(CoSimModel {
        name: "car".into(),
        subsystems: vec![s1, s2],
        capabilities: vec![Capabilities::default(); 2],
        graph,
        t_init: 0.0,
        t_end: p.t_end,
        breakpoints: p.switch_times(),
    })
}

// ---------------------------------------------------------------------------
// Linear subsystems

/// Matrices of `x' = A x + B u`, `y = C x + D u`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSubsystem {
    pub label: String,
    pub a: Vec<Vec<f64>>,
    #[serde(default)]
    pub b: Vec<Vec<f64>>,
    #[serde(default)]
    pub c: Vec<Vec<f64>>,
    #[serde(default)]
    pub d: Vec<Vec<f64>>,
    pub x_init: Vec<f64>,
    #[serde(default)]
    pub capabilities: Option<Capabilities>,
}

impl LinearSubsystem {
    fn n_in(&self) -> usize {
        self.b.first().map_or(0, Vec::len)
    }

    fn n_out(&self) -> usize {
        self.c.len()
    }

    fn check(&self) -> Result<()> {
        let n = self.x_init.len();
        let (n_in, n_out) = (self.n_in(), self.n_out());
        let bad = |what: &str| Err(Error::Config(format!("subsystem `{}`: {what}", self.label)));
        if self.a.len() != n || self.a.iter().any(|r| r.len() != n) {
            return bad("A must be n_st x n_st");
        }
        if !(self.b.is_empty() || (self.b.len() == n && self.b.iter().all(|r| r.len() == n_in))) {
            return bad("B must be n_st x n_in");
        }
        if self.c.iter().any(|r| r.len() != n) {
            return bad("C must be n_out x n_st");
        }
        if !(self.d.is_empty() || (self.d.len() == n_out && self.d.iter().all(|r| r.len() == n_in))) {
            return bad("D must be n_out x n_in");
        }
        Ok(())
    }
}

#[derive(Debug)]
struct LinearDynamics(LinearSubsystem);

impl Dynamics for LinearDynamics {
    fn derivative(&self, _t: f64, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let s = &self.0;
        for (i, slot) in dx.iter_mut().enumerate() {
            let mut acc: f64 = s.a[i].iter().zip(x).map(|(a, x)| a * x).sum();
            if let Some(row) = s.b.get(i) {
                acc += row.iter().zip(u).map(|(b, u)| b * u).sum::<f64>();
            }
            *slot = acc;
        }
    }
    fn output(&self, _t: f64, x: &[f64], u: &[f64], y: &mut [f64]) {
        let s = &self.0;
        for (j, slot) in y.iter_mut().enumerate() {
            let mut acc: f64 = s.c[j].iter().zip(x).map(|(c, x)| c * x).sum();
            if let Some(row) = s.d.get(j) {
                acc += row.iter().zip(u).map(|(d, u)| d * u).sum::<f64>();
            }
            *slot = acc;
        }
    }
}

/// Builds a network of linear subsystems; `links` are `(consumer, input, producer, output)`.
pub fn build_linear(
    systems: &[LinearSubsystem],
    links: &[(usize, usize, usize, usize)],
    t_init: f64,
    t_end: f64,
) -> Result<CoSimModel> {
    for s in systems {
        s.check()?;
    }
    let arities: Vec<(usize, usize)> = systems.iter().map(|s| (s.n_in(), s.n_out())).collect();
    let graph = links
        .iter()
        .fold(CouplingGraph::new(&arities), |g, &(k, i, l, j)| g.connect(k, i, l, j));
    let model = CoSimModel {
        name: "linear".into(),
        subsystems: systems
            .iter()
            .map(|s| {
                SubsystemSpec::new(
                    s.label.clone(),
                    s.n_in(),
                    s.n_out(),
                    s.x_init.clone(),
                    Arc::new(LinearDynamics(s.clone())),
                )
            })
            .collect(),
        capabilities: systems
            .iter()
            .map(|s| s.capabilities.unwrap_or_default())
            .collect(),
        graph,
        t_init,
        t_end,
        breakpoints: Vec::new(),
    };
    model.validate()?;
    Ok(model)
}

// ---------------------------------------------------------------------------
// Monolithic reference

/// States of every subsystem sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrace {
    pub times: Vec<f64>,
    /// `states[k][n]` is subsystem `k`'s state vector at `times[n]`.
    pub states: Vec<Vec<Vec<f64>>>,
}

impl ReferenceTrace {
    /// One scalar series: component `index` of subsystem `system`'s state.
    pub fn series(&self, system: usize, index: usize) -> Vec<f64> {
        self.states[system].iter().map(|x| x[index]).collect()
    }
}

/// The coupled model as one right-hand side, with reusable buffers.
struct ClosedLoop<'a> {
    model: &'a CoSimModel,
    offsets: Vec<usize>,
    outputs: Vec<Vec<f64>>,
    scratch: Vec<Vec<f64>>,
    inputs: Vec<Vec<f64>>,
}

impl<'a> ClosedLoop<'a> {
    fn new(model: &'a CoSimModel) -> Self {
        let mut offsets = Vec::with_capacity(model.n_sys() + 1);
        let mut off = 0;
        for s in &model.subsystems {
            offsets.push(off);
            off += s.n_st;
        }
        offsets.push(off);
        let outs: Vec<Vec<f64>> = model.subsystems.iter().map(|s| vec![0.0; s.n_out]).collect();
        Self {
            model,
            offsets,
            scratch: outs.clone(),
            outputs: outs,
            inputs: model.subsystems.iter().map(|s| vec![0.0; s.n_in]).collect(),
        }
    }

    fn gather(&mut self, k: usize) {
        for (i, slot) in self.inputs[k].iter_mut().enumerate() {
            *slot = self
                .model
                .graph
                .source_of(k, i)
                .map_or(0.0, |Port { system, port }| self.outputs[system][port]);
        }
    }

    fn eval(&mut self, t: f64, flat: &[f64], out: &mut [f64]) {
        let n = self.model.n_sys();
        self.outputs.iter_mut().for_each(|y| y.fill(0.0));
        for _ in 0..=n {
            for k in 0..n {
                self.gather(k);
                let x = &flat[self.offsets[k]..self.offsets[k + 1]];
                self.model.subsystems[k]
                    .dynamics
                    .output(t, x, &self.inputs[k], &mut self.scratch[k]);
            }
            std::mem::swap(&mut self.outputs, &mut self.scratch);
        }
        for k in 0..n {
            self.gather(k);
            let (a, b) = (self.offsets[k], self.offsets[k + 1]);
            self.model.subsystems[k]
                .dynamics
                .derivative(t, &flat[a..b], &self.inputs[k], &mut out[a..b]);
        }
    }
}

/// Number of grid intervals when `step` divides `span` up to rounding.
pub fn grid_intervals(span: f64, step: f64) -> Option<usize> {
    let n = (span / step).round();
    (n >= 1.0 && (n * step - span).abs() <= 1e-9 * span.abs().max(1.0)).then_some(n as usize)
}

/// Integrates the coupled model as a single ODE with instantaneous coupling
/// (fixed-step RK4), sampling every subsystem state each `grid_step`.
pub fn monolithic_reference(model: &CoSimModel, grid_step: f64, micro_step: f64) -> Result<ReferenceTrace> {
    model.validate()?;
    let span = model.t_end - model.t_init;
    let n_grid = grid_intervals(span, grid_step).ok_or_else(|| {
        Error::Config(format!("grid step {grid_step} does not divide the horizon {span}"))
    })?;
    let sizes: Vec<usize> = model.subsystems.iter().map(|s| s.n_st).collect();
    let total: usize = sizes.iter().sum();
    let split = |flat: &[f64]| -> Vec<Vec<f64>> {
        let mut off = 0;
        sizes
            .iter()
            .map(|&n| {
                let v = flat[off..off + n].to_vec();
                off += n;
                v
            })
            .collect()
    };
    let mut closed = ClosedLoop::new(model);
    let mut rhs = |t: f64, flat: &[f64], out: &mut [f64]| closed.eval(t, flat, out);

    let mut x: Vec<f64> = model.subsystems.iter().flat_map(|s| s.x_init.clone()).collect();
    let mut times = Vec::with_capacity(n_grid + 1);
    let mut states: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(n_grid + 1); model.n_sys()];
    let mut record = |t: f64, x: &[f64], times: &mut Vec<f64>| {
        times.push(t);
        for (k, s) in split(x).into_iter().enumerate() {
            states[k].push(s);
        }
    };
    record(model.t_init, &x, &mut times);

    let mut ks = vec![vec![0.0; total]; 4];
    let mut tmp = vec![0.0; total];
    let mut rk4 = |t0: f64, dt: f64, t_last: f64, x: &mut Vec<f64>| {
        let tm = t0 + 0.5 * dt;
        rhs(t0, x, &mut ks[0]);
        for j in 0..total {
            tmp[j] = x[j] + 0.5 * dt * ks[0][j];
        }
        rhs(tm, &tmp, &mut ks[1]);
        for j in 0..total {
            tmp[j] = x[j] + 0.5 * dt * ks[1][j];
        }
        rhs(tm, &tmp, &mut ks[2]);
        for j in 0..total {
            tmp[j] = x[j] + dt * ks[2][j];
        }
        rhs(t_last, &tmp, &mut ks[3]);
        for j in 0..total {
            x[j] += dt / 6.0 * (ks[0][j] + 2.0 * ks[1][j] + 2.0 * ks[2][j] + ks[3][j]);
        }
    };

    for g in 0..n_grid {
        let tg0 = model.t_init + g as f64 * grid_step;
        let tg1 = if g + 1 == n_grid {
            model.t_end
        } else {
            model.t_init + (g + 1) as f64 * grid_step
        };
        // Pieces between breakpoints; a piece ending on a breakpoint sees the
        // left limit of the dynamics at its end.
        let mut cuts = vec![tg0];
        cuts.extend(model.breakpoints.iter().copied().filter(|&b| b > tg0 && b < tg1));
        cuts.push(tg1);
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let n = (((b - a) / micro_step) - 1e-9).ceil().max(1.0) as usize;
            let h = (b - a) / n as f64;
            let ends_on_switch = model.breakpoints.contains(&b);
            for i in 0..n {
                let t0 = a + i as f64 * h;
                let t1 = if i + 1 == n { b } else { a + (i + 1) as f64 * h };
                let t_last = if i + 1 == n && ends_on_switch { b.next_down() } else { t1 };
                rk4(t0, t1 - t0, t_last, &mut x);
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(SubsystemError::Divergence {
                        label: model.name.clone(),
                        last_good_time: t0,
                    }
                    .into());
                }
            }
        }
        record(tg1, &x, &mut times);
    }
    Ok(ReferenceTrace { times, states })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_two_mass() -> TwoMassParams {
        TwoMassParams {
            t_end: 20.0,
            t_switch: 10.0,
            ..TwoMassParams::default()
        }
    }

    #[test]
    fn equilibrium_stays_at_rest() {
        let p = TwoMassParams { x1_0: 0.0, t_end: 10.0, t_switch: 5.0, ..TwoMassParams::default() };
        let r = monolithic_reference(&build_two_mass(&p).unwrap(), 0.1, 1e-3).unwrap();
        assert!(r.states.iter().flatten().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn energy_never_increases_before_switch() {
        let p = short_two_mass();
        let r = monolithic_reference(&build_two_mass(&p).unwrap(), 0.01, 1e-3).unwrap();
        let e: Vec<f64> = (0..r.times.len())
            .filter(|&n| r.times[n] < p.t_switch)
            .map(|n| {
                let (a, b) = (&r.states[0][n], &r.states[1][n]);
                p.energy(r.times[n], a[0], a[1], b[0], b[1])
            })
            .collect();
        assert!(e.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        assert!(e.last().unwrap() < &e[0]);
    }

    #[test]
    fn mirrored_masses_stay_antisymmetric() {
        let p = TwoMassParams { x1_0: 0.1, x2_0: -0.1, t_end: 20.0, t_switch: 10.0, ..TwoMassParams::default() };
        let r = monolithic_reference(&build_two_mass(&p).unwrap(), 0.01, 1e-4).unwrap();
        for n in 0..r.times.len() {
            if r.times[n] < p.t_switch {
                assert!((r.states[0][n][0] + r.states[1][n][0]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn perturbation_is_time_indexed_and_seeded() {
        let p = CarParams::default();
        assert_eq!(p.perturbation(0.05), p.perturbation(0.09));
        assert!(p.perturbation(0.3).abs() <= p.perturb_amp);
        let q = CarParams { prng_seed: 1, ..CarParams::default() };
        let differs = (0..50).any(|i| p.perturbation(i as f64 * 0.1) != q.perturbation(i as f64 * 0.1));
        assert!(differs);
        let draws: Vec<f64> = (0..10_000).map(|i| unit_uniform(7, i)).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!(draws.iter().all(|&d| (0.0..1.0).contains(&d)));
        assert!((mean - 0.5).abs() < 0.02);
    }

    #[test]
    fn preset_profile_interpolates() {
        let p = CarParams::default();
        assert_eq!(p.preset(1.0), 2000.0);
        assert_eq!(p.preset(3.0), 4000.0);
        assert_eq!(p.preset(8.0), 0.0);
    }

    #[test]
    fn linear_input_gives_its_slope_as_speed() {
        // Fixed point of the differentiating filter for u = a + b t.
        use crate::poly::Polynomial;
        use crate::subsystem::{step_to, MicroSolver};
        let p = CarParams::default();
        let model = build_car(&p).unwrap();
        let ctrl = &model.subsystems[1];
        let u = Polynomial::new(0.0, &[3.0, 12.5]);
        let (x, _) = step_to(ctrl, &Capabilities::default(), &[3.0], &[u], 0.0, 0.1, false, &MicroSolver::default()).unwrap();
        assert!((car_observed_speed(&p, x[0], u.eval(0.1)) - 12.5).abs() < 1e-6);
    }

    #[test]
    fn linear_builder_checks_shapes() {
        let s = LinearSubsystem {
            label: "a".into(),
            a: vec![vec![-1.0]],
            b: vec![vec![1.0]],
            c: vec![vec![1.0]],
            d: vec![],
            x_init: vec![1.0],
            capabilities: None,
        };
        assert!(build_linear(&[s.clone(), s.clone()], &[(0, 0, 1, 0), (1, 0, 0, 0)], 0.0, 1.0).is_ok());
        assert!(build_linear(&[s.clone(), s.clone()], &[(0, 0, 1, 0)], 0.0, 1.0).is_err());
        let bad = LinearSubsystem { a: vec![vec![1.0, 2.0]], ..s };
        assert!(build_linear(&[bad], &[], 0.0, 1.0).is_err());
    }
}
