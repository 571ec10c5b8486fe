//! The asynchronous event loop and the fixed-step Jacobi baseline.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::{Port, SampleHistory, MAX_ORDER};
use crate::error::{Error, Result};
use crate::input_builder::{cap_degree, resolve_source, smooth, InputPlan, SmoothingContext};
use crate::models::{grid_intervals, CoSimModel};
use crate::order_select::{estimate_output, select_order_capped, CalibrationMode, EstimatedOutput};
use crate::poly::Polynomial;
use crate::scheduler::{reconcile, Schedule, ScheduleEntry};
use crate::stepper::{
    normalized_error, propose, startup, update_damped_bounds, DampedBounds, ErrorNorm, Tolerances,
};
use crate::subsystem::{effective_max_degree, step_to_observed, MicroSolver};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MasterOptions {
    pub calibration: CalibrationMode,
    pub error_norm: ErrorNorm,
    pub smoothing: bool,
    /// Upper bound on estimated-output orders (at most 2).
    pub max_order: usize,
    /// First macro-step of every subsystem.
    pub dt0: f64,
    /// `None` uses [`Tolerances::for_run`].
    pub tolerances: Option<Tolerances>,
    pub micro: MicroSolver,
    /// Threads stepping the subsystems due at one event.
    pub workers: usize,
    /// Spacing of the dense state record; `None` disables it.
    pub record_interval: Option<f64>,
    pub min_separation: f64,
    pub max_events: usize,
}

impl Default for MasterOptions {
    fn default() -> Self {
        Self {
            calibration: CalibrationMode::Extrapolation,
            error_norm: ErrorNorm::Damped,
            smoothing: false,
            max_order: MAX_ORDER,
            dt0: 1e-2,
            tolerances: None,
            micro: MicroSolver::default(),
            workers: 1,
            record_interval: Some(1e-2),
            min_separation: 1e-9,
            max_events: 10_000_000,
        }
    }
}

impl MasterOptions {
    pub fn tolerances_for(&self, model: &CoSimModel) -> Tolerances {
        self.tolerances
            .unwrap_or_else(|| Tolerances::for_run(self.dt0, model.t_init, model.t_end))
    }
}

/// One communication of one subsystem.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub outputs: Vec<f64>,
    pub states: Vec<f64>,
    /// Orders of the estimates published at `t`.
    pub orders: Vec<usize>,
    /// Normalized prediction errors measured at `t` (NaN on the first row).
    pub errors: Vec<f64>,
    /// Dilatation coefficient chosen at `t` (NaN when none was computed).
    pub rho: f64,
    /// Input polynomials used on the window that ended at `t`.
    pub inputs: Vec<InputPlan>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemTrace {
    pub label: String,
    pub rows: Vec<TraceRow>,
    /// States on the run's dense grid, interpolated from micro-steps.
    pub dense: Vec<Vec<f64>>,
}

impl SubsystemTrace {
    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn dense_series(&self, index: usize) -> Vec<f64> {
        self.dense.iter().map(|x| x[index]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub method: String,
    pub subsystems: Vec<SubsystemTrace>,
    pub dense_times: Vec<f64>,
    /// Exchange events (simultaneous communications count once).
    pub total_steps: usize,
    pub wall_time_s: f64,
}

impl RunTrace {
    /// Largest absolute difference between the communication rows of two
    /// traces, or infinity if their shapes differ.
    pub fn max_abs_difference(&self, other: &RunTrace) -> f64 {
        if self.subsystems.len() != other.subsystems.len() {
            return f64::INFINITY;
        }
        let mut worst: f64 = 0.0;
        for (a, b) in self.subsystems.iter().zip(&other.subsystems) {
            if a.rows.len() != b.rows.len() || a.dense.len() != b.dense.len() {
                return f64::INFINITY;
            }
            for (ra, rb) in a.rows.iter().zip(&b.rows) {
                worst = worst.max((ra.t - rb.t).abs());
                for (x, y) in ra.outputs.iter().zip(&rb.outputs).chain(ra.states.iter().zip(&rb.states)) {
                    worst = worst.max((x - y).abs());
                }
            }
            for (xa, xb) in a.dense.iter().zip(&b.dense) {
                for (x, y) in xa.iter().zip(xb) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
        worst
    }
}

// ---------------------------------------------------------------------------
// Dense recording

#[derive(Debug, Clone)]
struct Recorder {
    next: usize,
    prev_t: f64,
    prev_x: Vec<f64>,
}

impl Recorder {
    fn start(grid: &[f64], t0: f64, x0: &[f64], out: &mut Vec<Vec<f64>>) -> Self {
        let mut r = Self {
            next: 0,
            prev_t: t0,
            prev_x: x0.to_vec(),
        };
        while r.next < grid.len() && grid[r.next] <= t0 {
            out.push(x0.to_vec());
            r.next += 1;
        }
        r
    }

    fn observe(&mut self, grid: &[f64], t: f64, x: &[f64], out: &mut Vec<Vec<f64>>) {
        while self.next < grid.len() && grid[self.next] <= t {
            let g = grid[self.next];
            let w = if t > self.prev_t {
                ((g - self.prev_t) / (t - self.prev_t)).clamp(0.0, 1.0)
            } else {
                1.0
            };
            out.push(
                self.prev_x
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a + w * (b - a))
                    .collect(),
            );
            self.next += 1;
        }
        self.prev_t = t;
        self.prev_x.clear();
        self.prev_x.extend_from_slice(x);
    }
}

fn dense_grid(model: &CoSimModel, interval: Option<f64>) -> Vec<f64> {
    let Some(h) = interval else {
        return Vec::new();
    };
    let span = model.t_end - model.t_init;
    match grid_intervals(span, h) {
        Some(n) => (0..=n)
            .map(|i| if i == n { model.t_end } else { model.t_init + i as f64 * h })
            .collect(),
        None => Vec::new(),
    }
}

// ---------------------------------------------------------------------------
// Shared per-subsystem machinery

#[derive(Debug, Clone)]
struct Channel {
    history: SampleHistory,
    bounds: DampedBounds,
    estimates: Vec<EstimatedOutput>,
    starts: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Runtime {
    state: Vec<f64>,
    outputs: Vec<f64>,
    channels: Vec<Channel>,
    smoothing: Vec<SmoothingContext>,
    recorder: Recorder,
    trace: SubsystemTrace,
}

struct Advance {
    state: Vec<f64>,
    outputs: Vec<f64>,
    plans: Vec<InputPlan>,
    smoothing: Vec<SmoothingContext>,
    recorder: Recorder,
    dense: Vec<Vec<f64>>,
}

fn integrate(
    model: &CoSimModel,
    opts: &MasterOptions,
    grid: &[f64],
    rt: &Runtime,
    k: usize,
    plans: Vec<InputPlan>,
    smoothing: Vec<SmoothingContext>,
    window: (f64, f64),
) -> Result<Advance> {
    let spec = &model.subsystems[k];
    let caps = &model.capabilities[k];
    let polys: Vec<Polynomial> = plans.iter().map(|p| p.poly).collect();
    let mut recorder = rt.recorder.clone();
    let mut dense = Vec::new();
    let smoothing_active = opts.smoothing && caps.smoothing_eligible();
    let (state, result) = step_to_observed(
        spec,
        caps,
        &rt.state,
        &polys,
        window.0,
        window.1,
        smoothing_active,
        &opts.micro,
        &mut |t, x| recorder.observe(grid, t, x, &mut dense),
    )?;
    Ok(Advance {
        state,
        outputs: result.outputs,
        plans,
        smoothing,
        recorder,
        dense,
    })
}

fn initial_runtimes(model: &CoSimModel, grid: &[f64]) -> Vec<Runtime> {
    let states: Vec<Vec<f64>> = model.subsystems.iter().map(|s| s.x_init.clone()).collect();
    let outputs = model.coupled_outputs(model.t_init, &states);
    model
        .subsystems
        .iter()
        .zip(outputs)
        .map(|(s, y)| {
            let mut dense = Vec::new();
            let recorder = Recorder::start(grid, model.t_init, &s.x_init, &mut dense);
            let channels = y
                .iter()
                .map(|&y0| {
                    let mut history = SampleHistory::new();
                    history.push(model.t_init, y0).expect("empty history accepts any sample");
                    Channel {
                        history,
                        bounds: DampedBounds::new(y0),
                        estimates: vec![EstimatedOutput {
                            poly: Polynomial::constant(y0, model.t_init),
                            window_start: model.t_init,
                            mode: CalibrationMode::Extrapolation,
                        }],
                        starts: vec![model.t_init],
                    }
                })
                .collect();
            let first = TraceRow {
                t: model.t_init,
                outputs: y.clone(),
                states: s.x_init.clone(),
                orders: vec![0; s.n_out],
                errors: vec![f64::NAN; s.n_out],
                rho: f64::NAN,
                inputs: Vec::new(),
            };
            Runtime {
                state: s.x_init.clone(),
                outputs: y,
                channels,
                smoothing: vec![SmoothingContext::new(); s.n_in],
                recorder,
                trace: SubsystemTrace {
                    label: s.label.clone(),
                    rows: vec![first],
                    dense,
                },
            }
        })
        .collect()
}

fn step_all<F>(pool: &Option<rayon::ThreadPool>, due: &[usize], f: F) -> Vec<Result<Advance>>
where
    F: Fn(usize) -> Result<Advance> + Sync,
{
    match pool {
        Some(p) => p.install(|| due.par_iter().map(|&k| f(k)).collect()),
        None => due.iter().map(|&k| f(k)).collect(),
    }
}

fn thread_pool(workers: usize) -> Result<Option<rayon::ThreadPool>> {
    if workers <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map(Some)
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

// ---------------------------------------------------------------------------
// F3ORNITS

pub fn run_f3ornits(model: &CoSimModel, opts: &MasterOptions) -> Result<RunTrace> {
    let clock = Instant::now();
    model.validate()?;
    let tol = opts.tolerances_for(model);
    tol.validate()?;
    if opts.max_order > MAX_ORDER {
        return Err(Error::Config(format!("max_order must be at most {MAX_ORDER}")));
    }
    let (t_init, t_first) = startup(opts.dt0, model.t_init)?;
    let t_end = model.t_end;
    let n = model.n_sys();
    let grid = dense_grid(model, opts.record_interval);
    let pool = thread_pool(opts.workers)?;
    let mut rts = initial_runtimes(model, &grid);

    let mut schedule = Schedule::new(t_init, t_end, vec![ScheduleEntry::due(t_init, t_first); n]);
    schedule.min_separation = opts.min_separation;
    reconcile(&mut schedule, &model.graph, &model.capabilities)?;

    let mut events = 0usize;
    while let Some(t_ev) = schedule.next_event() {
        events += 1;
        if events > opts.max_events {
            return Err(Error::Config(format!(
                "run exceeded max_events = {} at t = {t_ev}",
                opts.max_events
            )));
        }
        let due = schedule.due_at(t_ev);
        let results = step_all(&pool, &due, |k| {
            let t_start = schedule.entries[k].t_reached;
            let caps = &model.capabilities[k];
            let mut contexts = rts[k].smoothing.clone();
            let mut plans = Vec::with_capacity(model.subsystems[k].n_in);
            for (i, ctx) in contexts.iter_mut().enumerate() {
                let source = model.graph.source_of(k, i).ok_or_else(|| {
                    Error::Config(format!("input {i} of subsystem {k} is not connected"))
                })?;
                let ch = &rts[source.system].channels[source.port];
                let m = resolve_source(&ch.starts, t_start)?;
                let plan = InputPlan {
                    poly: cap_degree(&ch.estimates[m].poly, effective_max_degree(caps), (t_start, t_ev)),
                    window: (t_start, t_ev),
                    source,
                    source_window: m,
                    smoothed: false,
                    smoothing_skipped: false,
                };
                plans.push(if opts.smoothing { smooth(&plan, ctx, caps) } else { plan });
            }
            integrate(model, opts, &grid, &rts[k], k, plans, contexts, (t_start, t_ev))
        });

        for (&k, res) in due.iter().zip(results) {
            let adv = res?;
            let entry = schedule.entries[k];
            let dt = t_ev - entry.t_reached;
            let rt = &mut rts[k];
            let mut errors = Vec::with_capacity(adv.outputs.len());
            let mut used_orders = Vec::with_capacity(adv.outputs.len());
            let mut orders = Vec::with_capacity(adv.outputs.len());
            let mut orders_changed = false;
            for (ch, &y) in rt.channels.iter_mut().zip(&adv.outputs) {
                let last = *ch.estimates.last().expect("estimate published at t_init");
                ch.bounds = update_damped_bounds(&ch.bounds, y, dt, tol.nu);
                errors.push(normalized_error(y, last.eval(t_ev), opts.error_norm, &ch.bounds, &tol));
                used_orders.push(last.order());
                let decision = select_order_capped(&ch.history, (t_ev, y), opts.max_order)?;
                ch.history.push(t_ev, y)?;
                let est = estimate_output(&ch.history, decision.order, opts.calibration)?;
                orders_changed |= est.order() != last.order();
                orders.push(est.order());
                ch.estimates.push(est);
                ch.starts.push(t_ev);
            }
            let caps = &model.capabilities[k];
            let (t_est, rho) = if adv.outputs.is_empty() {
                (t_end, f64::NAN)
            } else if !caps.variable_step && caps.imposed_step.is_none() {
                ((t_ev + opts.dt0).min(t_end), f64::NAN)
            } else {
                let p = propose(&errors, &used_orders, dt, t_ev, t_end, &tol)?;
                (p.t_next_estimated, p.rho)
            };
            rt.state = adv.state;
            rt.outputs = adv.outputs.clone();
            rt.smoothing = adv.smoothing;
            rt.recorder = adv.recorder;
            rt.trace.dense.extend(adv.dense);
            rt.trace.rows.push(TraceRow {
                t: t_ev,
                outputs: adv.outputs,
                states: rt.state.clone(),
                orders,
                errors,
                rho,
                inputs: adv.plans,
            });
            schedule.entries[k] = ScheduleEntry {
                t_reached: t_ev,
                t_next_estimated: t_est,
                t_next_effective: t_est,
                step_count: entry.step_count + 1,
                idle: false,
                orders_changed,
            };
        }
        for (k, e) in schedule.entries.iter_mut().enumerate() {
            if !due.contains(&k) {
                e.idle = true;
            }
        }
        if schedule.entries.iter().any(|e| !e.finished(t_end)) {
            reconcile(&mut schedule, &model.graph, &model.capabilities)?;
        }
    }

    Ok(RunTrace {
        method: "f3ornits".into(),
        subsystems: rts.into_iter().map(|r| r.trace).collect(),
        dense_times: grid,
        total_steps: events,
        wall_time_s: clock.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// Jacobi, zero-order hold

pub fn run_jacobi(model: &CoSimModel, dt: f64, opts: &MasterOptions) -> Result<RunTrace> {
    let clock = Instant::now();
    model.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config(format!("jacobi dt must be > 0, got {dt}")));
    }
    let span = model.t_end - model.t_init;
    let n_steps = grid_intervals(span, dt).ok_or_else(|| {
        Error::Config(format!("jacobi dt {dt} does not divide the horizon {span}"))
    })?;
    let grid = dense_grid(model, opts.record_interval);
    let pool = thread_pool(opts.workers)?;
    let mut rts = initial_runtimes(model, &grid);
    let all: Vec<usize> = (0..model.n_sys()).collect();

    for step in 1..=n_steps {
        let t0 = model.t_init + (step - 1) as f64 * dt;
        let t1 = if step == n_steps {
            model.t_end
        } else {
            model.t_init + step as f64 * dt
        };
        let results = step_all(&pool, &all, |k| {
            let plans = (0..model.subsystems[k].n_in)
                .map(|i| {
                    let source = model.graph.source_of(k, i).ok_or_else(|| {
                        Error::Config(format!("input {i} of subsystem {k} is not connected"))
                    })?;
                    let Port { system, port } = source;
                    Ok(InputPlan {
                        poly: Polynomial::constant(rts[system].outputs[port], t0),
                        window: (t0, t1),
                        source,
                        source_window: step - 1,
                        smoothed: false,
                        smoothing_skipped: false,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let ctx = rts[k].smoothing.clone();
            integrate(model, opts, &grid, &rts[k], k, plans, ctx, (t0, t1))
        });
        for (k, res) in results.into_iter().enumerate() {
            let adv = res?;
            let rt = &mut rts[k];
            rt.state = adv.state;
            rt.outputs = adv.outputs.clone();
            rt.recorder = adv.recorder;
            rt.trace.dense.extend(adv.dense);
            rt.trace.rows.push(TraceRow {
                t: t1,
                outputs: adv.outputs,
                states: rt.state.clone(),
                orders: vec![0; rt.channels.len()],
                errors: vec![f64::NAN; rt.channels.len()],
                rho: f64::NAN,
                inputs: adv.plans,
            });
        }
    }

    Ok(RunTrace {
        method: "jacobi".into(),
        subsystems: rts.into_iter().map(|r| r.trace).collect(),
        dense_times: grid,
        total_steps: n_steps,
        wall_time_s: clock.elapsed().as_secs_f64(),
    })
}
