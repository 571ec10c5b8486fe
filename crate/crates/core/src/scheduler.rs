//! Reconciliation of estimated next communication times into effective ones.
//!
//! Rules, applied in order to every subsystem that is due (not idle):
//!
//! 1. imposed-step subsystems snap to the next point of their grid;
//! 2. a consumer never runs past the planned refresh of a producer: the
//!    estimate of a producer that is also due, or the committed time of an
//!    idle one;
//! 3. subsystems without outputs are pulled in to their producers' effective
//!    times, except when every producer has no inputs and kept its orders
//!    (nothing new to react to, so they coast);
//! 4. everything is clamped to `t_end`;
//! 5. every due subsystem advances by at least `min_separation`.
//!
//! Idle subsystems keep their committed window untouched.

use crate::coupling::{CouplingGraph, TopologyTag};
use crate::error::{Error, Result};
use crate::subsystem::Capabilities;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleEntry {
    pub t_reached: f64,
    pub t_next_estimated: f64,
    pub t_next_effective: f64,
    pub step_count: usize,
    /// In flight towards `t_next_effective`; reconciliation leaves it alone.
    pub idle: bool,
    /// Some output changed order on the latest published estimate.
    pub orders_changed: bool,
}

impl ScheduleEntry {
    /// A due entry at `t_reached` asking for `t_next_estimated`.
    pub fn due(t_reached: f64, t_next_estimated: f64) -> Self {
        Self {
            t_reached,
            t_next_estimated,
            t_next_effective: t_next_estimated,
            step_count: 0,
            idle: false,
            orders_changed: false,
        }
    }

    /// An entry already committed to `t_next_effective`.
    pub fn in_flight(t_reached: f64, t_next_effective: f64) -> Self {
        Self {
            t_reached,
            t_next_estimated: t_next_effective,
            t_next_effective,
            step_count: 0,
            idle: true,
            orders_changed: false,
        }
    }

    pub fn finished(&self, t_end: f64) -> bool {
        self.t_reached >= t_end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub t_init: f64,
    pub t_end: f64,
    pub min_separation: f64,
    pub entries: Vec<ScheduleEntry>,
}

impl Schedule {
    pub fn new(t_init: f64, t_end: f64, entries: Vec<ScheduleEntry>) -> Self {
        Self {
            t_init,
            t_end,
            min_separation: 1e-9,
            entries,
        }
    }

    /// Smallest effective time among unfinished subsystems.
    pub fn next_event(&self) -> Option<f64> {
        self.entries
            .iter()
            .filter(|e| !e.finished(self.t_end))
            .map(|e| e.t_next_effective)
            .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.min(t))))
    }

    /// Unfinished subsystems whose effective time is within `min_separation`
    /// of `t`. Merging near-coincident times keeps mutually coupled
    /// subsystems from leapfrogging each other by a few ulps.
    pub fn due_at(&self, t: f64) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| {
                !e.finished(self.t_end)
                    && e.t_next_effective - t < self.min_separation
                    && t > e.t_reached
            })
            .map(|(k, _)| k)
            .collect()
    }
}

/// Next point of the grid `t_init + k * step` strictly after `t_reached`.
pub fn next_grid_point(t_init: f64, step: f64, t_reached: f64) -> f64 {
    let k = ((t_reached - t_init) / step + 1e-9).floor() + 1.0;
    t_init + k * step
}

pub fn reconcile(schedule: &mut Schedule, graph: &CouplingGraph, caps: &[Capabilities]) -> Result<()> {
    let n = schedule.entries.len();
    if n == 0 {
        return Err(Error::Usage("cannot reconcile an empty schedule".into()));
    }
    if graph.n_sys() != n || caps.len() != n {
        return Err(Error::Usage(format!(
            "schedule has {n} entries, graph {} subsystems, {} capability sets",
            graph.n_sys(),
            caps.len()
        )));
    }
    let (t_init, t_end, eps) = (schedule.t_init, schedule.t_end, schedule.min_separation);
    for (k, c) in caps.iter().enumerate() {
        if let Some(h) = c.imposed_step {
            if !(h.is_finite() && h >= eps) {
                return Err(Error::Config(format!(
                    "subsystem {k}: imposed step {h} is below the minimum separation {eps}"
                )));
            }
        }
    }
    let due: Vec<bool> = schedule
        .entries
        .iter()
        .map(|e| !e.idle && !e.finished(t_end))
        .collect();

    // (a) imposed grids
    let mut proposal: Vec<f64> = schedule
        .entries
        .iter()
        .zip(caps)
        .map(|(e, c)| match c.imposed_step {
            Some(h) => next_grid_point(t_init, h, e.t_reached),
            None => e.t_next_estimated,
        })
        .collect();
    let refresh: Vec<f64> = (0..n)
        .map(|l| {
            if due[l] {
                proposal[l]
            } else {
                schedule.entries[l].t_next_effective
            }
        })
        .collect();

    // (b) consumer clamp
    for k in (0..n).filter(|&k| due[k] && caps[k].imposed_step.is_none()) {
        for l in graph.producers_of(k) {
            if l != k {
                proposal[k] = proposal[k].min(refresh[l]);
            }
        }
    }

    // (c) pull-in of subsystems without outputs
    let after_b = proposal.clone();
    for k in (0..n).filter(|&k| due[k] && caps[k].imposed_step.is_none()) {
        if graph.topology(k).has_outputs() {
            continue;
        }
        let producers: Vec<usize> = graph.producers_of(k).into_iter().filter(|&l| l != k).collect();
        let coast = producers.iter().all(|&l| {
            graph.topology(l) == TopologyTag::NI && !schedule.entries[l].orders_changed
        });
        if coast {
            continue;
        }
        for l in producers {
            let eff_l = if due[l] { after_b[l] } else { schedule.entries[l].t_next_effective };
            proposal[k] = proposal[k].min(eff_l);
        }
    }

    for k in (0..n).filter(|&k| due[k]) {
        let reached = schedule.entries[k].t_reached;
        // (d) horizon; snap when only a sliver would remain
        let mut t = proposal[k].min(t_end);
        if t_end - t < eps {
            t = t_end;
        }
        // (e) minimum progress
        if t < reached + eps {
            t = (reached + eps).min(t_end);
        }
        let e = &mut schedule.entries[k];
        e.t_next_effective = t;
    }
    Ok(())
}
