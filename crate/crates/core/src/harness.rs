//! Run configuration files, CSV export, RMSE scoring and the comparison
//! matrix over masters and their options.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    build_car, build_linear, build_two_mass, monolithic_reference, CarParams, CoSimModel,
    LinearSubsystem, ReferenceTrace, TwoMassParams,
};
use crate::order_select::CalibrationMode;
use crate::orchestrator::{run_f3ornits, run_jacobi, MasterOptions, RunTrace};
use crate::stepper::{ErrorNorm, Tolerances};
use crate::subsystem::MicroSolver;

/// Step of the fine RK4 integration behind reference traces.
pub const REFERENCE_MICRO_STEP: f64 = 1e-4;

/// Jacobi step sizes of the comparison matrix.
pub const JACOBI_STEPS: [f64; 5] = [0.01, 0.05, 0.1, 0.2, 0.4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    TwoMass,
    Car,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    F3ornits,
    Jacobi,
}

/// Contents of a run configuration file (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    pub method: MethodKind,
    /// Jacobi communication step.
    pub dt: Option<f64>,
    pub dt0: Option<f64>,
    pub calibration: Option<CalibrationMode>,
    pub smoothing: Option<bool>,
    pub error_norm: Option<ErrorNorm>,
    pub tol_rel: Option<f64>,
    pub tol_abs: Option<f64>,
    pub nu: Option<f64>,
    pub rho_min: Option<f64>,
    pub rho_max: Option<f64>,
    pub dt_min: Option<f64>,
    pub dt_max: Option<f64>,
    pub max_order: Option<usize>,
    pub workers: Option<usize>,
    pub record_interval: Option<f64>,
    pub micro_max_step: Option<f64>,
    pub output_dir: Option<String>,
    /// Model parameter overrides; for `linear` the whole network.
    #[serde(default)]
    pub param: toml::Table,
}

impl RunConfig {
    pub fn new(model: ModelKind, method: MethodKind) -> Self {
        Self {
            model,
            method,
            dt: None,
            dt0: None,
            calibration: None,
            smoothing: None,
            error_norm: None,
            tol_rel: None,
            tol_abs: None,
            nu: None,
            rho_min: None,
            rho_max: None,
            dt_min: None,
            dt_max: None,
            max_order: None,
            workers: None,
            record_interval: None,
            micro_max_step: None,
            output_dir: None,
            param: toml::Table::new(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Sets `[param]` entry `key` from `raw`, read as a TOML value; bare
    /// words that are not valid TOML are taken as strings.
    pub fn set_param(&mut self, key: &str, raw: &str) -> Result<()> {
        if key.is_empty() {
            return Err(Error::Config("empty parameter name".into()));
        }
        let value = match format!("v = {raw}").parse::<toml::Table>() {
            Ok(mut t) => t.remove("v").expect("key present"),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        self.param.insert(key.to_string(), value);
        Ok(())
    }

    pub fn check(&self) -> Result<()> {
        if self.method == MethodKind::Jacobi && self.dt.is_none() {
            return Err(Error::Config("missing field `dt` (required by method = \"jacobi\")".into()));
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<CoSimModel> {
        let table = toml::Value::Table(self.param.clone());
        let bad = |e: toml::de::Error| Error::Config(format!("[param]: {e}"));
        match self.model {
            ModelKind::TwoMass => build_two_mass(&table.try_into::<TwoMassParams>().map_err(bad)?),
            ModelKind::Car => build_car(&table.try_into::<CarParams>().map_err(bad)?),
            ModelKind::Linear => {
                let net: LinearNetwork = table.try_into().map_err(bad)?;
                let links: Vec<_> = net.links.iter().map(|l| (l[0], l[1], l[2], l[3])).collect();
                build_linear(&net.subsystems, &links, net.t_init, net.t_end)
            }
        }
    }

    pub fn master_options(&self, model: &CoSimModel) -> Result<MasterOptions> {
        let d = MasterOptions::default();
        let dt0 = self.dt0.unwrap_or(d.dt0);
        let base = Tolerances::for_run(dt0, model.t_init, model.t_end);
        let tolerances = Tolerances {
            tol_rel: self.tol_rel.unwrap_or(base.tol_rel),
            tol_abs: self.tol_abs.unwrap_or(base.tol_abs),
            rho_min: self.rho_min.unwrap_or(base.rho_min),
            rho_max: self.rho_max.unwrap_or(base.rho_max),
            nu: self.nu.unwrap_or(base.nu),
            dt_min: self.dt_min.unwrap_or(base.dt_min),
            dt_max: self.dt_max.unwrap_or(base.dt_max),
        };
        tolerances.validate()?;
        if let Some(w) = self.workers {
            if w == 0 {
                return Err(Error::Config("workers must be at least 1".into()));
            }
        }
        Ok(MasterOptions {
            calibration: self.calibration.unwrap_or(d.calibration),
            error_norm: self.error_norm.unwrap_or(d.error_norm),
            smoothing: self.smoothing.unwrap_or(d.smoothing),
            max_order: self.max_order.unwrap_or(d.max_order),
            dt0,
            tolerances: Some(tolerances),
            micro: MicroSolver {
                max_step: self.micro_max_step.unwrap_or(d.micro.max_step),
                ..d.micro
            },
            workers: self.workers.unwrap_or(d.workers),
            record_interval: Some(self.record_interval.unwrap_or(0.01)),
            ..d
        })
    }

    pub fn execute(&self) -> Result<(CoSimModel, RunTrace)> {
        self.check()?;
        let model = self.build_model()?;
        let opts = self.master_options(&model)?;
        let trace = match self.method {
            MethodKind::F3ornits => run_f3ornits(&model, &opts)?,
            MethodKind::Jacobi => run_jacobi(&model, self.dt.unwrap_or_default(), &opts)?,
        };
        Ok((model, trace))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearNetwork {
    subsystems: Vec<LinearSubsystem>,
    #[serde(default)]
    links: Vec<[usize; 4]>,
    #[serde(default)]
    t_init: f64,
    t_end: f64,
}

// ---------------------------------------------------------------------------
// Scoring

/// Root-mean-square error in percent of the reference amplitude.
pub fn rmse_percent(trace: &[f64], reference: &[f64]) -> Result<f64> {
    if trace.len() != reference.len() || trace.is_empty() {
        return Err(Error::Usage(format!(
            "rmse needs equal non-empty series, got {} and {}",
            trace.len(),
            reference.len()
        )));
    }
    let (lo, hi) = reference
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let amplitude = hi - lo;
    if !(amplitude > 0.0) {
        return Err(Error::Usage("reference signal is flat; rmse percentage undefined".into()));
    }
    let mse = trace
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / trace.len() as f64;
    Ok(100.0 * mse.sqrt() / amplitude)
}

pub fn reference_for(model: &CoSimModel, record_interval: f64) -> Result<ReferenceTrace> {
    monolithic_reference(model, record_interval, REFERENCE_MICRO_STEP)
}

// ---------------------------------------------------------------------------
// CSV

/// Decimal text with 17 significant digits; parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_table(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a numeric CSV written by this module: header plus rows of floats.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::Malformed(format!("{}: not a number: {s:?}", path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Writes one communication CSV and one dense-state CSV per subsystem, plus
/// `summary.csv`. Wall time goes to `timing.csv` so the rest of the output is
/// a pure function of the configuration.
pub fn write_trace(dir: &Path, model: &CoSimModel, trace: &RunTrace) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (spec, sub) in model.subsystems.iter().zip(&trace.subsystems) {
        let mut header = vec!["t".to_string()];
        header.extend((0..spec.n_out).map(|j| format!("y{j}")));
        header.extend((0..spec.n_st).map(|j| format!("x{j}")));
        header.extend((0..spec.n_out).map(|j| format!("order_y{j}")));
        header.extend((0..spec.n_out).map(|j| format!("err_y{j}")));
        header.push("rho".into());
        for i in 0..spec.n_in {
            header.push(format!("u{i}_t_ref"));
            header.extend((0..4).map(|c| format!("u{i}_c{c}")));
            header.push(format!("u{i}_smoothed"));
        }
        let rows = sub.rows.iter().map(|r| {
            let mut v = vec![fmt_f64(r.t)];
            v.extend(r.outputs.iter().map(|&x| fmt_f64(x)));
            v.extend(r.states.iter().map(|&x| fmt_f64(x)));
            v.extend(r.orders.iter().map(|o| o.to_string()));
            v.extend(r.errors.iter().map(|&x| fmt_f64(x)));
            v.push(fmt_f64(r.rho));
            if r.inputs.is_empty() {
                v.extend(std::iter::repeat_n(fmt_f64(f64::NAN), 6 * spec.n_in));
            }
            for p in &r.inputs {
                v.push(fmt_f64(p.poly.t_ref()));
                let mut c = [0.0; 4];
                c[..p.poly.coeffs().len()].copy_from_slice(p.poly.coeffs());
                v.extend(c.iter().map(|&x| fmt_f64(x)));
                v.push(u8::from(p.smoothed).to_string());
            }
            v
        });
        write_table(&dir.join(format!("{}.csv", sub.label)), &header, rows)?;

        if !trace.dense_times.is_empty() {
            let mut header = vec!["t".to_string()];
            header.extend((0..spec.n_st).map(|j| format!("x{j}")));
            let rows = trace.dense_times.iter().zip(&sub.dense).map(|(&t, x)| {
                std::iter::once(fmt_f64(t))
                    .chain(x.iter().map(|&v| fmt_f64(v)))
                    .collect()
            });
            write_table(&dir.join(format!("{}_dense.csv", sub.label)), &header, rows)?;
        }
    }
    let mut summary = BTreeMap::new();
    summary.insert("method".to_string(), trace.method.clone());
    summary.insert("model".to_string(), model.name.clone());
    summary.insert("total_steps".to_string(), trace.total_steps.to_string());
    for sub in &trace.subsystems {
        summary.insert(format!("steps_{}", sub.label), (sub.rows.len() - 1).to_string());
    }
    write_table(
        &dir.join("summary.csv"),
        &["key".into(), "value".into()],
        summary.into_iter().map(|(k, v)| vec![k, v]),
    )?;
    write_table(
        &dir.join("timing.csv"),
        &["key".into(), "value".into()],
        std::iter::once(vec!["wall_time_s".into(), fmt_f64(trace.wall_time_s)]),
    )
}

pub fn write_reference(dir: &Path, model: &CoSimModel, r: &ReferenceTrace) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (k, spec) in model.subsystems.iter().enumerate() {
        let mut header = vec!["t".to_string()];
        header.extend((0..spec.n_st).map(|j| format!("x{j}")));
        let rows = r.times.iter().zip(&r.states[k]).map(|(&t, x)| {
            std::iter::once(fmt_f64(t))
                .chain(x.iter().map(|&v| fmt_f64(v)))
                .collect()
        });
        write_table(&dir.join(format!("{}_reference.csv", spec.label)), &header, rows)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Comparison matrix

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    Jacobi { dt: f64 },
    F3ornits {
        calibration: CalibrationMode,
        smoothing: bool,
        error_norm: ErrorNorm,
    },
}

impl Variant {
    pub fn label(&self) -> String {
        match *self {
            Variant::Jacobi { dt } => format!("jacobi dt={dt}"),
            Variant::F3ornits { calibration, smoothing, error_norm } => format!(
                "f3ornits {} {} {}",
                match calibration {
                    CalibrationMode::Extrapolation => "extrapolation",
                    CalibrationMode::Cls => "cls",
                },
                if smoothing { "c1" } else { "plain" },
                match error_norm {
                    ErrorNorm::Magnitude => "magnitude",
                    ErrorNorm::Amplitude => "amplitude",
                    ErrorNorm::Damped => "damped",
                }
            ),
        }
    }
}

/// The 5 Jacobi steps followed by the 12 option combinations of F3ORNITS.
pub fn comparison_matrix() -> Vec<Variant> {
    let mut v: Vec<Variant> = JACOBI_STEPS.iter().map(|&dt| Variant::Jacobi { dt }).collect();
    for calibration in [CalibrationMode::Extrapolation, CalibrationMode::Cls] {
        for smoothing in [false, true] {
            for error_norm in [ErrorNorm::Magnitude, ErrorNorm::Damped, ErrorNorm::Amplitude] {
                v.push(Variant::F3ornits { calibration, smoothing, error_norm });
            }
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub variant: Variant,
    pub steps: usize,
    /// RMSE of the first subsystem's first state, percent of amplitude.
    pub rmse_x1: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    pub fn row(&self, v: &Variant) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.variant == *v)
    }

    /// Aligned text table in the order of [`comparison_matrix`].
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<40} {:>8} {:>12}", "method", "#steps", "rmse(x1) %");
        for r in &self.rows {
            let _ = writeln!(s, "{:<40} {:>8} {:>12.4}", r.variant.label(), r.steps, r.rmse_x1);
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.txt"), self.to_table())?;
        write_table(
            &dir.join("tradeoff.csv"),
            &["method".into(), "steps".into(), "rmse_x1_percent".into()],
            self.rows
                .iter()
                .map(|r| vec![r.variant.label(), r.steps.to_string(), fmt_f64(r.rmse_x1)]),
        )
    }
}

/// Runs every variant of [`comparison_matrix`] on `model` and scores the first
/// state of the first subsystem against the monolithic reference.
pub fn compare(model: &CoSimModel, base: &MasterOptions) -> Result<ComparisonReport> {
    let interval = base.record_interval.unwrap_or(0.01);
    let reference = reference_for(model, interval)?;
    let ref_x1 = reference.series(0, 0);
    let opts = MasterOptions {
        record_interval: Some(interval),
        workers: 1,
        ..*base
    };
    let rows = comparison_matrix()
        .into_par_iter()
        .map(|variant| {
            let trace = match variant {
                Variant::Jacobi { dt } => run_jacobi(model, dt, &opts)?,
                Variant::F3ornits { calibration, smoothing, error_norm } => run_f3ornits(
                    model,
                    &MasterOptions { calibration, smoothing, error_norm, ..opts },
                )?,
            };
            Ok(ComparisonRow {
                variant,
                steps: trace.total_steps,
                rmse_x1: rmse_percent(&trace.subsystems[0].dense_series(0), &ref_x1)?,
                wall_time_s: trace.wall_time_s,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonReport { rows })
}
