use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fornits_core::harness::{
    compare, reference_for, write_reference, write_trace, MethodKind, ModelKind, RunConfig,
};
use fornits_core::{CalibrationMode, ErrorNorm};

/// Non-iterative co-simulation master with adaptive communication steps.
#[derive(Debug, Parser)]
#[command(name = "fornits", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one co-simulation and write its CSV traces.
    Run(RunArgs),
    /// Score every method variant against the monolithic reference.
    Compare(CompareArgs),
    /// Write the monolithic reference trace.
    Reference(ReferenceArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; command-line flags take precedence.
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: Option<Model>,
    /// Model parameter override, repeatable (e.g. `--param t_end=50`).
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
    /// Output directory [default: config `output_dir`, else `out`].
    #[arg(short, long, env = "FORNITS_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Tuning {
    #[arg(long)]
    dt0: Option<f64>,
    #[arg(long, value_enum)]
    calibration: Option<Calibration>,
    #[arg(long, value_name = "BOOL")]
    smoothing: Option<bool>,
    #[arg(long, value_enum)]
    error_norm: Option<Norm>,
    #[arg(long)]
    tol_rel: Option<f64>,
    #[arg(long)]
    tol_abs: Option<f64>,
    /// Damping rate of the min/max bounds, 1/s.
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    rho_min: Option<f64>,
    #[arg(long)]
    rho_max: Option<f64>,
    #[arg(long)]
    dt_min: Option<f64>,
    #[arg(long)]
    dt_max: Option<f64>,
    #[arg(long)]
    max_order: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Spacing of the dense state record, s.
    #[arg(long)]
    record_interval: Option<f64>,
    /// Upper bound on the RK4 micro-step inside subsystems, s.
    #[arg(long)]
    micro_max_step: Option<f64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Jacobi communication step, s.
    #[arg(long)]
    dt: Option<f64>,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Debug, Args)]
struct ReferenceArgs {
    #[command(flatten)]
    common: Common,
    /// Spacing of the reference samples, s.
    #[arg(long)]
    record_interval: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Model {
    TwoMass,
    Car,
    Linear,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Method {
    F3ornits,
    Jacobi,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Calibration {
    Extrapolation,
    Cls,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Norm {
    Magnitude,
    Amplitude,
    Damped,
}

impl From<Model> for ModelKind {
    fn from(m: Model) -> Self {
        match m {
            Model::TwoMass => ModelKind::TwoMass,
            Model::Car => ModelKind::Car,
            Model::Linear => ModelKind::Linear,
        }
    }
}

impl From<Method> for MethodKind {
    fn from(m: Method) -> Self {
        match m {
            Method::F3ornits => MethodKind::F3ornits,
            Method::Jacobi => MethodKind::Jacobi,
        }
    }
}

impl From<Calibration> for CalibrationMode {
    fn from(c: Calibration) -> Self {
        match c {
            Calibration::Extrapolation => CalibrationMode::Extrapolation,
            Calibration::Cls => CalibrationMode::Cls,
        }
    }
}

impl From<Norm> for ErrorNorm {
    fn from(n: Norm) -> Self {
        match n {
            Norm::Magnitude => ErrorNorm::Magnitude,
            Norm::Amplitude => ErrorNorm::Amplitude,
            Norm::Damped => ErrorNorm::Damped,
        }
    }
}

fn base_config(common: &Common, method: Option<Method>) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let model = common
                .model
                .ok_or_else(|| anyhow!("either a configuration file or --model is required"))?;
            RunConfig::new(model.into(), method.unwrap_or(Method::F3ornits).into())
        }
    };
    if let Some(m) = common.model {
        cfg.model = m.into();
    }
    if let Some(m) = method {
        cfg.method = m.into();
    }
    for kv in &common.params {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| anyhow!("--param expects KEY=VALUE, got `{kv}`"))?;
        cfg.set_param(key.trim(), value.trim())?;
    }
    Ok(cfg)
}

fn apply_tuning(cfg: &mut RunConfig, t: &Tuning) {
    macro_rules! set {
        ($($field:ident),*) => { $( if t.$field.is_some() { cfg.$field = t.$field; } )* };
    }
    set!(dt0, smoothing, tol_rel, tol_abs, nu, rho_min, rho_max, dt_min, dt_max, max_order, workers, record_interval, micro_max_step);
    if let Some(c) = t.calibration {
        cfg.calibration = Some(c.into());
    }
    if let Some(n) = t.error_norm {
        cfg.error_norm = Some(n.into());
    }
}

fn output_dir(common: &Common, cfg: &RunConfig) -> PathBuf {
    common
        .output_dir
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run(args: &RunArgs) -> Result<()> {
    let mut cfg = base_config(&args.common, args.method)?;
    if args.dt.is_some() {
        cfg.dt = args.dt;
    }
    apply_tuning(&mut cfg, &args.tuning);
    let (model, trace) = cfg.execute()?;
    let dir = output_dir(&args.common, &cfg);
    write_trace(&dir, &model, &trace).with_context(|| format!("writing {}", dir.display()))?;
    println!(
        "{} on {}: {} steps in {:.3} s, traces in {}",
        trace.method,
        model.name,
        trace.total_steps,
        trace.wall_time_s,
        dir.display()
    );
    Ok(())
}

fn run_compare(args: &CompareArgs) -> Result<()> {
    let mut cfg = base_config(&args.common, None)?;
    apply_tuning(&mut cfg, &args.tuning);
    let model = cfg.build_model()?;
    let opts = cfg.master_options(&model)?;
    let report = compare(&model, &opts)?;
    print!("{}", report.to_table());
    let dir = output_dir(&args.common, &cfg);
    report.write(&dir).with_context(|| format!("writing {}", dir.display()))?;
    Ok(())
}

fn run_reference(args: &ReferenceArgs) -> Result<()> {
    let mut cfg = base_config(&args.common, None)?;
    if args.record_interval.is_some() {
        cfg.record_interval = args.record_interval;
    }
    let interval = cfg.record_interval.unwrap_or(0.01);
    if !(interval.is_finite() && interval > 0.0) {
        bail!("record interval must be positive, got {interval}");
    }
    let model = cfg.build_model()?;
    let reference = reference_for(&model, interval)?;
    let dir = output_dir(&args.common, &cfg);
    write_reference(&dir, &model, &reference).with_context(|| format!("writing {}", dir.display()))?;
    println!("reference for {}: {} samples in {}", model.name, reference.times.len(), dir.display());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let diverged = err
        .chain()
        .any(|e| e.downcast_ref::<fornits_core::Error>().is_some_and(|e| e.is_divergence()));
    if diverged {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::Compare(a) => run_compare(a),
        Command::Reference(a) => run_reference(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn output_dir_precedence() {
        let mut cfg = RunConfig::new(ModelKind::Car, MethodKind::F3ornits);
        let common = |dir: Option<&str>| Common {
            config: None,
            model: None,
            params: vec![],
            output_dir: dir.map(PathBuf::from),
        };
        assert_eq!(output_dir(&common(None), &cfg), Path::new("out"));
        cfg.output_dir = Some("from_config".into());
        assert_eq!(output_dir(&common(None), &cfg), Path::new("from_config"));
        assert_eq!(output_dir(&common(Some("flag")), &cfg), Path::new("flag"));
    }
}
