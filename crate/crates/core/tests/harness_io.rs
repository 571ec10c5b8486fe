//! Configuration files to CSV output and back.

use std::fs;
use std::path::Path;

use fornits_core::harness::{
    compare, comparison_matrix, read_table, write_trace, RunConfig, Variant,
};
use fornits_core::{build_two_mass, MasterOptions, TwoMassParams};

const SHORT_TWO_MASS: &str = r#"
model = "two_mass"
method = "f3ornits"
smoothing = true
calibration = "cls"

[param]
t_end = 12.0
t_switch = 6.0
"#;

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "timing.csv")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn written_trace_reads_back_bit_exact() {
    let cfg = RunConfig::from_toml_str(SHORT_TWO_MASS).unwrap();
    let (model, trace) = cfg.execute().unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_trace(dir.path(), &model, &trace).unwrap();

    let (header, rows) = read_table(&dir.path().join("left_mass.csv")).unwrap();
    assert_eq!(header[..3], ["t", "y0", "y1"]);
    let sub = &trace.subsystems[0];
    assert_eq!(rows.len(), sub.rows.len());
    for (row, r) in rows.iter().zip(&sub.rows) {
        assert_eq!(row[0].to_bits(), r.t.to_bits());
        assert_eq!(row[1].to_bits(), r.outputs[0].to_bits());
        assert_eq!(row[3].to_bits(), r.states[0].to_bits());
    }

    let (_, dense) = read_table(&dir.path().join("left_mass_dense.csv")).unwrap();
    let x1 = sub.dense_series(0);
    assert_eq!(dense.len(), x1.len());
    assert!(dense.iter().zip(&x1).all(|(row, v)| row[1].to_bits() == v.to_bits()));
}

#[test]
fn identical_configs_write_identical_files() {
    let cfg = RunConfig::from_toml_str(SHORT_TWO_MASS).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [a.path(), b.path()] {
        let (model, trace) = cfg.execute().unwrap();
        write_trace(dir, &model, &trace).unwrap();
    }
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert!(fa.len() >= 5);
    assert_eq!(fa, fb);
}

#[test]
fn jacobi_config_needs_a_step() {
    let err = RunConfig::from_toml_str("model = \"car\"\nmethod = \"jacobi\"\n").unwrap_err();
    assert!(err.to_string().contains("dt"), "{err}");
    let cfg = RunConfig::from_toml_str("model = \"car\"\nmethod = \"jacobi\"\ndt = 0.1\n").unwrap();
    let (_, trace) = cfg.execute().unwrap();
    assert_eq!(trace.total_steps, 300);
}

#[test]
fn linear_network_from_toml() {
    let text = r#"
model = "linear"
method = "f3ornits"

[param]
t_end = 2.0
links = [[1, 0, 0, 0]]

[[param.subsystems]]
label = "source"
a = [[-1.0]]
b = []
c = [[1.0]]
d = []
x_init = [1.0]

[[param.subsystems]]
label = "sink"
a = [[-2.0]]
b = [[2.0]]
c = []
d = []
x_init = [0.0]
"#;
    let cfg = RunConfig::from_toml_str(text).unwrap();
    let (model, trace) = cfg.execute().unwrap();
    assert_eq!(model.n_sys(), 2);
    // x' = -2x + 2e^{-t}, x(0) = 0  =>  x = 2(e^{-t} - e^{-2t}).
    let t = *trace.dense_times.last().unwrap();
    let x = *trace.subsystems[1].dense_series(0).last().unwrap();
    let exact = 2.0 * ((-t).exp() - (-2.0 * t).exp());
    assert!((x - exact).abs() < 1e-3, "{x} vs {exact}");
}

#[test]
fn comparison_covers_the_matrix() {
    let p = TwoMassParams { t_end: 20.0, t_switch: 10.0, ..TwoMassParams::default() };
    let model = build_two_mass(&p).unwrap();
    let report = compare(&model, &MasterOptions::default()).unwrap();
    assert_eq!(report.rows.len(), 17);
    assert_eq!(
        report.rows.iter().map(|r| r.variant.clone()).collect::<Vec<_>>(),
        comparison_matrix()
    );
    assert_eq!(report.row(&Variant::Jacobi { dt: 0.01 }).unwrap().steps, 2000);
    assert!(report.rows.iter().all(|r| r.rmse_x1.is_finite() && r.steps > 0));

    let dir = tempfile::tempdir().unwrap();
    report.write(dir.path()).unwrap();
    let table = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert_eq!(table.lines().count(), 18);
}
