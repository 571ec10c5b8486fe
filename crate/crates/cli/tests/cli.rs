use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fornits(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fornits"))
        .args(args)
        .current_dir(cwd)
        .env_remove("FORNITS_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_from_flags_writes_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = fornits(&["run", "--model", "car", "--param", "t_end=12", "-o", "traces"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["vehicle.csv", "controller.csv", "vehicle_dense.csv", "summary.csv", "timing.csv"] {
        assert!(dir.path().join("traces").join(f).is_file(), "missing {f}");
    }
}

#[test]
fn config_file_and_env_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.toml"),
        "model = \"two_mass\"\nmethod = \"jacobi\"\ndt = 0.01\noutput_dir = \"from_config\"\n[param]\nt_end = 5.0\n",
    )
    .unwrap();
    let out = fornits(&["run", "run.toml"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = fs::read_to_string(dir.path().join("from_config/summary.csv")).unwrap();
    assert!(summary.contains("total_steps,500"), "{summary}");

    let out = Command::new(env!("CARGO_BIN_EXE_fornits"))
        .args(["run", "run.toml", "--dt", "0.1"])
        .current_dir(dir.path())
        .env("FORNITS_OUTPUT_DIR", "from_env")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = fs::read_to_string(dir.path().join("from_env/summary.csv")).unwrap();
    assert!(summary.contains("total_steps,50"), "{summary}");
}

#[test]
fn configuration_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = fornits(&["run", "--model", "car", "--method", "jacobi"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("dt"), "{}", stderr(&out));

    let out = fornits(&["run", "--model", "car", "--param", "nonsense=1"], dir.path());
    assert_eq!(out.status.code(), Some(1));

    fs::write(dir.path().join("bad.toml"), "model = \"car\"\nmethod = \"f3ornits\"\nspeed = 3\n").unwrap();
    let out = fornits(&["run", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("speed"), "{}", stderr(&out));

    let out = fornits(&["run"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = fornits(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn divergence_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = fornits(
        &[
            "run", "--model", "two_mass", "--method", "jacobi", "--dt", "0.4",
            "--param", "k2=1e5", "--param", "t_end=100", "--param", "t_switch=50",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("diverged"));
}

#[test]
fn reference_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let params = ["--param", "t_end=4", "--param", "t_switch=2"];
    let mut args = vec!["reference", "--model", "two_mass", "-o", "ref", "--record-interval", "0.1"];
    args.extend(params);
    let out = fornits(&args, dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("ref/left_mass_reference.csv")).unwrap();
    assert_eq!(text.lines().count(), 42);

    let mut args = vec!["compare", "--model", "two_mass", "-o", "cmp"];
    args.extend(params);
    let out = fornits(&args, dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(table.lines().count(), 18);
    assert!(dir.path().join("cmp/tradeoff.csv").is_file());
}

#[test]
fn shipped_configs_run() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut seen = 0;
    for entry in fs::read_dir(&configs).unwrap() {
        let path = entry.unwrap().path();
        let dir = tempfile::tempdir().unwrap();
        let shorten: &[&str] = match path.file_name().unwrap().to_str().unwrap() {
            "two_mass.toml" => &["--param", "t_end=3", "--param", "t_switch=2"],
            "car_jacobi.toml" => &["--param", "t_end=12"],
            _ => &[],
        };
        let mut args = vec!["run".to_string(), path.display().to_string(), "-o".into(), "o".into()];
        args.extend(shorten.iter().map(|s| s.to_string()));
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = fornits(&args, dir.path());
        assert!(out.status.success(), "{}: {}", path.display(), stderr(&out));
        seen += 1;
    }
    assert_eq!(seen, 3);
}
