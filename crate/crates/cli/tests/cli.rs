use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctc_core::dynamics::{CouplingParams, IntegratorConfig};
use ctc_core::lattice::{ClusterGeometry, InitialStateSpec};
use ctc_core::phases::{classify, ClassifyConfig};
use ctc_core::rng::derive_seed;
use tempfile::TempDir;

fn ctc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctc")).args(args).output().expect("binary runs")
}

fn run(sub: &str, config: &str, dir: &TempDir, out: &str, extra: &[&str]) -> (Output, PathBuf) {
    let cfg = dir.path().join(format!("{out}.toml"));
    fs::write(&cfg, config).unwrap();
    let out = dir.path().join(out);
    let mut args = vec![sub, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    (ctc(&args), out)
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&read(p)).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

const PM_TRAJ: &str = r#"
t_end = 5.0
[params]
jx = 2.0
jy = 0.7
jz = 1.0
[initial_state]
kind = "uniform"
sx = 0.0
sy = 0.0
sz = -1.0
"#;

#[test]
fn paramagnet_trajectory_stays_down() {
    let dir = TempDir::new().unwrap();
    let (o, out) = run("trajectory", PM_TRAJ, &dir, "pm", &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(&out.join("trajectory.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,site,sx,sy,sz"));
    let mut rows = 0;
    for l in lines {
        let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!((f[2], f[3], f[4]), (0.0, 0.0, -1.0));
        rows += 1;
    }
    assert_eq!(rows, 51 * 9);
    let meta = json(&out.join("meta.json"));
    assert_eq!(meta["command"], "trajectory");
    assert_eq!(meta["config"]["params"]["jx"], 2.0);
    assert_eq!(meta["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = r#"
t_end = 20.0
[params]
jx = 7.0
jy = 1.5
jz = 1.0
[noise]
kind = "pink"
beta = 0.1
seed = 5
t_start = 5.0
t_end = 15.0
"#;
    let dir = TempDir::new().unwrap();
    let (a, out_a) = run("trajectory", cfg, &dir, "a", &[]);
    let (b, out_b) = run("trajectory", cfg, &dir, "b", &[]);
    assert_eq!((code(&a), code(&b)), (0, 0));
    for f in ["trajectory.csv", "noise.csv"] {
        assert_eq!(fs::read(out_a.join(f)).unwrap(), fs::read(out_b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn limit_cycle_trajectory_keeps_moving() {
    let cfg = r#"
t_end = 260.0
[params]
jx = 10.0
jy = 1.1
jz = 1.0
"#;
    let dir = TempDir::new().unwrap();
    let (o, out) = run("trajectory", cfg, &dir, "lc", &[]);
    assert_eq!(code(&o), 0);
    let sy: Vec<f64> = read(&out.join("trajectory.csv"))
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .filter(|f| f[0] > 200.0 && f[1] == 1.0)
        .map(|f| f[3])
        .collect();
    let (lo, hi) = sy.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
    assert!(hi - lo > 0.1, "sy range {lo}..{hi}");
}

#[test]
fn config_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    let (o, _) = run("trajectory", "t_end = 1.0\ncolour = 2\n[params]\njx=1\njy=1\njz=1\n", &dir, "bad", &[]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
    let (o, _) = run("trajectory", "t_end = -1.0\n[params]\njx=1\njy=1\njz=1\n", &dir, "neg", &[]);
    assert_eq!(code(&o), 1);
    let o = ctc(&["lyapunov", "--config", "/nonexistent/x.toml", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn unwritable_output_exits_two() {
    let dir = TempDir::new().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, PM_TRAJ).unwrap();
    let out = blocker.join("sub");
    let o = ctc(&["trajectory", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn blowup_exits_three_with_diagnostics() {
    let cfg = r#"
t_end = 1.0
[params]
jx = 1e200
jy = -1e200
jz = 1e200
"#;
    let dir = TempDir::new().unwrap();
    let (o, out) = run("trajectory", cfg, &dir, "boom", &[]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let d = json(&out.join("diagnostics.json"));
    assert!(d["time"].as_f64().unwrap() > 0.0);
    assert!(!out.join("trajectory.csv").exists());
}

const FAST_CLASSIFY: &str = r#"
[classify]
t_total = 60.0
t_relax = 40.0
[classify.integrator]
dt = 0.01
[classify.lyapunov]
t_total = 60.0
t_transient = 10.0
[classify.lyapunov.integrator]
dt = 0.01
"#;

#[test]
fn single_point_diagram_matches_classify() {
    let cfg = format!(
        r#"
seed = 4
[params]
jx = 0.0
jy = 0.0
jz = 1.0
[outer]
coupling = "jx"
lo = 10.0
hi = 10.0
steps = 1
[inner]
coupling = "jy"
lo = 1.1
hi = 1.1
steps = 1
{FAST_CLASSIFY}"#
    );
    let dir = TempDir::new().unwrap();
    let (o, out) = run("phase-diagram", &cfg, &dir, "one", &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(&out.join("phase_diagram.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "jx,jy,label,amplitude,nonuniformity,lambda,omega_p");

    let mut ccfg = ClassifyConfig {
        t_total: 60.0,
        t_relax: 40.0,
        integrator: IntegratorConfig::default().with_dt(0.01),
        ..ClassifyConfig::default()
    };
    ccfg.lyapunov.t_total = 60.0;
    ccfg.lyapunov.t_transient = 10.0;
    ccfg.lyapunov.integrator = IntegratorConfig::default().with_dt(0.01);
    ccfg.lyapunov.seed = derive_seed(4, &[0]);
    let c = classify(&CouplingParams::new(10.0, 1.1, 1.0), &ClusterGeometry::standard(), &InitialStateSpec::EquatorPhase, &ccfg)
        .unwrap();
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields[2], c.label.as_str());
    assert_eq!(fields[3].parse::<f64>().unwrap(), c.amplitude);
    let meta = json(&out.join("phase_diagram.json"));
    assert_eq!(meta["grid"]["points"], 1);
}

fn small_grid() -> String {
    format!(
        r#"
seed = 9
chunk_size = 2
[params]
jx = 0.0
jy = 0.0
jz = 1.0
[outer]
coupling = "jy"
lo = 1.0
hi = 1.4
steps = 2
[inner]
coupling = "jx"
lo = 3.0
hi = 12.0
steps = 3
{FAST_CLASSIFY}"#
    )
}

#[test]
fn interrupted_sweep_resumes_to_identical_output() {
    let dir = TempDir::new().unwrap();
    let (o, full) = run("phase-diagram", &small_grid(), &dir, "full", &["--workers", "2"]);
    assert_eq!(code(&o), 0);

    let (o, part) = run("phase-diagram", &small_grid(), &dir, "part", &["--max-chunks", "1"]);
    assert_eq!(code(&o), 0);
    assert!(part.join("checkpoint.json").exists());
    assert!(!part.join("phase_diagram.csv").exists());
    let (o, part) = run("phase-diagram", &small_grid(), &dir, "part", &["--resume"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("progress 4/6"));
    assert_eq!(
        fs::read(full.join("phase_diagram.csv")).unwrap(),
        fs::read(part.join("phase_diagram.csv")).unwrap()
    );
}

#[test]
fn corrupt_checkpoint_needs_restart() {
    let dir = TempDir::new().unwrap();
    let (o, out) = run("phase-diagram", &small_grid(), &dir, "c", &["--max-chunks", "1"]);
    assert_eq!(code(&o), 0);
    let ck = out.join("checkpoint.json");
    let text = read(&ck).replacen("\"amplitude\":", "\"amplitude\":1", 1);
    fs::write(&ck, text).unwrap();
    let (o, _) = run("phase-diagram", &small_grid(), &dir, "c", &["--resume"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--restart"));
    let (o, out) = run("phase-diagram", &small_grid(), &dir, "c", &["--restart"]);
    assert_eq!(code(&o), 0);
    assert_eq!(read(&out.join("phase_diagram.csv")).lines().count(), 7);
}

#[test]
fn stability_scan_brackets_both_boundaries() {
    let cfg = r#"
axis = "jy"
lo = 1.0
hi = 1.5
steps = 50
chunks = 2
[params]
jx = 5.9
jy = 1.0
jz = 1.0
"#;
    let dir = TempDir::new().unwrap();
    let (o, out) = run("stability-scan", cfg, &dir, "scan", &["--workers", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<Vec<String>> = read(&out.join("stability.csv"))
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    let re: Vec<(f64, f64)> = rows.iter().map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap())).collect();
    let sign_change_near = |target: f64| {
        re.windows(2).any(|w| w[0].0 <= target && w[1].0 >= target && w[0].1 * w[1].1 < 0.0)
    };
    assert!(sign_change_near(1.098) && sign_change_near(1.366));
    let c = json(&out.join("crossings.json"));
    assert_eq!(c["crossings"].as_array().unwrap().len(), 2);
}

#[test]
fn lyapunov_reference_point() {
    let cfg = r#"
[params]
jx = 13.0
jy = 1.1
jz = 1.0
[initial_state]
kind = "equator_phase"
"#;
    let dir = TempDir::new().unwrap();
    let (o, out) = run("lyapunov", cfg, &dir, "ly", &[]);
    assert_eq!(code(&o), 0);
    let r = json(&out.join("lyapunov.json"));
    let lambda = r["lambda"].as_f64().unwrap();
    assert!((lambda - 0.1).abs() <= 0.05, "lambda {lambda}");
    assert!(r["reset_count"].as_u64().unwrap() >= 20);
}

#[test]
fn quiet_rigidity_is_exactly_one() {
    let cfg = r#"
noise = "white"
betas = [0.0]
stage_length = 100.0
relax = 20.0
seeds = 2
require_lc = false
[params]
jx = 7.0
jy = 1.5
jz = 1.0
[integrator]
dt = 0.01
"#;
    let dir = TempDir::new().unwrap();
    let (o, out) = run("noise-rigidity", cfg, &dir, "q", &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rcf = read(&out.join("rcf.csv"));
    let rows: Vec<&str> = rcf.lines().collect();
    assert_eq!(rows[0], "beta,seed,omega_rcf");
    assert_eq!(rows.len(), 3);
    assert!(rows[1..].iter().all(|r| r.ends_with(",1")));
    assert!(out.join("spectra/quiet_stage1.csv").exists());
    assert!(read(&out.join("summary.csv")).contains("1,0,1,0,2"));
}

#[test]
fn rigidity_refuses_stationary_base_point() {
    let cfg = r#"
noise = "white"
betas = [0.0, 0.04]
[params]
jx = 5.0
jy = 1.1
jz = 1.0
"#;
    let dir = TempDir::new().unwrap();
    let (o, out) = run("noise-rigidity", cfg, &dir, "sdw", &[]);
    assert_eq!(code(&o), 1);
    assert_eq!(json(&out.join("classification.json"))["label"], "SDW");
}

#[test]
fn worker_count_from_environment() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, PM_TRAJ).unwrap();
    let out = dir.path().join("o");
    let o = Command::new(env!("CARGO_BIN_EXE_ctc"))
        .args(["trajectory", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .env("CTC_WORKERS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    let o = Command::new(env!("CARGO_BIN_EXE_ctc"))
        .args(["trajectory", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .env("CTC_WORKERS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
}
