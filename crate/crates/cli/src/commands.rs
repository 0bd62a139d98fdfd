use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use ctc_core::chaos::lyapunov_exponent;
use ctc_core::dynamics::integrate;
use ctc_core::lattice::build_initial_state;
use ctc_core::phases::{classify, sweep_with_progress, PhaseLabel, SweepOptions, SweepOutcome};
use ctc_core::rigidity::rigidity_study;
use ctc_core::stability::{scan_stability_boundary, scan_stability_boundary_chunked};
use ctc_core::Error;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{self, LyapunovRunConfig, NoiseRigidityConfig, PhaseDiagramConfig, StabilityScanConfig, TrajectoryConfig};
use crate::{Common, SweepArgs};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration: {m}"),
            CliError::Io(m) => write!(f, "i/o: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

/// Output directory plus the bookkeeping shared by every command.
struct Run {
    command: &'static str,
    out: PathBuf,
    config_path: PathBuf,
    config_sha256: String,
    config: Value,
}

impl Run {
    fn start<T>(command: &'static str, args: &Common) -> CliResult<(Self, T)>
    where
        T: serde::de::DeserializeOwned + Serialize,
    {
        let raw = fs::read(&args.config)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", args.config.display())))?;
        let text = String::from_utf8(raw.clone())
            .map_err(|_| CliError::Config(format!("{} is not UTF-8", args.config.display())))?;
        let parsed: T = config::parse(&text).map_err(CliError::Config)?;
        if let Some(n) = args.workers {
            if n == 0 {
                return Err(CliError::Config("--workers must be positive".into()));
            }
            // a second call in the same process is harmless
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        fs::create_dir_all(&args.out)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", args.out.display())))?;
        let run = Run {
            command,
            out: args.out.clone(),
            config_path: args.config.clone(),
            config_sha256: hex::encode(Sha256::digest(&raw)),
            config: serde_json::to_value(&parsed).expect("configs serialize"),
        };
        Ok((run, parsed))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn create(&self, name: &str) -> CliResult<BufWriter<File>> {
        let p = self.path(name);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        File::create(&p)
            .map(BufWriter::new)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display())))
    }

    fn write_with(&self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> CliResult {
        let mut w = self.create(name)?;
        f(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult {
        self.write_with(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)
        })
    }

    fn meta(&self, seeds: Value, outputs: &[&str]) -> CliResult {
        let meta = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "config_file": self.config_path,
            "config_sha256": self.config_sha256,
            "config": self.config,
            "seeds": seeds,
            "outputs": outputs,
        });
        self.write_json("meta.json", &meta)
    }

    /// Maps engine errors onto exit classes, leaving a diagnostics file for
    /// numerical failures.
    fn fail(&self, e: Error) -> CliError {
        match e {
            Error::InvalidArgument(m) | Error::Parse(m) => CliError::Config(m),
            Error::Io(e) => CliError::Io(e.to_string()),
            Error::Json(e) => CliError::Io(e.to_string()),
            Error::CorruptCheckpoint { .. } => CliError::Io(format!("{e}; rerun with --restart to discard it")),
            e => {
                let mut diag = json!({ "command": self.command, "error": e.to_string() });
                if let Error::NumericalBlowup { time, site } = e {
                    diag["time"] = json!(time);
                    diag["site"] = json!(site);
                }
                let _ = self.write_json("diagnostics.json", &diag);
                CliError::Numerical(e.to_string())
            }
        }
    }
}

pub fn trajectory(args: &Common) -> CliResult {
    let (run, cfg): (Run, TrajectoryConfig) = Run::start("trajectory", args)?;
    let geom = config::geometry(cfg.geometry).map_err(|e| run.fail(e))?;
    let state0 = build_initial_state(&cfg.initial_state, &geom).map_err(|e| run.fail(e))?;
    let noise = cfg.noise.as_ref().map(|n| n.generate()).transpose().map_err(|e| run.fail(e))?;
    let traj = integrate(&state0, &cfg.params, &geom, cfg.t_end, &cfg.integrator, noise.as_ref())
        .map_err(|e| run.fail(e))?;
    run.write_with("trajectory.csv", |w| traj.write_csv(w))?;
    let mut outputs = vec!["trajectory.csv"];
    if let Some(n) = &noise {
        run.write_with("noise.csv", |w| n.write_csv(w))?;
        outputs.push("noise.csv");
    }
    run.meta(json!({ "noise": cfg.noise.as_ref().map(|n| n.seed) }), &outputs)
}

pub fn lyapunov(args: &Common) -> CliResult {
    let (run, cfg): (Run, LyapunovRunConfig) = Run::start("lyapunov", args)?;
    let geom = config::geometry(cfg.geometry).map_err(|e| run.fail(e))?;
    let r = lyapunov_exponent(&cfg.params, &geom, &cfg.initial_state, &cfg.lyapunov).map_err(|e| run.fail(e))?;
    let summary = json!({
        "lambda": r.lambda,
        "chaotic": r.is_chaotic(),
        "reset_count": r.reset_count,
        "transient_resets": r.transient_resets,
        "reset_times": r.reset_times,
        "delta0": r.delta0,
        "perturbation_seed": r.perturbation_seed,
    });
    run.write_json("lyapunov.json", &summary)?;
    let mut outputs = vec!["lyapunov.json"];
    if cfg.lyapunov.record_trace {
        run.write_with("trace.csv", |w| r.write_trace_csv(w))?;
        outputs.push("trace.csv");
    }
    println!("lambda {}", r.lambda);
    run.meta(json!({ "perturbation": r.perturbation_seed, "base": cfg.lyapunov.seed }), &outputs)
}

pub fn stability_scan(args: &Common) -> CliResult {
    let (run, cfg): (Run, StabilityScanConfig) = Run::start("stability-scan", args)?;
    let geom = config::geometry(cfg.geometry).map_err(|e| run.fail(e))?;
    let range = (cfg.lo, cfg.hi);
    let scan = if cfg.chunks > 1 {
        scan_stability_boundary_chunked(&cfg.params, &geom, cfg.axis, range, cfg.steps, cfg.chunks, &cfg.scan)
    } else {
        scan_stability_boundary(&cfg.params, &geom, cfg.axis, range, cfg.steps, &cfg.scan)
    }
    .map_err(|e| run.fail(e))?;
    run.write_with("stability.csv", |w| scan.write_csv(w))?;
    let crossings: Vec<Value> = scan
        .crossings
        .iter()
        .map(|c| json!({ "location": c.location, "destabilizing": c.destabilizing, "imag_at_crossing": c.imag_at_crossing }))
        .collect();
    run.write_json("crossings.json", &json!({ "axis": cfg.axis, "crossings": crossings, "gaps": scan.gaps }))?;
    for c in &scan.crossings {
        println!("crossing {} {}", cfg.axis.name(), c.location);
    }
    run.meta(Value::Null, &["stability.csv", "crossings.json"])
}

pub fn phase_diagram(args: &SweepArgs) -> CliResult {
    let (run, cfg): (Run, PhaseDiagramConfig) = Run::start("phase-diagram", &args.common)?;
    let sweep_cfg = cfg.sweep_config();
    let checkpoint = run.path("checkpoint.json");
    if args.restart && checkpoint.exists() {
        fs::remove_file(&checkpoint)?;
    }
    let opts = SweepOptions {
        workers: args.common.workers.unwrap_or(0),
        checkpoint: Some(checkpoint),
        resume: !args.restart,
        max_chunks: args.max_chunks,
    };
    let outcome = sweep_with_progress(&sweep_cfg, &opts, |done, total| {
        eprintln!("progress {done}/{total}");
    })
    .map_err(|e| run.fail(e))?;
    let diagram = match outcome {
        SweepOutcome::Complete(d) => d,
        SweepOutcome::Partial { completed, total } => {
            eprintln!("stopped after {completed}/{total} points; checkpoint kept");
            return Ok(());
        }
    };
    run.write_with("phase_diagram.csv", |w| diagram.write_csv(w))?;
    run.write_json("phase_diagram.json", &diagram.metadata())?;
    let seeds: Vec<u64> = diagram.points.iter().map(|p| p.seed).collect();
    run.meta(json!({ "base": cfg.seed, "points": seeds }), &["phase_diagram.csv", "phase_diagram.json"])
}

pub fn noise_rigidity(args: &Common) -> CliResult {
    let (run, cfg): (Run, NoiseRigidityConfig) = Run::start("noise-rigidity", args)?;
    let rcfg = cfg.rigidity_config();
    let geom = rcfg.geometry().map_err(|e| run.fail(e))?;
    if cfg.require_lc {
        let mut ccfg = cfg.classify.clone();
        ccfg.lyapunov.seed = cfg.seed;
        ccfg.integrator = cfg.integrator.clone();
        let c = classify(&cfg.params, &geom, &cfg.initial_state, &ccfg).map_err(|e| run.fail(e))?;
        if c.label != PhaseLabel::Lc {
            run.write_json("classification.json", &c)?;
            return Err(CliError::Config(format!(
                "base point classifies as {} rather than LC (see classification.json)",
                c.label
            )));
        }
    }
    let study = rigidity_study(&rcfg).map_err(|e| run.fail(e))?;
    run.write_with("rcf.csv", |w| study.write_csv(w))?;
    run.write_with("summary.csv", |w| {
        writeln!(w, "stage,beta,mean_rcf,std_rcf,seeds")?;
        for s in &study.summary {
            writeln!(w, "{},{},{},{},{}", s.stage + 1, s.beta, s.mean_rcf, s.std_rcf, s.seeds)?;
        }
        Ok(())
    })?;
    let mut outputs = vec!["rcf.csv".to_string(), "summary.csv".to_string()];
    for (i, (q, n)) in study.quiet_spectra.iter().zip(&study.noisy_spectra).enumerate() {
        for (tag, s) in [("quiet", q), ("noisy", n)] {
            let name = format!("spectra/{tag}_stage{}.csv", i + 1);
            run.write_with(&name, |w| s.write_csv(w))?;
            outputs.push(name);
        }
    }
    for s in &study.summary {
        println!("stage {} beta {} rcf {} +- {}", s.stage + 1, s.beta, s.mean_rcf, s.std_rcf);
    }
    let seeds: Vec<u64> = (0..rcfg.seeds).map(|k| rcfg.seed(k)).collect();
    let outputs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    run.meta(json!({ "base": cfg.seed, "runs": seeds }), &outputs)
}
