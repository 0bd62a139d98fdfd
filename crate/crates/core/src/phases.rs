//! Phase classification of single parameter points and parallel sweeps over
//! a two-dimensional coupling grid with chunked checkpoints.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chaos::{lyapunov_exponent, LyapunovConfig, CHAOS_THRESHOLD};
use crate::dynamics::{integrate, Component, CouplingAxis, CouplingParams, IntegratorConfig};
use crate::error::{Error, Result};
use crate::lattice::{build_initial_state, BlochVector, ClusterGeometry, InitialStateSpec};
use crate::rng::derive_seed;
use crate::spectral::{dominant_peak, trajectory_spectrum, DEFAULT_AXIS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhaseLabel {
    #[serde(rename = "PM")]
    Pm,
    #[serde(rename = "FM")]
    Fm,
    #[serde(rename = "SDW")]
    Sdw,
    #[serde(rename = "LC")]
    Lc,
    #[serde(rename = "Chaos")]
    Chaos,
}

impl PhaseLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            PhaseLabel::Pm => "PM",
            PhaseLabel::Fm => "FM",
            PhaseLabel::Sdw => "SDW",
            PhaseLabel::Lc => "LC",
            PhaseLabel::Chaos => "Chaos",
        }
    }

    pub fn is_oscillatory(self) -> bool {
        matches!(self, PhaseLabel::Lc | PhaseLabel::Chaos)
    }
}

impl fmt::Display for PhaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    pub t_total: f64,
    pub t_relax: f64,
    pub eps_osc: f64,
    pub eps_pm: f64,
    pub eps_unif: f64,
    pub integrator: IntegratorConfig,
    pub lyapunov: LyapunovConfig,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            t_total: 600.0,
            t_relax: 400.0,
            eps_osc: 1e-4,
            eps_pm: 1e-3,
            eps_unif: 1e-3,
            integrator: IntegratorConfig::default(),
            lyapunov: LyapunovConfig { t_total: 5000.0, ..LyapunovConfig::default() },
        }
    }
}

impl ClassifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_relax >= 0.0 && self.t_relax < self.t_total) {
            return Err(Error::invalid(format!(
                "need 0 <= t_relax < t_total, got {} and {}",
                self.t_relax, self.t_total
            )));
        }
        for (name, v) in [("eps_osc", self.eps_osc), ("eps_pm", self.eps_pm), ("eps_unif", self.eps_unif)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        self.integrator.validate()?;
        self.lyapunov.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: PhaseLabel,
    /// Largest peak-to-peak excursion of any site component in the window.
    pub amplitude: f64,
    /// Largest max-norm distance between two sites at the final time.
    pub nonuniformity: f64,
    /// Max-norm distance of the final state from all-down.
    pub pm_deviation: f64,
    pub lambda: Option<f64>,
    pub omega_p: Option<f64>,
}

fn failure(params: &CouplingParams, reason: impl fmt::Display) -> Error {
    Error::ClassificationFailure { jx: params.jx, jy: params.jy, jz: params.jz, reason: reason.to_string() }
}

fn stationary_label(pm_deviation: f64, nonuniformity: f64, cfg: &ClassifyConfig) -> PhaseLabel {
    if pm_deviation < cfg.eps_pm {
        PhaseLabel::Pm
    } else if nonuniformity < cfg.eps_unif {
        PhaseLabel::Fm
    } else {
        PhaseLabel::Sdw
    }
}

pub fn classify(
    params: &CouplingParams,
    geom: &ClusterGeometry,
    spec: &InitialStateSpec,
    cfg: &ClassifyConfig,
) -> Result<Classification> {
    cfg.validate()?;
    let state0 = build_initial_state(spec, geom)?;
    let traj = integrate(&state0, params, geom, cfg.t_total, &cfg.integrator, None).map_err(|e| {
        if e.is_numerical() {
            failure(params, e)
        } else {
            e
        }
    })?;

    let window = traj.window_indices(cfg.t_relax, cfg.t_total);
    let n = geom.num_sites();
    let mut lo = vec![[f64::INFINITY; 3]; n];
    let mut hi = vec![[f64::NEG_INFINITY; 3]; n];
    for s in &traj.states[window] {
        for (i, v) in s.sites().iter().enumerate() {
            for (c, x) in v.to_array().into_iter().enumerate() {
                lo[i][c] = lo[i][c].min(x);
                hi[i][c] = hi[i][c].max(x);
            }
        }
    }
    let amplitude = lo
        .iter()
        .zip(&hi)
        .flat_map(|(l, h)| (0..3).map(move |c| h[c] - l[c]))
        .fold(0.0, f64::max);

    let last = traj.final_state().sites();
    let pm_deviation = last.iter().map(|&v| (v - BlochVector::DOWN).max_abs()).fold(0.0, f64::max);
    let mut nonuniformity = 0.0f64;
    for (i, &a) in last.iter().enumerate() {
        for &b in &last[i + 1..] {
            nonuniformity = nonuniformity.max((a - b).max_abs());
        }
    }

    let mut out = Classification {
        label: PhaseLabel::Sdw,
        amplitude,
        nonuniformity,
        pm_deviation,
        lambda: None,
        omega_p: None,
    };
    if amplitude < cfg.eps_osc {
        out.label = stationary_label(pm_deviation, nonuniformity, cfg);
        return Ok(out);
    }

    let ly = lyapunov_exponent(params, geom, spec, &cfg.lyapunov).map_err(|e| failure(params, e))?;
    out.lambda = Some(ly.lambda);
    if ly.lambda > CHAOS_THRESHOLD {
        out.label = PhaseLabel::Chaos;
    } else {
        out.label = PhaseLabel::Lc;
        let s = trajectory_spectrum(&traj, Component::X, (cfg.t_relax, cfg.t_total), DEFAULT_AXIS)?;
        out.omega_p = Some(dominant_peak(&s, s.bin_width())?);
    }
    Ok(out)
}

/// One swept coupling. `steps` is the number of grid values, evenly spaced
/// over `[lo, hi]` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub coupling: CouplingAxis,
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl GridAxis {
    pub fn new(coupling: CouplingAxis, lo: f64, hi: f64, steps: usize) -> Self {
        Self { coupling, lo, hi, steps }
    }

    pub fn value(&self, i: usize) -> f64 {
        if self.steps == 1 {
            self.lo
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (self.steps - 1) as f64
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.steps).map(|i| self.value(i)).collect()
    }
}

/// Everything that determines the diagram. Operational knobs (workers,
/// checkpoint path) live in [`SweepOptions`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: CouplingParams,
    /// Slow axis: grid index `i_outer * inner.steps + i_inner`.
    pub outer: GridAxis,
    pub inner: GridAxis,
    #[serde(default)]
    pub geometry: Option<[usize; 2]>,
    #[serde(default)]
    pub initial_state: InitialStateSpec,
    #[serde(default)]
    pub classify: ClassifyConfig,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_chunk")]
    pub chunk_size: usize,
}

fn default_chunk() -> usize {
    16
}

impl SweepConfig {
    pub fn new(base: CouplingParams, outer: GridAxis, inner: GridAxis) -> Self {
        Self {
            base,
            outer,
            inner,
            geometry: None,
            initial_state: InitialStateSpec::default(),
            classify: ClassifyConfig::default(),
            base_seed: 0,
            chunk_size: default_chunk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.outer.steps == 0 || self.inner.steps == 0 {
            return Err(Error::invalid("grid axes need at least one step"));
        }
        if self.outer.coupling == self.inner.coupling {
            return Err(Error::invalid("grid axes must sweep different couplings"));
        }
        if self.chunk_size == 0 {
            return Err(Error::invalid("chunk_size must be positive"));
        }
        self.base.validate()?;
        self.classify.validate()?;
        self.geometry()?;
        Ok(())
    }

    pub fn geometry(&self) -> Result<ClusterGeometry> {
        match self.geometry {
            Some([r, c]) => ClusterGeometry::new(r, c),
            None => Ok(ClusterGeometry::standard()),
        }
    }

    pub fn len(&self) -> usize {
        self.outer.steps * self.inner.steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn params_at(&self, index: usize) -> CouplingParams {
        let (i, j) = (index / self.inner.steps, index % self.inner.steps);
        self.base
            .with(self.outer.coupling, self.outer.value(i))
            .with(self.inner.coupling, self.inner.value(j))
    }

    pub fn seed_at(&self, index: usize) -> u64 {
        derive_seed(self.base_seed, &[index as u64])
    }

    /// SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub index: usize,
    pub params: CouplingParams,
    pub seed: u64,
    pub result: Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagram {
    pub config: SweepConfig,
    pub points: Vec<GridPoint>,
}

impl PhaseDiagram {
    pub fn labels(&self) -> Vec<PhaseLabel> {
        self.points.iter().map(|p| p.result.label).collect()
    }

    /// Label at grid position `(i_outer, i_inner)`.
    pub fn label_at(&self, i: usize, j: usize) -> PhaseLabel {
        self.points[i * self.config.inner.steps + j].result.label
    }

    /// CSV `jx,jy,label,amplitude,nonuniformity,lambda,omega_p`; missing
    /// diagnostics are left empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "jx,jy,label,amplitude,nonuniformity,lambda,omega_p")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.points {
            let r = &p.result;
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                p.params.jx,
                p.params.jy,
                r.label,
                r.amplitude,
                r.nonuniformity,
                opt(r.lambda),
                opt(r.omega_p)
            )?;
        }
        Ok(())
    }

    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "grid": {
                "outer": self.config.outer,
                "inner": self.config.inner,
                "points": self.points.len(),
            },
            "base": self.config.base,
            "initial_state": self.config.initial_state,
            "base_seed": self.config.base_seed,
            "seeds": self.points.iter().map(|p| p.seed).collect::<Vec<_>>(),
            "thresholds": {
                "eps_osc": self.config.classify.eps_osc,
                "eps_pm": self.config.classify.eps_pm,
                "eps_unif": self.config.classify.eps_unif,
                "chaos_lambda": CHAOS_THRESHOLD,
            },
            "classify": self.config.classify,
            "config_sha256": self.config.fingerprint(),
            "version": env!("CARGO_PKG_VERSION"),
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// Worker threads; 0 uses the rayon default.
    pub workers: usize,
    pub checkpoint: Option<PathBuf>,
    /// Continue from an existing checkpoint instead of starting over.
    pub resume: bool,
    /// Stop after this many chunks in this invocation.
    pub max_chunks: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepOutcome {
    Complete(PhaseDiagram),
    Partial { completed: usize, total: usize },
}

impl SweepOutcome {
    pub fn into_complete(self) -> Option<PhaseDiagram> {
        match self {
            SweepOutcome::Complete(d) => Some(d),
            SweepOutcome::Partial { .. } => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointBody {
    config_sha256: String,
    points: Vec<GridPoint>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    body: CheckpointBody,
    checksum: String,
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::CorruptCheckpoint { path: path.to_path_buf(), reason: reason.into() }
}

fn load_checkpoint(path: &Path, cfg: &SweepConfig) -> Result<Vec<GridPoint>> {
    let bytes = fs::read(path)?;
    let file: CheckpointFile =
        serde_json::from_slice(&bytes).map_err(|e| corrupt(path, format!("unreadable: {e}")))?;
    let body = serde_json::to_vec(&file.body)?;
    if hex::encode(Sha256::digest(&body)) != file.checksum {
        return Err(corrupt(path, "checksum mismatch"));
    }
    if file.body.config_sha256 != cfg.fingerprint() {
        return Err(corrupt(path, "written for a different sweep configuration"));
    }
    let points = file.body.points;
    if points.len() > cfg.len() || points.iter().enumerate().any(|(i, p)| p.index != i) {
        return Err(corrupt(path, "point list is not a prefix of the grid"));
    }
    Ok(points)
}

fn store_checkpoint(path: &Path, cfg: &SweepConfig, points: &[GridPoint]) -> Result<()> {
    let body = CheckpointBody { config_sha256: cfg.fingerprint(), points: points.to_vec() };
    let checksum = hex::encode(Sha256::digest(serde_json::to_vec(&body)?));
    let bytes = serde_json::to_vec(&CheckpointFile { body, checksum })?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Classifies every grid point. Points run in parallel within a chunk;
/// after each chunk the finished prefix is written to the checkpoint.
pub fn sweep(cfg: &SweepConfig, opts: &SweepOptions) -> Result<SweepOutcome> {
    sweep_with_progress(cfg, opts, |_, _| {})
}

pub fn sweep_with_progress(
    cfg: &SweepConfig,
    opts: &SweepOptions,
    mut progress: impl FnMut(usize, usize),
) -> Result<SweepOutcome> {
    cfg.validate()?;
    let geom = cfg.geometry()?;
    let total = cfg.len();

    let mut points = match (&opts.checkpoint, opts.resume) {
        (Some(path), true) if path.exists() => load_checkpoint(path, cfg)?,
        _ => Vec::new(),
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;

    let mut chunks_run = 0;
    while points.len() < total {
        if opts.max_chunks.is_some_and(|m| chunks_run >= m) {
            return Ok(SweepOutcome::Partial { completed: points.len(), total });
        }
        let start = points.len();
        let end = (start + cfg.chunk_size).min(total);
        let chunk: Vec<GridPoint> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|index| {
                    let params = cfg.params_at(index);
                    let seed = cfg.seed_at(index);
                    let mut ccfg = cfg.classify.clone();
                    ccfg.lyapunov.seed = seed;
                    classify(&params, &geom, &cfg.initial_state, &ccfg)
                        .map(|result| GridPoint { index, params, seed, result })
                })
                .collect::<Result<_>>()
        })?;
        points.extend(chunk);
        if let Some(path) = &opts.checkpoint {
            store_checkpoint(path, cfg, &points)?;
        }
        chunks_run += 1;
        progress(points.len(), total);
    }
    Ok(SweepOutcome::Complete(PhaseDiagram { config: cfg.clone(), points }))
}
