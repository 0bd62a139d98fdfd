//! Staged noise protocol and relative crystalline fractions.
//!
//! A quiet run and a noisy run start from the same state. The noisy run
//! switches noise strength at stage boundaries; in each stage's analysis
//! window both runs are transformed and the noisy band weight around the
//! quiet principal frequency is compared with the quiet one.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integer_ratio, integrate, Component, CouplingParams, IntegratorConfig, Trajectory};
use crate::error::{Error, Result};
use crate::lattice::{build_initial_state, ClusterGeometry, InitialStateSpec};
use crate::noise::{NoiseKind, NoiseSchedule, NoiseSpec, DEFAULT_NOISE_DT};
use crate::rng::derive_seed;
use crate::spectral::{crystalline_fraction, trajectory_spectrum, CrystallineFraction, SpectralConfig, Spectrum};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub t_start: f64,
    pub t_end: f64,
    pub beta: f64,
    /// Analysis window `[t_a, t_b)` inside the stage.
    pub window: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSchedule {
    pub kind: NoiseKind,
    #[serde(default = "default_noise_dt")]
    pub dt_noise: f64,
    #[serde(default)]
    pub per_axis: bool,
    pub stages: Vec<Stage>,
}

fn default_noise_dt() -> f64 {
    DEFAULT_NOISE_DT
}

impl Default for StageSchedule {
    fn default() -> Self {
        Self::from_betas(NoiseKind::White, &[0.0, 0.04, 0.2], 200.0, 80.0)
    }
}

impl StageSchedule {
    /// Back-to-back stages of equal length, one per `beta`, each analysed
    /// after skipping `relax` time units.
    pub fn from_betas(kind: NoiseKind, betas: &[f64], length: f64, relax: f64) -> Self {
        let stages = betas
            .iter()
            .enumerate()
            .map(|(i, &beta)| {
                let t_start = i as f64 * length;
                let t_end = t_start + length;
                Stage { t_start, t_end, beta, window: [t_start + relax, t_end] }
            })
            .collect();
        Self { kind, dt_noise: DEFAULT_NOISE_DT, per_axis: false, stages }
    }

    pub fn t_end(&self) -> f64 {
        self.stages.last().map_or(0.0, |s| s.t_end)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::invalid("stage schedule is empty"));
        }
        let mut t = 0.0;
        for (i, s) in self.stages.iter().enumerate() {
            if (s.t_start - t).abs() > 1e-9 {
                return Err(Error::invalid(format!("stage {} starts at {} instead of {t}", i + 1, s.t_start)));
            }
            if !(s.t_end > s.t_start) {
                return Err(Error::invalid(format!("stage {} is empty", i + 1)));
            }
            if !(s.beta >= 0.0 && s.beta.is_finite()) {
                return Err(Error::invalid(format!("stage {} has beta {}", i + 1, s.beta)));
            }
            let [a, b] = s.window;
            if !(a >= s.t_start && b <= s.t_end && a < b) {
                return Err(Error::invalid(format!("stage {} window [{a}, {b}) leaves the stage", i + 1)));
            }
            if integer_ratio(s.t_end - s.t_start, self.dt_noise).is_none() {
                return Err(Error::invalid(format!("stage {} length is not a multiple of dt_noise", i + 1)));
            }
            t = s.t_end;
        }
        Ok(())
    }

    /// Noise realization for one seed. Stage `i` draws from
    /// `derive_seed(seed, [i])`; stages with `beta = 0` are exactly zero.
    pub fn noise(&self, seed: u64) -> Result<NoiseSchedule> {
        self.validate()?;
        let parts = self
            .stages
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if s.beta == 0.0 {
                    return NoiseSchedule::zeros(s.t_start, s.t_end, self.dt_noise);
                }
                NoiseSpec {
                    kind: self.kind,
                    beta: s.beta,
                    dt_noise: self.dt_noise,
                    seed: derive_seed(seed, &[i as u64]),
                    t_start: s.t_start,
                    t_end: s.t_end,
                    per_axis: self.per_axis,
                }
                .generate()
            })
            .collect::<Result<Vec<_>>>()?;
        NoiseSchedule::concat(&parts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidityConfig {
    pub params: CouplingParams,
    #[serde(default)]
    pub geometry: Option<[usize; 2]>,
    #[serde(default)]
    pub initial_state: InitialStateSpec,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub schedule: StageSchedule,
    #[serde(default)]
    pub spectral: SpectralConfig,
    #[serde(default = "default_observable")]
    pub observable: Component,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub base_seed: u64,
}

fn default_observable() -> Component {
    Component::X
}

fn default_seeds() -> usize {
    8
}

impl RigidityConfig {
    pub fn new(params: CouplingParams, schedule: StageSchedule) -> Self {
        Self {
            params,
            geometry: None,
            initial_state: InitialStateSpec::EquatorPhase,
            integrator: IntegratorConfig::default(),
            schedule,
            spectral: SpectralConfig::default(),
            observable: Component::X,
            seeds: default_seeds(),
            base_seed: 0,
        }
    }

    pub fn geometry(&self) -> Result<ClusterGeometry> {
        match self.geometry {
            Some([r, c]) => ClusterGeometry::new(r, c),
            None => Ok(ClusterGeometry::standard()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.integrator.validate()?;
        self.schedule.validate()?;
        self.spectral.validate()?;
        self.geometry()?;
        if self.seeds == 0 {
            return Err(Error::invalid("need at least one seed"));
        }
        Ok(())
    }

    pub fn seed(&self, index: usize) -> u64 {
        derive_seed(self.base_seed, &[index as u64])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: usize,
    pub beta: f64,
    pub seed_index: usize,
    pub seed: u64,
    pub fraction: CrystallineFraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: usize,
    pub beta: f64,
    pub mean_rcf: f64,
    pub std_rcf: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone)]
pub struct RigidityStudy {
    pub results: Vec<StageResult>,
    pub summary: Vec<StageSummary>,
    pub quiet_spectra: Vec<Spectrum>,
    /// Noisy spectra of the first seed, one per stage.
    pub noisy_spectra: Vec<Spectrum>,
}

impl RigidityStudy {
    /// CSV `beta,seed,omega_rcf`, one row per stage and seed.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "beta,seed,omega_rcf")?;
        for r in &self.results {
            writeln!(w, "{},{},{}", r.beta, r.seed, r.fraction.omega_rcf)?;
        }
        Ok(())
    }

    pub fn mean_rcf(&self, stage: usize) -> f64 {
        self.summary[stage].mean_rcf
    }
}

fn stage_spectra(traj: &Trajectory, cfg: &RigidityConfig) -> Result<Vec<Spectrum>> {
    cfg.schedule
        .stages
        .iter()
        .map(|s| trajectory_spectrum(traj, cfg.observable, (s.window[0], s.window[1]), cfg.spectral.axis))
        .collect()
}

/// Runs the staged protocol for every seed.
pub fn rigidity_study(cfg: &RigidityConfig) -> Result<RigidityStudy> {
    cfg.validate()?;
    let geom = cfg.geometry()?;
    let state0 = build_initial_state(&cfg.initial_state, &geom)?;
    let t_end = cfg.schedule.t_end();
    let quiet = integrate(&state0, &cfg.params, &geom, t_end, &cfg.integrator, None)?;
    let quiet_spectra = stage_spectra(&quiet, cfg)?;

    let per_seed: Vec<(Vec<StageResult>, Vec<Spectrum>)> = (0..cfg.seeds)
        .into_par_iter()
        .map(|k| {
            let seed = cfg.seed(k);
            let noise = cfg.schedule.noise(seed)?;
            let noisy = integrate(&state0, &cfg.params, &geom, t_end, &cfg.integrator, Some(&noise))?;
            let spectra = stage_spectra(&noisy, cfg)?;
            let results = cfg
                .schedule
                .stages
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    crystalline_fraction(&spectra[i], &quiet_spectra[i], &cfg.spectral).map(|fraction| StageResult {
                        stage: i,
                        beta: s.beta,
                        seed_index: k,
                        seed,
                        fraction,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((results, spectra))
        })
        .collect::<Result<_>>()?;

    let noisy_spectra = per_seed[0].1.clone();
    let results: Vec<StageResult> = per_seed.into_iter().flat_map(|(r, _)| r).collect();
    let summary = cfg
        .schedule
        .stages
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let xs: Vec<f64> = results.iter().filter(|r| r.stage == i).map(|r| r.fraction.omega_rcf).collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let std = if xs.len() > 1 {
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            StageSummary { stage: i, beta: s.beta, mean_rcf: mean, std_rcf: std, seeds: xs.len() }
        })
        .collect();
    Ok(RigidityStudy { results, summary, quiet_spectra, noisy_spectra })
}
