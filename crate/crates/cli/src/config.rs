//! TOML run configurations, one schema per subcommand. Unknown keys are
//! rejected; omitted keys take the engine defaults.

use ctc_core::chaos::LyapunovConfig;
use ctc_core::dynamics::{Component, CouplingAxis, CouplingParams, IntegratorConfig};
use ctc_core::lattice::{ClusterGeometry, InitialStateSpec};
use ctc_core::noise::{NoiseKind, NoiseSpec, DEFAULT_NOISE_DT};
use ctc_core::phases::{ClassifyConfig, GridAxis, SweepConfig};
use ctc_core::rigidity::{RigidityConfig, StageSchedule};
use ctc_core::spectral::SpectralConfig;
use ctc_core::stability::ScanConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

fn standard_geometry() -> [usize; 2] {
    [3, 3]
}

pub fn geometry(g: [usize; 2]) -> ctc_core::Result<ClusterGeometry> {
    ClusterGeometry::new(g[0], g[1])
}

pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T, String> {
    toml::from_str(text).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub params: CouplingParams,
    #[serde(default = "standard_geometry")]
    pub geometry: [usize; 2],
    #[serde(default)]
    pub initial_state: InitialStateSpec,
    pub t_end: f64,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovRunConfig {
    pub params: CouplingParams,
    #[serde(default = "standard_geometry")]
    pub geometry: [usize; 2],
    #[serde(default)]
    pub initial_state: InitialStateSpec,
    #[serde(default)]
    pub lyapunov: LyapunovConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityScanConfig {
    pub params: CouplingParams,
    #[serde(default = "standard_geometry")]
    pub geometry: [usize; 2],
    pub axis: CouplingAxis,
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
    /// Parallel continuation chunks; 1 runs serially.
    #[serde(default = "one")]
    pub chunks: usize,
    #[serde(default)]
    pub scan: ScanConfig,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseDiagramConfig {
    pub params: CouplingParams,
    #[serde(default = "standard_geometry")]
    pub geometry: [usize; 2],
    pub outer: GridAxis,
    pub inner: GridAxis,
    #[serde(default)]
    pub initial_state: InitialStateSpec,
    #[serde(default)]
    pub classify: ClassifyConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_chunk")]
    pub chunk_size: usize,
}

fn default_chunk() -> usize {
    16
}

impl PhaseDiagramConfig {
    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            base: self.params,
            outer: self.outer,
            inner: self.inner,
            geometry: Some(self.geometry),
            initial_state: self.initial_state.clone(),
            classify: self.classify.clone(),
            base_seed: self.seed,
            chunk_size: self.chunk_size,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseRigidityConfig {
    pub params: CouplingParams,
    #[serde(default = "standard_geometry")]
    pub geometry: [usize; 2],
    #[serde(default)]
    pub initial_state: InitialStateSpec,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    pub noise: NoiseKind,
    /// One stage per entry, back to back.
    pub betas: Vec<f64>,
    #[serde(default = "default_stage_length")]
    pub stage_length: f64,
    /// Time skipped at the start of each stage before analysis.
    #[serde(default = "default_relax")]
    pub relax: f64,
    #[serde(default = "default_noise_dt")]
    pub dt_noise: f64,
    #[serde(default)]
    pub per_axis: bool,
    #[serde(default)]
    pub spectral: SpectralConfig,
    #[serde(default = "default_observable")]
    pub observable: Component,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub seed: u64,
    /// Refuse to run unless the quiet point classifies as a limit cycle.
    #[serde(default = "yes")]
    pub require_lc: bool,
    #[serde(default)]
    pub classify: ClassifyConfig,
}

fn default_stage_length() -> f64 {
    200.0
}

fn default_relax() -> f64 {
    80.0
}

fn default_noise_dt() -> f64 {
    DEFAULT_NOISE_DT
}

fn default_observable() -> Component {
    Component::X
}

fn default_seeds() -> usize {
    8
}

fn yes() -> bool {
    true
}

impl NoiseRigidityConfig {
    pub fn rigidity_config(&self) -> RigidityConfig {
        let mut schedule = StageSchedule::from_betas(self.noise, &self.betas, self.stage_length, self.relax);
        schedule.dt_noise = self.dt_noise;
        schedule.per_axis = self.per_axis;
        RigidityConfig {
            params: self.params,
            geometry: Some(self.geometry),
            initial_state: self.initial_state.clone(),
            integrator: self.integrator.clone(),
            schedule,
            spectral: self.spectral,
            observable: self.observable,
            seeds: self.seeds,
            base_seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_trajectory_config() {
        let c: TrajectoryConfig = parse(
            r#"
            t_end = 10.0
            [params]
            jx = 5.0
            jy = 1.1
            jz = 1.0
            "#,
        )
        .unwrap();
        assert_eq!(c.geometry, [3, 3]);
        assert_eq!(c.params.gamma, 1.0);
        assert_eq!(c.integrator, IntegratorConfig::default());
        assert!(c.noise.is_none());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = parse::<TrajectoryConfig>("t_end = 1.0\nspeed = 3\n[params]\njx=1\njy=1\njz=1\n").unwrap_err();
        assert!(err.contains("speed"), "{err}");
        let err = parse::<TrajectoryConfig>("t_end = 1.0\n[params]\njx=1\njy=1\njz=1\n[integrator]\nstep=0.1\n")
            .unwrap_err();
        assert!(err.contains("step"), "{err}");
    }

    #[test]
    fn rigidity_shorthand_builds_stages() {
        let c: NoiseRigidityConfig = parse(
            r#"
            noise = "pink"
            betas = [0.0, 0.04, 0.2]
            [params]
            jx = 7.0
            jy = 1.5
            jz = 1.0
            "#,
        )
        .unwrap();
        let r = c.rigidity_config();
        assert_eq!(r.schedule, StageSchedule::from_betas(NoiseKind::Pink, &[0.0, 0.04, 0.2], 200.0, 80.0));
        assert_eq!(r.seeds, 8);
    }
}
