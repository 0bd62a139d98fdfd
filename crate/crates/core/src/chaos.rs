//! Largest Lyapunov exponent from a fiducial/auxiliary trajectory pair.
//!
//! The distance between the two runs is measured on the cluster-averaged
//! `<σy>`. Whenever it exceeds `delta_max` at a sample time `t_k`, the ratio
//! `d_k = Δ(t_k)/Δ₀` is recorded and the auxiliary state is pulled back
//! towards the fiducial one so that the distance is `Δ₀` again. The exponent
//! is `Σ ln d_k / (t_total − t_transient)` over resets after the transient.
//!
//! Every recorded `d_k` exceeds one, so the estimate is never negative:
//! contracting dynamics (fixed points, limit cycles) give exactly zero.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integer_ratio, CouplingParams, IntegratorConfig, Method, Rk4Stepper};
use crate::error::{Error, Result};
use crate::lattice::{build_initial_state, BlochVector, ClusterGeometry, ClusterState, InitialStateSpec};
use crate::rng::SeededRng;

/// Exponents above this mark chaos; below it, a limit cycle.
pub const CHAOS_THRESHOLD: f64 = 0.01;
const MIN_DELTA0: f64 = 1e-12;
const MAX_PERTURBATION_ATTEMPTS: u32 = 16;
const BALL_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovConfig {
    pub epsilon: f64,
    pub delta_max: f64,
    pub t_total: f64,
    pub t_transient: f64,
    pub seed: u64,
    pub integrator: IntegratorConfig,
    /// Keep the `(t, Δ, reset)` history for diagnostics.
    pub record_trace: bool,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            delta_max: 0.1,
            t_total: 2e4,
            t_transient: 500.0,
            seed: 0,
            integrator: IntegratorConfig::default(),
            record_trace: false,
        }
    }
}

impl LyapunovConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < self.delta_max && self.delta_max < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < epsilon < delta_max < 1, got epsilon={} delta_max={}",
                self.epsilon, self.delta_max
            )));
        }
        if !(self.t_transient >= 0.0 && self.t_transient < self.t_total) {
            return Err(Error::invalid(format!(
                "need 0 <= t_transient < t_total, got {} and {}",
                self.t_transient, self.t_total
            )));
        }
        if self.integrator.method != Method::Rk4Fixed {
            return Err(Error::invalid("the Lyapunov estimate needs the rk4_fixed integrator"));
        }
        self.integrator.validate()?;
        integer_ratio(self.t_total, self.integrator.sample_dt)
            .ok_or_else(|| Error::invalid("t_total must be a multiple of sample_dt"))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: f64,
    pub delta: f64,
    pub reset: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovResult {
    pub lambda: f64,
    /// Threshold touches after the transient (the ones entering the sum).
    pub reset_count: usize,
    pub reset_times: Vec<f64>,
    /// Touches during the discarded transient.
    pub transient_resets: usize,
    pub delta0: f64,
    /// Seed of the accepted perturbation.
    pub perturbation_seed: u64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub trace: Vec<TracePoint>,
}

impl LyapunovResult {
    pub fn is_chaotic(&self) -> bool {
        self.lambda > CHAOS_THRESHOLD
    }

    /// CSV `t,delta,reset` of the recorded distance history.
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,delta,reset")?;
        for p in &self.trace {
            writeln!(w, "{},{},{}", p.t, p.delta, u8::from(p.reset))?;
        }
        Ok(())
    }
}

fn observable(sites: &[BlochVector]) -> f64 {
    sites.iter().map(|v| v.sy).sum::<f64>() / sites.len() as f64
}

/// Auxiliary state built by adding `epsilon`-scaled complex normal noise to
/// each site's spinor and renormalizing it.
pub fn perturbed_state(
    spec: &InitialStateSpec,
    geom: &ClusterGeometry,
    epsilon: f64,
    seed: u64,
) -> Result<ClusterState> {
    let mut rng = SeededRng::new(seed);
    let sites = spec
        .spinors(geom)?
        .into_iter()
        .map(|(mut s, radius)| {
            s.up += epsilon * Complex64::new(rng.gaussian(), rng.gaussian());
            s.down += epsilon * Complex64::new(rng.gaussian(), rng.gaussian());
            radius * s.normalized().to_bloch()
        })
        .collect();
    Ok(ClusterState::new(sites))
}

/// `v_a ← v_f + (Δ₀/Δ)(v_a − v_f)` site-wise, projected back onto the ball
/// only when the violation exceeds `1e-9`.
pub fn rescale_towards(fiducial: &[BlochVector], auxiliary: &mut [BlochVector], delta0: f64, delta: f64) {
    let k = delta0 / delta;
    for (a, &f) in auxiliary.iter_mut().zip(fiducial) {
        let mut v = f + k * (*a - f);
        let n2 = v.norm_sqr();
        if n2 > 1.0 + BALL_SLACK {
            v = (1.0 / n2.sqrt()) * v;
        }
        *a = v;
    }
}

pub fn lyapunov_exponent(
    params: &CouplingParams,
    geom: &ClusterGeometry,
    state0_spec: &InitialStateSpec,
    cfg: &LyapunovConfig,
) -> Result<LyapunovResult> {
    cfg.validate()?;
    params.validate()?;
    let fiducial0 = build_initial_state(state0_spec, geom)?;
    let y_f0 = observable(fiducial0.sites());

    let mut accepted = None;
    for attempt in 0..MAX_PERTURBATION_ATTEMPTS {
        let seed = cfg.seed.wrapping_add(attempt as u64);
        let aux = perturbed_state(state0_spec, geom, cfg.epsilon, seed)?;
        let delta0 = (y_f0 - observable(aux.sites())).abs();
        if delta0 >= MIN_DELTA0 {
            accepted = Some((aux, delta0, seed));
            break;
        }
    }
    let (aux0, delta0, perturbation_seed) =
        accepted.ok_or(Error::BlindPerturbation { attempts: MAX_PERTURBATION_ATTEMPTS })?;

    let per_sample = cfg.integrator.steps_per_sample();
    let dt = cfg.integrator.sample_dt / per_sample as f64;
    let n_samples = integer_ratio(cfg.t_total, cfg.integrator.sample_dt).expect("validated");

    let mut fid = fiducial0.into_sites();
    let mut aux = aux0.into_sites();
    let mut step_f = Rk4Stepper::new(fid.len());
    let mut step_a = Rk4Stepper::new(aux.len());

    let mut log_sum = 0.0;
    let mut reset_times = Vec::new();
    let mut transient_resets = 0;
    let mut trace = Vec::new();

    for k in 1..=n_samples {
        for _ in 0..per_sample {
            step_f.step(&mut fid, params, geom, dt);
            step_a.step(&mut aux, params, geom, dt);
        }
        let t = k as f64 * cfg.integrator.sample_dt;
        let delta = (observable(&fid) - observable(&aux)).abs();
        if !delta.is_finite() {
            return Err(Error::NumericalBlowup { time: t, site: 0 });
        }
        let reset = delta > cfg.delta_max;
        if reset {
            if t > cfg.t_transient {
                log_sum += (delta / delta0).ln();
                reset_times.push(t);
            } else {
                transient_resets += 1;
            }
            rescale_towards(&fid, &mut aux, delta0, delta);
        }
        if cfg.record_trace {
            trace.push(TracePoint { t, delta, reset });
        }
    }

    let reset_count = reset_times.len();
    let lambda = if reset_count == 0 { 0.0 } else { log_sum / (cfg.t_total - cfg.t_transient) };
    Ok(LyapunovResult { lambda, reset_count, reset_times, transient_resets, delta0, perturbation_seed, trace })
}
