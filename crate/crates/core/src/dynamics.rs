//! Mean-field Bloch equations of the dissipative XYZ cluster and their time
//! integration.
//!
//! For site `n` with neighbor sums `S = Σ_m v_m` (over the neighbor multiset):
//!
//! ```text
//! dx/dt = -Γ/2 x      + (Jy z Sy - Jz y Sz) / d
//! dy/dt = -Γ/2 y      + (Jz x Sz - Jx z Sx) / d
//! dz/dt = -Γ (z + 1)  + (Jx y Sx - Jy x Sy) / d
//! ```
//!
//! with `d = 2`. The precession terms preserve `|v|`; decay pulls every spin
//! towards `(0, 0, -1)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{BlochVector, ClusterGeometry, ClusterState, DIMENSION};
use crate::noise::NoiseSchedule;

/// Coordination divisor in the equations of motion.
pub const COUPLING_DIVISOR: f64 = DIMENSION as f64;

/// Ball tolerance for integrated trajectories.
pub const BALL_TOLERANCE: f64 = 1e-9;

const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingParams {
    pub jx: f64,
    pub jy: f64,
    pub jz: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_gamma() -> f64 {
    1.0
}

impl CouplingParams {
    pub fn new(jx: f64, jy: f64, jz: f64) -> Self {
        Self { jx, jy, jz, gamma: 1.0 }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!("decay rate must be positive, got {}", self.gamma)));
        }
        if ![self.jx, self.jy, self.jz].iter().all(|j| j.is_finite()) {
            return Err(Error::invalid("couplings must be finite"));
        }
        Ok(())
    }

    /// Couplings shifted by per-axis offsets, as seen by a noisy run.
    pub fn offset(&self, xi: [f64; 3]) -> Self {
        Self { jx: self.jx + xi[0], jy: self.jy + xi[1], jz: self.jz + xi[2], gamma: self.gamma }
    }

    pub fn get(&self, axis: CouplingAxis) -> f64 {
        match axis {
            CouplingAxis::Jx => self.jx,
            CouplingAxis::Jy => self.jy,
            CouplingAxis::Jz => self.jz,
        }
    }

    pub fn with(mut self, axis: CouplingAxis, value: f64) -> Self {
        match axis {
            CouplingAxis::Jx => self.jx = value,
            CouplingAxis::Jy => self.jy = value,
            CouplingAxis::Jz => self.jz = value,
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingAxis {
    Jx,
    Jy,
    Jz,
}

impl CouplingAxis {
    pub fn name(self) -> &'static str {
        match self {
            CouplingAxis::Jx => "jx",
            CouplingAxis::Jy => "jy",
            CouplingAxis::Jz => "jz",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    X,
    Y,
    Z,
}

impl Component {
    pub fn of(self, v: BlochVector) -> f64 {
        match self {
            Component::X => v.sx,
            Component::Y => v.sy,
            Component::Z => v.sz,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Component::X => "sx",
            Component::Y => "sy",
            Component::Z => "sz",
        }
    }
}

/// Local field `B_n = Σ_m (Jx x_m, Jy y_m, Jz z_m)` around which spin `n`
/// precesses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldVector {
    pub bx: f64,
    pub by: f64,
    pub bz: f64,
}

pub fn effective_field(
    site: usize,
    state: &ClusterState,
    params: &CouplingParams,
    geom: &ClusterGeometry,
) -> Result<FieldVector> {
    state.check_size(geom)?;
    if site >= geom.num_sites() {
        return Err(Error::invalid(format!(
            "site index {site} out of range for {} sites",
            geom.num_sites()
        )));
    }
    let s = neighbor_sum(state.sites(), geom, site);
    Ok(FieldVector { bx: params.jx * s.sx, by: params.jy * s.sy, bz: params.jz * s.sz })
}

#[inline]
fn neighbor_sum(sites: &[BlochVector], geom: &ClusterGeometry, n: usize) -> BlochVector {
    let mut s = BlochVector::ZERO;
    for &m in geom.neighbors(n) {
        let v = sites[m];
        s.sx += v.sx;
        s.sy += v.sy;
        s.sz += v.sz;
    }
    s
}

/// Right-hand side of the Bloch equations written into `out`. Sizes are the
/// caller's responsibility.
#[inline]
pub fn bloch_rhs_into(
    sites: &[BlochVector],
    params: &CouplingParams,
    geom: &ClusterGeometry,
    out: &mut [BlochVector],
) {
    let half_gamma = 0.5 * params.gamma;
    let jx = params.jx / COUPLING_DIVISOR;
    let jy = params.jy / COUPLING_DIVISOR;
    let jz = params.jz / COUPLING_DIVISOR;
    for (n, o) in out.iter_mut().enumerate() {
        let s = neighbor_sum(sites, geom, n);
        let BlochVector { sx: x, sy: y, sz: z } = sites[n];
        o.sx = -half_gamma * x + (jy * z * s.sy - jz * y * s.sz);
        o.sy = -half_gamma * y + (jz * x * s.sz - jx * z * s.sx);
        o.sz = -params.gamma * (z + 1.0) + (jx * y * s.sx - jy * x * s.sy);
    }
}

pub fn bloch_rhs(
    state: &ClusterState,
    params: &CouplingParams,
    geom: &ClusterGeometry,
) -> Result<Vec<BlochVector>> {
    state.check_size(geom)?;
    let mut out = vec![BlochVector::ZERO; state.len()];
    bloch_rhs_into(state.sites(), params, geom, &mut out);
    Ok(out)
}

/// Max-norm of the right-hand side; zero exactly at fixed points.
pub fn residual_max_norm(state: &ClusterState, params: &CouplingParams, geom: &ClusterGeometry) -> f64 {
    let mut out = vec![BlochVector::ZERO; state.len()];
    bloch_rhs_into(state.sites(), params, geom, &mut out);
    out.iter().map(|v| v.max_abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rk4Fixed,
    Rk45Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub method: Method,
    pub dt: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub sample_dt: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { method: Method::Rk4Fixed, dt: 1e-3, abs_tol: 1e-9, rel_tol: 1e-9, sample_dt: 0.1 }
    }
}

impl IntegratorConfig {
    pub fn adaptive() -> Self {
        Self { method: Method::Rk45Adaptive, ..Self::default() }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.sample_dt > 0.0 && self.sample_dt.is_finite()) {
            return Err(Error::invalid(format!("sample_dt must be positive, got {}", self.sample_dt)));
        }
        match self.method {
            Method::Rk4Fixed => {
                integer_ratio(self.sample_dt, self.dt).ok_or_else(|| {
                    Error::invalid(format!(
                        "sample_dt {} is not an integer multiple of dt {}",
                        self.sample_dt, self.dt
                    ))
                })?;
            }
            Method::Rk45Adaptive => {
                if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
                    return Err(Error::invalid("adaptive tolerances must be positive"));
                }
            }
        }
        Ok(())
    }

    pub fn steps_per_sample(&self) -> usize {
        integer_ratio(self.sample_dt, self.dt).unwrap_or(1)
    }
}

/// `a / b` when it is a positive integer up to rounding.
pub(crate) fn integer_ratio(a: f64, b: f64) -> Option<usize> {
    let r = a / b;
    let k = r.round();
    (k >= 1.0 && (r - k).abs() <= GRID_TOL * k.max(1.0)).then_some(k as usize)
}

/// Classic fourth-order Runge–Kutta with preallocated stage buffers.
#[derive(Debug, Clone)]
pub struct Rk4Stepper {
    k1: Vec<BlochVector>,
    k2: Vec<BlochVector>,
    k3: Vec<BlochVector>,
    k4: Vec<BlochVector>,
    tmp: Vec<BlochVector>,
}

impl Rk4Stepper {
    pub fn new(n_sites: usize) -> Self {
        let z = vec![BlochVector::ZERO; n_sites];
        Self { k1: z.clone(), k2: z.clone(), k3: z.clone(), k4: z.clone(), tmp: z }
    }

    /// One step; all four stages see the same `params`.
    pub fn step(&mut self, sites: &mut [BlochVector], params: &CouplingParams, geom: &ClusterGeometry, dt: f64) {
        bloch_rhs_into(sites, params, geom, &mut self.k1);
        axpy_into(&mut self.tmp, sites, 0.5 * dt, &self.k1);
        bloch_rhs_into(&self.tmp, params, geom, &mut self.k2);
        axpy_into(&mut self.tmp, sites, 0.5 * dt, &self.k2);
        bloch_rhs_into(&self.tmp, params, geom, &mut self.k3);
        axpy_into(&mut self.tmp, sites, dt, &self.k3);
        bloch_rhs_into(&self.tmp, params, geom, &mut self.k4);
        let w = dt / 6.0;
        for i in 0..sites.len() {
            let (a, b, c, d) = (self.k1[i], self.k2[i], self.k3[i], self.k4[i]);
            sites[i].sx += w * (a.sx + 2.0 * b.sx + 2.0 * c.sx + d.sx);
            sites[i].sy += w * (a.sy + 2.0 * b.sy + 2.0 * c.sy + d.sy);
            sites[i].sz += w * (a.sz + 2.0 * b.sz + 2.0 * c.sz + d.sz);
        }
    }
}

#[inline]
fn axpy_into(out: &mut [BlochVector], x: &[BlochVector], a: f64, k: &[BlochVector]) {
    for ((o, &xi), &ki) in out.iter_mut().zip(x).zip(k) {
        o.sx = xi.sx + a * ki.sx;
        o.sy = xi.sy + a * ki.sy;
        o.sz = xi.sz + a * ki.sz;
    }
}

fn first_non_finite(sites: &[BlochVector]) -> Option<usize> {
    sites.iter().position(|v| !v.is_finite())
}

/// Uniformly sampled solution of the Bloch equations.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<ClusterState>,
    pub params: CouplingParams,
    pub noise: Option<NoiseSchedule>,
    pub sample_dt: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &ClusterState {
        self.states.last().expect("trajectories hold at least the initial state")
    }

    /// Cluster-averaged component over all samples.
    pub fn mean_series(&self, c: Component) -> Vec<f64> {
        self.states.iter().map(|s| c.of(s.mean())).collect()
    }

    pub fn site_series(&self, site: usize, c: Component) -> Vec<f64> {
        self.states.iter().map(|s| c.of(s.sites()[site])).collect()
    }

    /// Index range of samples with `t_a <= t <= t_b`.
    pub fn window_indices(&self, t_a: f64, t_b: f64) -> std::ops::Range<usize> {
        let eps = 1e-9 * self.sample_dt;
        let lo = self.times.partition_point(|&t| t < t_a - eps);
        let hi = self.times.partition_point(|&t| t <= t_b + eps);
        lo..hi
    }

    pub fn max_norm_sqr(&self) -> f64 {
        self.states.iter().map(|s| s.max_norm_sqr()).fold(0.0, f64::max)
    }

    /// Long-format CSV `t,site,sx,sy,sz` with 1-based site labels.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,site,sx,sy,sz")?;
        for (t, s) in self.times.iter().zip(&self.states) {
            for (i, v) in s.sites().iter().enumerate() {
                writeln!(w, "{},{},{},{},{}", t, i + 1, v.sx, v.sy, v.sz)?;
            }
        }
        Ok(())
    }
}

/// Integrates the Bloch equations from `state0` to `t_end`.
///
/// With a noise schedule the couplings are `J_α + ξ_α(t)`, held constant over
/// each noise interval; this requires the fixed-step method with `dt`
/// dividing the noise hold time.
pub fn integrate(
    state0: &ClusterState,
    params: &CouplingParams,
    geom: &ClusterGeometry,
    t_end: f64,
    cfg: &IntegratorConfig,
    noise: Option<&NoiseSchedule>,
) -> Result<Trajectory> {
    state0.check_size(geom)?;
    params.validate()?;
    cfg.validate()?;
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::invalid(format!("t_end must be positive, got {t_end}")));
    }
    let n_samples = integer_ratio(t_end, cfg.sample_dt).ok_or_else(|| {
        Error::invalid(format!("t_end {t_end} is not a multiple of sample_dt {}", cfg.sample_dt))
    })?;
    if let Some(schedule) = noise {
        if cfg.method != Method::Rk4Fixed {
            return Err(Error::invalid("noisy runs require the rk4_fixed method"));
        }
        if integer_ratio(schedule.dt_noise(), cfg.dt).is_none() {
            return Err(Error::invalid(format!(
                "dt {} does not divide the noise step {}",
                cfg.dt,
                schedule.dt_noise()
            )));
        }
    }

    let mut times = Vec::with_capacity(n_samples + 1);
    let mut states = Vec::with_capacity(n_samples + 1);
    times.push(0.0);
    states.push(state0.clone());

    match cfg.method {
        Method::Rk4Fixed => {
            let per_sample = cfg.steps_per_sample();
            let dt = cfg.sample_dt / per_sample as f64;
            let mut stepper = Rk4Stepper::new(state0.len());
            let mut sites = state0.sites().to_vec();
            for k in 1..=n_samples {
                for j in 0..per_sample {
                    let step_index = (k - 1) * per_sample + j;
                    let p = match noise {
                        Some(s) => params.offset(s.offset_at((step_index as f64 + 0.5) * dt)),
                        None => *params,
                    };
                    stepper.step(&mut sites, &p, geom, dt);
                }
                let t = k as f64 * cfg.sample_dt;
                if let Some(site) = first_non_finite(&sites) {
                    return Err(Error::NumericalBlowup { time: t, site: site + 1 });
                }
                times.push(t);
                states.push(ClusterState::new(sites.clone()));
            }
        }
        Method::Rk45Adaptive => {
            let mut solver = DormandPrince::new(state0.len(), cfg);
            let mut sites = state0.sites().to_vec();
            let mut t = 0.0;
            for k in 1..=n_samples {
                let t_target = k as f64 * cfg.sample_dt;
                solver.advance(&mut sites, &mut t, t_target, params, geom)?;
                times.push(t_target);
                states.push(ClusterState::new(sites.clone()));
            }
        }
    }

    Ok(Trajectory { times, states, params: *params, noise: noise.cloned(), sample_dt: cfg.sample_dt })
}

/// Dormand–Prince 5(4) with standard PI-free step control.
struct DormandPrince {
    k: [Vec<BlochVector>; 7],
    tmp: Vec<BlochVector>,
    h: f64,
    abs_tol: f64,
    rel_tol: f64,
}

const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

impl DormandPrince {
    fn new(n: usize, cfg: &IntegratorConfig) -> Self {
        let z = vec![BlochVector::ZERO; n];
        Self {
            k: std::array::from_fn(|_| z.clone()),
            tmp: z,
            h: cfg.dt.min(cfg.sample_dt),
            abs_tol: cfg.abs_tol,
            rel_tol: cfg.rel_tol,
        }
    }

    fn advance(
        &mut self,
        y: &mut [BlochVector],
        t: &mut f64,
        t_target: f64,
        params: &CouplingParams,
        geom: &ClusterGeometry,
    ) -> Result<()> {
        let n = y.len();
        let mut y_new = vec![BlochVector::ZERO; n];
        while t_target - *t > 1e-12 * t_target.max(1.0) {
            let h = self.h.min(t_target - *t);
            bloch_rhs_into(y, params, geom, &mut self.k[0]);
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = y[i];
                    for (j, &a) in DP_A[s][..s].iter().enumerate() {
                        if a != 0.0 {
                            acc = acc + (h * a) * self.k[j][i];
                        }
                    }
                    self.tmp[i] = acc;
                }
                bloch_rhs_into(&self.tmp, params, geom, &mut self.k[s]);
            }
            let mut err = 0.0f64;
            for i in 0..n {
                let mut acc = y[i];
                let mut e = BlochVector::ZERO;
                for s in 0..7 {
                    acc = acc + (h * DP_B[s]) * self.k[s][i];
                    e = e + (h * DP_E[s]) * self.k[s][i];
                }
                y_new[i] = acc;
                for (ei, (yi, yn)) in e.to_array().iter().zip(y[i].to_array().iter().zip(acc.to_array())) {
                    let scale = self.abs_tol + self.rel_tol * yi.abs().max(yn.abs());
                    err = err.max((ei / scale).abs());
                }
            }
            if !err.is_finite() {
                return Err(Error::NumericalBlowup { time: *t, site: first_non_finite(&y_new).map_or(0, |s| s + 1) });
            }
            if err <= 1.0 {
                *t += h;
                y.copy_from_slice(&y_new);
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            self.h = h * factor;
            if self.h < 1e-14 {
                return Err(Error::NumericalBlowup { time: *t, site: 0 });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_initial_state, InitialStateSpec};
    use std::f64::consts::PI;

    fn geom() -> ClusterGeometry {
        ClusterGeometry::standard()
    }

    #[test]
    fn field_examples() {
        let g = geom();
        let pm = ClusterState::paramagnet(&g);
        let f = effective_field(4, &pm, &CouplingParams::new(0.0, 0.0, 1.0), &g).unwrap();
        assert_eq!((f.bx, f.by, f.bz), (0.0, 0.0, -4.0));

        let eq = ClusterState::uniform(BlochVector::new(1.0, 0.0, 0.0), &g);
        let f = effective_field(0, &eq, &CouplingParams::new(5.0, 0.0, 0.0), &g).unwrap();
        assert_eq!((f.bx, f.by, f.bz), (20.0, 0.0, 0.0));

        // direct sum over the 1-based neighbor labels {2, 3, 4, 7} of site 1
        let s = build_initial_state(&InitialStateSpec::EquatorPhase, &g).unwrap();
        let f = effective_field(0, &s, &CouplingParams::new(7.0, 1.5, 1.0), &g).unwrap();
        let labels = [2.0, 3.0, 4.0, 7.0];
        let bx: f64 = labels.iter().map(|m| 7.0 * (m * PI / 9.0).cos()).sum();
        let by: f64 = labels.iter().map(|m| 1.5 * (m * PI / 9.0).sin()).sum();
        assert!((f.bx - bx).abs() < 1e-12);
        assert!((f.by - by).abs() < 1e-12);
        assert!(f.bz.abs() < 1e-12);
    }

    #[test]
    fn field_index_out_of_range() {
        let g = geom();
        let s = ClusterState::paramagnet(&g);
        assert!(effective_field(9, &s, &CouplingParams::new(1.0, 1.0, 1.0), &g).is_err());
    }

    #[test]
    fn paramagnet_is_fixed_point() {
        let g = geom();
        let pm = ClusterState::paramagnet(&g);
        for p in [CouplingParams::new(5.0, 1.1, 1.0), CouplingParams::new(-3.0, 12.0, 0.4)] {
            let d = bloch_rhs(&pm, &p, &g).unwrap();
            assert!(d.iter().all(|v| *v == BlochVector::ZERO));
        }
    }

    #[test]
    fn pure_decay_rhs() {
        let g = geom();
        let s = ClusterState::uniform(BlochVector::new(1.0, 0.0, 0.0), &g);
        let d = bloch_rhs(&s, &CouplingParams::new(0.0, 0.0, 0.0), &g).unwrap();
        assert!(d.iter().all(|v| *v == BlochVector::new(-0.5, 0.0, -1.0)));
    }

    #[test]
    fn rhs_matches_term_by_term_substitution() {
        let g = geom();
        let s = build_initial_state(&InitialStateSpec::EquatorPhase, &g).unwrap();
        let (jx, jy, jz) = (5.0, 1.1, 1.0);
        let d = bloch_rhs(&s, &CouplingParams::new(jx, jy, jz), &g).unwrap();
        let v = s.sites();
        for n in 0..9 {
            let (x, y, z) = (v[n].sx, v[n].sy, v[n].sz);
            let (mut ex, mut ey, mut ez) = (-0.5 * x, -0.5 * y, -(z + 1.0));
            for &m in g.neighbors(n) {
                ex += (jy * z * v[m].sy - jz * y * v[m].sz) / 2.0;
                ey += (jz * x * v[m].sz - jx * z * v[m].sx) / 2.0;
                ez += (jx * y * v[m].sx - jy * x * v[m].sy) / 2.0;
            }
            assert!((d[n].sx - ex).abs() < 1e-12);
            assert!((d[n].sy - ey).abs() < 1e-12);
            assert!((d[n].sz - ez).abs() < 1e-12);
        }
    }

    #[test]
    fn paramagnet_trajectory_is_constant() {
        let g = geom();
        let pm = ClusterState::paramagnet(&g);
        let tr = integrate(&pm, &CouplingParams::new(10.0, 1.1, 1.0), &g, 5.0, &IntegratorConfig::default(), None)
            .unwrap();
        assert!(tr.states.iter().all(|s| *s == pm));
    }

    #[test]
    fn decoupled_decay_closed_form() {
        let g = geom();
        let (x0, z0) = (0.6, 0.3);
        let s0 = ClusterState::uniform(BlochVector::new(x0, 0.0, z0), &g);
        let p = CouplingParams::new(0.0, 0.0, 0.0);
        for cfg in [IntegratorConfig::default(), IntegratorConfig::adaptive()] {
            let tr = integrate(&s0, &p, &g, 10.0, &cfg, None).unwrap();
            for (t, s) in tr.times.iter().zip(&tr.states) {
                let v = s.sites()[3];
                assert!((v.sx - x0 * (-t / 2.0).exp()).abs() < 1e-8, "{cfg:?} t={t}");
                assert!((v.sz - (-1.0 + (z0 + 1.0) * (-t).exp())).abs() < 1e-8);
                assert_eq!(v.sy, 0.0);
            }
        }
    }

    #[test]
    fn samples_are_uniform() {
        let g = geom();
        let s0 = build_initial_state(&InitialStateSpec::EquatorPhase, &g).unwrap();
        let tr = integrate(&s0, &CouplingParams::new(5.0, 1.1, 1.0), &g, 3.0, &IntegratorConfig::default(), None)
            .unwrap();
        assert_eq!(tr.len(), 31);
        for (k, t) in tr.times.iter().enumerate() {
            assert_eq!(*t, k as f64 * 0.1);
        }
        assert_eq!(tr.window_indices(1.0, 2.0), 10..21);
    }

    #[test]
    fn config_validation() {
        let g = geom();
        let s0 = ClusterState::paramagnet(&g);
        let p = CouplingParams::new(1.0, 1.0, 1.0);
        let bad = IntegratorConfig { dt: 0.03, ..IntegratorConfig::default() };
        assert!(integrate(&s0, &p, &g, 1.0, &bad, None).is_err());
        assert!(integrate(&s0, &p, &g, -1.0, &IntegratorConfig::default(), None).is_err());
        assert!(integrate(&s0, &p.with_gamma(0.0), &g, 1.0, &IntegratorConfig::default(), None).is_err());
    }

    #[test]
    fn blowup_is_reported_with_time() {
        // huge couplings with a coarse step make RK4 diverge
        let g = geom();
        let s0 = build_initial_state(&InitialStateSpec::EquatorPhase, &g).unwrap();
        let cfg = IntegratorConfig { dt: 0.5, sample_dt: 0.5, ..IntegratorConfig::default() };
        let err = integrate(&s0, &CouplingParams::new(1e3, -1e3, 1e3), &g, 500.0, &cfg, None).unwrap_err();
        match err {
            Error::NumericalBlowup { time, .. } => assert!(time > 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_header_and_rows() {
        let g = ClusterGeometry::new(1, 2).unwrap();
        let s0 = ClusterState::paramagnet(&g);
        let cfg = IntegratorConfig { sample_dt: 0.5, ..IntegratorConfig::default() };
        let tr = integrate(&s0, &CouplingParams::new(1.0, 1.0, 1.0), &g, 0.5, &cfg, None).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "t,site,sx,sy,sz\n0,1,0,0,-1\n0,2,0,0,-1\n0.5,1,0,0,-1\n0.5,2,0,0,-1\n");
    }
}
