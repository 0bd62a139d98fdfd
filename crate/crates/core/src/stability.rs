//! Fixed points, Jacobians and linear stability of the Bloch equations.
//!
//! Perturbations are 3N-vectors of Bloch-component deviations in site-major
//! order (`x, y, z` within each site), the same layout as
//! [`ClusterState::to_flat`].

use std::cmp::Ordering;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    bloch_rhs_into, integrate, residual_max_norm, CouplingAxis, CouplingParams, IntegratorConfig,
    COUPLING_DIVISOR,
};
use crate::error::{Error, Result};
use crate::lattice::{build_initial_state, BlochVector, ClusterGeometry, ClusterState, InitialStateSpec};

pub const DEFAULT_NEWTON_TOL: f64 = 1e-12;
pub const DEFAULT_NEWTON_MAX_ITER: usize = 60;
const MAX_HALVINGS: usize = 30;
const CONJUGATE_TOL: f64 = 1e-8;
const SCHUR_EPS: f64 = 1e-15;
const SCHUR_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub state: ClusterState,
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Dense Jacobian of the Bloch equations, `3N x 3N`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMatrix(pub DMatrix<f64>);

impl JacobianMatrix {
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    /// Sorted by descending real part, ties by descending imaginary part.
    pub eigenvalues: Vec<Complex64>,
    pub leading_real: f64,
    /// `λ1` and `λ2` form a complex-conjugate pair.
    pub leading_imag_pair: bool,
}

impl StabilityReport {
    pub fn leading(&self) -> Complex64 {
        self.eigenvalues[0]
    }

    pub fn second(&self) -> Complex64 {
        self.eigenvalues.get(1).copied().unwrap_or(Complex64::new(f64::NAN, f64::NAN))
    }

    pub fn is_stable(&self) -> bool {
        self.leading_real < 0.0
    }
}

/// Exact partial derivatives of the right-hand side at `point`.
pub fn analytic_jacobian(
    point: &ClusterState,
    params: &CouplingParams,
    geom: &ClusterGeometry,
) -> Result<JacobianMatrix> {
    point.check_size(geom)?;
    let n = point.len();
    let v = point.sites();
    let g = params.gamma;
    let (jx, jy, jz) = (params.jx / COUPLING_DIVISOR, params.jy / COUPLING_DIVISOR, params.jz / COUPLING_DIVISOR);
    let mut m = DMatrix::<f64>::zeros(3 * n, 3 * n);
    for site in 0..n {
        let BlochVector { sx: x, sy: y, sz: z } = v[site];
        let mut s = BlochVector::ZERO;
        for &k in geom.neighbors(site) {
            s = s + v[k];
        }
        let (rx, ry, rz) = (3 * site, 3 * site + 1, 3 * site + 2);
        // own-site components
        m[(rx, rx)] += -0.5 * g;
        m[(rx, ry)] += -jz * s.sz;
        m[(rx, rz)] += jy * s.sy;
        m[(ry, rx)] += jz * s.sz;
        m[(ry, ry)] += -0.5 * g;
        m[(ry, rz)] += -jx * s.sx;
        m[(rz, rx)] += -jy * s.sy;
        m[(rz, ry)] += jx * s.sx;
        m[(rz, rz)] += -g;
        // neighbor components, once per multiset entry
        for &k in geom.neighbors(site) {
            let (cx, cy, cz) = (3 * k, 3 * k + 1, 3 * k + 2);
            m[(rx, cy)] += jy * z;
            m[(rx, cz)] += -jz * y;
            m[(ry, cx)] += -jx * z;
            m[(ry, cz)] += jz * x;
            m[(rz, cx)] += jx * y;
            m[(rz, cy)] += -jy * x;
        }
    }
    Ok(JacobianMatrix(m))
}

fn rhs_flat(x: &[f64], params: &CouplingParams, geom: &ClusterGeometry, out: &mut [BlochVector]) -> DVector<f64> {
    let sites: Vec<BlochVector> = x.chunks_exact(3).map(|c| BlochVector::new(c[0], c[1], c[2])).collect();
    bloch_rhs_into(&sites, params, geom, out);
    DVector::from_iterator(3 * out.len(), out.iter().flat_map(|v| v.to_array()))
}

/// Damped Newton iteration on `f(x) = 0` from `guess`.
///
/// Steps are halved (up to 30 times) while the residual grows. A singular
/// Newton system falls back to a Cauchy-scaled gradient step on `|f|²/2`.
pub fn find_fixed_point(
    params: &CouplingParams,
    geom: &ClusterGeometry,
    guess: &ClusterState,
    max_iter: usize,
    tol: f64,
) -> Result<FixedPoint> {
    guess.check_size(geom)?;
    params.validate()?;
    if guess.sites().iter().any(|v| !v.is_finite() || !v.in_ball(1e-9)) {
        return Err(Error::invalid("fixed-point guess must lie inside the unit ball"));
    }
    let mut scratch = vec![BlochVector::ZERO; guess.len()];
    let mut x = DVector::from_vec(guess.to_flat());
    let mut f = rhs_flat(x.as_slice(), params, geom, &mut scratch);
    let mut res = f.amax();
    let mut iterations = 0;

    while res >= tol && iterations < max_iter {
        iterations += 1;
        let state = ClusterState::from_flat(x.as_slice())?;
        let jac = analytic_jacobian(&state, params, geom)?.0;
        let step = match jac.clone().lu().solve(&(-&f)) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => {
                let grad = jac.transpose() * &f;
                let jg = &jac * &grad;
                let denom = jg.norm_squared();
                if denom == 0.0 {
                    break;
                }
                -(grad.norm_squared() / denom) * grad
            }
        };
        let merit = f.norm_squared();
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let trial = &x + alpha * &step;
            let ft = rhs_flat(trial.as_slice(), params, geom, &mut scratch);
            if ft.iter().all(|v| v.is_finite()) && ft.norm_squared() < merit {
                x = trial;
                f = ft;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        res = f.amax();
    }

    Ok(FixedPoint {
        state: ClusterState::from_flat(x.as_slice())?,
        residual_norm: res,
        converged: res < tol,
        iterations,
    })
}

fn descending(a: &Complex64, b: &Complex64) -> Ordering {
    b.re.total_cmp(&a.re).then_with(|| b.im.total_cmp(&a.im))
}

/// Full spectrum of a dense real matrix (Hessenberg reduction + shifted QR
/// via the real Schur form).
pub fn eigenvalues_sorted(jac: &JacobianMatrix) -> Result<StabilityReport> {
    let m = &jac.0;
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::invalid(format!("matrix must be square, got {}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let schur = nalgebra::Schur::try_new(m.clone(), SCHUR_EPS, SCHUR_MAX_ITER).ok_or_else(|| {
        Error::EigenNonConvergence { dim: m.nrows(), max_abs: m.amax(), frobenius: m.norm() }
    })?;
    let mut eigenvalues: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
    eigenvalues.sort_by(descending);
    let leading_real = eigenvalues[0].re;
    let leading_imag_pair = eigenvalues.len() >= 2 && {
        let (a, b) = (eigenvalues[0], eigenvalues[1]);
        a.im.abs() > CONJUGATE_TOL * a.norm().max(1.0)
            && (a - b.conj()).norm() <= CONJUGATE_TOL * a.norm().max(1.0)
    };
    Ok(StabilityReport { eigenvalues, leading_real, leading_imag_pair })
}

/// Eigenvector for an eigenvalue estimate by complex inverse iteration.
pub fn eigenvector(jac: &JacobianMatrix, lambda: Complex64) -> Result<DVector<Complex64>> {
    let n = jac.dim();
    let scale = jac.0.amax().max(1.0);
    let shift = lambda + Complex64::new(1e-10 * scale, 1e-10 * scale);
    let a = DMatrix::<Complex64>::from_fn(n, n, |i, j| {
        Complex64::new(jac.0[(i, j)], 0.0) - if i == j { shift } else { Complex64::new(0.0, 0.0) }
    });
    let lu = a.lu();
    let mut v = DVector::<Complex64>::from_fn(n, |i, _| Complex64::new(1.0 + 0.1 * i as f64, 0.3));
    for _ in 0..4 {
        v = lu.solve(&v).ok_or_else(|| Error::NotFound("singular inverse-iteration system".into()))?;
        let nrm = v.norm();
        if !(nrm.is_finite() && nrm > 0.0) {
            return Err(Error::NotFound("inverse iteration diverged".into()));
        }
        v.unscale_mut(nrm);
    }
    Ok(v)
}

/// `‖J v − λ v‖` for a normalized `v`.
pub fn eigen_residual(jac: &JacobianMatrix, lambda: Complex64, v: &DVector<Complex64>) -> f64 {
    let jc = jac.0.map(|x| Complex64::new(x, 0.0));
    (jc * v - v * lambda).norm()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    /// State relaxed at the first grid value to seed the continuation.
    pub initial_state: InitialStateSpec,
    pub relax_time: f64,
    pub integrator: IntegratorConfig,
    pub newton_max_iter: usize,
    pub newton_tol: f64,
    /// Crossing locations are refined until the bracket is this narrow.
    pub bisection_tol: f64,
    /// Grid values with `|Re λ1|` below this carry no sign (e.g. the zero
    /// mode at symmetric couplings).
    pub zero_tol: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            initial_state: InitialStateSpec::RowColPhase,
            relax_time: 1000.0,
            integrator: IntegratorConfig::default(),
            newton_max_iter: DEFAULT_NEWTON_MAX_ITER,
            newton_tol: DEFAULT_NEWTON_TOL,
            bisection_tol: 1e-4,
            zero_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanPoint {
    pub value: f64,
    pub converged: bool,
    pub lambda1: Complex64,
    pub lambda2: Complex64,
    pub conjugate_pair: bool,
    pub fixed_point: ClusterState,
    pub residual_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub location: f64,
    /// `true` when `Re λ1` goes from negative to positive with increasing value.
    pub destabilizing: bool,
    pub imag_at_crossing: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityScan {
    pub axis: CouplingAxis,
    pub points: Vec<ScanPoint>,
    pub crossings: Vec<Crossing>,
    /// Value ranges where Newton lost the branch.
    pub gaps: Vec<(f64, f64)>,
}

impl StabilityScan {
    pub fn crossing_locations(&self) -> Vec<f64> {
        self.crossings.iter().map(|c| c.location).collect()
    }

    /// CSV `axis_value,re_l1,im_l1,re_l2,im_l2,converged`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "axis_value,re_l1,im_l1,re_l2,im_l2,converged")?;
        for p in &self.points {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                p.value, p.lambda1.re, p.lambda1.im, p.lambda2.re, p.lambda2.im, p.converged
            )?;
        }
        Ok(())
    }
}

fn grid(range: (f64, f64), steps: usize) -> Vec<f64> {
    let (lo, hi) = range;
    (0..=steps).map(|i| lo + (hi - lo) * i as f64 / steps as f64).collect()
}

struct Tracker<'a> {
    base: CouplingParams,
    axis: CouplingAxis,
    geom: &'a ClusterGeometry,
    cfg: &'a ScanConfig,
}

impl Tracker<'_> {
    fn solve(&self, value: f64, guess: &ClusterState) -> Result<ScanPoint> {
        let p = self.base.with(self.axis, value);
        let fp = find_fixed_point(&p, self.geom, guess, self.cfg.newton_max_iter, self.cfg.newton_tol)?;
        let nan = Complex64::new(f64::NAN, f64::NAN);
        let (lambda1, lambda2, conjugate_pair) = if fp.converged {
            let rep = eigenvalues_sorted(&analytic_jacobian(&fp.state, &p, self.geom)?)?;
            (rep.leading(), rep.second(), rep.leading_imag_pair)
        } else {
            (nan, nan, false)
        };
        Ok(ScanPoint {
            value,
            converged: fp.converged,
            lambda1,
            lambda2,
            conjugate_pair,
            fixed_point: fp.state,
            residual_norm: fp.residual_norm,
        })
    }

    fn relaxed_seed(&self, value: f64) -> Result<ClusterState> {
        let p = self.base.with(self.axis, value);
        let s0 = build_initial_state(&self.cfg.initial_state, self.geom)?;
        let tr = integrate(&s0, &p, self.geom, self.cfg.relax_time, &self.cfg.integrator, None)?;
        Ok(clamp_to_ball(tr.final_state().clone()))
    }

    /// Continuation over `values`, each solve seeded by the last converged one.
    fn track(&self, values: &[f64], seed: ClusterState) -> Result<Vec<ScanPoint>> {
        let mut guess = seed;
        let mut out = Vec::with_capacity(values.len());
        for &v in values {
            let pt = self.solve(v, &guess)?;
            if pt.converged {
                guess = clamp_to_ball(pt.fixed_point.clone());
            }
            out.push(pt);
        }
        Ok(out)
    }

    fn refine(&self, a: &ScanPoint, b: &ScanPoint) -> Result<Crossing> {
        let (mut lo, mut hi) = (a.clone(), b.clone());
        let sign_lo = lo.lambda1.re > 0.0;
        while (hi.value - lo.value).abs() > self.cfg.bisection_tol {
            let mid_v = 0.5 * (lo.value + hi.value);
            let mid = self.solve(mid_v, &clamp_to_ball(lo.fixed_point.clone()))?;
            if !mid.converged {
                break;
            }
            if (mid.lambda1.re > 0.0) == sign_lo {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let location = 0.5 * (lo.value + hi.value);
        let ascending = hi.value > lo.value;
        Ok(Crossing {
            location,
            destabilizing: (!sign_lo) == ascending,
            imag_at_crossing: 0.5 * (lo.lambda1.im.abs() + hi.lambda1.im.abs()),
        })
    }

    fn finish(&self, points: Vec<ScanPoint>) -> Result<StabilityScan> {
        let mut gaps = Vec::new();
        let mut gap_start: Option<f64> = None;
        for p in &points {
            match (p.converged, gap_start) {
                (false, None) => gap_start = Some(p.value),
                (true, Some(s)) => {
                    gaps.push((s, p.value));
                    gap_start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = gap_start {
            gaps.push((s, points.last().map_or(s, |p| p.value)));
        }

        let signed: Vec<&ScanPoint> = points
            .iter()
            .filter(|p| p.converged && p.lambda1.re.abs() > self.cfg.zero_tol)
            .collect();
        let brackets: Vec<(&ScanPoint, &ScanPoint)> = signed
            .windows(2)
            .filter(|w| (w[0].lambda1.re > 0.0) != (w[1].lambda1.re > 0.0))
            .map(|w| (w[0], w[1]))
            .collect();
        let crossings = brackets
            .par_iter()
            .map(|(a, b)| self.refine(a, b))
            .collect::<Result<Vec<_>>>()?;
        Ok(StabilityScan { axis: self.axis, points, crossings, gaps })
    }
}

fn clamp_to_ball(mut s: ClusterState) -> ClusterState {
    for v in s.sites_mut() {
        let n = v.norm();
        if n > 1.0 {
            *v = (1.0 / n) * *v;
        }
    }
    s
}

/// Scans `axis` over `range` in `steps` intervals, tracking one fixed-point
/// branch by continuation, and returns the sign changes of `Re λ1` refined by
/// bisection.
pub fn scan_stability_boundary(
    params_base: &CouplingParams,
    geom: &ClusterGeometry,
    axis: CouplingAxis,
    range: (f64, f64),
    steps: usize,
    cfg: &ScanConfig,
) -> Result<StabilityScan> {
    validate_scan(range, steps)?;
    let tracker = Tracker { base: *params_base, axis, geom, cfg };
    let values = grid(range, steps);
    let seed = tracker.relaxed_seed(values[0])?;
    let points = tracker.track(&values, seed)?;
    tracker.finish(points)
}

/// Chunked variant of [`scan_stability_boundary`]: chunk seeds come from a
/// serial continuation over chunk heads, then chunks run concurrently and
/// are stitched in grid order.
pub fn scan_stability_boundary_chunked(
    params_base: &CouplingParams,
    geom: &ClusterGeometry,
    axis: CouplingAxis,
    range: (f64, f64),
    steps: usize,
    chunks: usize,
    cfg: &ScanConfig,
) -> Result<StabilityScan> {
    validate_scan(range, steps)?;
    let tracker = Tracker { base: *params_base, axis, geom, cfg };
    let values = grid(range, steps);
    let chunk_len = values.len().div_ceil(chunks.max(1));
    let heads: Vec<f64> = values.chunks(chunk_len).map(|c| c[0]).collect();
    let head_points = tracker.track(&heads, tracker.relaxed_seed(values[0])?)?;
    let mut seeds = Vec::with_capacity(heads.len());
    let mut last = tracker.relaxed_seed(values[0])?;
    for p in &head_points {
        if p.converged {
            last = clamp_to_ball(p.fixed_point.clone());
        }
        seeds.push(last.clone());
    }
    let parts = values
        .chunks(chunk_len)
        .zip(seeds)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(vals, seed)| tracker.track(vals, seed))
        .collect::<Result<Vec<_>>>()?;
    tracker.finish(parts.into_iter().flatten().collect())
}

fn validate_scan(range: (f64, f64), steps: usize) -> Result<()> {
    if !(range.0 < range.1) {
        return Err(Error::invalid(format!("scan range [{}, {}] is empty", range.0, range.1)));
    }
    if steps < 8 {
        return Err(Error::invalid(format!("scan needs at least 8 steps, got {steps}")));
    }
    Ok(())
}

/// Largest residual of the paramagnet: zero for every coupling set.
pub fn paramagnet_residual(params: &CouplingParams, geom: &ClusterGeometry) -> f64 {
    residual_max_norm(&ClusterState::paramagnet(geom), params, geom)
}
