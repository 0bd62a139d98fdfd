//! Periodic cluster geometry, Bloch vectors and initial-state families.
//!
//! Sites are stored row-major and indexed from 0 internally; user-facing
//! labels (`n` in `1..=rows*cols`) are 1-based. Neighbors outside the cluster
//! are the translated copies of in-cluster sites, i.e. the cluster is a torus.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lattice dimension. Each site has `2 * DIMENSION` neighbor entries.
pub const DIMENSION: usize = 2;
pub const COORDINATION: usize = 2 * DIMENSION;

const SPINOR_NORM_TOL: f64 = 1e-9;
const AMPLITUDE_NORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterGeometry {
    rows: usize,
    cols: usize,
    neighbors: Vec<[usize; COORDINATION]>,
}

impl ClusterGeometry {
    /// Torus adjacency on a `rows x cols` cluster. Small tori repeat neighbors,
    /// e.g. the 1x1 cluster lists its only site four times.
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!(
                "cluster dimensions must be positive, got {rows}x{cols}"
            )));
        }
        let idx = |r: usize, c: usize| r * cols + c;
        let mut neighbors = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                neighbors.push([
                    idx((r + rows - 1) % rows, c),
                    idx((r + 1) % rows, c),
                    idx(r, (c + cols - 1) % cols),
                    idx(r, (c + 1) % cols),
                ]);
            }
        }
        Ok(Self { rows, cols, neighbors })
    }

    /// The 3x3 cluster used throughout.
    pub fn standard() -> Self {
        Self::new(3, 3).expect("3x3 is a valid cluster")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dimension(&self) -> usize {
        DIMENSION
    }

    pub fn num_sites(&self) -> usize {
        self.rows * self.cols
    }

    pub fn neighbors(&self, site: usize) -> &[usize; COORDINATION] {
        &self.neighbors[site]
    }

    pub fn row_col(&self, site: usize) -> (usize, usize) {
        (site / self.cols, site % self.cols)
    }

    /// Whether the cluster can host spatially modulated phases: more than two
    /// sites along at least one direction.
    pub fn supports_modulation(&self) -> bool {
        self.rows >= 3 || self.cols >= 3
    }
}

/// Single-site Pauli expectation values `(<σx>, <σy>, <σz>)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BlochVector {
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
}

impl BlochVector {
    pub const DOWN: BlochVector = BlochVector { sx: 0.0, sy: 0.0, sz: -1.0 };
    pub const ZERO: BlochVector = BlochVector { sx: 0.0, sy: 0.0, sz: 0.0 };

    pub const fn new(sx: f64, sy: f64, sz: f64) -> Self {
        Self { sx, sy, sz }
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.sx, self.sy, self.sz]
    }

    pub fn norm_sqr(self) -> f64 {
        self.sx * self.sx + self.sy * self.sy + self.sz * self.sz
    }

    pub fn norm(self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn max_abs(self) -> f64 {
        self.sx.abs().max(self.sy.abs()).max(self.sz.abs())
    }

    pub fn is_finite(self) -> bool {
        self.sx.is_finite() && self.sy.is_finite() && self.sz.is_finite()
    }

    pub fn in_ball(self, tol: f64) -> bool {
        self.norm_sqr() <= 1.0 + tol
    }
}

impl Add for BlochVector {
    type Output = BlochVector;
    fn add(self, o: BlochVector) -> BlochVector {
        BlochVector::new(self.sx + o.sx, self.sy + o.sy, self.sz + o.sz)
    }
}

impl Sub for BlochVector {
    type Output = BlochVector;
    fn sub(self, o: BlochVector) -> BlochVector {
        BlochVector::new(self.sx - o.sx, self.sy - o.sy, self.sz - o.sz)
    }
}

impl Mul<BlochVector> for f64 {
    type Output = BlochVector;
    fn mul(self, v: BlochVector) -> BlochVector {
        BlochVector::new(self * v.sx, self * v.sy, self * v.sz)
    }
}

/// Pure spin-1/2 state `a|↑> + b|↓>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spinor {
    pub up: Complex64,
    pub down: Complex64,
}

impl Spinor {
    pub fn new(up: Complex64, down: Complex64) -> Self {
        Self { up, down }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.up.norm_sqr() + self.down.norm_sqr()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm_sqr().sqrt();
        Self::new(self.up / n, self.down / n)
    }

    /// Spinor pointing along the direction of `v` (any global phase). The
    /// zero vector maps to the north pole.
    pub fn along(v: BlochVector) -> Self {
        let r = v.norm();
        if r == 0.0 {
            return Self::new(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
        }
        let cos_theta = (v.sz / r).clamp(-1.0, 1.0);
        let half = 0.5 * cos_theta.acos();
        let phi = v.sy.atan2(v.sx);
        Self::new(
            Complex64::new(half.cos(), 0.0),
            Complex64::from_polar(half.sin(), phi),
        )
    }

    /// Bloch image without a normalization check.
    pub fn to_bloch(&self) -> BlochVector {
        let c = self.up.conj() * self.down;
        BlochVector::new(
            2.0 * c.re,
            2.0 * c.im,
            self.up.norm_sqr() - self.down.norm_sqr(),
        )
    }
}

/// Maps the normalized spinor `a|↑> + b|↓>` to its Bloch vector:
/// `sx = 2 Re(a* b)`, `sy = 2 Im(a* b)`, `sz = |a|² - |b|²`.
pub fn spinor_to_bloch(a: Complex64, b: Complex64) -> Result<BlochVector> {
    let s = Spinor::new(a, b);
    let n = s.norm_sqr();
    if !n.is_finite() || (n - 1.0).abs() > SPINOR_NORM_TOL {
        return Err(Error::invalid(format!(
            "spinor is not normalized: |a|^2 + |b|^2 = {n}"
        )));
    }
    Ok(s.to_bloch())
}

/// Mean-field state of one cluster: one Bloch vector per site, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterState(Vec<BlochVector>);

impl ClusterState {
    pub fn new(sites: Vec<BlochVector>) -> Self {
        Self(sites)
    }

    pub fn uniform(v: BlochVector, geom: &ClusterGeometry) -> Self {
        Self(vec![v; geom.num_sites()])
    }

    /// All spins down.
    pub fn paramagnet(geom: &ClusterGeometry) -> Self {
        Self::uniform(BlochVector::DOWN, geom)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sites(&self) -> &[BlochVector] {
        &self.0
    }

    pub fn sites_mut(&mut self) -> &mut [BlochVector] {
        &mut self.0
    }

    pub fn into_sites(self) -> Vec<BlochVector> {
        self.0
    }

    /// Flat site-major `(x, y, z)` layout, the ordering used for Jacobians.
    pub fn to_flat(&self) -> Vec<f64> {
        self.0.iter().flat_map(|v| v.to_array()).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 3 != 0 {
            return Err(Error::invalid(format!(
                "flat state length {} is not a multiple of 3",
                flat.len()
            )));
        }
        Ok(Self(
            flat.chunks_exact(3)
                .map(|c| BlochVector::new(c[0], c[1], c[2]))
                .collect(),
        ))
    }

    /// Cluster average of each Pauli component.
    pub fn mean(&self) -> BlochVector {
        let n = self.0.len() as f64;
        let s = self.0.iter().fold(BlochVector::ZERO, |acc, &v| acc + v);
        (1.0 / n) * s
    }

    pub fn max_norm_sqr(&self) -> f64 {
        self.0.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max)
    }

    pub fn check_size(&self, geom: &ClusterGeometry) -> Result<()> {
        if self.len() != geom.num_sites() {
            return Err(Error::invalid(format!(
                "state has {} sites but the cluster has {}",
                self.len(),
                geom.num_sites()
            )));
        }
        Ok(())
    }

    /// Largest component-wise deviation from `other`.
    pub fn max_abs_diff(&self, other: &ClusterState) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (*a - *b).max_abs())
            .fold(0.0, f64::max)
    }
}

/// How the cluster is initialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialStateSpec {
    /// `(|↑> + e^{inπ/9}|↓>)/√2` on site `n` (1-based).
    EquatorPhase,
    /// `(|↑> + √99 e^{i(row+col)π/3}|↓>)/10`.
    RowColPhase,
    Uniform { sx: f64, sy: f64, sz: f64 },
    Explicit { sites: Vec<[f64; 3]> },
}

impl Default for InitialStateSpec {
    fn default() -> Self {
        InitialStateSpec::EquatorPhase
    }
}

impl InitialStateSpec {
    pub fn uniform(v: BlochVector) -> Self {
        InitialStateSpec::Uniform { sx: v.sx, sy: v.sy, sz: v.sz }
    }

    /// Per-site spinors together with the Bloch radius of each site. Mixed
    /// (interior) Bloch vectors are represented by the spinor along their
    /// direction and the radius to scale back by.
    pub fn spinors(&self, geom: &ClusterGeometry) -> Result<Vec<(Spinor, f64)>> {
        let n_sites = geom.num_sites();
        match self {
            InitialStateSpec::EquatorPhase => {
                let amp = std::f64::consts::FRAC_1_SQRT_2;
                Ok((0..n_sites)
                    .map(|i| {
                        let phase = (i + 1) as f64 * PI / 9.0;
                        let s = Spinor::new(
                            Complex64::new(amp, 0.0),
                            Complex64::from_polar(amp, phase),
                        );
                        (s, 1.0)
                    })
                    .collect())
            }
            InitialStateSpec::RowColPhase => {
                let a = 0.1;
                let b = 99f64.sqrt() / 10.0;
                debug_assert!((a * a + b * b - 1.0).abs() < AMPLITUDE_NORM_TOL);
                Ok((0..n_sites)
                    .map(|i| {
                        let (r, c) = geom.row_col(i);
                        let phase = (r + c) as f64 * PI / 3.0;
                        let s = Spinor::new(Complex64::new(a, 0.0), Complex64::from_polar(b, phase));
                        (s, 1.0)
                    })
                    .collect())
            }
            InitialStateSpec::Uniform { .. } | InitialStateSpec::Explicit { .. } => Ok(self
                .bloch_sites(geom)?
                .into_iter()
                .map(|v| (Spinor::along(v), v.norm()))
                .collect()),
        }
    }

    fn bloch_sites(&self, geom: &ClusterGeometry) -> Result<Vec<BlochVector>> {
        let sites = match self {
            InitialStateSpec::Uniform { sx, sy, sz } => {
                vec![BlochVector::new(*sx, *sy, *sz); geom.num_sites()]
            }
            InitialStateSpec::Explicit { sites } => {
                if sites.len() != geom.num_sites() {
                    return Err(Error::invalid(format!(
                        "explicit initial state lists {} sites, cluster has {}",
                        sites.len(),
                        geom.num_sites()
                    )));
                }
                sites.iter().map(|&v| BlochVector::from_array(v)).collect()
            }
            _ => unreachable!("only called for Bloch-valued specs"),
        };
        for (i, v) in sites.iter().enumerate() {
            if !v.is_finite() || !v.in_ball(1e-12) {
                return Err(Error::invalid(format!(
                    "initial Bloch vector at site {} lies outside the unit ball: {:?}",
                    i + 1,
                    v
                )));
            }
        }
        Ok(sites)
    }
}

pub fn build_initial_state(spec: &InitialStateSpec, geom: &ClusterGeometry) -> Result<ClusterState> {
    match spec {
        InitialStateSpec::EquatorPhase | InitialStateSpec::RowColPhase => {
            let sites = spec
                .spinors(geom)?
                .into_iter()
                .map(|(s, _)| spinor_to_bloch(s.up, s.down))
                .collect::<Result<Vec<_>>>()?;
            Ok(ClusterState::new(sites))
        }
        _ => Ok(ClusterState::new(spec.bloch_sites(geom)?)),
    }
}
