//! Seeded coupling-noise schedules.
//!
//! A schedule holds one offset per hold interval `dt_noise` over its window
//! `[t_start, t_end)` and is zero outside it. By default a single scalar
//! realization is added to all three couplings; `per_axis` draws three
//! independent channels instead.
//!
//! White noise: i.i.d. normal samples with standard deviation `beta` per hold
//! interval, drawn in time order (time-major, axis-minor when `per_axis`).
//!
//! Pink noise: spectral synthesis over the whole window. For `M` samples,
//! bins `k = 1..=M/2` get amplitude `k^{-1/2}` and phase `2π u_k` (one uniform
//! per bin, channel by channel); the hermitian spectrum is inverse-transformed,
//! the mean removed and the result rescaled to standard deviation `beta`.

use std::io::{BufRead, Write};

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dynamics::integer_ratio;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub const DEFAULT_NOISE_DT: f64 = 0.01;
pub const MIN_PINK_SAMPLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    Pink,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub beta: f64,
    #[serde(default = "default_noise_dt")]
    pub dt_noise: f64,
    #[serde(default)]
    pub seed: u64,
    pub t_start: f64,
    pub t_end: f64,
    #[serde(default)]
    pub per_axis: bool,
}

fn default_noise_dt() -> f64 {
    DEFAULT_NOISE_DT
}

impl NoiseSpec {
    pub fn white(beta: f64, t_start: f64, t_end: f64, seed: u64) -> Self {
        Self { kind: NoiseKind::White, beta, dt_noise: DEFAULT_NOISE_DT, seed, t_start, t_end, per_axis: false }
    }

    pub fn pink(beta: f64, t_start: f64, t_end: f64, seed: u64) -> Self {
        Self { kind: NoiseKind::Pink, ..Self::white(beta, t_start, t_end, seed) }
    }

    fn sample_count(&self) -> Result<usize> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("noise beta must be >= 0, got {}", self.beta)));
        }
        if !(self.dt_noise > 0.0 && self.dt_noise.is_finite()) {
            return Err(Error::invalid(format!("dt_noise must be positive, got {}", self.dt_noise)));
        }
        if !(self.t_start < self.t_end) {
            return Err(Error::invalid(format!(
                "noise window [{}, {}] is empty",
                self.t_start, self.t_end
            )));
        }
        integer_ratio(self.t_end - self.t_start, self.dt_noise).ok_or_else(|| {
            Error::invalid(format!(
                "noise window length {} is not a multiple of dt_noise {}",
                self.t_end - self.t_start,
                self.dt_noise
            ))
        })
    }

    pub fn generate(&self) -> Result<NoiseSchedule> {
        match self.kind {
            NoiseKind::White => white_noise_schedule(self),
            NoiseKind::Pink => pink_noise_schedule(self),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    t_start: f64,
    dt_noise: f64,
    offsets: Vec<[f64; 3]>,
    shared: bool,
}

impl NoiseSchedule {
    pub fn new(t_start: f64, dt_noise: f64, offsets: Vec<[f64; 3]>, shared: bool) -> Result<Self> {
        if !(dt_noise > 0.0) {
            return Err(Error::invalid("dt_noise must be positive"));
        }
        if shared && offsets.iter().any(|o| o[0] != o[1] || o[1] != o[2]) {
            return Err(Error::invalid("shared schedule has differing per-axis offsets"));
        }
        Ok(Self { t_start, dt_noise, offsets, shared })
    }

    pub fn zeros(t_start: f64, t_end: f64, dt_noise: f64) -> Result<Self> {
        let n = integer_ratio(t_end - t_start, dt_noise)
            .ok_or_else(|| Error::invalid("zero schedule window is not a multiple of dt_noise"))?;
        Self::new(t_start, dt_noise, vec![[0.0; 3]; n], true)
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.offsets.len())
    }

    pub fn dt_noise(&self) -> f64 {
        self.dt_noise
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn is_shared(&self) -> bool {
        self.shared
    }

    pub fn offsets(&self) -> &[[f64; 3]] {
        &self.offsets
    }

    /// The scalar realization of a shared schedule (x channel otherwise).
    pub fn scalar_offsets(&self) -> Vec<f64> {
        self.offsets.iter().map(|o| o[0]).collect()
    }

    /// Start time of hold interval `i`.
    pub fn time(&self, i: usize) -> f64 {
        self.t_start + i as f64 * self.dt_noise
    }

    /// Offsets held at time `t`; zero outside the window.
    pub fn offset_at(&self, t: f64) -> [f64; 3] {
        if t < self.t_start {
            return [0.0; 3];
        }
        let i = ((t - self.t_start) / self.dt_noise).floor() as usize;
        self.offsets.get(i).copied().unwrap_or([0.0; 3])
    }

    /// Joins contiguous schedules sharing the same hold interval.
    pub fn concat(parts: &[NoiseSchedule]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::invalid("no schedules to join"))?;
        let mut offsets = Vec::new();
        let mut shared = true;
        let mut expected_start = first.t_start;
        for p in parts {
            if (p.dt_noise - first.dt_noise).abs() > 1e-12 * first.dt_noise {
                return Err(Error::invalid("schedules use different dt_noise"));
            }
            if (p.t_start - expected_start).abs() > 1e-9 * first.dt_noise.max(expected_start.abs()) {
                return Err(Error::invalid(format!(
                    "schedule starting at {} does not continue from {}",
                    p.t_start, expected_start
                )));
            }
            offsets.extend_from_slice(&p.offsets);
            shared &= p.shared;
            expected_start = first.t_start + offsets.len() as f64 * first.dt_noise;
        }
        Ok(Self { t_start: first.t_start, dt_noise: first.dt_noise, offsets, shared })
    }

    /// CSV `t,offset` for shared schedules, `t,offset_x,offset_y,offset_z`
    /// otherwise. Values use shortest round-trip formatting.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        if self.shared {
            writeln!(w, "t,offset")?;
            for (i, o) in self.offsets.iter().enumerate() {
                writeln!(w, "{},{}", self.time(i), o[0])?;
            }
        } else {
            writeln!(w, "t,offset_x,offset_y,offset_z")?;
            for (i, o) in self.offsets.iter().enumerate() {
                writeln!(w, "{},{},{},{}", self.time(i), o[0], o[1], o[2])?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty noise CSV".into()))??;
        let shared = match header.trim_end() {
            "t,offset" => true,
            "t,offset_x,offset_y,offset_z" => false,
            other => return Err(Error::Parse(format!("unexpected noise CSV header {other:?}"))),
        };
        let mut times = Vec::new();
        let mut offsets = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields = line
                .split(',')
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 2)))?;
            match (shared, fields.as_slice()) {
                (true, [t, o]) => {
                    times.push(*t);
                    offsets.push([*o; 3]);
                }
                (false, [t, x, y, z]) => {
                    times.push(*t);
                    offsets.push([*x, *y, *z]);
                }
                _ => return Err(Error::Parse(format!("line {}: wrong field count", lineno + 2))),
            }
        }
        if times.len() < 2 {
            return Err(Error::Parse("noise CSV needs at least two rows".into()));
        }
        let t0 = times[0];
        let n = times.len() - 1;
        let span = (times[n] - t0) / n as f64;
        let rounded: f64 = format!("{span:.12e}").parse().unwrap_or(span);
        let dt = [rounded, span, times[1] - t0]
            .into_iter()
            .find(|&dt| times.iter().enumerate().all(|(i, &t)| t0 + i as f64 * dt == t))
            .ok_or_else(|| Error::Parse("noise CSV times are not uniformly spaced".into()))?;
        Self::new(t0, dt, offsets, shared)
    }
}

pub fn white_noise_schedule(spec: &NoiseSpec) -> Result<NoiseSchedule> {
    if spec.kind != NoiseKind::White {
        return Err(Error::invalid("white_noise_schedule called with a non-white spec"));
    }
    let n = spec.sample_count()?;
    let mut rng = SeededRng::new(spec.seed);
    let offsets = (0..n)
        .map(|_| {
            if spec.per_axis {
                [spec.beta * rng.gaussian(), spec.beta * rng.gaussian(), spec.beta * rng.gaussian()]
            } else {
                [spec.beta * rng.gaussian(); 3]
            }
        })
        .collect();
    NoiseSchedule::new(spec.t_start, spec.dt_noise, offsets, !spec.per_axis)
}

pub fn pink_noise_schedule(spec: &NoiseSpec) -> Result<NoiseSchedule> {
    if spec.kind != NoiseKind::Pink {
        return Err(Error::invalid("pink_noise_schedule called with a non-pink spec"));
    }
    let n = spec.sample_count()?;
    if n < MIN_PINK_SAMPLES {
        return Err(Error::invalid(format!(
            "pink noise needs at least {MIN_PINK_SAMPLES} noise steps, window has {n}"
        )));
    }
    let mut rng = SeededRng::new(spec.seed);
    let channels = if spec.per_axis { 3 } else { 1 };
    let series: Vec<Vec<f64>> = (0..channels).map(|_| pink_series(n, spec.beta, &mut rng)).collect();
    let offsets = (0..n)
        .map(|i| if spec.per_axis { [series[0][i], series[1][i], series[2][i]] } else { [series[0][i]; 3] })
        .collect();
    NoiseSchedule::new(spec.t_start, spec.dt_noise, offsets, !spec.per_axis)
}

fn pink_series(n: usize, beta: f64, rng: &mut SeededRng) -> Vec<f64> {
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
    for k in 1..=n / 2 {
        let amp = (k as f64).powf(-0.5);
        let phase = std::f64::consts::TAU * rng.uniform();
        if 2 * k == n {
            spectrum[k] = Complex64::new(amp * phase.cos(), 0.0);
        } else {
            let z = Complex64::from_polar(amp, phase);
            spectrum[k] = z;
            spectrum[n - k] = z.conj();
        }
    }
    if beta == 0.0 {
        return vec![0.0; n];
    }
    FftPlanner::<f64>::new().plan_fft_inverse(n).process(&mut spectrum);
    let mut x: Vec<f64> = spectrum.iter().map(|c| c.re).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    x.iter_mut().for_each(|v| *v -= mean);
    let sd = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    x.iter_mut().for_each(|v| *v *= beta / sd);
    x
}
