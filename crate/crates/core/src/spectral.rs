//! Amplitude spectra, principal-frequency detection and crystalline fractions.
//!
//! A window of `M` samples at spacing `Δt` is mean-removed and transformed
//! without tapering or padding. Bin `k = 1..=M/2` carries the amplitude
//! `A_k = (2/M)|X_k|` (`1/M` at the Nyquist bin, so a pure tone of amplitude
//! `a` shows up as `a` in every bin), at frequency `k/(MΔt)` on the ordinary
//! axis or `2πk/(MΔt)` on the angular one.

use std::io::Write;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Component, Trajectory};
use crate::error::{Error, Result};

pub const MIN_WINDOW_SAMPLES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyAxis {
    /// `ω = 2πf`.
    Angular,
    /// `ω = f`, cycles per unit of `1/Γ`.
    #[default]
    Ordinary,
}

/// Axis used for every reported `ω`. The quiet limit cycle at
/// `(7, 1.5, 1)` peaks near 0.18 only on this axis.
pub const DEFAULT_AXIS: FrequencyAxis = FrequencyAxis::Ordinary;

impl FrequencyAxis {
    pub fn bin_width(self, m: usize, sample_dt: f64) -> f64 {
        let f = 1.0 / (m as f64 * sample_dt);
        match self {
            FrequencyAxis::Angular => std::f64::consts::TAU * f,
            FrequencyAxis::Ordinary => f,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub omega: Vec<f64>,
    pub amp: Vec<f64>,
    pub t_a: f64,
    pub t_b: f64,
    pub observable: String,
    pub axis: FrequencyAxis,
    pub sample_dt: f64,
    /// Window length in samples.
    pub samples: usize,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn bin_width(&self) -> f64 {
        self.axis.bin_width(self.samples, self.sample_dt)
    }

    /// Time-domain variance implied by the amplitudes.
    pub fn variance(&self) -> f64 {
        let nyquist = self.samples % 2 == 0;
        self.amp
            .iter()
            .enumerate()
            .map(|(i, a)| if nyquist && i + 1 == self.amp.len() { a * a } else { 0.5 * a * a })
            .sum()
    }

    pub fn same_grid(&self, other: &Spectrum) -> bool {
        self.axis == other.axis
            && self.samples == other.samples
            && self.sample_dt.to_bits() == other.sample_dt.to_bits()
    }

    /// Sum of amplitudes with `lo ≤ ω ≤ hi`.
    pub fn band_sum(&self, lo: f64, hi: f64) -> f64 {
        self.omega
            .iter()
            .zip(&self.amp)
            .filter(|(w, _)| **w >= lo && **w <= hi)
            .map(|(_, a)| a)
            .sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "omega,amp")?;
        for (o, a) in self.omega.iter().zip(&self.amp) {
            writeln!(w, "{o},{a}")?;
        }
        Ok(())
    }
}

/// Spectrum of `series` (sample `i` at time `i·sample_dt`) over the
/// half-open window `[t_a, t_b)`.
pub fn amplitude_spectrum(
    series: &[f64],
    sample_dt: f64,
    window: (f64, f64),
    axis: FrequencyAxis,
) -> Result<Spectrum> {
    let (t_a, t_b) = window;
    if !(sample_dt > 0.0) || !(t_a >= 0.0) || !(t_b > t_a) {
        return Err(Error::invalid(format!("bad spectral window [{t_a}, {t_b}) at dt={sample_dt}")));
    }
    let start = (t_a / sample_dt - 1e-9).ceil() as usize;
    let end = (t_b / sample_dt - 1e-9).ceil() as usize;
    if end > series.len() {
        return Err(Error::invalid(format!(
            "window end {t_b} lies past the series end {}",
            series.len() as f64 * sample_dt
        )));
    }
    let m = end - start;
    if m < MIN_WINDOW_SAMPLES {
        return Err(Error::invalid(format!("window holds {m} samples, need at least {MIN_WINDOW_SAMPLES}")));
    }
    let x = &series[start..end];
    let mean = x.iter().sum::<f64>() / m as f64;
    let mut buf: Vec<Complex64> = x.iter().map(|v| Complex64::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);

    let half = m / 2;
    let dw = axis.bin_width(m, sample_dt);
    let omega = (1..=half).map(|k| k as f64 * dw).collect();
    let amp = (1..=half)
        .map(|k| {
            let scale = if 2 * k == m { 1.0 } else { 2.0 };
            scale * buf[k].norm() / m as f64
        })
        .collect();
    Ok(Spectrum {
        omega,
        amp,
        t_a,
        t_b,
        observable: String::new(),
        axis,
        sample_dt,
        samples: m,
    })
}

/// Spectrum of the cluster-averaged component `c` of a trajectory.
pub fn trajectory_spectrum(
    traj: &Trajectory,
    c: Component,
    window: (f64, f64),
    axis: FrequencyAxis,
) -> Result<Spectrum> {
    let mut s = amplitude_spectrum(&traj.mean_series(c), traj.sample_dt, window, axis)?;
    s.observable = format!("mean_{}", c.name());
    Ok(s)
}

fn refine(s: &Spectrum, i: usize) -> (f64, f64) {
    if i == 0 || i + 1 >= s.len() {
        return (s.omega[i], s.amp[i]);
    }
    let (a, b, c) = (s.amp[i - 1], s.amp[i], s.amp[i + 1]);
    let denom = a - 2.0 * b + c;
    if denom >= 0.0 {
        return (s.omega[i], b);
    }
    let p = 0.5 * (a - c) / denom;
    (s.omega[i] + p * s.bin_width(), b - 0.25 * (a - c) * p)
}

/// Largest peak with `lo ≤ ω ≤ hi`, refined by a parabola through the
/// three surrounding bins. Returns `(ω, amplitude)`.
pub fn peak_in_band(s: &Spectrum, lo: f64, hi: f64) -> Result<(f64, f64)> {
    let best = s
        .omega
        .iter()
        .zip(&s.amp)
        .enumerate()
        .filter(|(_, (w, _))| **w >= lo && **w <= hi)
        .max_by(|(_, (_, a)), (_, (_, b))| a.total_cmp(b))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::NotFound(format!("no spectral bins in [{lo}, {hi}]")))?;
    Ok(refine(s, best))
}

pub fn dominant_peak(s: &Spectrum, omega_min: f64) -> Result<f64> {
    if omega_min < s.bin_width() * (1.0 - 1e-12) {
        return Err(Error::invalid(format!(
            "omega_min {omega_min} is below one bin ({})",
            s.bin_width()
        )));
    }
    peak_in_band(s, omega_min, f64::INFINITY).map(|(w, _)| w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    /// Principal frequency; taken from the quiet spectrum when absent.
    pub omega_p: Option<f64>,
    pub delta_omega: f64,
    #[serde(alias = "Delta_omega")]
    pub band_edge: f64,
    pub axis: FrequencyAxis,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self { omega_p: None, delta_omega: 0.08, band_edge: 0.6, axis: DEFAULT_AXIS }
    }
}

impl SpectralConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_omega > 0.0 && self.delta_omega < self.band_edge) {
            return Err(Error::invalid(format!(
                "need 0 < delta_omega < band_edge, got {} and {}",
                self.delta_omega, self.band_edge
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrystallineFraction {
    pub omega_quiet_p: f64,
    pub omega: f64,
    pub omega_rcf: f64,
}

pub fn crystalline_fraction(noisy: &Spectrum, quiet: &Spectrum, cfg: &SpectralConfig) -> Result<CrystallineFraction> {
    cfg.validate()?;
    if !noisy.same_grid(quiet) {
        return Err(Error::invalid(format!(
            "spectra on different grids: {} samples at dt={} vs {} samples at dt={}",
            noisy.samples, noisy.sample_dt, quiet.samples, quiet.sample_dt
        )));
    }
    let omega_p = match cfg.omega_p {
        Some(w) => w,
        None => dominant_peak(quiet, quiet.bin_width())?,
    };
    let denom = quiet.band_sum(0.0, cfg.band_edge);
    if !(denom > 0.0) {
        return Err(Error::NotFound("quiet spectrum carries no weight below the band edge".into()));
    }
    let (lo, hi) = (omega_p - cfg.delta_omega, omega_p + cfg.delta_omega);
    let omega = noisy.band_sum(lo, hi) / denom;
    let omega_quiet = quiet.band_sum(lo, hi) / denom;
    Ok(CrystallineFraction { omega_quiet_p: omega_p, omega, omega_rcf: omega / omega_quiet })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sampled(f: impl Fn(f64) -> f64, dt: f64, t_end: f64) -> Vec<f64> {
        let n = (t_end / dt).round() as usize;
        (0..n).map(|i| f(i as f64 * dt)).collect()
    }

    #[test]
    fn pure_tone_angular() {
        let x = sampled(|t| (0.18 * t).sin(), 0.1, 1200.0);
        let s = amplitude_spectrum(&x, 0.1, (0.0, 1200.0), FrequencyAxis::Angular).unwrap();
        assert_eq!(s.samples, 12000);
        let (i, _) = s.amp.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        assert!((s.omega[i] - 0.18).abs() <= s.bin_width());
        let x = sampled(|t| t.sin(), 0.1, 1200.0);
        let s = amplitude_spectrum(&x, 0.1, (0.0, 1200.0), FrequencyAxis::Angular).unwrap();
        let w = dominant_peak(&s, s.bin_width()).unwrap();
        assert!((w - 1.0).abs() <= 0.5 * s.bin_width());
    }

    #[test]
    fn ordinary_axis_is_angular_over_two_pi() {
        let x = sampled(|t| (0.7 * t).cos(), 0.1, 300.0);
        let a = amplitude_spectrum(&x, 0.1, (0.0, 300.0), FrequencyAxis::Angular).unwrap();
        let o = amplitude_spectrum(&x, 0.1, (0.0, 300.0), FrequencyAxis::Ordinary).unwrap();
        assert_eq!(a.amp, o.amp);
        for (wa, wo) in a.omega.iter().zip(&o.omega) {
            assert!((wa - std::f64::consts::TAU * wo).abs() < 1e-12);
        }
    }

    #[test]
    fn two_tone_amplitude_ratio() {
        // both tones sit exactly on bins so leakage vanishes
        let dt = 0.1;
        let t_end = 1200.0;
        let m = (t_end / dt) as usize;
        let dw = std::f64::consts::TAU / (m as f64 * dt);
        let (k1, k3) = ((0.18 / dw).round(), (0.54 / dw).round());
        let x = sampled(|t| (k1 * dw * t).sin() + 0.2 * (k3 * dw * t).sin(), dt, t_end);
        let s = amplitude_spectrum(&x, dt, (0.0, t_end), FrequencyAxis::Angular).unwrap();
        let a1 = s.amp[k1 as usize - 1];
        let a3 = s.amp[k3 as usize - 1];
        assert!((a1 - 1.0).abs() < 1e-9);
        assert!((a1 / a3 - 5.0).abs() < 0.25);
        let (w3, _) = peak_in_band(&s, 0.4, 0.7).unwrap();
        assert!((w3 - 0.54).abs() < dw);
    }

    #[test]
    fn constant_series_is_silent() {
        let x = vec![0.37; 500];
        let s = amplitude_spectrum(&x, 0.1, (0.0, 50.0), FrequencyAxis::Ordinary).unwrap();
        assert!(s.amp.iter().all(|a| a.abs() < 1e-15));
    }

    #[test]
    fn window_checks() {
        let x = vec![0.0; 100];
        assert!(amplitude_spectrum(&x, 0.1, (0.0, 5.0), DEFAULT_AXIS).is_err());
        assert!(amplitude_spectrum(&x, 0.1, (0.0, 20.0), DEFAULT_AXIS).is_err());
        assert!(amplitude_spectrum(&x, 0.1, (3.0, 2.0), DEFAULT_AXIS).is_err());
        let s = amplitude_spectrum(&x, 0.1, (2.0, 10.0), DEFAULT_AXIS).unwrap();
        assert_eq!(s.samples, 80);
        assert!(matches!(dominant_peak(&s, 100.0), Err(Error::NotFound(_))));
        assert!(dominant_peak(&s, 0.0).is_err());
    }

    #[test]
    fn nyquist_tone_keeps_its_amplitude() {
        let x: Vec<f64> = (0..128).map(|i| if i % 2 == 0 { 0.5 } else { -0.5 }).collect();
        let s = amplitude_spectrum(&x, 1.0, (0.0, 128.0), DEFAULT_AXIS).unwrap();
        assert!((s.amp[63] - 0.5).abs() < 1e-12);
        assert!((s.variance() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn self_fraction_is_one() {
        let x = sampled(|t| (0.18 * t).sin() + 0.1 * (0.9 * t).cos(), 0.1, 400.0);
        let s = amplitude_spectrum(&x, 0.1, (80.0, 200.0), FrequencyAxis::Angular).unwrap();
        let cf = crystalline_fraction(&s, &s, &SpectralConfig::default()).unwrap();
        assert_eq!(cf.omega_rcf, 1.0);
        assert!((cf.omega_quiet_p - 0.18).abs() < 0.01);
    }

    #[test]
    fn mismatched_grids_rejected() {
        let x = sampled(|t| (0.18 * t).sin(), 0.1, 400.0);
        let a = amplitude_spectrum(&x, 0.1, (80.0, 200.0), DEFAULT_AXIS).unwrap();
        let b = amplitude_spectrum(&x, 0.1, (80.0, 300.0), DEFAULT_AXIS).unwrap();
        assert!(matches!(crystalline_fraction(&a, &b, &SpectralConfig::default()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn csv_header() {
        let x = sampled(|t| t.sin(), 0.5, 64.0);
        let s = amplitude_spectrum(&x, 0.5, (0.0, 64.0), DEFAULT_AXIS).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("omega,amp\n"));
        assert_eq!(text.lines().count(), 1 + 64);
    }

    proptest! {
        #[test]
        fn parseval(xs in prop::collection::vec(-1.0f64..1.0, 64..400)) {
            let dt = 0.1;
            let t_b = xs.len() as f64 * dt;
            let s = amplitude_spectrum(&xs, dt, (0.0, t_b), DEFAULT_AXIS).unwrap();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
            prop_assert!((s.variance() - var).abs() <= 1e-6 * var.max(1e-300));
        }

        #[test]
        fn fraction_scales_with_noisy_amplitude(c in 0.1f64..10.0, phase in 0.0f64..6.0) {
            let q = sampled(|t| (0.18 * t).sin(), 0.1, 300.0);
            let n: Vec<f64> = sampled(|t| (0.18 * t + phase).sin() + 0.3 * (0.4 * t).sin(), 0.1, 300.0);
            let nc: Vec<f64> = n.iter().map(|v| c * v).collect();
            let cfg = SpectralConfig { axis: FrequencyAxis::Angular, ..SpectralConfig::default() };
            let sq = amplitude_spectrum(&q, 0.1, (100.0, 300.0), cfg.axis).unwrap();
            let sn = amplitude_spectrum(&n, 0.1, (100.0, 300.0), cfg.axis).unwrap();
            let snc = amplitude_spectrum(&nc, 0.1, (100.0, 300.0), cfg.axis).unwrap();
            let a = crystalline_fraction(&sn, &sq, &cfg).unwrap();
            let b = crystalline_fraction(&snc, &sq, &cfg).unwrap();
            prop_assert!((b.omega - c * a.omega).abs() <= 1e-9 * b.omega.abs());
            prop_assert!((b.omega_rcf - c * a.omega_rcf).abs() <= 1e-9 * b.omega_rcf.abs());
        }
    }
}
