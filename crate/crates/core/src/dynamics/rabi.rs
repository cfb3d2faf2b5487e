//! Square-pulse Rabi oscillations and frequency extraction.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::rk45::{integrate, Rk45Options};
use crate::dressing::{build_rwa_hamiltonian, DriveSpec};
use crate::error::{QnsError, Result};
use crate::sensor::LevelStructure;

type C = Complex64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RabiTrace {
    pub target: usize,
    pub times: Vec<f64>,
    /// `populations[i][k]` at `times[i]`.
    pub populations: Vec<Vec<f64>>,
}

impl RabiTrace {
    /// `P_{j-1} - P_j`.
    pub fn signal(&self) -> Vec<f64> {
        let j = self.target;
        self.populations.iter().map(|p| p[j - 1] - p[j]).collect()
    }

    pub fn sample_interval(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }

    /// Dominant oscillation frequency of the pair signal (MHz).
    pub fn frequency(&self) -> Result<f64> {
        dominant_frequency(&self.signal(), self.sample_interval())
    }
}

/// Rabi oscillation from `|j-1⟩` under a constant resonant drive, sampled
/// every `dt` for `duration` μs. Integrated with the adaptive solver.
pub fn simulate_rabi_sampled(
    levels: &LevelStructure,
    drive: &DriveSpec,
    duration: f64,
    dt: f64,
) -> Result<RabiTrace> {
    if !(duration > 0.0 && dt > 0.0 && dt < duration) {
        return Err(QnsError::InvalidParameter(format!(
            "need 0 < dt < duration, got dt = {dt}, duration = {duration}"
        )));
    }
    let h = build_rwa_hamiltonian(levels, drive)?;
    let d = levels.num_levels();
    let j = drive.target;
    let max_h = h.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let opts = Rk45Options {
        max_step: 1.0 / (20.0 * max_h.max(1e-300)),
        ..Default::default()
    };
    let n = (duration / dt).floor() as usize;
    let times: Vec<f64> = (0..=n).map(|i| i as f64 * dt).collect();
    let mut y0 = vec![C::new(0.0, 0.0); d];
    y0[j - 1] = C::new(1.0, 0.0);
    let gen: Vec<f64> = h.iter().map(|x| 2.0 * PI * x).collect();
    let mut populations = Vec::with_capacity(times.len());
    integrate(
        |_, y, dy| {
            for r in 0..d {
                let mut acc = C::new(0.0, 0.0);
                for c in 0..d {
                    acc += y[c] * gen[c * d + r];
                }
                dy[r] = C::new(0.0, -1.0) * acc;
            }
        },
        0.0,
        &y0,
        &times,
        &opts,
        |_, y| populations.push(y.iter().map(|c| c.norm_sqr()).collect()),
    )?;
    Ok(RabiTrace {
        target: j,
        times,
        populations,
    })
}

/// Rabi oscillation over `duration` μs, sampled at ≥ 40 points per expected period.
pub fn simulate_rabi(levels: &LevelStructure, drive: &DriveSpec, duration: f64) -> Result<RabiTrace> {
    drive.validate(levels)?;
    let guess = levels.drive_ratios[drive.target - 1] * drive.amplitude;
    let dt = if guess > 0.0 {
        (1.0 / (40.0 * guess)).min(1e-3)
    } else {
        1e-3
    };
    simulate_rabi_sampled(levels, drive, duration, dt.min(duration / 64.0))
}

/// Default record length: at least 1 μs and 100 expected cycles.
pub fn default_rabi_duration(levels: &LevelStructure, drive: &DriveSpec) -> f64 {
    let guess = levels.drive_ratios[drive.target - 1] * drive.amplitude;
    if guess > 0.0 {
        (100.0 / guess).max(1.0)
    } else {
        1.0
    }
}

/// Frequency (MHz) of the strongest non-DC spectral line of `x` sampled every
/// `dt` μs: Hann-windowed FFT peak, refined by maximizing the windowed DTFT.
pub fn dominant_frequency(x: &[f64], dt: f64) -> Result<f64> {
    let n = x.len();
    if n < 8 || dt <= 0.0 {
        return Err(QnsError::InvalidParameter(
            "need at least 8 samples and a positive interval".into(),
        ));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let w: Vec<f64> = (0..n)
        .map(|i| {
            let hann = 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
            (x[i] - mean) * hann
        })
        .collect();
    let nfft = (4 * n).next_power_of_two();
    let mut buf: Vec<C> = w.iter().map(|&v| C::new(v, 0.0)).collect();
    buf.resize(nfft, C::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
    let df = 1.0 / (nfft as f64 * dt);
    // Skip the DC main lobe of the Hann window.
    let skip = (2.0 * nfft as f64 / n as f64).ceil() as usize + 1;
    let (mut best, mut best_k) = (0.0, skip);
    for (k, v) in buf.iter().enumerate().take(nfft / 2).skip(skip) {
        if v.norm_sqr() > best {
            best = v.norm_sqr();
            best_k = k;
        }
    }
    let dtft = |f: f64| -> f64 {
        let step = C::from_polar(1.0, -2.0 * PI * f * dt);
        let mut z = C::new(1.0, 0.0);
        let mut acc = C::new(0.0, 0.0);
        for &v in &w {
            acc += z * v;
            z *= step;
        }
        acc.norm_sqr()
    };
    // Golden-section search on one FFT bin either side of the peak.
    let (mut a, mut b) = ((best_k as f64 - 1.0) * df, (best_k as f64 + 1.0) * df);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (dtft(c), dtft(d));
    for _ in 0..80 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = dtft(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = dtft(d);
        }
        if (b - a) < 1e-12 * b.abs().max(1.0) {
            break;
        }
    }
    Ok(0.5 * (a + b))
}
