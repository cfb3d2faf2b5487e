//! Welch estimate of a two-sided PSD.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

/// Averaged periodogram of one or more records.
#[derive(Debug, Clone, PartialEq)]
pub struct WelchEstimate {
    /// Non-negative bin frequencies (MHz).
    pub freqs: Vec<f64>,
    /// Two-sided density `S(f)` in u²·μs.
    pub psd: Vec<f64>,
    /// Number of segments averaged.
    pub segments: usize,
}

impl WelchEstimate {
    /// Linear interpolation at `f`.
    pub fn at(&self, f: f64) -> f64 {
        let df = self.freqs[1] - self.freqs[0];
        let x = f.abs() / df;
        let i = x.floor() as usize;
        if i + 1 >= self.psd.len() {
            return *self.psd.last().unwrap_or(&0.0);
        }
        let t = x - i as f64;
        self.psd[i] * (1.0 - t) + self.psd[i + 1] * t
    }
}

/// Accumulates Hann-windowed periodograms with 50% overlap.
pub struct Welch {
    segment: usize,
    rate: f64,
    window: Vec<f64>,
    norm: f64,
    sum: Vec<f64>,
    count: usize,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Welch {
    pub fn new(segment: usize, rate: f64) -> Self {
        let window: Vec<f64> = (0..segment)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / segment as f64).cos())
            .collect();
        let norm = rate * window.iter().map(|w| w * w).sum::<f64>();
        Welch {
            segment,
            rate,
            window,
            norm,
            sum: vec![0.0; segment / 2 + 1],
            count: 0,
            fft: FftPlanner::new().plan_fft_forward(segment),
        }
    }

    pub fn add(&mut self, samples: &[f64]) {
        let step = (self.segment / 2).max(1);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.segment];
        let mut start = 0;
        while start + self.segment <= samples.len() {
            let seg = &samples[start..start + self.segment];
            let mean = seg.iter().sum::<f64>() / self.segment as f64;
            for (b, (x, w)) in buf.iter_mut().zip(seg.iter().zip(&self.window)) {
                *b = Complex64::new((x - mean) * w, 0.0);
            }
            self.fft.process(&mut buf);
            for (s, b) in self.sum.iter_mut().zip(&buf) {
                *s += b.norm_sqr() / self.norm;
            }
            self.count += 1;
            start += step;
        }
    }

    pub fn finish(&self) -> WelchEstimate {
        let df = self.rate / self.segment as f64;
        WelchEstimate {
            freqs: (0..self.sum.len()).map(|i| i as f64 * df).collect(),
            psd: self.sum.iter().map(|s| s / self.count.max(1) as f64).collect(),
            segments: self.count,
        }
    }
}

pub fn welch(samples: &[f64], rate: f64, segment: usize) -> WelchEstimate {
    let mut w = Welch::new(segment, rate);
    w.add(samples);
    w.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn white_noise_level() {
        // Unit-variance white samples at rate fs have two-sided density 1/fs.
        let fs = 50.0;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..400_000)
            .map(|_| {
                let u: f64 = rng.gen::<f64>() - 0.5;
                u * 12f64.sqrt()
            })
            .collect();
        let est = welch(&x, fs, 256);
        let mid: f64 = est.psd[10..100].iter().sum::<f64>() / 90.0;
        assert!((mid * fs - 1.0).abs() < 0.02);
    }

    #[test]
    fn sinusoid_power_is_conserved() {
        let fs = 100.0;
        let (a, f0) = (2.0, 12.5);
        let x: Vec<f64> = (0..65_536)
            .map(|i| a * (2.0 * PI * f0 * i as f64 / fs).cos())
            .collect();
        let est = welch(&x, fs, 1024);
        let df = est.freqs[1];
        let total: f64 = 2.0 * est.psd[1..].iter().sum::<f64>() * df;
        assert!((total / (a * a / 2.0) - 1.0).abs() < 0.01);
        assert!((est.at(-3.0) - est.at(3.0)).abs() < 1e-15);
    }
}
