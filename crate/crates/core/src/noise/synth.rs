//! Harmonic-sum synthesis of classical noise waveforms.
//!
//! `x(t) = Σ_m a_m cos(2π m f₁ t + φ_m)` over harmonics of the fundamental
//! `f₁` inside the cutoff window, with `a_m = 2 sqrt(S(f_m) f₁)` and
//! i.i.d. uniform phases. The sum is evaluated with one inverse FFT over
//! a full period `1/f₁`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::psd::NoisePsdSpec;
use crate::error::{QnsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOptions {
    /// Record length (μs).
    pub duration: f64,
    /// Harmonic spacing (MHz).
    pub fundamental: f64,
    /// `[lo, hi]` window in MHz; defaults to the shape's own window.
    #[serde(default)]
    pub cutoffs: Option<(f64, f64)>,
    /// Samples per μs; defaults to `DEFAULT_OVERSAMPLING` times the highest harmonic.
    #[serde(default)]
    pub sample_rate: Option<f64>,
    /// Draw Rayleigh-distributed amplitudes instead of fixed ones.
    #[serde(default)]
    pub rayleigh: bool,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            duration: 100.0,
            fundamental: 4e-3,
            cutoffs: None,
            sample_rate: None,
            rayleigh: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub frequency: f64,
    pub amplitude: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseWaveform {
    pub psd: NoisePsdSpec,
    pub sample_rate: f64,
    pub duration: f64,
    pub fundamental: f64,
    pub seed: u64,
    pub samples: Vec<f64>,
    pub harmonics: Vec<Harmonic>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    psd: &'a NoisePsdSpec,
    seed: u64,
    sample_rate: f64,
    duration: f64,
    fundamental: f64,
    len: usize,
    dtype: &'static str,
}

impl NoiseWaveform {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Linear interpolation at time `t` (μs), clamped to the record.
    pub fn value_at(&self, t: f64) -> f64 {
        interpolate(&self.samples, self.sample_rate, t)
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len().max(1) as f64
    }

    /// Standard deviation of the sample mean over the random phases.
    pub fn expected_mean_spread(&self) -> f64 {
        let t = self.samples.len() as f64 / self.sample_rate;
        self.harmonics
            .iter()
            .map(|h| {
                let th = 2.0 * PI * h.frequency * t;
                h.amplitude * h.amplitude * (1.0 - th.cos()) / (th * th)
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Samples as little-endian f64 at `path`, metadata at `path.json`.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for x in &self.samples {
            f.write_all(&x.to_le_bytes())?;
        }
        f.flush()?;
        let side = Sidecar {
            psd: &self.psd,
            seed: self.seed,
            sample_rate: self.sample_rate,
            duration: self.duration,
            fundamental: self.fundamental,
            len: self.samples.len(),
            dtype: "f64le",
        };
        let mut meta = path.as_os_str().to_owned();
        meta.push(".json");
        std::fs::write(
            meta,
            serde_json::to_string_pretty(&side).map_err(|e| QnsError::Io(e.to_string()))?,
        )?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Vec<f64>> {
        let bytes = std::fs::read(path)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}

pub(crate) fn interpolate(samples: &[f64], rate: f64, t: f64) -> f64 {
    let n = samples.len();
    if n == 0 {
        return 0.0;
    }
    let x = (t * rate).max(0.0);
    let i = x.floor() as usize;
    if i + 1 >= n {
        return samples[n - 1];
    }
    let frac = x - i as f64;
    samples[i] + (samples[i + 1] - samples[i]) * frac
}

fn smooth_size(min: usize) -> usize {
    let mut n = min.max(1);
    loop {
        let mut m = n;
        for p in [2, 3, 5, 7] {
            while m % p == 0 {
                m /= p;
            }
        }
        if m == 1 {
            return n;
        }
        n += 1;
    }
}

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<usize, Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn inverse_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANS.with(|p| {
        let mut p = p.borrow_mut();
        if let Some(plan) = p.1.get(&n) {
            return plan.clone();
        }
        let plan = p.0.plan_fft_inverse(n);
        p.1.insert(n, plan.clone());
        plan
    })
}

/// Default sample rate as a multiple of the highest synthesized frequency.
pub const DEFAULT_OVERSAMPLING: f64 = 32.0;

/// Grid actually used by [`synthesize`]: (FFT length, sample rate).
pub fn synthesis_grid(psd: &NoisePsdSpec, opts: &SynthesisOptions) -> (usize, f64) {
    let (_, hi) = opts.cutoffs.unwrap_or_else(|| psd.default_cutoffs());
    let min_rate = opts
        .sample_rate
        .unwrap_or_else(|| (DEFAULT_OVERSAMPLING * hi).max(1.0));
    let period = 1.0 / opts.fundamental;
    let n = smooth_size((min_rate * period - 1e-9).ceil() as usize);
    (n, n as f64 * opts.fundamental)
}

pub fn synthesize(psd: &NoisePsdSpec, opts: &SynthesisOptions, seed: u64) -> Result<NoiseWaveform> {
    psd.validate()?;
    if !(opts.fundamental > 0.0 && opts.duration > 0.0) {
        return Err(QnsError::InvalidParameter(
            "fundamental and duration must be positive".into(),
        ));
    }
    let (n, rate) = synthesis_grid(psd, opts);
    let len = (opts.duration * rate).round() as usize;
    let mut out = NoiseWaveform {
        psd: psd.clone(),
        sample_rate: rate,
        duration: opts.duration,
        fundamental: opts.fundamental,
        seed,
        samples: vec![0.0; len],
        harmonics: Vec::new(),
    };
    if psd.is_zero() {
        return Ok(out);
    }

    let (lo, hi) = opts.cutoffs.unwrap_or_else(|| psd.default_cutoffs());
    let f1 = opts.fundamental;
    let m_lo = ((lo / f1) - 1e-9).ceil().max(1.0) as usize;
    let m_hi = ((hi / f1) + 1e-9).floor() as usize;
    let m_hi = m_hi.min((n - 1) / 2);
    if m_hi < m_lo {
        return Err(QnsError::EmptyCutoffWindow { lo, hi });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    out.harmonics.reserve(m_hi - m_lo + 1);
    for m in m_lo..=m_hi {
        let f = m as f64 * f1;
        let phase = rng.gen::<f64>() * 2.0 * PI;
        let mut amp = 2.0 * (psd.eval(f) * f1).sqrt();
        if opts.rayleigh {
            let u: f64 = rng.gen();
            amp *= (-(1.0 - u).ln()).sqrt();
        }
        spec[m] = Complex64::from_polar(amp, phase);
        out.harmonics.push(Harmonic {
            frequency: f,
            amplitude: amp,
            phase,
        });
    }
    inverse_plan(n).process(&mut spec);
    for (i, x) in out.samples.iter_mut().enumerate() {
        *x = spec[i % n].re;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_sum(w: &NoiseWaveform, t: f64) -> f64 {
        w.harmonics
            .iter()
            .map(|h| h.amplitude * (2.0 * PI * h.frequency * t + h.phase).cos())
            .sum()
    }

    fn small_opts() -> SynthesisOptions {
        SynthesisOptions {
            duration: 10.0,
            fundamental: 0.1,
            cutoffs: None,
            sample_rate: None,
            rayleigh: false,
        }
    }

    #[test]
    fn zero_psd_gives_zeros() {
        let w = synthesize(&NoisePsdSpec::Zero, &SynthesisOptions::default(), 3).unwrap();
        assert!(!w.is_empty());
        assert!(w.samples.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn fft_matches_direct_cosine_sum() {
        let psd = NoisePsdSpec::lorentzian(1.0, 6.0, 2.0);
        let w = synthesize(&psd, &small_opts(), 11).unwrap();
        for i in [0usize, 17, 333, w.len() - 1] {
            let t = i as f64 / w.sample_rate;
            assert!((w.samples[i] - direct_sum(&w, t)).abs() < 1e-9);
        }
        assert!(w.sample_rate >= DEFAULT_OVERSAMPLING * 56.0);
        assert_eq!(w.len(), (10.0 * w.sample_rate).round() as usize);
    }

    #[test]
    fn variance_matches_integral() {
        let psd = NoisePsdSpec::boxcar(0.5, 1.0, 20.0);
        let w = synthesize(&psd, &small_opts(), 5).unwrap();
        let power: f64 = w.harmonics.iter().map(|h| 0.5 * h.amplitude * h.amplitude).sum();
        // Two-sided band area with one harmonic per fundamental step.
        let expected = 2.0 * 0.5 * 0.1 * w.harmonics.len() as f64;
        assert!((power / expected - 1.0).abs() < 1e-12);
        assert_eq!(w.harmonics.len(), 191);
    }

    #[test]
    fn default_grid_for_reference_noise() {
        let psd = NoisePsdSpec::lorentzian(1.0, 200.0, 2.0);
        let (n, rate) = synthesis_grid(&psd, &SynthesisOptions::default());
        assert!(rate >= 2000.0);
        assert_eq!(n as f64 * 4e-3, rate);
    }

    #[test]
    fn empty_window_is_error() {
        let psd = NoisePsdSpec::lorentzian(1.0, 6.0, 2.0);
        let opts = SynthesisOptions {
            cutoffs: Some((6.01, 6.02)),
            ..small_opts()
        };
        assert!(matches!(
            synthesize(&psd, &opts, 1),
            Err(QnsError::EmptyCutoffWindow { .. })
        ));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let psd = NoisePsdSpec::lorentzian(1.0, 6.0, 2.0);
        let a = synthesize(&psd, &small_opts(), 42).unwrap();
        let b = synthesize(&psd, &small_opts(), 42).unwrap();
        let c = synthesize(&psd, &small_opts(), 43).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn mean_within_expected_spread() {
        let psd = NoisePsdSpec::lorentzian(1.0, 0.5, 2.0);
        let opts = SynthesisOptions {
            duration: 10.0,
            fundamental: 0.004,
            ..Default::default()
        };
        for seed in 0..10 {
            let w = synthesize(&psd, &opts, seed).unwrap();
            let s = w.expected_mean_spread();
            assert!(s > 0.0);
            assert!(w.mean().abs() < 5.0 * s, "seed {seed}");
        }
    }

    #[test]
    fn independent_seeds_decorrelate() {
        let psd = NoisePsdSpec::boxcar(1.0, 1.0, 20.0);
        let a = synthesize(&psd, &small_opts(), 1).unwrap();
        let b = synthesize(&psd, &small_opts(), 2).unwrap();
        // Over one full period the harmonics are the independent components.
        let k = a.harmonics.len() as f64;
        let dot: f64 = a.samples.iter().zip(&b.samples).map(|(x, y)| x * y).sum();
        let na: f64 = a.samples.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.samples.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((dot / (na * nb)).abs() < 3.0 / k.sqrt());
    }

    #[test]
    fn interpolation_is_linear() {
        let s = [0.0, 2.0, 4.0];
        assert_eq!(interpolate(&s, 2.0, 0.25), 1.0);
        assert_eq!(interpolate(&s, 2.0, 10.0), 4.0);
        assert_eq!(interpolate(&s, 2.0, -1.0), 0.0);
    }

    #[test]
    fn binary_round_trip() {
        let psd = NoisePsdSpec::boxcar(1.0, 1.0, 20.0);
        let w = synthesize(&psd, &small_opts(), 9).unwrap();
        let dir = std::env::temp_dir().join(format!("qns-synth-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("w.f64");
        w.write_binary(&path).unwrap();
        assert_eq!(NoiseWaveform::read_binary(&path).unwrap(), w.samples);
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("w.f64.json")).unwrap())
                .unwrap();
        assert_eq!(meta["seed"], 9);
        std::fs::remove_dir_all(dir).ok();
    }
}
