//! Target power spectral densities.
//!
//! Convention: `S(ω) = ∫ C(τ) e^{-iωτ} dτ`, two-sided, evaluated at
//! `ω = 2πf` with `f` in MHz. The variance is `∫ S df` over all `f`, so
//! a quantity measured in units `u` has `S` in `u²·μs`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{QnsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum NoisePsdSpec {
    /// Two-lobe Lorentzian: `P0/(2π ωc) [L(ω-ω0) + L(ω+ω0)]`.
    Lorentzian {
        /// Noise power P₀ (u²).
        power: f64,
        /// Center frequency f₀ (MHz).
        center: f64,
        /// Half width at half maximum f_c (MHz).
        hwhm: f64,
    },
    /// Flat level `S0` (u²·μs) for `f_lo ≤ |f| ≤ f_hi`.
    #[serde(rename = "boxcar")]
    BoxCar { level: f64, f_lo: f64, f_hi: f64 },
    /// Linear interpolation in `|f|` between sorted `(f, S)` pairs,
    /// zero outside the table.
    Tabulated { points: Vec<(f64, f64)> },
    Zero,
}

impl NoisePsdSpec {
    pub fn lorentzian(power: f64, center: f64, hwhm: f64) -> Self {
        NoisePsdSpec::Lorentzian {
            power,
            center,
            hwhm,
        }
    }

    pub fn boxcar(level: f64, f_lo: f64, f_hi: f64) -> Self {
        NoisePsdSpec::BoxCar { level, f_lo, f_hi }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(QnsError::InvalidParameter(m.to_string()));
        match self {
            NoisePsdSpec::Lorentzian {
                power,
                center,
                hwhm,
            } => {
                if !(*power >= 0.0 && power.is_finite()) {
                    return bad("lorentzian power must be non-negative");
                }
                if !(*hwhm > 0.0 && hwhm.is_finite()) {
                    return bad("lorentzian hwhm must be positive");
                }
                if !center.is_finite() {
                    return bad("lorentzian center must be finite");
                }
            }
            NoisePsdSpec::BoxCar { level, f_lo, f_hi } => {
                if !(*level >= 0.0 && level.is_finite()) {
                    return bad("boxcar level must be non-negative");
                }
                if !(*f_lo >= 0.0 && f_hi > f_lo && f_hi.is_finite()) {
                    return bad("boxcar band must satisfy 0 <= f_lo < f_hi");
                }
            }
            NoisePsdSpec::Tabulated { points } => {
                if points.is_empty() {
                    return bad("tabulated psd needs at least one point");
                }
                for w in points.windows(2) {
                    if w[1].0 <= w[0].0 {
                        return bad("tabulated frequencies must be strictly increasing");
                    }
                }
                if points
                    .iter()
                    .any(|(f, s)| !f.is_finite() || !s.is_finite() || *s < 0.0 || *f < 0.0)
                {
                    return bad("tabulated entries must be finite and non-negative");
                }
            }
            NoisePsdSpec::Zero => {}
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        match self {
            NoisePsdSpec::Zero => true,
            NoisePsdSpec::Lorentzian { power, .. } => *power == 0.0,
            NoisePsdSpec::BoxCar { level, .. } => *level == 0.0,
            NoisePsdSpec::Tabulated { points } => points.iter().all(|p| p.1 == 0.0),
        }
    }

    /// `S(ω = 2πf)` for ordinary frequency `f` in MHz.
    pub fn eval(&self, f: f64) -> f64 {
        match self {
            NoisePsdSpec::Lorentzian {
                power,
                center,
                hwhm,
            } => {
                let w = 2.0 * PI * f;
                let w0 = 2.0 * PI * center;
                let wc = 2.0 * PI * hwhm;
                let lobe = |x: f64| 1.0 / (1.0 + x * x);
                power / (2.0 * PI * wc) * (lobe((w - w0) / wc) + lobe((w + w0) / wc))
            }
            NoisePsdSpec::BoxCar { level, f_lo, f_hi } => {
                let a = f.abs();
                if a >= *f_lo && a <= *f_hi {
                    *level
                } else {
                    0.0
                }
            }
            NoisePsdSpec::Tabulated { points } => interpolate(points, f.abs()),
            NoisePsdSpec::Zero => 0.0,
        }
    }

    /// Multiply the spectrum by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        match self {
            NoisePsdSpec::Lorentzian {
                power,
                center,
                hwhm,
            } => NoisePsdSpec::Lorentzian {
                power: power * c,
                center: *center,
                hwhm: *hwhm,
            },
            NoisePsdSpec::BoxCar { level, f_lo, f_hi } => NoisePsdSpec::BoxCar {
                level: level * c,
                f_lo: *f_lo,
                f_hi: *f_hi,
            },
            NoisePsdSpec::Tabulated { points } => NoisePsdSpec::Tabulated {
                points: points.iter().map(|&(f, s)| (f, s * c)).collect(),
            },
            NoisePsdSpec::Zero => NoisePsdSpec::Zero,
        }
    }

    /// Largest value on `f ≥ 0`.
    pub fn peak(&self) -> f64 {
        match self {
            NoisePsdSpec::Lorentzian { center, .. } => self.eval(*center),
            NoisePsdSpec::BoxCar { level, .. } => *level,
            NoisePsdSpec::Tabulated { points } => {
                points.iter().fold(0.0f64, |m, p| m.max(p.1))
            }
            NoisePsdSpec::Zero => 0.0,
        }
    }

    /// Default synthesis window `[lo, hi]` in MHz: center ± 50 MHz floored
    /// at zero, or the support of band-limited shapes.
    pub fn default_cutoffs(&self) -> (f64, f64) {
        match self {
            NoisePsdSpec::Lorentzian { center, .. } => ((center - 50.0).max(0.0), center + 50.0),
            NoisePsdSpec::BoxCar { f_lo, f_hi, .. } => (*f_lo, *f_hi),
            NoisePsdSpec::Tabulated { points } => (points[0].0, points[points.len() - 1].0),
            NoisePsdSpec::Zero => (0.0, 0.0),
        }
    }

    /// Two-column CSV `f_MHz,S` sampled on `freqs`.
    pub fn to_csv(&self, freqs: &[f64]) -> String {
        let mut out = String::from("f_MHz,S\n");
        for &f in freqs {
            out.push_str(&format!("{f},{}\n", self.eval(f)));
        }
        out
    }
}

fn interpolate(points: &[(f64, f64)], f: f64) -> f64 {
    let n = points.len();
    if n == 1 {
        return if f == points[0].0 { points[0].1 } else { 0.0 };
    }
    if f < points[0].0 || f > points[n - 1].0 {
        return 0.0;
    }
    let i = points.partition_point(|p| p.0 <= f).clamp(1, n - 1);
    let (f0, s0) = points[i - 1];
    let (f1, s1) = points[i];
    s0 + (s1 - s0) * (f - f0) / (f1 - f0)
}

/// Engineered photon shot noise from a coherent tone detuned from the
/// readout resonator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonNoiseSpec {
    /// χ^(j-1,j) in MHz for j = 1..d-1.
    pub chi: Vec<f64>,
    /// Mean photon number n̄.
    pub nbar: f64,
    /// Resonator linewidth κ/2π (MHz).
    pub kappa: f64,
    /// Δ/2π = (ω_r - ω_n)/2π (MHz).
    pub detuning: f64,
    /// Overall photon-number PSD weight per unit n̄ (u² = photons²).
    #[serde(default = "unit")]
    pub calibration: f64,
}

fn unit() -> f64 {
    1.0
}

impl PhotonNoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) {
            return Err(QnsError::InvalidParameter("kappa must be positive".into()));
        }
        if !(self.nbar >= 0.0) {
            return Err(QnsError::InvalidParameter("nbar must be non-negative".into()));
        }
        if !(self.calibration >= 0.0) {
            return Err(QnsError::InvalidParameter(
                "calibration must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// (χ^(1,2)/χ^(0,1))².
    pub fn chi_ratio_squared(&self) -> f64 {
        (self.chi[1] / self.chi[0]).powi(2)
    }
}

/// PSD of the photon-number fluctuation δn(t): Lorentzian at Δ with
/// half width κ/2 and power `calibration · n̄`.
pub fn photon_number_psd(spec: &PhotonNoiseSpec) -> NoisePsdSpec {
    if spec.nbar == 0.0 || spec.calibration == 0.0 {
        return NoisePsdSpec::Zero;
    }
    NoisePsdSpec::lorentzian(spec.calibration * spec.nbar, spec.detuning, 0.5 * spec.kappa)
}

/// PSD of the (j-1,j) transition-frequency noise `2π·2χ^(j-1,j)·δn(t)`,
/// in rad²/μs.
pub fn photon_psd(spec: &PhotonNoiseSpec, j: usize) -> Result<NoisePsdSpec> {
    let chi = *spec.chi.get(j.wrapping_sub(1)).ok_or(QnsError::CouplingLength {
        got: spec.chi.len(),
        need: j,
    })?;
    Ok(photon_number_psd(spec).scaled((4.0 * PI * chi).powi(2)))
}
