//! Multi-level corrections of transverse PSD estimates.
//!
//! Step 1 moves the abscissa from `λ·A` to the dressed splitting `Ω`.
//! Step 2 refers the transverse PSD to the lab frame through the squared
//! transduction `T = Σ_k α^(k) c_k`, giving `S_lab = S̃_⊥ / T²`.

use serde::{Deserialize, Serialize};

use super::extract::TransverseEstimate;
use crate::dressing::DressedFrame;
use crate::error::{QnsError, Result};
use crate::noise::CouplingModel;
use crate::sensor::LevelStructure;

/// Transduction below this fraction of its weak-drive value is flagged.
const ILL_CONDITIONED: f64 = 1e-3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionFlags {
    pub freq_shift: bool,
    pub amplitude: bool,
}

/// Units of `s_lab`. `Native` is (unit of x)²/MHz, i.e. Φ₀²/MHz for flux.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplayUnits {
    #[default]
    Native,
    /// μΦ₀²/Hz.
    MicroPhi0SquaredPerHz,
}

impl DisplayUnits {
    /// Multiplier from native units.
    pub fn factor(self) -> f64 {
        match self {
            DisplayUnits::Native => 1.0,
            DisplayUnits::MicroPhi0SquaredPerHz => 1e6,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DisplayUnits::Native => "x^2/MHz",
            DisplayUnits::MicroPhi0SquaredPerHz => "uPhi0^2/Hz",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointFlags {
    pub ill_conditioned: bool,
    /// Presence rate significantly below absence rate.
    pub negative: bool,
    /// Transverse estimate within 2σ of zero.
    pub below_floor: bool,
}

impl PointFlags {
    fn label(&self) -> String {
        let mut v = Vec::new();
        if self.ill_conditioned {
            v.push("ill_conditioned");
        }
        if self.negative {
            v.push("negative");
        }
        if self.below_floor {
            v.push("below_floor");
        }
        v.join("|")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdPoint {
    pub amplitude: f64,
    /// λ^(j-1,j)·A (MHz).
    pub omega_naive: f64,
    /// Ω^(j-1,j) once corrected, else equal to `omega_naive` (MHz).
    pub omega_corrected: f64,
    /// S̃_⊥ (1/μs).
    pub s_transverse: f64,
    pub sigma_transverse: f64,
    /// Lab-frame PSD under the two-level transduction.
    pub s_lab_naive: f64,
    /// Lab-frame PSD under the current transduction.
    pub s_lab: f64,
    /// 1σ of `s_lab`.
    pub sigma: f64,
    /// Transduction in use (rad/μs per unit x).
    pub transduction: f64,
    pub flags: PointFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdEstimate {
    pub target: usize,
    pub points: Vec<PsdPoint>,
    pub corrections_applied: CorrectionFlags,
    #[serde(default)]
    pub units: DisplayUnits,
}

/// `½|c_{j-1} - c_j|`, the transduction of the bare pair.
pub fn two_level_transduction(weights: &[f64], target: usize) -> f64 {
    0.5 * (weights[target - 1] - weights[target]).abs()
}

impl PsdEstimate {
    /// Estimate under the two-level approximation: abscissa `λ·A`, transduction
    /// `½|c_{j-1} - c_j|`.
    pub fn naive(
        levels: &LevelStructure,
        coupling: &CouplingModel,
        target: usize,
        raw: &[(f64, TransverseEstimate)],
    ) -> Result<Self> {
        if target == 0 || target >= levels.num_levels() {
            return Err(QnsError::InvalidParameter(format!("target {target} out of range")));
        }
        let c = coupling.level_weights(levels.num_levels())?;
        let t0 = two_level_transduction(&c, target);
        if t0 == 0.0 {
            return Err(QnsError::IllConditioned { ratio: 0.0 });
        }
        let lambda = levels.drive_ratios[target - 1];
        let points = raw
            .iter()
            .map(|(a, e)| {
                let s_lab = e.value / (t0 * t0);
                PsdPoint {
                    amplitude: *a,
                    omega_naive: lambda * a,
                    omega_corrected: lambda * a,
                    s_transverse: e.value,
                    sigma_transverse: e.sigma,
                    s_lab_naive: s_lab,
                    s_lab,
                    sigma: e.sigma / (t0 * t0),
                    transduction: t0,
                    flags: PointFlags {
                        ill_conditioned: false,
                        negative: e.negative,
                        below_floor: e.value < 2.0 * e.sigma,
                    },
                }
            })
            .collect();
        Ok(PsdEstimate {
            target,
            points,
            corrections_applied: CorrectionFlags::default(),
            units: DisplayUnits::Native,
        })
    }

    /// Same estimate with `s_lab` values expressed in `units`.
    pub fn in_units(&self, units: DisplayUnits) -> Self {
        let k = units.factor() / self.units.factor();
        let mut out = self.clone();
        for p in &mut out.points {
            p.s_lab *= k;
            p.s_lab_naive *= k;
            p.sigma *= k;
        }
        out.units = units;
        out
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.omega_corrected).collect()
    }

    /// `s_lab` and its σ at `omega` by linear interpolation on the corrected
    /// abscissa; `None` outside the covered range.
    pub fn interpolate(&self, omega: f64) -> Option<(f64, f64)> {
        let mut pts: Vec<&PsdPoint> = self.points.iter().collect();
        pts.sort_by(|a, b| a.omega_corrected.total_cmp(&b.omega_corrected));
        let n = pts.len();
        if n == 0 || omega < pts[0].omega_corrected - 1e-9 || omega > pts[n - 1].omega_corrected + 1e-9 {
            return None;
        }
        if n == 1 {
            return Some((pts[0].s_lab, pts[0].sigma));
        }
        let i = pts.partition_point(|p| p.omega_corrected <= omega).clamp(1, n - 1);
        let (a, b) = (pts[i - 1], pts[i]);
        let span = b.omega_corrected - a.omega_corrected;
        let u = if span > 0.0 {
            ((omega - a.omega_corrected) / span).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let s = a.s_lab + u * (b.s_lab - a.s_lab);
        let sig = ((1.0 - u) * a.sigma).hypot(u * b.sigma);
        Some((s, sig))
    }

    /// CSV: `A_drive_MHz,omega_naive_MHz,omega_corrected_MHz,S_transverse_per_us,
    /// S_transverse_sigma,S_lab_naive,S_lab,sigma,flags`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "A_drive_MHz,omega_naive_MHz,omega_corrected_MHz,S_transverse_per_us,S_transverse_sigma,S_lab_naive,S_lab,sigma,flags\n",
        );
        for p in &self.points {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                p.amplitude,
                p.omega_naive,
                p.omega_corrected,
                p.s_transverse,
                p.sigma_transverse,
                p.s_lab_naive,
                p.s_lab,
                p.sigma,
                p.flags.label()
            ));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("estimate serializes")
    }
}

/// Apply both corrections using one dressed frame per point. Already
/// corrected estimates are returned unchanged.
pub fn correct_estimate(
    estimate: &PsdEstimate,
    frames: &[DressedFrame],
    levels: &LevelStructure,
    coupling: &CouplingModel,
) -> Result<PsdEstimate> {
    let flags = estimate.corrections_applied;
    if flags.freq_shift && flags.amplitude {
        return Ok(estimate.clone());
    }
    if frames.len() != estimate.points.len() {
        return Err(QnsError::InvalidParameter(format!(
            "{} frames for {} points",
            frames.len(),
            estimate.points.len()
        )));
    }
    let c = coupling.level_weights(levels.num_levels())?;
    let t0 = two_level_transduction(&c, estimate.target);
    let units = estimate.units.factor();
    let mut out = estimate.clone();
    for (p, f) in out.points.iter_mut().zip(frames) {
        if f.target != estimate.target || (f.amplitude - p.amplitude).abs() > 1e-9 * p.amplitude.max(1.0) {
            return Err(QnsError::InvalidParameter(format!(
                "frame (target {}, A = {}) does not match point (target {}, A = {})",
                f.target, f.amplitude, estimate.target, p.amplitude
            )));
        }
        if !flags.freq_shift {
            p.omega_corrected = f.rabi;
        }
        if !flags.amplitude {
            let t = f.transverse(&c).abs();
            p.transduction = t;
            p.flags.ill_conditioned = t < ILL_CONDITIONED * t0;
            let t2 = t * t;
            p.s_lab = units * p.s_transverse / t2;
            p.sigma = units * p.sigma_transverse / t2;
        }
    }
    out.corrections_applied = CorrectionFlags {
        freq_shift: true,
        amplitude: true,
    };
    Ok(out)
}
