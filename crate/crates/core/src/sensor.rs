//! Level structure of the undriven transmon sensor.
//!
//! The Cooper-pair box Hamiltonian is diagonalized in the charge basis
//! `n = -N..=N` at zero offset charge:
//!
//! `H = 4 Ec n^2 - (EJ(Φ)/2) Σ (|n><n+1| + h.c.)`
//!
//! with the asymmetric-SQUID Josephson energy
//! `EJ(Φ) = EJΣ sqrt(cos^2(πΦ) + d^2 sin^2(πΦ))`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{QnsError, Result};

/// Default finite-difference step for flux derivatives, in Φ₀.
pub const FLUX_STEP: f64 = 1e-6;

/// Circuit parameters of the sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmonSpec {
    /// Total Josephson energy of both junctions (GHz).
    pub ej_sum: f64,
    /// Charging energy (GHz).
    pub ec: f64,
    /// Junction asymmetry `d`, in `[0, 1)`.
    #[serde(default)]
    pub asymmetry: f64,
    /// External flux in units of Φ₀.
    pub flux_bias: f64,
    /// Number of sensor levels kept downstream.
    pub num_levels: usize,
    /// Charge basis spans `-charge_cutoff..=charge_cutoff`.
    pub charge_cutoff: usize,
    /// Dispersive shifts χ^(j-1,j) in MHz, one per transition.
    #[serde(default)]
    pub dispersive_shifts: Vec<f64>,
}

impl TransmonSpec {
    /// Device parameters of the reference sensor at Φ = 0.17 Φ₀.
    pub fn reference() -> Self {
        TransmonSpec {
            ej_sum: 11.16,
            ec: 0.1815,
            asymmetry: 0.0,
            flux_bias: 0.17,
            num_levels: 5,
            charge_cutoff: 30,
            dispersive_shifts: vec![0.115, 0.146, 0.146, 0.146],
        }
    }

    pub fn with_flux(&self, flux: f64) -> Self {
        TransmonSpec {
            flux_bias: flux,
            ..self.clone()
        }
    }

    /// Effective Josephson energy at flux `phi` (GHz).
    pub fn ej_at(&self, phi: f64) -> f64 {
        let (s, c) = (std::f64::consts::PI * phi).sin_cos();
        self.ej_sum * (c * c + self.asymmetry * self.asymmetry * s * s).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(QnsError::InvalidParameter(m));
        if !(self.ej_sum > 0.0 && self.ej_sum.is_finite()) {
            return bad(format!("ej_sum must be positive, got {}", self.ej_sum));
        }
        if !(self.ec > 0.0 && self.ec.is_finite()) {
            return bad(format!("ec must be positive, got {}", self.ec));
        }
        if !(0.0..1.0).contains(&self.asymmetry) {
            return bad(format!("asymmetry must lie in [0, 1), got {}", self.asymmetry));
        }
        if !self.flux_bias.is_finite() {
            return bad("flux_bias must be finite".into());
        }
        if self.num_levels < 3 {
            return bad(format!("num_levels must be at least 3, got {}", self.num_levels));
        }
        if self.charge_cutoff < 3 * self.num_levels {
            return bad(format!(
                "charge_cutoff {} is below 3 * num_levels = {}",
                self.charge_cutoff,
                3 * self.num_levels
            ));
        }
        if !self.dispersive_shifts.is_empty() && self.dispersive_shifts.len() < self.num_levels - 1
        {
            return Err(QnsError::CouplingLength {
                got: self.dispersive_shifts.len(),
                need: self.num_levels - 1,
            });
        }
        self.check_flux(self.flux_bias)
    }

    fn check_flux(&self, phi: f64) -> Result<()> {
        if self.ej_at(phi) <= 1e-3 * self.ej_sum {
            return Err(QnsError::FluxSingularity { flux: phi });
        }
        Ok(())
    }
}

/// Spectrum of the undriven sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStructure {
    /// ω^(j) for j = 0..d-1 in MHz, with ω^(0) = 0.
    pub level_freqs: Vec<f64>,
    /// λ^(j-1,j) for j = 1..d-1; the first entry is 1.
    pub drive_ratios: Vec<f64>,
    /// ∂ω^(k)/∂Φ for k = 1..d-1 in MHz/Φ₀.
    pub flux_sens: Vec<f64>,
    /// χ^(j-1,j) in MHz for j = 1..d-1 (may be empty).
    pub dispersive_shifts: Vec<f64>,
    /// Non-fatal diagnostics raised while solving.
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl LevelStructure {
    pub fn num_levels(&self) -> usize {
        self.level_freqs.len()
    }

    /// Transition frequency ω^(j-1,j) in MHz.
    pub fn transition(&self, j: usize) -> f64 {
        self.level_freqs[j] - self.level_freqs[j - 1]
    }

    pub fn anharmonicity(&self) -> f64 {
        self.transition(2) - self.transition(1)
    }

    /// Flux sensitivity of level `k` including the ground level (zero).
    pub fn level_sens(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.flux_sens[k - 1]
        }
    }

    /// Two-level sensor with the given transition frequency and flux
    /// sensitivity.
    pub fn two_level(freq: f64, sens: f64) -> Self {
        LevelStructure {
            level_freqs: vec![0.0, freq],
            drive_ratios: vec![1.0],
            flux_sens: vec![sens],
            dispersive_shifts: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Keep only the lowest `d` levels.
    pub fn truncated(&self, d: usize) -> Self {
        let d = d.min(self.num_levels());
        LevelStructure {
            level_freqs: self.level_freqs[..d].to_vec(),
            drive_ratios: self.drive_ratios[..d - 1].to_vec(),
            flux_sens: self.flux_sens[..d - 1].to_vec(),
            dispersive_shifts: self
                .dispersive_shifts
                .iter()
                .take(d - 1)
                .copied()
                .collect(),
            warnings: self.warnings.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("level structure serializes")
    }
}

fn charge_hamiltonian(ej: f64, ec: f64, cutoff: usize) -> DMatrix<f64> {
    let n = 2 * cutoff + 1;
    let mut h = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let q = i as f64 - cutoff as f64;
        h[(i, i)] = 4.0 * ec * q * q;
        if i + 1 < n {
            h[(i, i + 1)] = -0.5 * ej;
            h[(i + 1, i)] = -0.5 * ej;
        }
    }
    h
}

/// Sorted eigenpairs (GHz) of the charge Hamiltonian.
fn eigensystem(spec: &TransmonSpec, phi: f64) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let h = charge_hamiltonian(spec.ej_at(phi), spec.ec, spec.charge_cutoff);
    let eig = SymmetricEigen::try_new(h, 1e-15, 10_000)
        .ok_or_else(|| QnsError::EigenSolver(format!("charge Hamiltonian at flux {phi}")))?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    Ok((vals, vecs))
}

/// Level frequencies in MHz relative to the ground state.
fn level_freqs_at(spec: &TransmonSpec, phi: f64) -> Result<Vec<f64>> {
    let (vals, _) = eigensystem(spec, phi)?;
    Ok((0..spec.num_levels)
        .map(|k| 1000.0 * (vals[k] - vals[0]))
        .collect())
}

fn central_difference(spec: &TransmonSpec, step: f64) -> Result<Vec<f64>> {
    let phi = spec.flux_bias;
    spec.check_flux(phi - step)?;
    spec.check_flux(phi + step)?;
    let up = level_freqs_at(spec, phi + step)?;
    let down = level_freqs_at(spec, phi - step)?;
    Ok((1..spec.num_levels)
        .map(|k| (up[k] - down[k]) / (2.0 * step))
        .collect())
}

pub fn solve_levels(spec: &TransmonSpec) -> Result<LevelStructure> {
    spec.validate()?;
    let phi = spec.flux_bias;
    let (vals, vecs) = eigensystem(spec, phi)?;
    let d = spec.num_levels;
    let mut warnings = Vec::new();

    let level_freqs: Vec<f64> = (0..d).map(|k| 1000.0 * (vals[k] - vals[0])).collect();
    for k in 1..d {
        if level_freqs[k] <= level_freqs[k - 1] {
            return Err(QnsError::EigenSolver(format!(
                "levels {} and {} are not ordered",
                k - 1,
                k
            )));
        }
    }

    let ej = spec.ej_at(phi);
    if ej <= spec.ec {
        warnings.push(format!(
            "effective EJ = {ej:.4} GHz is not above Ec = {:.4} GHz; outside the transmon regime",
            spec.ec
        ));
    }

    let cutoff = spec.charge_cutoff as f64;
    let charge_element = |a: usize, b: usize| -> f64 {
        (0..vecs.nrows())
            .map(|i| vecs[(i, a)] * (i as f64 - cutoff) * vecs[(i, b)])
            .sum::<f64>()
            .abs()
    };
    let n01 = charge_element(0, 1);
    let drive_ratios: Vec<f64> = (1..d)
        .map(|j| if j == 1 { 1.0 } else { charge_element(j - 1, j) / n01 })
        .collect();

    let flux_sens = central_difference(spec, FLUX_STEP)?;
    let half = central_difference(spec, 0.5 * FLUX_STEP)?;
    for (k, (a, b)) in flux_sens.iter().zip(&half).enumerate() {
        let scale = a.abs().max(1.0);
        if (a - b).abs() / scale > 1e-3 {
            warnings.push(format!(
                "flux sensitivity of level {} unstable under step halving: {a} vs {b}",
                k + 1
            ));
        }
    }

    let dispersive_shifts = spec.dispersive_shifts.iter().take(d - 1).copied().collect();

    Ok(LevelStructure {
        level_freqs,
        drive_ratios,
        flux_sens,
        dispersive_shifts,
        warnings,
    })
}

/// ∂ω^(k)/∂Φ in MHz/Φ₀ by central difference with step `step`.
pub fn flux_sensitivity_with_step(spec: &TransmonSpec, k: usize, step: f64) -> Result<f64> {
    spec.validate()?;
    if k == 0 || k >= spec.num_levels {
        return Err(QnsError::InvalidParameter(format!(
            "level index {k} outside 1..{}",
            spec.num_levels - 1
        )));
    }
    Ok(central_difference(spec, step)?[k - 1])
}

pub fn flux_sensitivity(spec: &TransmonSpec, k: usize) -> Result<f64> {
    flux_sensitivity_with_step(spec, k, FLUX_STEP)
}

/// The √j harmonic-limit estimate of λ^(j-1,j), for comparison.
pub fn harmonic_drive_ratios(d: usize) -> Vec<f64> {
    (1..d).map(|j| (j as f64).sqrt()).collect()
}
