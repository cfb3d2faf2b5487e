//! Campaign configuration.

use std::path::{Path, PathBuf};

use qns_core::dynamics::Integrator;
use qns_core::noise::{photon_number_psd, CouplingModel, NoisePsdSpec, PhotonNoiseSpec};
use qns_core::reconstruction::DisplayUnits;
use qns_core::{LevelStructure, TransmonSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// One engineered noise source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSource {
    /// Flux noise δΦ(t) in Φ₀; sensitivities default to the sensor's.
    Flux {
        psd: NoisePsdSpec,
        #[serde(default)]
        flux_sens: Option<Vec<f64>>,
    },
    /// Photon shot noise δn(t) of a detuned coherent tone.
    Photon { photon: PhotonNoiseSpec },
    /// Arbitrary record with explicit per-level weights (rad/μs per unit).
    Direct { psd: NoisePsdSpec, weights: Vec<f64> },
}

impl NoiseSource {
    pub fn psd(&self) -> NoisePsdSpec {
        match self {
            NoiseSource::Flux { psd, .. } | NoiseSource::Direct { psd, .. } => psd.clone(),
            NoiseSource::Photon { photon } => photon_number_psd(photon),
        }
    }

    pub fn coupling(&self, levels: &LevelStructure) -> CouplingModel {
        match self {
            NoiseSource::Flux { flux_sens, .. } => CouplingModel::Flux {
                flux_sens: flux_sens.clone().unwrap_or_else(|| levels.flux_sens.clone()),
            },
            NoiseSource::Photon { photon } => CouplingModel::Photon {
                chi: photon.chi.clone(),
            },
            NoiseSource::Direct { weights, .. } => CouplingModel::Direct {
                weights: weights.clone(),
            },
        }
    }
}

/// Flat-top durations: an explicit list, or a grid scaled to the expected
/// decay time of each point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Durations {
    List(Vec<f64>),
    Auto(AutoDurations),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoDurations {
    /// Number of τ points, `τ_i = τ_max·i/points` for `i = 1..=points`.
    #[serde(default = "default_points")]
    pub points: usize,
    /// `τ_max` in units of the predicted decay time.
    #[serde(default = "default_decays")]
    pub decays: f64,
    /// Bounds on `τ_max` (μs).
    #[serde(default = "default_min_span")]
    pub min_span: f64,
    #[serde(default = "default_max_span")]
    pub max_span: f64,
}

fn default_points() -> usize {
    12
}
fn default_decays() -> f64 {
    3.0
}
fn default_min_span() -> f64 {
    0.5
}
fn default_max_span() -> f64 {
    400.0
}

impl Default for AutoDurations {
    fn default() -> Self {
        AutoDurations {
            points: default_points(),
            decays: default_decays(),
            min_span: default_min_span(),
            max_span: default_max_span(),
        }
    }
}

impl Default for Durations {
    fn default() -> Self {
        Durations::Auto(AutoDurations::default())
    }
}

impl Durations {
    /// Grid for an expected rate `gamma` (1/μs).
    pub fn grid(&self, gamma: f64) -> Vec<f64> {
        match self {
            Durations::List(v) => v.clone(),
            Durations::Auto(a) => {
                let span = if gamma > 0.0 { a.decays / gamma } else { a.max_span };
                let span = span.clamp(a.min_span, a.max_span);
                (1..=a.points).map(|i| span * i as f64 / a.points as f64).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    /// Largest harmonic spacing (MHz); lowered to `1/τ_max` when needed.
    #[serde(default = "default_fundamental")]
    pub fundamental: f64,
    /// Rayleigh amplitudes make each source a Gaussian process.
    #[serde(default = "default_true")]
    pub rayleigh: bool,
    /// Samples per μs; default follows the highest cutoff of all sources.
    #[serde(default)]
    pub sample_rate: Option<f64>,
}

fn default_fundamental() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            fundamental: default_fundamental(),
            rayleigh: true,
            sample_rate: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedConfig {
    pub base: u64,
}

/// Source separation of the (0,1) and (1,2) spectra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminationConfig {
    /// `r` of the two-source model; derived from the sensor when absent.
    #[serde(default)]
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    #[serde(default)]
    pub name: String,
    pub sensor: TransmonSpec,
    pub target_pairs: Vec<usize>,
    #[serde(default)]
    pub amplitude_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub frequency_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub noise_sources: Vec<NoiseSource>,
    pub ensemble: usize,
    #[serde(default)]
    pub durations: Durations,
    /// Durations of the absence runs; defaults to an automatic grid.
    #[serde(default)]
    pub absence_durations: Durations,
    pub seeds: SeedConfig,
    /// Measured Γ₁ (1/μs) of the lowest transitions; higher ones follow
    /// the harmonic ladder.
    #[serde(default)]
    pub t1_rates: Vec<f64>,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default = "default_edge_sigma")]
    pub edge_sigma: f64,
    #[serde(default)]
    pub integrator: Integrator,
    /// Index into `noise_sources` whose coupling refers `s_lab`; default
    /// is sensor flux.
    #[serde(default)]
    pub reference_source: Option<usize>,
    #[serde(default)]
    pub display_units: DisplayUnits,
    #[serde(default)]
    pub discrimination: Option<DiscriminationConfig>,
    #[serde(default)]
    pub save_traces: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("qns-out")
}

fn default_edge_sigma() -> f64 {
    12.0
}

/// Drive amplitudes or target Rabi frequencies.
#[derive(Debug, Clone, PartialEq)]
pub enum Grid {
    Amplitude(Vec<f64>),
    Frequency(Vec<f64>),
}

impl Grid {
    pub fn len(&self) -> usize {
        match self {
            Grid::Amplitude(v) | Grid::Frequency(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl CampaignConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: CampaignConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn grid(&self) -> Grid {
        match (&self.amplitude_grid, &self.frequency_grid) {
            (Some(a), None) => Grid::Amplitude(a.clone()),
            (None, Some(f)) => Grid::Frequency(f.clone()),
            _ => unreachable!("validated"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        self.sensor.validate().map_err(|e| CliError::Config(e.to_string()))?;
        match (&self.amplitude_grid, &self.frequency_grid) {
            (Some(_), Some(_)) | (None, None) => {
                return bad("exactly one of amplitude_grid and frequency_grid is required".into())
            }
            (Some(g), None) | (None, Some(g)) => {
                if g.is_empty() {
                    return bad("grid is empty".into());
                }
                if g.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                    return bad("grid values must be positive".into());
                }
            }
        }
        if self.target_pairs.is_empty() {
            return bad("target_pairs is empty".into());
        }
        for &t in &self.target_pairs {
            if t == 0 || t >= self.sensor.num_levels {
                return bad(format!(
                    "target pair {t} outside 1..{}",
                    self.sensor.num_levels - 1
                ));
            }
        }
        if self.ensemble == 0 {
            return bad("ensemble must be at least 1".into());
        }
        for d in [&self.durations, &self.absence_durations] {
            match d {
                Durations::List(v) => {
                    if v.len() < 6 {
                        return bad("at least 6 durations are needed for a fit".into());
                    }
                    if v.iter().any(|x| !(x.is_finite() && *x >= 0.0))
                        || v.windows(2).any(|w| w[1] <= w[0])
                    {
                        return bad("durations must be non-negative and increasing".into());
                    }
                }
                Durations::Auto(a) => {
                    if a.points < 6 || !(a.decays > 0.0) || !(a.min_span > 0.0 && a.max_span >= a.min_span) {
                        return bad("automatic durations need points >= 6 and positive spans".into());
                    }
                }
            }
        }
        if self.t1_rates.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return bad("t1_rates must be non-negative".into());
        }
        if !(self.synthesis.fundamental > 0.0) {
            return bad("synthesis.fundamental must be positive".into());
        }
        if !(self.edge_sigma > 0.0) {
            return bad("edge_sigma must be positive".into());
        }
        for (i, s) in self.noise_sources.iter().enumerate() {
            let check = match s {
                NoiseSource::Flux { psd, .. } | NoiseSource::Direct { psd, .. } => psd.validate(),
                NoiseSource::Photon { photon } => photon.validate(),
            };
            check.map_err(|e| CliError::Config(format!("noise source {i}: {e}")))?;
        }
        if let Some(r) = self.reference_source {
            if r >= self.noise_sources.len() {
                return bad(format!("reference_source {r} does not exist"));
            }
        }
        if self.discrimination.is_some()
            && !(self.target_pairs.contains(&1) && self.target_pairs.contains(&2))
        {
            return bad("discrimination needs target pairs 1 and 2".into());
        }
        Ok(())
    }

    /// Canonical JSON used for hashing.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn minimal() -> String {
        serde_json::json!({
            "sensor": TransmonSpec::reference(),
            "target_pairs": [1],
            "frequency_grid": [5.0, 6.0],
            "noise_sources": [
                {"kind": "flux", "psd": {"shape": "lorentzian", "power": 1e-9, "center": 6.0, "hwhm": 2.0}}
            ],
            "ensemble": 4,
            "seeds": {"base": 7},
            "output_dir": "out"
        })
        .to_string()
    }

    #[test]
    fn parses_with_defaults() {
        let c = CampaignConfig::from_json(&minimal()).unwrap();
        assert_eq!(c.grid(), Grid::Frequency(vec![5.0, 6.0]));
        assert!(c.synthesis.rayleigh);
        assert_eq!(c.edge_sigma, 12.0);
        assert!(matches!(c.durations, Durations::Auto(_)));
    }

    #[test]
    fn rejects_both_grids() {
        let mut v: serde_json::Value = serde_json::from_str(&minimal()).unwrap();
        v["amplitude_grid"] = serde_json::json!([1.0]);
        assert!(CampaignConfig::from_json(&v.to_string()).is_err());
        v.as_object_mut().unwrap().remove("amplitude_grid");
        v.as_object_mut().unwrap().remove("frequency_grid");
        assert!(CampaignConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn rejects_bad_targets_and_durations() {
        let mut v: serde_json::Value = serde_json::from_str(&minimal()).unwrap();
        v["target_pairs"] = serde_json::json!([7]);
        assert!(CampaignConfig::from_json(&v.to_string()).is_err());
        v["target_pairs"] = serde_json::json!([1]);
        v["durations"] = serde_json::json!([0.0, 1.0, 2.0]);
        assert!(CampaignConfig::from_json(&v.to_string()).is_err());
        v["durations"] = serde_json::json!([0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(CampaignConfig::from_json(&v.to_string()).is_ok());
    }

    #[test]
    fn auto_grid_scales_with_rate() {
        let d = Durations::default();
        let g = d.grid(1.0);
        assert_eq!(g.len(), 12);
        assert!((g[11] - 3.0).abs() < 1e-12);
        assert!((d.grid(0.0)[11] - 400.0).abs() < 1e-9);
        assert!((d.grid(1e3)[11] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn missing_seeds_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&minimal()).unwrap();
        v.as_object_mut().unwrap().remove("seeds");
        assert!(CampaignConfig::from_json(&v.to_string()).is_err());
    }
}
