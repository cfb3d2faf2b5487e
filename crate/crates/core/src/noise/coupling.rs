//! Mapping a scalar noise record onto per-level energy fluctuations.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::synth::{interpolate, NoiseWaveform};
use crate::error::{QnsError, Result};

/// How a scalar record x(t) shifts the sensor levels, `B^(k) = c_k x(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum CouplingModel {
    /// x = δΦ (Φ₀), `c_k = 2π ∂ω^(k)/∂Φ` with sensitivities for k = 1..d-1.
    Flux { flux_sens: Vec<f64> },
    /// x = δn (photons), `c_k = 2π·2·Σ_{m≤k} χ^(m-1,m)`.
    Photon { chi: Vec<f64> },
    /// Explicit `c_k` (rad/μs per unit x) for k = 1..d-1.
    Direct { weights: Vec<f64> },
}

impl CouplingModel {
    /// `c_k` for k = 0..d-1, with `c_0 = 0`.
    pub fn level_weights(&self, num_levels: usize) -> Result<Vec<f64>> {
        let need = num_levels - 1;
        let list = match self {
            CouplingModel::Flux { flux_sens } => flux_sens,
            CouplingModel::Photon { chi } => chi,
            CouplingModel::Direct { weights } => weights,
        };
        if list.len() < need {
            return Err(QnsError::CouplingLength {
                got: list.len(),
                need,
            });
        }
        let mut out = vec![0.0; num_levels];
        match self {
            CouplingModel::Flux { flux_sens } => {
                for k in 1..num_levels {
                    out[k] = 2.0 * PI * flux_sens[k - 1];
                }
            }
            CouplingModel::Photon { chi } => {
                let mut acc = 0.0;
                for k in 1..num_levels {
                    acc += chi[k - 1];
                    out[k] = 2.0 * PI * 2.0 * acc;
                }
            }
            CouplingModel::Direct { weights } => {
                out[1..num_levels].copy_from_slice(&weights[..need]);
            }
        }
        Ok(out)
    }
}

/// Per-level noise `B^(k)(t)` (rad/μs) on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelNoise {
    pub sample_rate: f64,
    /// `series[k]` is `B^(k)`; level 0 is identically zero.
    pub series: Vec<Vec<f64>>,
}

impl LevelNoise {
    pub fn zeros(num_levels: usize, sample_rate: f64, len: usize) -> Self {
        LevelNoise {
            sample_rate,
            series: vec![vec![0.0; len]; num_levels],
        }
    }

    pub fn num_levels(&self) -> usize {
        self.series.len()
    }

    pub fn len(&self) -> usize {
        self.series.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }

    /// `B^(k)(t)` by linear interpolation.
    pub fn value(&self, k: usize, t: f64) -> f64 {
        interpolate(&self.series[k], self.sample_rate, t)
    }

    /// Sum of two noise sources on the same grid.
    pub fn add(&mut self, other: &LevelNoise) -> Result<()> {
        if other.num_levels() != self.num_levels()
            || other.len() != self.len()
            || other.sample_rate != self.sample_rate
        {
            return Err(QnsError::InvalidParameter(
                "level noise sources must share levels, length and sample rate".into(),
            ));
        }
        for (a, b) in self.series.iter_mut().zip(&other.series) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }
}

pub fn level_noise_series(
    waveform: &NoiseWaveform,
    model: &CouplingModel,
    num_levels: usize,
) -> Result<LevelNoise> {
    let w = model.level_weights(num_levels)?;
    Ok(LevelNoise {
        sample_rate: waveform.sample_rate,
        series: w
            .iter()
            .map(|c| waveform.samples.iter().map(|x| c * x).collect())
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::psd::NoisePsdSpec;
    use crate::noise::synth::{synthesize, SynthesisOptions};

    fn wave() -> NoiseWaveform {
        let opts = SynthesisOptions {
            duration: 2.0,
            fundamental: 0.5,
            ..Default::default()
        };
        synthesize(&NoisePsdSpec::boxcar(1.0, 1.0, 20.0), &opts, 4).unwrap()
    }

    #[test]
    fn zero_flux_zero_noise() {
        let mut w = wave();
        w.samples.iter_mut().for_each(|x| *x = 0.0);
        let m = CouplingModel::Flux {
            flux_sens: vec![-3480.0, -6994.0, -10565.0, -14560.0],
        };
        let ln = level_noise_series(&w, &m, 5).unwrap();
        assert!(ln.series.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn flux_ratio_pointwise() {
        let w = wave();
        let m = CouplingModel::Flux {
            flux_sens: vec![-3480.0, -6994.0, -10565.0, -14560.0],
        };
        let ln = level_noise_series(&w, &m, 5).unwrap();
        assert!(ln.series[0].iter().all(|&x| x == 0.0));
        for i in 0..ln.len() {
            if ln.series[1][i].abs() > 1e-9 {
                assert!((ln.series[2][i] / ln.series[1][i] - 6994.0 / 3480.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn photon_transition_ratio() {
        let w = wave();
        let m = CouplingModel::Photon {
            chi: vec![0.115, 0.146, 0.146, 0.146],
        };
        let ln = level_noise_series(&w, &m, 5).unwrap();
        for i in 0..ln.len() {
            let d01 = ln.series[1][i] - ln.series[0][i];
            let d12 = ln.series[2][i] - ln.series[1][i];
            if d01.abs() > 1e-9 {
                assert!((d12 / d01 - 0.146 / 0.115).abs() < 1e-12);
            }
        }
        assert!((0.146f64 / 0.115 - 1.27).abs() < 1e-2);
    }

    #[test]
    fn short_coupling_list() {
        let m = CouplingModel::Photon { chi: vec![0.1] };
        assert!(matches!(
            m.level_weights(5),
            Err(QnsError::CouplingLength { got: 1, need: 4 })
        ));
    }

    #[test]
    fn sources_add() {
        let w = wave();
        let a = level_noise_series(&w, &CouplingModel::Direct { weights: vec![1.0, 2.0] }, 3)
            .unwrap();
        let mut b = a.clone();
        b.add(&a).unwrap();
        assert_eq!(b.series[2][5], 2.0 * a.series[2][5]);
        let short = LevelNoise::zeros(3, a.sample_rate, 3);
        assert!(b.add(&short).is_err());
    }
}
