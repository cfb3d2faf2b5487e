//! Noise spectra, waveform synthesis and level couplings.

pub mod coupling;
pub mod psd;
pub mod synth;
pub mod welch;

pub use coupling::{level_noise_series, CouplingModel, LevelNoise};
pub use psd::{photon_number_psd, photon_psd, NoisePsdSpec, PhotonNoiseSpec};
pub use synth::{synthesize, NoiseWaveform, SynthesisOptions};
pub use welch::{welch, Welch, WelchEstimate};
