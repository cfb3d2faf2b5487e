//! Multi-level spin-locking noise spectroscopy.
//!
//! The crate covers the full chain from circuit parameters to reconstructed
//! lab-frame noise spectra:
//!
//! * [`sensor`]: transmon level structure, drive ratios, flux sensitivities.
//! * [`dressing`]: RWA dressed frame, Rabi splittings, participation ratios.
//! * [`noise`]: target spectra, waveform synthesis, level couplings.
//! * [`dynamics`]: spin-locking sequence and Rabi simulations.
//! * [`reconstruction`]: decay fits, PSD extraction, corrections, source
//!   discrimination.
//!
//! Units: frequencies in MHz, times in μs, rates in 1/μs.

pub mod error;
pub mod sensor;

pub use error::{QnsError, Result};
pub use sensor::{flux_sensitivity, solve_levels, LevelStructure, TransmonSpec};
pub mod dressing;
pub mod dynamics;
pub mod noise;
pub mod reconstruction;

pub use dressing::{
    build_rwa_hamiltonian, dress, effective_t1, leakage_rate, pump_probe_spectrum, rabi_curve,
    DressedFrame, DriveSpec, RabiCurve,
};
pub use dynamics::{simulate_rabi, simulate_sequence, DecayTrace, SequenceSpec};
pub use noise::{NoisePsdSpec, PhotonNoiseSpec};
pub use reconstruction::{
    correct_estimate, discriminate_sources, extract_transverse_psd, fit_decay, PsdEstimate,
    RelaxationFit,
};
