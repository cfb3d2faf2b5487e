//! From decay traces to lab-frame noise spectra.

pub mod correct;
pub mod discriminate;
pub mod extract;
pub mod fit;

pub use correct::{correct_estimate, CorrectionFlags, DisplayUnits, PointFlags, PsdEstimate, PsdPoint};
pub use discriminate::{discriminate_sources, discriminate_sources_jackknife, SourceComponents};
pub use extract::{extract_transverse_psd, locked_rates, spectrum_from_rates, TransverseEstimate};
pub use fit::{fit_decay, fit_exponential, fit_replicates, jackknife_sigma, RelaxationFit};
