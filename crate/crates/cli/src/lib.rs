//! Campaign runner and table generator for spin-locking noise spectroscopy.

pub mod campaign;
pub mod config;
pub mod error;
pub mod output;
pub mod tabulate;

pub use campaign::{execute, CampaignResult, PointResult, RunOptions};
pub use config::{CampaignConfig, NoiseSource};
pub use error::{CliError, Result};
pub use output::{write_campaign, Manifest};
pub use tabulate::{tabulate, Table, TabulateConfig};

use std::path::{Path, PathBuf};

/// Execute a campaign and write its outputs. `out` overrides the
/// configured directory.
pub fn run_campaign(cfg: &CampaignConfig, opts: &RunOptions, out: Option<&Path>) -> Result<(CampaignResult, Manifest, PathBuf)> {
    let result = execute(cfg, opts)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.clone());
    let manifest = write_campaign(&result, &dir)?;
    Ok((result, manifest, dir))
}
