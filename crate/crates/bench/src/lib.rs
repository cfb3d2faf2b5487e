//! Shared fixtures for the benchmarks.

use nalgebra::DMatrix;
use qns_core::{build_rwa_hamiltonian, solve_levels, DriveSpec, LevelStructure, TransmonSpec};

pub fn reference_levels() -> LevelStructure {
    solve_levels(&TransmonSpec::reference()).expect("reference sensor solves")
}

/// RWA Hamiltonian of the reference sensor locked on `target` at `amplitude` MHz.
pub fn lock_hamiltonian(levels: &LevelStructure, target: usize, amplitude: f64) -> DMatrix<f64> {
    build_rwa_hamiltonian(levels, &DriveSpec::resonant(levels, target, amplitude)).expect("valid drive")
}
