//! Static curve tables from the dressing engine.

use std::path::Path;

use qns_core::dressing::{dress_sweep, pump_probe_spectrum};
use qns_core::{solve_levels, DriveSpec, LevelStructure, TransmonSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Table {
    Rabi,
    Participation,
    Pumpprobe,
}

impl Table {
    pub fn name(self) -> &'static str {
        match self {
            Table::Rabi => "rabi",
            Table::Participation => "participation",
            Table::Pumpprobe => "pumpprobe",
        }
    }
}

impl std::str::FromStr for Table {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rabi" => Ok(Table::Rabi),
            "participation" => Ok(Table::Participation),
            "pumpprobe" => Ok(Table::Pumpprobe),
            other => Err(CliError::Config(format!("unknown table {other}"))),
        }
    }
}

/// Amplitude sweep for one sensor. Either `amplitudes` or
/// `amplitude_max`/`amplitude_step` must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulateConfig {
    pub sensor: TransmonSpec,
    #[serde(default = "default_targets")]
    pub target_pairs: Vec<usize>,
    #[serde(default)]
    pub amplitudes: Option<Vec<f64>>,
    #[serde(default)]
    pub amplitude_max: Option<f64>,
    #[serde(default)]
    pub amplitude_step: Option<f64>,
    /// Keep only the lowest `truncate` levels (at least 2).
    #[serde(default)]
    pub truncate: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<std::path::PathBuf>,
}

fn default_targets() -> Vec<usize> {
    vec![1, 2]
}

impl TabulateConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Campaign configs are accepted too; unknown fields are ignored.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn amplitudes(&self) -> Result<Vec<f64>> {
        if let Some(a) = &self.amplitudes {
            let mut a = a.clone();
            a.sort_by(f64::total_cmp);
            return Ok(a);
        }
        let max = self.amplitude_max.unwrap_or(300.0);
        let step = self.amplitude_step.unwrap_or(1.0);
        if !(max > 0.0 && step > 0.0) {
            return Err(CliError::Config("amplitude_max and amplitude_step must be positive".into()));
        }
        let n = (max / step).round() as usize;
        Ok((0..=n).map(|i| i as f64 * step).collect())
    }
}

/// `A_drive_MHz,lambda_A_MHz,Omega_MHz,shift_MHz` for one target.
pub fn rabi_table(levels: &LevelStructure, target: usize, amplitudes: &[f64]) -> Result<String> {
    let drive = DriveSpec::resonant(levels, target, 0.0);
    let frames = dress_sweep(levels, &drive, amplitudes)?;
    let lambda = levels.drive_ratios[target - 1];
    let mut s = String::from("A_drive_MHz,lambda_A_MHz,Omega_MHz,shift_MHz\n");
    for f in &frames {
        let naive = lambda * f.amplitude;
        s.push_str(&format!("{},{},{},{}\n", f.amplitude, naive, f.rabi, f.rabi - naive));
    }
    Ok(s)
}

/// `A_drive_MHz,Omega_MHz,alpha_0..,beta_0..` for one target.
pub fn participation_table(levels: &LevelStructure, target: usize, amplitudes: &[f64]) -> Result<String> {
    let drive = DriveSpec::resonant(levels, target, 0.0);
    let frames = dress_sweep(levels, &drive, amplitudes)?;
    let d = levels.num_levels();
    let mut s = String::from("A_drive_MHz,Omega_MHz");
    for k in 0..d {
        s.push_str(&format!(",alpha_{k}"));
    }
    for k in 0..d {
        s.push_str(&format!(",beta_{k}"));
    }
    s.push('\n');
    for f in &frames {
        s.push_str(&format!("{},{}", f.amplitude, f.rabi));
        for a in &f.alpha {
            s.push_str(&format!(",{a}"));
        }
        for b in &f.beta {
            s.push_str(&format!(",{b}"));
        }
        s.push('\n');
    }
    Ok(s)
}

/// `kind,from,to,A_drive_MHz,frequency_MHz,weight`, one row per branch point.
pub fn pumpprobe_table(levels: &LevelStructure, target: usize, amplitudes: &[f64]) -> Result<String> {
    let drive = DriveSpec::resonant(levels, target, 0.0);
    let branches = pump_probe_spectrum(levels, &drive, amplitudes)?;
    let mut s = String::from("kind,from,to,A_drive_MHz,frequency_MHz,weight\n");
    for b in &branches {
        let kind = serde_json::to_value(b.kind).expect("kind serializes");
        let kind = kind.as_str().unwrap_or("unknown");
        for ((a, f), w) in b.points.iter().zip(&b.weights) {
            s.push_str(&format!("{kind},{},{},{a},{f},{w}\n", b.from, b.to));
        }
    }
    Ok(s)
}

/// One CSV per target pair, named `<table>_target<j>.csv`.
pub fn tabulate(table: Table, cfg: &TabulateConfig) -> Result<Vec<(String, String)>> {
    cfg.sensor.validate()?;
    let mut levels = solve_levels(&cfg.sensor)?;
    if let Some(d) = cfg.truncate {
        if d < 2 || d > levels.num_levels() {
            return Err(CliError::Config(format!("cannot truncate to {d} levels")));
        }
        levels = levels.truncated(d);
    }
    let amps = cfg.amplitudes()?;
    let mut out = Vec::new();
    for &t in &cfg.target_pairs {
        if t == 0 || t >= levels.num_levels() {
            return Err(CliError::Config(format!("target pair {t} out of range")));
        }
        let csv = match table {
            Table::Rabi => rabi_table(&levels, t, &amps)?,
            Table::Participation => participation_table(&levels, t, &amps)?,
            Table::Pumpprobe => pumpprobe_table(&levels, t, &amps)?,
        };
        out.push((format!("{}_target{t}.csv", table.name()), csv));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(csv: &str) -> Vec<Vec<f64>> {
        csv.lines()
            .skip(1)
            .map(|l| l.split(',').map(|x| x.parse().unwrap_or(f64::NAN)).collect())
            .collect()
    }

    #[test]
    fn two_level_rabi_equals_amplitude() {
        let cfg = TabulateConfig {
            sensor: TransmonSpec::reference(),
            target_pairs: vec![1],
            amplitudes: Some(vec![0.0, 10.0, 100.0, 300.0]),
            amplitude_max: None,
            amplitude_step: None,
            truncate: Some(2),
            output_dir: None,
        };
        let csv = &tabulate(Table::Rabi, &cfg).unwrap()[0].1;
        for r in rows(&csv) {
            assert!((r[2] - r[0]).abs() < 1e-9 * r[0].max(1.0), "{r:?}");
        }
    }

    #[test]
    fn participation_small_drive_limit() {
        let lv = solve_levels(&TransmonSpec::reference()).unwrap();
        let csv = participation_table(&lv, 1, &[1e-3]).unwrap();
        let r = &rows(&csv)[0];
        let alpha: Vec<f64> = r[2..7].iter().map(|x| x.abs()).collect();
        assert!((alpha[0] - 0.5).abs() < 1e-3 && (alpha[1] - 0.5).abs() < 1e-3);
        assert!(alpha[2..].iter().all(|a| *a < 1e-3));
    }

    #[test]
    fn pumpprobe_zero_drive_is_bare() {
        let lv = solve_levels(&TransmonSpec::reference()).unwrap();
        let csv = pumpprobe_table(&lv, 1, &[0.0]).unwrap();
        let bare: Vec<f64> = (1..5).map(|j| lv.transition(j)).collect();
        for line in csv.lines().skip(1) {
            let f: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
            let kind = line.split(',').next().unwrap();
            let near = bare.iter().any(|b| (b - f).abs() < 1e-6)
                || (kind == "two_photon" && (1..4).any(|j| (0.5 * (bare[j - 1] + bare[j]) - f).abs() < 1e-6));
            assert!(near, "{line}");
        }
    }

    #[test]
    fn amplitude_range() {
        let cfg = TabulateConfig {
            sensor: TransmonSpec::reference(),
            target_pairs: vec![1],
            amplitudes: None,
            amplitude_max: Some(10.0),
            amplitude_step: Some(2.5),
            truncate: None,
            output_dir: None,
        };
        assert_eq!(cfg.amplitudes().unwrap(), vec![0.0, 2.5, 5.0, 7.5, 10.0]);
        assert_eq!(tabulate(Table::Rabi, &cfg).unwrap()[0].0, "rabi_target1.csv");
    }
}
