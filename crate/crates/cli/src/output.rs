//! Result files and the campaign manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::campaign::{CampaignResult, PointResult};
use crate::error::Result;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub seed_offset: u64,
    pub seed_rule: String,
    pub transitions_mhz: Vec<f64>,
    pub discrimination_ratio: Option<f64>,
    pub points: Vec<PointResult>,
    pub warnings: Vec<String>,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects files in memory so they can be hashed and written in order.
#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(String, Vec<u8>)>,
}

impl OutputSet {
    pub fn add(&mut self, path: impl Into<String>, content: impl Into<Vec<u8>>) {
        self.files.push((path.into(), content.into()));
    }

    pub fn entries(&self) -> Vec<FileEntry> {
        self.files
            .iter()
            .map(|(p, c)| FileEntry {
                path: p.clone(),
                sha256: sha256_hex(c),
                bytes: c.len(),
            })
            .collect()
    }

    pub fn write_all(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for (p, c) in &self.files {
            let path = dir.join(p);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(&path, c)?;
            out.push(path);
        }
        Ok(out)
    }
}

/// All result files of a campaign, excluding the manifest.
pub fn campaign_files(result: &CampaignResult) -> OutputSet {
    let mut set = OutputSet::default();
    set.add("summary.csv", result.summary_csv());
    for (t, e) in &result.estimates {
        set.add(format!("psd_target{t}.csv"), e.to_csv());
        set.add(format!("psd_target{t}.json"), e.to_json());
    }
    if let Some(c) = &result.discrimination {
        set.add("discrimination.csv", c.to_csv());
    }
    if result.config.save_traces {
        for p in &result.points {
            if let Some(t) = &p.presence_trace {
                set.add(format!("traces/target{}_point{}_presence.csv", p.target, p.index), t.to_csv());
            }
            if let Some(t) = &p.absence_trace {
                set.add(format!("traces/target{}_point{}_absence.csv", p.target, p.index), t.to_csv());
            }
        }
    }
    set
}

pub fn build_manifest(result: &CampaignResult, files: &OutputSet) -> Manifest {
    let canonical = result.config.canonical_json();
    Manifest {
        tool: "qns".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: sha256_hex(canonical.as_bytes()),
        config: serde_json::from_str(&canonical).expect("canonical config is JSON"),
        seed_offset: result.seed_offset,
        seed_rule: "base + seed_offset + (point * num_sources + source) * 2^32 + realization".into(),
        transitions_mhz: (1..result.levels.num_levels())
            .map(|j| result.levels.transition(j))
            .collect(),
        discrimination_ratio: result.discrimination_ratio,
        points: result.points.clone(),
        warnings: result.warnings.clone(),
        files: files.entries(),
    }
}

/// Write all files plus `manifest.json` into `dir`.
pub fn write_campaign(result: &CampaignResult, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let files = campaign_files(result);
    files.write_all(dir)?;
    let manifest = build_manifest(result, &files);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(dir.join(MANIFEST), text)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn entries_follow_insertion_order() {
        let mut s = OutputSet::default();
        s.add("b.csv", "1");
        s.add("a.csv", "22");
        let e = s.entries();
        assert_eq!(e[0].path, "b.csv");
        assert_eq!(e[1].bytes, 2);
    }
}
