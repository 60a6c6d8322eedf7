//! JSON documents exchanged with the outside world: trial manifests, feature
//! manifests written by external extractors, and human response logs.
//!
//! Paths inside a manifest are relative to the manifest's own directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featnet::NetDescriptor;
use crate::oddity::TRIAL_SIZE;
use crate::synth::SynthesisConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    pub pre_delay_ms: u32,
    pub display_ms: u32,
    pub response_extra_ms: u32,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            pre_delay_ms: 300,
            display_ms: 800,
            response_extra_ms: 1200,
        }
    }
}

impl Timing {
    /// Response budget measured from image onset.
    pub fn decision_window_ms(&self) -> f64 {
        f64::from(self.display_ms) + f64::from(self.response_extra_ms)
    }
}

pub const DEFAULT_BREAK_EVERY: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialKind {
    Standard,
    Catch,
}

/// One trial of a manifest. `images` are in presentation-slot order;
/// `permutation[slot]` names the canonical member shown in that slot, where the
/// canonical order is `[original, variant, variant]` for standard trials and
/// `[original, mirror, variant]` for catch trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub trial_id: u64,
    pub is_catch: bool,
    pub images: [String; TRIAL_SIZE],
    pub odd_index: usize,
    pub permutation: [usize; TRIAL_SIZE],
    pub source_image: String,
    /// Synthesis seeds of the distorted members, in canonical order.
    pub synthesis_seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedTrial {
    /// Trial key before renumbering.
    pub key: u64,
    pub kind: TrialKind,
    pub source_image: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialManifest {
    pub session_id: String,
    pub generator_seed: u64,
    pub fast_mode: bool,
    /// `[width, height]` at which every stimulus was synthesized.
    pub resolution: [usize; 2],
    pub net: NetDescriptor,
    pub synthesis: SynthesisConfig,
    pub timing: Timing,
    pub break_every: usize,
    pub trials: Vec<TrialEntry>,
    #[serde(default)]
    pub skipped: Vec<SkippedTrial>,
}

impl TrialManifest {
    pub fn n_standard(&self) -> usize {
        self.trials.iter().filter(|t| !t.is_catch).count()
    }

    pub fn n_catch(&self) -> usize {
        self.trials.iter().filter(|t| t.is_catch).count()
    }

    pub fn trial(&self, id: u64) -> Option<&TrialEntry> {
        self.trials.iter().find(|t| t.trial_id == id)
    }

    /// Structural checks a loaded manifest must pass.
    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.trials.iter().enumerate() {
            if t.trial_id != i as u64 {
                return Err(Error::config(format!(
                    "trial ids not dense at position {i}"
                )));
            }
            let mut seen = [false; TRIAL_SIZE];
            for &p in &t.permutation {
                if p >= TRIAL_SIZE || std::mem::replace(&mut seen[p], true) {
                    return Err(Error::config(format!(
                        "trial {}: invalid permutation",
                        t.trial_id
                    )));
                }
            }
            if t.odd_index >= TRIAL_SIZE {
                return Err(Error::config(format!(
                    "trial {}: odd index out of range",
                    t.trial_id
                )));
            }
        }
        Ok(())
    }
}

/// One extracted-feature entry: a DTF path per presentation slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub trial_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<usize>,
    pub slots: [String; TRIAL_SIZE],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    pub entries: Vec<FeatureEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub trial_id: u64,
    /// Chosen slot, or `null` on timeout.
    pub response_slot: Option<usize>,
    /// Milliseconds from image onset, or `null` on timeout.
    pub rt_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseLog {
    pub session_id: String,
    pub subject_id: String,
    pub responses: Vec<Response>,
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::from(e).at(path))?;
    serde_json::from_str(&text).map_err(|e| Error::from(e).at(path))
}

/// Pretty JSON with a trailing newline; field order follows declaration order.
pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::from(e).at(path))
}

/// Resolve a manifest-relative path.
pub fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// The directory a manifest path is relative to.
pub fn base_dir(manifest_path: &Path) -> PathBuf {
    manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timing_defaults() {
        let t = Timing::default();
        assert_eq!(
            (t.pre_delay_ms, t.display_ms, t.response_extra_ms),
            (300, 800, 1200)
        );
        assert_eq!(t.decision_window_ms(), 2000.0);
    }

    #[test]
    fn response_log_schema() {
        let text = r#"{"session_id":"s","subject_id":"p1","responses":[
            {"trial_id":0,"response_slot":2,"rt_ms":640.5},
            {"trial_id":1,"response_slot":null,"rt_ms":null}]}"#;
        let log: ResponseLog = serde_json::from_str(text).unwrap();
        assert_eq!(log.responses[0].response_slot, Some(2));
        assert_eq!(log.responses[1].rt_ms, None);
        let back: ResponseLog =
            serde_json::from_str(&serde_json::to_string(&log).unwrap()).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn feature_manifest_optional_coordinates() {
        let text = r#"{"model":"m","entries":[
            {"trial_id":3,"slots":["a.dtf","b.dtf","c.dtf"]},
            {"trial_id":3,"layer":1,"head":4,"slots":["a1.dtf","b1.dtf","c1.dtf"]}]}"#;
        let fm: FeatureManifest = serde_json::from_str(text).unwrap();
        assert_eq!(fm.entries[0].layer, None);
        assert_eq!(
            (fm.entries[1].layer, fm.entries[1].head),
            (Some(1), Some(4))
        );
        let json = serde_json::to_string(&fm).unwrap();
        assert!(!json.contains("notes") && !json.contains("\"layer\":null"));
    }

    #[test]
    fn resolve_relative_and_absolute() {
        assert_eq!(
            resolve(Path::new("/m"), "x/a.ppm"),
            PathBuf::from("/m/x/a.ppm")
        );
        assert_eq!(
            resolve(Path::new("/m"), "/abs.ppm"),
            PathBuf::from("/abs.ppm")
        );
        assert_eq!(base_dir(Path::new("manifest.json")), PathBuf::from(""));
    }
}
