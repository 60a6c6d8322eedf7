//! Ingestion of externally extracted features (DTF files listed in a feature
//! manifest). Failures are isolated per trial and group.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Serialize;

use crate::dtf;
use crate::error::{Error, Result};
use crate::harness::manifest::{resolve, FeatureEntry, FeatureManifest, TrialManifest};
use crate::oddity::{GroupKey, TrialFeatures, TRIAL_SIZE};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrialError {
    pub trial_id: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct Ingested {
    /// Trials per `(model, layer, head)` group, each sorted by trial id.
    pub groups: BTreeMap<GroupKey, Vec<TrialFeatures>>,
    pub errors: Vec<TrialError>,
}

impl Ingested {
    pub fn n_trials(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }
}

fn load_entry(
    entry: &FeatureEntry,
    base: &Path,
    odd_index: usize,
    is_catch: bool,
) -> Result<TrialFeatures> {
    let mut vectors: Vec<Vec<f32>> = Vec::with_capacity(TRIAL_SIZE);
    for rel in &entry.slots {
        let path = resolve(base, rel);
        vectors.push(dtf::read(&path)?.into_data());
    }
    let lengths: Vec<usize> = vectors.iter().map(Vec::len).collect();
    if lengths.iter().any(|&l| l != lengths[0]) {
        return Err(Error::shape(format!(
            "flattened lengths {lengths:?} differ within the trial"
        )));
    }
    let [a, b, c]: [Vec<f32>; TRIAL_SIZE] = vectors.try_into().expect("three slots");
    TrialFeatures::new(entry.trial_id, [a, b, c], odd_index, is_catch)
}

/// Flatten every entry's tensors into trial features, grouped by layer/head.
/// Zero-norm vectors are kept; scoring marks those trials invalid.
pub fn ingest_features(tm: &TrialManifest, fm: &FeatureManifest, base: &Path) -> Ingested {
    let truth: BTreeMap<u64, (usize, bool)> = tm
        .trials
        .iter()
        .map(|t| (t.trial_id, (t.odd_index, t.is_catch)))
        .collect();
    let mut out = Ingested::default();
    let mut seen = BTreeSet::new();
    for entry in &fm.entries {
        let fail = |message: String| TrialError {
            trial_id: entry.trial_id,
            layer: entry.layer,
            head: entry.head,
            message,
        };
        let Some(&(odd, is_catch)) = truth.get(&entry.trial_id) else {
            out.errors
                .push(fail("trial id not in the trial manifest".into()));
            continue;
        };
        if !seen.insert((entry.trial_id, entry.layer, entry.head)) {
            out.errors.push(fail("duplicate entry".into()));
            continue;
        }
        match load_entry(entry, base, odd, is_catch) {
            Ok(t) => {
                let key = GroupKey {
                    model: Some(fm.model.clone()),
                    layer: entry.layer,
                    head: entry.head,
                    subject: None,
                };
                out.groups.entry(key).or_default().push(t);
            }
            Err(e) => out.errors.push(fail(e.to_string())),
        }
    }
    for trials in out.groups.values_mut() {
        trials.sort_by_key(|t| t.trial_id);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    pub(crate) fn write_vec(dir: &Path, name: &str, v: &[f32]) -> String {
        dtf::write(
            &Tensor::new(vec![v.len()], v.to_vec()).unwrap(),
            dir.join(name),
        )
        .unwrap();
        name.to_string()
    }

    fn manifest(n: u64) -> TrialManifest {
        use crate::harness::manifest::*;
        TrialManifest {
            session_id: "s".into(),
            generator_seed: 0,
            fast_mode: false,
            resolution: [8, 8],
            net: crate::featnet::FeatureNet::new(Default::default(), 0)
                .unwrap()
                .descriptor(),
            synthesis: Default::default(),
            timing: Timing::default(),
            break_every: DEFAULT_BREAK_EVERY,
            trials: (0..n)
                .map(|i| TrialEntry {
                    trial_id: i,
                    is_catch: false,
                    images: ["a".into(), "b".into(), "c".into()],
                    odd_index: 1,
                    permutation: [1, 0, 2],
                    source_image: "x.ppm".into(),
                    synthesis_seeds: vec![],
                })
                .collect(),
            skipped: vec![],
        }
    }

    #[test]
    fn isolation_and_grouping() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        let mut entries = Vec::new();
        for t in 0..3u64 {
            for head in 0..2 {
                let slots = [0, 1, 2].map(|s| {
                    let len = if t == 1 && head == 0 && s == 2 { 3 } else { 2 };
                    write_vec(
                        d,
                        &format!("t{t}h{head}s{s}.dtf"),
                        &vec![1.0 + s as f32; len],
                    )
                });
                entries.push(FeatureEntry {
                    trial_id: t,
                    layer: Some(0),
                    head: Some(head),
                    slots,
                });
            }
        }
        entries.push(FeatureEntry {
            trial_id: 9,
            layer: Some(0),
            head: Some(0),
            slots: ["a".into(), "b".into(), "c".into()],
        });
        entries.push(entries[0].clone());
        let mut missing = entries[2].clone();
        missing.trial_id = 2;
        missing.head = Some(5);
        missing.slots[0] = "nope.dtf".into();
        entries.push(missing);

        let fm = FeatureManifest {
            model: "m".into(),
            notes: None,
            entries,
        };
        let r = ingest_features(&manifest(3), &fm, d);
        assert_eq!(r.groups.len(), 2);
        let sizes: Vec<usize> = r.groups.values().map(Vec::len).collect();
        assert_eq!(sizes, vec![2, 3]);
        assert_eq!(r.errors.len(), 4);
        assert!(r
            .errors
            .iter()
            .any(|e| e.trial_id == 1 && e.message.contains("differ")));
        assert!(r.errors.iter().any(|e| e.trial_id == 9));
        assert!(r.errors.iter().any(|e| e.message == "duplicate entry"));
        assert!(r.errors.iter().any(|e| e.head == Some(5)));
        let first = &r.groups.values().next().unwrap()[0];
        assert_eq!(first.odd_index, 1);
        assert_eq!(first.features[2], vec![3.0, 3.0]);
    }
}
