//! The oddity metric: pairwise-cosine dissimilarity per trial, odd-one-out
//! selection, and accuracy aggregation for machine features and human logs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::manifest::{ResponseLog, TrialManifest};
use crate::tensor::cosine_distance;

/// Number of distorted variants per trial.
pub const N_DISTORTED: usize = 2;
pub const TRIAL_SIZE: usize = N_DISTORTED + 1;
/// Two-sided 95% normal quantile for the Wilson interval.
const Z95: f64 = 1.959_963_984_540_054;

/// Grouping coordinates carried through reports.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
}

impl GroupKey {
    pub fn model(name: impl Into<String>) -> Self {
        GroupKey {
            model: Some(name.into()),
            ..Default::default()
        }
    }

    pub fn subject(id: impl Into<String>) -> Self {
        GroupKey {
            subject: Some(id.into()),
            ..Default::default()
        }
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(m) = &self.model {
            parts.push(format!("model={m}"));
        }
        if let Some(l) = self.layer {
            parts.push(format!("layer={l}"));
        }
        if let Some(h) = self.head {
            parts.push(format!("head={h}"));
        }
        if let Some(s) = &self.subject {
            parts.push(format!("subject={s}"));
        }
        if parts.is_empty() {
            f.write_str("all")
        } else {
            f.write_str(&parts.join(";"))
        }
    }
}

/// One oddity trial: three feature vectors in presentation order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialFeatures {
    pub trial_id: u64,
    pub features: [Vec<f32>; TRIAL_SIZE],
    pub odd_index: usize,
    pub is_catch: bool,
}

impl TrialFeatures {
    /// Checks structure (index range, equal non-zero lengths). Zero-norm vectors
    /// are allowed here and make the trial invalid at scoring time.
    pub fn new(
        trial_id: u64,
        features: [Vec<f32>; TRIAL_SIZE],
        odd_index: usize,
        is_catch: bool,
    ) -> Result<Self> {
        if odd_index >= TRIAL_SIZE {
            return Err(Error::shape(format!("odd index {odd_index} out of range")));
        }
        let len = features[0].len();
        if len == 0 || features.iter().any(|f| f.len() != len) {
            return Err(Error::shape(format!(
                "trial {trial_id}: feature lengths {:?} differ or are empty",
                features.iter().map(Vec::len).collect::<Vec<_>>()
            )));
        }
        Ok(TrialFeatures {
            trial_id,
            features,
            odd_index,
            is_catch,
        })
    }
}

/// `D_i = Σ_{j≠i} cosine_distance(F_i, F_j) / N`
pub fn dissimilarity_scores(t: &TrialFeatures) -> Result<[f64; TRIAL_SIZE]> {
    let d01 = cosine_distance(&t.features[0], &t.features[1])?;
    let d02 = cosine_distance(&t.features[0], &t.features[2])?;
    let d12 = cosine_distance(&t.features[1], &t.features[2])?;
    let n = N_DISTORTED as f64;
    Ok([(d01 + d02) / n, (d01 + d12) / n, (d02 + d12) / n])
}

/// Argmax with ties resolved toward the lowest index.
pub fn select_odd(d: &[f64; TRIAL_SIZE]) -> usize {
    let mut best = 0;
    for i in 1..TRIAL_SIZE {
        if d[i] > d[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(d: &[f64; TRIAL_SIZE]) -> [f64; TRIAL_SIZE] {
    let m = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = d.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

/// Wilson score interval for `k` successes out of `n`, as percentages.
pub fn wilson_interval(k: usize, n: usize) -> [f64; 2] {
    if n == 0 {
        return [0.0, 100.0];
    }
    let (k, n) = (k as f64, n as f64);
    let p = k / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    [
        100.0 * (centre - half).max(0.0).min(p),
        100.0 * (centre + half).min(1.0).max(p),
    ]
}

/// Per-trial scoring record, one CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial_id: u64,
    pub is_catch: bool,
    pub selected: Option<usize>,
    pub correct: bool,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisrtReport {
    pub group: GroupKey,
    /// `100 · n_correct / n_valid` over valid non-catch trials.
    pub score: f64,
    pub n_correct: usize,
    pub n_valid: usize,
    pub n_invalid: usize,
    pub n_catch_excluded: usize,
    /// Accuracy on valid catch trials, when any were present.
    pub catch_score: Option<f64>,
    pub ci95: [f64; 2],
    pub trials: Vec<TrialOutcome>,
}

impl DisrtReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn csv_header() -> &'static str {
        "trial_id,group,selected,correct,valid\n"
    }

    /// Rows `trial_id,group,selected,correct,valid`; catch trials carry a `catch` suffix on the group.
    pub fn csv_rows(&self) -> String {
        let mut s = String::new();
        for t in &self.trials {
            let group = if t.is_catch {
                format!("{}/catch", self.group)
            } else {
                self.group.to_string()
            };
            let selected = t.selected.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                t.trial_id, group, selected, t.correct, t.valid
            ));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        format!("{}{}", Self::csv_header(), self.csv_rows())
    }
}

/// Fold of trial outcomes into a report. Outcomes are sorted by trial id on
/// `finish`, so push order does not matter.
#[derive(Debug, Clone)]
pub struct ReportBuilder {
    group: GroupKey,
    outcomes: Vec<TrialOutcome>,
}

impl ReportBuilder {
    pub fn new(group: GroupKey) -> Self {
        ReportBuilder {
            group,
            outcomes: Vec::new(),
        }
    }

    pub fn push(&mut self, outcome: TrialOutcome) {
        self.outcomes.push(outcome);
    }

    pub fn push_invalid(&mut self, trial_id: u64, is_catch: bool) {
        self.push(TrialOutcome {
            trial_id,
            is_catch,
            selected: None,
            correct: false,
            valid: false,
        });
    }

    /// Score a feature trial; degenerate features make it invalid.
    pub fn push_trial(&mut self, t: &TrialFeatures) {
        self.push(score_one(t));
    }

    pub fn finish(mut self) -> Result<DisrtReport> {
        self.outcomes.sort_by_key(|o| (o.trial_id, o.is_catch));
        let main: Vec<&TrialOutcome> = self.outcomes.iter().filter(|o| !o.is_catch).collect();
        let n_valid = main.iter().filter(|o| o.valid).count();
        let n_invalid = main.len() - n_valid;
        if n_valid == 0 {
            return Err(Error::EmptyReport);
        }
        let n_correct = main.iter().filter(|o| o.valid && o.correct).count();
        let catches: Vec<&TrialOutcome> = self.outcomes.iter().filter(|o| o.is_catch).collect();
        let catch_valid = catches.iter().filter(|o| o.valid).count();
        let catch_score = (catch_valid > 0).then(|| {
            100.0 * catches.iter().filter(|o| o.valid && o.correct).count() as f64
                / catch_valid as f64
        });
        Ok(DisrtReport {
            group: self.group,
            score: 100.0 * n_correct as f64 / n_valid as f64,
            n_correct,
            n_valid,
            n_invalid,
            n_catch_excluded: catches.len(),
            catch_score,
            ci95: wilson_interval(n_correct, n_valid),
            trials: self.outcomes,
        })
    }
}

fn score_one(t: &TrialFeatures) -> TrialOutcome {
    match dissimilarity_scores(t) {
        Ok(d) => {
            let sel = select_odd(&d);
            TrialOutcome {
                trial_id: t.trial_id,
                is_catch: t.is_catch,
                selected: Some(sel),
                correct: sel == t.odd_index,
                valid: true,
            }
        }
        Err(_) => TrialOutcome {
            trial_id: t.trial_id,
            is_catch: t.is_catch,
            selected: None,
            correct: false,
            valid: false,
        },
    }
}

pub fn score_trials(trials: &[TrialFeatures]) -> Result<DisrtReport> {
    score_group(GroupKey::default(), trials)
}

pub fn score_group(group: GroupKey, trials: &[TrialFeatures]) -> Result<DisrtReport> {
    let mut b = ReportBuilder::new(group);
    for t in trials {
        b.push_trial(t);
    }
    b.finish()
}

/// Human scores: one report per subject and their unweighted mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanScore {
    pub subjects: Vec<DisrtReport>,
    /// Mean of the per-subject scores.
    pub pooled_score: f64,
    pub n_subjects: usize,
    /// Subjects left out of the pooled mean because none of their trials were valid.
    pub subjects_without_valid_trials: Vec<String>,
}

/// Score response logs against a manifest.
///
/// A response is valid when it names a slot and arrives within the manifest's
/// decision window (display + extra response time, measured from image onset).
/// Manifest trials with no response count as invalid.
pub fn score_human_log(manifest: &TrialManifest, logs: &[ResponseLog]) -> Result<HumanScore> {
    let trials: BTreeMap<u64, (usize, bool)> = manifest
        .trials
        .iter()
        .map(|t| (t.trial_id, (t.odd_index, t.is_catch)))
        .collect();
    let limit = manifest.timing.decision_window_ms();

    let mut per_subject: BTreeMap<String, ReportBuilder> = BTreeMap::new();
    for log in logs {
        if log.session_id != manifest.session_id {
            return Err(Error::LogIntegrity(format!(
                "log for session {:?} scored against manifest {:?}",
                log.session_id, manifest.session_id
            )));
        }
        if per_subject.contains_key(&log.subject_id) {
            return Err(Error::LogIntegrity(format!(
                "more than one log for subject {}",
                log.subject_id
            )));
        }
        let b = per_subject
            .entry(log.subject_id.clone())
            .or_insert_with(|| ReportBuilder::new(GroupKey::subject(&log.subject_id)));
        let mut seen = BTreeSet::new();
        for r in &log.responses {
            let &(odd, is_catch) = trials.get(&r.trial_id).ok_or_else(|| {
                Error::LogIntegrity(format!(
                    "subject {}: unknown trial id {}",
                    log.subject_id, r.trial_id
                ))
            })?;
            if !seen.insert(r.trial_id) {
                return Err(Error::LogIntegrity(format!(
                    "subject {}: duplicate response for trial {}",
                    log.subject_id, r.trial_id
                )));
            }
            if let Some(slot) = r.response_slot {
                if slot >= TRIAL_SIZE {
                    return Err(Error::LogIntegrity(format!(
                        "subject {}: response slot {slot} on trial {}",
                        log.subject_id, r.trial_id
                    )));
                }
            }
            let in_time = r
                .rt_ms
                .is_some_and(|rt| rt.is_finite() && rt >= 0.0 && rt <= limit);
            match r.response_slot {
                Some(slot) if in_time => b.push(TrialOutcome {
                    trial_id: r.trial_id,
                    is_catch,
                    selected: Some(slot),
                    correct: slot == odd,
                    valid: true,
                }),
                _ => b.push_invalid(r.trial_id, is_catch),
            }
        }
        for (&id, &(_, is_catch)) in &trials {
            if !seen.contains(&id) {
                b.push_invalid(id, is_catch);
            }
        }
    }

    let mut subjects = Vec::new();
    let mut without = Vec::new();
    for (id, b) in per_subject {
        match b.finish() {
            Ok(r) => subjects.push(r),
            Err(Error::EmptyReport) => without.push(id),
            Err(e) => return Err(e),
        }
    }
    if subjects.is_empty() {
        return Err(Error::EmptyReport);
    }
    let pooled_score = subjects.iter().map(|r| r.score).sum::<f64>() / subjects.len() as f64;
    Ok(HumanScore {
        n_subjects: subjects.len(),
        subjects,
        pooled_score,
        subjects_without_valid_trials: without,
    })
}
