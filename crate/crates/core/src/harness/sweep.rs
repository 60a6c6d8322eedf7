//! Per-head scores indexed sequentially across layers.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::oddity::{score_group, DisrtReport, GroupKey, TrialFeatures};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadRow {
    pub head_index: usize,
    pub layer: usize,
    pub head: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadSweep {
    pub rows: Vec<HeadRow>,
    pub reports: Vec<DisrtReport>,
    /// `head_index` of the first head of every layer after the first.
    pub boundaries: Vec<usize>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    boundaries: &'a [usize],
    layers: Vec<LayerSpan>,
}

#[derive(Serialize)]
struct LayerSpan {
    layer: usize,
    first_head_index: usize,
    n_heads: usize,
}

impl HeadSweep {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("head_index,layer,score\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.head_index, r.layer, r.score));
        }
        s
    }

    /// JSON listing the layer boundaries.
    pub fn sidecar_json(&self) -> String {
        let mut layers: Vec<LayerSpan> = Vec::new();
        for r in &self.rows {
            match layers.last_mut() {
                Some(l) if l.layer == r.layer => l.n_heads += 1,
                _ => layers.push(LayerSpan {
                    layer: r.layer,
                    first_head_index: r.head_index,
                    n_heads: 1,
                }),
            }
        }
        let mut s = serde_json::to_string_pretty(&Sidecar {
            boundaries: &self.boundaries,
            layers,
        })
        .expect("sidecar serializes");
        s.push('\n');
        s
    }
}

/// Score each `(layer, head)` group and index heads in `(layer, head)` order.
/// Groups must carry both coordinates and hold at least one valid trial.
pub fn head_sweep(groups: &BTreeMap<GroupKey, Vec<TrialFeatures>>) -> Result<HeadSweep> {
    let mut keyed: Vec<((usize, usize), &GroupKey, &Vec<TrialFeatures>)> =
        Vec::with_capacity(groups.len());
    for (key, trials) in groups {
        let (Some(layer), Some(head)) = (key.layer, key.head) else {
            return Err(Error::config(format!(
                "group {key} lacks a layer or head coordinate"
            )));
        };
        keyed.push(((layer, head), key, trials));
    }
    if keyed.is_empty() {
        return Err(Error::EmptyReport);
    }
    keyed.sort_by_key(|(coords, _, _)| *coords);
    if let Some(w) = keyed.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::config(format!(
            "layer {} head {} appears under more than one model",
            w[0].0 .0, w[0].0 .1
        )));
    }

    let mut rows = Vec::with_capacity(keyed.len());
    let mut reports = Vec::with_capacity(keyed.len());
    let mut boundaries = Vec::new();
    for (i, ((layer, head), key, trials)) in keyed.into_iter().enumerate() {
        let report = score_group(key.clone(), trials)?;
        if rows.last().is_some_and(|r: &HeadRow| r.layer != layer) {
            boundaries.push(i);
        }
        rows.push(HeadRow {
            head_index: i,
            layer,
            head,
            score: report.score,
        });
        reports.push(report);
    }
    Ok(HeadSweep {
        rows,
        reports,
        boundaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group(layer: usize, head: usize) -> (GroupKey, Vec<TrialFeatures>) {
        let key = GroupKey {
            model: Some("m".into()),
            layer: Some(layer),
            head: Some(head),
            subject: None,
        };
        let t = TrialFeatures::new(
            0,
            [vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]],
            head % 3,
            false,
        )
        .unwrap();
        (key, vec![t])
    }

    #[test]
    fn twelve_heads_per_layer() {
        let groups: BTreeMap<_, _> = (0..3)
            .flat_map(|l| (0..12).map(move |h| group(l, h)))
            .collect();
        let s = head_sweep(&groups).unwrap();
        assert_eq!(s.boundaries, vec![12, 24]);
        assert_eq!(s.rows.len(), 36);
        assert_eq!(s.rows[13].layer, 1);
        assert_eq!(s.rows[13].head, 1);
        assert!(s.sidecar_json().contains("\"n_heads\": 12"));
    }

    #[test]
    fn single_head_csv() {
        let groups: BTreeMap<_, _> = [group(4, 0)].into_iter().collect();
        let s = head_sweep(&groups).unwrap();
        assert_eq!(s.to_csv(), "head_index,layer,score\n0,4,100\n");
        assert!(s.boundaries.is_empty());
    }

    #[test]
    fn missing_coordinates_and_empty() {
        assert!(matches!(
            head_sweep(&BTreeMap::new()),
            Err(Error::EmptyReport)
        ));
        let (mut k, v) = group(0, 0);
        k.head = None;
        assert!(head_sweep(&[(k, v)].into_iter().collect()).is_err());
        let (k, _) = group(0, 1);
        assert!(matches!(
            head_sweep(&[(k, vec![])].into_iter().collect()),
            Err(Error::EmptyReport)
        ));
    }
}
