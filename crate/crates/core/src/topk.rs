//! Per-channel Top-K activation sparsity.
//!
//! Within every channel the `k = max(1, floor(keep * H * W))` entries with the
//! largest absolute value survive with their sign; everything else is zeroed.
//! Magnitude ties go to the lower flat index, so the operator is deterministic.

use std::collections::BTreeMap;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Number of entries kept in a channel of `n` positions.
pub fn keep_count(n: usize, keep: f64) -> usize {
    ((keep * n as f64).floor() as usize).clamp(1, n)
}

pub fn check_fraction(keep: f64) -> Result<()> {
    if keep.is_finite() && keep > 0.0 && keep <= 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!(
            "keep fraction {keep} outside (0, 1]"
        )))
    }
}

/// Sparsify one channel in place.
pub fn sparsify_plane<T: Real>(plane: &mut [T], keep: f64) {
    let n = plane.len();
    let k = keep_count(n, keep);
    if k >= n {
        return;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.select_nth_unstable_by(k - 1, |&a, &b| {
        plane[b]
            .abs()
            .partial_cmp(&plane[a].abs())
            .expect("finite activations")
            .then(a.cmp(&b))
    });
    let mut survives = vec![false; n];
    for &i in &order[..k] {
        survives[i] = true;
    }
    for (v, keep) in plane.iter_mut().zip(survives) {
        if !keep {
            *v = T::zero();
        }
    }
}

/// Top-K over the spatial positions of each channel of a `[C, H, W]` or `[N, C, H, W]` tensor.
pub fn topk_channel(t: &Tensor, keep: f64) -> Result<Tensor> {
    check_fraction(keep)?;
    let r = t.rank();
    if r < 3 {
        return Err(Error::shape(format!(
            "channel Top-K needs [.., C, H, W], got {:?}",
            t.shape()
        )));
    }
    if keep == 1.0 {
        return Ok(t.clone());
    }
    let hw = t.shape()[r - 2] * t.shape()[r - 1];
    let mut data = t.data().to_vec();
    for plane in data.chunks_exact_mut(hw) {
        sparsify_plane(plane, keep);
    }
    Tensor::new(t.shape().to_vec(), data)
}

/// Top-K for token activations `[T, D]`: each feature column is one channel over `T` tokens.
pub fn topk_tokens(t: &Tensor, keep: f64) -> Result<Tensor> {
    check_fraction(keep)?;
    let [tokens, dims] = t.shape()[..] else {
        return Err(Error::shape(format!(
            "token Top-K needs [T, D], got {:?}",
            t.shape()
        )));
    };
    if keep == 1.0 {
        return Ok(t.clone());
    }
    let mut data = t.data().to_vec();
    let mut column = vec![0.0f32; tokens];
    for d in 0..dims {
        for (i, v) in column.iter_mut().enumerate() {
            *v = data[i * dims + d];
        }
        sparsify_plane(&mut column, keep);
        for (i, v) in column.iter().enumerate() {
            data[i * dims + d] = *v;
        }
    }
    Tensor::new(t.shape().to_vec(), data)
}

/// Rank-2 tensors are treated as tokens, rank 3 and 4 as channel maps.
pub fn apply(t: &Tensor, keep: f64) -> Result<Tensor> {
    match t.rank() {
        2 => topk_tokens(t, keep),
        3 | 4 => topk_channel(t, keep),
        _ => Err(Error::shape(format!(
            "Top-K needs a rank 2-4 tensor, got {:?}",
            t.shape()
        ))),
    }
}

/// Per-block keep fractions, `{"<block>": fraction, ...}` with optional
/// `"default"` and `"scope"` entries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TopKConfig {
    pub scope: String,
    pub block_sparsity: BTreeMap<String, f64>,
    pub default_fraction: Option<f64>,
}

impl TopKConfig {
    pub fn uniform(keep: f64) -> Result<Self> {
        check_fraction(keep)?;
        Ok(TopKConfig {
            default_fraction: Some(keep),
            ..Default::default()
        })
    }

    /// Keep fraction for a block: its own entry, else the default.
    pub fn fraction_for(&self, block: usize) -> Option<f64> {
        self.block_sparsity
            .get(&block.to_string())
            .copied()
            .or(self.default_fraction)
    }

    /// Block entries in numeric order.
    pub fn blocks(&self) -> Vec<(usize, f64)> {
        let mut v: Vec<(usize, f64)> = self
            .block_sparsity
            .iter()
            .map(|(k, &f)| (k.parse().expect("validated block key"), f))
            .collect();
        v.sort_by_key(|&(b, _)| b);
        v
    }

    pub fn to_json(&self) -> String {
        let mut m = Map::new();
        if !self.scope.is_empty() {
            m.insert("scope".into(), Value::from(self.scope.clone()));
        }
        if let Some(d) = self.default_fraction {
            m.insert("default".into(), Value::from(d));
        }
        for (b, f) in self.blocks() {
            m.insert(b.to_string(), Value::from(f));
        }
        Value::Object(m).to_string()
    }
}

pub fn parse_topk_config(json: &str) -> Result<TopKConfig> {
    let value: Value = serde_json::from_str(json)?;
    let Value::Object(map) = value else {
        return Err(Error::config("Top-K config must be a JSON object"));
    };
    let mut cfg = TopKConfig::default();
    for (key, v) in map {
        match key.as_str() {
            "scope" => {
                cfg.scope = v
                    .as_str()
                    .ok_or_else(|| Error::config("\"scope\" must be a string"))?
                    .to_string();
            }
            "default" => {
                let f = fraction_value(&key, &v)?;
                cfg.default_fraction = Some(f);
            }
            _ => {
                if key.is_empty() || !key.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(Error::config(format!("malformed block key {key:?}")));
                }
                let block: usize = key
                    .parse()
                    .map_err(|_| Error::config(format!("block key {key:?} out of range")))?;
                let f = fraction_value(&key, &v)?;
                if cfg.block_sparsity.insert(block.to_string(), f).is_some() {
                    return Err(Error::config(format!("duplicate block {block}")));
                }
            }
        }
    }
    if cfg.block_sparsity.is_empty() && cfg.default_fraction.is_none() {
        return Err(Error::config("Top-K config names no blocks and no default"));
    }
    Ok(cfg)
}

fn fraction_value(key: &str, v: &Value) -> Result<f64> {
    let f = v
        .as_f64()
        .ok_or_else(|| Error::config(format!("fraction for {key:?} is not a number")))?;
    check_fraction(f)
        .map_err(|_| Error::config(format!("fraction {f} for {key:?} outside (0, 1]")))?;
    Ok(f)
}
