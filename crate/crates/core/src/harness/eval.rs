//! Built-in extractors scored directly against a trial manifest.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::featnet::{gram, FeatureNet};
use crate::harness::manifest::{resolve, TrialManifest};
use crate::harness::worker_pool;
use crate::image::ImageRgb;
use crate::oddity::{score_group, DisrtReport, GroupKey, TrialFeatures};
use crate::topk::TopKConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extractor {
    /// Flattened planar pixels.
    RawPixels,
    /// Flattened post-ReLU activation of layer `l`, positions preserved.
    FeatnetLayer(usize),
    /// Flattened Gram matrix of layer `l`.
    GramOfLayer(usize),
}

impl Extractor {
    pub fn layer(&self) -> Option<usize> {
        match *self {
            Extractor::RawPixels => None,
            Extractor::FeatnetLayer(l) | Extractor::GramOfLayer(l) => Some(l),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Extractor::RawPixels => "raw-pixels",
            Extractor::FeatnetLayer(_) => "featnet-layer",
            Extractor::GramOfLayer(_) => "gram-of-layer",
        }
    }

    pub fn features(
        &self,
        net: &FeatureNet,
        image: &ImageRgb,
        topk: Option<&TopKConfig>,
    ) -> Result<Vec<f32>> {
        let layer = match (*self, topk) {
            (Extractor::RawPixels, Some(_)) => {
                return Err(Error::config(
                    "Top-K applies to network activations, not raw pixels",
                ))
            }
            (Extractor::RawPixels, None) => return Ok(image.planar().to_vec()),
            (e, _) => e.layer().expect("network extractor"),
        };
        if layer >= net.num_layers() {
            return Err(Error::config(format!(
                "layer {layer} out of range for a {}-layer net",
                net.num_layers()
            )));
        }
        let stack = match topk {
            Some(cfg) => net.forward_with_topk(image, cfg)?,
            None => net.forward(image)?,
        };
        let act = &stack.layers[layer];
        Ok(match self {
            Extractor::GramOfLayer(_) => gram(act)?.data().iter().map(|&v| v as f32).collect(),
            _ => act.data().to_vec(),
        })
    }
}

impl fmt::Display for Extractor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.layer() {
            Some(l) => write!(f, "{}:{l}", self.name()),
            None => f.write_str(self.name()),
        }
    }
}

impl FromStr for Extractor {
    type Err = Error;

    /// `raw-pixels`, `featnet-layer:<l>`, or `gram-of-layer:<l>`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, layer) = match s.split_once(':') {
            Some((n, l)) => {
                let l = l
                    .parse::<usize>()
                    .map_err(|_| Error::config(format!("bad layer index in extractor {s:?}")))?;
                (n, Some(l))
            }
            None => (s, None),
        };
        match (name, layer) {
            ("raw-pixels", None) => Ok(Extractor::RawPixels),
            ("featnet-layer", Some(l)) => Ok(Extractor::FeatnetLayer(l)),
            ("gram-of-layer", Some(l)) => Ok(Extractor::GramOfLayer(l)),
            _ => Err(Error::config(format!(
                "unknown extractor {s:?}; expected raw-pixels, featnet-layer:<l> or gram-of-layer:<l>"
            ))),
        }
    }
}

/// Score a built-in extractor on every trial of a manifest. Image paths are
/// resolved against `base`.
pub fn eval_builtin(
    manifest: &TrialManifest,
    base: &Path,
    extractor: Extractor,
    topk: Option<&TopKConfig>,
) -> Result<DisrtReport> {
    let net = FeatureNet::from_descriptor(&manifest.net)?;
    let pool = worker_pool()?;
    let trials = pool.install(|| {
        manifest
            .trials
            .par_iter()
            .map(|t| {
                let features = t.images.each_ref().map(|rel| {
                    let path = resolve(base, rel);
                    ImageRgb::load(&path)
                        .and_then(|img| extractor.features(&net, &img, topk))
                        .map_err(|e| e.at(&path))
                });
                let [a, b, c] = features;
                TrialFeatures::new(t.trial_id, [a?, b?, c?], t.odd_index, t.is_catch)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let group = GroupKey {
        model: Some(extractor.name().to_string()),
        layer: extractor.layer(),
        ..Default::default()
    };
    score_group(group, &trials)
}
