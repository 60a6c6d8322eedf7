//! Trial-set construction: standard trials (original plus two syntheses) with
//! a catch trial after every ten, written as images plus a manifest.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::featnet::FeatureNet;
use crate::harness::manifest::{
    write_json, SkippedTrial, Timing, TrialEntry, TrialKind, TrialManifest, DEFAULT_BREAK_EVERY,
    MANIFEST_FILE,
};
use crate::harness::{derive_seed, worker_pool};
use crate::image::ImageRgb;
use crate::oddity::TRIAL_SIZE;
use crate::synth::{synthesize_to_grams, SynthesisConfig, FAST_STEPS};

/// Standard trials per catch trial.
pub const CATCH_EVERY: usize = 10;
pub const IMAGE_DIR: &str = "images";
const IMAGE_EXTENSIONS: [&str; 2] = ["ppm", "png"];

const TAG_STANDARD: u64 = 1;
const TAG_CATCH: u64 = 2;
const TAG_PERMUTATION: u64 = 0xFFFF;
const TAG_SESSION: u64 = 0x5E55;

#[derive(Debug, Clone)]
pub struct TrialsetOptions {
    pub image_dir: PathBuf,
    pub out_dir: PathBuf,
    pub net: FeatureNet,
    /// Echoed into the manifest; its `seed` is replaced by per-trial seeds.
    pub synthesis: SynthesisConfig,
    pub n_standard: usize,
    pub generator_seed: u64,
    /// `[width, height]` every stimulus is resized to before synthesis.
    pub resolution: [usize; 2],
    /// Run every synthesis with the short schedule.
    pub fast: bool,
}

pub fn n_catch_for(n_standard: usize) -> usize {
    n_standard / CATCH_EVERY
}

/// Sorted `.ppm` / `.png` files directly inside `dir`.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::from(e).at(dir))? {
        let path = entry?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn session_id(generator_seed: u64) -> String {
    format!("disrt-{:016x}", derive_seed(&[generator_seed, TAG_SESSION]))
}

/// A trial before renumbering.
struct Planned {
    kind: TrialKind,
    index: u64,
    source: PathBuf,
}

impl Planned {
    fn tag(&self) -> u64 {
        match self.kind {
            TrialKind::Standard => TAG_STANDARD,
            TrialKind::Catch => TAG_CATCH,
        }
    }

    /// Trial key stable under extension of the set.
    fn key(&self) -> u64 {
        (self.tag() << 56) | self.index
    }
}

struct Built {
    members: [ImageRgb; TRIAL_SIZE],
    seeds: Vec<u64>,
    permutation: [usize; TRIAL_SIZE],
}

/// Interleave `n_standard` standard trials with a catch trial after every ten.
fn plan(sources: &[PathBuf], n_standard: usize) -> Result<Vec<Planned>> {
    let n_catch = n_catch_for(n_standard);
    let need = n_standard + n_catch;
    if sources.len() < need {
        return Err(Error::InsufficientImages {
            need,
            found: sources.len(),
        });
    }
    // Disjoint pools, stable under extension: in each run of eleven sorted
    // sources the first ten feed standard trials and the last a catch trial.
    let mut out = Vec::with_capacity(need);
    for s in 0..n_standard {
        out.push(Planned {
            kind: TrialKind::Standard,
            index: s as u64,
            source: sources[s + s / CATCH_EVERY].clone(),
        });
        if (s + 1) % CATCH_EVERY == 0 {
            let c = (s + 1) / CATCH_EVERY - 1;
            out.push(Planned {
                kind: TrialKind::Catch,
                index: c as u64,
                source: sources[(CATCH_EVERY + 1) * c + CATCH_EVERY].clone(),
            });
        }
    }
    Ok(out)
}

fn load_stimulus(path: &Path, [w, h]: [usize; 2]) -> Result<ImageRgb> {
    let img = ImageRgb::load(path)?;
    let img = if img.width() == w && img.height() == h {
        img
    } else {
        img.resize_bilinear(w, h)?
    };
    // Stored stimuli are 8-bit; synthesize against exactly what is stored.
    Ok(img.quantized())
}

fn build_one(p: &Planned, opts: &TrialsetOptions, cfg: &SynthesisConfig) -> Result<Built> {
    let original = load_stimulus(&p.source, opts.resolution).map_err(|e| e.at(&p.source))?;
    let targets = opts.net.target_grams(&original)?;
    let [w, h] = opts.resolution;
    let n_variants = match p.kind {
        TrialKind::Standard => 2,
        TrialKind::Catch => 1,
    };
    let seeds: Vec<u64> = (0..n_variants)
        .map(|v| derive_seed(&[opts.generator_seed, p.key(), v]))
        .collect();
    let variants = seeds
        .iter()
        .map(|&seed| {
            let c = SynthesisConfig {
                seed,
                ..cfg.clone()
            };
            synthesize_to_grams(&opts.net, &targets, w, h, &c).map(|r| r.image.quantized())
        })
        .collect::<Result<Vec<_>>>()?;
    let members = match p.kind {
        TrialKind::Standard => [original, variants[0].clone(), variants[1].clone()],
        TrialKind::Catch => {
            let mirror = original.flip_horizontal();
            [original, mirror, variants[0].clone()]
        }
    };
    let mut permutation = [0, 1, 2];
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
        opts.generator_seed,
        p.key(),
        TAG_PERMUTATION,
    ]));
    permutation.shuffle(&mut rng);
    Ok(Built {
        members,
        seeds,
        permutation,
    })
}

fn canonical_odd(kind: &TrialKind) -> usize {
    match kind {
        TrialKind::Standard => 0,
        TrialKind::Catch => 2,
    }
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Generate every trial, write images under `out_dir/images`, and write
/// `out_dir/manifest.json`. Diverged trials are skipped, logged in the
/// manifest, and the remaining trials renumbered densely.
pub fn build_trialset(opts: &TrialsetOptions) -> Result<TrialManifest> {
    let [w, h] = opts.resolution;
    opts.net.spec().activation_shapes(h, w)?;
    let mut cfg = opts.synthesis.clone();
    if opts.fast {
        cfg.steps = FAST_STEPS;
    }
    cfg.validate()?;
    if opts.n_standard == 0 {
        return Err(Error::config("at least one standard trial is required"));
    }

    let sources = list_images(&opts.image_dir)?;
    let planned = plan(&sources, opts.n_standard)?;
    let pool = worker_pool()?;
    let built: Vec<Result<Built>> = pool.install(|| {
        planned
            .par_iter()
            .map(|p| build_one(p, opts, &cfg))
            .collect()
    });

    let image_dir = opts.out_dir.join(IMAGE_DIR);
    fs::create_dir_all(&image_dir).map_err(|e| Error::from(e).at(&image_dir))?;
    let mut trials = Vec::new();
    let mut skipped = Vec::new();
    for (p, b) in planned.iter().zip(built) {
        let b = match b {
            Ok(b) => b,
            Err(e @ Error::Diverged { .. }) => {
                skipped.push(SkippedTrial {
                    key: p.key(),
                    kind: p.kind.clone(),
                    source_image: file_name(&p.source),
                    reason: e.to_string(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let trial_id = trials.len() as u64;
        let images: [String; TRIAL_SIZE] =
            std::array::from_fn(|slot| format!("{IMAGE_DIR}/trial_{trial_id:05}_slot{slot}.ppm"));
        for (slot, rel) in images.iter().enumerate() {
            let path = opts.out_dir.join(rel);
            b.members[b.permutation[slot]]
                .save(&path)
                .map_err(|e| e.at(&path))?;
        }
        let odd = canonical_odd(&p.kind);
        let odd_index = b
            .permutation
            .iter()
            .position(|&m| m == odd)
            .expect("permutation");
        trials.push(TrialEntry {
            trial_id,
            is_catch: p.kind == TrialKind::Catch,
            images,
            odd_index,
            permutation: b.permutation,
            source_image: file_name(&p.source),
            synthesis_seeds: b.seeds,
        });
    }

    let manifest = TrialManifest {
        session_id: session_id(opts.generator_seed),
        generator_seed: opts.generator_seed,
        fast_mode: opts.fast,
        resolution: opts.resolution,
        net: opts.net.descriptor(),
        synthesis: SynthesisConfig {
            seed: opts.generator_seed,
            ..cfg
        },
        timing: Timing::default(),
        break_every: DEFAULT_BREAK_EVERY,
        trials,
        skipped,
    };
    write_json(&manifest, opts.out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
