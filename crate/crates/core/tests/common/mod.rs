#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use disrt::harness::manifest::{Timing, TrialEntry, TrialManifest, DEFAULT_BREAK_EVERY};
use disrt::{FeatureNet, SynthesisConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Cyclic Jacobi eigensolver; returns eigenvalues and eigenvectors as columns.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

/// Pairwise cosine-distance matrix computed directly in f64.
pub fn distance_matrix(f: &[Vec<f32>; 3]) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (mut dot, mut ni, mut nj) = (0.0f64, 0.0f64, 0.0f64);
            for (&a, &b) in f[i].iter().zip(&f[j]) {
                let (a, b) = (f64::from(a), f64::from(b));
                dot += a * b;
                ni += a * a;
                nj += b * b;
            }
            m[i][j] = 1.0 - dot / (ni.sqrt() * nj.sqrt());
        }
    }
    m
}

/// A manifest with placeholder images: a catch trial after every ten
/// standard ones, odd slots drawn from `seed`.
pub fn synthetic_manifest(n_standard: usize, seed: u64) -> TrialManifest {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::new();
    for s in 0..n_standard {
        for is_catch in std::iter::once(false).chain((s % 10 == 9).then_some(true)) {
            let id = trials.len() as u64;
            trials.push(TrialEntry {
                trial_id: id,
                is_catch,
                images: [0, 1, 2].map(|k| format!("images/trial_{id:05}_slot{k}.ppm")),
                odd_index: rng.random_range(0..3),
                permutation: [0, 1, 2],
                source_image: format!("src_{id}.ppm"),
                synthesis_seeds: vec![],
            });
        }
    }
    TrialManifest {
        session_id: "synthetic".into(),
        generator_seed: seed,
        fast_mode: false,
        resolution: [8, 8],
        net: FeatureNet::new(Default::default(), 0).unwrap().descriptor(),
        synthesis: SynthesisConfig::default(),
        timing: Timing::default(),
        break_every: DEFAULT_BREAK_EVERY,
        trials,
        skipped: vec![],
    }
}

/// Every file below `dir`, keyed by relative path.
pub fn read_tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
