//! PCA probing of activations: a shared channel-space basis, projection,
//! PC1 figure/ground orientation, separability, and RGB map export.
//!
//! Samples are per-position channel vectors pooled over every fitting image,
//! z-scored per channel. Negative PC1 marks figure; orientation is chosen so
//! that ground projects positive.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dtf;
use crate::error::{Error, Result};
use crate::image::ImageRgb;
use crate::tensor::Tensor;

pub const STD_FLOOR: f64 = 1e-8;
pub const HISTOGRAM_BINS: usize = 64;
/// Eigenvalues below this fraction of the trace count as zero.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// `k` orthonormal rows of length `C`.
    pub components: Vec<Vec<f64>>,
    /// Top-`k` eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// All `C` eigenvalues, descending.
    pub spectrum: Vec<f64>,
    /// `+1` or `-1`, applied to component 1 on projection.
    pub pc1_orientation: f64,
    /// Min/max of the first three unoriented projections over the fitting set.
    pub rgb_ranges: Option<[[f64; 2]; 3]>,
    pub n_samples: usize,
}

impl PcaBasis {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// Unoriented component scores of one raw sample.
    fn scores(&self, x: &[f64]) -> Vec<f64> {
        let z = self.standardize(x);
        self.components
            .iter()
            .map(|q| q.iter().zip(&z).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Oriented scores of one raw sample.
    pub fn project_vector(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::shape(format!(
                "sample of length {} for a {}-dim basis",
                x.len(),
                self.dim()
            )));
        }
        let mut s = self.scores(x);
        s[0] *= self.pc1_orientation;
        Ok(s)
    }

    /// Flip so that the mean PC1 score of `ground` samples is positive.
    fn orient_to(&mut self, ground: impl Iterator<Item = Vec<f64>>) -> Result<()> {
        let (mut sum, mut n) = (0.0, 0usize);
        for g in ground {
            sum += self.scores(&g)[0];
            n += 1;
        }
        if n == 0 {
            return Err(Error::config("no ground samples to orient PC1"));
        }
        self.pc1_orientation = if sum / n as f64 >= 0.0 { 1.0 } else { -1.0 };
        Ok(())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::from(e).at(dir))?;
        let flat: Vec<f64> = self.components.iter().flatten().copied().collect();
        dtf::write(
            &Tensor::from_f64(vec![self.k(), self.dim()], &flat)?,
            dir.join("components.dtf"),
        )?;
        dtf::write(
            &Tensor::from_f64(vec![self.dim()], &self.mean)?,
            dir.join("mean.dtf"),
        )?;
        dtf::write(
            &Tensor::from_f64(vec![self.dim()], &self.std)?,
            dir.join("std.dtf"),
        )?;
        let meta = BasisMeta {
            dim: self.dim(),
            k: self.k(),
            eigenvalues: self.eigenvalues.clone(),
            spectrum: self.spectrum.clone(),
            pc1_orientation: self.pc1_orientation,
            rgb_ranges: self.rgb_ranges,
            n_samples: self.n_samples,
        };
        crate::harness::manifest::write_json(&meta, dir.join("basis.json"))
    }

    /// Load a basis written by `save`. Vectors pass through `f32` storage.
    pub fn load(dir: impl AsRef<Path>) -> Result<PcaBasis> {
        let dir = dir.as_ref();
        let meta: BasisMeta = crate::harness::manifest::read_json(dir.join("basis.json"))?;
        let comps = dtf::read(dir.join("components.dtf"))?;
        let mean = dtf::read(dir.join("mean.dtf"))?;
        let std = dtf::read(dir.join("std.dtf"))?;
        if comps.shape() != [meta.k, meta.dim]
            || mean.shape() != [meta.dim]
            || std.shape() != [meta.dim]
        {
            return Err(Error::shape("basis tensors disagree with basis.json").at(dir));
        }
        let to64 = |t: &Tensor| t.data().iter().map(|&v| f64::from(v)).collect::<Vec<f64>>();
        let flat = to64(&comps);
        Ok(PcaBasis {
            mean: to64(&mean),
            std: to64(&std),
            components: flat.chunks(meta.dim).map(<[f64]>::to_vec).collect(),
            eigenvalues: meta.eigenvalues,
            spectrum: meta.spectrum,
            pc1_orientation: meta.pc1_orientation,
            rgb_ranges: meta.rgb_ranges,
            n_samples: meta.n_samples,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BasisMeta {
    dim: usize,
    k: usize,
    eigenvalues: Vec<f64>,
    spectrum: Vec<f64>,
    pc1_orientation: f64,
    rgb_ranges: Option<[[f64; 2]; 3]>,
    n_samples: usize,
}

fn rows(samples: &Tensor) -> Result<(usize, usize)> {
    match *samples.shape() {
        [n, c] => Ok((n, c)),
        _ => Err(Error::shape(format!(
            "samples must be [n, C], got {:?}",
            samples.shape()
        ))),
    }
}

/// Pool the per-position channel vectors of `[C, H, W]` activations into `[n, C]`.
pub fn samples_from_activations(acts: &[Tensor]) -> Result<Tensor> {
    let first = acts.first().ok_or_else(|| Error::shape("no activations"))?;
    let (c, _, _) = first.chw()?;
    let mut data = Vec::new();
    for a in acts {
        let (ca, h, w) = a.chw()?;
        if ca != c {
            return Err(Error::shape(format!("channel count {ca} differs from {c}")));
        }
        let n = h * w;
        for p in 0..n {
            data.extend((0..c).map(|ch| a.data()[ch * n + p]));
        }
    }
    let n = data.len() / c;
    Tensor::new(vec![n, c], data)
}

/// Fit a `k`-component basis to `[n, C]` samples.
pub fn fit_pca(samples: &Tensor, k: usize) -> Result<PcaBasis> {
    let (n, c) = rows(samples)?;
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    if k > c {
        return Err(Error::InsufficientRank {
            rank: c,
            requested: k,
        });
    }
    if n < 2 || !(n > c || n >= 2 * k) {
        return Err(Error::InsufficientRank {
            rank: n.saturating_sub(1),
            requested: k,
        });
    }
    let x = samples.data();
    let row = |i: usize| x[i * c..(i + 1) * c].iter().map(|&v| f64::from(v));

    let mut mean = vec![0.0; c];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; c];
    for i in 0..n {
        for ((s, v), m) in var.iter_mut().zip(row(i)).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    let std: Vec<f64> = var
        .iter()
        .map(|s| (s / (n - 1) as f64).sqrt().max(STD_FLOOR))
        .collect();

    let mut cov = DMatrix::<f64>::zeros(c, c);
    let mut z = vec![0.0; c];
    for i in 0..n {
        for (j, v) in row(i).enumerate() {
            z[j] = (v - mean[j]) / std[j];
        }
        for a in 0..c {
            for b in a..c {
                cov[(a, b)] += z[a] * z[b];
            }
        }
    }
    for a in 0..c {
        for b in a..c {
            let v = cov[(a, b)] / (n - 1) as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov.clone());
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let spectrum: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let trace = cov.trace();
    let significant = spectrum
        .iter()
        .filter(|&&l| l > RANK_TOLERANCE * trace.max(f64::MIN_POSITIVE))
        .count();
    if k > significant {
        return Err(Error::InsufficientRank {
            rank: significant,
            requested: k,
        });
    }
    let components: Vec<Vec<f64>> = order[..k]
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            // Deterministic sign: largest-magnitude entry positive.
            let lead = (0..c).fold(
                0,
                |best, j| if v[j].abs() > v[best].abs() { j } else { best },
            );
            if v[lead] < 0.0 {
                v.iter_mut().for_each(|e| *e = -*e);
            }
            v
        })
        .collect();

    let mut basis = PcaBasis {
        mean,
        std,
        components,
        eigenvalues: spectrum[..k].to_vec(),
        spectrum,
        pc1_orientation: 1.0,
        rgb_ranges: None,
        n_samples: n,
    };
    if k >= 3 {
        let mut ranges = [[f64::INFINITY, f64::NEG_INFINITY]; 3];
        for i in 0..n {
            let s = basis.scores(&row(i).collect::<Vec<_>>());
            for (r, v) in ranges.iter_mut().zip(&s) {
                r[0] = r[0].min(*v);
                r[1] = r[1].max(*v);
            }
        }
        basis.rgb_ranges = Some(ranges);
    }
    Ok(basis)
}

/// Project `[C, H, W]` activations to `[k, H, W]` oriented component maps.
pub fn project(basis: &PcaBasis, a: &Tensor) -> Result<Tensor> {
    let (c, h, w) = a.chw()?;
    if c != basis.dim() {
        return Err(Error::shape(format!(
            "{c} channels for a {}-dim basis",
            basis.dim()
        )));
    }
    let n = h * w;
    let k = basis.k();
    let mut out = vec![0.0f64; k * n];
    let mut x = vec![0.0; c];
    for p in 0..n {
        for (ch, v) in x.iter_mut().enumerate() {
            *v = f64::from(a.data()[ch * n + p]);
        }
        for (j, s) in basis.project_vector(&x)?.into_iter().enumerate() {
            out[j * n + p] = s;
        }
    }
    Tensor::from_f64(vec![k, h, w], &out)
}

/// Orient PC1 using labelled samples (`true` = figure).
pub fn orient_with_labels(
    mut basis: PcaBasis,
    samples: &Tensor,
    figure: &[bool],
) -> Result<PcaBasis> {
    let (n, c) = rows(samples)?;
    if figure.len() != n || c != basis.dim() {
        return Err(Error::shape(
            "labels or sample width disagree with samples/basis",
        ));
    }
    let x = samples.data();
    let ground = (0..n).filter(|&i| !figure[i]).map(|i| {
        x[i * c..(i + 1) * c]
            .iter()
            .map(|&v| f64::from(v))
            .collect()
    });
    basis.orient_to(ground)?;
    Ok(basis)
}

/// Width of the border ring used as a ground proxy.
pub fn border_width(h: usize, w: usize) -> usize {
    h.min(w).div_ceil(16).max(1)
}

/// Orient PC1 treating each activation map's border ring as ground.
pub fn orient_with_border(mut basis: PcaBasis, acts: &[Tensor]) -> Result<PcaBasis> {
    let mut ground = Vec::new();
    for a in acts {
        let (c, h, w) = a.chw()?;
        if c != basis.dim() {
            return Err(Error::shape(format!(
                "{c} channels for a {}-dim basis",
                basis.dim()
            )));
        }
        let b = border_width(h, w);
        let n = h * w;
        for y in 0..h {
            for x in 0..w {
                if y < b || x < b || y + b >= h || x + b >= w {
                    let p = y * w + x;
                    ground.push((0..c).map(|ch| f64::from(a.data()[ch * n + p])).collect());
                }
            }
        }
    }
    basis.orient_to(ground.into_iter())?;
    Ok(basis)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    /// Probability that a figure value is below a ground value (ties count half).
    pub auc: f64,
    pub bin_edges: Vec<f64>,
    pub figure_counts: Vec<usize>,
    pub ground_counts: Vec<usize>,
    pub n_figure: usize,
    pub n_ground: usize,
}

impl SeparabilityReport {
    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,figure,ground\n");
        for i in 0..self.figure_counts.len() {
            s.push_str(&format!(
                "{},{},{},{}\n",
                self.bin_edges[i],
                self.bin_edges[i + 1],
                self.figure_counts[i],
                self.ground_counts[i]
            ));
        }
        s
    }
}

/// Separability of PC1 values under the rule "more negative means figure".
pub fn figure_ground_auc(pc1: &[f64], figure: &[bool]) -> Result<SeparabilityReport> {
    if pc1.len() != figure.len() {
        return Err(Error::shape("value and mask lengths differ"));
    }
    if pc1.iter().any(|v| !v.is_finite()) {
        return Err(Error::shape("non-finite PC1 value"));
    }
    let n_figure = figure.iter().filter(|&&f| f).count();
    let n_ground = figure.len() - n_figure;
    if n_figure == 0 || n_ground == 0 {
        return Err(Error::config("both figure and ground samples are required"));
    }

    // Mann–Whitney: mid-ranks over the pooled values.
    let mut idx: Vec<usize> = (0..pc1.len()).collect();
    idx.sort_by(|&a, &b| pc1[a].total_cmp(&pc1[b]));
    let mut ground_rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && pc1[idx[j + 1]] == pc1[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        ground_rank_sum += mid * idx[i..=j].iter().filter(|&&t| !figure[t]).count() as f64;
        i = j + 1;
    }
    let (nf, ng) = (n_figure as f64, n_ground as f64);
    let u_ground = ground_rank_sum - ng * (ng + 1.0) / 2.0;
    let auc = u_ground / (nf * ng);

    let lo = pc1.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pc1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo {
        (hi - lo) / HISTOGRAM_BINS as f64
    } else {
        1.0 / HISTOGRAM_BINS as f64
    };
    let bin_edges: Vec<f64> = (0..=HISTOGRAM_BINS)
        .map(|b| lo + b as f64 * width)
        .collect();
    let mut figure_counts = vec![0; HISTOGRAM_BINS];
    let mut ground_counts = vec![0; HISTOGRAM_BINS];
    for (&v, &f) in pc1.iter().zip(figure) {
        let b = (((v - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
        if f {
            figure_counts[b] += 1;
        } else {
            ground_counts[b] += 1;
        }
    }
    Ok(SeparabilityReport {
        auc,
        bin_edges,
        figure_counts,
        ground_counts,
        n_figure,
        n_ground,
    })
}

/// Map the first three component maps to RGB with the fit-time ranges.
pub fn rgb_map(basis: &PcaBasis, a: &Tensor) -> Result<ImageRgb> {
    if basis.k() < 3 {
        return Err(Error::config("RGB maps need at least 3 components"));
    }
    let mut ranges = basis
        .rgb_ranges
        .ok_or_else(|| Error::config("basis has no recorded RGB ranges"))?;
    if basis.pc1_orientation < 0.0 {
        ranges[0] = [-ranges[0][1], -ranges[0][0]];
    }
    let proj = project(basis, a)?;
    let (_, h, w) = proj.chw()?;
    let n = h * w;
    let mut data = Vec::with_capacity(3 * n);
    for (ch, [lo, hi]) in ranges.iter().enumerate() {
        let span = hi - lo;
        data.extend(proj.data()[ch * n..(ch + 1) * n].iter().map(|&v| {
            if span > 0.0 {
                ((f64::from(v) - lo) / span).clamp(0.0, 1.0) as f32
            } else {
                0.5
            }
        }));
    }
    ImageRgb::from_planar(w, h, data)
}

/// Mean squared residual of rank-`k` reconstruction of standardized samples,
/// normalized like the covariance (`(n − 1) · C`).
pub fn reconstruction_residual(basis: &PcaBasis, samples: &Tensor) -> Result<f64> {
    let (n, c) = rows(samples)?;
    if c != basis.dim() || n < 2 {
        return Err(Error::shape("samples disagree with basis"));
    }
    let mut total = 0.0;
    for i in 0..n {
        let x: Vec<f64> = samples.data()[i * c..(i + 1) * c]
            .iter()
            .map(|&v| f64::from(v))
            .collect();
        let z = basis.standardize(&x);
        let s = basis.scores(&x);
        let mut r = z.clone();
        for (q, sj) in basis.components.iter().zip(&s) {
            for (rv, qv) in r.iter_mut().zip(q) {
                *rv -= sj * qv;
            }
        }
        total += r.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(total / ((n - 1) * c) as f64)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Cyclic Jacobi eigensolver for symmetric matrices; returns (values, vectors as columns).
    pub(crate) fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = a.len();
        let mut a = a.to_vec();
        let mut v: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
            .collect();
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i][j].powi(2))
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
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let cs = 1.0 / (t * t + 1.0).sqrt();
                    let sn = t * cs;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = cs * akp - sn * akq;
                        a[k][q] = sn * akp + cs * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = cs * apk - sn * aqk;
                        a[q][k] = sn * apk + cs * aqk;
                    }
                    for row in v.iter_mut() {
                        let (vp, vq) = (row[p], row[q]);
                        row[p] = cs * vp - sn * vq;
                        row[q] = sn * vp + cs * vq;
                    }
                }
            }
        }
        ((0..n).map(|i| a[i][i]).collect(), v)
    }

    pub(crate) fn random_samples(n: usize, c: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Correlated columns so the spectrum is well separated.
        let mix: Vec<f64> = (0..c * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut data = Vec::with_capacity(n * c);
        for _ in 0..n {
            let g: Vec<f64> = (0..c)
                .map(|j| rng.random_range(-1.0..1.0) * (j + 1) as f64)
                .collect();
            for a in 0..c {
                data.push((0..c).map(|b| mix[a * c + b] * g[b]).sum::<f64>() as f32 + 3.0);
            }
        }
        Tensor::new(vec![n, c], data).unwrap()
    }

    #[test]
    fn jacobi_oracle_on_known_matrix() {
        let (vals, _) = jacobi_eigen(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let mut vals = vals;
        vals.sort_by(|a, b| b.total_cmp(a));
        assert!((vals[0] - 3.0).abs() < 1e-12 && (vals[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn line_through_mean() {
        let dir = [1.0, -2.0, 0.5];
        let ts = [-2.0, -1.0, 0.0, 0.5, 1.0, 3.0];
        let mut data = Vec::new();
        for &t in &ts {
            data.extend(dir.iter().map(|d| (1.0 + t * d) as f32));
        }
        let s = Tensor::new(vec![ts.len(), 3], data).unwrap();
        let b = fit_pca(&s, 1).unwrap();
        // Standardized, the line direction is sign(dir)/√3.
        let expect = [1.0, -1.0, 1.0].map(|v: f64| v / 3f64.sqrt());
        let q = &b.components[0];
        let dot: f64 = q.iter().zip(&expect).map(|(a, b)| a * b).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-6);
        // Eigenvalue equals the sample variance of the projections.
        let proj: Vec<f64> = (0..ts.len())
            .map(|i| b.scores(&dir.map(|d| 1.0 + ts[i] * d))[0])
            .collect();
        let m = proj.iter().sum::<f64>() / proj.len() as f64;
        let var = proj.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (proj.len() - 1) as f64;
        assert!((b.eigenvalues[0] - var).abs() < 1e-6 * var);
        assert!(b.spectrum[1..].iter().all(|&l| l.abs() < 1e-6));
        assert!(matches!(
            fit_pca(&s, 2),
            Err(Error::InsufficientRank {
                rank: 1,
                requested: 2
            })
        ));
    }

    #[test]
    fn orthonormal_and_matches_oracle() {
        let s = random_samples(500, 8, 1);
        let b = fit_pca(&s, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = b.components[i]
                    .iter()
                    .zip(&b.components[j])
                    .map(|(x, y)| x * y)
                    .sum();
                assert!((d - f64::from(u8::from(i == j))).abs() < 1e-6);
            }
        }
        // Oracle: covariance of z-scores built independently, then Jacobi.
        let (n, c) = (500, 8);
        let x: Vec<f64> = s.data().iter().map(|&v| f64::from(v)).collect();
        let mean: Vec<f64> = (0..c)
            .map(|j| (0..n).map(|i| x[i * c + j]).sum::<f64>() / n as f64)
            .collect();
        let sd: Vec<f64> = (0..c)
            .map(|j| {
                ((0..n)
                    .map(|i| (x[i * c + j] - mean[j]).powi(2))
                    .sum::<f64>()
                    / (n - 1) as f64)
                    .sqrt()
            })
            .collect();
        let cov: Vec<Vec<f64>> = (0..c)
            .map(|a| {
                (0..c)
                    .map(|bb| {
                        (0..n)
                            .map(|i| {
                                (x[i * c + a] - mean[a]) / sd[a] * (x[i * c + bb] - mean[bb])
                                    / sd[bb]
                            })
                            .sum::<f64>()
                            / (n - 1) as f64
                    })
                    .collect()
            })
            .collect();
        let (vals, vecs) = jacobi_eigen(&cov);
        let mut order: Vec<usize> = (0..c).collect();
        order.sort_by(|&i, &j| vals[j].total_cmp(&vals[i]));
        for r in 0..3 {
            let l = vals[order[r]];
            assert!(
                (b.eigenvalues[r] - l).abs() < 1e-8 * l,
                "{} vs {l}",
                b.eigenvalues[r]
            );
            let dot: f64 = (0..c).map(|j| vecs[j][order[r]] * b.components[r][j]).sum();
            assert!((dot.abs() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn reconstruction_identity() {
        let s = random_samples(300, 6, 2);
        for k in 1..=6 {
            let b = fit_pca(&s, k).unwrap();
            let trailing: f64 = b.spectrum[k..].iter().sum::<f64>() / 6.0;
            let r = reconstruction_residual(&b, &s).unwrap();
            assert!(
                (r - trailing).abs() <= 1e-6 * trailing.max(1e-12) + 1e-12,
                "k={k}: {r} vs {trailing}"
            );
        }
    }

    #[test]
    fn projection_examples() {
        let s = random_samples(200, 4, 3);
        let b = fit_pca(&s, 3).unwrap();
        let mean_map = Tensor::new(
            vec![4, 2, 2],
            b.mean.iter().flat_map(|&m| [m as f32; 4]).collect(),
        )
        .unwrap();
        assert!(project(&b, &mean_map)
            .unwrap()
            .data()
            .iter()
            .all(|v| v.abs() < 1e-5));

        let x: Vec<f64> = (0..4)
            .map(|j| b.components[0][j] * b.std[j] + b.mean[j])
            .collect();
        let p = b.project_vector(&x).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-9 && p[1].abs() < 1e-9 && p[2].abs() < 1e-9);

        assert!(project(&b, &Tensor::zeros(vec![5, 2, 2]).unwrap()).is_err());
    }

    #[test]
    fn projection_matches_matrix_oracle() {
        let s = random_samples(200, 5, 4);
        let b = fit_pca(&s, 3).unwrap();
        let a = random_samples(12, 5, 5).reshape(vec![5, 3, 4]).unwrap();
        let p = project(&b, &a).unwrap();
        for pos in 0..12 {
            for j in 0..3 {
                let mut v = 0.0;
                for ch in 0..5 {
                    v += b.components[j][ch] * (f64::from(a.data()[ch * 12 + pos]) - b.mean[ch])
                        / b.std[ch];
                }
                assert!((f64::from(p.data()[j * 12 + pos]) - v).abs() < 1e-5 * v.abs().max(1.0));
            }
        }
    }

    fn two_clusters(seed: u64) -> (Tensor, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..200 {
            let fig = i % 2 == 0;
            let centre = if fig {
                [2.0, -1.0, 0.5, 1.0]
            } else {
                [-2.0, 1.0, -0.5, -1.0]
            };
            data.extend(centre.map(|c: f64| (c + rng.random_range(-0.3..0.3)) as f32));
            labels.push(fig);
        }
        (Tensor::new(vec![200, 4], data).unwrap(), labels)
    }

    #[test]
    fn orientation_and_auc_on_clusters() {
        let (s, labels) = two_clusters(6);
        let b = orient_with_labels(fit_pca(&s, 3).unwrap(), &s, &labels).unwrap();
        let pc1: Vec<f64> = (0..200)
            .map(|i| {
                b.project_vector(
                    &s.data()[i * 4..i * 4 + 4]
                        .iter()
                        .map(|&v| f64::from(v))
                        .collect::<Vec<_>>(),
                )
                .unwrap()[0]
            })
            .collect();
        let mean_of = |fig: bool| {
            let v: Vec<f64> = pc1
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == fig)
                .map(|(p, _)| *p)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean_of(true) < 0.0 && 0.0 < mean_of(false));
        let r = figure_ground_auc(&pc1, &labels).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.figure_counts.iter().sum::<usize>(), 100);
        assert_eq!(r.ground_counts.iter().sum::<usize>(), 100);
        assert_eq!(r.bin_edges.len(), HISTOGRAM_BINS + 1);
    }

    #[test]
    fn orientation_flip_rule() {
        let (s, labels) = two_clusters(7);
        let b = fit_pca(&s, 1).unwrap();
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let o1 = orient_with_labels(b.clone(), &s, &labels)
            .unwrap()
            .pc1_orientation;
        let o2 = orient_with_labels(b.clone(), &s, &flipped)
            .unwrap()
            .pc1_orientation;
        assert_eq!(o1, -o2);
        let all_fig = vec![true; 200];
        assert!(orient_with_labels(b, &s, &all_fig).is_err());
    }

    #[test]
    fn border_orientation() {
        assert_eq!(border_width(8, 8), 1);
        assert_eq!(border_width(33, 40), 3);
        // Bright centre on a dark border: ground (border) must project positive.
        let mut data = vec![0.0f32; 2 * 64];
        for y in 2..6 {
            for x in 2..6 {
                data[y * 8 + x] = 1.0;
                data[64 + y * 8 + x] = 0.8;
            }
        }
        for (i, v) in data.iter_mut().enumerate() {
            *v += (i % 7) as f32 * 0.01;
        }
        let a = Tensor::new(vec![2, 8, 8], data).unwrap();
        let s = samples_from_activations(std::slice::from_ref(&a)).unwrap();
        let b = orient_with_border(fit_pca(&s, 1).unwrap(), std::slice::from_ref(&a)).unwrap();
        let p = project(&b, &a).unwrap();
        assert!(p.data()[0] > 0.0 && p.data()[3 * 8 + 3] < 0.0);
    }

    #[test]
    fn auc_matches_pairwise_count() {
        let v = [0.3, -1.2, 0.3, 2.0, -0.5, 0.3, 1.1, -2.0, 0.0, 0.7];
        let f = [
            true, true, false, false, true, true, false, true, false, false,
        ];
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..10 {
            for j in 0..10 {
                if f[i] && !f[j] {
                    pairs += 1.0;
                    wins += if v[i] < v[j] {
                        1.0
                    } else if v[i] == v[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        let r = figure_ground_auc(&v, &f).unwrap();
        assert!((r.auc - wins / pairs).abs() < 1e-12);
        let t: Vec<f64> = v.iter().map(|x| x.exp() * 3.0 - 1.0).collect();
        assert!((figure_ground_auc(&t, &f).unwrap().auc - r.auc).abs() < 1e-12);
        assert!(figure_ground_auc(&v, &[true; 10]).is_err());
    }

    #[test]
    fn identical_distributions_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v: Vec<f64> = (0..4000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f: Vec<bool> = (0..4000).map(|i| i % 2 == 0).collect();
        assert!((figure_ground_auc(&v, &f).unwrap().auc - 0.5).abs() < 0.03);
    }

    #[test]
    fn rgb_map_shared_scaling() {
        let s = random_samples(300, 4, 9);
        let b = fit_pca(&s, 3).unwrap();
        let constant =
            Tensor::new(vec![4, 3, 3], (0..36).map(|i| (i / 9) as f32).collect()).unwrap();
        let img = rgb_map(&b, &constant).unwrap();
        for c in 0..3 {
            assert!(img.channel(c).iter().all(|&v| v == img.channel(c)[0]));
        }
        // The same patch inside two different maps gets the same colours.
        let a1 = random_samples(16, 4, 10).reshape(vec![4, 4, 4]).unwrap();
        let mut d2 = a1.data().to_vec();
        for ch in 0..4 {
            d2[ch * 16 + 15] += 5.0;
        }
        let a2 = Tensor::new(vec![4, 4, 4], d2).unwrap();
        let (m1, m2) = (rgb_map(&b, &a1).unwrap(), rgb_map(&b, &a2).unwrap());
        for c in 0..3 {
            assert_eq!(m1.channel(c)[..15], m2.channel(c)[..15]);
        }
        let no_ranges = PcaBasis {
            rgb_ranges: None,
            ..b
        };
        assert!(rgb_map(&no_ranges, &a1).is_err());
    }

    #[test]
    fn rgb_map_golden() {
        let b = fit_pca(&random_samples(300, 4, 9), 3).unwrap();
        let a = random_samples(64, 4, 13).reshape(vec![4, 8, 8]).unwrap();
        let bytes = rgb_map(&b, &a).unwrap().to_rgb8();
        let hash = bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &v| {
            (h ^ u64::from(v)).wrapping_mul(0x100_0000_01b3)
        });
        assert_eq!(
            hash, 0x7eeab71b01000dec,
            "rgb map checksum changed: {hash:#018x}"
        );
    }

    #[test]
    fn save_load_roundtrip() {
        let s = random_samples(100, 4, 11);
        let b = fit_pca(&s, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        b.save(dir.path()).unwrap();
        let l = PcaBasis::load(dir.path()).unwrap();
        assert_eq!(l.eigenvalues, b.eigenvalues);
        assert_eq!(l.rgb_ranges, b.rgb_ranges);
        for (x, y) in l
            .components
            .iter()
            .flatten()
            .zip(b.components.iter().flatten())
        {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn deterministic_fit() {
        let s = random_samples(200, 6, 12);
        assert_eq!(fit_pca(&s, 3).unwrap(), fit_pca(&s, 3).unwrap());
    }
}
