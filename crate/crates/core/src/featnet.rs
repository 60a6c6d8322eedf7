//! Seeded random-filter convolutional feature network with an analytic
//! backward pass for the Gram-matching loss.
//!
//! Each layer is a 3×3 stride-1 convolution with zero padding 1 and no bias,
//! followed by ReLU and an optional 2×2 stride-2 average pool. The activation
//! recorded for layer `l` is the post-ReLU map *before* pooling; pooling only
//! feeds the next layer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageRgb;
use crate::real::{axpy, dot, Real};
use crate::tensor::Tensor;
use crate::topk::{self, TopKConfig};

pub const INPUT_CHANNELS: usize = 3;
/// Smallest spatial extent allowed after every pool has been applied.
pub const MIN_FINAL_EXTENT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub out_channels: usize,
    pub pool_after: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureNetSpec {
    pub layers: Vec<LayerSpec>,
}

impl Default for FeatureNetSpec {
    /// Three layers: 32 (pool), 64 (pool), 128.
    fn default() -> Self {
        FeatureNetSpec::from_pairs(&[(32, true), (64, true), (128, false)])
    }
}

impl FeatureNetSpec {
    pub fn from_pairs(layers: &[(usize, bool)]) -> Self {
        FeatureNetSpec {
            layers: layers
                .iter()
                .map(|&(out_channels, pool_after)| LayerSpec {
                    out_channels,
                    pool_after,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config("feature net needs at least one layer"));
        }
        if let Some(i) = self.layers.iter().position(|l| l.out_channels == 0) {
            return Err(Error::config(format!("layer {i} has zero output channels")));
        }
        Ok(())
    }

    /// Recorded activation shapes `[C, H, W]` for an `h × w` input.
    pub fn activation_shapes(&self, h: usize, w: usize) -> Result<Vec<[usize; 3]>> {
        let (mut h, mut w) = (h, w);
        let mut shapes = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shapes.push([layer.out_channels, h, w]);
            if layer.pool_after {
                h /= 2;
                w /= 2;
            }
        }
        if h.min(w) < MIN_FINAL_EXTENT {
            return Err(Error::shape(format!(
                "input leaves a {h}x{w} map after pooling; at least {MIN_FINAL_EXTENT} needed"
            )));
        }
        Ok(shapes)
    }

    pub fn channels(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.out_channels).collect()
    }

    /// Per-layer Gram weights `1 / C_l²`.
    pub fn default_weights(&self) -> Vec<f64> {
        self.layers
            .iter()
            .map(|l| 1.0 / (l.out_channels as f64).powi(2))
            .collect()
    }
}

/// Serialized form: layer list plus seed. Filters are regenerated on load.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDescriptor {
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
}

/// A feature network whose filters are a pure function of `(spec, seed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNet {
    spec: FeatureNetSpec,
    seed: u64,
    /// Per layer `[C_out, C_in, 3, 3]`.
    filters: Vec<Tensor>,
}

/// Post-ReLU activations `[C_l, H_l, W_l]`, one per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationStack {
    pub layers: Vec<Tensor>,
}

/// Channel Gram matrix normalized by the number of spatial positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Gram {
    channels: usize,
    data: Vec<f64>,
}

impl Gram {
    pub fn new(channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * channels {
            return Err(Error::shape(format!(
                "Gram of {channels} channels needs {} entries, got {}",
                channels * channels,
                data.len()
            )));
        }
        Ok(Gram { channels, data })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, d: usize) -> f64 {
        self.data[c * self.channels + d]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f64(vec![self.channels, self.channels], &self.data)
            .expect("Gram entries are finite")
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &Gram) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Gram matrix of a `[C, H, W]` activation: `G[c,d] = Σ a[c]·a[d] / (H·W)`.
pub fn gram(a: &Tensor) -> Result<Gram> {
    let (c, h, w) = a.chw()?;
    let data: Vec<f64> = a.data().iter().map(|&v| f64::from(v)).collect();
    Ok(gram_of(&data, c, h * w))
}

fn gram_of<T: Real>(a: &[T], c: usize, n: usize) -> Gram {
    let mut g = vec![0.0f64; c * c];
    let inv_n = T::from_f64(1.0 / n as f64);
    for i in 0..c {
        let ai = &a[i * n..(i + 1) * n];
        for j in i..c {
            let v = (dot(ai, &a[j * n..(j + 1) * n]) * inv_n).as_f64();
            g[i * c + j] = v;
            g[j * c + i] = v;
        }
    }
    Gram {
        channels: c,
        data: g,
    }
}

/// `Σ_l w_l ‖gram(s_l) − T_l‖²_F`
pub fn gram_loss(stack: &ActivationStack, targets: &[Gram], weights: &[f64]) -> Result<f64> {
    check_loss_inputs(stack.layers.len(), targets, weights)?;
    let mut loss = 0.0;
    for ((a, t), &w) in stack.layers.iter().zip(targets).zip(weights) {
        let g = gram(a)?;
        if g.channels != t.channels {
            return Err(Error::shape(format!(
                "Gram target has {} channels, activation has {}",
                t.channels, g.channels
            )));
        }
        loss += w * g.distance(t).powi(2);
    }
    Ok(loss)
}

fn check_loss_inputs(layers: usize, targets: &[Gram], weights: &[f64]) -> Result<()> {
    if targets.len() != layers || weights.len() != layers {
        return Err(Error::shape(format!(
            "{layers} layers but {} targets and {} weights",
            targets.len(),
            weights.len()
        )));
    }
    Ok(())
}

/// Per-layer forward record kept for the backward pass.
struct LayerTrace<T> {
    /// Post-ReLU activation, `C_out × H × W`.
    act: Vec<T>,
    h: usize,
    w: usize,
}

impl FeatureNet {
    /// Draw filters i.i.d. from `N(0, 2 / (C_in·9))` with a ChaCha8 stream seeded by `seed`.
    pub fn new(spec: FeatureNetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut filters = Vec::with_capacity(spec.layers.len());
        let mut cin = INPUT_CHANNELS;
        for layer in &spec.layers {
            let std = (2.0 / (cin as f64 * 9.0)).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let n = layer.out_channels * cin * 9;
            let data: Vec<f32> = (0..n).map(|_| normal.sample(&mut rng) as f32).collect();
            filters.push(Tensor::new(vec![layer.out_channels, cin, 3, 3], data)?);
            cin = layer.out_channels;
        }
        Ok(FeatureNet {
            spec,
            seed,
            filters,
        })
    }

    pub fn from_descriptor(d: &NetDescriptor) -> Result<Self> {
        FeatureNet::new(
            FeatureNetSpec {
                layers: d.layers.clone(),
            },
            d.seed,
        )
    }

    pub fn descriptor(&self) -> NetDescriptor {
        NetDescriptor {
            layers: self.spec.layers.clone(),
            seed: self.seed,
        }
    }

    pub fn spec(&self) -> &FeatureNetSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn filters(&self) -> &[Tensor] {
        &self.filters
    }

    pub fn num_layers(&self) -> usize {
        self.spec.layers.len()
    }

    pub fn default_weights(&self) -> Vec<f64> {
        self.spec.default_weights()
    }

    pub fn forward(&self, image: &ImageRgb) -> Result<ActivationStack> {
        self.forward_sparse(image, None)
    }

    /// Forward pass with Top-K applied to the activation of every configured layer
    /// (block index = 0-based layer index). The sparsified map feeds the next layer.
    pub fn forward_with_topk(&self, image: &ImageRgb, cfg: &TopKConfig) -> Result<ActivationStack> {
        self.forward_sparse(image, Some(cfg))
    }

    fn forward_sparse(
        &self,
        image: &ImageRgb,
        cfg: Option<&TopKConfig>,
    ) -> Result<ActivationStack> {
        let keeps: Vec<Option<f64>> = (0..self.num_layers())
            .map(|l| cfg.and_then(|c| c.fraction_for(l)))
            .collect();
        let traces = self.run::<f32>(image.planar(), image.height(), image.width(), &keeps)?;
        let layers = traces
            .into_iter()
            .zip(&self.spec.layers)
            .map(|(t, l)| Tensor::new(vec![l.out_channels, t.h, t.w], t.act))
            .collect::<Result<Vec<_>>>()?;
        Ok(ActivationStack { layers })
    }

    /// Gram matrices of every layer, computed in `f32` like the synthesis loop.
    pub fn target_grams(&self, image: &ImageRgb) -> Result<Vec<Gram>> {
        self.grams::<f32>(image.planar(), image.height(), image.width())
    }

    /// Gram matrices of planar `[3, h, w]` pixels in precision `T`.
    pub fn grams<T: Real>(&self, pixels: &[T], h: usize, w: usize) -> Result<Vec<Gram>> {
        let traces = self.run(pixels, h, w, &[])?;
        Ok(traces
            .iter()
            .zip(&self.spec.layers)
            .map(|(t, l)| gram_of(&t.act, l.out_channels, t.h * t.w))
            .collect())
    }

    /// Gram loss of planar pixels in precision `T`.
    pub fn loss<T: Real>(
        &self,
        pixels: &[T],
        h: usize,
        w: usize,
        targets: &[Gram],
        weights: &[f64],
    ) -> Result<f64> {
        check_loss_inputs(self.num_layers(), targets, weights)?;
        let grams = self.grams(pixels, h, w)?;
        let mut loss = 0.0;
        for ((g, t), &wt) in grams.iter().zip(targets).zip(weights) {
            check_target(g.channels, t)?;
            loss += wt * g.distance(t).powi(2);
        }
        Ok(loss)
    }

    /// Gram loss and its exact gradient with respect to the planar pixels.
    pub fn loss_and_grad<T: Real>(
        &self,
        pixels: &[T],
        h: usize,
        w: usize,
        targets: &[Gram],
        weights: &[f64],
    ) -> Result<(f64, Vec<T>)> {
        check_loss_inputs(self.num_layers(), targets, weights)?;
        let traces = self.run(pixels, h, w, &[])?;
        let mut loss = 0.0;
        // Gradient w.r.t. the input of the layer above (pooled or not).
        let mut upstream: Option<Vec<T>> = None;

        for l in (0..self.num_layers()).rev() {
            let trace = &traces[l];
            let layer = self.spec.layers[l];
            let c = layer.out_channels;
            let n = trace.h * trace.w;
            let target = &targets[l];
            check_target(c, target)?;

            let g = gram_of(&trace.act, c, n);
            let err: Vec<f64> = g
                .data
                .iter()
                .zip(&target.data)
                .map(|(a, b)| a - b)
                .collect();
            loss += weights[l] * err.iter().map(|e| e * e).sum::<f64>();

            // dL/dA = 4 w (G − T) A / N
            let mut grad = match upstream.take() {
                Some(up) if layer.pool_after => unpool(&up, c, trace.h, trace.w),
                Some(up) => up,
                None => vec![T::zero(); c * n],
            };
            let scale = 4.0 * weights[l] / n as f64;
            for e in 0..c {
                let row = &mut grad[e * n..(e + 1) * n];
                for d in 0..c {
                    let coef = err[e * c + d] * scale;
                    if coef != 0.0 {
                        axpy(row, T::from_f64(coef), &trace.act[d * n..(d + 1) * n]);
                    }
                }
            }
            // ReLU: gradient flows only where the activation is positive.
            for (gv, &a) in grad.iter_mut().zip(&trace.act) {
                if a <= T::zero() {
                    *gv = T::zero();
                }
            }
            let cin = if l == 0 {
                INPUT_CHANNELS
            } else {
                self.spec.layers[l - 1].out_channels
            };
            let wts = self.weights_as::<T>(l);
            upstream = Some(conv3x3_backward_input(
                &grad, c, cin, trace.h, trace.w, &wts,
            ));
        }
        Ok((loss, upstream.expect("at least one layer")))
    }

    /// `backward` on an image: gradient of the Gram loss as a `[3, H, W]` tensor.
    pub fn backward(&self, image: &ImageRgb, targets: &[Gram], weights: &[f64]) -> Result<Tensor> {
        let (_, grad) = self.loss_and_grad::<f32>(
            image.planar(),
            image.height(),
            image.width(),
            targets,
            weights,
        )?;
        Tensor::new(vec![3, image.height(), image.width()], grad)
    }

    fn weights_as<T: Real>(&self, l: usize) -> Vec<T> {
        self.filters[l]
            .data()
            .iter()
            .map(|&v| T::from_f32(v))
            .collect()
    }

    fn run<T: Real>(
        &self,
        pixels: &[T],
        h: usize,
        w: usize,
        keeps: &[Option<f64>],
    ) -> Result<Vec<LayerTrace<T>>> {
        if pixels.len() != INPUT_CHANNELS * h * w {
            return Err(Error::shape(format!(
                "expected {INPUT_CHANNELS}x{h}x{w} input, got {} values",
                pixels.len()
            )));
        }
        self.spec.activation_shapes(h, w)?;

        let mut traces: Vec<LayerTrace<T>> = Vec::with_capacity(self.num_layers());
        let mut input = pixels.to_vec();
        let (mut h, mut w) = (h, w);
        let mut cin = INPUT_CHANNELS;
        for (l, layer) in self.spec.layers.iter().enumerate() {
            let padded = pad(&input, cin, h, w);
            let wts = self.weights_as::<T>(l);
            let mut act = conv3x3_forward(&padded, cin, h, w, &wts, layer.out_channels);
            for v in act.iter_mut() {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
            if let Some(keep) = keeps.get(l).copied().flatten() {
                for plane in act.chunks_exact_mut(h * w) {
                    topk::sparsify_plane(plane, keep);
                }
            }
            input = if layer.pool_after {
                avg_pool(&act, layer.out_channels, h, w)
            } else {
                act.clone()
            };
            traces.push(LayerTrace { act, h, w });
            if layer.pool_after {
                h /= 2;
                w /= 2;
            }
            cin = layer.out_channels;
        }
        Ok(traces)
    }
}

fn check_target(channels: usize, t: &Gram) -> Result<()> {
    if t.channels != channels {
        return Err(Error::shape(format!(
            "Gram target has {} channels, layer has {channels}",
            t.channels
        )));
    }
    Ok(())
}

fn pad<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let pw = w + 2;
    let plane = (h + 2) * pw;
    let mut out = vec![T::zero(); c * plane];
    for ch in 0..c {
        for y in 0..h {
            let dst = ch * plane + (y + 1) * pw + 1;
            let src = (ch * h + y) * w;
            out[dst..dst + w].copy_from_slice(&x[src..src + w]);
        }
    }
    out
}

// Both convolution kernels work in "padded-width" coordinates: an output
// position (y, x) lives at index y·(W+2) + x, so for a fixed tap (ky, kx) the
// whole plane is one contiguous axpy against the padded input shifted by
// ky·(W+2) + kx. The two extra columns per row are scratch and are dropped.

fn conv3x3_forward<T: Real>(
    padded: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weights: &[T],
    cout: usize,
) -> Vec<T> {
    let pw = w + 2;
    let plane_in = (h + 2) * pw;
    let len = h * pw - 2;
    let mut acc = vec![T::zero(); h * pw];
    let mut out = vec![T::zero(); cout * h * w];
    for co in 0..cout {
        acc.iter_mut().for_each(|v| *v = T::zero());
        for ci in 0..cin {
            let src = &padded[ci * plane_in..(ci + 1) * plane_in];
            let k = &weights[(co * cin + ci) * 9..(co * cin + ci + 1) * 9];
            for ky in 0..3 {
                for kx in 0..3 {
                    let off = ky * pw + kx;
                    axpy(&mut acc[..len], k[ky * 3 + kx], &src[off..off + len]);
                }
            }
        }
        for y in 0..h {
            let dst = (co * h + y) * w;
            out[dst..dst + w].copy_from_slice(&acc[y * pw..y * pw + w]);
        }
    }
    out
}

fn conv3x3_backward_input<T: Real>(
    grad_out: &[T],
    cout: usize,
    cin: usize,
    h: usize,
    w: usize,
    weights: &[T],
) -> Vec<T> {
    let pw = w + 2;
    let len = h * pw - 2;
    // Output gradient in padded-width layout; scratch columns stay zero.
    let mut gp = vec![T::zero(); cout * h * pw];
    for co in 0..cout {
        for y in 0..h {
            let src = (co * h + y) * w;
            let dst = co * h * pw + y * pw;
            gp[dst..dst + w].copy_from_slice(&grad_out[src..src + w]);
        }
    }
    let mut gpad = vec![T::zero(); (h + 2) * pw];
    let mut out = vec![T::zero(); cin * h * w];
    for ci in 0..cin {
        gpad.iter_mut().for_each(|v| *v = T::zero());
        for co in 0..cout {
            let g = &gp[co * h * pw..co * h * pw + len];
            let k = &weights[(co * cin + ci) * 9..(co * cin + ci + 1) * 9];
            for ky in 0..3 {
                for kx in 0..3 {
                    let off = ky * pw + kx;
                    axpy(&mut gpad[off..off + len], k[ky * 3 + kx], g);
                }
            }
        }
        for y in 0..h {
            let src = (y + 1) * pw + 1;
            let dst = (ci * h + y) * w;
            out[dst..dst + w].copy_from_slice(&gpad[src..src + w]);
        }
    }
    out
}

fn avg_pool<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let mut out = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        let p = &x[ch * h * w..(ch + 1) * h * w];
        for y in 0..ho {
            for xx in 0..wo {
                let i = 2 * y * w + 2 * xx;
                out.push((p[i] + p[i + 1] + p[i + w] + p[i + w + 1]) * quarter);
            }
        }
    }
    out
}

/// Adjoint of `avg_pool`: spread each pooled gradient over its 2×2 window.
fn unpool<T: Real>(g: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..ho {
            for x in 0..wo {
                let v = g[(ch * ho + y) * wo + x] * quarter;
                let i = ch * h * w + 2 * y * w + 2 * x;
                out[i] = v;
                out[i + 1] = v;
                out[i + w] = v;
                out[i + w + 1] = v;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> ImageRgb {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..3 * w * h).map(|_| rng.random::<f32>()).collect();
        ImageRgb::from_planar(w, h, data).unwrap()
    }

    /// Direct nested-loop 3×3 zero-padded convolution.
    fn reference_conv(
        x: &[f64],
        cin: usize,
        h: usize,
        w: usize,
        k: &[f32],
        cout: usize,
    ) -> Vec<f64> {
        let mut out = vec![0.0; cout * h * w];
        for co in 0..cout {
            for y in 0..h {
                for xx in 0..w {
                    let mut s = 0.0;
                    for ci in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (sy, sx) =
                                    (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                s += f64::from(k[((co * cin + ci) * 3 + ky) * 3 + kx])
                                    * x[(ci * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out[(co * h + y) * w + xx] = s;
                }
            }
        }
        out
    }

    #[test]
    fn init_is_deterministic_and_seed_dependent() {
        let spec = FeatureNetSpec::default();
        let a = FeatureNet::new(spec.clone(), 7).unwrap();
        let b = FeatureNet::new(spec.clone(), 7).unwrap();
        let c = FeatureNet::new(spec, 8).unwrap();
        for (x, y) in a.filters().iter().zip(b.filters()) {
            let xb: Vec<u32> = x.data().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u32> = y.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
        assert_ne!(a.filters()[0], c.filters()[0]);
        assert_eq!(a.filters()[1].shape(), &[64, 32, 3, 3]);
    }

    #[test]
    fn filter_statistics_match_he_init() {
        let net =
            FeatureNet::new(FeatureNetSpec::from_pairs(&[(64, false), (64, false)]), 3).unwrap();
        let d = net.filters()[1].data();
        let n = d.len() as f64;
        let mean = d.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let var = d
            .iter()
            .map(|&v| (f64::from(v) - mean).powi(2))
            .sum::<f64>()
            / n;
        let expect = 2.0 / (64.0 * 9.0);
        assert!(mean.abs() < 3.0 * (expect / n).sqrt());
        assert!((var / expect - 1.0).abs() < 0.05, "var {var} vs {expect}");
    }

    #[test]
    fn degenerate_specs_are_rejected() {
        assert!(FeatureNet::new(FeatureNetSpec { layers: vec![] }, 0).is_err());
        assert!(FeatureNet::new(FeatureNetSpec::from_pairs(&[(0, false)]), 0).is_err());
        let net = FeatureNet::new(FeatureNetSpec::default(), 0).unwrap();
        assert!(net.forward(&random_image(12, 12, 0)).is_err());
        assert!(net.forward(&random_image(16, 16, 0)).is_ok());
    }

    #[test]
    fn default_spec_shapes() {
        let net = FeatureNet::new(FeatureNetSpec::default(), 1).unwrap();
        let acts = net.forward(&random_image(32, 32, 1)).unwrap();
        let shapes: Vec<&[usize]> = acts.layers.iter().map(|t| t.shape()).collect();
        assert_eq!(shapes, vec![&[32, 32, 32][..], &[64, 16, 16], &[128, 8, 8]]);
        let unpooled = FeatureNetSpec::from_pairs(&[(32, true), (64, false), (128, false)]);
        assert_eq!(
            unpooled.activation_shapes(32, 32).unwrap(),
            vec![[32, 32, 32], [64, 16, 16], [128, 16, 16]]
        );
    }

    #[test]
    fn zero_and_constant_images() {
        let net = FeatureNet::new(FeatureNetSpec::from_pairs(&[(8, true), (8, false)]), 2).unwrap();
        let zeros = net
            .forward(&ImageRgb::filled(16, 16, [0.0; 3]).unwrap())
            .unwrap();
        assert!(zeros
            .layers
            .iter()
            .all(|t| t.data().iter().all(|&v| v == 0.0)));

        let konst = net
            .forward(&ImageRgb::filled(16, 16, [0.3, 0.6, 0.9]).unwrap())
            .unwrap();
        let a = &konst.layers[0];
        for c in 0..8 {
            let v0 = a.data()[(c * 16 + 1) * 16 + 1];
            for y in 1..15 {
                for x in 1..15 {
                    assert!(
                        (a.data()[(c * 16 + y) * 16 + x] - v0).abs() <= 1e-6 * v0.abs().max(1.0)
                    );
                }
            }
        }
        assert!(konst
            .layers
            .iter()
            .all(|t| t.data().iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn forward_matches_nested_loop_oracle() {
        let net =
            FeatureNet::new(FeatureNetSpec::from_pairs(&[(6, true), (5, false)]), 11).unwrap();
        let img = random_image(10, 8, 5);
        let acts = net.forward(&img).unwrap();

        let x: Vec<f64> = img.planar().iter().map(|&v| f64::from(v)).collect();
        let mut a1 = reference_conv(&x, 3, 8, 10, net.filters()[0].data(), 6);
        a1.iter_mut().for_each(|v| *v = v.max(0.0));
        for (got, want) in acts.layers[0].data().iter().zip(&a1) {
            assert!((f64::from(*got) - want).abs() < 1e-5);
        }
        let mut pooled = vec![0.0; 6 * 4 * 5];
        for c in 0..6 {
            for y in 0..4 {
                for xx in 0..5 {
                    let at = |yy: usize, xxx: usize| a1[(c * 8 + yy) * 10 + xxx];
                    pooled[(c * 4 + y) * 5 + xx] = (at(2 * y, 2 * xx)
                        + at(2 * y, 2 * xx + 1)
                        + at(2 * y + 1, 2 * xx)
                        + at(2 * y + 1, 2 * xx + 1))
                        / 4.0;
                }
            }
        }
        let mut a2 = reference_conv(&pooled, 6, 4, 5, net.filters()[1].data(), 5);
        a2.iter_mut().for_each(|v| *v = v.max(0.0));
        for (got, want) in acts.layers[1].data().iter().zip(&a2) {
            assert!((f64::from(*got) - want).abs() < 1e-5);
        }
        assert_eq!(net.forward(&img).unwrap(), acts);
    }

    #[test]
    fn gram_examples() {
        let ones = Tensor::new(vec![1, 2, 2], vec![1.0; 4]).unwrap();
        assert_eq!(gram(&ones).unwrap().data(), &[1.0]);

        let disjoint =
            Tensor::new(vec![2, 2, 2], vec![1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 3.0, 4.0]).unwrap();
        let g = gram(&disjoint).unwrap();
        assert_eq!(g.get(0, 1), 0.0);
        assert_eq!(g.get(1, 0), 0.0);
        assert_eq!(g.get(0, 0), 5.0 / 4.0);
        assert_eq!(g.get(1, 1), 25.0 / 4.0);

        // Reversing spatial order leaves the Gram matrix unchanged.
        let a = Tensor::new(vec![2, 1, 3], vec![1.0, -2.0, 0.5, 3.0, 1.0, -1.0]).unwrap();
        let mut rev = a.data().to_vec();
        rev[..3].reverse();
        rev[3..].reverse();
        let b = Tensor::new(vec![2, 1, 3], rev).unwrap();
        assert_eq!(gram(&a).unwrap(), gram(&b).unwrap());
    }

    #[test]
    fn gram_loss_hand_computed() {
        // C=2, 2x2 maps.
        let a = Tensor::new(vec![2, 2, 2], vec![1.0, 0.0, 2.0, 1.0, 0.0, 1.0, 1.0, 3.0]).unwrap();
        // G = [[6/4, 5/4], [5/4, 11/4]]
        let target = Gram::new(2, vec![1.0, 1.0, 1.0, 2.0]).unwrap();
        let stack = ActivationStack { layers: vec![a] };
        let loss = gram_loss(&stack, &[target], &[0.5]).unwrap();
        let expect = 0.5 * (0.5f64.powi(2) + 2.0 * 0.25f64.powi(2) + 0.75f64.powi(2));
        assert!((loss - expect).abs() < 1e-12);
        assert!(gram_loss(&stack, &[], &[0.5]).is_err());
    }

    #[test]
    fn gradient_vanishes_at_target_and_scales_with_weights() {
        let net = FeatureNet::new(FeatureNetSpec::from_pairs(&[(8, true), (8, false)]), 4).unwrap();
        let img = random_image(16, 16, 9);
        let targets = net.target_grams(&img).unwrap();
        let w = net.default_weights();
        let g = net.backward(&img, &targets, &w).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));

        let other = random_image(16, 16, 10);
        let g1 = net.backward(&other, &targets, &w).unwrap();
        let w3: Vec<f64> = w.iter().map(|v| v * 3.0).collect();
        let g3 = net.backward(&other, &targets, &w3).unwrap();
        for (a, b) in g1.data().iter().zip(g3.data()) {
            assert!((b - 3.0 * a).abs() <= 1e-5 * (3.0 * a).abs().max(1e-6));
        }
    }

    #[test]
    fn loss_paths_agree() {
        let net = FeatureNet::new(FeatureNetSpec::from_pairs(&[(4, true), (6, false)]), 5).unwrap();
        let img = random_image(12, 12, 1);
        let targets = net.target_grams(&random_image(12, 12, 2)).unwrap();
        let w = net.default_weights();
        let via_stack = gram_loss(&net.forward(&img).unwrap(), &targets, &w).unwrap();
        let px: Vec<f64> = img.planar().iter().map(|&v| f64::from(v)).collect();
        let via_f64 = net.loss(&px, 12, 12, &targets, &w).unwrap();
        let (via_grad, _) = net.loss_and_grad(&px, 12, 12, &targets, &w).unwrap();
        assert!((via_stack - via_f64).abs() <= 1e-5 * via_f64);
        assert!((via_grad - via_f64).abs() <= 1e-12 * via_f64);
    }

    #[test]
    fn descriptor_roundtrip() {
        let net =
            FeatureNet::new(FeatureNetSpec::from_pairs(&[(4, true), (6, false)]), 42).unwrap();
        let json = serde_json::to_string(&net.descriptor()).unwrap();
        assert_eq!(
            json,
            r#"{"layers":[{"out_channels":4,"pool_after":true},{"out_channels":6,"pool_after":false}],"seed":42}"#
        );
        let back: NetDescriptor = serde_json::from_str(&json).unwrap();
        assert_eq!(FeatureNet::from_descriptor(&back).unwrap(), net);
    }
}
