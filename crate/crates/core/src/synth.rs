//! Gram-matching texture synthesis: optimize a noise image until its Gram
//! statistics match a target, scrambling global layout while keeping local texture.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featnet::{FeatureNet, Gram};
use crate::image::ImageRgb;

pub const DEFAULT_STEPS: usize = 100;
pub const FAST_STEPS: usize = 10;
pub const INIT_MEAN: f64 = 0.5;
pub const INIT_STD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub seed: u64,
    pub steps: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub clamp: [f32; 2],
    /// Per-layer Gram weights; `None` means `1 / C_l²`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_weights: Option<Vec<f64>>,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            seed: 0,
            steps: DEFAULT_STEPS,
            learning_rate: 0.05,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            clamp: [0.0, 1.0],
            layer_weights: None,
        }
    }
}

impl SynthesisConfig {
    pub fn with_seed(seed: u64) -> Self {
        SynthesisConfig {
            seed,
            ..Default::default()
        }
    }

    /// The 10-step approximation used for corpus-scale generation.
    pub fn fast(seed: u64) -> Self {
        SynthesisConfig {
            seed,
            steps: FAST_STEPS,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("Adam epsilon must be positive"));
        }
        let [lo, hi] = self.clamp;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::config("clamp range must satisfy lo < hi"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moment estimates for Adam, with the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.t
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn update(&mut self, params: &mut [f32], grad: &[f32], p: &AdamParams) {
        assert_eq!(params.len(), self.m.len(), "parameter length changed");
        assert_eq!(grad.len(), self.m.len(), "gradient length mismatch");
        self.t += 1;
        let bc1 = 1.0 - p.beta1.powi(self.t as i32);
        let bc2 = 1.0 - p.beta2.powi(self.t as i32);
        for (((x, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let g = f64::from(g);
            *m = p.beta1 * *m + (1.0 - p.beta1) * g;
            *v = p.beta2 * *v + (1.0 - p.beta2) * g * g;
            let step = p.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + p.eps);
            *x = (f64::from(*x) - step) as f32;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub image: ImageRgb,
    /// Loss evaluated before each of the `steps` updates.
    pub loss_trace: Vec<f64>,
    /// Loss of the returned image.
    pub final_loss: f64,
    pub seed: u64,
    pub steps: usize,
}

/// Seeded starting image: `N(0.5, 0.25²)` per pixel, clamped into range.
pub fn initial_noise(width: usize, height: usize, seed: u64, clamp: [f32; 2]) -> Result<ImageRgb> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(INIT_MEAN, INIT_STD).expect("valid normal");
    let data = (0..3 * width * height)
        .map(|_| (normal.sample(&mut rng) as f32).clamp(clamp[0], clamp[1]))
        .collect();
    ImageRgb::from_planar(width, height, data)
}

pub fn synthesize(
    net: &FeatureNet,
    target: &ImageRgb,
    cfg: &SynthesisConfig,
) -> Result<SynthesisResult> {
    let targets = net.target_grams(target)?;
    synthesize_to_grams(net, &targets, target.width(), target.height(), cfg)
}

/// Synthesis against precomputed Gram targets.
pub fn synthesize_to_grams(
    net: &FeatureNet,
    targets: &[Gram],
    width: usize,
    height: usize,
    cfg: &SynthesisConfig,
) -> Result<SynthesisResult> {
    cfg.validate()?;
    let weights = match &cfg.layer_weights {
        Some(w) if w.len() != net.num_layers() => {
            return Err(Error::config(format!(
                "{} layer weights for a {}-layer net",
                w.len(),
                net.num_layers()
            )))
        }
        Some(w) => w.clone(),
        None => net.default_weights(),
    };
    let [lo, hi] = cfg.clamp;
    let mut pixels = initial_noise(width, height, cfg.seed, cfg.clamp)?
        .planar()
        .to_vec();
    let adam = cfg.adam();
    let mut state = AdamState::new(pixels.len());
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let (loss, grad) = net.loss_and_grad::<f32>(&pixels, height, width, targets, &weights)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, loss });
        }
        trace.push(loss);
        state.update(&mut pixels, &grad, &adam);
        for p in pixels.iter_mut() {
            *p = p.clamp(lo, hi);
        }
    }
    let final_loss = net.loss::<f32>(&pixels, height, width, targets, &weights)?;
    if !final_loss.is_finite() {
        return Err(Error::Diverged {
            step: cfg.steps,
            loss: final_loss,
        });
    }
    Ok(SynthesisResult {
        image: ImageRgb::from_planar(width, height, pixels)?,
        loss_trace: trace,
        final_loss,
        seed: cfg.seed,
        steps: cfg.steps,
    })
}

/// `Σ_l ‖G_l(image) − G_l(target)‖_F / Σ_l ‖G_l(target)‖_F`
pub fn relative_gram_distance(
    net: &FeatureNet,
    image: &ImageRgb,
    target: &ImageRgb,
) -> Result<f64> {
    let a = net.target_grams(image)?;
    let b = net.target_grams(target)?;
    let num: f64 = a.iter().zip(&b).map(|(x, y)| x.distance(y)).sum();
    let den: f64 = b.iter().map(Gram::frobenius).sum();
    Ok(if den == 0.0 { 0.0 } else { num / den })
}

/// Write a loss trace as `step,loss` CSV.
pub fn trace_csv(trace: &[f64]) -> String {
    let mut s = String::from("step,loss\n");
    for (i, l) in trace.iter().enumerate() {
        s.push_str(&format!("{i},{l:e}\n"));
    }
    s
}
