//! Fitting a field to posed images, then distilling teacher features into it.
//!
//! Training runs in two phases over random batches of pixels from the
//! training views. The pretrain phase fits density and appearance to the
//! photometric loss. The distill phase adds the feature loss weighted by
//! `lambda`; its gradient only reaches the feature lattice.

mod adam;
mod backward;
mod loss;

use std::fmt;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use backward::{backward, Gradients, Phase, RayTarget};
pub use loss::{joint_loss, photometric_loss, psnr_from_mse};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::VoxelField;
use crate::grid::{GridGeometry, Lattice};
use crate::io::{PosedDataset, Split};
use crate::render::{Decoder, MlpDecoder, Ray, RenderOptions, DEFAULT_FREQUENCIES, DEFAULT_HIDDEN};

/// Feature-loss weight.
pub const DEFAULT_LAMBDA: f64 = 0.001;
pub const DEFAULT_BATCH: usize = 4096;
/// Gradient work is split into this many chunks, merged in order.
const GRADIENT_CHUNKS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DecoderConfig {
    Direct,
    Mlp { latent_dim: usize, hidden: usize, frequencies: usize },
}

impl DecoderConfig {
    pub fn mlp() -> Self {
        DecoderConfig::Mlp { latent_dim: 12, hidden: DEFAULT_HIDDEN, frequencies: DEFAULT_FREQUENCIES }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Photometric-only iterations (each iteration is one batch).
    pub pretrain_iters: usize,
    /// Joint-loss iterations.
    pub distill_iters: usize,
    pub lambda: f64,
    pub lr_density: f64,
    pub lr_appearance: f64,
    pub lr_features: f64,
    pub lr_decoder: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Nodes per axis of the trained grid.
    pub resolution: usize,
    pub decoder: DecoderConfig,
    /// Emit a log entry every this many iterations (0 disables).
    pub log_every: usize,
    /// Sample spacing as a fraction of the smallest voxel edge.
    pub step_scale: f64,
    /// Transmittance below which rays stop marching.
    pub early_stop: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pretrain_iters: 1000,
            distill_iters: 300,
            lambda: DEFAULT_LAMBDA,
            lr_density: 0.1,
            lr_appearance: 0.1,
            lr_features: 0.1,
            lr_decoder: 1e-3,
            batch_size: DEFAULT_BATCH,
            seed: 0,
            resolution: 32,
            decoder: DecoderConfig::Direct,
            log_every: 50,
            step_scale: 0.5,
            early_stop: 1e-4,
        }
    }
}

impl TrainConfig {
    /// Schedule used for the 32^3 synthetic scenes: a faster density rate
    /// sharpens surfaces to within half a voxel of the true boundary.
    pub fn synthetic() -> Self {
        Self { pretrain_iters: 1000, lr_density: 1.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.into()));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be >= 0");
        }
        if self.pretrain_iters + self.distill_iters == 0 {
            return bad("at least one training iteration is required");
        }
        if self.batch_size == 0 {
            return bad("batch size must be > 0");
        }
        let lrs = [self.lr_density, self.lr_appearance, self.lr_features, self.lr_decoder];
        if lrs.iter().any(|lr| !(*lr > 0.0) || !lr.is_finite()) {
            return bad("learning rates must be positive");
        }
        if self.resolution < 2 {
            return bad("resolution must be >= 2");
        }
        if !(self.step_scale > 0.0) {
            return bad("step_scale must be > 0");
        }
        if let DecoderConfig::Mlp { latent_dim, hidden, .. } = self.decoder {
            if latent_dim == 0 || hidden == 0 {
                return bad("decoder dimensions must be > 0");
            }
        }
        Ok(())
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions { step_scale: self.step_scale, early_stop: self.early_stop, ..RenderOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub iter: usize,
    pub phase: Phase,
    pub loss_rgb: f64,
    pub loss_feature: f64,
    pub psnr: f64,
}

impl fmt::Display for TrainLogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let phase = match self.phase {
            Phase::Pretrain => "pretrain",
            Phase::Distill => "distill",
        };
        write!(
            f,
            "iter={} phase={} loss_rgb={:.6e} loss_feat={:.6e} psnr={:.2}",
            self.iter, phase, self.loss_rgb, self.loss_feature, self.psnr
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub field: VoxelField,
    pub decoder: Decoder,
    /// Per-iteration batch losses `(loss_rgb, loss_feature)`.
    pub losses: Vec<(f64, f64)>,
    pub log: Vec<TrainLogEntry>,
}

struct PixelRay {
    ray: Ray,
    rgb: [f64; 3],
    frame: usize,
    pixel: usize,
}

/// Rays of every training pixel whose ray meets the box. Pixels that miss
/// the box cannot be influenced by the field.
fn collect_rays(dataset: &PosedDataset) -> Vec<PixelRay> {
    let bounds = dataset.bounds();
    let mut out = Vec::new();
    for (k, frame) in dataset.frames.iter().enumerate() {
        if frame.split != Split::Train {
            continue;
        }
        let cam = &frame.camera;
        for y in 0..cam.height {
            for x in 0..cam.width {
                let Some(ray) = cam.pixel_ray(x, y, bounds) else {
                    continue;
                };
                let pixel = (y * cam.width + x) as usize;
                out.push(PixelRay { ray, rgb: frame.pixel_rgb(pixel), frame: k, pixel });
            }
        }
    }
    out
}

pub fn initial_field(dataset: &PosedDataset, config: &TrainConfig) -> Result<(VoxelField, Decoder)> {
    let (lo, hi) = dataset.bounds();
    let geometry = GridGeometry::new([config.resolution; 3], lo, hi)?;
    let (channels, decoder) = match config.decoder {
        DecoderConfig::Direct => (3, Decoder::Direct),
        DecoderConfig::Mlp { latent_dim, hidden, frequencies } => {
            (latent_dim, Decoder::Mlp(MlpDecoder::new(latent_dim, hidden, frequencies, config.seed)))
        }
    };
    let feature_dim = if config.distill_iters > 0 { dataset.feature_dim } else { 0 };
    Ok((VoxelField::empty(geometry, channels, feature_dim)?, decoder))
}

/// Trains a fresh field on the training split.
pub fn train(dataset: &PosedDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let (field, decoder) = initial_field(dataset, config)?;
    train_from(field, decoder, dataset, config)
}

fn dense_values(lattice: &mut Lattice) -> Result<&mut [f32]> {
    lattice
        .as_dense_mut()
        .map(|d| d.values_mut())
        .ok_or_else(|| Error::InvalidInput("training requires dense lattices".into()))
}

/// Continues optimizing `field` and `decoder`. Deterministic given the seed.
pub fn train_from(
    mut field: VoxelField,
    mut decoder: Decoder,
    dataset: &PosedDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    dataset.validate()?;
    decoder.validate(field.appearance_channels())?;
    let (lo, hi) = dataset.bounds();
    field.geometry().ensure_same(&GridGeometry::new(field.geometry().resolution(), lo, hi)?, "field vs dataset box")?;
    let train_views = dataset.split(Split::Train).count();
    if train_views < 2 {
        return Err(Error::InsufficientData(format!("training needs at least 2 views, dataset has {train_views}")));
    }
    let rays = collect_rays(dataset);
    if rays.is_empty() {
        return Err(Error::InsufficientData("no training ray meets the scene box".into()));
    }
    let distill_rays: Vec<usize> = if config.distill_iters > 0 {
        if field.feature_dim() == 0 || !dataset.has_features() {
            return Err(Error::MissingFeatures("the distill phase needs feature maps and a feature lattice".into()));
        }
        if field.feature_dim() != dataset.feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "field has {} feature channels, dataset {}",
                field.feature_dim(),
                dataset.feature_dim
            )));
        }
        (0..rays.len()).filter(|&i| dataset.frames[rays[i].frame].features.is_some()).collect()
    } else {
        Vec::new()
    };

    let opts = config.render_options();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let nodes = field.geometry().node_count();
    let mut st_density = AdamState::new(nodes);
    let mut st_appearance = AdamState::new(nodes * field.appearance_channels());
    let mut st_features = AdamState::new(nodes * field.feature_dim());
    let mut st_decoder = AdamState::new(decoder.params().len());
    let dim = dataset.feature_dim;
    let total = config.pretrain_iters + config.distill_iters;
    let mut losses = Vec::with_capacity(total);
    let mut log = Vec::new();
    let mut feature_buf: Vec<f64> = Vec::new();

    for iter in 0..total {
        let phase = if iter < config.pretrain_iters { Phase::Pretrain } else { Phase::Distill };
        let picks: Vec<usize> = match phase {
            Phase::Pretrain => (0..config.batch_size).map(|_| rng.random_range(0..rays.len())).collect(),
            Phase::Distill => {
                (0..config.batch_size).map(|_| distill_rays[rng.random_range(0..distill_rays.len())]).collect()
            }
        };
        if phase == Phase::Distill {
            feature_buf.clear();
            for &i in &picks {
                let r = &rays[i];
                let f = dataset.frames[r.frame].features.as_ref().expect("filtered");
                feature_buf.extend(f[r.pixel * dim..(r.pixel + 1) * dim].iter().map(|v| *v as f64));
            }
        }
        let batch: Vec<RayTarget> = picks
            .iter()
            .enumerate()
            .map(|(k, &i)| RayTarget {
                ray: rays[i].ray,
                rgb: rays[i].rgb,
                feature: (phase == Phase::Distill).then(|| &feature_buf[k * dim..(k + 1) * dim]),
            })
            .collect();
        let grads = backward::backward_chunked(&field, &decoder, &batch, phase, config.lambda, &opts, GRADIENT_CHUNKS)?;
        adam_step(dense_values(field.density_mut())?, &grads.density, &mut st_density, config.lr_density)?;
        adam_step(dense_values(field.appearance_mut())?, &grads.appearance, &mut st_appearance, config.lr_appearance)?;
        if phase == Phase::Distill {
            if let Some(f) = field.features_mut() {
                adam_step(dense_values(f)?, &grads.features, &mut st_features, config.lr_features)?;
            }
        }
        if !decoder.params().is_empty() {
            adam_step(decoder.params_mut(), &grads.decoder, &mut st_decoder, config.lr_decoder)?;
        }
        losses.push((grads.loss_rgb, grads.loss_feature));
        let last = iter + 1 == total;
        if config.log_every > 0 && ((iter + 1) % config.log_every == 0 || last) {
            let entry = TrainLogEntry {
                iter: iter + 1,
                phase,
                loss_rgb: grads.loss_rgb,
                loss_feature: grads.loss_feature,
                psnr: psnr_from_mse(grads.loss_rgb),
            };
            log::info!("{entry}");
            log.push(entry);
        }
    }
    Ok(TrainOutcome { field, decoder, losses, log })
}

/// Mean of the last `window` entries of `values`.
pub fn smoothed_tail(values: &[f64], window: usize) -> f64 {
    let w = window.clamp(1, values.len().max(1));
    let tail = &values[values.len().saturating_sub(w)..];
    if tail.is_empty() {
        0.0
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}
