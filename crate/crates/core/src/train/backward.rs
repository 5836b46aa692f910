//! Analytic gradients of the rendering losses.
//!
//! For one ray with samples `i = 1..N`, spacing `delta`, weights
//! `w_i = T_i a_i` and final transmittance `T_end`:
//!
//! * `dC/dc_i = w_i` and `dPhi/dphi_i = w_i`
//! * `dC/dsigma_i = delta * (T_{i+1} c_i - sum_{j>i} w_j c_j - T_end * bg)`
//!
//! The last term is accumulated back-to-front. Density and appearance only see
//! the photometric term; the feature term reaches the feature lattice alone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{sigmoid, softplus, VoxelField};
use crate::grid::{DenseGrid, Stencil, Vec3};
use crate::render::{Decoder, Ray, RenderOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Photometric loss only.
    Pretrain,
    /// Photometric loss plus the weighted feature loss.
    Distill,
}

/// One supervised ray.
#[derive(Clone, Debug)]
pub struct RayTarget<'a> {
    pub ray: Ray,
    pub rgb: [f64; 3],
    pub feature: Option<&'a [f64]>,
}

/// Flat gradients laid out like each lattice's value buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub density: Vec<f64>,
    pub appearance: Vec<f64>,
    pub features: Vec<f64>,
    pub decoder: Vec<f64>,
    pub loss_rgb: f64,
    pub loss_feature: f64,
}

impl Gradients {
    pub fn zeros(field: &VoxelField, decoder: &Decoder) -> Self {
        let nodes = field.geometry().node_count();
        Self {
            density: vec![0.0; nodes],
            appearance: vec![0.0; nodes * field.appearance_channels()],
            features: vec![0.0; nodes * field.feature_dim()],
            decoder: vec![0.0; decoder.params().len()],
            loss_rgb: 0.0,
            loss_feature: 0.0,
        }
    }

    fn add(&mut self, other: &Gradients) {
        for (a, b) in [
            (&mut self.density, &other.density),
            (&mut self.appearance, &other.appearance),
            (&mut self.features, &other.features),
            (&mut self.decoder, &other.decoder),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.loss_rgb += other.loss_rgb;
        self.loss_feature += other.loss_feature;
    }
}

pub(crate) struct DenseView<'a> {
    density: &'a DenseGrid,
    appearance: &'a DenseGrid,
    features: Option<&'a DenseGrid>,
}

impl<'a> DenseView<'a> {
    pub(crate) fn new(field: &'a VoxelField) -> Result<Self> {
        let not_dense = || Error::InvalidInput("gradient computation requires dense lattices".into());
        Ok(Self {
            density: field.density().as_dense().ok_or_else(not_dense)?,
            appearance: field.appearance().as_dense().ok_or_else(not_dense)?,
            features: match field.features() {
                Some(f) => Some(f.as_dense().ok_or_else(not_dense)?),
                None => None,
            },
        })
    }
}

struct SampleRecord {
    stencil: Stencil,
    raw: f64,
    w: f64,
    t_after: f64,
    rgb: [f64; 3],
}

/// Reusable per-ray scratch space.
#[derive(Default)]
pub(crate) struct RayScratch {
    samples: Vec<SampleRecord>,
    latents: Vec<f64>,
    d_latent: Vec<f64>,
    upstream_feat: Vec<f64>,
}

/// Forward and backward pass for one ray, accumulating into `grads`.
/// `rgb_scale` and `feat_scale` are the loss gradient factors `dL/dC = rgb_scale * (C - gt)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn ray_backward(
    view: &DenseView,
    field: &VoxelField,
    decoder: &Decoder,
    target: &RayTarget,
    phase: Phase,
    rgb_scale: f64,
    feat_scale: f64,
    opts: &RenderOptions,
    scratch: &mut RayScratch,
    grads: &mut Gradients,
) -> (f64, f64) {
    let geometry = field.geometry();
    let ray = &target.ray;
    let (n, delta) = opts.spacing(ray, geometry.min_voxel_edge());
    let c_app = view.appearance.channels();
    let use_feat = phase == Phase::Distill && view.features.is_some() && target.feature.is_some();
    let m = if use_feat { view.features.map_or(0, |f| f.channels()) } else { 0 };

    scratch.samples.clear();
    scratch.latents.clear();
    let mut transmittance = 1.0;
    let mut color = [0.0; 3];
    let mut feature = vec![0.0; m];
    let mut latent = vec![0.0; c_app];
    let mut feat = vec![0.0; m];
    for i in 0..n {
        let t = ray.t_near + (i as f64 + 0.5) * delta;
        let p: Vec3 = ray.at(t);
        let Some(stencil) = Stencil::new(geometry, &p) else {
            continue;
        };
        let mut raw = [0.0];
        view.density.gather(&stencil, &mut raw);
        let sigma = softplus(raw[0]);
        let a = 1.0 - (-sigma * delta).exp();
        let w = transmittance * a;
        view.appearance.gather(&stencil, &mut latent);
        let rgb = decoder.rgb(&latent, &ray.direction);
        for c in 0..3 {
            color[c] += w * rgb[c];
        }
        if use_feat {
            view.features.expect("checked").gather(&stencil, &mut feat);
            for (f, v) in feature.iter_mut().zip(&feat) {
                *f += w * v;
            }
        }
        transmittance *= 1.0 - a;
        scratch.latents.extend_from_slice(&latent);
        scratch.samples.push(SampleRecord { stencil, raw: raw[0], w, t_after: transmittance, rgb });
        if transmittance < opts.early_stop {
            break;
        }
    }
    let bg = opts.background;
    let mut g_color = [0.0; 3];
    let mut loss_rgb = 0.0;
    for c in 0..3 {
        color[c] += transmittance * bg[c];
        let r = color[c] - target.rgb[c];
        loss_rgb += r * r;
        g_color[c] = rgb_scale * r;
    }
    let mut loss_feat = 0.0;
    scratch.upstream_feat.clear();
    if use_feat {
        let gt = target.feature.expect("checked");
        for (f, g) in feature.iter().zip(gt) {
            let r = f - g;
            loss_feat += r * r;
            scratch.upstream_feat.push(feat_scale * r);
        }
    }

    // Back-to-front: suffix = sum_{j>i} w_j (c_j . g) + T_end (bg . g)
    let dot = |v: &[f64; 3]| v[0] * g_color[0] + v[1] * g_color[1] + v[2] * g_color[2];
    let mut suffix = transmittance * dot(&bg);
    scratch.d_latent.resize(c_app, 0.0);
    let mut d_feat = vec![0.0; m];
    for (i, s) in scratch.samples.iter().enumerate().rev() {
        let cg = dot(&s.rgb);
        let d_sigma = delta * (s.t_after * cg - suffix);
        suffix += s.w * cg;
        let d_raw = d_sigma * sigmoid(s.raw);
        view.density.scatter(&s.stencil, &[d_raw], &mut grads.density);

        let mut d_logits = [0.0; 3];
        for c in 0..3 {
            d_logits[c] = s.w * g_color[c] * s.rgb[c] * (1.0 - s.rgb[c]);
        }
        let lat = &scratch.latents[i * c_app..(i + 1) * c_app];
        decoder.backward(lat, &ray.direction, d_logits, &mut scratch.d_latent, &mut grads.decoder);
        view.appearance.scatter(&s.stencil, &scratch.d_latent, &mut grads.appearance);

        if use_feat {
            for (d, u) in d_feat.iter_mut().zip(&scratch.upstream_feat) {
                *d = s.w * u;
            }
            view.features.expect("checked").scatter(&s.stencil, &d_feat, &mut grads.features);
        }
    }
    (loss_rgb, loss_feat)
}

/// Mean losses over the batch and their gradients.
///
/// `loss_rgb` is the MSE over all ray colors; in the distill phase
/// `loss_feature` is the MSE over all ray features and its gradient, scaled by
/// `lambda`, flows into the feature lattice only.
pub fn backward(
    field: &VoxelField,
    decoder: &Decoder,
    batch: &[RayTarget],
    phase: Phase,
    lambda: f64,
    opts: &RenderOptions,
) -> Result<Gradients> {
    let view = DenseView::new(field)?;
    decoder.validate(field.appearance_channels())?;
    let mut grads = Gradients::zeros(field, decoder);
    if batch.is_empty() {
        return Ok(grads);
    }
    let m = field.feature_dim();
    if phase == Phase::Distill {
        for t in batch {
            if t.feature.is_some_and(|f| f.len() != m) {
                return Err(Error::ShapeMismatch(format!("target features must have {m} channels")));
            }
        }
    }
    let (rgb_scale, feat_scale) = loss_scales(batch.len(), m, lambda);
    let mut scratch = RayScratch::default();
    for target in batch {
        let (lr, lf) =
            ray_backward(&view, field, decoder, target, phase, rgb_scale, feat_scale, opts, &mut scratch, &mut grads);
        grads.loss_rgb += lr;
        grads.loss_feature += lf;
    }
    grads.loss_rgb /= (3 * batch.len()) as f64;
    if m > 0 {
        grads.loss_feature /= (m * batch.len()) as f64;
    }
    Ok(grads)
}

pub(crate) fn loss_scales(batch: usize, feature_dim: usize, lambda: f64) -> (f64, f64) {
    let rgb = 2.0 / (3 * batch) as f64;
    let feat = if feature_dim > 0 { lambda * 2.0 / (feature_dim * batch) as f64 } else { 0.0 };
    (rgb, feat)
}

/// Parallel-friendly variant: rays are split into a fixed number of chunks,
/// each accumulating into its own buffers, merged in chunk order.
pub(crate) fn backward_chunked(
    field: &VoxelField,
    decoder: &Decoder,
    batch: &[RayTarget],
    phase: Phase,
    lambda: f64,
    opts: &RenderOptions,
    chunks: usize,
) -> Result<Gradients> {
    let view = DenseView::new(field)?;
    let m = field.feature_dim();
    let (rgb_scale, feat_scale) = loss_scales(batch.len().max(1), m, lambda);
    let chunk_len = batch.len().div_ceil(chunks.max(1)).max(1);
    let run = |part: &[RayTarget]| {
        let mut grads = Gradients::zeros(field, decoder);
        let mut scratch = RayScratch::default();
        for target in part {
            let (lr, lf) = ray_backward(
                &view,
                field,
                decoder,
                target,
                phase,
                rgb_scale,
                feat_scale,
                opts,
                &mut scratch,
                &mut grads,
            );
            grads.loss_rgb += lr;
            grads.loss_feature += lf;
        }
        grads
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<Gradients> = {
        use rayon::prelude::*;
        batch.par_chunks(chunk_len).map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Gradients> = batch.chunks(chunk_len).map(run).collect();

    let mut iter = parts.into_iter();
    let mut total = iter.next().unwrap_or_else(|| Gradients::zeros(field, decoder));
    for g in iter {
        total.add(&g);
    }
    total.loss_rgb /= (3 * batch.len().max(1)) as f64;
    if m > 0 {
        total.loss_feature /= (m * batch.len().max(1)) as f64;
    }
    Ok(total)
}
