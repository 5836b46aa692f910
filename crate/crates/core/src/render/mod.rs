//! Ray generation and emission-absorption volume rendering.
//!
//! Samples are placed at the midpoints of `N` equal segments covering the
//! ray's box interval, so every segment has the same length `delta`. Each
//! sample contributes `w_i = T_i * (1 - exp(-sigma_i * delta))` with
//! `T_i = prod_{j < i} (1 - alpha_j)`; whatever transmittance remains after
//! the last sample is filled with the background color.

mod camera;
mod decoder;
mod frame;

pub use camera::{slab_intersect, Camera, Ray};
pub use decoder::{Decoder, MlpDecoder, DEFAULT_FREQUENCIES, DEFAULT_HIDDEN};
pub use frame::{render_frame, FrameMode, OVERLAY_TINT};

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{softplus, VoxelField};
use crate::grid::{Bitmap3D, Stencil, Vec3};

/// Foreground-alpha threshold that turns a masked render into a binary mask.
pub const MASK_ALPHA_THRESHOLD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    Rgb,
    Feature,
    Depth,
    Alpha,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub background: [f64; 3],
    /// Sample spacing as a fraction of the smallest voxel edge.
    pub step_scale: f64,
    /// Fixed sample count per ray, overriding `step_scale`.
    pub samples: Option<usize>,
    /// Stop marching once transmittance drops below this (0 disables).
    pub early_stop: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { background: [1.0, 1.0, 1.0], step_scale: 0.5, samples: None, early_stop: 0.0 }
    }
}

impl RenderOptions {
    /// Number of samples and their common spacing along `ray`.
    pub fn spacing(&self, ray: &Ray, base_step: f64) -> (usize, f64) {
        let len = ray.t_far - ray.t_near;
        let n = match self.samples {
            Some(n) => n.max(2),
            None => ((len / (self.step_scale * base_step)).ceil() as usize).max(2),
        };
        (n, len / n as f64)
    }
}

/// Anything that can be queried for density, color and semantic features.
pub trait RadianceSource: Sync {
    /// Region outside of which density is zero.
    fn bounds(&self) -> (Vec3, Vec3);
    /// Characteristic length (smallest voxel edge) that sets the step size.
    fn base_step(&self) -> f64;
    fn feature_dim(&self) -> usize;
    /// Returns activated density and, when `want_rgb`, the decoded color.
    /// Writes the feature into `feature` when it is non-empty.
    fn sample(&self, p: &Vec3, dir: &Vec3, want_rgb: bool, feature: &mut [f64]) -> (f64, [f64; 3]);
}

/// A field paired with its color decoder.
#[derive(Clone, Copy)]
pub struct FieldSource<'a> {
    pub field: &'a VoxelField,
    pub decoder: &'a Decoder,
}

impl<'a> FieldSource<'a> {
    pub fn new(field: &'a VoxelField, decoder: &'a Decoder) -> Self {
        Self { field, decoder }
    }
}

impl RadianceSource for FieldSource<'_> {
    fn bounds(&self) -> (Vec3, Vec3) {
        let g = self.field.geometry();
        (g.bbox_min(), g.bbox_max())
    }

    fn base_step(&self) -> f64 {
        self.field.geometry().min_voxel_edge()
    }

    fn feature_dim(&self) -> usize {
        self.field.feature_dim()
    }

    fn sample(&self, p: &Vec3, dir: &Vec3, want_rgb: bool, feature: &mut [f64]) -> (f64, [f64; 3]) {
        let Some(stencil) = Stencil::new(self.field.geometry(), p) else {
            feature.fill(0.0);
            return (0.0, [0.0; 3]);
        };
        let mut raw = [0.0];
        self.field.density().eval_into(p, &stencil, &mut raw);
        let sigma = softplus(raw[0]);
        let mut rgb = [0.0; 3];
        if want_rgb {
            let c = self.field.appearance_channels();
            let mut stack = [0.0f64; 32];
            let mut heap;
            let latent: &mut [f64] = if c <= stack.len() {
                &mut stack[..c]
            } else {
                heap = vec![0.0; c];
                &mut heap
            };
            self.field.appearance().eval_into(p, &stencil, latent);
            rgb = self.decoder.rgb(latent, dir);
        }
        if !feature.is_empty() {
            match self.field.features() {
                Some(f) => f.eval_into(p, &stencil, feature),
                None => feature.fill(0.0),
            }
        }
        (sigma, rgb)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSide {
    /// Keep density where the mask bit is set: `sigma * b`.
    Foreground,
    /// Keep density where the mask bit is clear: `sigma * (1 - b)`.
    Background,
}

/// Restricts a source's density with a nearest-node bitmap lookup.
pub struct MaskedSource<'a> {
    pub inner: &'a dyn RadianceSource,
    pub mask: &'a Bitmap3D,
    pub side: MaskSide,
}

impl RadianceSource for MaskedSource<'_> {
    fn bounds(&self) -> (Vec3, Vec3) {
        self.inner.bounds()
    }

    fn base_step(&self) -> f64 {
        self.inner.base_step()
    }

    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    fn sample(&self, p: &Vec3, dir: &Vec3, want_rgb: bool, feature: &mut [f64]) -> (f64, [f64; 3]) {
        let (sigma, rgb) = self.inner.sample(p, dir, want_rgb, feature);
        let bit = if self.mask.sample_nearest(p) { 1.0 } else { 0.0 };
        let keep = match self.side {
            MaskSide::Foreground => bit,
            MaskSide::Background => 1.0 - bit,
        };
        (sigma * keep, rgb)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderSample {
    pub color: [f64; 3],
    pub feature: Vec<f64>,
    /// Expected ray distance; empty space contributes `t_far`.
    pub depth: f64,
    pub alpha: f64,
}

impl RenderSample {
    fn miss(background: [f64; 3], feature_dim: usize) -> Self {
        Self { color: background, feature: vec![0.0; feature_dim], depth: 0.0, alpha: 0.0 }
    }
}

/// Composites one ray. Features are only accumulated in [`RenderMode::Feature`].
pub fn render_ray(source: &dyn RadianceSource, ray: &Ray, mode: RenderMode, opts: &RenderOptions) -> RenderSample {
    let feature_dim = if mode == RenderMode::Feature { source.feature_dim() } else { 0 };
    let want_rgb = mode == RenderMode::Rgb;
    let (n, delta) = opts.spacing(ray, source.base_step());
    let mut transmittance = 1.0;
    let mut color = [0.0; 3];
    let mut feature = vec![0.0; feature_dim];
    let mut point_feature = vec![0.0; feature_dim];
    let mut depth = 0.0;
    let mut alpha = 0.0;
    for i in 0..n {
        let t = ray.t_near + (i as f64 + 0.5) * delta;
        let p = ray.at(t);
        let (sigma, rgb) = source.sample(&p, &ray.direction, want_rgb, &mut point_feature);
        let a = 1.0 - (-sigma * delta).exp();
        let w = transmittance * a;
        for c in 0..3 {
            color[c] += w * rgb[c];
        }
        for (f, v) in feature.iter_mut().zip(&point_feature) {
            *f += w * v;
        }
        depth += w * t;
        alpha += w;
        transmittance *= 1.0 - a;
        if transmittance < opts.early_stop {
            break;
        }
    }
    for c in 0..3 {
        color[c] += transmittance * opts.background[c];
    }
    depth += transmittance * ray.t_far;
    RenderSample { color, feature, depth, alpha }
}

/// Per-pixel render of a full camera image, row-major from the top-left.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub width: u32,
    pub height: u32,
    pub color: Vec<[f64; 3]>,
    pub alpha: Vec<f64>,
    pub depth: Vec<f64>,
    pub feature_dim: usize,
    /// `feature_dim` values per pixel (empty unless rendered in feature mode).
    pub features: Vec<f64>,
}

impl RenderedImage {
    pub fn pixel_feature(&self, index: usize) -> &[f64] {
        &self.features[index * self.feature_dim..(index + 1) * self.feature_dim]
    }

    /// Colors quantized to 8-bit RGB.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.color.iter().flat_map(|c| c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)).collect()
    }

    /// Binary mask `alpha > MASK_ALPHA_THRESHOLD`.
    pub fn alpha_mask(&self) -> Vec<bool> {
        self.alpha.iter().map(|a| *a > MASK_ALPHA_THRESHOLD).collect()
    }
}

pub fn render_image(
    source: &dyn RadianceSource,
    camera: &Camera,
    mode: RenderMode,
    opts: &RenderOptions,
) -> RenderedImage {
    let (w, h) = (camera.width, camera.height);
    let bounds = source.bounds();
    let feature_dim = if mode == RenderMode::Feature { source.feature_dim() } else { 0 };
    let render_row = |y: u32| -> Vec<RenderSample> {
        (0..w)
            .map(|x| match camera.pixel_ray(x, y, bounds) {
                Some(ray) => render_ray(source, &ray, mode, opts),
                None => RenderSample::miss(opts.background, feature_dim),
            })
            .collect()
    };
    #[cfg(feature = "parallel")]
    let rows: Vec<Vec<RenderSample>> = (0..h).into_par_iter().map(render_row).collect();
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Vec<RenderSample>> = (0..h).map(render_row).collect();

    let n = camera.pixel_count();
    let mut img = RenderedImage {
        width: w,
        height: h,
        color: Vec::with_capacity(n),
        alpha: Vec::with_capacity(n),
        depth: Vec::with_capacity(n),
        feature_dim,
        features: Vec::with_capacity(n * feature_dim),
    };
    for s in rows.into_iter().flatten() {
        img.color.push(s.color);
        img.alpha.push(s.alpha);
        img.depth.push(s.depth);
        img.features.extend_from_slice(&s.feature);
    }
    img
}

/// Foreground-only render of `mask`: soft alpha per pixel and its binarization.
pub fn render_mask(
    source: &dyn RadianceSource,
    mask: &Bitmap3D,
    camera: &Camera,
    opts: &RenderOptions,
) -> (Vec<f64>, Vec<bool>) {
    let masked = MaskedSource { inner: source, mask, side: MaskSide::Foreground };
    let img = render_image(&masked, camera, RenderMode::Alpha, opts);
    let bin = img.alpha_mask();
    (img.alpha, bin)
}

/// Projects the rendered feature image onto three basis rows and min-max
/// normalizes each channel to `[0, 1]`; constant channels map to 0.5.
pub fn render_feature_pca_preview(
    source: &dyn RadianceSource,
    camera: &Camera,
    basis: &[Vec<f64>; 3],
    opts: &RenderOptions,
) -> Result<Vec<[f64; 3]>> {
    let m = source.feature_dim();
    if basis.iter().any(|row| row.len() != m) {
        return Err(Error::ShapeMismatch(format!("preview basis rows must have {m} entries")));
    }
    let img = render_image(source, camera, RenderMode::Feature, opts);
    let n = camera.pixel_count();
    let mut projected: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let f = img.pixel_feature(i);
            [0, 1, 2].map(|c| basis[c].iter().zip(f).map(|(b, v)| b * v).sum())
        })
        .collect();
    for c in 0..3 {
        let (lo, hi) =
            projected.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[c]), hi.max(p[c])));
        for p in projected.iter_mut() {
            p[c] = if hi - lo > 1e-12 { (p[c] - lo) / (hi - lo) } else { 0.5 };
        }
    }
    Ok(projected)
}
