use serde::{Deserialize, Serialize};

use super::{render_feature_pca_preview, render_image, render_mask, Camera, RadianceSource, RenderMode, RenderOptions};
use crate::error::{Error, Result};
use crate::grid::Bitmap3D;

/// What a displayed frame shows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameMode {
    Rgb,
    /// Rendered features projected onto three preview directions.
    Feature,
    /// Expected depth, near is bright; pixels with little opacity are black.
    Depth,
    /// Foreground alpha of the mask render as gray; binarize at
    /// `MASK_ALPHA_THRESHOLD` to get the 2D mask.
    Mask,
    /// RGB with mask pixels tinted green at 50%.
    MaskOverlay,
}

impl std::str::FromStr for FrameMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| Error::InvalidInput(format!("unknown frame mode {s:?}")))
    }
}

pub const OVERLAY_TINT: [f64; 3] = [0.0, 1.0, 0.0];

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Renders one display frame as packed 8-bit RGB. `mask` is required by the
/// mask modes and `basis` by the feature mode.
pub fn render_frame(
    source: &dyn RadianceSource,
    camera: &Camera,
    mode: FrameMode,
    mask: Option<&Bitmap3D>,
    basis: Option<&[Vec<f64>; 3]>,
    opts: &RenderOptions,
) -> Result<Vec<u8>> {
    let need_mask = || mask.ok_or_else(|| Error::InvalidInput("mask mode needs a mask".into()));
    let pixels: Vec<[f64; 3]> = match mode {
        FrameMode::Rgb => render_image(source, camera, RenderMode::Rgb, opts).color,
        FrameMode::Feature => {
            let basis = basis.ok_or_else(|| Error::MissingFeatures("feature mode needs a preview basis".into()))?;
            render_feature_pca_preview(source, camera, basis, opts)?
        }
        FrameMode::Depth => {
            let img = render_image(source, camera, RenderMode::Depth, opts);
            let hit = img.alpha_mask();
            let (lo, hi) = img
                .depth
                .iter()
                .zip(&hit)
                .filter(|(_, h)| **h)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (d, _)| (lo.min(*d), hi.max(*d)));
            img.depth
                .iter()
                .zip(&hit)
                .map(|(d, h)| {
                    let g = match (*h, hi - lo > 1e-12) {
                        (false, _) => 0.0,
                        (true, true) => 1.0 - 0.8 * (d - lo) / (hi - lo),
                        (true, false) => 1.0,
                    };
                    [g; 3]
                })
                .collect()
        }
        FrameMode::Mask => {
            let (alpha, _) = render_mask(source, need_mask()?, camera, opts);
            alpha.iter().map(|a| [*a; 3]).collect()
        }
        FrameMode::MaskOverlay => {
            let mask = need_mask()?;
            let rgb = render_image(source, camera, RenderMode::Rgb, opts).color;
            if mask.count_ones() == 0 {
                rgb
            } else {
                let (_, bin) = render_mask(source, mask, camera, opts);
                rgb.iter()
                    .zip(&bin)
                    .map(|(c, b)| if *b { [0, 1, 2].map(|k| 0.5 * c[k] + 0.5 * OVERLAY_TINT[k]) } else { *c })
                    .collect()
            }
        }
    };
    Ok(pixels.iter().flat_map(|p| p.map(quantize)).collect())
}
