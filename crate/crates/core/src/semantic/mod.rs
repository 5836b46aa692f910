//! Semantic matching: feature reduction, stroke feature collection, exemplar
//! condensation and nearest-neighbor seeding.

mod kmeans;
mod nnfm;
mod pca;

pub use kmeans::{kmeans, ExemplarSet, KMeansReport, DEFAULT_K, MAX_LLOYD_ITERS};
pub use nnfm::{
    nearest_distances, nnfm_seed, occupancy, Metric, NnfmSeed, SeedThreshold, DEFAULT_OCCUPANCY_ALPHA,
    DEFAULT_SEED_PERCENTILE,
};
pub use pca::{pca_fit, preview_basis, PcaBasis};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::{render_ray, Camera, RadianceSource, RenderMode, RenderOptions, MASK_ALPHA_THRESHOLD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Stroke,
    Teacher,
    /// Features stored at grid nodes.
    Voxels,
}

/// Equal-length feature vectors stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    data: Vec<f64>,
    pub source: FeatureSource,
}

impl FeatureSet {
    pub fn new(dim: usize, source: FeatureSource) -> Self {
        Self { dim, data: Vec::new(), source }
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not split into {dim}-dimensional vectors",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("feature vectors must be finite".into()));
        }
        Ok(Self { dim, data, source: FeatureSource::Teacher })
    }

    pub fn from_vectors(vectors: &[Vec<f64>]) -> Result<Self> {
        let dim = vectors.first().map_or(0, Vec::len);
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::ShapeMismatch("feature vectors differ in length".into()));
        }
        Self::from_flat(dim, vectors.concat())
    }

    pub fn push(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::ShapeMismatch(format!("expected {} values, got {}", self.dim, v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("feature vectors must be finite".into()));
        }
        self.data.extend_from_slice(v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }
}

/// Rendered features under each stroke pixel; pixels whose ray accumulates
/// alpha below the mask threshold are skipped. Duplicates are kept.
pub fn collect_stroke_features(
    source: &dyn RadianceSource,
    camera: &Camera,
    pixels: &[(u32, u32)],
    opts: &RenderOptions,
) -> Result<FeatureSet> {
    let dim = source.feature_dim();
    if dim == 0 {
        return Err(Error::MissingFeatures("scene has no semantic feature lattice".into()));
    }
    if let Some(&(u, v)) = pixels.iter().find(|(u, v)| *u >= camera.width || *v >= camera.height) {
        return Err(Error::InvalidInput(format!(
            "stroke pixel ({u}, {v}) outside {}x{} image",
            camera.width, camera.height
        )));
    }
    let mut set = FeatureSet::new(dim, FeatureSource::Stroke);
    let bounds = source.bounds();
    for &(u, v) in pixels {
        let Some(ray) = camera.pixel_ray(u, v, bounds) else {
            continue;
        };
        let s = render_ray(source, &ray, RenderMode::Feature, opts);
        if s.alpha >= MASK_ALPHA_THRESHOLD {
            set.push(&s.feature)?;
        }
    }
    if set.is_empty() {
        return Err(Error::EmptySelection(format!("none of the {} stroke pixels hit the scene", pixels.len())));
    }
    Ok(set)
}
