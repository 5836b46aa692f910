#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ExemplarSet;
use crate::error::{Error, Result};
use crate::field::VoxelField;
use crate::grid::Bitmap3D;

pub const DEFAULT_OCCUPANCY_ALPHA: f64 = 0.1;
pub const DEFAULT_SEED_PERCENTILE: f64 = 10.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    /// `1 - cos(a, b)`; zero vectors are at distance 1 from everything.
    Cosine,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Metric::Cosine => {
                let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                for (x, y) in a.iter().zip(b) {
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                }
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (na.sqrt() * nb.sqrt())
                }
            }
        }
    }
}

/// How the seed threshold is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum SeedThreshold {
    Absolute(f64),
    /// Percentile (0-100) of nearest-exemplar distances over occupied voxels;
    /// voxels at or below that distance are kept.
    Percentile(f64),
}

impl Default for SeedThreshold {
    fn default() -> Self {
        SeedThreshold::Percentile(DEFAULT_SEED_PERCENTILE)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NnfmSeed {
    pub seed: Bitmap3D,
    /// Threshold actually applied (resolved from a percentile when requested).
    pub threshold: f64,
}

/// Voxels whose one-voxel opacity exceeds `alpha`.
pub fn occupancy(field: &VoxelField, alpha: f64) -> Bitmap3D {
    Bitmap3D::from_fn(field.geometry().clone(), |i| field.occupied(i, alpha))
}

/// Distance from every node feature to its nearest exemplar (`None` for
/// unoccupied voxels).
pub fn nearest_distances(
    field: &VoxelField,
    exemplars: &ExemplarSet,
    occupied: &Bitmap3D,
    metric: Metric,
) -> Result<Vec<Option<f64>>> {
    let m = field.feature_dim();
    if m == 0 {
        return Err(Error::MissingFeatures("scene has no semantic feature lattice".into()));
    }
    if exemplars.dim() != m {
        return Err(Error::ShapeMismatch(format!("exemplars have {} dims, field features have {m}", exemplars.dim())));
    }
    occupied.geometry().ensure_same(field.geometry(), "occupancy vs field")?;
    let eval = |i: usize| -> Option<f64> {
        if !occupied.get(i) {
            return None;
        }
        let mut phi = vec![0.0; m];
        field.node_feature(i, &mut phi);
        Some(exemplars.centroids.iter().map(|c| metric.distance(&phi, c)).fold(f64::INFINITY, f64::min))
    };
    let n = field.geometry().node_count();
    #[cfg(feature = "parallel")]
    let out = (0..n).into_par_iter().map(eval).collect();
    #[cfg(not(feature = "parallel"))]
    let out = (0..n).map(eval).collect();
    Ok(out)
}

/// Lower-interpolation-free percentile: the value at rank `floor(p/100 * (n-1))`.
fn percentile(values: &mut [f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let rank = ((p / 100.0).clamp(0.0, 1.0) * (values.len() - 1) as f64).floor() as usize;
    Some(values[rank])
}

/// High-confidence seed: occupied voxels whose feature lies closer than the
/// threshold to some exemplar.
pub fn nnfm_seed(
    field: &VoxelField,
    exemplars: &ExemplarSet,
    threshold: SeedThreshold,
    occupancy_alpha: f64,
    metric: Metric,
) -> Result<NnfmSeed> {
    match threshold {
        SeedThreshold::Absolute(t) if !(t > 0.0) || !t.is_finite() => {
            return Err(Error::InvalidInput("seed threshold must be positive".into()))
        }
        SeedThreshold::Percentile(p) if !(0.0..=100.0).contains(&p) => {
            return Err(Error::InvalidInput("seed percentile must lie in [0, 100]".into()))
        }
        _ => {}
    }
    let occupied = occupancy(field, occupancy_alpha);
    let dists = nearest_distances(field, exemplars, &occupied, metric)?;
    let theta = match threshold {
        SeedThreshold::Absolute(t) => t,
        SeedThreshold::Percentile(p) => {
            let mut v: Vec<f64> = dists.iter().flatten().copied().collect();
            match percentile(&mut v, p) {
                // just above the percentile value so that ties at it are kept
                Some(t) => t.next_up(),
                None => return Ok(NnfmSeed { seed: Bitmap3D::empty(field.geometry().clone()), threshold: 0.0 }),
            }
        }
    };
    let seed = Bitmap3D::from_fn(field.geometry().clone(), |i| dists[i].is_some_and(|d| d < theta));
    Ok(NnfmSeed { seed, threshold: theta })
}
