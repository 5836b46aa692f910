#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::VoxelField;
use crate::grid::Bitmap3D;
use crate::semantic::{occupancy, DEFAULT_OCCUPANCY_ALPHA};

pub const DEFAULT_SIGMA: f64 = 5.0;
/// Bandwidth given in an earlier draft of the method description.
pub const DRAFT_SIGMA: f64 = 0.5;
pub const DEFAULT_TAU: f64 = 0.2;
pub const DEFAULT_MAX_ITERS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BilateralParams {
    /// Feature-range bandwidth.
    pub sigma_phi: f64,
    /// Spatial bandwidth in voxel units.
    pub sigma_s: f64,
    pub tau: f64,
    pub max_iters: usize,
    pub occupancy_alpha: f64,
}

impl Default for BilateralParams {
    fn default() -> Self {
        Self {
            sigma_phi: DEFAULT_SIGMA,
            sigma_s: DEFAULT_SIGMA,
            tau: DEFAULT_TAU,
            max_iters: DEFAULT_MAX_ITERS,
            occupancy_alpha: DEFAULT_OCCUPANCY_ALPHA,
        }
    }
}

impl BilateralParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_phi > 0.0 && self.sigma_s > 0.0) || !self.sigma_phi.is_finite() || !self.sigma_s.is_finite() {
            return Err(Error::InvalidInput("bilateral bandwidths must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidInput(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if !(0.0..1.0).contains(&self.occupancy_alpha) {
            return Err(Error::InvalidInput("occupancy alpha must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// `exp(-u / (2 sigma^2))`.
pub fn gaussian(u: f64, sigma: f64) -> f64 {
    (-u / (2.0 * sigma * sigma)).exp()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrowResult {
    pub mask: Bitmap3D,
    /// Bilateral steps that changed the mask.
    pub iterations: usize,
    /// Whether a fixed point was reached before the iteration cap.
    pub converged: bool,
}

/// Occupancy and node features cached for repeated bilateral steps.
pub struct GrowContext {
    occupied: Bitmap3D,
    dims: [usize; 3],
    m: usize,
    features: Vec<f64>,
    spatial: [f64; 4],
    params: BilateralParams,
}

impl GrowContext {
    pub fn new(field: &VoxelField, params: &BilateralParams) -> Result<Self> {
        params.validate()?;
        let m = field.feature_dim();
        if m == 0 {
            return Err(Error::MissingFeatures("scene has no semantic feature lattice".into()));
        }
        let geo = field.geometry();
        let n = geo.node_count();
        let mut features = vec![0.0; n * m];
        for (i, chunk) in features.chunks_exact_mut(m).enumerate() {
            field.node_feature(i, chunk);
        }
        Ok(Self {
            occupied: occupancy(field, params.occupancy_alpha),
            dims: geo.resolution(),
            m,
            features,
            spatial: [0, 1, 2, 3].map(|d2| gaussian(d2 as f64, params.sigma_s)),
            params: params.clone(),
        })
    }

    pub fn occupied(&self) -> &Bitmap3D {
        &self.occupied
    }

    fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.m..(i + 1) * self.m]
    }

    /// Normalized bilateral score of voxel `i` against `mask`.
    pub fn score(&self, mask: &Bitmap3D, i: usize) -> f64 {
        let [nx, ny, nz] = self.dims;
        let (x, y, z) = (i % nx, (i / nx) % ny, i / (nx * ny));
        let phi = self.feature(i);
        let (mut num, mut den) = (0.0, 0.0);
        for dz in -1i64..=1 {
            let zz = z as i64 + dz;
            if zz < 0 || zz >= nz as i64 {
                continue;
            }
            for dy in -1i64..=1 {
                let yy = y as i64 + dy;
                if yy < 0 || yy >= ny as i64 {
                    continue;
                }
                for dx in -1i64..=1 {
                    let xx = x as i64 + dx;
                    if xx < 0 || xx >= nx as i64 {
                        continue;
                    }
                    let j = ((zz as usize * ny) + yy as usize) * nx + xx as usize;
                    if !self.occupied.get(j) {
                        continue;
                    }
                    let df: f64 = phi.iter().zip(self.feature(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                    let d2 = (dx * dx + dy * dy + dz * dz) as usize;
                    let w = gaussian(df, self.params.sigma_phi) * self.spatial[d2];
                    den += w;
                    if mask.get(j) {
                        num += w;
                    }
                }
            }
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }

    /// One Jacobi update: every voxel reads the same input snapshot.
    pub fn step(&self, mask: &Bitmap3D) -> Result<Bitmap3D> {
        mask.geometry().ensure_same(self.occupied.geometry(), "mask vs field")?;
        let [nx, ny, _] = self.dims;
        let tau = self.params.tau;
        let accept = |i: usize| -> bool {
            if mask.get(i) {
                return true;
            }
            if !self.occupied.get(i) || !self.touches(mask, i, nx, ny) {
                return false;
            }
            self.score(mask, i) >= tau
        };
        let n = self.occupied.len();
        #[cfg(feature = "parallel")]
        let bits: Vec<bool> = (0..n).into_par_iter().map(accept).collect();
        #[cfg(not(feature = "parallel"))]
        let bits: Vec<bool> = (0..n).map(accept).collect();
        Ok(Bitmap3D::from_fn(mask.geometry().clone(), |i| bits[i]))
    }

    /// Whether any neighbor of `i` is in the mask (otherwise the score is 0).
    fn touches(&self, mask: &Bitmap3D, i: usize, nx: usize, ny: usize) -> bool {
        let nz = self.dims[2];
        let (x, y, z) = (i % nx, (i / nx) % ny, i / (nx * ny));
        for zz in z.saturating_sub(1)..=(z + 1).min(nz - 1) {
            for yy in y.saturating_sub(1)..=(y + 1).min(ny - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(nx - 1) {
                    if mask.get((zz * ny + yy) * nx + xx) {
                        return true;
                    }
                }
            }
        }
        false
    }

    /// Repeats `step` until nothing changes or `max_iters` steps have run.
    pub fn grow(&self, mask: &Bitmap3D, max_iters: usize) -> Result<GrowResult> {
        let mut current = mask.clone();
        for it in 0..max_iters {
            let next = self.step(&current)?;
            if next == current {
                return Ok(GrowResult { mask: current, iterations: it, converged: true });
            }
            current = next;
        }
        // the cap may coincide with the fixed point
        let converged = self.step(&current)? == current;
        Ok(GrowResult { mask: current, iterations: max_iters, converged })
    }
}

/// One region-growing update of `mask` over occupied voxels.
pub fn bilateral_step(field: &VoxelField, mask: &Bitmap3D, params: &BilateralParams) -> Result<Bitmap3D> {
    mask.geometry().ensure_same(field.geometry(), "mask vs field")?;
    GrowContext::new(field, params)?.step(mask)
}

/// Iterated bilateral growth up to `params.max_iters`.
pub fn grow(field: &VoxelField, mask: &Bitmap3D, params: &BilateralParams) -> Result<GrowResult> {
    mask.geometry().ensure_same(field.geometry(), "mask vs field")?;
    GrowContext::new(field, params)?.grow(mask, params.max_iters)
}
