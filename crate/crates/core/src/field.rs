//! The scene: density, appearance and semantic feature lattices over one box.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DenseGrid, GridGeometry, Lattice, Stencil, Vec3};

/// Raw density that starts a freshly initialized field nearly empty.
pub const EMPTY_RAW_DENSITY: f32 = -5.0;

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 20.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for positive densities.
pub fn inverse_softplus(sigma: f64) -> f64 {
    if sigma > 20.0 {
        sigma
    } else {
        sigma.exp_m1().ln()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelField {
    density: Lattice,
    appearance: Lattice,
    features: Option<Lattice>,
}

impl VoxelField {
    pub fn new(density: Lattice, appearance: Lattice, features: Option<Lattice>) -> Result<Self> {
        if density.channels() != 1 {
            return Err(Error::InvalidInput("density lattice must have one channel".into()));
        }
        appearance.geometry().ensure_same(density.geometry(), "appearance vs density")?;
        if let Some(f) = &features {
            f.geometry().ensure_same(density.geometry(), "features vs density")?;
        }
        Ok(Self { density, appearance, features })
    }

    /// Dense field with near-empty density, zero appearance logits and zero features.
    pub fn empty(geometry: GridGeometry, appearance_channels: usize, feature_dim: usize) -> Result<Self> {
        let density = DenseGrid::filled(geometry.clone(), 1, EMPTY_RAW_DENSITY)?;
        let appearance = DenseGrid::filled(geometry.clone(), appearance_channels, 0.0)?;
        let features =
            if feature_dim > 0 { Some(Lattice::Dense(DenseGrid::filled(geometry, feature_dim, 0.0)?)) } else { None };
        Self::new(Lattice::Dense(density), Lattice::Dense(appearance), features)
    }

    pub fn geometry(&self) -> &GridGeometry {
        self.density.geometry()
    }

    pub fn density(&self) -> &Lattice {
        &self.density
    }

    pub fn appearance(&self) -> &Lattice {
        &self.appearance
    }

    pub fn features(&self) -> Option<&Lattice> {
        self.features.as_ref()
    }

    pub fn density_mut(&mut self) -> &mut Lattice {
        &mut self.density
    }

    pub fn appearance_mut(&mut self) -> &mut Lattice {
        &mut self.appearance
    }

    pub fn features_mut(&mut self) -> Option<&mut Lattice> {
        self.features.as_mut()
    }

    pub fn set_features(&mut self, features: Option<Lattice>) -> Result<()> {
        if let Some(f) = &features {
            f.geometry().ensure_same(self.geometry(), "features vs density")?;
        }
        self.features = features;
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.features.as_ref().map_or(0, Lattice::channels)
    }

    pub fn appearance_channels(&self) -> usize {
        self.appearance.channels()
    }

    /// Activated density at a lattice node.
    pub fn node_density(&self, index: usize) -> f64 {
        let mut v = [0.0];
        self.density.node_value(index, &mut v);
        softplus(v[0])
    }

    /// Semantic feature stored at a lattice node (zeros when the field has none).
    pub fn node_feature(&self, index: usize, out: &mut [f64]) {
        match &self.features {
            Some(f) => f.node_value(index, out),
            None => out.fill(0.0),
        }
    }

    /// Activated density at an arbitrary point; zero outside the box.
    pub fn density_at(&self, p: &Vec3) -> f64 {
        match Stencil::new(self.geometry(), p) {
            Some(s) => {
                let mut v = [0.0];
                self.density.eval_into(p, &s, &mut v);
                softplus(v[0])
            }
            None => 0.0,
        }
    }

    /// Converts every lattice to dense storage.
    pub fn to_dense(&self) -> VoxelField {
        VoxelField {
            density: Lattice::Dense(self.density.to_dense()),
            appearance: Lattice::Dense(self.appearance.to_dense()),
            features: self.features.as_ref().map(|f| Lattice::Dense(f.to_dense())),
        }
    }

    /// Occupancy test used by seeding and growth: a voxel is occupied when one
    /// voxel-length of its density absorbs more than `alpha` of the light.
    pub fn occupied(&self, index: usize, alpha: f64) -> bool {
        let delta = self.geometry().min_voxel_edge();
        1.0 - (-self.node_density(index) * delta).exp() > alpha
    }
}
