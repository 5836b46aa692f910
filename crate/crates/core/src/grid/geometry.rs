use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Grid coordinates closer than this to an integer are snapped onto the node,
/// so that world points built from node positions evaluate nodes exactly.
const NODE_SNAP: f64 = 1e-9;

/// Lattice of `nx * ny * nz` nodes spanning an axis-aligned box. Nodes sit on
/// the box corners, so the node spacing along an axis is `extent / (n - 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    resolution: [usize; 3],
    bbox_min: [f64; 3],
    bbox_max: [f64; 3],
}

impl GridGeometry {
    pub fn new(resolution: [usize; 3], bbox_min: Vec3, bbox_max: Vec3) -> Result<Self> {
        if resolution.iter().any(|&n| n < 2) {
            return Err(Error::InvalidInput(format!("grid resolution must be >= 2 per axis, got {resolution:?}")));
        }
        if !(0..3).all(|a| bbox_min[a].is_finite() && bbox_max[a].is_finite()) {
            return Err(Error::InvalidInput("non-finite bounding box".into()));
        }
        if !(0..3).all(|a| bbox_max[a] > bbox_min[a]) {
            return Err(Error::InvalidInput(format!(
                "bbox_max {:?} must exceed bbox_min {:?} on every axis",
                bbox_max.as_slice(),
                bbox_min.as_slice()
            )));
        }
        Ok(Self { resolution, bbox_min: bbox_min.into(), bbox_max: bbox_max.into() })
    }

    /// Cube `[-half, half]^3` with `n` nodes per axis.
    pub fn cube(n: usize, half: f64) -> Result<Self> {
        Self::new([n; 3], Vec3::repeat(-half), Vec3::repeat(half))
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn bbox_min(&self) -> Vec3 {
        Vec3::from(self.bbox_min)
    }

    pub fn bbox_max(&self) -> Vec3 {
        Vec3::from(self.bbox_max)
    }

    pub fn node_count(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn voxel_size(&self) -> Vec3 {
        let ext = self.bbox_max() - self.bbox_min();
        Vec3::new(
            ext.x / (self.resolution[0] - 1) as f64,
            ext.y / (self.resolution[1] - 1) as f64,
            ext.z / (self.resolution[2] - 1) as f64,
        )
    }

    pub fn min_voxel_edge(&self) -> f64 {
        self.voxel_size().min()
    }

    /// Linear index with x fastest: `((z * ny) + y) * nx + x`.
    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        let [nx, ny, _] = self.resolution;
        (z * ny + y) * nx + x
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [nx, ny, _] = self.resolution;
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    pub fn node_position(&self, x: usize, y: usize, z: usize) -> Vec3 {
        let vs = self.voxel_size();
        let min = self.bbox_min();
        Vec3::new(min.x + x as f64 * vs.x, min.y + y as f64 * vs.y, min.z + z as f64 * vs.z)
    }

    /// Continuous lattice coordinates of a world point (node `i` at `i`).
    pub fn world_to_grid(&self, p: &Vec3) -> Vec3 {
        let vs = self.voxel_size();
        let min = self.bbox_min();
        let mut g = (p - min).component_div(&vs);
        for c in g.iter_mut() {
            let r = c.round();
            if (*c - r).abs() < NODE_SNAP {
                *c = r;
            }
        }
        g
    }

    pub fn grid_to_world(&self, g: &Vec3) -> Vec3 {
        self.bbox_min() + g.component_mul(&self.voxel_size())
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let g = self.world_to_grid(p);
        (0..3).all(|a| g[a] >= 0.0 && g[a] <= (self.resolution[a] - 1) as f64)
    }

    /// Node closest to `p`, or `None` when `p` lies outside the box.
    pub fn nearest_node(&self, p: &Vec3) -> Option<usize> {
        let g = self.world_to_grid(p);
        let mut ijk = [0usize; 3];
        for a in 0..3 {
            let n = self.resolution[a];
            if !(g[a] >= -0.5 && g[a] < n as f64 - 0.5) {
                return None;
            }
            ijk[a] = (g[a].round().max(0.0) as usize).min(n - 1);
        }
        Some(self.index(ijk[0], ijk[1], ijk[2]))
    }

    pub fn ensure_same(&self, other: &GridGeometry, what: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(format!("{what}: {:?} vs {:?}", self.resolution, other.resolution)))
        }
    }
}

/// Eight interpolation corners and weights of a point inside the lattice.
#[derive(Clone, Copy, Debug)]
pub struct Stencil {
    pub nodes: [usize; 8],
    pub weights: [f64; 8],
}

impl Stencil {
    /// Returns `None` for points outside the box (including non-finite points).
    pub fn new(geometry: &GridGeometry, p: &Vec3) -> Option<Self> {
        let g = geometry.world_to_grid(p);
        let res = geometry.resolution();
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let hi = (res[a] - 1) as f64;
            if !(g[a] >= 0.0 && g[a] <= hi) {
                return None;
            }
            let i = (g[a].floor() as usize).min(res[a] - 2);
            base[a] = i;
            frac[a] = g[a] - i as f64;
        }
        let mut nodes = [0usize; 8];
        let mut weights = [0f64; 8];
        for corner in 0..8 {
            let (dx, dy, dz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
            nodes[corner] = geometry.index(base[0] + dx, base[1] + dy, base[2] + dz);
            let wx = if dx == 1 { frac[0] } else { 1.0 - frac[0] };
            let wy = if dy == 1 { frac[1] } else { 1.0 - frac[1] };
            let wz = if dz == 1 { frac[2] } else { 1.0 - frac[2] };
            weights[corner] = wx * wy * wz;
        }
        Some(Self { nodes, weights })
    }
}

pub(crate) fn check_point(p: &Vec3) -> Result<()> {
    if p.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("non-finite point {:?}", p.as_slice())))
    }
}
