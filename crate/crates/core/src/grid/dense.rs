use serde::{Deserialize, Serialize};

use super::geometry::{check_point, GridGeometry, Stencil, Vec3};
use crate::error::{Error, Result};

/// Explicit lattice storing `channels` floats per node, node-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseGrid {
    geometry: GridGeometry,
    channels: usize,
    values: Vec<f32>,
}

impl DenseGrid {
    pub fn filled(geometry: GridGeometry, channels: usize, value: f32) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidInput("grid needs at least one channel".into()));
        }
        let len = geometry.node_count() * channels;
        Ok(Self { geometry, channels, values: vec![value; len] })
    }

    pub fn from_values(geometry: GridGeometry, channels: usize, values: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidInput("grid needs at least one channel".into()));
        }
        let expected = geometry.node_count() * channels;
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!("expected {expected} values, got {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("grid values must be finite".into()));
        }
        Ok(Self { geometry, channels, values })
    }

    /// Builds a grid by evaluating `f` at every node position.
    pub fn from_fn(geometry: GridGeometry, channels: usize, mut f: impl FnMut(Vec3, &mut [f32])) -> Result<Self> {
        let mut grid = Self::filled(geometry, channels, 0.0)?;
        let [nx, ny, nz] = grid.geometry.resolution();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let p = grid.geometry.node_position(x, y, z);
                    let i = grid.geometry.index(x, y, z) * channels;
                    f(p, &mut grid.values[i..i + channels]);
                }
            }
        }
        Ok(grid)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn node(&self, index: usize) -> &[f32] {
        &self.values[index * self.channels..(index + 1) * self.channels]
    }

    pub fn node_mut(&mut self, index: usize) -> &mut [f32] {
        &mut self.values[index * self.channels..(index + 1) * self.channels]
    }

    /// Weighted blend of the stencil corners, written into `out`.
    #[inline]
    pub fn gather(&self, stencil: &Stencil, out: &mut [f64]) {
        let c = self.channels;
        out[..c].fill(0.0);
        for k in 0..8 {
            let w = stencil.weights[k];
            let base = stencil.nodes[k] * c;
            for (o, v) in out[..c].iter_mut().zip(&self.values[base..base + c]) {
                *o += w * *v as f64;
            }
        }
    }

    /// Accumulates `upstream` pulled back through the stencil into a flat
    /// gradient buffer laid out like `values`.
    #[inline]
    pub fn scatter(&self, stencil: &Stencil, upstream: &[f64], grad: &mut [f64]) {
        let c = self.channels;
        for k in 0..8 {
            let w = stencil.weights[k];
            let base = stencil.nodes[k] * c;
            for (g, u) in grad[base..base + c].iter_mut().zip(upstream) {
                *g += w * u;
            }
        }
    }

    /// Trilinear interpolation. Points outside the box evaluate to zero.
    pub fn trilerp(&self, p: &Vec3) -> Result<Vec<f64>> {
        check_point(p)?;
        let mut out = vec![0.0; self.channels];
        if let Some(s) = Stencil::new(&self.geometry, p) {
            self.gather(&s, &mut out);
        }
        Ok(out)
    }

    /// Gradient of `upstream · trilerp(p)` with respect to the stored values,
    /// as `(flat value index, gradient)` pairs.
    pub fn trilerp_grad(&self, p: &Vec3, upstream: &[f64]) -> Result<Vec<(usize, f64)>> {
        check_point(p)?;
        if upstream.len() != self.channels {
            return Err(Error::ShapeMismatch(format!(
                "upstream has {} channels, grid has {}",
                upstream.len(),
                self.channels
            )));
        }
        let Some(s) = Stencil::new(&self.geometry, p) else {
            return Ok(Vec::new());
        };
        let mut out = Vec::with_capacity(8 * self.channels);
        for k in 0..8 {
            for (c, u) in upstream.iter().enumerate() {
                out.push((s.nodes[k] * self.channels + c, s.weights[k] * u));
            }
        }
        Ok(out)
    }
}
