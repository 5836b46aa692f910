//! Vector-matrix factorized lattice.
//!
//! A VM grid stores a 3D tensor as a sum of rank-one products between a 2D
//! plane factor and a 1D line factor along the remaining axis, for each of the
//! three axis pairings, followed by a linear mix into the output channels:
//!
//! `v(x, y, z)[c] = sum_k P_k(a, b) * L_k(w) * B[k, c]`
//!
//! where `(a, b, w)` is `(x, y, z)`, `(x, z, y)` or `(y, z, x)` depending on
//! the mode of component `k`. Bilinear plane lookups times linear line lookups
//! factor exactly into trilinear interpolation of the dense tensor, so the
//! factorized and densified evaluations agree up to rounding.

use serde::{Deserialize, Serialize};

use super::dense::DenseGrid;
use super::geometry::{check_point, GridGeometry, Vec3};
use crate::error::{Error, Result};

/// Axis indices `(plane_a, plane_b, line)` for each mode.
const MODE_AXES: [[usize; 3]; 3] = [[0, 1, 2], [0, 2, 1], [1, 2, 0]];

/// Splits a total component count across the three modes as evenly as
/// possible, earlier modes taking the remainder (48 -> 16/16/16, 64 -> 22/21/21).
pub fn split_components(total: usize) -> [usize; 3] {
    let base = total / 3;
    let rem = total % 3;
    [base + usize::from(rem > 0), base + usize::from(rem > 1), base]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VmGrid {
    geometry: GridGeometry,
    ranks: [usize; 3],
    channels: usize,
    params: Vec<f32>,
}

#[derive(Clone, Copy)]
struct AxisLerp {
    i0: usize,
    f: f64,
}

impl VmGrid {
    pub fn zeros(geometry: GridGeometry, ranks: [usize; 3], channels: usize) -> Result<Self> {
        if channels == 0 || ranks.iter().sum::<usize>() == 0 {
            return Err(Error::InvalidInput("VM grid needs channels and at least one component".into()));
        }
        let mut grid = Self { geometry, ranks, channels, params: Vec::new() };
        grid.params = vec![0.0; grid.param_count()];
        Ok(grid)
    }

    pub fn from_params(geometry: GridGeometry, ranks: [usize; 3], channels: usize, params: Vec<f32>) -> Result<Self> {
        let mut grid = Self::zeros(geometry, ranks, channels)?;
        if params.len() != grid.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "VM grid expects {} parameters, got {}",
                grid.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("VM parameters must be finite".into()));
        }
        grid.params = params;
        Ok(grid)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn ranks(&self) -> [usize; 3] {
        self.ranks
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn components(&self) -> usize {
        self.ranks.iter().sum()
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    fn plane_len(&self, mode: usize) -> usize {
        let res = self.geometry.resolution();
        res[MODE_AXES[mode][0]] * res[MODE_AXES[mode][1]]
    }

    fn line_len(&self, mode: usize) -> usize {
        self.geometry.resolution()[MODE_AXES[mode][2]]
    }

    fn param_count(&self) -> usize {
        (0..3).map(|m| self.ranks[m] * (self.plane_len(m) + self.line_len(m))).sum::<usize>()
            + self.components() * self.channels
    }

    /// Offset of plane `r` of `mode` in `params`.
    pub fn plane_offset(&self, mode: usize, r: usize) -> usize {
        let before: usize = (0..mode).map(|m| self.ranks[m] * (self.plane_len(m) + self.line_len(m))).sum();
        before + r * self.plane_len(mode)
    }

    /// Offset of line `r` of `mode` in `params`.
    pub fn line_offset(&self, mode: usize, r: usize) -> usize {
        self.plane_offset(mode, 0) + self.ranks[mode] * self.plane_len(mode) + r * self.line_len(mode)
    }

    /// Offset of the `components x channels` mixing matrix.
    pub fn basis_offset(&self) -> usize {
        self.params.len() - self.components() * self.channels
    }

    /// Plane value at `(a, b)` in that mode's own axes.
    pub fn plane_at(&self, mode: usize, r: usize, a: usize, b: usize) -> f32 {
        let na = self.geometry.resolution()[MODE_AXES[mode][0]];
        self.params[self.plane_offset(mode, r) + b * na + a]
    }

    pub fn line_at(&self, mode: usize, r: usize, w: usize) -> f32 {
        self.params[self.line_offset(mode, r) + w]
    }

    pub fn basis_at(&self, k: usize, c: usize) -> f32 {
        self.params[self.basis_offset() + k * self.channels + c]
    }

    fn axis_lerps(&self, p: &Vec3) -> Option<[AxisLerp; 3]> {
        let g = self.geometry.world_to_grid(p);
        let res = self.geometry.resolution();
        let mut out = [AxisLerp { i0: 0, f: 0.0 }; 3];
        for a in 0..3 {
            if !(g[a] >= 0.0 && g[a] <= (res[a] - 1) as f64) {
                return None;
            }
            let i0 = (g[a].floor() as usize).min(res[a] - 2);
            out[a] = AxisLerp { i0, f: g[a] - i0 as f64 };
        }
        Some(out)
    }

    /// Per-component plane and line values at the point, in component order.
    fn factor_values(&self, lerps: &[AxisLerp; 3]) -> (Vec<f64>, Vec<f64>) {
        let res = self.geometry.resolution();
        let mut planes = Vec::with_capacity(self.components());
        let mut lines = Vec::with_capacity(self.components());
        for mode in 0..3 {
            let [ax, bx, wx] = MODE_AXES[mode];
            let (la, lb, lw) = (lerps[ax], lerps[bx], lerps[wx]);
            let na = res[ax];
            for r in 0..self.ranks[mode] {
                let po = self.plane_offset(mode, r);
                let at = |a: usize, b: usize| self.params[po + b * na + a] as f64;
                let pv = at(la.i0, lb.i0) * (1.0 - la.f) * (1.0 - lb.f)
                    + at(la.i0 + 1, lb.i0) * la.f * (1.0 - lb.f)
                    + at(la.i0, lb.i0 + 1) * (1.0 - la.f) * lb.f
                    + at(la.i0 + 1, lb.i0 + 1) * la.f * lb.f;
                let lo = self.line_offset(mode, r);
                let lv = self.params[lo + lw.i0] as f64 * (1.0 - lw.f) + self.params[lo + lw.i0 + 1] as f64 * lw.f;
                planes.push(pv);
                lines.push(lv);
            }
        }
        (planes, lines)
    }

    /// Evaluates the factorized tensor at `p` without densifying. Points
    /// outside the box evaluate to zero.
    pub fn trilerp(&self, p: &Vec3) -> Result<Vec<f64>> {
        check_point(p)?;
        let mut out = vec![0.0; self.channels];
        let Some(lerps) = self.axis_lerps(p) else {
            return Ok(out);
        };
        let (planes, lines) = self.factor_values(&lerps);
        let bo = self.basis_offset();
        for k in 0..self.components() {
            let prod = planes[k] * lines[k];
            for (c, o) in out.iter_mut().enumerate() {
                *o += prod * self.params[bo + k * self.channels + c] as f64;
            }
        }
        Ok(out)
    }

    /// Gradient of `upstream · trilerp(p)` with respect to every factor, as
    /// `(param index, gradient)` pairs.
    pub fn trilerp_grad(&self, p: &Vec3, upstream: &[f64]) -> Result<Vec<(usize, f64)>> {
        check_point(p)?;
        if upstream.len() != self.channels {
            return Err(Error::ShapeMismatch(format!(
                "upstream has {} channels, grid has {}",
                upstream.len(),
                self.channels
            )));
        }
        let Some(lerps) = self.axis_lerps(p) else {
            return Ok(Vec::new());
        };
        let res = self.geometry.resolution();
        let (planes, lines) = self.factor_values(&lerps);
        let bo = self.basis_offset();
        let mut out = Vec::new();
        let mut k = 0;
        for mode in 0..3 {
            let [ax, bx, wx] = MODE_AXES[mode];
            let (la, lb, lw) = (lerps[ax], lerps[bx], lerps[wx]);
            let na = res[ax];
            for r in 0..self.ranks[mode] {
                let mix: f64 =
                    upstream.iter().enumerate().map(|(c, u)| u * self.params[bo + k * self.channels + c] as f64).sum();
                let po = self.plane_offset(mode, r);
                let corners = [
                    (la.i0, lb.i0, (1.0 - la.f) * (1.0 - lb.f)),
                    (la.i0 + 1, lb.i0, la.f * (1.0 - lb.f)),
                    (la.i0, lb.i0 + 1, (1.0 - la.f) * lb.f),
                    (la.i0 + 1, lb.i0 + 1, la.f * lb.f),
                ];
                for (a, b, w) in corners {
                    out.push((po + b * na + a, w * lines[k] * mix));
                }
                let lo = self.line_offset(mode, r);
                out.push((lo + lw.i0, (1.0 - lw.f) * planes[k] * mix));
                out.push((lo + lw.i0 + 1, lw.f * planes[k] * mix));
                let prod = planes[k] * lines[k];
                for (c, u) in upstream.iter().enumerate() {
                    out.push((bo + k * self.channels + c, prod * u));
                }
                k += 1;
            }
        }
        Ok(out)
    }

    /// Explicit reconstruction of the full tensor.
    pub fn densify(&self) -> DenseGrid {
        let nodes = self.geometry.node_count();
        let mut values = vec![0f64; nodes * self.channels];
        let mut k = 0;
        for mode in 0..3 {
            let [ax, bx, wx] = MODE_AXES[mode];
            for r in 0..self.ranks[mode] {
                let mix: Vec<f64> = (0..self.channels).map(|c| self.basis_at(k, c) as f64).collect();
                for idx in 0..nodes {
                    let ijk = self.geometry.coords(idx);
                    let pv = self.plane_at(mode, r, ijk[ax], ijk[bx]) as f64;
                    let lv = self.line_at(mode, r, ijk[wx]) as f64;
                    let prod = pv * lv;
                    for (c, m) in mix.iter().enumerate() {
                        values[idx * self.channels + c] += prod * m;
                    }
                }
                k += 1;
            }
        }
        DenseGrid::from_values(self.geometry.clone(), self.channels, values.into_iter().map(|v| v as f32).collect())
            .expect("densified VM values are finite and correctly sized")
    }
}
