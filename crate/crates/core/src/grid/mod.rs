//! Lattice storage: geometry, dense and VM-factorized grids, and bitmaps.

mod bitmap;
mod dense;
mod geometry;
mod vm;

pub use bitmap::Bitmap3D;
pub use dense::DenseGrid;
pub use geometry::{GridGeometry, Stencil, Vec3};
pub use vm::{split_components, VmGrid};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Either storage backend behind a common evaluation interface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Lattice {
    Dense(DenseGrid),
    Vm(VmGrid),
}

impl Lattice {
    pub fn geometry(&self) -> &GridGeometry {
        match self {
            Lattice::Dense(g) => g.geometry(),
            Lattice::Vm(g) => g.geometry(),
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            Lattice::Dense(g) => g.channels(),
            Lattice::Vm(g) => g.channels(),
        }
    }

    pub fn trilerp(&self, p: &Vec3) -> Result<Vec<f64>> {
        match self {
            Lattice::Dense(g) => g.trilerp(p),
            Lattice::Vm(g) => g.trilerp(p),
        }
    }

    pub fn trilerp_grad(&self, p: &Vec3, upstream: &[f64]) -> Result<Vec<(usize, f64)>> {
        match self {
            Lattice::Dense(g) => g.trilerp_grad(p, upstream),
            Lattice::Vm(g) => g.trilerp_grad(p, upstream),
        }
    }

    /// Evaluates at a point already known to be inside the box.
    #[inline]
    pub(crate) fn eval_into(&self, p: &Vec3, stencil: &Stencil, out: &mut [f64]) {
        match self {
            Lattice::Dense(g) => g.gather(stencil, out),
            Lattice::Vm(g) => {
                let v = g.trilerp(p).expect("finite point");
                out[..v.len()].copy_from_slice(&v);
            }
        }
    }

    /// Value stored at (or reconstructed for) a lattice node.
    pub fn node_value(&self, index: usize, out: &mut [f64]) {
        match self {
            Lattice::Dense(g) => {
                for (o, v) in out.iter_mut().zip(g.node(index)) {
                    *o = *v as f64;
                }
            }
            Lattice::Vm(g) => {
                let [x, y, z] = g.geometry().coords(index);
                let v = g.trilerp(&g.geometry().node_position(x, y, z)).expect("node positions are finite");
                out[..v.len()].copy_from_slice(&v);
            }
        }
    }

    pub fn to_dense(&self) -> DenseGrid {
        match self {
            Lattice::Dense(g) => g.clone(),
            Lattice::Vm(g) => g.densify(),
        }
    }

    pub fn as_dense(&self) -> Option<&DenseGrid> {
        match self {
            Lattice::Dense(g) => Some(g),
            Lattice::Vm(_) => None,
        }
    }

    pub fn as_dense_mut(&mut self) -> Option<&mut DenseGrid> {
        match self {
            Lattice::Dense(g) => Some(g),
            Lattice::Vm(_) => None,
        }
    }
}
