//! Query-time scene edits driven by a voxel mask.
//!
//! Every edit wraps a [`RadianceSource`] and changes what a sample returns;
//! stored lattices are never touched. Masks are looked up at the nearest node.
//!
//! * removal keeps `sigma * (1 - b)`, extraction keeps `sigma * b`
//! * translation by `t` reads `x + t` wherever the mask shifted by `-t` is set,
//!   so the selected object appears displaced by `-t`, and empties the
//!   original region
//! * recoloring maps decoded colors inside the mask through `clamp(A c + o)`
//! * composition blends two sources by density: `sigma = sigma_1 + sigma_2`,
//!   `c = (sigma_1 c_1 + sigma_2 c_2) / (sigma_1 + sigma_2)`

mod script;

pub use script::{apply_edits, load_edit_script, Edit, EditOp, EditScript, EDIT_SCRIPT_VERSION};

use nalgebra::{Matrix3, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{inverse_softplus, logit, VoxelField};
use crate::grid::{Bitmap3D, DenseGrid, GridGeometry, Lattice, Vec3};
use crate::render::{MaskSide, MaskedSource, RadianceSource};

/// Raw density written for empty nodes by [`bake`].
const BAKED_EMPTY_RAW: f64 = -30.0;

/// Removal of the masked region.
pub fn remove<'a>(inner: &'a dyn RadianceSource, mask: &'a Bitmap3D) -> MaskedSource<'a> {
    MaskedSource { inner, mask, side: MaskSide::Background }
}

/// Everything but the masked region removed.
pub fn extract<'a>(inner: &'a dyn RadianceSource, mask: &'a Bitmap3D) -> MaskedSource<'a> {
    MaskedSource { inner, mask, side: MaskSide::Foreground }
}

/// Destination bitmap of a translation: node `x` is set when the node
/// nearest to `x + t` is set in `mask`.
pub fn shifted_mask(mask: &Bitmap3D, t: &Vec3) -> Bitmap3D {
    let g = mask.geometry().clone();
    Bitmap3D::from_fn(g.clone(), |i| {
        let [x, y, z] = g.coords(i);
        mask.sample_nearest(&(g.node_position(x, y, z) + t))
    })
}

pub struct Translated<'a> {
    inner: &'a dyn RadianceSource,
    mask: &'a Bitmap3D,
    destination: Bitmap3D,
    t: Vec3,
}

pub fn translate<'a>(inner: &'a dyn RadianceSource, mask: &'a Bitmap3D, t: Vec3) -> Result<Translated<'a>> {
    if !t.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("translation must be finite".into()));
    }
    Ok(Translated { inner, mask, destination: shifted_mask(mask, &t), t })
}

impl Translated<'_> {
    pub fn destination(&self) -> &Bitmap3D {
        &self.destination
    }
}

impl RadianceSource for Translated<'_> {
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
        if self.destination.sample_nearest(p) {
            let q = p + self.t;
            let (sigma, rgb) = self.inner.sample(&q, dir, want_rgb, feature);
            let keep = if self.mask.sample_nearest(&q) { 1.0 } else { 0.0 };
            return (sigma * keep, rgb);
        }
        if self.mask.sample_nearest(p) {
            feature.fill(0.0);
            return (0.0, [0.0; 3]);
        }
        self.inner.sample(p, dir, want_rgb, feature)
    }
}

/// Affine color map `clamp(matrix * c + offset, 0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorTransform {
    pub matrix: [[f64; 3]; 3],
    #[serde(default)]
    pub offset: [f64; 3],
}

impl ColorTransform {
    pub fn identity() -> Self {
        Self { matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], offset: [0.0; 3] }
    }

    /// Swaps the red and blue channels.
    pub fn bgr() -> Self {
        Self { matrix: [[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]], offset: [0.0; 3] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.matrix.iter().flatten().chain(&self.offset).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidInput("color transform must be finite".into()))
        }
    }

    pub fn apply(&self, c: [f64; 3]) -> [f64; 3] {
        let m = &self.matrix;
        [0, 1, 2].map(|r| (m[r][0] * c[0] + m[r][1] * c[1] + m[r][2] * c[2] + self.offset[r]).clamp(0.0, 1.0))
    }
}

pub struct Recolored<'a> {
    inner: &'a dyn RadianceSource,
    mask: &'a Bitmap3D,
    transform: ColorTransform,
}

pub fn recolor<'a>(
    inner: &'a dyn RadianceSource,
    mask: &'a Bitmap3D,
    transform: ColorTransform,
) -> Result<Recolored<'a>> {
    transform.validate()?;
    Ok(Recolored { inner, mask, transform })
}

impl RadianceSource for Recolored<'_> {
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
        if want_rgb && self.mask.sample_nearest(p) {
            (sigma, self.transform.apply(rgb))
        } else {
            (sigma, rgb)
        }
    }
}

/// Two sources rendered jointly; `b` is placed in `a`'s frame by `rigid`.
pub struct Composed<'a> {
    a: &'a dyn RadianceSource,
    b: &'a dyn RadianceSource,
    inverse: Matrix4<f64>,
    rotation_inverse: Matrix3<f64>,
    bounds: (Vec3, Vec3),
    feature_dim: usize,
}

pub fn compose<'a>(a: &'a dyn RadianceSource, b: &'a dyn RadianceSource, rigid: &Matrix4<f64>) -> Result<Composed<'a>> {
    if !rigid.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("transform must be finite".into()));
    }
    let inverse = rigid.try_inverse().ok_or(Error::SingularTransform)?;
    let rotation_inverse = rigid.fixed_view::<3, 3>(0, 0).into_owned().try_inverse().ok_or(Error::SingularTransform)?;
    let (a_lo, a_hi) = a.bounds();
    let (b_lo, b_hi) = b.bounds();
    let mut lo = a_lo;
    let mut hi = a_hi;
    for k in 0..8 {
        let corner = Vec3::new(
            if k & 1 == 0 { b_lo.x } else { b_hi.x },
            if k & 2 == 0 { b_lo.y } else { b_hi.y },
            if k & 4 == 0 { b_lo.z } else { b_hi.z },
        );
        let w = rigid * Vector4::new(corner.x, corner.y, corner.z, 1.0);
        let c = Vec3::new(w.x, w.y, w.z);
        lo = lo.inf(&c);
        hi = hi.sup(&c);
    }
    let feature_dim = if a.feature_dim() == b.feature_dim() { a.feature_dim() } else { 0 };
    Ok(Composed { a, b, inverse, rotation_inverse, bounds: (lo, hi), feature_dim })
}

impl RadianceSource for Composed<'_> {
    fn bounds(&self) -> (Vec3, Vec3) {
        self.bounds
    }

    fn base_step(&self) -> f64 {
        self.a.base_step().min(self.b.base_step())
    }

    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn sample(&self, p: &Vec3, dir: &Vec3, want_rgb: bool, feature: &mut [f64]) -> (f64, [f64; 3]) {
        let m = feature.len();
        let mut fa = vec![0.0; m];
        let (s1, c1) = self.a.sample(p, dir, want_rgb, &mut fa);
        let w = self.inverse * Vector4::new(p.x, p.y, p.z, 1.0);
        let q = Vec3::new(w.x, w.y, w.z);
        let mut fb = vec![0.0; m];
        let (s2, c2) = self.b.sample(&q, &(self.rotation_inverse * dir), want_rgb, &mut fb);
        if s2 == 0.0 {
            feature.copy_from_slice(&fa);
            return (s1, c1);
        }
        if s1 == 0.0 {
            feature.copy_from_slice(&fb);
            return (s2, c2);
        }
        let s = s1 + s2;
        for ((f, x), y) in feature.iter_mut().zip(&fa).zip(&fb) {
            *f = (s1 * x + s2 * y) / s;
        }
        let c = [0, 1, 2].map(|k| (s1 * c1[k] + s2 * c2[k]) / s);
        (s, c)
    }
}

/// Writes the edited scene into a fresh direct-decoder field on `geometry`.
/// Colors are decoded along +z, so view-dependent appearance is flattened.
pub fn bake(source: &dyn RadianceSource, geometry: &GridGeometry) -> Result<VoxelField> {
    let dim = source.feature_dim();
    let n = geometry.node_count();
    let mut density = Vec::with_capacity(n);
    let mut appearance = Vec::with_capacity(3 * n);
    let mut features = Vec::with_capacity(dim * n);
    let mut f = vec![0.0; dim];
    let dir = Vec3::z();
    for i in 0..n {
        let [x, y, z] = geometry.coords(i);
        let p = geometry.node_position(x, y, z);
        let (sigma, rgb) = source.sample(&p, &dir, true, &mut f);
        let raw = if sigma > 0.0 { inverse_softplus(sigma).max(BAKED_EMPTY_RAW) } else { BAKED_EMPTY_RAW };
        density.push(raw as f32);
        appearance.extend(rgb.map(|c| logit(c) as f32));
        features.extend(f.iter().map(|v| *v as f32));
    }
    VoxelField::new(
        Lattice::Dense(DenseGrid::from_values(geometry.clone(), 1, density)?),
        Lattice::Dense(DenseGrid::from_values(geometry.clone(), 3, appearance)?),
        if dim > 0 { Some(Lattice::Dense(DenseGrid::from_values(geometry.clone(), dim, features)?)) } else { None },
    )
}
