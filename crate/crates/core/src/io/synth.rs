//! Seeded synthetic scenes with exact ground truth.
//!
//! Primitives are rasterized onto the grid nodes: density is opaque inside,
//! colors come from the albedo and features from a per-material random unit
//! vector (plus optional noise). Empty nodes carry the appearance and feature
//! of the nearest primitive so interpolation at surfaces does not blend with
//! arbitrary values. Posed images and feature maps are rendered from this
//! field with the ordinary renderer.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{Frame, PosedDataset, Split};
use super::scene::Scene;
use crate::error::{Error, Result};
use crate::field::{inverse_softplus, logit, VoxelField};
use crate::grid::{Bitmap3D, DenseGrid, GridGeometry, Lattice, Vec3};
use crate::grow::{Polarity, Stroke};
use crate::render::{render_image, render_mask, Camera, Decoder, FieldSource, RenderMode, RenderOptions};

/// Optical thickness of one voxel edge inside a primitive.
const INSIDE_OPTICAL_DEPTH: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    Box { center: [f64; 3], half_size: [f64; 3] },
}

impl Shape {
    /// Signed distance (exact for spheres, the usual box approximation otherwise).
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        match self {
            Shape::Sphere { center, radius } => (p - Vec3::from(*center)).norm() - radius,
            Shape::Box { center, half_size } => {
                let q = (p - Vec3::from(*center)).abs() - Vec3::from(*half_size);
                q.map(|v| v.max(0.0)).norm() + q.max().min(0.0)
            }
        }
    }

    pub fn volume(&self) -> f64 {
        match self {
            Shape::Sphere { radius, .. } => 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3),
            Shape::Box { half_size, .. } => 8.0 * half_size.iter().product::<f64>(),
        }
    }

    fn extent(&self) -> (Vec3, Vec3) {
        match self {
            Shape::Sphere { center, radius } => {
                let c = Vec3::from(*center);
                (c.add_scalar(-radius), c.add_scalar(*radius))
            }
            Shape::Box { center, half_size } => {
                let (c, h) = (Vec3::from(*center), Vec3::from(*half_size));
                (c - h, c + h)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    pub albedo: [f64; 3],
    /// Object label; several primitives may share one.
    pub object: u32,
    /// Feature identity; defaults to the object label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<u32>,
}

impl Primitive {
    pub fn material(&self) -> u32 {
        self.material.unwrap_or(self.object)
    }
}

fn d_resolution() -> usize {
    32
}
fn d_half_extent() -> f64 {
    1.0
}
fn d_train_views() -> usize {
    24
}
fn d_test_views() -> usize {
    4
}
fn d_image_size() -> u32 {
    64
}
fn d_feature_dim() -> usize {
    16
}
fn d_feature_scale() -> f64 {
    12.0
}
fn d_camera_distance() -> f64 {
    3.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub primitives: Vec<Primitive>,
    #[serde(default = "d_resolution")]
    pub resolution: usize,
    /// The scene box is `[-half_extent, half_extent]^3`.
    #[serde(default = "d_half_extent")]
    pub half_extent: f64,
    #[serde(default = "d_train_views")]
    pub train_views: usize,
    #[serde(default = "d_test_views")]
    pub test_views: usize,
    #[serde(default = "d_image_size")]
    pub image_size: u32,
    #[serde(default = "d_camera_distance")]
    pub camera_distance: f64,
    #[serde(default = "d_feature_dim")]
    pub feature_dim: usize,
    /// Length of each material's feature vector.
    #[serde(default = "d_feature_scale")]
    pub feature_scale: f64,
    /// Standard deviation of per-node Gaussian feature noise.
    #[serde(default)]
    pub feature_noise: f64,
}

impl SynthSpec {
    fn with_primitives(seed: u64, primitives: Vec<Primitive>) -> Self {
        Self {
            seed,
            primitives,
            resolution: d_resolution(),
            half_extent: d_half_extent(),
            train_views: d_train_views(),
            test_views: d_test_views(),
            image_size: d_image_size(),
            camera_distance: d_camera_distance(),
            feature_dim: d_feature_dim(),
            feature_scale: d_feature_scale(),
            feature_noise: 0.0,
        }
    }

    /// A red sphere and a blue box, separated by empty space.
    pub fn two_objects(seed: u64) -> Self {
        Self::with_primitives(
            seed,
            vec![
                Primitive {
                    shape: Shape::Sphere { center: [-0.42, 0.05, 0.0], radius: 0.36 },
                    albedo: [0.85, 0.2, 0.15],
                    object: 1,
                    material: None,
                },
                Primitive {
                    shape: Shape::Box { center: [0.42, -0.05, 0.05], half_size: [0.26, 0.3, 0.26] },
                    albedo: [0.15, 0.3, 0.85],
                    object: 2,
                    material: None,
                },
            ],
        )
    }

    pub fn single_sphere(seed: u64) -> Self {
        Self::with_primitives(
            seed,
            vec![Primitive {
                shape: Shape::Sphere { center: [0.0, 0.0, 0.0], radius: 0.5 },
                albedo: [0.8, 0.25, 0.2],
                object: 1,
                material: None,
            }],
        )
    }

    /// One object made of two touching boxes with different materials, next
    /// to a second object.
    pub fn two_material_object(seed: u64) -> Self {
        let part = |cx: f64, material: u32, albedo: [f64; 3]| Primitive {
            shape: Shape::Box { center: [cx, 0.0, 0.0], half_size: [0.22, 0.3, 0.3] },
            albedo,
            object: 1,
            material: Some(material),
        };
        Self::with_primitives(
            seed,
            vec![
                part(-0.5, 10, [0.8, 0.3, 0.2]),
                part(-0.06, 11, [0.8, 0.7, 0.2]),
                Primitive {
                    shape: Shape::Sphere { center: [0.55, 0.0, 0.0], radius: 0.3 },
                    albedo: [0.2, 0.4, 0.8],
                    object: 2,
                    material: None,
                },
            ],
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.primitives.is_empty() {
            return bad("synthetic scene needs at least one primitive".into());
        }
        if self.resolution < 2 || !(self.half_extent > 0.0) {
            return bad("resolution must be >= 2 and half_extent > 0".into());
        }
        if self.train_views < 2 {
            return bad("need at least two training views".into());
        }
        if self.image_size == 0 || !(self.camera_distance > self.half_extent * 3f64.sqrt()) {
            return bad("cameras must lie outside the scene box".into());
        }
        if !(self.feature_scale >= 0.0) || !(self.feature_noise >= 0.0) {
            return bad("feature scale and noise must be >= 0".into());
        }
        for (i, p) in self.primitives.iter().enumerate() {
            let size_ok = match &p.shape {
                Shape::Sphere { radius, .. } => *radius > 0.0,
                Shape::Box { half_size, .. } => half_size.iter().all(|h| *h > 0.0),
            };
            if !size_ok {
                return bad(format!("primitive {i} has a non-positive size"));
            }
            let (lo, hi) = p.shape.extent();
            if lo.min() < -self.half_extent || hi.max() > self.half_extent {
                return bad(format!("primitive {i} leaves the scene box"));
            }
            if p.albedo.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return bad(format!("primitive {i} albedo outside [0, 1]"));
            }
        }
        // a material belongs to one object only
        let mut owner = BTreeMap::new();
        for p in &self.primitives {
            if *owner.entry(p.material()).or_insert(p.object) != p.object {
                return bad(format!("material {} is shared between objects", p.material()));
            }
        }
        Ok(())
    }

    pub fn object_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.primitives.iter().map(|p| p.object).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

pub fn object_mask_name(id: u32) -> String {
    format!("object-{id}")
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    /// Ground-truth field (direct decoder) with one mask per object.
    pub scene: Scene,
    /// Unit-length-times-scale feature vector of each material.
    pub material_features: BTreeMap<u32, Vec<f64>>,
    pub dataset: PosedDataset,
}

impl SynthOutput {
    pub fn object_mask(&self, id: u32) -> Option<&Bitmap3D> {
        self.scene.masks.get(&object_mask_name(id))
    }

    /// Object pixels of `camera` not covered by any other object.
    pub fn visible_pixels(&self, id: u32, camera: &Camera, opts: &RenderOptions) -> Result<Vec<bool>> {
        let mask = self.object_mask(id).ok_or_else(|| Error::InvalidInput(format!("no object {id}")))?;
        let mut others = Bitmap3D::empty(mask.geometry().clone());
        for (name, m) in &self.scene.masks {
            if *name != object_mask_name(id) {
                others = others.union(m)?;
            }
        }
        let source = FieldSource::new(&self.scene.field, &self.scene.decoder);
        let (alpha, _) = render_mask(&source, mask, camera, opts);
        let (occluder, _) = render_mask(&source, &others, camera, opts);
        Ok(alpha.iter().zip(&occluder).map(|(a, o)| *a > 0.5 && *o < 0.01).collect())
    }

    /// A short positive stroke on object `id`, placed on the test view pixel
    /// farthest from the edge of the object's unoccluded silhouette.
    pub fn scripted_stroke(&self, id: u32, opts: &RenderOptions) -> Result<Stroke> {
        let mut best: Option<(u32, &Camera, usize)> = None;
        for frame in self.dataset.split(Split::Test) {
            let cam = &frame.camera;
            let visible = self.visible_pixels(id, cam, opts)?;
            let depth = chessboard_depth(&visible, cam.width as usize, cam.height as usize);
            if let Some((i, &d)) = depth.iter().enumerate().max_by_key(|&(i, d)| (*d, std::cmp::Reverse(i))) {
                if best.is_none_or(|(bd, ..)| d > bd) {
                    best = Some((d, cam, i));
                }
            }
        }
        let Some((depth, cam, i)) = best.filter(|b| b.0 > 1) else {
            return Err(Error::EmptySelection(format!("object {id} is not visible in any test view")));
        };
        let (u, v) = ((i % cam.width as usize) as i64, (i / cam.width as usize) as i64);
        // half-length plus radius must stay inside the region (brushes are at least radius 1)
        let budget = depth - 1;
        let radius = (budget / 2).clamp(1, 2);
        let reach = (budget - radius).min(2) as i64;
        Ok(Stroke {
            camera: cam.clone(),
            polyline: vec![[u - reach, v], [u + reach, v]],
            radius,
            polarity: Polarity::Positive,
        })
    }
}

/// Chessboard distance from each set pixel to the nearest unset pixel or
/// the image border (1 for pixels on the edge of the region, 0 outside).
fn chessboard_depth(set: &[bool], w: usize, h: usize) -> Vec<u32> {
    let mut d: Vec<u32> = set.iter().map(|&s| if s { u32::MAX } else { 0 }).collect();
    let at = |d: &Vec<u32>, x: i64, y: i64| -> u32 {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0
        } else {
            d[y as usize * w + x as usize]
        }
    };
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let i = y as usize * w + x as usize;
            if d[i] > 0 {
                let m =
                    [(-1, -1), (0, -1), (1, -1), (-1, 0)].iter().map(|(dx, dy)| at(&d, x + dx, y + dy)).min().unwrap();
                d[i] = d[i].min(m + 1);
            }
        }
    }
    for y in (0..h as i64).rev() {
        for x in (0..w as i64).rev() {
            let i = y as usize * w + x as usize;
            if d[i] > 0 {
                let m = [(1, 1), (0, 1), (-1, 1), (1, 0)].iter().map(|(dx, dy)| at(&d, x + dx, y + dy)).min().unwrap();
                d[i] = d[i].min(m + 1);
            }
        }
    }
    d
}

/// Random unit vectors per material, orthogonalized when they fit.
fn material_features(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> BTreeMap<u32, Vec<f64>> {
    let mut out: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut materials: Vec<u32> = spec.primitives.iter().map(Primitive::material).collect();
    materials.sort_unstable();
    materials.dedup();
    let orthogonal = materials.len() <= spec.feature_dim;
    for m in materials {
        let mut v: Vec<f64> = (0..spec.feature_dim).map(|_| StandardNormal.sample(rng)).collect();
        if orthogonal {
            for u in out.values() {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (a, b) in v.iter_mut().zip(u) {
                    *a -= d * b;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.iter_mut().for_each(|x| *x /= norm);
        out.insert(m, v);
    }
    for v in out.values_mut() {
        v.iter_mut().for_each(|x| *x *= spec.feature_scale);
    }
    out
}

/// Cameras on a sphere around the origin: a Fibonacci spiral for training
/// views, interleaved azimuths at moderate elevation for test views.
pub fn orbit_cameras(spec: &SynthSpec, azimuth_offset: f64) -> Result<(Vec<Camera>, Vec<Camera>)> {
    let size = spec.image_size;
    let focal = 0.9 * size as f64;
    let at = |elev: f64, azim: f64| {
        let (se, ce) = elev.sin_cos();
        let (sa, ca) = azim.sin_cos();
        let eye = Vec3::new(ce * sa, -se, -ce * ca) * spec.camera_distance;
        Camera::look_at(eye, Vec3::zeros(), Vec3::new(0.0, -1.0, 0.0), focal, size, size)
    };
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let max_elev = 70f64.to_radians();
    let n = spec.train_views;
    let train = (0..n)
        .map(|i| {
            let s = 2.0 * (i as f64 + 0.5) / n as f64 - 1.0;
            at(s * max_elev, azimuth_offset + golden * i as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    let m = spec.test_views;
    let test = (0..m)
        .map(|i| {
            let elev = if i % 2 == 0 { 20f64 } else { -15f64 }.to_radians();
            let azim = azimuth_offset + std::f64::consts::TAU * (i as f64 + 0.37) / m.max(1) as f64;
            at(elev, azim)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((train, test))
}

/// Builds the ground-truth field, per-object bitmaps and a rendered dataset.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let features = material_features(spec, &mut rng);
    let geometry = GridGeometry::cube(spec.resolution, spec.half_extent)?;
    let n = geometry.node_count();
    let raw_inside = inverse_softplus(INSIDE_OPTICAL_DEPTH / geometry.min_voxel_edge()) as f32;
    let dim = spec.feature_dim;

    // Mirrored logits put the interpolated surface midway between an inside
    // and an outside node, so renders agree with the nearest-node bitmaps.
    let mut density = vec![-raw_inside; n];
    let mut appearance = vec![0.0f32; 3 * n];
    let mut feat = vec![0.0f32; dim * n];
    let mut labels: Vec<Option<u32>> = vec![None; n];
    let noise = Normal::new(0.0, spec.feature_noise).map_err(|e| Error::InvalidInput(e.to_string()))?;
    for i in 0..n {
        let [x, y, z] = geometry.coords(i);
        let p = geometry.node_position(x, y, z);
        // later primitives win where they overlap
        let (best, d) = spec.primitives.iter().enumerate().map(|(k, prim)| (k, prim.shape.signed_distance(&p))).fold(
            (0, f64::INFINITY),
            |acc, (k, d)| {
                if d <= 0.0 || (acc.1 > 0.0 && d < acc.1) {
                    (k, d)
                } else {
                    acc
                }
            },
        );
        let prim = &spec.primitives[best];
        if d <= 0.0 {
            density[i] = raw_inside;
            labels[i] = Some(prim.object);
        }
        for c in 0..3 {
            appearance[3 * i + c] = logit(prim.albedo[c]) as f32;
        }
        let f = &features[&prim.material()];
        for c in 0..dim {
            let e = if spec.feature_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            feat[dim * i + c] = (f[c] + e) as f32;
        }
    }
    let field = VoxelField::new(
        Lattice::Dense(DenseGrid::from_values(geometry.clone(), 1, density)?),
        Lattice::Dense(DenseGrid::from_values(geometry.clone(), 3, appearance)?),
        if dim > 0 { Some(Lattice::Dense(DenseGrid::from_values(geometry.clone(), dim, feat)?)) } else { None },
    )?;
    let mut scene = Scene::new(field, Decoder::Direct)?;
    for id in spec.object_ids() {
        let bits = Bitmap3D::from_fn(geometry.clone(), |i| labels[i] == Some(id));
        scene.masks.insert(object_mask_name(id), bits);
    }

    let azimuth_offset = rand::Rng::random_range(&mut rng, 0.0..std::f64::consts::TAU);
    let (train, test) = orbit_cameras(spec, azimuth_offset)?;
    let source = FieldSource::new(&scene.field, &scene.decoder);
    let opts = RenderOptions::default();
    let mut frames = Vec::with_capacity(train.len() + test.len());
    let cams = train.into_iter().map(|c| (c, Split::Train)).chain(test.into_iter().map(|c| (c, Split::Test)));
    for (k, (camera, split)) in cams.enumerate() {
        let rgb = render_image(&source, &camera, RenderMode::Rgb, &opts).to_rgb8();
        let features = (dim > 0).then(|| {
            render_image(&source, &camera, RenderMode::Feature, &opts).features.into_iter().map(|v| v as f32).collect()
        });
        frames.push(Frame { name: format!("{k:03}"), camera, split, rgb, features });
    }
    let h = spec.half_extent;
    let dataset =
        PosedDataset { bbox_min: [-h; 3], bbox_max: [h; 3], frames, feature_dim: dim, pca: None, warnings: Vec::new() };
    dataset.validate()?;
    Ok(SynthOutput { scene, material_features: features, dataset })
}
