//! Analytic loss gradients against central finite differences of the
//! forward renderer, one random ray at a time. Shared by the gradient test
//! and the acceptance suite.

use isrf_core::field::VoxelField;
use isrf_core::grid::{GridGeometry, Vec3};
use isrf_core::render::{render_ray, Camera, Decoder, FieldSource, MlpDecoder, RenderMode, RenderOptions};
use isrf_core::train::{backward, Gradients, Phase, RayTarget};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LAMBDA: f64 = 0.7;
const FEATURE_DIM: usize = 3;

/// The loss `backward` differentiates, computed from two plain forward renders.
/// The feature term is gated: it only trains the feature lattice, so the
/// other parameters are checked against the photometric term alone.
fn forward_loss(field: &VoxelField, decoder: &Decoder, target: &RayTarget, opts: &RenderOptions, p: Param) -> f64 {
    let src = FieldSource::new(field, decoder);
    let c = render_ray(&src, &target.ray, RenderMode::Rgb, opts).color;
    let f = render_ray(&src, &target.ray, RenderMode::Feature, opts).feature;
    let rgb = (0..3).map(|k| (c[k] - target.rgb[k]).powi(2)).sum::<f64>() / 3.0;
    let feat = match target.feature {
        Some(g) => f.iter().zip(g).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / FEATURE_DIM as f64,
        None => 0.0,
    };
    match p {
        Param::Feature(_) => LAMBDA * feat,
        _ => rgb,
    }
}

#[derive(Clone, Copy, Debug)]
enum Param {
    Density(usize),
    Appearance(usize),
    Feature(usize),
    Decoder(usize),
}

fn slot<'a>(field: &'a mut VoxelField, decoder: &'a mut Decoder, p: Param) -> &'a mut f32 {
    match p {
        Param::Density(i) => &mut field.density_mut().as_dense_mut().unwrap().values_mut()[i],
        Param::Appearance(i) => &mut field.appearance_mut().as_dense_mut().unwrap().values_mut()[i],
        Param::Feature(i) => &mut field.features_mut().unwrap().as_dense_mut().unwrap().values_mut()[i],
        Param::Decoder(i) => &mut decoder.params_mut()[i],
    }
}

fn analytic(g: &Gradients, p: Param) -> f64 {
    match p {
        Param::Density(i) => g.density[i],
        Param::Appearance(i) => g.appearance[i],
        Param::Feature(i) => g.features[i],
        Param::Decoder(i) => g.decoder[i],
    }
}

/// Central difference using the step actually representable in f32 storage.
fn numeric(field: &VoxelField, decoder: &Decoder, target: &RayTarget, opts: &RenderOptions, p: Param) -> f64 {
    let (mut f, mut d) = (field.clone(), decoder.clone());
    let v = *slot(&mut f, &mut d, p);
    let h = 1e-3f32 * v.abs().max(1.0);
    let (up, down) = (v + h, v - h);
    *slot(&mut f, &mut d, p) = up;
    let lp = forward_loss(&f, &d, target, opts, p);
    *slot(&mut f, &mut d, p) = down;
    let lm = forward_loss(&f, &d, target, opts, p);
    (lp - lm) / (up as f64 - down as f64)
}

pub fn random_case(seed: u64) -> (VoxelField, Decoder, RayTarget<'static>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geo = GridGeometry::new([5, 4, 6], Vec3::new(-1.0, -0.8, -1.2), Vec3::new(1.0, 0.8, 1.2)).unwrap();
    let mlp = seed % 3 == 2;
    let channels = if mlp { 4 } else { 3 };
    let mut field = VoxelField::empty(geo.clone(), channels, FEATURE_DIM).unwrap();
    for v in field.density_mut().as_dense_mut().unwrap().values_mut() {
        *v = rng.random_range(-1.5..2.5);
    }
    for v in field.appearance_mut().as_dense_mut().unwrap().values_mut() {
        *v = rng.random_range(-2.0..2.0);
    }
    for v in field.features_mut().unwrap().as_dense_mut().unwrap().values_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    let decoder = if mlp { Decoder::Mlp(MlpDecoder::new(channels, 8, 2, seed)) } else { Decoder::Direct };
    let eye = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        .normalize()
        * 4.0;
    let cam = Camera::look_at(eye, Vec3::zeros(), Vec3::y(), 8.0, 8, 8).unwrap();
    let ray = loop {
        let (u, v) = (rng.random_range(1.0..7.0), rng.random_range(1.0..7.0));
        if let Some(r) = cam.generate_ray(u, v, (geo.bbox_min(), geo.bbox_max())) {
            break r;
        }
    };
    let feature: Vec<f64> = (0..FEATURE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
    let target = RayTarget {
        ray,
        rgb: [rng.random(), rng.random(), rng.random()],
        feature: Some(Box::leak(feature.into_boxed_slice())),
    };
    (field, decoder, target)
}

/// Checks every density, appearance and feature parameter and every 7th
/// decoder parameter of case `seed`. Returns the number of checked values.
pub fn check_case(seed: u64) -> Result<usize, String> {
    let opts = RenderOptions::default();
    let (field, decoder, target) = random_case(seed);
    let grads = backward(&field, &decoder, std::slice::from_ref(&target), Phase::Distill, LAMBDA, &opts)
        .map_err(|e| e.to_string())?;
    let mut params: Vec<Param> = Vec::new();
    params.extend((0..grads.density.len()).map(Param::Density));
    params.extend((0..grads.appearance.len()).map(Param::Appearance));
    params.extend((0..grads.features.len()).map(Param::Feature));
    params.extend((0..grads.decoder.len()).step_by(7).map(Param::Decoder));
    let scale = params.iter().map(|&p| analytic(&grads, p).abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(format!("seed {seed}: ray produced no gradient"));
    }
    for &p in &params {
        let a = analytic(&grads, p);
        let n = numeric(&field, &decoder, &target, &opts, p);
        // relative to the larger magnitude, with a floor for parameters the ray barely touches
        let tol = 1e-4 * a.abs().max(n.abs()).max(1e-3 * scale);
        if (a - n).abs() > tol {
            return Err(format!("seed {seed} {p:?}: analytic {a:e} numeric {n:e}"));
        }
    }
    Ok(params.len())
}
