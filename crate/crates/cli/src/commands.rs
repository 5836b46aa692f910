use std::fs;
use std::path::{Path, PathBuf};

use isrf_core::edit::{apply_edits, bake, load_edit_script};
use isrf_core::grow::{BilateralParams, ReplayLog, SegmentParams, SegmentationSession, SessionRecord};
use isrf_core::io::{
    ingest_dataset, load_scene, read_bytes, read_gray, save_dataset, save_scene, synth_generate, write_gray, write_rgb,
    IngestOptions, Scene, Split, SynthSpec,
};
use isrf_core::metrics::{iou, score_view, MaskMetrics, Report, ReportRow};
use isrf_core::render::{
    render_frame, render_image, Decoder, FieldSource, FrameMode, RenderMode, RenderOptions, MASK_ALPHA_THRESHOLD,
};
use isrf_core::semantic::{preview_basis, SeedThreshold, DEFAULT_OCCUPANCY_ALPHA};
use isrf_core::train::{train as fit, TrainConfig};
use isrf_core::Error;

use crate::files::{read_json, resolve_mask, unpack_bits, write_json, CameraFile};
use crate::{CliError, EditArgs, EvalArgs, RenderArgs, SegmentArgs, ServeArgs, SynthArgs, TrainArgs};

/// Node features sampled to fit the feature preview basis.
const PREVIEW_SAMPLES: usize = 20_000;

fn load(dir: &Path) -> Result<Scene, CliError> {
    let loaded = load_scene(dir)?;
    for w in &loaded.warnings {
        log::warn!("{}: {w}", dir.display());
    }
    Ok(loaded.scene)
}

fn ensure_parent(path: &Path) -> std::io::Result<()> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(p) => fs::create_dir_all(p),
        None => Ok(()),
    }
}

fn basis_for(scene: &Scene, mode: FrameMode) -> Result<Option<[Vec<f64>; 3]>, CliError> {
    if mode != FrameMode::Feature {
        return Ok(None);
    }
    Ok(Some(preview_basis(&scene.field, DEFAULT_OCCUPANCY_ALPHA, PREVIEW_SAMPLES)?))
}

pub fn synth(a: &SynthArgs, seed: Option<u64>) -> Result<(), CliError> {
    let s = seed.unwrap_or(0);
    let mut spec = match (&a.spec, a.preset.as_deref()) {
        (Some(path), _) => read_json::<SynthSpec>(path, "synth spec")?,
        (None, Some("single_sphere")) => SynthSpec::single_sphere(s),
        (None, Some("two_material")) => SynthSpec::two_material_object(s),
        _ => SynthSpec::two_objects(s),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(r) = a.resolution {
        spec.resolution = r;
    }
    if let Some(px) = a.image_size {
        spec.image_size = px;
    }
    let out = synth_generate(&spec)?;
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("spec.json"), &spec)?;
    save_dataset(&a.out.join("dataset"), &out.dataset)?;
    save_scene(&a.out.join("gt"), &out.scene)?;

    let masks = a.out.join("masks");
    fs::create_dir_all(&masks)?;
    for (name, bits) in &out.scene.masks {
        fs::write(masks.join(format!("{name}.bits")), bits.to_bytes())?;
    }
    let strokes = a.out.join("strokes");
    fs::create_dir_all(&strokes)?;
    let opts = RenderOptions::default();
    for id in spec.object_ids() {
        let name = isrf_core::io::object_mask_name(id);
        match out.scripted_stroke(id, &opts) {
            Ok(stroke) => {
                let log = ReplayLog::new(vec![SessionRecord::Stroke { stroke, params: None }]);
                fs::write(strokes.join(format!("{name}.json")), log.to_json())?;
            }
            // an object hidden in every test view gets no scripted stroke
            Err(Error::EmptySelection(m)) => log::warn!("no stroke for {name}: {m}"),
            Err(e) => return Err(e.into()),
        }
    }
    let test: Vec<_> = out.dataset.split(Split::Test).map(|f| f.camera.clone()).collect();
    write_json(&a.out.join("cams.json"), &CameraFile::Many(test))?;
    println!(
        "wrote {} frames, {} objects and test cameras to {}",
        out.dataset.frames.len(),
        out.scene.masks.len(),
        a.out.display()
    );
    Ok(())
}

pub fn train(a: &TrainArgs, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(path) => read_json::<TrainConfig>(path, "train config")?,
        None if a.schedule == "synthetic" => TrainConfig::synthetic(),
        None => TrainConfig::default(),
    };
    if let Some(v) = a.iters {
        cfg.pretrain_iters = v;
    }
    if let Some(v) = a.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = a.resolution {
        cfg.resolution = v;
    }
    if let Some(v) = a.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr_density {
        cfg.lr_density = v;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    // a zero feature weight turns distillation off
    match (a.lambda, a.distill_iters) {
        (Some(l), Some(m)) if l == 0.0 && m > 0 => {
            return Err(CliError::Usage("--distill-iters > 0 needs a positive --lambda".into()));
        }
        (_, Some(m)) => cfg.distill_iters = m,
        (Some(0.0), None) => cfg.distill_iters = 0,
        _ => {}
    }
    cfg.validate()?;

    let dataset = ingest_dataset(&a.data, &IngestOptions { feature_dim: a.feature_dim })?;
    for w in &dataset.warnings {
        log::warn!("{w}");
    }
    let outcome = fit(&dataset, &cfg)?;
    let mut scene = Scene::new(outcome.field, outcome.decoder)?;
    scene.pca = dataset.pca.clone();
    save_scene(&a.out, &scene)?;

    let source = FieldSource::new(&scene.field, &scene.decoder);
    let opts = cfg.render_options();
    let psnrs: Vec<f64> = dataset
        .split(Split::Test)
        .map(|frame| {
            let img = render_image(&source, &frame.camera, RenderMode::Rgb, &opts);
            let rendered: Vec<f64> = img.color.iter().flatten().copied().collect();
            let truth: Vec<f64> = frame.rgb.iter().map(|&v| v as f64 / 255.0).collect();
            isrf_core::metrics::psnr(&rendered, &truth)
        })
        .collect::<Result<_, _>>()?;
    let iters = cfg.pretrain_iters + cfg.distill_iters;
    if psnrs.is_empty() {
        println!("trained {iters} iterations; no test views to score");
    } else {
        let mean = psnrs.iter().sum::<f64>() / psnrs.len() as f64;
        println!("trained {iters} iterations; test PSNR {mean:.2} dB over {} views", psnrs.len());
    }
    Ok(())
}

pub fn segment(a: &SegmentArgs, seed: Option<u64>) -> Result<(), CliError> {
    let defaults = SegmentParams {
        k: a.k,
        kmeans_seed: seed.unwrap_or(0),
        seed_threshold: SeedThreshold::Percentile(a.seed_percentile),
        bilateral: BilateralParams {
            sigma_phi: a.sigma,
            sigma_s: a.sigma_s.unwrap_or(a.sigma),
            tau: a.tau,
            max_iters: a.max_iters,
            ..BilateralParams::default()
        },
        fill_cavities: a.fill_cavities,
        ..SegmentParams::default()
    };
    if a.k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    defaults.bilateral.validate()?;
    let text = String::from_utf8(read_bytes(&a.strokes)?)
        .map_err(|e| Error::Format { what: "replay log".into(), detail: e.to_string() })?;
    let log = ReplayLog::from_json(&text)?;
    let scene = load(&a.scene)?;
    let session =
        SegmentationSession::replay(&scene.field, &scene.decoder, &log, &defaults, &RenderOptions::default())?;
    ensure_parent(&a.out)?;
    fs::write(&a.out, session.current().to_bytes())?;
    println!("replayed {} records; mask has {} voxels", log.records.len(), session.current().count_ones());
    Ok(())
}

pub fn edit(a: &EditArgs) -> Result<(), CliError> {
    let mode: FrameMode = a.mode.parse()?;
    let script = load_edit_script(&a.script)?;
    let cams = CameraFile::load(&a.render)?;
    let scene = load(&a.scene)?;
    let base_dir = a.script.parent().unwrap_or(Path::new("."));
    let edits = script.resolve(&scene, base_dir)?;
    let basis = basis_for(&scene, mode)?;
    let base = FieldSource::new(&scene.field, &scene.decoder);
    let opts = RenderOptions::default();
    fs::create_dir_all(&a.out)?;
    for (k, cam) in cams.cameras().iter().enumerate() {
        let rgb = apply_edits(&base, &edits, &mut |src| render_frame(src, cam, mode, None, basis.as_ref(), &opts))??;
        write_rgb(&a.out.join(format!("{k:03}.png")), cam.width, cam.height, rgb)?;
    }
    if let Some(dir) = &a.bake {
        let geometry = scene.field.geometry().clone();
        let field = apply_edits(&base, &edits, &mut |src| bake(src, &geometry))??;
        let mut baked = Scene::new(field, Decoder::Direct)?;
        baked.pca = scene.pca.clone();
        save_scene(dir, &baked)?;
    }
    println!("applied {} edits, rendered {} views", edits.len(), cams.cameras().len());
    Ok(())
}

/// Sorted file names in `dir` with extension `ext`.
fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext)) {
            out.push(PathBuf::from(path.file_name().expect("file has a name")));
        }
    }
    out.sort();
    Ok(out)
}

fn matching(pred: &Path, name: &Path) -> Result<PathBuf, CliError> {
    let p = pred.join(name);
    if p.is_file() {
        Ok(p)
    } else {
        Err(Error::MissingFile(p).into())
    }
}

/// One report row from the masks directly inside `gt`, or `None` if it holds none.
fn eval_dir(pred: &Path, gt: &Path, scene: &str, method: &str) -> Result<Option<ReportRow>, CliError> {
    let to_bin = |g: &[u8]| -> Vec<bool> { g.iter().map(|&v| v as f64 / 255.0 > MASK_ALPHA_THRESHOLD).collect() };
    let mut views = Vec::new();
    for name in files_with_ext(gt, "png")? {
        let (gw, gh, g) = read_gray(&gt.join(&name))?;
        let (pw, ph, p) = read_gray(&matching(pred, &name)?)?;
        if (gw, gh) != (pw, ph) {
            return Err(Error::ShapeMismatch(format!(
                "{}: prediction is {pw}x{ph}, ground truth {gw}x{gh}",
                name.display()
            ))
            .into());
        }
        let scores: Vec<f64> = p.iter().map(|&v| v as f64 / 255.0).collect();
        views.push(score_view(&scores, &to_bin(&p), &to_bin(&g))?);
    }
    let mut voxel = Vec::new();
    for name in files_with_ext(gt, "bits")? {
        let g = read_bytes(&gt.join(&name))?;
        let p = read_bytes(&matching(pred, &name)?)?;
        if g.len() != p.len() {
            return Err(Error::ShapeMismatch(format!("{}: voxel masks differ in size", name.display())).into());
        }
        voxel.push(iou(&unpack_bits(&p), &unpack_bits(&g))?);
    }
    if views.is_empty() {
        if !voxel.is_empty() {
            return Err(
                Error::InsufficientData(format!("{}: voxel masks need rendered views too", gt.display())).into()
            );
        }
        return Ok(None);
    }
    Ok(Some(ReportRow {
        scene: scene.to_string(),
        method: method.to_string(),
        views: views.len(),
        metrics: MaskMetrics::mean(&views)?,
        voxel_iou: (!voxel.is_empty()).then(|| voxel.iter().sum::<f64>() / voxel.len() as f64),
    }))
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    for dir in [&a.pred, &a.gt] {
        if !dir.is_dir() {
            return Err(Error::MissingFile(dir.clone()).into());
        }
    }
    let top = a
        .scene_name
        .clone()
        .or_else(|| a.gt.canonicalize().ok()?.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "scene".into());
    let mut report = Report::default();
    report.rows.extend(eval_dir(&a.pred, &a.gt, &top, &a.method)?);
    // subdirectories present on both sides become rows of their own
    let mut subdirs: Vec<PathBuf> =
        fs::read_dir(&a.gt)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    subdirs.sort();
    for dir in subdirs {
        let name = dir.file_name().expect("directory has a name");
        let pred = a.pred.join(name);
        if pred.is_dir() {
            report.rows.extend(eval_dir(&pred, &dir, &name.to_string_lossy(), &a.method)?);
        }
    }
    if report.rows.is_empty() {
        return Err(Error::InsufficientData("no PNG masks to compare".into()).into());
    }
    ensure_parent(&a.report)?;
    let table = report.to_string();
    fs::write(&a.report, &table)?;
    print!("{table}");
    Ok(())
}

pub fn render(a: &RenderArgs) -> Result<(), CliError> {
    let mode: FrameMode = a.mode.parse()?;
    let wants_mask = matches!(mode, FrameMode::Mask | FrameMode::MaskOverlay);
    match (wants_mask, a.mask.is_some()) {
        (true, false) => return Err(CliError::Usage(format!("--mode {} needs --mask", a.mode))),
        (false, true) => return Err(CliError::Usage("--mask only applies to the mask modes".into())),
        _ => {}
    }
    let cams = CameraFile::load(&a.cam)?;
    let scene = load(&a.scene)?;
    let mask = a.mask.as_deref().map(|m| resolve_mask(&scene, m)).transpose()?;
    let basis = basis_for(&scene, mode)?;
    let source = FieldSource::new(&scene.field, &scene.decoder);
    let opts = RenderOptions::default();
    cams.prepare_output(&a.out)?;
    for (k, cam) in cams.cameras().iter().enumerate() {
        let rgb = render_frame(&source, cam, mode, mask.as_ref(), basis.as_ref(), &opts)?;
        let path = cams.output_path(&a.out, k);
        if mode == FrameMode::Mask {
            // soft alpha as a single gray channel
            let gray = rgb.chunks_exact(3).map(|p| p[0]).collect();
            write_gray(&path, cam.width, cam.height, gray)?;
        } else {
            write_rgb(&path, cam.width, cam.height, rgb)?;
        }
    }
    Ok(())
}

pub fn serve(a: &ServeArgs) -> Result<(), CliError> {
    let root = a.scene_root.clone().or_else(|| std::env::var_os(isrf_server::SCENE_ROOT_ENV).map(PathBuf::from));
    let state = isrf_server::AppState::new(root, RenderOptions::default())?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(isrf_server::serve(a.listen, state))?;
    Ok(())
}
