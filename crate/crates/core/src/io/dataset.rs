use std::fs;
use std::path::Path;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use super::png;
use super::tensor::{read_bytes, read_f32, write_f32};
use crate::error::{Error, Result};
use crate::grid::Vec3;
use crate::render::Camera;
use crate::semantic::{pca_fit, FeatureSet, PcaBasis};

pub const DATASET_VERSION: u32 = 1;
pub const DATASET_MANIFEST: &str = "transforms.json";
/// Feature dimension kept after PCA at ingestion.
pub const DEFAULT_FEATURE_DIM: usize = 64;
/// Teacher features come one vector per square patch of this many pixels.
pub const PATCH_SIZE: usize = 8;
/// Upper bound on vectors used to fit the ingestion PCA.
const PCA_SAMPLE_CAP: usize = 20_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Test,
}

/// Orientation of `transform_matrix` columns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseConvention {
    /// +x right, +y down, +z forward.
    #[default]
    Opencv,
    /// +x right, +y up, -z forward.
    Opengl,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub name: String,
    pub camera: Camera,
    pub split: Split,
    /// Row-major 8-bit RGB.
    pub rgb: Vec<u8>,
    /// Row-major per-pixel features, `feature_dim` values each.
    pub features: Option<Vec<f32>>,
}

impl Frame {
    pub fn pixel_rgb(&self, index: usize) -> [f64; 3] {
        let p = &self.rgb[3 * index..3 * index + 3];
        [p[0], p[1], p[2]].map(|c| c as f64 / 255.0)
    }
}

/// Posed training images with optional semantic feature maps.
#[derive(Clone, Debug, PartialEq)]
pub struct PosedDataset {
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
    pub frames: Vec<Frame>,
    /// Channels per feature pixel (0 for an RGB-only dataset).
    pub feature_dim: usize,
    /// Basis used to reduce raw teacher features, when reduction happened.
    pub pca: Option<PcaBasis>,
    pub warnings: Vec<String>,
}

impl PosedDataset {
    pub fn bounds(&self) -> (Vec3, Vec3) {
        (self.bbox_min.into(), self.bbox_max.into())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Frame> + '_ {
        self.frames.iter().filter(move |f| f.split == split)
    }

    pub fn has_features(&self) -> bool {
        self.feature_dim > 0 && self.frames.iter().any(|f| f.features.is_some())
    }

    pub fn validate(&self) -> Result<()> {
        if (0..3).any(|a| !(self.bbox_max[a] > self.bbox_min[a])) {
            return Err(Error::InvalidInput("dataset bbox must have positive extent".into()));
        }
        for f in &self.frames {
            f.camera.validate().map_err(|e| frame_error(&f.name, e))?;
            let n = f.camera.pixel_count();
            if f.rgb.len() != 3 * n {
                return Err(Error::ShapeMismatch(format!(
                    "frame {}: {} RGB bytes for a {}x{} camera",
                    f.name,
                    f.rgb.len(),
                    f.camera.width,
                    f.camera.height
                )));
            }
            if let Some(feat) = &f.features {
                if feat.len() != n * self.feature_dim {
                    return Err(Error::ShapeMismatch(format!(
                        "frame {}: feature map has {} values, expected {}",
                        f.name,
                        feat.len(),
                        n * self.feature_dim
                    )));
                }
            }
        }
        Ok(())
    }
}

fn frame_error(name: &str, e: Error) -> Error {
    match e {
        Error::InvalidInput(m) => Error::InvalidInput(format!("frame {name}: {m}")),
        Error::ShapeMismatch(m) => Error::ShapeMismatch(format!("frame {name}: {m}")),
        other => other,
    }
}

#[derive(Serialize, Deserialize)]
struct FrameEntry {
    file_path: String,
    #[serde(default)]
    split: Split,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    transform_matrix: [[f64; 4]; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features_path: Option<String>,
    /// `[rows, cols, channels]` of the feature file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features_shape: Option<[usize; 3]>,
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    version: u32,
    bbox_min: [f64; 3],
    bbox_max: [f64; 3],
    #[serde(default)]
    convention: PoseConvention,
    frames: Vec<FrameEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IngestOptions {
    /// Raw features wider than this are reduced with PCA.
    pub feature_dim: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self { feature_dim: DEFAULT_FEATURE_DIM }
    }
}

/// Raw feature map before expansion: `rows x cols` cells of `dim` values.
struct RawFeatures {
    rows: usize,
    cols: usize,
    dim: usize,
    values: Vec<f32>,
}

fn pose_matrix(m: &[[f64; 4]; 4], convention: PoseConvention) -> Matrix4<f64> {
    let mut out = Matrix4::from_fn(|r, c| m[r][c]);
    if convention == PoseConvention::Opengl {
        for r in 0..3 {
            out[(r, 1)] = -out[(r, 1)];
            out[(r, 2)] = -out[(r, 2)];
        }
    }
    out
}

/// Reads a dataset directory: manifest, PNG frames and optional feature maps.
pub fn ingest_dataset(dir: &Path, opts: &IngestOptions) -> Result<PosedDataset> {
    let text = String::from_utf8(read_bytes(&dir.join(DATASET_MANIFEST))?)
        .map_err(|e| Error::format("dataset manifest", e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::format("dataset manifest", e))?;
    if manifest.version != DATASET_VERSION {
        return Err(Error::VersionMismatch { found: manifest.version, expected: DATASET_VERSION });
    }
    if manifest.frames.is_empty() {
        return Err(Error::InsufficientData("dataset has no frames".into()));
    }
    let mut warnings = Vec::new();
    let mut frames = Vec::with_capacity(manifest.frames.len());
    let mut raws: Vec<Option<RawFeatures>> = Vec::with_capacity(manifest.frames.len());
    let mut raw_dim: Option<usize> = None;
    for entry in &manifest.frames {
        let name = Path::new(&entry.file_path)
            .file_stem()
            .map_or_else(|| entry.file_path.clone(), |s| s.to_string_lossy().into_owned());
        let camera = Camera::new(
            entry.fx,
            entry.fy,
            entry.cx,
            entry.cy,
            entry.width,
            entry.height,
            pose_matrix(&entry.transform_matrix, manifest.convention),
        )
        .map_err(|e| frame_error(&name, e))?;
        let (w, h, rgb) = png::read_rgb(&dir.join(&entry.file_path))?;
        if (w, h) != (entry.width, entry.height) {
            return Err(Error::ShapeMismatch(format!(
                "frame {name}: image is {w}x{h} but camera declares {}x{}",
                entry.width, entry.height
            )));
        }
        let raw = match &entry.features_path {
            None => None,
            Some(rel) => {
                let shape = entry.features_shape.ok_or_else(|| {
                    Error::format("dataset manifest", format!("frame {name}: features_path without features_shape"))
                })?;
                let [rows, cols, dim] = shape;
                match read_f32(&dir.join(rel), rows * cols * dim) {
                    Ok(values) => {
                        if *raw_dim.get_or_insert(dim) != dim {
                            return Err(Error::ShapeMismatch(format!(
                                "frame {name}: {dim} feature channels, other frames have {}",
                                raw_dim.unwrap_or(0)
                            )));
                        }
                        let (h, w) = (h as usize, w as usize);
                        let pixel = rows == h && cols == w;
                        let patch = rows == h.div_ceil(PATCH_SIZE) && cols == w.div_ceil(PATCH_SIZE);
                        if !pixel && !patch {
                            return Err(Error::ShapeMismatch(format!(
                                "frame {name}: feature map {rows}x{cols} fits neither the {w}x{h} image nor its {PATCH_SIZE}x{PATCH_SIZE} patch grid"
                            )));
                        }
                        Some(RawFeatures { rows, cols, dim, values })
                    }
                    Err(Error::MissingFile(p)) => {
                        let msg = format!("frame {name}: feature file {} missing, using RGB only", p.display());
                        log::warn!("{msg}");
                        warnings.push(msg);
                        None
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        raws.push(raw);
        frames.push(Frame { name, camera, split: entry.split, rgb, features: None });
    }

    let raw_dim = raw_dim.unwrap_or(0);
    let pca = if raw_dim > opts.feature_dim { Some(fit_ingest_pca(&raws, raw_dim, opts.feature_dim)?) } else { None };
    let feature_dim = pca.as_ref().map_or(raw_dim, PcaBasis::output_dim);
    for (frame, raw) in frames.iter_mut().zip(&raws) {
        if let Some(raw) = raw {
            frame.features = Some(expand_features(raw, &frame.camera, pca.as_ref())?);
        }
    }
    let ds =
        PosedDataset { bbox_min: manifest.bbox_min, bbox_max: manifest.bbox_max, frames, feature_dim, pca, warnings };
    ds.validate()?;
    Ok(ds)
}

fn fit_ingest_pca(raws: &[Option<RawFeatures>], dim: usize, m: usize) -> Result<PcaBasis> {
    let total: usize = raws.iter().flatten().map(|r| r.rows * r.cols).sum();
    let stride = total.div_ceil(PCA_SAMPLE_CAP).max(1);
    let mut set = FeatureSet::new(dim, crate::semantic::FeatureSource::Teacher);
    let mut k = 0usize;
    let mut buf = vec![0.0; dim];
    for raw in raws.iter().flatten() {
        for cell in raw.values.chunks_exact(dim) {
            if k.is_multiple_of(stride) {
                for (b, v) in buf.iter_mut().zip(cell) {
                    *b = *v as f64;
                }
                set.push(&buf)?;
            }
            k += 1;
        }
    }
    pca_fit(&set, m)
}

/// Maps each pixel to its cell (identity for pixel-aligned maps, the
/// enclosing 8x8 patch otherwise), reducing with `pca` when given.
fn expand_features(raw: &RawFeatures, camera: &Camera, pca: Option<&PcaBasis>) -> Result<Vec<f32>> {
    let (w, h) = (camera.width as usize, camera.height as usize);
    let cell_size = if raw.rows == h && raw.cols == w { 1 } else { PATCH_SIZE };
    let cells: Vec<Vec<f32>> = raw
        .values
        .chunks_exact(raw.dim)
        .map(|c| match pca {
            None => Ok(c.to_vec()),
            Some(b) => {
                let v: Vec<f64> = c.iter().map(|x| *x as f64).collect();
                Ok(b.project(&v)?.into_iter().map(|x| x as f32).collect())
            }
        })
        .collect::<Result<_>>()?;
    let m = cells.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(w * h * m);
    for y in 0..h {
        for x in 0..w {
            out.extend_from_slice(&cells[(y / cell_size) * raw.cols + x / cell_size]);
        }
    }
    Ok(out)
}

/// Writes PNG frames, pixel-aligned feature maps and an OpenCV-convention manifest.
pub fn save_dataset(dir: &Path, ds: &PosedDataset) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir.join("frames"))?;
    if ds.has_features() {
        fs::create_dir_all(dir.join("features"))?;
    }
    let mut entries = Vec::with_capacity(ds.frames.len());
    for (i, f) in ds.frames.iter().enumerate() {
        let file_path = format!("frames/{i:03}.png");
        png::write_rgb(&dir.join(&file_path), f.camera.width, f.camera.height, f.rgb.clone())?;
        let (features_path, features_shape) = match &f.features {
            Some(feat) => {
                let p = format!("features/{i:03}.f32");
                write_f32(&dir.join(&p), feat)?;
                (Some(p), Some([f.camera.height as usize, f.camera.width as usize, ds.feature_dim]))
            }
            None => (None, None),
        };
        entries.push(FrameEntry {
            file_path,
            split: f.split,
            fx: f.camera.fx,
            fy: f.camera.fy,
            cx: f.camera.cx,
            cy: f.camera.cy,
            width: f.camera.width,
            height: f.camera.height,
            transform_matrix: f.camera.camera_to_world,
            features_path,
            features_shape,
        });
    }
    let manifest = DatasetManifest {
        version: DATASET_VERSION,
        bbox_min: ds.bbox_min,
        bbox_max: ds.bbox_max,
        convention: PoseConvention::Opencv,
        frames: entries,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format("dataset manifest", e))?;
    fs::write(dir.join(DATASET_MANIFEST), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use serde_json::json;

    fn write_toy(dir: &Path, feature_shape: [usize; 3], seed: u64) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        fs::create_dir_all(dir.join("frames")).unwrap();
        fs::create_dir_all(dir.join("features")).unwrap();
        let mut frames = Vec::new();
        let mut feats = Vec::new();
        for i in 0..2 {
            let rgb: Vec<u8> = (0..16 * 16 * 3).map(|_| rng.random()).collect();
            png::write_rgb(&dir.join(format!("frames/{i}.png")), 16, 16, rgb).unwrap();
            let n = feature_shape.iter().product();
            let f: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            write_f32(&dir.join(format!("features/{i}.f32")), &f).unwrap();
            feats.push(f);
            frames.push(json!({
                "file_path": format!("frames/{i}.png"),
                "split": if i == 0 { "train" } else { "test" },
                "fx": 20.0, "fy": 20.0, "cx": 8.0, "cy": 8.0, "width": 16, "height": 16,
                "transform_matrix": [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, -3.0], [0.0, 0.0, 0.0, 1.0]],
                "features_path": format!("features/{i}.f32"),
                "features_shape": feature_shape,
            }));
        }
        let manifest =
            json!({"version": 1, "bbox_min": [-1.0, -1.0, -1.0], "bbox_max": [1.0, 1.0, 1.0], "frames": frames});
        fs::write(dir.join(DATASET_MANIFEST), manifest.to_string()).unwrap();
        feats
    }

    #[test]
    fn patch_features_expand_to_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let raw = write_toy(dir.path(), [2, 2, 8], 1);
        let ds = ingest_dataset(dir.path(), &IngestOptions::default()).unwrap();
        assert_eq!(ds.feature_dim, 8);
        let f = ds.frames[0].features.as_ref().unwrap();
        // pixel (u=3, v=5) lies in patch (0, 0)
        let px = 5 * 16 + 3;
        assert_eq!(&f[px * 8..px * 8 + 8], &raw[0][0..8]);
        // pixel (u=12, v=9) lies in patch row 1, column 1
        let px = 9 * 16 + 12;
        assert_eq!(&f[px * 8..px * 8 + 8], &raw[0][3 * 8..4 * 8]);
        assert_eq!(ds.split(Split::Test).count(), 1);
    }

    #[test]
    fn wide_features_are_reduced_with_pca() {
        let dir = tempfile::tempdir().unwrap();
        write_toy(dir.path(), [16, 16, 96], 2);
        let ds = ingest_dataset(dir.path(), &IngestOptions { feature_dim: 64 }).unwrap();
        assert_eq!(ds.feature_dim, 64);
        assert_eq!(ds.pca.as_ref().unwrap().input_dim(), 96);
        assert_eq!(ds.frames[1].features.as_ref().unwrap().len(), 16 * 16 * 64);
    }

    #[test]
    fn size_mismatch_names_the_frame() {
        let dir = tempfile::tempdir().unwrap();
        write_toy(dir.path(), [2, 2, 4], 3);
        png::write_rgb(&dir.path().join("frames/1.png"), 8, 16, vec![0; 8 * 16 * 3]).unwrap();
        let err = ingest_dataset(dir.path(), &IngestOptions::default()).unwrap_err();
        assert_eq!(err.kind(), "shape_mismatch");
        assert!(err.to_string().contains("frame 1"), "{err}");
    }

    #[test]
    fn bad_feature_grid_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_toy(dir.path(), [3, 2, 4], 3);
        assert_eq!(ingest_dataset(dir.path(), &IngestOptions::default()).unwrap_err().kind(), "shape_mismatch");
    }

    #[test]
    fn missing_feature_files_fall_back_to_rgb() {
        let dir = tempfile::tempdir().unwrap();
        write_toy(dir.path(), [2, 2, 4], 4);
        fs::remove_file(dir.path().join("features/0.f32")).unwrap();
        fs::remove_file(dir.path().join("features/1.f32")).unwrap();
        let ds = ingest_dataset(dir.path(), &IngestOptions::default()).unwrap();
        assert!(!ds.has_features());
        assert_eq!(ds.warnings.len(), 2);
    }

    #[test]
    fn opengl_poses_are_converted() {
        let m = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 3.0], [0.0, 0.0, 0.0, 1.0]];
        let p = pose_matrix(&m, PoseConvention::Opengl);
        let cam = Camera::new(10.0, 10.0, 5.0, 5.0, 10, 10, p).unwrap();
        // an OpenGL camera at z=3 with identity rotation looks down -z
        assert!((cam.direction(5.0, 5.0) - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn save_then_ingest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        write_toy(dir.path(), [16, 16, 3], 5);
        let ds = ingest_dataset(dir.path(), &IngestOptions::default()).unwrap();
        let out = tempfile::tempdir().unwrap();
        save_dataset(out.path(), &ds).unwrap();
        let back = ingest_dataset(out.path(), &IngestOptions::default()).unwrap();
        assert_eq!(
            back.frames,
            ds.frames
                .iter()
                .cloned()
                .map(|mut f| {
                    f.name = back.frames.iter().find(|b| b.rgb == f.rgb).unwrap().name.clone();
                    f
                })
                .collect::<Vec<_>>()
        );
    }
}
