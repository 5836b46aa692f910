use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::{read_bytes, read_f32, write_f32};
use crate::error::{Error, Result};
use crate::field::VoxelField;
use crate::grid::{Bitmap3D, DenseGrid, GridGeometry, Lattice, VmGrid};
use crate::render::{Decoder, MlpDecoder};
use crate::semantic::PcaBasis;

pub const SCENE_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "scene.manifest";

/// A trained field with everything needed to render and segment it.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub field: VoxelField,
    pub decoder: Decoder,
    pub pca: Option<PcaBasis>,
    pub masks: BTreeMap<String, Bitmap3D>,
}

impl Scene {
    pub fn new(field: VoxelField, decoder: Decoder) -> Result<Self> {
        decoder.validate(field.appearance_channels())?;
        Ok(Self { field, decoder, pca: None, masks: BTreeMap::new() })
    }
}

#[derive(Debug)]
pub struct LoadedScene {
    pub scene: Scene,
    /// Non-fatal findings such as unknown manifest keys.
    pub warnings: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "storage", rename_all = "snake_case")]
enum LatticeEntry {
    Dense { channels: usize, file: String },
    Vm { ranks: [usize; 3], channels: usize, file: String },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
enum DecoderEntry {
    Direct,
    Mlp { latent_dim: usize, hidden: usize, frequencies: usize, file: String },
}

#[derive(Serialize, Deserialize)]
struct MaskEntry {
    name: String,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    geometry: GridGeometry,
    density: LatticeEntry,
    appearance: LatticeEntry,
    features: Option<LatticeEntry>,
    decoder: DecoderEntry,
    pca: Option<PcaBasis>,
    #[serde(default)]
    masks: Vec<MaskEntry>,
}

const KNOWN_KEYS: [&str; 8] = ["version", "geometry", "density", "appearance", "features", "decoder", "pca", "masks"];

fn check_name(name: &str) -> Result<()> {
    let ok = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("mask name {name:?} must be alphanumeric, '-' or '_'")))
    }
}

fn save_lattice(dir: &Path, stem: &str, lattice: &Lattice) -> Result<LatticeEntry> {
    let file = format!("{stem}.f32");
    Ok(match lattice {
        Lattice::Dense(d) => {
            write_f32(&dir.join(&file), d.values())?;
            LatticeEntry::Dense { channels: d.channels(), file }
        }
        Lattice::Vm(v) => {
            write_f32(&dir.join(&file), v.params())?;
            LatticeEntry::Vm { ranks: v.ranks(), channels: v.channels(), file }
        }
    })
}

fn load_lattice(dir: &Path, geometry: &GridGeometry, entry: &LatticeEntry) -> Result<Lattice> {
    Ok(match entry {
        LatticeEntry::Dense { channels, file } => {
            let values = read_f32(&dir.join(file), geometry.node_count() * channels)?;
            Lattice::Dense(DenseGrid::from_values(geometry.clone(), *channels, values)?)
        }
        LatticeEntry::Vm { ranks, channels, file } => {
            let len = VmGrid::zeros(geometry.clone(), *ranks, *channels)?.params().len();
            let values = read_f32(&dir.join(file), len)?;
            Lattice::Vm(VmGrid::from_params(geometry.clone(), *ranks, *channels, values)?)
        }
    })
}

/// Writes the manifest, raw tensors and masks into `dir` (created if needed).
pub fn save_scene(dir: &Path, scene: &Scene) -> Result<()> {
    fs::create_dir_all(dir)?;
    let field = &scene.field;
    let density = save_lattice(dir, "density", field.density())?;
    let appearance = save_lattice(dir, "appearance", field.appearance())?;
    let features = field.features().map(|f| save_lattice(dir, "features", f)).transpose()?;
    let decoder = match &scene.decoder {
        Decoder::Direct => DecoderEntry::Direct,
        Decoder::Mlp(m) => {
            let file = "decoder.f32".to_string();
            write_f32(&dir.join(&file), &m.params)?;
            DecoderEntry::Mlp { latent_dim: m.latent_dim, hidden: m.hidden, frequencies: m.frequencies, file }
        }
    };
    let mut masks = Vec::new();
    if !scene.masks.is_empty() {
        fs::create_dir_all(dir.join("masks"))?;
    }
    for (name, bits) in &scene.masks {
        check_name(name)?;
        bits.geometry().ensure_same(field.geometry(), "mask vs scene")?;
        let file = format!("masks/{name}.bits");
        fs::write(dir.join(&file), bits.to_bytes())?;
        masks.push(MaskEntry { name: name.clone(), file });
    }
    let manifest = Manifest {
        version: SCENE_VERSION,
        geometry: field.geometry().clone(),
        density,
        appearance,
        features,
        decoder,
        pca: scene.pca.clone(),
        masks,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format("scene manifest", e))?;
    fs::write(dir.join(MANIFEST_NAME), text)?;
    Ok(())
}

/// Loads a scene directory; any inconsistency is an error and nothing partial is returned.
pub fn load_scene(dir: &Path) -> Result<LoadedScene> {
    let text =
        String::from_utf8(read_bytes(&dir.join(MANIFEST_NAME))?).map_err(|e| Error::format("scene manifest", e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::format("scene manifest", e))?;
    let mut warnings = Vec::new();
    if let Some(obj) = value.as_object() {
        let version = obj.get("version").and_then(serde_json::Value::as_u64);
        match version {
            Some(v) if v == SCENE_VERSION as u64 => {}
            Some(v) => return Err(Error::VersionMismatch { found: v as u32, expected: SCENE_VERSION }),
            None => return Err(Error::format("scene manifest", "missing version field")),
        }
        for key in obj.keys().filter(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            let msg = format!("ignoring unknown manifest key {key:?}");
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    let manifest: Manifest = serde_json::from_value(value).map_err(|e| Error::format("scene manifest", e))?;
    let g = &manifest.geometry;
    let geometry = GridGeometry::new(g.resolution(), g.bbox_min(), g.bbox_max())?;

    let density = load_lattice(dir, &geometry, &manifest.density)?;
    let appearance = load_lattice(dir, &geometry, &manifest.appearance)?;
    let features = manifest.features.as_ref().map(|e| load_lattice(dir, &geometry, e)).transpose()?;
    let field = VoxelField::new(density, appearance, features)?;
    let decoder = match &manifest.decoder {
        DecoderEntry::Direct => Decoder::Direct,
        DecoderEntry::Mlp { latent_dim, hidden, frequencies, file } => {
            let len = MlpDecoder::param_len(*latent_dim, *hidden, *frequencies);
            let params = read_f32(&dir.join(file), len)?;
            Decoder::Mlp(MlpDecoder { latent_dim: *latent_dim, hidden: *hidden, frequencies: *frequencies, params })
        }
    };
    let mut scene = Scene::new(field, decoder)?;
    if let Some(pca) = &manifest.pca {
        if pca.output_dim() != scene.field.feature_dim() {
            return Err(Error::ShapeMismatch(format!(
                "PCA basis outputs {} dims, feature lattice has {}",
                pca.output_dim(),
                scene.field.feature_dim()
            )));
        }
    }
    scene.pca = manifest.pca;
    for m in &manifest.masks {
        check_name(&m.name)?;
        let bytes = read_bytes(&dir.join(&m.file))?;
        scene.masks.insert(m.name.clone(), Bitmap3D::from_bytes(geometry.clone(), &bytes)?);
    }
    Ok(LoadedScene { scene, warnings })
}
