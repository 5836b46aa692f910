use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use super::{compose, extract, recolor, remove, translate, ColorTransform};
use crate::error::{Error, Result};
use crate::grid::{Bitmap3D, Vec3};
use crate::io::{load_scene, read_bytes, Scene};
use crate::render::{FieldSource, RadianceSource};

pub const EDIT_SCRIPT_VERSION: u32 = 1;

/// One entry of an edit script. `mask` names a mask stored in the scene, or
/// a `.bits` file relative to the script.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditOp {
    Remove {
        mask: String,
    },
    Extract {
        mask: String,
    },
    /// Reads `x + t` inside the shifted mask: the object moves by `-t`.
    Translate {
        mask: String,
        t: [f64; 3],
    },
    Recolor {
        mask: String,
        #[serde(flatten)]
        transform: ColorTransform,
    },
    /// Adds another scene archive placed by a row-major 4x4 rigid transform.
    Compose {
        scene: String,
        #[serde(default = "identity_rows")]
        transform: [[f64; 4]; 4],
    },
}

fn identity_rows() -> [[f64; 4]; 4] {
    [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
}

/// Ordered edits, applied first to last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditScript {
    pub version: u32,
    pub ops: Vec<EditOp>,
}

pub fn load_edit_script(path: &Path) -> Result<EditScript> {
    let text = String::from_utf8(read_bytes(path)?).map_err(|e| Error::format("edit script", e))?;
    let script: EditScript = serde_json::from_str(&text).map_err(|e| Error::format("edit script", e))?;
    if script.version != EDIT_SCRIPT_VERSION {
        return Err(Error::VersionMismatch { found: script.version, expected: EDIT_SCRIPT_VERSION });
    }
    Ok(script)
}

/// An edit with its masks and scenes loaded.
#[derive(Clone, Debug)]
pub enum Edit {
    Remove(Bitmap3D),
    Extract(Bitmap3D),
    Translate(Bitmap3D, Vec3),
    Recolor(Bitmap3D, ColorTransform),
    Compose(Box<Scene>, Matrix4<f64>),
}

impl EditScript {
    /// Loads every referenced mask and scene; masks must share the scene's geometry.
    pub fn resolve(&self, scene: &Scene, base_dir: &Path) -> Result<Vec<Edit>> {
        let none = BTreeMap::new();
        self.ops.iter().map(|op| op.resolve(scene, &none, base_dir)).collect()
    }
}

impl EditOp {
    /// Mask names are looked up in `extra` first, then in the scene, then as
    /// files under `base_dir`.
    pub fn resolve(&self, scene: &Scene, extra: &BTreeMap<String, Bitmap3D>, base_dir: &Path) -> Result<Edit> {
        let geometry = scene.field.geometry();
        let mask = |name: &str| -> Result<Bitmap3D> {
            let m = match extra.get(name).or_else(|| scene.masks.get(name)) {
                Some(m) => m.clone(),
                None => Bitmap3D::from_bytes(geometry.clone(), &read_bytes(&base_dir.join(name))?)?,
            };
            m.geometry().ensure_same(geometry, "mask vs scene")?;
            Ok(m)
        };
        Ok(match self {
            EditOp::Remove { mask: m } => Edit::Remove(mask(m)?),
            EditOp::Extract { mask: m } => Edit::Extract(mask(m)?),
            EditOp::Translate { mask: m, t } => Edit::Translate(mask(m)?, Vec3::from(*t)),
            EditOp::Recolor { mask: m, transform } => {
                transform.validate()?;
                Edit::Recolor(mask(m)?, transform.clone())
            }
            EditOp::Compose { scene, transform } => {
                let other = load_scene(&base_dir.join(scene))?.scene;
                Edit::Compose(Box::new(other), Matrix4::from_fn(|r, c| transform[r][c]))
            }
        })
    }

    /// Files the op reads besides the scene's own masks.
    pub fn referenced_paths(&self, scene: &Scene, base_dir: &Path) -> Vec<std::path::PathBuf> {
        match self {
            EditOp::Compose { scene: s, .. } => vec![base_dir.join(s)],
            EditOp::Remove { mask }
            | EditOp::Extract { mask }
            | EditOp::Translate { mask, .. }
            | EditOp::Recolor { mask, .. } => {
                if scene.masks.contains_key(mask) {
                    vec![]
                } else {
                    vec![base_dir.join(mask)]
                }
            }
        }
    }
}

impl Edit {
    pub fn mask(&self) -> Option<&Bitmap3D> {
        match self {
            Edit::Remove(m) | Edit::Extract(m) | Edit::Translate(m, _) | Edit::Recolor(m, _) => Some(m),
            Edit::Compose(..) => None,
        }
    }
}

/// Layers `edits` over `base` and hands the result to `f`.
pub fn apply_edits<R>(
    base: &dyn RadianceSource,
    edits: &[Edit],
    f: &mut dyn FnMut(&dyn RadianceSource) -> R,
) -> Result<R> {
    let Some((first, rest)) = edits.split_first() else {
        return Ok(f(base));
    };
    match first {
        Edit::Remove(m) => apply_edits(&remove(base, m), rest, f),
        Edit::Extract(m) => apply_edits(&extract(base, m), rest, f),
        Edit::Translate(m, t) => apply_edits(&translate(base, m, *t)?, rest, f),
        Edit::Recolor(m, c) => apply_edits(&recolor(base, m, c.clone())?, rest, f),
        Edit::Compose(scene, rigid) => {
            let other = FieldSource::new(&scene.field, &scene.decoder);
            apply_edits(&compose(base, &other, rigid)?, rest, f)
        }
    }
}
