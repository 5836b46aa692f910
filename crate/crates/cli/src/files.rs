use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use isrf_core::grid::Bitmap3D;
use isrf_core::io::{read_bytes, Scene};
use isrf_core::render::Camera;
use isrf_core::{Error, Result};

/// Removes an output path on drop unless committed. Paths that existed
/// before the command started are left alone.
pub struct OutputGuard {
    path: PathBuf,
    armed: bool,
}

impl OutputGuard {
    pub fn new(path: &Path) -> Self {
        Self { path: path.to_path_buf(), armed: !path.exists() }
    }

    pub fn commit(&mut self) {
        self.armed = false;
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if !self.armed {
            return;
        }
        let removed =
            if self.path.is_dir() { std::fs::remove_dir_all(&self.path) } else { std::fs::remove_file(&self.path) };
        if removed.is_ok() {
            log::info!("removed partial output {}", self.path.display());
        }
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::Format { what: format!("{what} {}", path.display()), detail: e.to_string() })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("plain data serializes");
    std::fs::write(path, text)?;
    Ok(())
}

/// A camera file holds one camera or a list.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
pub enum CameraFile {
    One(Camera),
    Many(Vec<Camera>),
}

impl CameraFile {
    pub fn load(path: &Path) -> Result<Self> {
        let file: CameraFile = read_json(path, "camera file")?;
        let cams = file.cameras();
        if cams.is_empty() {
            return Err(Error::InvalidInput(format!("{} lists no cameras", path.display())));
        }
        cams.iter().try_for_each(|c| c.validate())?;
        Ok(file)
    }

    pub fn cameras(&self) -> &[Camera] {
        match self {
            CameraFile::One(c) => std::slice::from_ref(c),
            CameraFile::Many(v) => v,
        }
    }

    /// Output file of camera `k`: `out` itself for a single camera,
    /// `out/NNN.png` for a list.
    pub fn output_path(&self, out: &Path, k: usize) -> PathBuf {
        match self {
            CameraFile::One(_) => out.to_path_buf(),
            CameraFile::Many(_) => out.join(format!("{k:03}.png")),
        }
    }

    pub fn prepare_output(&self, out: &Path) -> Result<()> {
        match self {
            CameraFile::One(_) => {
                if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                    std::fs::create_dir_all(parent)?;
                }
            }
            CameraFile::Many(_) => std::fs::create_dir_all(out)?,
        }
        Ok(())
    }
}

/// A mask stored in the scene, or else a `.bits` file on disk.
pub fn resolve_mask(scene: &Scene, name: &str) -> Result<Bitmap3D> {
    if let Some(m) = scene.masks.get(name) {
        return Ok(m.clone());
    }
    let bytes = read_bytes(Path::new(name))?;
    Bitmap3D::from_bytes(scene.field.geometry().clone(), &bytes)
}

/// Unpacks a `.bits` payload, LSB first.
pub fn unpack_bits(bytes: &[u8]) -> Vec<bool> {
    bytes.iter().flat_map(|b| (0..8).map(move |k| b >> k & 1 == 1)).collect()
}
