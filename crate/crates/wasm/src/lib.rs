//! Browser demo over a small synthetic scene: orbit the camera, paint
//! strokes to segment, undo, and toggle removal of the selection.
//!
//! [`Viewer`] holds the logic and runs natively; [`Demo`] is the thin
//! JavaScript binding around it.

use isrf_core::edit::remove;
use isrf_core::grid::Vec3;
use isrf_core::grow::{Polarity, SegmentParams, SegmentationSession, Stroke};
use isrf_core::io::{synth_generate, Scene, SynthSpec};
use isrf_core::render::{render_frame, Camera, FieldSource, FrameMode, RenderOptions};
use wasm_bindgen::prelude::*;

const EYE_DISTANCE: f64 = 3.2;
const MAX_PITCH: f64 = 1.4;
const BRUSH_RADIUS: u32 = 2;

pub struct Viewer {
    scene: Scene,
    session: SegmentationSession,
    params: SegmentParams,
    opts: RenderOptions,
    yaw: f64,
    pitch: f64,
    size: u32,
    removed: bool,
}

impl Viewer {
    /// Builds the two-object scene at `resolution`³ and a square view of
    /// `size` pixels.
    pub fn new(resolution: usize, size: u32) -> Result<Self, String> {
        let mut spec = SynthSpec::two_objects(0);
        spec.resolution = resolution;
        // the demo needs the ground-truth field only; keep the dataset tiny
        spec.train_views = 2;
        spec.test_views = 0;
        spec.image_size = 4;
        let synth = synth_generate(&spec).map_err(|e| e.to_string())?;
        let mut scene = synth.scene;
        scene.masks.clear();
        let session = SegmentationSession::new(&scene.field);
        Ok(Self {
            scene,
            session,
            params: SegmentParams::default(),
            opts: RenderOptions::default(),
            yaw: 0.5,
            pitch: 0.35,
            size,
            removed: false,
        })
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn camera(&self) -> Camera {
        let (sy, cy) = self.yaw.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let eye = Vec3::new(sy * cp, sp, cy * cp) * EYE_DISTANCE;
        let focal = 1.4 * self.size as f64;
        Camera::look_at(eye, Vec3::zeros(), Vec3::y(), focal, self.size, self.size).expect("eye is off the up axis")
    }

    pub fn orbit(&mut self, d_yaw: f64, d_pitch: f64) {
        self.yaw = (self.yaw + d_yaw).rem_euclid(std::f64::consts::TAU);
        self.pitch = (self.pitch + d_pitch).clamp(-MAX_PITCH, MAX_PITCH);
    }

    /// Current view as RGBA bytes: the selection tinted, or cut out of the
    /// scene while removal is on.
    pub fn frame(&self) -> Result<Vec<u8>, String> {
        let src = FieldSource::new(&self.scene.field, &self.scene.decoder);
        let mask = self.session.current();
        let cam = self.camera();
        let rgb = if self.removed {
            render_frame(&remove(&src, mask), &cam, FrameMode::Rgb, None, None, &self.opts)
        } else if mask.is_empty() {
            render_frame(&src, &cam, FrameMode::Rgb, None, None, &self.opts)
        } else {
            render_frame(&src, &cam, FrameMode::MaskOverlay, Some(mask), None, &self.opts)
        }
        .map_err(|e| e.to_string())?;
        Ok(rgb.chunks_exact(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect())
    }

    /// Applies a stroke given as flat `x0, y0, x1, y1, ...` pixel
    /// coordinates; returns the selected voxel count.
    pub fn stroke(&mut self, points: &[i32], negative: bool) -> Result<usize, String> {
        if points.len() < 2 || !points.len().is_multiple_of(2) {
            return Err("stroke needs x, y pairs".into());
        }
        let stroke = Stroke {
            camera: self.camera(),
            polyline: points.chunks_exact(2).map(|p| [p[0] as i64, p[1] as i64]).collect(),
            radius: BRUSH_RADIUS,
            polarity: if negative { Polarity::Negative } else { Polarity::Positive },
        };
        let (field, decoder) = (&self.scene.field, &self.scene.decoder);
        let stats =
            self.session.apply_stroke(field, decoder, &stroke, &self.params, &self.opts).map_err(|e| e.to_string())?;
        Ok(stats.mask_voxels)
    }

    /// Drops the last stroke; returns the selected voxel count.
    pub fn undo(&mut self) -> Result<usize, String> {
        self.session.undo().map(|s| s.mask_voxels).map_err(|e| e.to_string())
    }

    pub fn set_removed(&mut self, removed: bool) {
        self.removed = removed;
    }

    pub fn selected_voxels(&self) -> usize {
        self.session.current().count_ones()
    }
}

#[wasm_bindgen]
pub struct Demo(Viewer);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(resolution: usize, size: u32) -> Result<Demo, JsError> {
        Viewer::new(resolution, size).map(Demo).map_err(|e| JsError::new(&e))
    }

    pub fn size(&self) -> u32 {
        self.0.size()
    }

    pub fn orbit(&mut self, d_yaw: f64, d_pitch: f64) {
        self.0.orbit(d_yaw, d_pitch)
    }

    pub fn frame(&self) -> Result<Vec<u8>, JsError> {
        self.0.frame().map_err(|e| JsError::new(&e))
    }

    pub fn stroke(&mut self, points: Vec<i32>, negative: bool) -> Result<usize, JsError> {
        self.0.stroke(&points, negative).map_err(|e| JsError::new(&e))
    }

    pub fn undo(&mut self) -> Result<usize, JsError> {
        self.0.undo().map_err(|e| JsError::new(&e))
    }

    pub fn set_removed(&mut self, removed: bool) {
        self.0.set_removed(removed)
    }

    pub fn selected_voxels(&self) -> usize {
        self.0.selected_voxels()
    }
}
