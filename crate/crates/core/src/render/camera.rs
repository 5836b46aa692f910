use nalgebra::{Matrix3, Matrix4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Vec3;

/// Pinhole camera: +z forward, +x right, +y down, pixel centers at half-integers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Row-major rigid transform from camera to world coordinates.
    pub camera_to_world: [[f64; 4]; 4],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        camera_to_world: Matrix4<f64>,
    ) -> Result<Self> {
        let mut rows = [[0.0; 4]; 4];
        for (r, row) in rows.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = camera_to_world[(r, c)];
            }
        }
        let cam = Self { fx, fy, cx, cy, width, height, camera_to_world: rows };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, image up aligned with `world_up`.
    pub fn look_at(eye: Vec3, target: Vec3, world_up: Vec3, focal: f64, width: u32, height: u32) -> Result<Self> {
        let forward =
            (target - eye).try_normalize(1e-12).ok_or_else(|| Error::InvalidInput("eye and target coincide".into()))?;
        let right = forward
            .cross(&world_up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidInput("view direction parallel to up vector".into()))?;
        let down = forward.cross(&right);
        let mut m = Matrix4::identity();
        for r in 0..3 {
            m[(r, 0)] = right[r];
            m[(r, 1)] = down[r];
            m[(r, 2)] = forward[r];
            m[(r, 3)] = eye[r];
        }
        Self::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0, width, height, m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(Error::InvalidInput("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("image size must be positive".into()));
        }
        if self.camera_to_world.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite camera pose".into()));
        }
        let r = self.rotation();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > 1e-5 {
            return Err(Error::InvalidInput(format!("camera rotation is not orthonormal (deviation {err:.2e})")));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.camera_to_world[r][c])
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(self.camera_to_world[0][3], self.camera_to_world[1][3], self.camera_to_world[2][3])
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Same pose with the image resampled to `width x height`.
    pub fn resized(&self, width: u32, height: u32) -> Camera {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Camera {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
            camera_to_world: self.camera_to_world,
        }
    }

    /// World-space unit direction through image point `(u, v)`.
    pub fn direction(&self, u: f64, v: f64) -> Vec3 {
        let d = Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        (self.rotation() * d).normalize()
    }

    /// Ray through image point `(u, v)` clipped to the box; `None` when it misses.
    pub fn generate_ray(&self, u: f64, v: f64, bbox: (Vec3, Vec3)) -> Option<Ray> {
        let origin = self.position();
        let direction = self.direction(u, v);
        let (t_near, t_far) = slab_intersect(&origin, &direction, &bbox.0, &bbox.1)?;
        Some(Ray { origin, direction, t_near, t_far })
    }

    /// Image coordinates of a world point, `None` when it is behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        let local = self.rotation().transpose() * (p - self.position());
        (local.z > 1e-12).then(|| (self.fx * local.x / local.z + self.cx, self.fy * local.y / local.z + self.cy))
    }

    /// Ray through the center of integer pixel `(x, y)`.
    pub fn pixel_ray(&self, x: u32, y: u32, bbox: (Vec3, Vec3)) -> Option<Ray> {
        self.generate_ray(x as f64 + 0.5, y as f64 + 0.5, bbox)
    }
}

/// Parametric interval of a ray inside an axis-aligned box, clamped to `t >= 0`.
pub fn slab_intersect(origin: &Vec3, dir: &Vec3, min: &Vec3, max: &Vec3) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a].abs() < 1e-15 {
            if origin[a] < min[a] || origin[a] > max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut ta, mut tb) = ((min[a] - origin[a]) * inv, (max[a] - origin[a]) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t1 > t0).then_some((t0, t1))
}
