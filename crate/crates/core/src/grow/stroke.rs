use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::Camera;

pub const DEFAULT_BRUSH_RADIUS: u32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

/// A brush stroke drawn on a rendered view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub camera: Camera,
    /// Integer image coordinates `[u, v]`.
    pub polyline: Vec<[i64; 2]>,
    #[serde(default = "default_radius")]
    pub radius: u32,
    pub polarity: Polarity,
}

fn default_radius() -> u32 {
    DEFAULT_BRUSH_RADIUS
}

impl Stroke {
    pub fn validate(&self) -> Result<()> {
        if self.polyline.is_empty() {
            return Err(Error::InvalidInput("stroke needs at least one point".into()));
        }
        if self.radius < 1 {
            return Err(Error::InvalidInput("brush radius must be at least 1".into()));
        }
        self.camera.validate()
    }

    /// Pixels covered by the brush, deduplicated, clipped to the image and
    /// ordered row by row.
    pub fn rasterize(&self) -> Result<Vec<(u32, u32)>> {
        self.validate()?;
        let (w, h) = (self.camera.width as i64, self.camera.height as i64);
        let r = self.radius as i64;
        let mut covered = BTreeSet::new();
        let mut stamp = |cx: i64, cy: i64| {
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx * dx + dy * dy > r * r {
                        continue;
                    }
                    let (u, v) = (cx + dx, cy + dy);
                    if (0..w).contains(&u) && (0..h).contains(&v) {
                        covered.insert((v as u32, u as u32));
                    }
                }
            }
        };
        let pts = &self.polyline;
        stamp(pts[0][0], pts[0][1]);
        for seg in pts.windows(2) {
            for (x, y) in line_walk(seg[0], seg[1]) {
                stamp(x, y);
            }
        }
        Ok(covered.into_iter().map(|(v, u)| (u, v)).collect())
    }
}

/// 8-connected Bresenham walk from `a` to `b`, both ends included.
pub fn line_walk(a: [i64; 2], b: [i64; 2]) -> Vec<(i64, i64)> {
    let (mut x, mut y) = (a[0], a[1]);
    let (dx, dy) = ((b[0] - x).abs(), -(b[1] - y).abs());
    let (sx, sy) = (if x < b[0] { 1 } else { -1 }, if y < b[1] { 1 } else { -1 });
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy) as usize + 1);
    loop {
        out.push((x, y));
        if x == b[0] && y == b[1] {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}
