//! Static piecewise-planar scenes and their raycast renderer.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::camera::CameraIntrinsics;
use super::geometry::Pose;
use crate::error::{Error, Result};
use crate::field::Frame;

/// Which world axis a billboard's normal points along.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Facing {
    /// Plane of constant world x (faces a camera driving along +x).
    #[default]
    Forward,
    /// Plane of constant world y (a wall alongside the road).
    Lateral,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Billboard {
    pub center: [f64; 3],
    pub width: f64,
    pub height: f64,
    pub texture_seed: u64,
    #[serde(default)]
    pub facing: Facing,
    #[serde(default = "Billboard::default_color")]
    pub color: [f64; 3],
}

impl Billboard {
    fn default_color() -> [f64; 3] {
        [0.8, 0.6, 0.4]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureParams {
    pub octaves: u32,
    /// Cell size of the coarsest octave, in meters.
    pub scale: f64,
    pub persistence: f64,
    /// Gain applied to the noise around its mean before shading.
    #[serde(default = "TextureParams::default_contrast")]
    pub contrast: f64,
}

impl TextureParams {
    fn default_contrast() -> f64 {
        1.0
    }
}

impl Default for TextureParams {
    fn default() -> Self {
        TextureParams {
            octaves: 4,
            scale: 2.0,
            persistence: 0.6,
            contrast: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// World z of the ground plane; `None` for a scene without ground.
    pub ground_height: Option<f64>,
    pub ground_seed: u64,
    pub ground_color: [f64; 3],
    pub billboards: Vec<Billboard>,
    pub sky_color: [f64; 3],
    pub texture: TextureParams,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            ground_height: Some(0.0),
            ground_seed: 1,
            ground_color: [0.55, 0.5, 0.45],
            billboards: Vec::new(),
            sky_color: [0.6, 0.75, 0.95],
            texture: TextureParams::default(),
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        for (i, b) in self.billboards.iter().enumerate() {
            if !(b.width > 0.0 && b.height > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "billboard {i} has non-positive extent {}x{}",
                    b.width, b.height
                )));
            }
        }
        if self.texture.octaves == 0 || self.texture.scale <= 0.0 {
            return Err(Error::InvalidInput("texture needs >= 1 octave and a positive scale".into()));
        }
        Ok(())
    }

    /// Nearest intersection of the ray `origin + t * dir`, `t > 0`.
    pub fn raycast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut consider = |t: f64, surface: Surface| {
            if t > 1e-9 && best.as_ref().is_none_or(|b| t < b.t) {
                best = Some(Hit {
                    t,
                    point: origin + dir * t,
                    surface,
                });
            }
        };
        if let Some(g) = self.ground_height {
            if dir.z.abs() > 1e-12 {
                consider((g - origin.z) / dir.z, Surface::Ground);
            }
        }
        for (i, b) in self.billboards.iter().enumerate() {
            let c = Vector3::from(b.center);
            let (axis, u_axis) = match b.facing {
                Facing::Forward => (0, 1),
                Facing::Lateral => (1, 0),
            };
            if dir[axis].abs() < 1e-12 {
                continue;
            }
            let t = (c[axis] - origin[axis]) / dir[axis];
            if t <= 1e-9 {
                continue;
            }
            let p = origin + dir * t;
            if (p[u_axis] - c[u_axis]).abs() <= b.width / 2.0 && (p.z - c.z).abs() <= b.height / 2.0 {
                consider(t, Surface::Billboard(i));
            }
        }
        best
    }

    fn surface_normal(&self, s: Surface) -> Vector3<f64> {
        match s {
            Surface::Ground => Vector3::z(),
            Surface::Billboard(i) => match self.billboards[i].facing {
                Facing::Forward => Vector3::x(),
                Facing::Lateral => Vector3::y(),
            },
        }
    }

    /// Shaded color of a hit, band-limited to the pixel footprint `footprint` (m).
    fn shade(&self, hit: &Hit, footprint: f64) -> [f64; 3] {
        let p = hit.point;
        let (uv, seed, base) = match hit.surface {
            Surface::Ground => ((p.x, p.y), self.ground_seed, self.ground_color),
            Surface::Billboard(i) => {
                let b = &self.billboards[i];
                let u = match b.facing {
                    Facing::Forward => p.y,
                    Facing::Lateral => p.x,
                };
                ((u, p.z), b.texture_seed, b.color)
            }
        };
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let n = fbm(uv, seed.wrapping_mul(3).wrapping_add(c as u64), &self.texture, footprint);
            let n = (0.5 + self.texture.contrast * (n - 0.5)).clamp(0.0, 1.0);
            *o = (base[c] * (0.25 + 1.1 * n)).clamp(0.0, 1.0);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Surface {
    Ground,
    Billboard(usize),
}

#[derive(Clone, Copy, Debug)]
pub struct Hit {
    /// Ray parameter; equals camera depth for unit-z camera rays.
    pub t: f64,
    pub point: Vector3<f64>,
    pub surface: Surface,
}

fn hash(seed: u64, ix: i64, iy: i64) -> f64 {
    // splitmix64 over the packed lattice coordinates
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((ix as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add((iy as u64).wrapping_mul(0x94D0_49BB_1331_11EB));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Value noise in `[0, 1]` on a unit lattice.
fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (fade(x - x0), fade(y - y0));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = hash(seed, ix, iy);
    let b = hash(seed, ix + 1, iy);
    let c = hash(seed, ix, iy + 1);
    let d = hash(seed, ix + 1, iy + 1);
    let top = a + (b - a) * fx;
    let bot = c + (d - c) * fx;
    top + (bot - top) * fy
}

/// Multi-octave value noise; octaves finer than ~3 pixel footprints fade to their mean.
fn fbm((u, v): (f64, f64), seed: u64, tex: &TextureParams, footprint: f64) -> f64 {
    let mut cell = tex.scale;
    let mut amp = 1.0;
    let (mut sum, mut norm) = (0.0, 0.0);
    for o in 0..tex.octaves {
        let ratio = cell / footprint.max(1e-9);
        let keep = ((ratio - 2.0) / 2.0).clamp(0.0, 1.0);
        let n = if keep > 0.0 {
            value_noise(u / cell, v / cell, seed.wrapping_add(o as u64 * 7919))
        } else {
            0.5
        };
        sum += amp * (0.5 + keep * (n - 0.5));
        norm += amp;
        cell *= 0.5;
        amp *= tex.persistence;
    }
    sum / norm
}

/// World-frame ray through pixel `(x, y)`; its parameter equals camera depth.
pub(crate) fn pixel_ray(pose: &Pose, cam: &CameraIntrinsics, x: f64, y: f64) -> (Vector3<f64>, Vector3<f64>) {
    let r = cam.ray(x, y);
    (pose.translation, pose.rotation * Vector3::from(r))
}

/// Raycast render of `scene` seen from `pose`.
pub fn render_frame(scene: &SceneSpec, pose: &Pose, cam: &CameraIntrinsics) -> Frame<f32> {
    let focal = 0.5 * (cam.fx + cam.fy);
    Frame::from_fn(cam.height, cam.width, |x, y| {
        let (o, d) = pixel_ray(pose, cam, x as f64, y as f64);
        match scene.raycast(&o, &d) {
            Some(hit) => {
                let n = scene.surface_normal(hit.surface);
                let dist = hit.t * d.norm();
                let cos = (n.dot(&d) / d.norm()).abs().max(0.05);
                let footprint = dist / (focal * cos);
                scene.shade(&hit, footprint).map(|v| v as f32)
            }
            None => scene.sky_color.map(|v| v as f32),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_camera_splits_at_horizon() {
        let scene = SceneSpec::default();
        let cam = CameraIntrinsics::default();
        let img = render_frame(&scene, &Pose::level_camera(1.5), &cam);
        let sky = scene.sky_color.map(|v| v as f32);
        for y in 0..cam.height {
            for x in 0..cam.width {
                let above = (y as f64) < cam.cy;
                assert_eq!(img.pixel(x, y) == sky, above, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let mut scene = SceneSpec::default();
        scene.billboards.push(Billboard {
            center: [12.0, 1.0, 1.5],
            width: 4.0,
            height: 3.0,
            texture_seed: 9,
            facing: Facing::Forward,
            color: [0.9, 0.3, 0.3],
        });
        let cam = CameraIntrinsics::default();
        let pose = Pose::level_camera(1.5);
        let a = render_frame(&scene, &pose, &cam);
        let b = render_frame(&scene, &pose, &cam);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn validate_rejects_degenerate_billboard() {
        let mut scene = SceneSpec::default();
        scene.billboards.push(Billboard {
            center: [5.0, 0.0, 1.0],
            width: 0.0,
            height: 1.0,
            texture_seed: 0,
            facing: Facing::Forward,
            color: [0.5; 3],
        });
        assert!(scene.validate().is_err());
    }

    #[test]
    fn noise_stays_in_unit_range() {
        let tex = TextureParams::default();
        for i in 0..500 {
            let u = i as f64 * 0.173 - 40.0;
            let n = fbm((u, u * 0.31), 5, &tex, 0.01);
            assert!((0.0..=1.0).contains(&n));
        }
    }
}
