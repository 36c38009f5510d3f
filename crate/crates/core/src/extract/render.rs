use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::io;
use crate::scenegen::{trace_ray, Scene};

use super::mesh::{Bvh, Mesh};

/// Pinhole camera in the image convention: +x right, +y down, +z forward.
/// `pose` maps camera coordinates into the world; pixel `(u, v)` samples
/// the ray through its center `(u + ½, v + ½)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub pose: Pose,
}

impl Camera {
    /// Centered principal point and the given horizontal field of view.
    pub fn with_fov(width: usize, height: usize, fov_x_deg: f64, pose: Pose) -> Self {
        let f = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Camera {
            width,
            height,
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            pose,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("camera needs a positive resolution"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0 && self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::config("camera focal lengths must be positive"));
        }
        Ok(())
    }

    /// World-space ray through pixel `(u, v)`, scaled so a unit step along
    /// it advances one meter along the optical axis.
    pub fn ray(&self, u: usize, v: usize) -> (Vec3, Vec3) {
        let d = Vec3::new(
            (u as f64 + 0.5 - self.cx) / self.fx,
            (v as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        );
        (*self.pose.offset(), self.pose.dir_to_world(&d))
    }
}

/// Row-major per-pixel z-depth in meters; `None` where nothing was hit.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub camera: Camera,
    pub depth: Vec<Option<f64>>,
}

impl DepthMap {
    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        self.depth[v * self.camera.width + u]
    }

    /// Binary 16-bit PGM in millimeters, 0 for a miss; depths saturate at
    /// 65.535 m.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n65535\n", self.camera.width, self.camera.height).into_bytes();
        for d in &self.depth {
            let mm = match d {
                Some(z) => (z * 1000.0).round().clamp(1.0, 65535.0) as u16,
                None => 0,
            };
            out.extend_from_slice(&mm.to_be_bytes());
        }
        out
    }

    /// Parses a 16-bit PGM written by [`DepthMap::to_pgm`].
    pub fn from_pgm(bytes: &[u8], camera: Camera) -> Result<Self> {
        let mut fields = Vec::new();
        let mut at = 0;
        while fields.len() < 4 {
            while at < bytes.len() && bytes[at].is_ascii_whitespace() {
                at += 1;
            }
            let start = at;
            while at < bytes.len() && !bytes[at].is_ascii_whitespace() {
                at += 1;
            }
            if start == at {
                return Err(Error::format("PGM header truncated"));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..at]).into_owned());
        }
        at += 1;
        let num = |s: &str| s.parse::<usize>().map_err(|_| Error::format(format!("bad PGM field `{s}`")));
        if fields[0] != "P5" || num(&fields[3])? != 65535 {
            return Err(Error::format("expected a 16-bit binary PGM"));
        }
        let (w, h) = (num(&fields[1])?, num(&fields[2])?);
        if (w, h) != (camera.width, camera.height) {
            return Err(Error::format("PGM size does not match the camera"));
        }
        let body = bytes.get(at..).filter(|b| b.len() == 2 * w * h).ok_or_else(|| Error::format("PGM body size mismatch"))?;
        let depth = body
            .chunks_exact(2)
            .map(|c| match u16::from_be_bytes([c[0], c[1]]) {
                0 => None,
                mm => Some(mm as f64 / 1000.0),
            })
            .collect();
        Ok(DepthMap { camera, depth })
    }

    fn sidecar(path: &Path) -> PathBuf {
        path.with_extension("json")
    }

    /// Writes `path` (PGM) and the camera as JSON next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_file(path, &self.to_pgm())?;
        io::write_json(&Self::sidecar(path), &self.camera)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let camera: Camera = io::read_json(&Self::sidecar(path))?;
        DepthMap::from_pgm(&io::read_file(path)?, camera)
    }
}

/// Nearest hit per pixel, reported as depth along the optical axis.
pub fn render_depth(mesh: &Mesh, camera: &Camera) -> Result<DepthMap> {
    camera.validate()?;
    let bvh = Bvh::new(mesh);
    let mut depth = Vec::with_capacity(camera.width * camera.height);
    for v in 0..camera.height {
        for u in 0..camera.width {
            let (o, d) = camera.ray(u, v);
            depth.push(bvh.intersect(&o, &d));
        }
    }
    Ok(DepthMap {
        camera: camera.clone(),
        depth,
    })
}

/// Exact depth of the analytic scene by sphere tracing, restricted to hits
/// inside the scene bounds.
pub fn render_scene_depth(scene: &Scene, camera: &Camera) -> Result<DepthMap> {
    camera.validate()?;
    let mut depth = Vec::with_capacity(camera.width * camera.height);
    for v in 0..camera.height {
        for u in 0..camera.width {
            let (o, d) = camera.ray(u, v);
            let len = d.norm();
            let unit = d / len;
            let hit = scene.bounds.ray_interval(&o, &unit).and_then(|(_, exit)| {
                let t = trace_ray(scene, &o, &unit, exit)?;
                scene.bounds.contains(&(o + unit * t)).then_some(t / len)
            });
            depth.push(hit);
        }
    }
    Ok(DepthMap {
        camera: camera.clone(),
        depth,
    })
}
