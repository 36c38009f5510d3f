//! Synthetic scenes with analytic ground truth, and the two weak supervision
//! sources simulated from them: multi-pose surface scans and coarse
//! occupancy grids with a visibility mask.
//!
//! The scene SDF is the minimum of exact per-primitive SDFs. Outside every
//! primitive this is the exact distance to the union; inside overlaps it is
//! a lower bound.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{arr3, vec3, Aabb, Pose, Vec3};
use crate::grid::{GridSpec, Label, OccupancyGrid};
use crate::io;

/// Surface samples are refined until `|sdf| <= SURFACE_TOLERANCE`.
pub const SURFACE_TOLERANCE: f64 = 1e-6;
/// Samples closer than this to a second primitive's surface are discarded.
pub const SEAM_BAND: f64 = 1e-3;
const SEAM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { radius: f64 },
    AxisBox { half_extents: [f64; 3] },
    /// Segment along the local z axis from `-half_length` to `+half_length`.
    Capsule { radius: f64, half_length: f64 },
    /// The region `z <= 0` in local coordinates.
    HalfSpace,
}

impl Shape {
    fn sizes(&self) -> Vec<f64> {
        match self {
            Shape::Sphere { radius } => vec![*radius],
            Shape::AxisBox { half_extents } => half_extents.to_vec(),
            Shape::Capsule { radius, half_length } => vec![*radius, *half_length],
            Shape::HalfSpace => vec![],
        }
    }

    pub fn sdf(&self, p: &Vec3) -> f64 {
        match self {
            Shape::Sphere { radius } => p.norm() - radius,
            Shape::AxisBox { half_extents } => {
                let q = p.abs() - vec3(*half_extents);
                q.sup(&Vec3::zeros()).norm() + q.max().min(0.0)
            }
            Shape::Capsule { radius, half_length } => {
                let c = Vec3::new(0.0, 0.0, p.z.clamp(-half_length, *half_length));
                (p - c).norm() - radius
            }
            Shape::HalfSpace => p.z,
        }
    }

    /// Analytic SDF gradient in local coordinates (unit length).
    pub fn gradient(&self, p: &Vec3) -> Vec3 {
        let sign = |v: f64| if v < 0.0 { -1.0 } else { 1.0 };
        match self {
            Shape::Sphere { .. } => {
                let n = p.norm();
                if n > 0.0 {
                    p / n
                } else {
                    Vec3::z()
                }
            }
            Shape::AxisBox { half_extents } => {
                let q = p.abs() - vec3(*half_extents);
                if q.iter().any(|&v| v > 0.0) {
                    let outside = q.sup(&Vec3::zeros());
                    let n = outside.norm();
                    Vec3::new(sign(p.x) * outside.x, sign(p.y) * outside.y, sign(p.z) * outside.z) / n
                } else {
                    let mut axis = 0;
                    for a in 1..3 {
                        if q[a] > q[axis] {
                            axis = a;
                        }
                    }
                    let mut n = Vec3::zeros();
                    n[axis] = sign(p[axis]);
                    n
                }
            }
            Shape::Capsule { half_length, .. } => {
                let c = Vec3::new(0.0, 0.0, p.z.clamp(-half_length, *half_length));
                let d = p - c;
                let n = d.norm();
                if n > 0.0 {
                    d / n
                } else {
                    Vec3::x()
                }
            }
            Shape::HalfSpace => Vec3::z(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePrimitive {
    pub shape: Shape,
    #[serde(default)]
    pub pose: Pose,
    pub class_id: usize,
}

impl ScenePrimitive {
    pub fn new(shape: Shape, pose: Pose, class_id: usize) -> Self {
        ScenePrimitive { shape, pose, class_id }
    }

    pub fn sdf(&self, x: &Vec3) -> f64 {
        self.shape.sdf(&self.pose.to_local(x))
    }

    pub fn normal(&self, x: &Vec3) -> Vec3 {
        self.pose.dir_to_world(&self.shape.gradient(&self.pose.to_local(x)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub primitives: Vec<ScenePrimitive>,
    pub bounds: Aabb,
    /// Names of the semantic classes; the free label is kept separately.
    pub classes: Vec<String>,
}

impl Scene {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.bounds.is_valid() {
            return Err(Error::config("scene bounds need positive extent on every axis"));
        }
        if self.classes.is_empty() || self.classes.len() > Label::MAX_CLASSES {
            return Err(Error::config("scene needs between 1 and 254 classes"));
        }
        for (i, p) in self.primitives.iter().enumerate() {
            if p.class_id >= self.classes.len() {
                return Err(Error::config(format!("primitive {i} has class_id out of range")));
            }
            if p.shape.sizes().iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                return Err(Error::config(format!("primitive {i} has a non-positive size")));
            }
        }
        Ok(())
    }

    /// Per-primitive SDFs at `x`.
    fn primitive_sdfs(&self, x: &Vec3) -> impl Iterator<Item = f64> + '_ {
        let x = *x;
        self.primitives.iter().map(move |p| p.sdf(&x))
    }

    /// Index of the primitive with the smallest SDF (lowest index on ties).
    fn owner(&self, x: &Vec3) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, d) in self.primitive_sdfs(x).enumerate() {
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((i, d));
            }
        }
        best
    }

    /// True when `x` is within `band` of the surfaces of two primitives.
    pub fn near_seam(&self, x: &Vec3, band: f64) -> bool {
        self.primitive_sdfs(x).filter(|d| d.abs() <= band).count() >= 2
    }
}

/// Signed distance to the union of the scene's primitives.
pub fn sdf_oracle(scene: &Scene, x: &Vec3) -> f64 {
    scene.primitive_sdfs(x).fold(f64::INFINITY, f64::min)
}

/// Class of the primitive with minimal SDF at `x`; the lowest index wins ties.
/// An empty scene reports class 0.
pub fn semantic_oracle(scene: &Scene, x: &Vec3) -> usize {
    scene.owner(x).map(|(i, _)| scene.primitives[i].class_id).unwrap_or(0)
}

/// Surface normal of the owning primitive at a point on (or near) the surface.
pub fn normal_oracle(scene: &Scene, x: &Vec3) -> Result<Vec3> {
    let mut sdfs: Vec<(usize, f64)> = scene.primitive_sdfs(x).enumerate().collect();
    if sdfs.is_empty() {
        return Err(Error::config("scene has no primitives"));
    }
    sdfs.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    if sdfs.len() >= 2 && (sdfs[0].1.abs() - sdfs[1].1.abs()).abs() <= SEAM_EPS && sdfs[1].1.abs() <= SEAM_BAND {
        return Err(Error::SeamAmbiguity(arr3(x)));
    }
    Ok(scene.primitives[sdfs[0].0].normal(x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointSample {
    pub position: Vec3,
    pub normal: Vec3,
    pub class_id: usize,
}

/// Sensor placement and ray budget for the simulated scanner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSpec {
    pub sensors: Vec<[f64; 3]>,
    pub rays_per_scan: usize,
    pub seed: u64,
}

impl Default for ScanSpec {
    fn default() -> Self {
        ScanSpec {
            sensors: Vec::new(),
            rays_per_scan: 4096,
            seed: 0,
        }
    }
}

/// Sphere-traces a ray against the scene. Returns the hit distance with
/// `|sdf| <= SURFACE_TOLERANCE`, or `None` if nothing is hit before `t_max`.
pub fn trace_ray(scene: &Scene, origin: &Vec3, dir: &Vec3, t_max: f64) -> Option<f64> {
    const MAX_ITERS: usize = 4096;
    const MIN_STEP: f64 = 1e-7;
    let mut t = 0.0;
    let mut prev_t = 0.0;
    for _ in 0..MAX_ITERS {
        if t > t_max {
            return None;
        }
        let s = sdf_oracle(scene, &(origin + dir * t));
        if s.abs() <= SURFACE_TOLERANCE * 1e-3 {
            return Some(t);
        }
        if s < 0.0 {
            // Overstepped with the minimum step: bisect the bracket.
            let (mut lo, mut hi) = (prev_t, t);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let sm = sdf_oracle(scene, &(origin + dir * mid));
                if sm.abs() <= SURFACE_TOLERANCE * 1e-3 {
                    return Some(mid);
                }
                if sm > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let mid = 0.5 * (lo + hi);
            return (sdf_oracle(scene, &(origin + dir * mid)).abs() <= SURFACE_TOLERANCE).then_some(mid);
        }
        prev_t = t;
        t += s.max(MIN_STEP);
    }
    None
}

/// True when the straight segment from `from` to `to` does not pass through
/// any surface.
pub fn segment_clear(scene: &Scene, from: &Vec3, to: &Vec3) -> bool {
    let delta = to - from;
    let dist = delta.norm();
    if dist == 0.0 {
        return true;
    }
    let dir = delta / dist;
    let mut t = 0.0;
    for _ in 0..100_000 {
        if t >= dist {
            return true;
        }
        let s = sdf_oracle(scene, &(from + dir * t));
        if s < SURFACE_TOLERANCE {
            return false;
        }
        t += s;
    }
    false
}

fn random_direction(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Casts `rays_per_scan` uniformly distributed rays from every sensor and
/// keeps the first surface hit of each (seam hits are discarded).
pub fn sample_surface_scans(scene: &Scene, spec: &ScanSpec) -> Result<Vec<PointSample>> {
    let mut out = Vec::new();
    for (pose_index, sensor) in spec.sensors.iter().enumerate() {
        let origin = vec3(*sensor);
        if !scene.bounds.contains(&origin) || sdf_oracle(scene, &origin) <= 0.0 {
            return Err(Error::config(format!(
                "sensor {pose_index} must lie inside the bounds and outside all primitives"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(pose_index as u64);
        for _ in 0..spec.rays_per_scan {
            let dir = random_direction(&mut rng);
            let Some((_, t_exit)) = scene.bounds.ray_interval(&origin, &dir) else {
                continue;
            };
            let Some(t) = trace_ray(scene, &origin, &dir, t_exit) else {
                continue;
            };
            let position = origin + dir * t;
            if scene.near_seam(&position, SEAM_BAND) {
                continue;
            }
            let normal = normal_oracle(scene, &position)?;
            out.push(PointSample {
                position,
                normal,
                class_id: semantic_oracle(scene, &position),
            });
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyScan);
    }
    Ok(out)
}

/// Labels each cell occupied when any of its `probe_factor³` sub-cell centers
/// lies inside the scene (class taken at the deepest probe), free otherwise.
pub fn voxelize_occupancy(scene: &Scene, spec: &GridSpec, probe_factor: usize) -> Result<OccupancyGrid> {
    if probe_factor == 0 {
        return Err(Error::config("probe_factor must be at least 1"));
    }
    spec.validate()?;
    let labels = (0..spec.len())
        .map(|i| {
            let probes = spec.sub_cell_centers(spec.coords(i), probe_factor);
            let (deepest, depth) = probes
                .iter()
                .map(|p| (p, sdf_oracle(scene, p)))
                .fold((probes[0], f64::INFINITY), |acc, (p, d)| if d < acc.1 { (*p, d) } else { acc });
            if depth < 0.0 {
                Label::Occupied(semantic_oracle(scene, &deepest) as u8)
            } else {
                Label::Free
            }
        })
        .collect();
    OccupancyGrid::new(*spec, scene.classes.clone(), labels)
}

/// Relabels cells the sensors cannot see as unobserved: free cells whose
/// center no sensor reaches unobstructed, and occupied cells containing no
/// surface sample.
pub fn visibility_mask(
    scene: &Scene,
    grid: &OccupancyGrid,
    sensors: &[[f64; 3]],
    samples: &[PointSample],
) -> OccupancyGrid {
    let spec = grid.spec;
    let mut hit = vec![false; spec.len()];
    for s in samples {
        if let Some(ijk) = spec.cell_of(&s.position) {
            hit[spec.index(ijk)] = true;
        }
    }
    let sensors: Vec<Vec3> = sensors.iter().map(|s| vec3(*s)).collect();
    let labels = grid
        .labels
        .iter()
        .enumerate()
        .map(|(i, &label)| match label {
            Label::Free => {
                let center = spec.cell_center(spec.coords(i));
                if sensors.iter().any(|s| segment_clear(scene, s, &center)) {
                    Label::Free
                } else {
                    Label::Unobserved
                }
            }
            Label::Occupied(_) if hit[i] => label,
            _ => Label::Unobserved,
        })
        .collect();
    OccupancyGrid {
        spec,
        class_names: grid.class_names.clone(),
        labels,
    }
}

const SAMPLE_PROPS: [&str; 7] = ["x", "y", "z", "nx", "ny", "nz", "class"];

pub fn samples_to_ply(samples: &[PointSample]) -> String {
    let data = io::PlyData {
        vertex_props: SAMPLE_PROPS.iter().map(|s| s.to_string()).collect(),
        vertices: samples
            .iter()
            .map(|s| {
                let (p, n) = (s.position, s.normal);
                vec![p.x, p.y, p.z, n.x, n.y, n.z, s.class_id as f64]
            })
            .collect(),
        faces: vec![],
    };
    io::write_ply(&data, &["class"])
}

pub fn samples_from_ply(text: &str) -> Result<Vec<PointSample>> {
    let data = io::parse_ply(text)?;
    if data.vertex_props != SAMPLE_PROPS {
        return Err(Error::format("point file must carry x,y,z,nx,ny,nz,class"));
    }
    Ok(data
        .vertices
        .iter()
        .map(|v| PointSample {
            position: Vec3::new(v[0], v[1], v[2]),
            normal: Vec3::new(v[3], v[4], v[5]),
            class_id: v[6] as usize,
        })
        .collect())
}

pub fn save_samples(path: &Path, samples: &[PointSample]) -> Result<()> {
    io::write_file(path, samples_to_ply(samples).as_bytes())
}

pub fn load_samples(path: &Path) -> Result<Vec<PointSample>> {
    let bytes = io::read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format("point file is not UTF-8"))?;
    samples_from_ply(&text)
}
