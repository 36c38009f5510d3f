//! Small geometric helpers shared by the scene, field and extraction code.

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

pub fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

pub fn arr3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Rigid transform mapping local coordinates into the world frame.
///
/// Serialized as a translation plus XYZ Euler angles in degrees
/// (roll about x, pitch about y, yaw about z).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    translation: Vec3,
    euler_deg: [f64; 3],
    rotation: Rotation3<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    translation: [f64; 3],
    #[serde(default)]
    euler_deg: [f64; 3],
}

impl From<PoseRepr> for Pose {
    fn from(r: PoseRepr) -> Self {
        Pose::new(vec3(r.translation), r.euler_deg)
    }
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        PoseRepr {
            translation: arr3(&p.translation),
            euler_deg: p.euler_deg,
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn new(translation: Vec3, euler_deg: [f64; 3]) -> Self {
        let rotation = Rotation3::from_euler_angles(
            euler_deg[0].to_radians(),
            euler_deg[1].to_radians(),
            euler_deg[2].to_radians(),
        );
        Pose {
            translation,
            euler_deg,
            rotation,
        }
    }

    pub fn identity() -> Self {
        Pose::new(Vec3::zeros(), [0.0; 3])
    }

    pub fn translation(t: Vec3) -> Self {
        Pose::new(t, [0.0; 3])
    }

    /// Rigid transform with the given local-to-world rotation.
    pub fn from_rotation(translation: Vec3, rotation: &Rotation3<f64>) -> Self {
        let (r, p, y) = rotation.euler_angles();
        Pose::new(translation, [r.to_degrees(), p.to_degrees(), y.to_degrees()])
    }

    /// Camera-style frame at `eye` with local +z towards `target`, +x to the
    /// right and +y down (image convention). Falls back to a different `up`
    /// when the view direction is parallel to it.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let z = (target - eye).normalize();
        let mut x = z.cross(&up);
        if x.norm() < 1e-9 {
            x = z.cross(&Vec3::new(up.y, up.z, up.x));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let m = nalgebra::Matrix3::from_columns(&[x, y, z]);
        Pose::from_rotation(eye, &Rotation3::from_matrix_unchecked(m))
    }

    pub fn offset(&self) -> &Vec3 {
        &self.translation
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    pub fn to_world(&self, local: &Vec3) -> Vec3 {
        self.rotation * local + self.translation
    }

    pub fn to_local(&self, world: &Vec3) -> Vec3 {
        self.rotation.inverse_transform_vector(&(world - self.translation))
    }

    pub fn dir_to_world(&self, local: &Vec3) -> Vec3 {
        self.rotation * local
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Aabb { min, max }
    }

    pub fn lo(&self) -> Vec3 {
        vec3(self.min)
    }

    pub fn hi(&self) -> Vec3 {
        vec3(self.max)
    }

    pub fn extent(&self) -> Vec3 {
        self.hi() - self.lo()
    }

    pub fn center(&self) -> Vec3 {
        (self.hi() + self.lo()) * 0.5
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|a| self.max[a] > self.min[a] && self.min[a].is_finite() && self.max[a].is_finite())
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn contains_box(&self, other: &Aabb, tol: f64) -> bool {
        (0..3).all(|a| other.min[a] >= self.min[a] - tol && other.max[a] <= self.max[a] + tol)
    }

    /// Parametric entry/exit of the ray `origin + t * dir` (t ≥ 0), if any.
    pub fn ray_interval(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = 0.0_f64;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if dir[a].abs() < 1e-300 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[a];
            let (mut ta, mut tb) = ((self.min[a] - origin[a]) * inv, (self.max[a] - origin[a]) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }

    /// Squared distance from `p` to the box (0 inside).
    pub fn distance_sq(&self, p: &Vec3) -> f64 {
        (0..3)
            .map(|a| {
                let d = (self.min[a] - p[a]).max(0.0).max(p[a] - self.max[a]);
                d * d
            })
            .sum()
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        let mut out = *self;
        for a in 0..3 {
            out.min[a] = out.min[a].min(other.min[a]);
            out.max[a] = out.max[a].max(other.max[a]);
        }
        out
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Aabb {
        let mut out = Aabb::new([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
        for p in points {
            for a in 0..3 {
                out.min[a] = out.min[a].min(p[a]);
                out.max[a] = out.max[a].max(p[a]);
            }
        }
        out
    }
}
