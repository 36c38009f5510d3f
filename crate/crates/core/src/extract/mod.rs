//! Turning a fitted field back into explicit outputs: semantic meshes,
//! occupancy grids, depth images and momentum-fused multi-frame scenes.

use crate::error::Result;
use crate::field::{FieldParams, Want};
use crate::geometry::{Aabb, Vec3};
use crate::grid::{GridSpec, Label, OccupancyGrid};
use crate::scenegen::{sdf_oracle, semantic_oracle, Scene};
use crate::supervision::{free_logit, LossWeights};

mod fusion;
mod mcubes;
mod mesh;
mod render;

pub use fusion::{fuse_frame, FusedScene};
pub use mcubes::extract_mesh;
pub use mesh::{Bvh, Mesh};
pub use render::{render_depth, render_scene_depth, Camera, DepthMap};

/// Anything that can be queried for signed distances, and optionally for
/// semantic logits. Extraction and evaluation go through this so analytic
/// fields can stand in for a fitted one.
pub trait ImplicitField {
    fn sdf_values(&self, xs: &[Vec3]) -> Result<Vec<f64>>;

    fn num_classes(&self) -> usize {
        0
    }

    /// Point-major `xs.len() × num_classes()` logits.
    fn logits(&self, _xs: &[Vec3]) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }

    /// Spatial gradients; central differences unless overridden.
    fn gradients(&self, xs: &[Vec3]) -> Result<Vec<Vec3>> {
        const H: f64 = 1e-5;
        let mut probes = Vec::with_capacity(xs.len() * 6);
        for x in xs {
            for a in 0..3 {
                let mut e = Vec3::zeros();
                e[a] = H;
                probes.push(x + e);
                probes.push(x - e);
            }
        }
        let v = self.sdf_values(&probes)?;
        Ok(v.chunks_exact(6)
            .map(|c| Vec3::new(c[0] - c[1], c[2] - c[3], c[4] - c[5]) / (2.0 * H))
            .collect())
    }

    /// Region where the field carries information, in its own coordinates.
    fn domain(&self) -> Option<Aabb> {
        None
    }
}

impl ImplicitField for FieldParams {
    fn sdf_values(&self, xs: &[Vec3]) -> Result<Vec<f64>> {
        self.sdf_batch(xs)
    }

    fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    fn logits(&self, xs: &[Vec3]) -> Result<Vec<f64>> {
        self.logits_batch(xs)
    }

    fn gradients(&self, xs: &[Vec3]) -> Result<Vec<Vec3>> {
        let jittered: Vec<Vec3> = xs.iter().map(|x| self.jitter_off_faces(x)).collect();
        Ok(self.evaluate_batch(&jittered, Want::GRADIENT)?.gradients)
    }

    fn domain(&self) -> Option<Aabb> {
        Some(self.arch.bounds)
    }
}

/// The analytic scene: exact SDF and one-hot logits of the owning class.
impl ImplicitField for Scene {
    fn sdf_values(&self, xs: &[Vec3]) -> Result<Vec<f64>> {
        Ok(xs.iter().map(|x| sdf_oracle(self, x)).collect())
    }

    fn num_classes(&self) -> usize {
        Scene::num_classes(self)
    }

    fn logits(&self, xs: &[Vec3]) -> Result<Vec<f64>> {
        let s = self.num_classes();
        let mut out = vec![0.0; xs.len() * s];
        for (i, x) in xs.iter().enumerate() {
            out[i * s + semantic_oracle(self, x)] = 1.0;
        }
        Ok(out)
    }

    fn domain(&self) -> Option<Aabb> {
        Some(self.bounds)
    }
}

/// A closure `x ↦ φ(x)` as a class-free field.
pub struct FnField<F>(pub F);

impl<F: Fn(&Vec3) -> f64> ImplicitField for FnField<F> {
    fn sdf_values(&self, xs: &[Vec3]) -> Result<Vec<f64>> {
        Ok(xs.iter().map(&self.0).collect())
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Per-point argmax class, or 0 for a field without semantics.
pub fn classes_at<F: ImplicitField + ?Sized>(field: &F, xs: &[Vec3]) -> Result<Vec<usize>> {
    let s = field.num_classes();
    if s == 0 {
        return Ok(vec![0; xs.len()]);
    }
    Ok(field.logits(xs)?.chunks_exact(s).map(argmax).collect())
}

/// Decision over the concatenated `(l_sem, l_free)` vector: the last slot
/// means free.
pub fn occupancy_label(sem_logits: &[f64], l_free: f64) -> Label {
    let best = argmax(sem_logits);
    if sem_logits.is_empty() || l_free > sem_logits[best] {
        Label::Free
    } else {
        Label::Occupied(best as u8)
    }
}

const VOXEL_CHUNK: usize = 2048;

/// Labels every cell of `spec` from the field: the minimum SDF over the
/// `subgrid_factor³` sub-cell probes gives the free logit, and the semantic
/// logits are read at that deepest probe. `w.t` acts as the SDF threshold.
pub fn predict_occupancy<F: ImplicitField + ?Sized>(
    field: &F,
    spec: &GridSpec,
    w: &LossWeights,
    subgrid_factor: usize,
    class_names: Vec<String>,
) -> Result<OccupancyGrid> {
    spec.validate()?;
    let factor = subgrid_factor.max(1);
    let per = factor.pow(3);
    let s = field.num_classes();
    let mut labels = Vec::with_capacity(spec.len());
    let cells: Vec<usize> = (0..spec.len()).collect();
    for chunk in cells.chunks(VOXEL_CHUNK) {
        let probes: Vec<Vec3> = chunk
            .iter()
            .flat_map(|&i| spec.sub_cell_centers(spec.coords(i), factor))
            .collect();
        let phi = field.sdf_values(&probes)?;
        let deepest: Vec<(usize, f64)> = phi
            .chunks_exact(per)
            .enumerate()
            .map(|(v, p)| {
                let k = (0..per).fold(0, |b, k| if p[k] < p[b] { k } else { b });
                (v * per + k, p[k])
            })
            .collect();
        let at: Vec<Vec3> = deepest.iter().map(|&(k, _)| probes[k]).collect();
        let logits = if s > 0 { field.logits(&at)? } else { Vec::new() };
        for (v, &(_, min_phi)) in deepest.iter().enumerate() {
            let l_free = free_logit(min_phi, w.beta, w.t);
            let sem = if s > 0 { &logits[v * s..(v + 1) * s] } else { &[][..] };
            labels.push(if s == 0 {
                if l_free > 0.0 { Label::Free } else { Label::Occupied(0) }
            } else {
                occupancy_label(sem, l_free)
            });
        }
    }
    OccupancyGrid::new(*spec, class_names, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::vec3;
    use crate::testutil::{sphere, tiny_params, tiny_scene};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dominant_free_logit_wins() {
        assert_eq!(occupancy_label(&[0.1, 0.2], 5.0), Label::Free);
    }

    #[test]
    fn deep_voxel_takes_semantic_peak() {
        let l_free = free_logit(-0.2, 100.0, 0.005);
        assert!((l_free + 20.5).abs() < 1e-12);
        assert_eq!(occupancy_label(&[0.0, 0.2, -1.0, 1.0], l_free), Label::Occupied(3));
    }

    #[test]
    fn label_matches_brute_force_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let s = rng.random_range(1..6);
            let v: Vec<f64> = (0..=s).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut best = 0;
            for i in 1..v.len() {
                if v[i] > v[best] {
                    best = i;
                }
            }
            let expect = if best == s { Label::Free } else { Label::Occupied(best as u8) };
            assert_eq!(occupancy_label(&v[..s], v[s]), expect);
        }
    }

    #[test]
    fn common_shift_keeps_label() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let c = rng.random_range(-10.0..10.0);
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            assert_eq!(occupancy_label(&v[..3], v[3]), occupancy_label(&shifted[..3], shifted[3]));
        }
    }

    #[test]
    fn scene_occupancy_matches_voxelizer() {
        let scene = tiny_scene();
        let spec = GridSpec::cells_covering(&scene.bounds, 0.25);
        let pred = predict_occupancy(&scene, &spec, &LossWeights::default(), 2, scene.classes.clone()).unwrap();
        let gt = crate::scenegen::voxelize_occupancy(&scene, &spec, 2).unwrap();
        // One-hot logits lose to the free logit only once min φ > t + 1/β.
        let w = LossWeights::default();
        let band = w.t + 1.0 / w.beta;
        for i in 0..spec.len() {
            if pred.labels[i] != gt.labels[i] {
                let probes = spec.sub_cell_centers(spec.coords(i), 2);
                let m = probes.iter().map(|p| sdf_oracle(&scene, p)).fold(f64::INFINITY, f64::min);
                assert!((0.0..=band).contains(&m), "voxel {i}");
            }
        }
    }

    #[test]
    fn fitted_field_occupancy_has_class_names() {
        let scene = tiny_scene();
        let params = tiny_params(&scene, 3);
        let spec = GridSpec::cells_covering(&scene.bounds, 0.5);
        let grid = predict_occupancy(&params, &spec, &LossWeights::default(), 2, scene.classes.clone()).unwrap();
        assert_eq!(grid.labels.len(), spec.len());
        assert_eq!(grid.num_classes(), 3);
        assert!(grid.labels.iter().all(|l| l.is_observed()));
    }

    #[test]
    fn default_gradients_are_central_differences() {
        let f = FnField(|x: &Vec3| x.x * x.x + 2.0 * x.y - x.z);
        let g = f.gradients(&[vec3([1.5, 0.0, 0.0])]).unwrap();
        assert!((g[0] - vec3([3.0, 2.0, -1.0])).norm() < 1e-8);
        let scene = Scene {
            primitives: vec![sphere([0.0; 3], 1.0, 0)],
            bounds: Aabb::new([-2.0; 3], [2.0; 3]),
            classes: vec!["a".into()],
        };
        let g = scene.gradients(&[vec3([0.0, 1.5, 0.0])]).unwrap();
        assert!((g[0] - Vec3::y()).norm() < 1e-8);
    }
}
