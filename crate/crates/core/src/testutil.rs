//! Shared fixtures for unit tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::field::{FieldArch, FieldParams, PeSpec};
use crate::geometry::{vec3, Aabb, Pose};
use crate::grid::GridSpec;
use crate::scenegen::{
    sample_surface_scans, visibility_mask, voxelize_occupancy, ScanSpec, Scene, ScenePrimitive, Shape,
};
use crate::supervision::{sample_batch, BatchCounts, SampleBatch};

pub fn sphere(center: [f64; 3], radius: f64, class_id: usize) -> ScenePrimitive {
    ScenePrimitive::new(Shape::Sphere { radius }, Pose::translation(vec3(center)), class_id)
}

/// Two spheres over a ground plane in a 2 x 2 x 1 box.
pub fn tiny_scene() -> Scene {
    Scene {
        primitives: vec![
            ScenePrimitive::new(Shape::HalfSpace, Pose::translation(vec3([0.0, 0.0, -0.3])), 0),
            sphere([-0.4, 0.0, 0.0], 0.3, 1),
            sphere([0.45, 0.2, 0.05], 0.25, 2),
        ],
        bounds: Aabb::new([-1.0, -1.0, -0.5], [1.0, 1.0, 0.5]),
        classes: vec!["ground".into(), "a".into(), "b".into()],
    }
}

pub fn tiny_arch(scene: &Scene, channels: usize, freqs: usize, width: usize) -> FieldArch {
    FieldArch {
        bounds: scene.bounds,
        grid: GridSpec::new([-1.0, -1.0, -0.5], 2.0 / 3.0, [4, 4, 3]),
        channels,
        pe: PeSpec { frequencies: freqs },
        hidden: [width, width],
        omega0: 30.0,
        num_classes: scene.num_classes(),
    }
}

/// Initialized parameters with the SDF output scaled down so the
/// exponential loss terms stay moderate.
pub fn tiny_params(scene: &Scene, seed: u64) -> FieldParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = FieldParams::initialized(tiny_arch(scene, 2, 1, 8), &mut rng).unwrap();
    p.grid.values.iter_mut().for_each(|v| *v *= 20.0);
    let last = &mut p.sdf_head.layers[2];
    last.weights.iter_mut().for_each(|w| *w *= 0.05);
    last.bias.iter_mut().for_each(|b| *b *= 0.05);
    p
}

pub fn tiny_batch(scene: &Scene, counts: BatchCounts, seed: u64) -> SampleBatch {
    let scan = ScanSpec { sensors: vec![[0.0, -0.8, 0.4], [0.1, 0.8, 0.4]], rays_per_scan: 300, seed };
    let samples = sample_surface_scans(scene, &scan).unwrap();
    let spec = GridSpec::new([-1.0, -1.0, -0.5], 0.25, [8, 8, 4]);
    let grid = voxelize_occupancy(scene, &spec, 2).unwrap();
    let grid = visibility_mask(scene, &grid, &scan.sensors, &samples);
    sample_batch(&samples, &grid, counts, 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}
