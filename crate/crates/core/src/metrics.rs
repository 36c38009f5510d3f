//! Evaluation: voxel IoUs, depth-image errors, Chamfer distance against the
//! analytic scene, and Eikonal / sign diagnostics of a fitted field.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::{Bvh, DepthMap, ImplicitField, Mesh};
use crate::geometry::{Aabb, Vec3};
use crate::grid::{Label, OccupancyGrid};
use crate::io;
use crate::scenegen::{sdf_oracle, Scene, Shape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIou {
    /// `None` for classes absent from both prediction and ground truth.
    pub per_class: Vec<Option<f64>>,
    /// Mean over the present classes (1 when no class is present).
    pub mean: f64,
}

fn check_pair(pred: &OccupancyGrid, gt: &OccupancyGrid) -> Result<()> {
    if pred.spec != gt.spec || pred.labels.len() != gt.labels.len() {
        return Err(Error::SpecMismatch);
    }
    Ok(())
}

/// Per-class `TP / (TP + FP + FN)` over the voxels ground truth observed.
/// Free is not a class here.
pub fn miou(pred: &OccupancyGrid, gt: &OccupancyGrid) -> Result<ClassIou> {
    check_pair(pred, gt)?;
    if pred.num_classes() != gt.num_classes() {
        return Err(Error::SpecMismatch);
    }
    let s = gt.num_classes();
    let (mut tp, mut fp, mut fn_) = (vec![0usize; s], vec![0usize; s], vec![0usize; s]);
    for (p, g) in pred.labels.iter().zip(&gt.labels) {
        if !g.is_observed() {
            continue;
        }
        match (p.class(), g.class()) {
            (Some(a), Some(b)) if a == b => tp[a] += 1,
            (a, b) => {
                if let Some(a) = a {
                    fp[a] += 1;
                }
                if let Some(b) = b {
                    fn_[b] += 1;
                }
            }
        }
    }
    let per_class: Vec<Option<f64>> = (0..s)
        .map(|c| {
            let denom = tp[c] + fp[c] + fn_[c];
            (denom > 0).then(|| tp[c] as f64 / denom as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = if present.is_empty() { 1.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
    Ok(ClassIou { per_class, mean })
}

/// Class-agnostic IoU of the occupied sets over observed ground-truth voxels.
pub fn geometric_iou(pred: &OccupancyGrid, gt: &OccupancyGrid) -> Result<f64> {
    check_pair(pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, g) in pred.labels.iter().zip(&gt.labels) {
        if !g.is_observed() {
            continue;
        }
        let (a, b) = (matches!(p, Label::Occupied(_)), matches!(g, Label::Occupied(_)));
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    /// Fraction of pixels with `max(d/d*, d*/d) < 1.25`.
    pub delta_1_25: f64,
}

/// Depth errors over pixels where both maps have a hit.
pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap) -> Result<DepthMetrics> {
    depth_metrics_pooled(&[(pred, gt)])
}

/// Depth errors with the valid pixels of several (prediction, truth) image
/// pairs pooled together.
pub fn depth_metrics_pooled(pairs: &[(&DepthMap, &DepthMap)]) -> Result<DepthMetrics> {
    let (mut n, mut abs_rel, mut sq_rel, mut sq, mut within) = (0usize, 0.0, 0.0, 0.0, 0usize);
    for (pred, gt) in pairs {
        if pred.camera != gt.camera || pred.depth.len() != gt.depth.len() {
            return Err(Error::SpecMismatch);
        }
        for (d, t) in pred.depth.iter().zip(&gt.depth) {
            if let (Some(d), Some(t)) = (*d, *t) {
                let e = d - t;
                n += 1;
                abs_rel += e.abs() / t;
                sq_rel += e * e / t;
                sq += e * e;
                within += ((d / t).max(t / d) < 1.25) as usize;
            }
        }
    }
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    let n_f = n as f64;
    Ok(DepthMetrics {
        abs_rel: abs_rel / n_f,
        sq_rel: sq_rel / n_f,
        rmse: (sq / n_f).sqrt(),
        delta_1_25: within as f64 / n_f,
    })
}

/// Surface area of a primitive's sampling domain and a uniform sample from it,
/// in local coordinates. Half-spaces are sampled on a square patch of the
/// plane wide enough to cover `bounds`.
fn shape_patch(shape: &Shape, local_center: &Vec3, radius: f64) -> (f64, Box<dyn Fn(&mut dyn rand::RngCore) -> Vec3>) {
    use std::f64::consts::PI;
    let on_sphere = |rng: &mut dyn rand::RngCore| {
        let z: f64 = rng.random_range(-1.0..=1.0);
        let phi = rng.random_range(0.0..2.0 * PI);
        let r = (1.0 - z * z).max(0.0).sqrt();
        Vec3::new(r * phi.cos(), r * phi.sin(), z)
    };
    match *shape {
        Shape::Sphere { radius: r } => (4.0 * PI * r * r, Box::new(move |rng| on_sphere(rng) * r)),
        Shape::AxisBox { half_extents: h } => {
            let faces = [h[1] * h[2], h[0] * h[2], h[0] * h[1]].map(|a| 4.0 * a);
            let total = 2.0 * faces.iter().sum::<f64>();
            (
                total,
                Box::new(move |rng| {
                    let mut pick = rng.random_range(0.0..total / 2.0);
                    let mut axis = 0;
                    while axis < 2 && pick >= faces[axis] {
                        pick -= faces[axis];
                        axis += 1;
                    }
                    let mut p = Vec3::zeros();
                    for a in 0..3 {
                        p[a] = if a == axis {
                            if rng.random::<bool>() { h[a] } else { -h[a] }
                        } else {
                            rng.random_range(-h[a]..=h[a])
                        };
                    }
                    p
                }),
            )
        }
        Shape::Capsule { radius: r, half_length: l } => {
            let side = 4.0 * PI * r * l;
            let caps = 4.0 * PI * r * r;
            (
                side + caps,
                Box::new(move |rng| {
                    if rng.random_range(0.0..side + caps) < side {
                        let phi = rng.random_range(0.0..2.0 * PI);
                        Vec3::new(r * phi.cos(), r * phi.sin(), rng.random_range(-l..=l))
                    } else {
                        let p = on_sphere(rng) * r;
                        p + Vec3::new(0.0, 0.0, if p.z >= 0.0 { l } else { -l })
                    }
                }),
            )
        }
        Shape::HalfSpace => {
            let c = Vec3::new(local_center.x, local_center.y, 0.0);
            (
                4.0 * radius * radius,
                Box::new(move |rng| {
                    c + Vec3::new(rng.random_range(-radius..=radius), rng.random_range(-radius..=radius), 0.0)
                }),
            )
        }
    }
}

/// `n` points uniformly distributed over the part of the scene's union
/// surface inside its bounds.
pub fn sample_scene_surface(scene: &Scene, n: usize, rng: &mut impl Rng) -> Result<Vec<Vec3>> {
    const INSIDE_OTHER: f64 = -1e-9;
    if scene.primitives.is_empty() {
        return Err(Error::EmptyPool("scene surface"));
    }
    let radius = 0.5 * scene.bounds.extent().norm();
    let patches: Vec<_> = scene
        .primitives
        .iter()
        .map(|p| shape_patch(&p.shape, &p.pose.to_local(&scene.bounds.center()), radius))
        .collect();
    let pick = WeightedIndex::new(patches.iter().map(|(a, _)| *a)).map_err(|e| Error::config(e.to_string()))?;
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > 1000 * n.max(1) + 100_000 {
            return Err(Error::EmptyPool("scene surface"));
        }
        let i = pick.sample(rng);
        let p = scene.primitives[i].pose.to_world(&(patches[i].1)(rng));
        if !scene.bounds.contains(&p) {
            continue;
        }
        let covered = scene
            .primitives
            .iter()
            .enumerate()
            .any(|(j, q)| j != i && q.sdf(&p) < INSIDE_OTHER);
        if !covered {
            out.push(p);
        }
    }
    Ok(out)
}

/// Symmetric Chamfer distance: the average of (mean |SDF| of points sampled
/// on the mesh) and (mean distance to the mesh of points sampled on the
/// scene surface), `n_samples` each.
pub fn chamfer(mesh: &Mesh, scene: &Scene, n_samples: usize, rng: &mut impl Rng) -> Result<f64> {
    if mesh.triangles.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let n = n_samples.max(1);
    let on_mesh = mesh.sample_surface(n, rng)?;
    let to_scene = on_mesh.iter().map(|p| sdf_oracle(scene, p).abs()).sum::<f64>() / n as f64;
    let bvh = Bvh::new(mesh);
    let on_scene = sample_scene_surface(scene, n, rng)?;
    let to_mesh = on_scene.iter().map(|p| bvh.distance(p)).sum::<f64>() / n as f64;
    Ok(0.5 * (to_scene + to_mesh))
}

/// Mean `|‖∇φ‖ − 1|` over `positions`.
pub fn eikonal_residual<F: ImplicitField + ?Sized>(field: &F, positions: &[Vec3]) -> Result<f64> {
    if positions.is_empty() {
        return Err(Error::EmptyPool("eikonal positions"));
    }
    let g = field.gradients(positions)?;
    Ok(g.iter().map(|g| (g.norm() - 1.0).abs()).sum::<f64>() / g.len() as f64)
}

pub fn uniform_points(bounds: &Aabb, n: usize, rng: &mut impl Rng) -> Vec<Vec3> {
    (0..n)
        .map(|_| Vec3::from_fn(|a, _| rng.random_range(bounds.min[a]..bounds.max[a])))
        .collect()
}

/// Uniform points of the scene bounds whose oracle distance to the surface
/// is at least `margin`.
pub fn far_points(scene: &Scene, n: usize, margin: f64, rng: &mut impl Rng) -> Result<Vec<Vec3>> {
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > 1000 * n.max(1) + 100_000 {
            return Err(Error::EmptyPool("points away from the surface"));
        }
        let p = uniform_points(&scene.bounds, 1, rng)[0];
        if sdf_oracle(scene, &p).abs() >= margin {
            out.push(p);
        }
    }
    Ok(out)
}

/// Fraction of `points` where the field's sign agrees with the oracle's.
pub fn sign_accuracy<F: ImplicitField + ?Sized>(field: &F, scene: &Scene, points: &[Vec3]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyPool("sign points"));
    }
    let phi = field.sdf_values(points)?;
    let agree = points
        .iter()
        .zip(&phi)
        .filter(|(p, v)| (sdf_oracle(scene, p) < 0.0) == (**v < 0.0))
        .count();
    Ok(agree as f64 / points.len() as f64)
}

/// Everything `eval` can measure; fields stay empty when their inputs were
/// not supplied.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class_iou: Option<Vec<Option<f64>>>,
    pub miou: Option<f64>,
    pub geometric_iou: Option<f64>,
    pub abs_rel: Option<f64>,
    pub sq_rel: Option<f64>,
    pub rmse: Option<f64>,
    pub delta_1_25: Option<f64>,
    pub chamfer: Option<f64>,
    pub eikonal_residual: Option<f64>,
    pub sign_accuracy: Option<f64>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "run,miou,geometric_iou,abs_rel,sq_rel,rmse,delta_1_25,chamfer,eikonal_residual,sign_accuracy";

    pub fn set_iou(&mut self, iou: &ClassIou) {
        self.per_class_iou = Some(iou.per_class.clone());
        self.miou = Some(iou.mean);
    }

    pub fn set_depth(&mut self, d: &DepthMetrics) {
        self.abs_rel = Some(d.abs_rel);
        self.sq_rel = Some(d.sq_rel);
        self.rmse = Some(d.rmse);
        self.delta_1_25 = Some(d.delta_1_25);
    }

    /// One CSV line matching [`EvalReport::CSV_HEADER`]; missing values are empty.
    pub fn csv_row(&self, run: &str) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        let values = [
            self.miou,
            self.geometric_iou,
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.delta_1_25,
            self.chamfer,
            self.eikonal_residual,
            self.sign_accuracy,
        ];
        let mut row = run.to_string();
        for v in values {
            row.push(',');
            row.push_str(&cell(v));
        }
        row
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        io::read_json(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::{extract_mesh, render_depth, Camera, FnField};
    use crate::geometry::{vec3, Pose};
    use crate::grid::GridSpec;
    use crate::scenegen::ScenePrimitive;
    use crate::testutil::{sphere, tiny_scene};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_grid(rng: &mut ChaCha8Rng, spec: GridSpec, s: usize) -> OccupancyGrid {
        let labels = (0..spec.len())
            .map(|_| match rng.random_range(0..s + 2) {
                0 => Label::Free,
                1 => Label::Unobserved,
                c => Label::Occupied((c - 2) as u8),
            })
            .collect();
        OccupancyGrid::new(spec, (0..s).map(|c| format!("c{c}")).collect(), labels).unwrap()
    }

    #[test]
    fn miou_matches_brute_force_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = GridSpec::new([0.0; 3], 1.0, [4, 4, 4]);
        for _ in 0..100 {
            let pred = random_grid(&mut rng, spec, 3);
            let gt = random_grid(&mut rng, spec, 3);
            let got = miou(&pred, &gt).unwrap();
            let mut sum = 0.0;
            let mut present = 0;
            for c in 0..3u8 {
                let (mut tp, mut fp, mut fn_) = (0, 0, 0);
                for i in 0..spec.len() {
                    if gt.labels[i] == Label::Unobserved {
                        continue;
                    }
                    let p = pred.labels[i] == Label::Occupied(c);
                    let g = gt.labels[i] == Label::Occupied(c);
                    tp += (p && g) as usize;
                    fp += (p && !g) as usize;
                    fn_ += (!p && g) as usize;
                }
                let expect = (tp + fp + fn_ > 0).then(|| tp as f64 / (tp + fp + fn_) as f64);
                assert_eq!(got.per_class[c as usize], expect);
                if let Some(e) = expect {
                    sum += e;
                    present += 1;
                }
            }
            assert_eq!(got.mean, sum / present as f64);
        }
    }

    #[test]
    fn miou_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let spec = GridSpec::new([0.0; 3], 1.0, [4, 4, 4]);
        let gt = random_grid(&mut rng, spec, 3);
        let same = miou(&gt, &gt).unwrap();
        assert!(same.per_class.iter().flatten().all(|&v| v == 1.0));
        assert_eq!(same.mean, 1.0);
        assert_eq!(geometric_iou(&gt, &gt).unwrap(), 1.0);
        let free = OccupancyGrid::filled(spec, gt.class_names.clone(), Label::Free);
        assert!(miou(&free, &gt).unwrap().per_class.iter().flatten().all(|&v| v == 0.0));
        let other = OccupancyGrid::filled(GridSpec::new([0.0; 3], 1.0, [4, 4, 3]), gt.class_names.clone(), Label::Free);
        assert!(matches!(miou(&other, &gt), Err(Error::SpecMismatch)));
    }

    fn depth_map(values: &[Option<f64>]) -> DepthMap {
        DepthMap {
            camera: Camera::with_fov(values.len(), 1, 60.0, Pose::identity()),
            depth: values.to_vec(),
        }
    }

    #[test]
    fn depth_hand_cases() {
        let m = depth_metrics(&depth_map(&[Some(2.0)]), &depth_map(&[Some(1.0)])).unwrap();
        assert_eq!((m.abs_rel, m.sq_rel, m.rmse, m.delta_1_25), (1.0, 1.0, 1.0, 0.0));
        let m = depth_metrics(&depth_map(&[Some(1.2), Some(1.0)]), &depth_map(&[Some(1.0), Some(1.0)])).unwrap();
        assert!((m.abs_rel - 0.1).abs() < 1e-15);
        assert_eq!(m.delta_1_25, 1.0);
        let gt = depth_map(&[Some(1.5), Some(3.0), None]);
        let m = depth_metrics(&gt, &gt).unwrap();
        assert_eq!((m.abs_rel, m.sq_rel, m.rmse, m.delta_1_25), (0.0, 0.0, 0.0, 1.0));
        assert!(matches!(
            depth_metrics(&depth_map(&[None, Some(1.0)]), &depth_map(&[Some(1.0), None])),
            Err(Error::NoValidPixels)
        ));
    }

    #[test]
    fn depth_metrics_ignore_order_and_misses() {
        let a = depth_map(&[Some(1.1), Some(2.5), Some(0.7)]);
        let b = depth_map(&[Some(1.0), Some(3.0), Some(0.9)]);
        let a2 = depth_map(&[Some(0.7), None, Some(1.1), Some(2.5), Some(4.0)]);
        let b2 = depth_map(&[Some(0.9), Some(5.0), Some(1.0), Some(3.0), None]);
        let (m, m2) = (depth_metrics(&a, &b).unwrap(), depth_metrics(&a2, &b2).unwrap());
        assert!((m.abs_rel - m2.abs_rel).abs() < 1e-15 && (m.rmse - m2.rmse).abs() < 1e-15);
        assert!((m.sq_rel - m2.sq_rel).abs() < 1e-15 && m.delta_1_25 == m2.delta_1_25);
    }

    #[test]
    fn scene_surface_samples_are_on_the_union_surface() {
        let mut scene = tiny_scene();
        scene.primitives.push(ScenePrimitive::new(
            Shape::AxisBox { half_extents: [0.2, 0.1, 0.3] },
            Pose::new(vec3([0.1, -0.5, -0.2]), [0.0, 0.0, 30.0]),
            1,
        ));
        scene.primitives.push(ScenePrimitive::new(
            Shape::Capsule { radius: 0.1, half_length: 0.2 },
            Pose::new(vec3([-0.6, 0.6, 0.0]), [90.0, 0.0, 0.0]),
            2,
        ));
        let pts = sample_scene_surface(&scene, 2000, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        for p in &pts {
            assert!(sdf_oracle(&scene, p).abs() < 1e-9);
            assert!(scene.bounds.contains(p));
        }
    }

    fn unit_sphere_scene() -> Scene {
        Scene {
            primitives: vec![sphere([0.0; 3], 1.0, 0)],
            bounds: Aabb::new([-2.0; 3], [2.0; 3]),
            classes: vec!["s".into()],
        }
    }

    fn flat_box_mesh() -> (Mesh, Scene) {
        // An axis box is exactly representable by twelve triangles.
        let h = [0.5, 0.75, 0.25];
        let c: Vec<Vec3> = (0..8)
            .map(|i| vec3([0, 1, 2].map(|a| if i >> a & 1 == 1 { h[a] } else { -h[a] })))
            .collect();
        let quads = [[0, 2, 6, 4], [1, 5, 7, 3], [0, 4, 5, 1], [2, 3, 7, 6], [0, 1, 3, 2], [4, 6, 7, 5]];
        let triangles = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
        let mesh = Mesh { vertices: c, triangles, vertex_class: vec![0; 8] };
        let scene = Scene {
            primitives: vec![ScenePrimitive::new(Shape::AxisBox { half_extents: h }, Pose::identity(), 0)],
            bounds: Aabb::new([-1.0; 3], [1.0; 3]),
            classes: vec!["b".into()],
        };
        (mesh, scene)
    }

    #[test]
    fn chamfer_of_exact_surface_is_zero() {
        let (mesh, scene) = flat_box_mesh();
        assert!((mesh.signed_volume().abs() - 0.75).abs() < 1e-12);
        let d = chamfer(&mesh, &scene, 2000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(d < 1e-5, "{d}");
    }

    #[test]
    fn chamfer_of_offset_sphere() {
        let f = FnField(|x: &Vec3| x.norm() - 1.1);
        let mesh = extract_mesh(&f, &GridSpec::nodes_covering(&Aabb::new([-1.5; 3], [1.5; 3]), 0.05), 0.0).unwrap();
        let scene = unit_sphere_scene();
        let a = chamfer(&mesh, &scene, 4000, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!((a - 0.1).abs() < 0.005, "{a}");
        let b = chamfer(&mesh, &scene, 8000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!((a - b).abs() / a < 0.05);
        assert!(matches!(chamfer(&Mesh::default(), &scene, 10, &mut ChaCha8Rng::seed_from_u64(3)), Err(Error::EmptyMesh)));
    }

    #[test]
    fn eikonal_residual_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts = uniform_points(&Aabb::new([-1.0; 3], [1.0; 3]), 50, &mut rng);
        assert!(eikonal_residual(&FnField(|x: &Vec3| x.x), &pts).unwrap() < 1e-9);
        assert!((eikonal_residual(&FnField(|_: &Vec3| 0.3), &pts).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_sign_accuracy_is_perfect() {
        let scene = tiny_scene();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts = far_points(&scene, 500, 0.1, &mut rng).unwrap();
        assert!(pts.iter().all(|p| sdf_oracle(&scene, p).abs() >= 0.1));
        assert_eq!(sign_accuracy(&scene, &scene, &pts).unwrap(), 1.0);
        let flipped = FnField(|x: &Vec3| -sdf_oracle(&scene, x));
        assert_eq!(sign_accuracy(&flipped, &scene, &pts).unwrap(), 0.0);
    }

    #[test]
    fn report_round_trips() {
        let scene = unit_sphere_scene();
        let mesh = extract_mesh(&scene, &GridSpec::nodes_covering(&scene.bounds, 0.1), 0.0).unwrap();
        let cam = Camera::with_fov(8, 6, 60.0, Pose::look_at(vec3([0.0, -3.0, 0.0]), Vec3::zeros(), Vec3::z()));
        let depth = render_depth(&mesh, &cam).unwrap();
        let mut report = EvalReport::default();
        report.set_depth(&depth_metrics(&depth, &depth).unwrap());
        report.chamfer = Some(0.125);
        let json = report.to_json().unwrap();
        assert_eq!(EvalReport::from_json(&json).unwrap(), report);
        assert_eq!(report.csv_row("x"), "x,,,0.0,0.0,0.0,1.0,0.125,,");
        assert_eq!(
            EvalReport::CSV_HEADER.split(',').count(),
            report.csv_row("x").split(',').count()
        );
    }
}
