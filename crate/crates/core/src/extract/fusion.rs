use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::grid::{GridExtras, GridSpec, Label, OccupancyGrid};
use crate::io;

use super::{argmax, ImplicitField};

/// World grid accumulating per-cell SDF and semantic logits over frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedScene {
    pub spec: GridSpec,
    pub class_names: Vec<String>,
    pub sdf: Vec<f64>,
    /// Cell-major `cells × classes`.
    pub logits: Vec<f64>,
    pub counts: Vec<u32>,
}

impl FusedScene {
    pub fn new(spec: GridSpec, class_names: Vec<String>) -> Self {
        let n = spec.len();
        FusedScene {
            sdf: vec![0.0; n],
            logits: vec![0.0; n * class_names.len()],
            counts: vec![0; n],
            spec,
            class_names,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn cell_logits(&self, i: usize) -> &[f64] {
        let s = self.num_classes();
        &self.logits[i * s..(i + 1) * s]
    }

    /// Unobserved where no frame reached the cell, free where the fused SDF
    /// is non-negative, otherwise the fused semantic argmax.
    pub fn labels(&self) -> OccupancyGrid {
        let labels = (0..self.spec.len())
            .map(|i| {
                if self.counts[i] == 0 {
                    Label::Unobserved
                } else if self.sdf[i] >= 0.0 || self.num_classes() == 0 {
                    Label::Free
                } else {
                    Label::Occupied(argmax(self.cell_logits(i)) as u8)
                }
            })
            .collect();
        OccupancyGrid {
            spec: self.spec,
            class_names: self.class_names.clone(),
            labels,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let extras = GridExtras {
            sdf: self.sdf.clone(),
            logits: self.logits.clone(),
            counts: self.counts.clone(),
        };
        self.labels().to_bytes_with_extras(Some(&extras))
    }

    /// Values come back at f32 precision.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (grid, extras) = OccupancyGrid::from_bytes_with_extras(bytes)?;
        let x = extras.ok_or_else(|| Error::format("grid file has no fused SDF payload"))?;
        Ok(FusedScene {
            spec: grid.spec,
            class_names: grid.class_names,
            sdf: x.sdf,
            logits: x.logits,
            counts: x.counts,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&io::read_file(path)?)
    }
}

/// Folds one frame into `history`. The frame's field lives in its own
/// coordinates, placed in the world by `pose`; world cell centers inside the
/// field's domain are queried. A cell's first observation is written as is,
/// later ones blend as `v ← m·v_old + (1 − m)·v_new`.
pub fn fuse_frame<F: ImplicitField + ?Sized>(
    mut history: FusedScene,
    frame: &F,
    pose: &Pose,
    momentum: f64,
) -> Result<FusedScene> {
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::config("momentum must lie in [0, 1)"));
    }
    let s = history.num_classes();
    if frame.num_classes() != s {
        return Err(Error::config("frame and fused scene disagree on the class count"));
    }
    let domain = frame.domain();
    let mut cells = Vec::new();
    let mut local: Vec<Vec3> = Vec::new();
    for i in 0..history.spec.len() {
        let x = pose.to_local(&history.spec.cell_center(history.spec.coords(i)));
        if domain.is_none_or(|d| d.contains(&x)) {
            cells.push(i);
            local.push(x);
        }
    }
    let sdf = frame.sdf_values(&local)?;
    let logits = if s > 0 { frame.logits(&local)? } else { Vec::new() };
    for (k, &i) in cells.iter().enumerate() {
        let (keep, new) = if history.counts[i] == 0 { (0.0, 1.0) } else { (momentum, 1.0 - momentum) };
        history.sdf[i] = keep * history.sdf[i] + new * sdf[k];
        for c in 0..s {
            let v = &mut history.logits[i * s + c];
            *v = keep * *v + new * logits[k * s + c];
        }
        history.counts[i] += 1;
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::FnField;
    use crate::geometry::{vec3, Aabb};
    use crate::testutil::{tiny_params, tiny_scene};

    struct Constant {
        sdf: f64,
        logits: Vec<f64>,
    }

    impl ImplicitField for Constant {
        fn sdf_values(&self, xs: &[Vec3]) -> Result<Vec<f64>> {
            Ok(vec![self.sdf; xs.len()])
        }
        fn num_classes(&self) -> usize {
            self.logits.len()
        }
        fn logits(&self, xs: &[Vec3]) -> Result<Vec<f64>> {
            Ok(xs.iter().flat_map(|_| self.logits.clone()).collect())
        }
    }

    fn world() -> FusedScene {
        FusedScene::new(GridSpec::new([0.0; 3], 0.5, [3, 2, 2]), vec!["a".into(), "b".into()])
    }

    #[test]
    fn single_frame_is_a_direct_query() {
        let scene = tiny_scene();
        let params = tiny_params(&scene, 1);
        let spec = GridSpec::cells_covering(&scene.bounds, 0.25);
        let fused = fuse_frame(FusedScene::new(spec, scene.classes.clone()), &params, &Pose::identity(), 0.9).unwrap();
        let centers: Vec<Vec3> = (0..spec.len()).map(|i| spec.cell_center(spec.coords(i))).collect();
        assert_eq!(fused.sdf, params.sdf_batch(&centers).unwrap());
        assert_eq!(fused.logits, params.logits_batch(&centers).unwrap());
        assert!(fused.counts.iter().all(|&c| c == 1));
    }

    #[test]
    fn repeated_constant_converges_geometrically() {
        let target = Constant { sdf: 0.3, logits: vec![-1.0, 2.0] };
        for m in [0.0, 0.5, 0.9] {
            let mut fused = fuse_frame(world(), &Constant { sdf: -2.0, logits: vec![4.0, 0.5] }, &Pose::identity(), m).unwrap();
            for k in 1..=12 {
                fused = fuse_frame(fused, &target, &Pose::identity(), m).unwrap();
                let expect = m.powi(k) * (-2.0f64 - 0.3).abs();
                assert!(((fused.sdf[0] - 0.3).abs() - expect).abs() < 1e-12);
                let expect = m.powi(k) * (0.5f64 - 2.0).abs();
                assert!(((fused.logits[1] - 2.0).abs() - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_frames_are_a_fixed_point() {
        let f = Constant { sdf: -0.7, logits: vec![0.25, 0.5] };
        let once = fuse_frame(world(), &f, &Pose::identity(), 0.9).unwrap();
        let twice = fuse_frame(once.clone(), &f, &Pose::identity(), 0.9).unwrap();
        assert_eq!(once.sdf, twice.sdf);
        assert_eq!(once.logits, twice.logits);
        assert!(twice.counts.iter().all(|&c| c == 2));
    }

    #[test]
    fn zero_momentum_is_last_frame_wins() {
        let frames = [-1.0, 0.5, 2.0].map(|v| Constant { sdf: v, logits: vec![v, -v] });
        let mut fused = world();
        for f in &frames {
            fused = fuse_frame(fused, f, &Pose::identity(), 0.0).unwrap();
        }
        assert!(fused.sdf.iter().all(|&v| v == 2.0));
        assert!(fused.counts.iter().all(|&c| c == 3));
    }

    #[test]
    fn frame_pose_and_domain_select_cells() {
        struct Boxed;
        impl ImplicitField for Boxed {
            fn sdf_values(&self, xs: &[Vec3]) -> Result<Vec<f64>> {
                Ok(xs.iter().map(|x| x.x).collect())
            }
            fn domain(&self) -> Option<Aabb> {
                Some(Aabb::new([-0.5; 3], [0.5; 3]))
            }
        }
        let spec = GridSpec::new([0.0; 3], 0.5, [4, 1, 1]);
        let pose = Pose::translation(vec3([0.75, 0.25, 0.25]));
        let fused = fuse_frame(FusedScene::new(spec, vec![]), &Boxed, &pose, 0.5).unwrap();
        // Cell centers at x = 0.25, 0.75, 1.25, 1.75 → local x = -0.5, 0, 0.5, 1.
        assert_eq!(fused.counts, vec![1, 1, 1, 0]);
        assert_eq!(&fused.sdf[..3], &[-0.5, 0.0, 0.5]);
        assert!(fuse_frame(fused, &FnField(|_: &Vec3| 0.0), &pose, 1.0).is_err());
    }

    #[test]
    fn file_round_trip() {
        let f = Constant { sdf: -0.1, logits: vec![0.2, 0.7] };
        let mut fused = fuse_frame(world(), &f, &Pose::translation(vec3([0.6, 0.0, 0.0])), 0.9).unwrap();
        fused.counts[0] = 0;
        let bytes = fused.to_bytes().unwrap();
        let back = FusedScene::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.counts, fused.counts);
        assert!(back.sdf.iter().zip(&fused.sdf).all(|(a, b)| (a - b).abs() < 1e-7));
        let grid = OccupancyGrid::from_bytes(&bytes).unwrap();
        assert_eq!(grid.labels[0], Label::Unobserved);
        assert_eq!(grid.labels[1], Label::Occupied(1));
    }
}
