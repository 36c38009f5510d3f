//! One-file experiment configuration and the pipeline stages built on it:
//! generate the weak supervision, fit a field, extract outputs, evaluate.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::{
    extract_mesh, fuse_frame, predict_occupancy, render_depth, render_scene_depth, Camera, DepthMap, FusedScene,
    Mesh,
};
use crate::field::FieldParams;
use crate::geometry::{vec3, Aabb, Pose, Vec3};
use crate::grid::{GridSpec, OccupancyGrid};
use crate::io;
use crate::metrics::{
    chamfer, depth_metrics_pooled, eikonal_residual, far_points, geometric_iou, miou, sign_accuracy, uniform_points,
    EvalReport,
};
use crate::scenegen::{
    load_samples, sample_surface_scans, save_samples, sdf_oracle, visibility_mask, voxelize_occupancy, PointSample, ScanSpec,
    Scene, ScenePrimitive, Shape,
};
use crate::supervision::SupervisionMode;
use crate::train::{train_to_dir, FieldConfig, TrainConfig, TrainState, Trainer, FIELD_FILE, STATE_FILE};

pub const CONFIG_FILE: &str = "config.json";
pub const SCENE_FILE: &str = "scene.json";
pub const SCANS_FILE: &str = "scans.ply";
pub const OCCUPANCY_FILE: &str = "occupancy.bin";
pub const TRAIN_DIR: &str = "train";
pub const MESH_FILE: &str = "mesh.ply";
pub const PRED_OCCUPANCY_FILE: &str = "pred_occupancy.bin";
pub const FUSED_FILE: &str = "fused.bin";
pub const EVAL_JSON: &str = "eval.json";
pub const EVAL_CSV: &str = "eval.csv";
pub const COMPARE_CSV: &str = "compare.csv";
pub const DEPTH_DIR: &str = "depth";
pub const GT_DEPTH_DIR: &str = "gt_depth";

/// The scene, inline or as a path to a scene JSON (relative paths resolve
/// against the config file's directory).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SceneSource {
    Path(PathBuf),
    Inline(Scene),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OccupancyConfig {
    pub voxel_size: f64,
    pub probe_factor: usize,
    /// Defaults to cells of `voxel_size` tiling the scene bounds.
    pub grid: Option<GridSpec>,
}

impl Default for OccupancyConfig {
    fn default() -> Self {
        OccupancyConfig {
            voxel_size: 0.4,
            probe_factor: 2,
            grid: None,
        }
    }
}

/// A field checkpoint placed in the world for fusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSpec {
    /// Defaults to this experiment's trained field.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub iso: f64,
    /// Node spacing of the marching-cubes lattice over the scene bounds.
    pub mesh_voxel: f64,
    /// Sub-cell probes per axis for occupancy prediction.
    pub subgrid_factor: usize,
    pub momentum: f64,
    /// Defaults to two views of the scene center.
    pub cameras: Vec<Camera>,
    /// Defaults to the trained field at the identity pose.
    pub frames: Vec<FrameSpec>,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            iso: 0.0,
            mesh_voxel: 0.1,
            subgrid_factor: 2,
            momentum: 0.9,
            cameras: Vec::new(),
            frames: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub seed: u64,
    pub chamfer_samples: usize,
    pub sign_points: usize,
    /// Sign accuracy only uses points at least this far from the surface.
    pub sign_margin: f64,
    pub eikonal_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seed: 0,
            chamfer_samples: 10_000,
            sign_points: 10_000,
            sign_margin: 0.1,
            eikonal_points: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scene: SceneSource,
    pub occupancy: OccupancyConfig,
    pub scan: ScanSpec,
    pub field: FieldConfig,
    pub train: TrainConfig,
    pub extract: ExtractConfig,
    pub eval: EvalConfig,
}

/// Two spheres on a ground plane in an 8 × 8 × 4 m box.
pub fn two_spheres_scene() -> Scene {
    let sphere = |c: [f64; 3], r: f64, class| {
        ScenePrimitive::new(Shape::Sphere { radius: r }, Pose::translation(vec3(c)), class)
    };
    Scene {
        primitives: vec![
            ScenePrimitive::new(Shape::HalfSpace, Pose::identity(), 0),
            sphere([-1.5, 0.5, 1.0], 1.0, 1),
            sphere([1.5, -1.0, 0.8], 0.8, 2),
        ],
        bounds: Aabb::new([-4.0, -4.0, -1.0], [4.0, 4.0, 3.0]),
        classes: vec!["ground".into(), "sphere_a".into(), "sphere_b".into()],
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scene: SceneSource::Inline(two_spheres_scene()),
            occupancy: OccupancyConfig::default(),
            scan: ScanSpec::default(),
            field: FieldConfig::default(),
            train: TrainConfig::default(),
            extract: ExtractConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Three sensors above the ground, spread around the middle of the bounds.
pub fn default_sensors(bounds: &Aabb) -> Vec<[f64; 3]> {
    let (c, e) = (bounds.center(), bounds.extent());
    [(0.0, 0.3125, 0.125), (-0.3125, -0.3125, 0.125), (0.3125, 0.25, 0.25)]
        .iter()
        .map(|&(fx, fy, fz)| [c.x + fx * e.x, c.y + fy * e.y, c.z + fz * e.z])
        .collect()
}

/// Two 64 × 48 views from above opposite sides of the bounds, aimed at the
/// lower middle of the box.
pub fn default_cameras(bounds: &Aabb) -> Vec<Camera> {
    let (c, e) = (bounds.center(), bounds.extent());
    let target = c - Vec3::new(0.0, 0.0, 0.25 * e.z);
    [(-0.45, -0.45), (0.45, 0.4)]
        .iter()
        .map(|&(fx, fy)| {
            let eye = c + Vec3::new(fx * e.x, fy * e.y, 0.45 * e.z);
            Camera::with_fov(64, 48, 70.0, Pose::look_at(eye, target, Vec3::z()))
        })
        .collect()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        io::read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    /// Loads the scene and fills every derived default, so the returned
    /// config written out reproduces the run without hidden values.
    pub fn materialize(mut self, base_dir: &Path) -> Result<(Self, Scene)> {
        let scene = match &self.scene {
            SceneSource::Inline(s) => s.clone(),
            SceneSource::Path(p) => {
                let p = if p.is_absolute() { p.clone() } else { base_dir.join(p) };
                io::read_json::<Scene>(&p)?
            }
        };
        scene.validate()?;
        if self.occupancy.grid.is_none() {
            self.occupancy.grid = Some(GridSpec::cells_covering(&scene.bounds, self.occupancy.voxel_size));
        }
        if self.scan.sensors.is_empty() {
            self.scan.sensors = default_sensors(&scene.bounds);
        }
        for s in &self.scan.sensors {
            let p = Vec3::from(*s);
            if !scene.bounds.contains(&p) || sdf_oracle(&scene, &p) <= 0.0 {
                return Err(Error::config(format!("sensor {s:?} is outside the bounds or inside geometry")));
            }
        }
        if self.extract.cameras.is_empty() {
            self.extract.cameras = default_cameras(&scene.bounds);
        }
        if self.extract.frames.is_empty() {
            self.extract.frames = vec![FrameSpec {
                checkpoint: None,
                pose: Pose::identity(),
            }];
        }
        self.validate()?;
        Ok((self, scene))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.occupancy.voxel_size > 0.0) || self.occupancy.probe_factor == 0 {
            return Err(Error::config("occupancy needs a positive voxel size and probe factor"));
        }
        if let Some(g) = &self.occupancy.grid {
            g.validate()?;
        }
        if self.scan.sensors.is_empty() || self.scan.rays_per_scan == 0 {
            return Err(Error::config("scan needs at least one sensor and one ray"));
        }
        self.train.validate()?;
        let x = &self.extract;
        if !(x.mesh_voxel > 0.0) || x.subgrid_factor == 0 || !(0.0..1.0).contains(&x.momentum) {
            return Err(Error::config("extract needs mesh_voxel > 0, subgrid_factor ≥ 1 and momentum in [0, 1)"));
        }
        for c in &x.cameras {
            c.validate()?;
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        self.occupancy.grid.ok_or_else(|| Error::config("occupancy grid not materialized"))
    }
}

/// Weak supervision simulated from the scene.
#[derive(Debug, Clone)]
pub struct Generated {
    pub samples: Vec<PointSample>,
    /// Visibility-masked occupancy ground truth.
    pub occupancy: OccupancyGrid,
}

pub fn generate(cfg: &ExperimentConfig, scene: &Scene) -> Result<Generated> {
    let samples = sample_surface_scans(scene, &cfg.scan)?;
    let full = voxelize_occupancy(scene, &cfg.grid_spec()?, cfg.occupancy.probe_factor)?;
    let occupancy = visibility_mask(scene, &full, &cfg.scan.sensors, &samples);
    Ok(Generated { samples, occupancy })
}

pub fn save_generated(scene: &Scene, g: &Generated, dir: &Path) -> Result<()> {
    io::write_json(&dir.join(SCENE_FILE), scene)?;
    save_samples(&dir.join(SCANS_FILE), &g.samples)?;
    g.occupancy.save(&dir.join(OCCUPANCY_FILE))
}

pub fn load_generated(dir: &Path) -> Result<(Scene, Generated)> {
    let scene: Scene = io::read_json(&dir.join(SCENE_FILE))?;
    let samples = load_samples(&dir.join(SCANS_FILE))?;
    let occupancy = OccupancyGrid::load(&dir.join(OCCUPANCY_FILE))?;
    Ok((scene, Generated { samples, occupancy }))
}

/// Fits the field, writing logs and checkpoints under `dir`. Resumes from
/// `dir/state.bin` when `resume` is set and the file exists.
pub fn train(cfg: &ExperimentConfig, scene: &Scene, g: &Generated, dir: &Path, resume: bool) -> Result<TrainState> {
    let arch = cfg.field.arch(&scene.bounds, scene.num_classes())?;
    let state_path = dir.join(STATE_FILE);
    let mut state = if resume && state_path.exists() {
        let s = TrainState::load(&state_path)?;
        if s.params.arch != arch {
            return Err(Error::config("saved state does not match the configured field"));
        }
        s
    } else {
        TrainState::new(arch, cfg.train.seed)?
    };
    let trainer = Trainer {
        scans: &g.samples,
        grid: &g.occupancy,
        oracle: (cfg.train.mode == SupervisionMode::Oracle).then_some(scene),
        config: &cfg.train,
    };
    train_to_dir(&trainer, &mut state, dir)?;
    Ok(state)
}

pub fn trained_field(dir: &Path) -> Result<FieldParams> {
    FieldParams::load(&dir.join(TRAIN_DIR).join(FIELD_FILE))
}

pub fn mesh_lattice(cfg: &ExperimentConfig, scene: &Scene) -> GridSpec {
    GridSpec::nodes_covering(&scene.bounds, cfg.extract.mesh_voxel)
}

pub fn extract_field_mesh(cfg: &ExperimentConfig, scene: &Scene, params: &FieldParams) -> Result<Mesh> {
    extract_mesh(params, &mesh_lattice(cfg, scene), cfg.extract.iso)
}

pub fn predict_field_occupancy(cfg: &ExperimentConfig, scene: &Scene, params: &FieldParams) -> Result<OccupancyGrid> {
    predict_occupancy(
        params,
        &cfg.grid_spec()?,
        &cfg.train.weights,
        cfg.extract.subgrid_factor,
        scene.classes.clone(),
    )
}

/// Fuses the configured frames in order into a scene-sized world grid.
/// `default_field` stands in for frames without a checkpoint path.
pub fn fuse(cfg: &ExperimentConfig, scene: &Scene, default_field: &FieldParams, base_dir: &Path) -> Result<FusedScene> {
    let mut fused = FusedScene::new(cfg.grid_spec()?, scene.classes.clone());
    for frame in &cfg.extract.frames {
        fused = match &frame.checkpoint {
            None => fuse_frame(fused, default_field, &frame.pose, cfg.extract.momentum)?,
            Some(p) => {
                let p = if p.is_absolute() { p.clone() } else { base_dir.join(p) };
                fuse_frame(fused, &FieldParams::load(&p)?, &frame.pose, cfg.extract.momentum)?
            }
        };
    }
    Ok(fused)
}

/// Per-view depth maps: predicted under [`DEPTH_DIR`], ground truth under
/// [`GT_DEPTH_DIR`].
pub fn view_file(dir: &Path, view: usize) -> PathBuf {
    dir.join(format!("view_{view}.pgm"))
}

pub fn scene_depth_maps(cfg: &ExperimentConfig, scene: &Scene) -> Result<Vec<DepthMap>> {
    cfg.extract.cameras.iter().map(|c| render_scene_depth(scene, c)).collect()
}

pub fn mesh_depth_maps(cfg: &ExperimentConfig, mesh: &Mesh) -> Result<Vec<DepthMap>> {
    cfg.extract.cameras.iter().map(|c| render_depth(mesh, c)).collect()
}

pub fn save_depth_maps(dir: &Path, maps: &[DepthMap]) -> Result<()> {
    maps.iter().enumerate().try_for_each(|(i, m)| m.save(&view_file(dir, i)))
}

/// Loads `view_0.pgm`, `view_1.pgm`, ... until the first missing index.
pub fn load_depth_maps(dir: &Path) -> Result<Vec<DepthMap>> {
    let mut out = Vec::new();
    while view_file(dir, out.len()).exists() {
        out.push(DepthMap::load(&view_file(dir, out.len()))?);
    }
    Ok(out)
}

/// Whatever outputs are available for evaluation; each one fills its own
/// part of the report.
#[derive(Debug, Default, Clone, Copy)]
pub struct Artifacts<'a> {
    pub occupancy: Option<&'a OccupancyGrid>,
    /// (predicted, ground truth) per view.
    pub depth: &'a [(DepthMap, DepthMap)],
    pub mesh: Option<&'a Mesh>,
    pub field: Option<&'a FieldParams>,
}

pub fn evaluate_artifacts(
    cfg: &ExperimentConfig,
    scene: &Scene,
    gt: &OccupancyGrid,
    a: Artifacts<'_>,
) -> Result<EvalReport> {
    let e = &cfg.eval;
    let rng = |stream| {
        let mut r = ChaCha8Rng::seed_from_u64(e.seed);
        r.set_stream(stream);
        r
    };
    let mut report = EvalReport::default();
    if let Some(pred) = a.occupancy {
        report.set_iou(&miou(pred, gt)?);
        report.geometric_iou = Some(geometric_iou(pred, gt)?);
    }
    if !a.depth.is_empty() {
        let refs: Vec<_> = a.depth.iter().map(|(p, g)| (p, g)).collect();
        report.set_depth(&depth_metrics_pooled(&refs)?);
    }
    if let Some(mesh) = a.mesh {
        report.chamfer = Some(chamfer(mesh, scene, e.chamfer_samples, &mut rng(0))?);
    }
    if let Some(field) = a.field {
        let far = far_points(scene, e.sign_points, e.sign_margin, &mut rng(1))?;
        report.sign_accuracy = Some(sign_accuracy(field, scene, &far)?);
        let interior = uniform_points(&scene.bounds, e.eikonal_points, &mut rng(2));
        report.eikonal_residual = Some(eikonal_residual(field, &interior)?);
    }
    Ok(report)
}

/// Every metric of the report for a fitted field against the analytic
/// scene and the (visibility-masked) occupancy ground truth.
pub fn evaluate(
    cfg: &ExperimentConfig,
    scene: &Scene,
    gt: &OccupancyGrid,
    params: &FieldParams,
    mesh: Option<&Mesh>,
) -> Result<EvalReport> {
    let pred = predict_field_occupancy(cfg, scene, params)?;
    let depth: Vec<_> = match mesh {
        Some(m) => mesh_depth_maps(cfg, m)?.into_iter().zip(scene_depth_maps(cfg, scene)?).collect(),
        None => Vec::new(),
    };
    evaluate_artifacts(
        cfg,
        scene,
        gt,
        Artifacts {
            occupancy: Some(&pred),
            depth: &depth,
            mesh,
            field: Some(params),
        },
    )
}

/// Runs every stage into `dir` and returns the report. Mesh metrics are
/// left empty when the field has no zero level set.
pub fn run_all(cfg: &ExperimentConfig, scene: &Scene, dir: &Path) -> Result<EvalReport> {
    cfg.save(&dir.join(CONFIG_FILE))?;
    let g = generate(cfg, scene)?;
    save_generated(scene, &g, dir)?;
    let state = train(cfg, scene, &g, &dir.join(TRAIN_DIR), false)?;
    // A field without a zero crossing still gets its voxel and field metrics.
    let mesh = match extract_field_mesh(cfg, scene, &state.params) {
        Ok(m) => Some(m),
        Err(Error::EmptyMesh) => None,
        Err(e) => return Err(e),
    };
    if let Some(m) = &mesh {
        m.save(&dir.join(MESH_FILE))?;
    }
    let report = evaluate(cfg, scene, &g.occupancy, &state.params, mesh.as_ref())?;
    report.save(&dir.join(EVAL_JSON))?;
    io::write_file(
        &dir.join(EVAL_CSV),
        format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row(cfg.train.mode.name())).as_bytes(),
    )?;
    Ok(report)
}

/// The ablation variants in table order. The joint term is switched off
/// everywhere except the last.
pub fn ablation_variants(cfg: &ExperimentConfig) -> Vec<(&'static str, ExperimentConfig)> {
    let variant = |mode, joint: bool| {
        let mut c = cfg.clone();
        c.train.mode = mode;
        if !joint {
            c.train.weights.gamma[7] = 0.0;
        }
        c
    };
    vec![
        ("siren", variant(SupervisionMode::Siren, false)),
        ("lode", variant(SupervisionMode::Lode, false)),
        ("sandwich", variant(SupervisionMode::Sandwich, false)),
        ("sandwich_joint", variant(SupervisionMode::Sandwich, true)),
    ]
}

/// Runs every ablation variant into `dir/<name>` and writes one CSV row per
/// variant to `dir/compare.csv`.
pub fn compare(cfg: &ExperimentConfig, scene: &Scene, dir: &Path) -> Result<Vec<(&'static str, EvalReport)>> {
    let mut rows = Vec::new();
    let mut csv = format!("{}\n", EvalReport::CSV_HEADER);
    for (name, c) in ablation_variants(cfg) {
        let report = run_all(&c, scene, &dir.join(name))?;
        csv.push_str(&report.csv_row(name));
        csv.push('\n');
        rows.push((name, report));
    }
    io::write_file(&dir.join(COMPARE_CSV), csv.as_bytes())?;
    Ok(rows)
}
