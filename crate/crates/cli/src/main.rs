//! `weaksdf` command line: generate weak supervision, fit a field, extract
//! meshes, occupancy and fused grids, evaluate, and run the ablation.
//!
//! Every command reads the experiment config (`--config`, else
//! `<out>/config.json`, else built-in defaults) and writes the fully
//! materialized config back to `<out>/config.json`. The extraction flags
//! (`--iso`, `--threshold`, `--momentum`) are not written back.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use weaksdf::experiment::{self as exp, Artifacts, ExperimentConfig, SceneSource};
use weaksdf::extract::Mesh;
use weaksdf::field::FieldParams;
use weaksdf::grid::{Label, OccupancyGrid};
use weaksdf::io;
use weaksdf::metrics::EvalReport;
use weaksdf::scenegen::Scene;
use weaksdf::supervision::SupervisionMode;
use weaksdf::{Error, Result};

#[derive(Parser)]
#[command(name = "weaksdf", version, about = "Semantic SDF fitting under weak supervision")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON). Missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate scans, occupancy ground truth and ground-truth depth views.
    Generate,
    /// Fit the field; generates the supervision first if it is missing.
    Train {
        #[arg(long)]
        mode: Option<SupervisionMode>,
        /// Continue from `<out>/train/state.bin`.
        #[arg(long)]
        resume: bool,
    },
    /// Turn a fitted field into a mesh, an occupancy grid or a fused grid.
    Extract {
        #[command(subcommand)]
        what: ExtractCmd,
        /// Field checkpoint; defaults to `<out>/train/field.bin`.
        #[arg(long, global = true)]
        checkpoint: Option<PathBuf>,
    },
    /// Score whatever outputs exist against the ground truth.
    Eval {
        #[arg(long)]
        occupancy: Option<PathBuf>,
        /// Directory of predicted `view_<i>.pgm` depth maps.
        #[arg(long)]
        depth: Option<PathBuf>,
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Occupancy ground truth; defaults to `<out>/occupancy.bin`.
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Train and evaluate every ablation variant; writes `compare.csv`.
    Compare,
}

#[derive(Subcommand)]
enum ExtractCmd {
    /// Semantic mesh plus depth renders of the configured cameras.
    Mesh {
        #[arg(long)]
        iso: Option<f64>,
    },
    /// Semantic occupancy on the ground-truth grid.
    Occ {
        /// SDF threshold t of the free-space logit.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Momentum fusion of the configured frames.
    Fuse {
        #[arg(long)]
        momentum: Option<f64>,
    },
}

struct Run {
    cfg: ExperimentConfig,
    scene: Scene,
    out: PathBuf,
}

impl Run {
    fn open(common: &Common, edit: impl FnOnce(&mut ExperimentConfig)) -> Result<Self> {
        let echoed = common.out.join(exp::CONFIG_FILE);
        let (mut cfg, base) = match &common.config {
            Some(p) => (ExperimentConfig::load(p)?, p.parent().unwrap_or(Path::new("")).to_path_buf()),
            None if echoed.exists() => (ExperimentConfig::load(&echoed)?, common.out.clone()),
            None => (ExperimentConfig::default(), PathBuf::from(".")),
        };
        if let Some(seed) = common.seed {
            cfg.train.seed = seed;
        }
        edit(&mut cfg);
        let (mut cfg, scene) = cfg.materialize(&base)?;
        cfg.scene = SceneSource::Inline(scene.clone());
        cfg.save(&echoed)?;
        Ok(Run {
            cfg,
            scene,
            out: common.out.clone(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn generated(&self) -> Result<exp::Generated> {
        if self.path(exp::SCANS_FILE).exists() && self.path(exp::OCCUPANCY_FILE).exists() {
            return Ok(exp::load_generated(&self.out)?.1);
        }
        self.generate()
    }

    fn generate(&self) -> Result<exp::Generated> {
        let g = exp::generate(&self.cfg, &self.scene)?;
        exp::save_generated(&self.scene, &g, &self.out)?;
        exp::save_depth_maps(&self.path(exp::GT_DEPTH_DIR), &exp::scene_depth_maps(&self.cfg, &self.scene)?)?;
        Ok(g)
    }

    fn field(&self, checkpoint: Option<&Path>) -> Result<FieldParams> {
        match checkpoint {
            Some(p) => FieldParams::load(p),
            None => exp::trained_field(&self.out),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match cli.command {
        Command::Generate => {
            let r = Run::open(common, |_| {})?;
            let g = r.generate()?;
            let (occ, free, unobs) = label_counts(&g.occupancy);
            println!("{} scan points, {occ} occupied / {free} free / {unobs} unobserved voxels", g.samples.len());
        }
        Command::Train { mode, resume } => {
            let r = Run::open(common, |c| {
                if let Some(m) = mode {
                    c.train.mode = m;
                }
            })?;
            let g = r.generated()?;
            let state = exp::train(&r.cfg, &r.scene, &g, &r.path(exp::TRAIN_DIR), resume)?;
            println!("trained {} steps ({})", state.step, r.cfg.train.mode.name());
        }
        Command::Extract { what, checkpoint } => {
            // Extraction flags apply to this invocation only.
            let mut r = Run::open(common, |_| {})?;
            match what {
                ExtractCmd::Mesh { iso: Some(iso) } => r.cfg.extract.iso = iso,
                ExtractCmd::Occ { threshold: Some(t) } => r.cfg.train.weights.t = t,
                ExtractCmd::Fuse { momentum: Some(m) } => r.cfg.extract.momentum = m,
                _ => {}
            }
            r.cfg.validate()?;
            let field = r.field(checkpoint.as_deref())?;
            match what {
                ExtractCmd::Mesh { .. } => {
                    let mesh = exp::extract_field_mesh(&r.cfg, &r.scene, &field)?;
                    mesh.save(&r.path(exp::MESH_FILE))?;
                    exp::save_depth_maps(&r.path(exp::DEPTH_DIR), &exp::mesh_depth_maps(&r.cfg, &mesh)?)?;
                    println!("{} vertices, {} triangles", mesh.vertices.len(), mesh.triangles.len());
                }
                ExtractCmd::Occ { .. } => {
                    let grid = exp::predict_field_occupancy(&r.cfg, &r.scene, &field)?;
                    grid.save(&r.path(exp::PRED_OCCUPANCY_FILE))?;
                    let (occ, free, _) = label_counts(&grid);
                    println!("{occ} occupied / {free} free voxels");
                }
                ExtractCmd::Fuse { .. } => {
                    let fused = exp::fuse(&r.cfg, &r.scene, &field, &r.out)?;
                    fused.save(&r.path(exp::FUSED_FILE))?;
                    println!("fused {} frames", r.cfg.extract.frames.len());
                }
            }
        }
        Command::Eval {
            occupancy,
            depth,
            mesh,
            checkpoint,
            gt,
        } => {
            let r = Run::open(common, |_| {})?;
            let pick = |given: Option<PathBuf>, default: &str| given.or_else(|| Some(r.path(default)).filter(|p| p.exists()));
            let gt_grid = match &gt {
                Some(p) => OccupancyGrid::load(p)?,
                None => r.generated()?.occupancy,
            };
            let pred = pick(occupancy, exp::PRED_OCCUPANCY_FILE).map(|p| OccupancyGrid::load(&p)).transpose()?;
            let mesh = pick(mesh, exp::MESH_FILE).map(|p| Mesh::load(&p)).transpose()?;
            let field = match checkpoint {
                Some(p) => Some(FieldParams::load(&p)?),
                None => exp::trained_field(&r.out).ok(),
            };
            let depth_pairs = match pick(depth, exp::DEPTH_DIR) {
                Some(dir) => {
                    let predicted = exp::load_depth_maps(&dir)?;
                    let truth = exp::load_depth_maps(&r.path(exp::GT_DEPTH_DIR))?;
                    if predicted.len() != truth.len() {
                        return Err(Error::config(format!(
                            "{} predicted depth views but {} ground-truth views",
                            predicted.len(),
                            truth.len()
                        )));
                    }
                    predicted.into_iter().zip(truth).collect()
                }
                None => Vec::new(),
            };
            if pred.is_none() && mesh.is_none() && field.is_none() && depth_pairs.is_empty() {
                return Err(Error::config(format!("nothing to evaluate in {}", r.out.display())));
            }
            let report = exp::evaluate_artifacts(
                &r.cfg,
                &r.scene,
                &gt_grid,
                Artifacts {
                    occupancy: pred.as_ref(),
                    depth: &depth_pairs,
                    mesh: mesh.as_ref(),
                    field: field.as_ref(),
                },
            )?;
            write_report(&r, &report)?;
            println!("{}", report.to_json()?);
        }
        Command::Compare => {
            let r = Run::open(common, |_| {})?;
            let rows = exp::compare(&r.cfg, &r.scene, &r.out)?;
            println!("{}", EvalReport::CSV_HEADER);
            for (name, report) in rows {
                println!("{}", report.csv_row(name));
            }
        }
    }
    Ok(())
}

fn write_report(r: &Run, report: &EvalReport) -> Result<()> {
    report.save(&r.path(exp::EVAL_JSON))?;
    let csv = format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row(r.cfg.train.mode.name()));
    io::write_file(&r.path(exp::EVAL_CSV), csv.as_bytes())
}

fn label_counts(g: &OccupancyGrid) -> (usize, usize, usize) {
    (
        g.count(|l| matches!(l, Label::Occupied(_))),
        g.count(|l| l == Label::Free),
        g.count(|l| l == Label::Unobserved),
    )
}
