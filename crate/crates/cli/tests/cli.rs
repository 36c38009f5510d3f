use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use weaksdf::extract::{FusedScene, Mesh};
use weaksdf::grid::{Label, OccupancyGrid};
use weaksdf::metrics::EvalReport;

const SPHERE_SCENE: &str = r#"{
  "primitives": [
    {"shape": {"kind": "sphere", "radius": 1.0},
     "pose": {"translation": [0, 0, 0], "euler_deg": [0, 0, 0]}, "class_id": 0}
  ],
  "bounds": {"min": [-2, -2, -2], "max": [2, 2, 2]},
  "classes": ["ball"]
}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_weaksdf"))
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

/// Writes a small config, deep-merged with `patch`, into a fresh directory.
fn setup(patch: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = serde_json::json!({
        "field": {"hidden": [8, 8], "channels": 2, "frequencies": 1, "feature_voxel": 0.5},
        "train": {"steps": 6, "learning_rate": 0.003, "counts": {"surface": 64, "occupied": 32, "free": 32, "uniform": 32}},
        "scan": {"rays_per_scan": 400},
        "extract": {"mesh_voxel": 0.25},
        "eval": {"chamfer_samples": 500, "sign_points": 500, "eikonal_points": 500}
    });
    if !patch.is_empty() {
        merge(&mut cfg, serde_json::from_str(patch).unwrap());
    }
    let path = dir.path().join("config.json");
    fs::write(&path, cfg.to_string()).unwrap();
    (dir, path)
}

fn run(args: &[&str], config: &Path, out: &Path) -> i32 {
    let o = bin()
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    if !o.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&o.stderr));
    }
    o.status.code().unwrap()
}

fn ok(args: &[&str], config: &Path, out: &Path) {
    assert_eq!(run(args, config, out), 0, "{args:?}");
}

fn occupied(g: &OccupancyGrid) -> usize {
    g.count(|l| matches!(l, Label::Occupied(_)))
}

#[test]
fn generate_writes_artifacts_deterministically() {
    let (dir, cfg) = setup("");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["generate"], &cfg, &a);
    ok(&["generate"], &cfg, &b);
    for f in ["config.json", "scene.json", "scans.ply", "occupancy.bin", "gt_depth/view_0.pgm"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let g = OccupancyGrid::load(&a.join("occupancy.bin")).unwrap();
    assert!(occupied(&g) > 0 && g.count(|l| l == Label::Free) > 0);
}

#[test]
fn finer_probes_never_lose_occupied_voxels() {
    let count = |factor: usize| {
        let (dir, cfg) = setup(&format!(r#"{{"occupancy": {{"probe_factor": {factor}}}}}"#));
        let out = dir.path().join("r");
        ok(&["generate"], &cfg, &out);
        occupied(&OccupancyGrid::load(&out.join("occupancy.bin")).unwrap())
    };
    assert!(count(4) >= count(1));
}

#[test]
fn echoed_config_is_complete_and_reloads() {
    let (dir, cfg) = setup("");
    let out = dir.path().join("r");
    ok(&["generate", "--seed", "9"], &cfg, &out);
    let echoed = fs::read_to_string(out.join("config.json")).unwrap();
    for key in ["\"sensors\"", "\"cameras\"", "\"grid\"", "\"primitives\"", "\"seed\": 9"] {
        assert!(echoed.contains(key), "{key}");
    }
    // A second command without --config picks the echo up unchanged.
    let o = bin().args(["generate", "--out"]).arg(&out).output().unwrap();
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(out.join("config.json")).unwrap(), echoed);
}

#[test]
fn train_mode_flag_selects_the_loss() {
    let (dir, cfg) = setup("");
    for mode in ["siren", "lode", "sandwich", "oracle"] {
        let out = dir.path().join(mode);
        ok(&["train", "--mode", mode], &cfg, &out);
        let log = fs::read_to_string(out.join("train/train_log.csv")).unwrap();
        assert_eq!(log.lines().next().unwrap(), format!("# mode={mode}"));
        assert_eq!(log.lines().count(), 2 + 6);
    }
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let (dir, full) = setup("");
    let whole = dir.path().join("whole");
    ok(&["train"], &full, &whole);

    let (dir2, half) = setup(r#"{"train": {"steps": 3}}"#);
    let split = dir2.path().join("split");
    ok(&["train"], &half, &split);
    ok(&["train", "--resume"], &full, &split);
    for f in ["train/train_log.csv", "train/field.bin", "train/state.bin"] {
        assert_eq!(fs::read(whole.join(f)).unwrap(), fs::read(split.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn occ_output_loads_as_a_grid() {
    let (dir, cfg) = setup("");
    let out = dir.path().join("r");
    ok(&["train"], &cfg, &out);
    ok(&["extract", "occ"], &cfg, &out);
    let pred = OccupancyGrid::load(&out.join("pred_occupancy.bin")).unwrap();
    let gt = OccupancyGrid::load(&out.join("occupancy.bin")).unwrap();
    assert_eq!(pred.spec, gt.spec);
    assert_eq!(pred.count(|l| l == Label::Unobserved), 0);

    // A higher threshold calls more voxels occupied.
    ok(&["extract", "occ", "--threshold", "0.5"], &cfg, &out);
    let loose = OccupancyGrid::load(&out.join("pred_occupancy.bin")).unwrap();
    assert!(occupied(&loose) >= occupied(&pred));
}

#[test]
fn larger_iso_encloses_more_volume() {
    // A few hundred oracle steps give a closed blob near the sphere.
    let (dir, cfg) = setup(&format!(
        r#"{{"scene": {SPHERE_SCENE}, "occupancy": {{"voxel_size": 0.25}},
            "scan": {{"sensors": [[0, -1.8, 1.5], [1.8, 1.0, 1.5]]}}, "train": {{"steps": 300}}}}"#
    ));
    let out = dir.path().join("r");
    ok(&["train", "--mode", "oracle"], &cfg, &out);
    let volume = |iso: &str| {
        ok(&["extract", "mesh", "--iso", iso], &cfg, &out);
        Mesh::load(&out.join("mesh.ply")).unwrap().signed_volume()
    };
    let v0 = volume("0.0");
    let echoed = fs::read_to_string(out.join("config.json")).unwrap();
    let v1 = volume("0.1");
    assert!(v1 > v0, "{v0} {v1}");
    assert_eq!(fs::read_to_string(out.join("config.json")).unwrap(), echoed);
}

#[test]
fn fusion_with_zero_momentum_keeps_the_last_frame() {
    let (dir, cfg) = setup("");
    let root = dir.path();
    for seed in ["1", "2", "3"] {
        ok(&["train", "--seed", seed], &cfg, &root.join(format!("s{seed}")));
    }
    let frame = |s: &str, x: f64| {
        format!(r#"{{"checkpoint": "{}", "pose": {{"translation": [{x}, 0, 0], "euler_deg": [0, 0, 10]}}}}"#,
            root.join(format!("s{s}/train/field.bin")).display())
    };
    let fused = |frames: &[String], name: &str| {
        let out = root.join(name);
        ok(&["train"], &cfg, &out);
        let text = fs::read_to_string(out.join("config.json")).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["extract"]["frames"] = serde_json::from_str(&format!("[{}]", frames.join(","))).unwrap();
        v["extract"]["momentum"] = 0.0.into();
        let c = out.join("fuse.json");
        fs::write(&c, v.to_string()).unwrap();
        ok(&["extract", "fuse"], &c, &out);
        FusedScene::load(&out.join("fused.bin")).unwrap()
    };
    let all = fused(&[frame("1", 0.0), frame("2", 0.3), frame("3", 0.0)], "all");
    let last = fused(&[frame("3", 0.0)], "last");
    // Cells only the earlier frames saw keep their values; the rest match.
    let mut compared = 0;
    for i in 0..all.counts.len() {
        if last.counts[i] > 0 {
            assert_eq!(all.sdf[i], last.sdf[i]);
            compared += 1;
        }
    }
    assert!(compared > 0);
}

#[test]
fn ground_truth_scores_perfectly_against_itself() {
    let (dir, cfg) = setup("");
    let out = dir.path().join("r");
    ok(&["generate"], &cfg, &out);
    let occ = out.join("occupancy.bin");
    let depth = out.join("gt_depth");
    let args = ["eval", "--occupancy", occ.to_str().unwrap(), "--depth", depth.to_str().unwrap()];
    ok(&args, &cfg, &out);
    let text = fs::read_to_string(out.join("eval.json")).unwrap();
    let report = EvalReport::from_json(&text).unwrap();
    assert_eq!(report.miou, Some(1.0));
    assert_eq!(report.geometric_iou, Some(1.0));
    assert_eq!(report.abs_rel, Some(0.0));
    assert_eq!(report.delta_1_25, Some(1.0));
    assert!(report.chamfer.is_none() && report.sign_accuracy.is_none());
    assert_eq!(report.to_json().unwrap(), text.trim_end());
}

#[test]
fn compare_emits_one_row_per_variant() {
    let (dir, cfg) = setup(r#"{"train": {"steps": 100}}"#);
    let out = dir.path().join("r");
    ok(&["compare"], &cfg, &out);
    let csv = fs::read_to_string(out.join("compare.csv")).unwrap();
    let runs: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(runs, ["siren", "lode", "sandwich", "sandwich_joint"]);
    assert_eq!(csv.lines().next().unwrap(), EvalReport::CSV_HEADER);
}

#[test]
fn exit_codes_distinguish_config_and_numeric_failures() {
    let (dir, cfg) = setup("");
    let out = dir.path().join("r");
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"trian": {}}"#).unwrap();
    assert_eq!(run(&["generate"], &bad, &out), 2);
    assert_eq!(run(&["generate"], &dir.path().join("missing.json"), &out), 2);
    ok(&["train"], &cfg, &out);
    // Nothing in the box reaches this level set.
    assert_eq!(run(&["extract", "mesh", "--iso", "1000"], &cfg, &out), 3);
}
