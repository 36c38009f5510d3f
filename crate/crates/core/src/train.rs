//! Adam optimization loop with CSV logging, checkpoints and exact resume.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldArch, FieldParams, PeSpec};
use crate::geometry::Aabb;
use crate::grid::{GridSpec, OccupancyGrid};
use crate::io;
use crate::scenegen::{PointSample, Scene};
use crate::supervision::{sample_batch, total_loss, BatchCounts, LossTerms, LossWeights, SupervisionMode};

/// Field shape knobs; the box and class count come from the scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    /// Spacing of the feature-grid nodes (meters).
    pub feature_voxel: f64,
    pub channels: usize,
    pub frequencies: usize,
    pub hidden: [usize; 2],
    pub omega0: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            feature_voxel: 0.2,
            channels: 8,
            frequencies: 4,
            hidden: [64, 64],
            omega0: 30.0,
        }
    }
}

impl FieldConfig {
    pub fn arch(&self, bounds: &Aabb, num_classes: usize) -> Result<FieldArch> {
        if !(self.feature_voxel > 0.0) {
            return Err(Error::config("feature_voxel must be positive"));
        }
        let arch = FieldArch {
            bounds: *bounds,
            grid: GridSpec::nodes_covering(bounds, self.feature_voxel),
            channels: self.channels,
            pe: PeSpec { frequencies: self.frequencies },
            hidden: self.hidden,
            omega0: self.omega0,
            num_classes,
        };
        arch.validate()?;
        Ok(arch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: SupervisionMode,
    pub weights: LossWeights,
    pub steps: u64,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub counts: BatchCounts,
    pub subgrid_factor: usize,
    pub seed: u64,
    /// Write a resumable checkpoint every this many steps (0: final only).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: SupervisionMode::Sandwich,
            weights: LossWeights::default(),
            steps: 5000,
            learning_rate: 1e-4,
            adam: AdamConfig::default(),
            counts: BatchCounts::default(),
            subgrid_factor: 2,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(Error::config("adam betas must lie in [0, 1) and epsilon be positive"));
        }
        if self.subgrid_factor == 0 {
            return Err(Error::config("subgrid_factor must be at least 1"));
        }
        self.weights.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: FieldParams,
    pub m: FieldParams,
    pub v: FieldParams,
    pub step: u64,
    /// Batch sampler stream.
    pub rng: ChaCha8Rng,
}

const STATE_MAGIC: &[u8; 8] = b"WSDFTRST";

#[derive(Serialize, Deserialize)]
struct StateHeader {
    arch: FieldArch,
    step: u64,
    rng_seed: Vec<u8>,
    rng_stream: u64,
    /// Decimal string; JSON numbers cannot hold a u128 losslessly.
    rng_word_pos: String,
    params: usize,
}

impl TrainState {
    /// Fresh state: parameters from stream 0 of `seed`, sampler on stream 1.
    pub fn new(arch: FieldArch, seed: u64) -> Result<Self> {
        let params = FieldParams::initialized(arch, &mut ChaCha8Rng::seed_from_u64(seed))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(TrainState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            params,
            step: 0,
            rng,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = StateHeader {
            arch: self.params.arch.clone(),
            step: self.step,
            rng_seed: self.rng.get_seed().to_vec(),
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
            params: self.params.num_params(),
        };
        let mut payload = Vec::new();
        for p in [&self.params, &self.m, &self.v] {
            io::push_f64s(&mut payload, &p.to_flat());
        }
        io::encode_container(STATE_MAGIC, &header, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, mut payload): (StateHeader, _) = io::decode_container(STATE_MAGIC, bytes)?;
        let seed: [u8; 32] = h
            .rng_seed
            .as_slice()
            .try_into()
            .map_err(|_| Error::format("rng seed must be 32 bytes"))?;
        let word_pos: u128 = h.rng_word_pos.parse().map_err(|_| Error::format("bad rng word position"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(h.rng_stream);
        rng.set_word_pos(word_pos);
        let mut parts = Vec::new();
        for _ in 0..3 {
            let mut p = FieldParams::zeros(h.arch.clone())?;
            if p.num_params() != h.params {
                return Err(Error::format("parameter count does not match the architecture"));
            }
            p.set_flat(&io::take_f64s(&mut payload, h.params)?)?;
            parts.push(p);
        }
        if !payload.is_empty() {
            return Err(Error::format("trailing bytes after training state"));
        }
        let v = parts.pop().unwrap();
        let m = parts.pop().unwrap();
        let params = parts.pop().unwrap();
        Ok(TrainState { params, m, v, step: h.step, rng })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&io::read_file(path)?)
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(state: &mut TrainState, grad: &FieldParams, learning_rate: f64, adam: &AdamConfig) -> Result<()> {
    if !grad.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - adam.beta1.powi(t);
    let c2 = 1.0 - adam.beta2.powi(t);
    let blocks = state
        .params
        .blocks_mut()
        .into_iter()
        .zip(state.m.blocks_mut())
        .zip(state.v.blocks_mut())
        .zip(grad.blocks());
    for (((p, m), v), g) in blocks {
        for i in 0..p.len() {
            m[i] = adam.beta1 * m[i] + (1.0 - adam.beta1) * g[i];
            v[i] = adam.beta2 * v[i] + (1.0 - adam.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= learning_rate * m_hat / (v_hat.sqrt() + adam.epsilon);
        }
    }
    Ok(())
}

/// Training inputs: the weak supervision and, for oracle mode only, the scene.
pub struct Trainer<'a> {
    pub scans: &'a [PointSample],
    pub grid: &'a OccupancyGrid,
    pub oracle: Option<&'a Scene>,
    pub config: &'a TrainConfig,
}

impl Trainer<'_> {
    /// Samples a batch, evaluates the loss and applies one Adam update.
    pub fn step(&self, state: &mut TrainState) -> Result<LossTerms> {
        let c = self.config;
        let at = state.step + 1;
        let tag = |e: Error| match e {
            Error::NonFiniteLoss { .. } | Error::NonFiniteGradient | Error::NonFiniteOutput(_) => {
                Error::NonFiniteLoss { step: Some(at) }
            }
            e => e,
        };
        let batch = sample_batch(self.scans, self.grid, c.counts, c.subgrid_factor, &mut state.rng)?;
        let (terms, grad) = total_loss(&state.params, &batch, &c.weights, c.mode, self.oracle).map_err(tag)?;
        adam_step(state, &grad, c.learning_rate, &c.adam).map_err(tag)?;
        Ok(terms)
    }

    /// Runs until `config.steps`, calling `on_step` after every update.
    pub fn run(
        &self,
        state: &mut TrainState,
        mut on_step: impl FnMut(&TrainState, &LossTerms) -> Result<()>,
    ) -> Result<()> {
        self.config.validate()?;
        if self.config.mode == SupervisionMode::Oracle && self.oracle.is_none() {
            return Err(Error::config("oracle mode needs the scene"));
        }
        while state.step < self.config.steps {
            let terms = self.step(state)?;
            on_step(state, &terms)?;
        }
        Ok(())
    }
}

pub const LOG_FILE: &str = "train_log.csv";
pub const FIELD_FILE: &str = "field.bin";
pub const STATE_FILE: &str = "state.bin";

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("checkpoint_{step:06}.bin"))
}

/// Runs `trainer` from `state`, writing the CSV log, periodic resumable
/// checkpoints, and the final `state.bin` / `field.bin` under `dir`.
/// When resuming, log rows past the resumed step are dropped first.
pub fn train_to_dir(trainer: &Trainer, state: &mut TrainState, dir: &Path) -> Result<()> {
    let log_path = dir.join(LOG_FILE);
    let mut log = String::new();
    if state.step > 0 {
        let old = String::from_utf8(io::read_file(&log_path)?).map_err(|_| Error::format("log is not UTF-8"))?;
        for line in old.lines() {
            let keep = match line.split(',').next().and_then(|s| s.parse::<u64>().ok()) {
                Some(step) => step <= state.step,
                None => true,
            };
            if keep {
                log.push_str(line);
                log.push('\n');
            }
        }
    } else {
        let _ = writeln!(log, "# mode={}", trainer.config.mode.name());
        let _ = writeln!(log, "{}", LossTerms::CSV_HEADER);
    }
    let every = trainer.config.checkpoint_every;
    let result = trainer.run(state, |s, terms| {
        let _ = writeln!(log, "{}", terms.csv_row(s.step));
        if every > 0 && s.step % every == 0 {
            s.save(&checkpoint_path(dir, s.step))?;
            io::write_file(&log_path, log.as_bytes())?;
        }
        Ok(())
    });
    io::write_file(&log_path, log.as_bytes())?;
    result?;
    state.save(&dir.join(STATE_FILE))?;
    state.params.save(&dir.join(FIELD_FILE))
}

/// Reads the mode line and loss rows back from a training log.
pub fn read_log(path: &Path) -> Result<(SupervisionMode, Vec<(u64, f64)>)> {
    let text = String::from_utf8(io::read_file(path)?).map_err(|_| Error::format("log is not UTF-8"))?;
    let mut lines = text.lines();
    let mode = lines
        .next()
        .and_then(|l| l.strip_prefix("# mode="))
        .ok_or_else(|| Error::format("log lacks the mode line"))?
        .parse()?;
    let mut rows = Vec::new();
    for line in lines.skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let step = cells[0].parse().map_err(|_| Error::format("bad log step"))?;
        let total = cells
            .last()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| Error::format("bad log total"))?;
        rows.push((step, total));
    }
    Ok((mode, rows))
}
