//! Training objectives and the per-step batch sampler.
//!
//! Every loss is a sum of per-point terms in φ, ∇ₓφ and the semantic logits,
//! so a step evaluates each point once, assembles the upstream derivatives of
//! all active terms and runs a single reverse pass per point.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{BatchEval, FieldParams, Want};
use crate::geometry::Vec3;
use crate::grid::{Label, OccupancyGrid};
use crate::scenegen::{sdf_oracle, PointSample, Scene};

/// Smoothing constant of the soft Dice loss.
pub const DICE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// γ₁…γ₈: Eikonal, normal, surface |φ|, occupied, free, SDF total,
    /// semantic total, joint total.
    pub gamma: [f64; 8],
    pub alpha: f64,
    pub beta: f64,
    pub t: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            gamma: [1.0, 1.0, 30.0, 0.05, 0.05, 1.0, 1.0, 1.0],
            alpha: 100.0,
            beta: 100.0,
            t: 0.005,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(Error::config("alpha and beta must be positive"));
        }
        if self.gamma.iter().any(|g| !(*g >= 0.0)) || !self.t.is_finite() {
            return Err(Error::config("loss weights must be non-negative and finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisionMode {
    Sandwich,
    Siren,
    Lode,
    Oracle,
}

impl SupervisionMode {
    pub const ALL: [SupervisionMode; 4] = [
        SupervisionMode::Sandwich,
        SupervisionMode::Siren,
        SupervisionMode::Lode,
        SupervisionMode::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SupervisionMode::Sandwich => "sandwich",
            SupervisionMode::Siren => "siren",
            SupervisionMode::Lode => "lode",
            SupervisionMode::Oracle => "oracle",
        }
    }

    /// Whether the mode's SDF supervision sees occupancy voxels, and hence
    /// whether the joint term applies.
    pub fn uses_voxels(self) -> bool {
        !matches!(self, SupervisionMode::Siren)
    }
}

impl std::str::FromStr for SupervisionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SupervisionMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown supervision mode `{s}`")))
    }
}

/// Points drawn per stratum each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchCounts {
    pub surface: usize,
    pub occupied: usize,
    pub free: usize,
    pub uniform: usize,
}

impl Default for BatchCounts {
    fn default() -> Self {
        BatchCounts {
            surface: 2048,
            occupied: 1024,
            free: 1024,
            uniform: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccVoxel {
    pub index: usize,
    pub class_id: usize,
    pub center: Vec3,
    pub probes: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreeVoxel {
    pub index: usize,
    pub center: Vec3,
    /// Uniform random point inside the voxel.
    pub position: Vec3,
    pub probes: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleBatch {
    pub surface: Vec<PointSample>,
    pub occ_voxels: Vec<OccVoxel>,
    pub free_voxels: Vec<FreeVoxel>,
    pub uniform: Vec<Vec3>,
}

fn draw(rng: &mut impl Rng, pool: usize, n: usize, what: &'static str) -> Result<Vec<usize>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if pool == 0 {
        return Err(Error::EmptyPool(what));
    }
    Ok(index::sample(rng, pool, n.min(pool)).into_vec())
}

fn point_in_box(rng: &mut impl Rng, lo: &Vec3, size: f64) -> Vec3 {
    lo + Vec3::new(
        rng.random::<f64>() * size,
        rng.random::<f64>() * size,
        rng.random::<f64>() * size,
    )
}

/// Draws one step's batch. Strata are drawn without replacement and capped
/// at the pool size; uniform points are drawn in observed voxels.
pub fn sample_batch(
    scans: &[PointSample],
    grid: &OccupancyGrid,
    counts: BatchCounts,
    subgrid_factor: usize,
    rng: &mut impl Rng,
) -> Result<SampleBatch> {
    if subgrid_factor == 0 {
        return Err(Error::config("subgrid_factor must be at least 1"));
    }
    let spec = &grid.spec;
    let surface = draw(rng, scans.len(), counts.surface, "surface samples")?
        .into_iter()
        .map(|i| scans[i].clone())
        .collect();

    let occ_pool = grid.indices_where(|l| matches!(l, Label::Occupied(_)));
    let occ_voxels = draw(rng, occ_pool.len(), counts.occupied, "occupied voxels")?
        .into_iter()
        .map(|k| {
            let index = occ_pool[k];
            let ijk = spec.coords(index);
            OccVoxel {
                index,
                class_id: grid.labels[index].class().unwrap(),
                center: spec.cell_center(ijk),
                probes: spec.sub_cell_centers(ijk, subgrid_factor),
            }
        })
        .collect();

    let free_pool = grid.indices_where(|l| l == Label::Free);
    let free_voxels = draw(rng, free_pool.len(), counts.free, "free voxels")?
        .into_iter()
        .map(|k| {
            let index = free_pool[k];
            let ijk = spec.coords(index);
            FreeVoxel {
                index,
                center: spec.cell_center(ijk),
                position: point_in_box(rng, &spec.node(ijk), spec.voxel_size),
                probes: spec.sub_cell_centers(ijk, subgrid_factor),
            }
        })
        .collect();

    let seen = grid.indices_where(Label::is_observed);
    let mut uniform = Vec::with_capacity(counts.uniform);
    if counts.uniform > 0 {
        if seen.is_empty() {
            return Err(Error::EmptyPool("observed voxels"));
        }
        for _ in 0..counts.uniform {
            let index = seen[rng.random_range(0..seen.len())];
            uniform.push(point_in_box(rng, &spec.node(spec.coords(index)), spec.voxel_size));
        }
    }
    Ok(SampleBatch {
        surface,
        occ_voxels,
        free_voxels,
        uniform,
    })
}

/// Free-space logit of a voxel whose minimum SDF is `min_phi`: the inverse
/// sigmoid of `softmax(β·t, β·min_phi)[1]`, evaluated in log space.
pub fn free_logit(min_phi: f64, beta: f64, t: f64) -> f64 {
    let a = beta * t;
    let b = beta * min_phi;
    let m = a.max(b);
    let lse = m + ((a - m).exp() + (b - m).exp()).ln();
    let log_p = b - lse;
    let log_q = a - lse;
    log_p - log_q
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(v);
    v.iter().map(|x| (x - lse).exp()).collect()
}

/// Cross-entropy of `softmax(logits)` against `class` and its derivative
/// with respect to the logits.
pub fn cross_entropy(logits: &[f64], class: usize) -> (f64, Vec<f64>) {
    let p = softmax(logits);
    let loss = log_sum_exp(logits) - logits[class];
    let mut d = p;
    d[class] -= 1.0;
    (loss, d)
}

/// Multi-class soft Dice loss `1 − mean_k (2Σpg + ε)/(Σp + Σg + ε)` over
/// probability rows `probs` with one-hot targets, and its derivative with
/// respect to each probability.
pub fn dice_loss(probs: &[Vec<f64>], targets: &[usize]) -> (f64, Vec<Vec<f64>>) {
    let k = probs.first().map_or(0, |p| p.len());
    let mut inter = vec![0.0; k];
    let mut denom = vec![DICE_EPS; k];
    for (p, &t) in probs.iter().zip(targets) {
        for c in 0..k {
            denom[c] += p[c];
        }
        inter[t] += p[t];
        denom[t] += 1.0;
    }
    let mut score = 0.0;
    for c in 0..k {
        score += (2.0 * inter[c] + DICE_EPS) / denom[c];
    }
    let loss = 1.0 - score / k as f64;
    let grads = probs
        .iter()
        .zip(targets)
        .map(|(_, &t)| {
            (0..k)
                .map(|c| {
                    let num = 2.0 * inter[c] + DICE_EPS;
                    let g = if c == t { 1.0 } else { 0.0 };
                    -(2.0 * g / denom[c] - num / (denom[c] * denom[c])) / k as f64
                })
                .collect()
        })
        .collect();
    (loss, grads)
}

/// Per-term breakdown of one objective evaluation. SDF subterms are
/// unweighted means; `sdf`, `semantic` and `joint` are the three
/// components of the total before γ₆…γ₈; absent terms are `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub eikonal: f64,
    pub normal: f64,
    pub surface: f64,
    pub occupied: f64,
    pub free: f64,
    pub off_surface: f64,
    pub oracle: f64,
    pub sdf: f64,
    pub semantic: Option<f64>,
    pub joint: Option<f64>,
    pub total: f64,
}

impl LossTerms {
    pub const CSV_HEADER: &'static str =
        "step,eikonal,normal,surface,occupied,free,off_surface,oracle,sdf,semantic,joint,total";

    pub fn csv_row(&self, step: u64) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:e}"));
        format!(
            "{step},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{},{:e}",
            self.eikonal,
            self.normal,
            self.surface,
            self.occupied,
            self.free,
            self.off_surface,
            self.oracle,
            self.sdf,
            opt(self.semantic),
            opt(self.joint),
            self.total
        )
    }
}

/// Multipliers on the three loss components (γ₆, γ₇, γ₈ in the total).
#[derive(Debug, Clone, Copy)]
struct Components {
    sdf: f64,
    semantic: f64,
    joint: f64,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn unit_or_zero(v: Vec3) -> Vec3 {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        Vec3::zeros()
    }
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Points of one batched evaluation and the upstream derivatives that the
/// loss terms assign to them.
struct Pass {
    points: Vec<Vec3>,
    eval: Option<BatchEval>,
    d_sdf: Vec<f64>,
    d_grad: Vec<Vec3>,
    d_logits: Vec<f64>,
}

impl Pass {
    fn new() -> Self {
        Pass {
            points: Vec::new(),
            eval: None,
            d_sdf: Vec::new(),
            d_grad: Vec::new(),
            d_logits: Vec::new(),
        }
    }

    /// Appends points and returns their index range.
    fn extend(&mut self, xs: impl IntoIterator<Item = Vec3>) -> std::ops::Range<usize> {
        let start = self.points.len();
        self.points.extend(xs);
        start..self.points.len()
    }

    fn run(&mut self, params: &FieldParams, want: Want) -> Result<()> {
        let xs: Vec<Vec3> = self.points.iter().map(|x| params.jitter_off_faces(x)).collect();
        let e = params.evaluate_batch(&xs, want)?;
        self.d_sdf = vec![0.0; xs.len()];
        self.d_grad = vec![Vec3::zeros(); if want.gradient { xs.len() } else { 0 }];
        self.d_logits = vec![0.0; e.logits.len()];
        self.eval = Some(e);
        Ok(())
    }

    fn e(&self) -> &BatchEval {
        self.eval.as_ref().unwrap()
    }

    fn backward(&self, params: &FieldParams, grad: &mut FieldParams) {
        if let Some(e) = &self.eval {
            let dg = (!self.d_grad.is_empty()).then_some(self.d_grad.as_slice());
            let dl = (!self.d_logits.is_empty()).then_some(self.d_logits.as_slice());
            e.backward(params, &self.d_sdf, dg, dl, grad);
        }
    }
}

struct Objective<'a> {
    params: &'a FieldParams,
    batch: &'a SampleBatch,
    w: &'a LossWeights,
    mode: SupervisionMode,
    oracle: Option<&'a Scene>,
    c: Components,
}

impl Objective<'_> {
    /// The probe with the smallest φ in each probe set.
    fn deepest<'b>(&self, sets: impl Iterator<Item = &'b [Vec3]> + Clone) -> Result<Vec<Vec3>> {
        let all: Vec<Vec3> = sets.clone().flatten().copied().collect();
        let phi = self.params.sdf_batch(&all)?;
        let mut out = Vec::new();
        let mut at = 0;
        for set in sets {
            let mut best = (at, f64::INFINITY);
            for i in at..at + set.len() {
                if phi[i] < best.1 {
                    best = (i, phi[i]);
                }
            }
            out.push(all[best.0]);
            at += set.len();
        }
        Ok(out)
    }

    fn run(&self, grad: Option<&mut FieldParams>) -> Result<LossTerms> {
        use SupervisionMode::*;
        let (w, b, mode) = (self.w, self.batch, self.mode);
        let g = &w.gamma;
        let want_sdf = self.c.sdf > 0.0;
        let want_sem = self.c.semantic > 0.0;
        let want_joint = self.c.joint > 0.0 && mode.uses_voxels();
        let sem_at_occ = want_sem || want_joint;
        if sem_at_occ && b.occ_voxels.is_empty() {
            return Err(Error::EmptyPool("occupied voxels"));
        }
        if want_joint && b.free_voxels.is_empty() {
            return Err(Error::EmptyPool("free voxels"));
        }

        let needs_occ_deepest = sem_at_occ || (want_sdf && mode == Sandwich);
        let occ_deepest = if needs_occ_deepest {
            self.deepest(b.occ_voxels.iter().map(|v| v.probes.as_slice()))?
        } else {
            Vec::new()
        };
        let free_deepest = if want_joint {
            self.deepest(b.free_voxels.iter().map(|v| v.probes.as_slice()))?
        } else {
            Vec::new()
        };

        // Points with spatial gradients; every one carries the Eikonal term.
        let mut gp = Pass::new();
        let (mut surf, mut occ, mut free, mut uni) = (0..0, 0..0, 0..0, 0..0);
        if want_sdf {
            if matches!(mode, Sandwich | Siren | Oracle) {
                surf = gp.extend(b.surface.iter().map(|s| s.position));
            }
            occ = match mode {
                Sandwich => gp.extend(occ_deepest.iter().copied()),
                Lode | Oracle => gp.extend(b.occ_voxels.iter().map(|v| v.center)),
                Siren => 0..0,
            };
            free = match mode {
                Sandwich | Oracle => gp.extend(b.free_voxels.iter().map(|v| v.position)),
                Lode => gp.extend(b.free_voxels.iter().map(|v| v.center)),
                Siren => 0..0,
            };
            uni = gp.extend(b.uniform.iter().copied());
            gp.run(self.params, Want::GRADIENT)?;
        }
        // Points with semantics: deepest probes of occupied, then free voxels.
        let mut sp = Pass::new();
        if sem_at_occ {
            sp.extend(occ_deepest.iter().copied());
            sp.extend(free_deepest.iter().copied());
            sp.run(self.params, Want::SEMANTICS)?;
        }

        let mut terms = LossTerms::default();
        let cs = self.c.sdf;
        if want_sdf {
            let n_all = gp.points.len();
            let mut sum = 0.0;
            for i in 0..n_all {
                let gr = gp.e().gradients[i];
                let r = gr.norm() - 1.0;
                sum += r.abs();
                gp.d_grad[i] += cs * g[0] / n_all as f64 * sign(r) * unit_or_zero(gr);
            }
            terms.eikonal = mean(sum, n_all);

            if mode != Oracle && !surf.is_empty() {
                let n = surf.len() as f64;
                let (mut sn, mut sa) = (0.0, 0.0);
                for (i, s) in surf.clone().zip(&b.surface) {
                    let diff = gp.e().gradients[i] - s.normal;
                    sn += diff.norm();
                    gp.d_grad[i] += cs * g[1] / n * unit_or_zero(diff);
                    let phi = gp.e().sdf[i];
                    sa += phi.abs();
                    gp.d_sdf[i] += cs * g[2] / n * sign(phi);
                }
                terms.normal = sn / n;
                terms.surface = sa / n;
            }
            match mode {
                Sandwich => {
                    let mut sum = 0.0;
                    for i in occ.clone() {
                        let e = (w.alpha * gp.e().sdf[i]).exp();
                        sum += e;
                        gp.d_sdf[i] += cs * g[3] / occ.len() as f64 * w.alpha * e;
                    }
                    terms.occupied = mean(sum, occ.len());
                }
                Lode => {
                    let mut sum = 0.0;
                    for i in occ.clone() {
                        let phi = gp.e().sdf[i];
                        sum += phi.abs();
                        gp.d_sdf[i] += cs * g[2] / occ.len() as f64 * sign(phi);
                    }
                    terms.surface = mean(sum, occ.len());
                }
                _ => {}
            }
            if matches!(mode, Sandwich | Lode) {
                let mut sum = 0.0;
                for i in free.clone() {
                    let e = (-w.alpha * gp.e().sdf[i]).exp();
                    sum += e;
                    gp.d_sdf[i] -= cs * g[4] / free.len() as f64 * w.alpha * e;
                }
                terms.free = mean(sum, free.len());
            }
            if mode == Siren {
                let mut sum = 0.0;
                for i in uni.clone() {
                    let phi = gp.e().sdf[i];
                    let e = (-w.alpha * phi.abs()).exp();
                    sum += e;
                    gp.d_sdf[i] -= cs * g[4] / uni.len() as f64 * w.alpha * e * sign(phi);
                }
                terms.off_surface = mean(sum, uni.len());
            }
            if mode == Oracle {
                let scene = self.oracle.ok_or_else(|| Error::config("oracle mode needs the scene"))?;
                let mut sum = 0.0;
                for i in 0..n_all {
                    let r = gp.e().sdf[i] - sdf_oracle(scene, &gp.e().positions[i]);
                    sum += r.abs();
                    gp.d_sdf[i] += cs / n_all as f64 * sign(r);
                }
                terms.oracle = mean(sum, n_all);
            }
            terms.sdf = match mode {
                Oracle => terms.oracle + g[0] * terms.eikonal,
                _ => {
                    g[0] * terms.eikonal
                        + g[1] * terms.normal
                        + g[2] * terms.surface
                        + g[3] * terms.occupied
                        + g[4] * (terms.free + terms.off_surface)
                }
            };
        }

        let s = self.params.arch.num_classes;
        let n_occ = b.occ_voxels.len();
        if want_sem {
            let mut sum = 0.0;
            for (i, v) in b.occ_voxels.iter().enumerate() {
                let (l, d) = cross_entropy(sp.e().logits_of(i), v.class_id);
                sum += l;
                for (a, b) in sp.d_logits[i * s..(i + 1) * s].iter_mut().zip(d) {
                    *a += self.c.semantic / n_occ as f64 * b;
                }
            }
            terms.semantic = Some(sum / n_occ as f64);
        }

        if want_joint {
            let n = sp.points.len();
            let targets: Vec<usize> = b
                .occ_voxels
                .iter()
                .map(|v| v.class_id)
                .chain(std::iter::repeat_n(s, n - n_occ))
                .collect();
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    let mut z = sp.e().logits_of(i).to_vec();
                    z.push(free_logit(sp.e().sdf[i], w.beta, w.t));
                    softmax(&z)
                })
                .collect();
            let (loss, dp) = dice_loss(&rows, &targets);
            for (i, (p, dp)) in rows.iter().zip(&dp).enumerate() {
                let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
                for (k, (pk, dk)) in p.iter().zip(dp).enumerate() {
                    let dz = self.c.joint * pk * (dk - dot);
                    if k < s {
                        sp.d_logits[i * s + k] += dz;
                    } else {
                        sp.d_sdf[i] += dz * w.beta;
                    }
                }
            }
            terms.joint = Some(loss);
        }

        terms.total = self.c.sdf * terms.sdf
            + self.c.semantic * terms.semantic.unwrap_or(0.0)
            + self.c.joint * terms.joint.unwrap_or(0.0);
        if !terms.total.is_finite() {
            return Err(Error::NonFiniteLoss { step: None });
        }

        if let Some(grad) = grad {
            gp.backward(self.params, grad);
            sp.backward(self.params, grad);
            if !grad.is_finite() {
                return Err(Error::NonFiniteGradient);
            }
        }
        Ok(terms)
    }
}

fn run(
    params: &FieldParams,
    batch: &SampleBatch,
    w: &LossWeights,
    mode: SupervisionMode,
    oracle: Option<&Scene>,
    c: Components,
) -> Result<(LossTerms, FieldParams)> {
    let mut grad = params.zeros_like();
    let terms = Objective { params, batch, w, mode, oracle, c }.run(Some(&mut grad))?;
    Ok((terms, grad))
}

const SDF_ONLY: Components = Components { sdf: 1.0, semantic: 0.0, joint: 0.0 };

/// Eikonal + normal + surface |φ| + occupied min-probe + free push-positive.
pub fn sandwich_sdf_loss(params: &FieldParams, batch: &SampleBatch, w: &LossWeights) -> Result<(f64, FieldParams)> {
    let (t, g) = run(params, batch, w, SupervisionMode::Sandwich, None, SDF_ONLY)?;
    Ok((t.total, g))
}

/// Surface terms plus `exp(−α|φ|)` on uniform samples; ignores voxels.
pub fn siren_sdf_loss(params: &FieldParams, batch: &SampleBatch, w: &LossWeights) -> Result<(f64, FieldParams)> {
    let (t, g) = run(params, batch, w, SupervisionMode::Siren, None, SDF_ONLY)?;
    Ok((t.total, g))
}

/// Occupied voxel centers as surface points, free voxel centers as
/// off-surface points; ignores the scans.
pub fn lode_sdf_loss(params: &FieldParams, batch: &SampleBatch, w: &LossWeights) -> Result<(f64, FieldParams)> {
    let (t, g) = run(params, batch, w, SupervisionMode::Lode, None, SDF_ONLY)?;
    Ok((t.total, g))
}

/// Mean `|φ − SDF|` against the exact scene SDF, plus the Eikonal term.
pub fn oracle_sdf_loss(
    params: &FieldParams,
    batch: &SampleBatch,
    scene: &Scene,
    w: &LossWeights,
) -> Result<(f64, FieldParams)> {
    let (t, g) = run(params, batch, w, SupervisionMode::Oracle, Some(scene), SDF_ONLY)?;
    Ok((t.total, g))
}

/// Mean cross-entropy of the semantic logits at each occupied voxel's
/// min-φ probe.
pub fn semantic_loss(params: &FieldParams, batch: &SampleBatch) -> Result<(f64, FieldParams)> {
    let c = Components { sdf: 0.0, semantic: 1.0, joint: 0.0 };
    let (t, g) = run(params, batch, &LossWeights::default(), SupervisionMode::Sandwich, None, c)?;
    Ok((t.total, g))
}

/// Soft Dice between `softmax(l_sem, l_free)` and the voxel labels (free on
/// the appended entry) over the sampled occupied and free voxels.
pub fn joint_dice_loss(params: &FieldParams, batch: &SampleBatch, w: &LossWeights) -> Result<(f64, FieldParams)> {
    let c = Components { sdf: 0.0, semantic: 0.0, joint: 1.0 };
    let (t, g) = run(params, batch, w, SupervisionMode::Sandwich, None, c)?;
    Ok((t.total, g))
}

/// `γ₆·L_sdf + γ₇·L_sem + γ₈·L_joint` with the SDF loss picked by `mode`.
/// The joint term is skipped (reported absent) in siren mode. `oracle`
/// must be given in oracle mode.
pub fn total_loss(
    params: &FieldParams,
    batch: &SampleBatch,
    w: &LossWeights,
    mode: SupervisionMode,
    oracle: Option<&Scene>,
) -> Result<(LossTerms, FieldParams)> {
    let c = Components {
        sdf: w.gamma[5],
        semantic: w.gamma[6],
        joint: w.gamma[7],
    };
    run(params, batch, w, mode, oracle, c)
}

/// As [`total_loss`] without the gradient.
pub fn total_loss_value(
    params: &FieldParams,
    batch: &SampleBatch,
    w: &LossWeights,
    mode: SupervisionMode,
    oracle: Option<&Scene>,
) -> Result<LossTerms> {
    let c = Components {
        sdf: w.gamma[5],
        semantic: w.gamma[6],
        joint: w.gamma[7],
    };
    Objective { params, batch, w, mode, oracle, c }.run(None)
}
