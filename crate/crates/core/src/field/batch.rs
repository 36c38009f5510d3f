//! Batched evaluation: the same computation as [`PointEval`](super::PointEval)
//! laid out as dense matrices so each layer is a single GEMM.
//!
//! Activations are row-major `features × (points · lanes)`; lane 0 of each
//! point holds the value and lanes 1..4 (when present) the x/y/z tangents.

use super::trig::sin_cos;
use super::{CellQuery, FieldParams, MlpHead, Want};
use crate::error::{Error, Result};
use crate::geometry::{arr3, Vec3};
use std::f64::consts::PI;

/// `c = a·b + beta·c` for a row-major `m × n` output, with arbitrary strides
/// on `a` (`m × k`) and `b` (`k × n`).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone)]
struct Trace {
    lanes: usize,
    cols: usize,
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    /// `cos(ω₀z)` per unit and point for each sine layer.
    cosines: Vec<Vec<f64>>,
}

impl MlpHead {
    fn forward_batch(&self, input: Vec<f64>, lanes: usize, cols: usize) -> Trace {
        let last = self.layers.len() - 1;
        let w0 = self.omega0;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut cosines = Vec::with_capacity(last);
        for (l, layer) in self.layers.iter().enumerate() {
            let act = if l == 0 { &input } else { &post[l - 1] };
            let mut z = vec![0.0; layer.outputs * cols];
            gemm(
                layer.outputs,
                layer.inputs,
                cols,
                &layer.weights,
                (layer.inputs, 1),
                act,
                (cols, 1),
                0.0,
                &mut z,
            );
            for (r, row) in z.chunks_exact_mut(cols.max(1)).enumerate() {
                let b = layer.bias[r];
                for v in row.iter_mut().step_by(lanes) {
                    *v += b;
                }
            }
            let a = if l < last {
                let mut a = vec![0.0; z.len()];
                let mut cs = Vec::with_capacity(z.len() / lanes);
                for (zp, ap) in z.chunks_exact(lanes).zip(a.chunks_exact_mut(lanes)) {
                    let (s, c) = sin_cos(w0 * zp[0]);
                    ap[0] = s;
                    for k in 1..lanes {
                        ap[k] = w0 * c * zp[k];
                    }
                    cs.push(c);
                }
                cosines.push(cs);
                a
            } else {
                z.clone()
            };
            pre.push(z);
            post.push(a);
        }
        Trace { lanes, cols, input, pre, post, cosines }
    }

    /// Accumulates parameter gradients and returns the adjoint of the first
    /// `input_rows` input features.
    fn backward_batch(&self, t: &Trace, output_bar: Vec<f64>, input_rows: usize, grad: &mut MlpHead) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let w0 = self.omega0;
        let (lanes, cols) = (t.lanes, t.cols);
        let mut a_bar = output_bar;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let a_in = if l == 0 { &t.input } else { &t.post[l - 1] };
            let z_bar = if l < last {
                let mut zb = vec![0.0; a_bar.len()];
                for ((((zp, ap), &c), ab), out) in t.pre[l]
                    .chunks_exact(lanes)
                    .zip(t.post[l].chunks_exact(lanes))
                    .zip(&t.cosines[l])
                    .zip(a_bar.chunks_exact(lanes))
                    .zip(zb.chunks_exact_mut(lanes))
                {
                    let s = ap[0];
                    let mut curvature = 0.0;
                    for k in 1..lanes {
                        out[k] = ab[k] * w0 * c;
                        curvature += ab[k] * zp[k];
                    }
                    out[0] = ab[0] * w0 * c - w0 * w0 * s * curvature;
                }
                zb
            } else {
                a_bar
            };
            let g = &mut grad.layers[l];
            gemm(
                layer.outputs,
                cols,
                layer.inputs,
                &z_bar,
                (cols, 1),
                a_in,
                (1, cols),
                1.0,
                &mut g.weights,
            );
            for (r, row) in z_bar.chunks_exact(cols.max(1)).enumerate() {
                g.bias[r] += row.iter().step_by(lanes).sum::<f64>();
            }
            let rows = if l == 0 { input_rows } else { layer.inputs };
            let mut in_bar = vec![0.0; rows * cols];
            gemm(
                rows,
                layer.outputs,
                cols,
                &layer.weights,
                (1, layer.inputs),
                &z_bar,
                (cols, 1),
                0.0,
                &mut in_bar,
            );
            a_bar = in_bar;
        }
        a_bar
    }
}

/// Cached evaluation of the field at many positions.
#[derive(Debug, Clone)]
pub struct BatchEval {
    pub positions: Vec<Vec3>,
    pub sdf: Vec<f64>,
    /// Empty unless the gradient was requested.
    pub gradients: Vec<Vec3>,
    /// Point-major `points × classes`; empty unless semantics were requested.
    pub logits: Vec<f64>,
    pub num_classes: usize,
    cells: Vec<CellQuery>,
    sdf_trace: Trace,
    sem_trace: Option<Trace>,
}

impl BatchEval {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn logits_of(&self, i: usize) -> &[f64] {
        &self.logits[i * self.num_classes..(i + 1) * self.num_classes]
    }

    /// Accumulates `Σᵢ d_sdf[i]·∂φᵢ/∂θ + d_grad[i]·∂∇φᵢ/∂θ + d_logits[i]·∂Sᵢ/∂θ`
    /// into `grad`. `d_logits` is point-major like [`BatchEval::logits`].
    pub fn backward(
        &self,
        params: &FieldParams,
        d_sdf: &[f64],
        d_grad: Option<&[Vec3]>,
        d_logits: Option<&[f64]>,
        grad: &mut FieldParams,
    ) {
        let n = self.len();
        if n == 0 {
            return;
        }
        let ch = params.grid.channels;
        let t = &self.sdf_trace;
        let lanes = t.lanes;
        assert!(d_grad.is_none() || lanes == 4, "evaluation did not trace the spatial gradient");
        let mut out_bar = vec![0.0; t.cols];
        for p in 0..n {
            out_bar[p * lanes] = d_sdf[p];
            if let Some(dg) = d_grad {
                out_bar[p * lanes + 1] = dg[p].x;
                out_bar[p * lanes + 2] = dg[p].y;
                out_bar[p * lanes + 3] = dg[p].z;
            }
        }
        let bar = params.sdf_head.backward_batch(t, out_bar, ch, &mut grad.sdf_head);
        self.scatter(&bar, lanes, ch, grad);
        if let Some(dl) = d_logits {
            let st = self.sem_trace.as_ref().expect("evaluation did not trace the semantic head");
            let s = self.num_classes;
            let mut out_bar = vec![0.0; s * n];
            for p in 0..n {
                for r in 0..s {
                    out_bar[r * n + p] = dl[p * s + r];
                }
            }
            let bar = params.sem_head.backward_batch(st, out_bar, ch, &mut grad.sem_head);
            self.scatter(&bar, 1, ch, grad);
        }
    }

    fn scatter(&self, bar: &[f64], lanes: usize, ch: usize, grad: &mut FieldParams) {
        let cols = self.len() * lanes;
        for (p, cell) in self.cells.iter().enumerate() {
            for (c, &offset) in cell.corners.iter().enumerate() {
                let w = &cell.weights[c];
                for k in 0..ch {
                    let row = &bar[k * cols + p * lanes..k * cols + (p + 1) * lanes];
                    let s: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum();
                    grad.grid.values[offset + k] += s;
                }
            }
        }
    }
}

impl FieldParams {
    fn batch_input(&self, xs: &[Vec3], cells: &[CellQuery], lanes: usize) -> Vec<f64> {
        let ch = self.grid.channels;
        let cols = xs.len() * lanes;
        let mut input = vec![0.0; self.arch.input_dim() * cols];
        let e = self.arch.bounds.extent();
        for (p, (x, cell)) in xs.iter().zip(cells).enumerate() {
            for (c, &offset) in cell.corners.iter().enumerate() {
                let w = &cell.weights[c];
                for (k, v) in self.grid.values[offset..offset + ch].iter().enumerate() {
                    let dst = &mut input[k * cols + p * lanes..k * cols + (p + 1) * lanes];
                    for j in 0..lanes {
                        dst[j] += w[j] * v;
                    }
                }
            }
            let xn = self.normalize(x);
            let mut row = ch;
            for a in 0..3 {
                let chain = 2.0 / e[a];
                for j in 0..self.arch.pe.frequencies {
                    let freq = (1u64 << j) as f64 * PI;
                    let (s, c) = sin_cos(freq * xn[a]);
                    input[row * cols + p * lanes] = s;
                    input[(row + 1) * cols + p * lanes] = c;
                    if lanes > 1 {
                        input[row * cols + p * lanes + a + 1] = freq * c * chain;
                        input[(row + 1) * cols + p * lanes + a + 1] = -freq * s * chain;
                    }
                    row += 2;
                }
            }
        }
        input
    }

    /// Evaluates the field at every position in `xs`, keeping what `want`
    /// needs for [`BatchEval::backward`].
    pub fn evaluate_batch(&self, xs: &[Vec3], want: Want) -> Result<BatchEval> {
        let n = xs.len();
        let cells: Vec<CellQuery> = xs.iter().map(|x| self.cell_query(x)).collect();
        let lanes = if want.gradient { 4 } else { 1 };
        let sdf_trace = self
            .sdf_head
            .forward_batch(self.batch_input(xs, &cells, lanes), lanes, n * lanes);
        let out = sdf_trace.post.last().unwrap();
        let sdf: Vec<f64> = (0..n).map(|p| out[p * lanes]).collect();
        let gradients: Vec<Vec3> = if want.gradient {
            (0..n)
                .map(|p| Vec3::new(out[p * 4 + 1], out[p * 4 + 2], out[p * 4 + 3]))
                .collect()
        } else {
            Vec::new()
        };
        let s = self.arch.num_classes;
        let (sem_trace, logits) = if want.semantics {
            let input = if lanes == 1 {
                sdf_trace.input.clone()
            } else {
                sdf_trace.input.iter().step_by(4).copied().collect()
            };
            let t = self.sem_head.forward_batch(input, 1, n);
            let out = t.post.last().unwrap();
            let mut logits = vec![0.0; n * s];
            for p in 0..n {
                for r in 0..s {
                    logits[p * s + r] = out[r * n + p];
                }
            }
            (Some(t), logits)
        } else {
            (None, Vec::new())
        };
        for p in 0..n {
            let bad = !sdf[p].is_finite()
                || gradients.get(p).is_some_and(|g| !g.iter().all(|v| v.is_finite()))
                || logits.get(p * s..(p + 1) * s).is_some_and(|l| !l.iter().all(|v| v.is_finite()));
            if bad {
                return Err(Error::NonFiniteOutput(arr3(&xs[p])));
            }
        }
        Ok(BatchEval {
            positions: xs.to_vec(),
            sdf,
            gradients,
            logits,
            num_classes: s,
            cells,
            sdf_trace,
            sem_trace,
        })
    }

    /// φ at many positions, evaluated in bounded chunks.
    pub fn sdf_batch(&self, xs: &[Vec3]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(BATCH_CHUNK) {
            out.extend(self.evaluate_batch(chunk, Want::SDF)?.sdf);
        }
        Ok(out)
    }

    /// Logits at many positions (point-major), evaluated in bounded chunks.
    pub fn logits_batch(&self, xs: &[Vec3]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(xs.len() * self.arch.num_classes);
        for chunk in xs.chunks(BATCH_CHUNK) {
            out.extend(self.evaluate_batch(chunk, Want::SEMANTICS)?.logits);
        }
        Ok(out)
    }
}

const BATCH_CHUNK: usize = 4096;

#[cfg(test)]
mod tests {
    use super::super::Contribution;
    use super::*;
    use crate::testutil::{tiny_params, tiny_scene};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn points(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.5..0.5),
                )
            })
            .collect()
    }

    #[test]
    fn batch_forward_matches_point_path() {
        let p = tiny_params(&tiny_scene(), 3);
        let xs = points(37, 1);
        let b = p.evaluate_batch(&xs, Want::ALL).unwrap();
        for (i, x) in xs.iter().enumerate() {
            let e = p.evaluate(x, Want::ALL).unwrap();
            assert!((b.sdf[i] - e.sdf).abs() < 1e-13);
            assert!((b.gradients[i] - e.gradient.unwrap()).norm() < 1e-11);
            for (a, c) in b.logits_of(i).iter().zip(e.logits.unwrap()) {
                assert!((a - c).abs() < 1e-13);
            }
        }
        let plain = p.sdf_batch(&xs).unwrap();
        for (a, c) in plain.iter().zip(&b.sdf) {
            assert!((a - c).abs() < 1e-13);
        }
    }

    #[test]
    fn batch_backward_matches_point_path() {
        let p = tiny_params(&tiny_scene(), 4);
        let xs = points(23, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = p.arch.num_classes;
        let d_sdf: Vec<f64> = xs.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let d_grad: Vec<Vec3> = xs
            .iter()
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let d_logits: Vec<f64> = (0..xs.len() * s).map(|_| rng.random_range(-1.0..1.0)).collect();
        let contributions: Vec<Contribution> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| Contribution {
                position: *x,
                d_sdf: d_sdf[i],
                d_gradient: Some(d_grad[i]),
                d_logits: Some(d_logits[i * s..(i + 1) * s].to_vec()),
            })
            .collect();
        let expect = p.backward(&contributions).unwrap();
        let mut got = p.zeros_like();
        let b = p.evaluate_batch(&xs, Want::ALL).unwrap();
        b.backward(&p, &d_sdf, Some(&d_grad), Some(&d_logits), &mut got);
        for (a, c) in got.to_flat().iter().zip(expect.to_flat()) {
            assert!((a - c).abs() <= 1e-10 * (1.0 + c.abs()), "{a} vs {c}");
        }

        // Value-only path.
        let mut got = p.zeros_like();
        let b = p.evaluate_batch(&xs, Want::SDF).unwrap();
        b.backward(&p, &d_sdf, None, None, &mut got);
        let contributions: Vec<Contribution> = xs
            .iter()
            .zip(&d_sdf)
            .map(|(x, d)| Contribution { position: *x, d_sdf: *d, d_gradient: None, d_logits: None })
            .collect();
        let expect = p.backward(&contributions).unwrap();
        for (a, c) in got.to_flat().iter().zip(expect.to_flat()) {
            assert!((a - c).abs() <= 1e-10 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn empty_batch() {
        let p = tiny_params(&tiny_scene(), 4);
        let b = p.evaluate_batch(&[], Want::ALL).unwrap();
        assert!(b.is_empty());
        let mut g = p.zeros_like();
        b.backward(&p, &[], Some(&[]), Some(&[]), &mut g);
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }
}
