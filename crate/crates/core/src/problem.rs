//! Finite-sum objectives `f = (1/n) sum_i f_i`, `f_i = (1/m_i) sum_j f_ij`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::SparseRow;
use crate::stacked::{dot, norm_sq};

/// A distributed finite-sum objective.
///
/// Implementors provide the per-component cost and gradient; the averaged
/// local and global quantities are derived here. Gradient calls are pure, so
/// a problem can be shared across worker threads.
pub trait FiniteSumProblem: Sync {
    fn agents(&self) -> usize;

    /// `m_i`.
    fn samples(&self, agent: usize) -> usize;

    fn dim(&self) -> usize;

    /// `f_ij(x)`, unchecked indices.
    fn component_cost_unchecked(&self, agent: usize, sample: usize, x: &[f64]) -> f64;

    /// Writes `grad f_ij(x)` into `out`, unchecked indices.
    fn component_grad_into(&self, agent: usize, sample: usize, x: &[f64], out: &mut [f64]);

    /// Upper bound on the smoothness constant of every component.
    fn lipschitz_estimate(&self) -> f64;

    fn total_samples(&self) -> usize {
        (0..self.agents()).map(|i| self.samples(i)).sum()
    }

    fn component_grad(&self, agent: usize, sample: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_indices(agent, sample, x)?;
        let mut out = vec![0.0; self.dim()];
        self.component_grad_into(agent, sample, x, &mut out);
        Ok(out)
    }

    fn component_cost(&self, agent: usize, sample: usize, x: &[f64]) -> Result<f64> {
        self.check_indices(agent, sample, x)?;
        Ok(self.component_cost_unchecked(agent, sample, x))
    }

    fn check_indices(&self, agent: usize, sample: usize, x: &[f64]) -> Result<()> {
        if agent >= self.agents() {
            return Err(Error::IndexOutOfRange {
                index: agent,
                len: self.agents(),
            });
        }
        if sample >= self.samples(agent) {
            return Err(Error::IndexOutOfRange {
                index: sample,
                len: self.samples(agent),
            });
        }
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `grad f_i(x)` written into `out`; uses `scratch` as a component buffer.
    fn local_full_grad_into(&self, agent: usize, x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        let m = self.samples(agent);
        out.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..m {
            self.component_grad_into(agent, j, x, scratch);
            for (o, g) in out.iter_mut().zip(scratch.iter()) {
                *o += g;
            }
        }
        let inv = 1.0 / m as f64;
        out.iter_mut().for_each(|v| *v *= inv);
    }

    fn local_full_grad(&self, agent: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_indices(agent, 0, x)?;
        let mut out = vec![0.0; self.dim()];
        let mut scratch = vec![0.0; self.dim()];
        self.local_full_grad_into(agent, x, &mut out, &mut scratch);
        Ok(out)
    }

    fn local_cost(&self, agent: usize, x: &[f64]) -> f64 {
        let m = self.samples(agent);
        (0..m)
            .map(|j| self.component_cost_unchecked(agent, j, x))
            .sum::<f64>()
            / m as f64
    }

    /// `(f(x), grad f(x))`.
    fn global_cost_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let n = self.agents();
        let d = self.dim();
        let mut grad = vec![0.0; d];
        let mut local = vec![0.0; d];
        let mut scratch = vec![0.0; d];
        let mut cost = 0.0;
        for i in 0..n {
            cost += self.local_cost(i, x);
            self.local_full_grad_into(i, x, &mut local, &mut scratch);
            for (g, l) in grad.iter_mut().zip(&local) {
                *g += l;
            }
        }
        let inv = 1.0 / n as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        Ok((cost * inv, grad))
    }
}

/// Per-agent samples of the sigmoid-loss classifier
/// `f_ij(x) = 1 / (1 + exp(l_ij a_ij^T x)) + lambda ||x||^2`.
#[derive(Debug, Clone)]
pub struct LogisticProblem {
    rows: Vec<Vec<SparseRow>>,
    labels: Vec<Vec<f64>>,
    dim: usize,
    lambda: f64,
    lipschitz: f64,
}

/// `sigma(z) * sigma(-z)` without overflow.
fn sigmoid_product(z: f64) -> f64 {
    let e = (-z.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// `1 / (1 + exp(z))` without overflow.
fn sigmoid_neg(z: f64) -> f64 {
    if z > 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

impl LogisticProblem {
    pub fn new(
        rows: Vec<Vec<SparseRow>>,
        labels: Vec<Vec<f64>>,
        dim: usize,
        lambda: f64,
    ) -> Result<Self> {
        if rows.is_empty() || rows.len() != labels.len() {
            return Err(Error::InvalidArgument(
                "need one row set and one label set per agent".into(),
            ));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda1 must be >= 0, got {lambda}")));
        }
        let mut max_norm_sq: f64 = 0.0;
        for (i, (r, l)) in rows.iter().zip(&labels).enumerate() {
            if r.is_empty() || r.len() != l.len() {
                return Err(Error::InvalidArgument(format!(
                    "agent {i}: {} rows, {} labels",
                    r.len(),
                    l.len()
                )));
            }
            if let Some(bad) = l.iter().find(|v| **v != 1.0 && **v != -1.0) {
                return Err(Error::InvalidArgument(format!("agent {i}: label {bad} is not +-1")));
            }
            for row in r {
                if row.indices().last().is_some_and(|&k| k as usize >= dim) {
                    return Err(Error::IndexOutOfRange {
                        index: *row.indices().last().unwrap() as usize,
                        len: dim,
                    });
                }
                max_norm_sq = max_norm_sq.max(row.norm_sq());
            }
        }
        Ok(LogisticProblem {
            rows,
            labels,
            dim,
            lambda,
            lipschitz: max_norm_sq / 4.0 + 2.0 * lambda,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl FiniteSumProblem for LogisticProblem {
    fn agents(&self) -> usize {
        self.rows.len()
    }

    fn samples(&self, agent: usize) -> usize {
        self.rows[agent].len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn component_cost_unchecked(&self, agent: usize, sample: usize, x: &[f64]) -> f64 {
        let z = self.labels[agent][sample] * self.rows[agent][sample].dot(x);
        sigmoid_neg(z) + self.lambda * norm_sq(x)
    }

    fn component_grad_into(&self, agent: usize, sample: usize, x: &[f64], out: &mut [f64]) {
        let row = &self.rows[agent][sample];
        let label = self.labels[agent][sample];
        let z = label * row.dot(x);
        for (o, xv) in out.iter_mut().zip(x) {
            *o = 2.0 * self.lambda * xv;
        }
        row.axpy(-label * sigmoid_product(z), out);
    }

    fn lipschitz_estimate(&self) -> f64 {
        self.lipschitz
    }
}

/// Least-squares components `f_ij(x) = (a_ij^T x - y_ij)^2 / 2`.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    /// Per agent, `m_i * d` row-major design rows.
    a: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    dim: usize,
}

impl QuadraticProblem {
    /// `a[i]` holds agent `i`'s rows, each of length `dim`.
    pub fn new(a: Vec<Vec<Vec<f64>>>, y: Vec<Vec<f64>>, dim: usize) -> Result<Self> {
        if a.is_empty() || a.len() != y.len() {
            return Err(Error::InvalidArgument(
                "need one design block and one target block per agent".into(),
            ));
        }
        let mut flat = Vec::with_capacity(a.len());
        for (i, (rows, targets)) in a.into_iter().zip(&y).enumerate() {
            if rows.is_empty() || rows.len() != targets.len() {
                return Err(Error::InvalidArgument(format!(
                    "agent {i}: {} rows, {} targets",
                    rows.len(),
                    targets.len()
                )));
            }
            let mut block = Vec::with_capacity(rows.len() * dim);
            for r in rows {
                if r.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: r.len(),
                    });
                }
                if r.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument(format!("agent {i}: non-finite data")));
                }
                block.extend(r);
            }
            flat.push(block);
        }
        Ok(QuadraticProblem { a: flat, y, dim })
    }

    /// Random heterogeneous instance: unit-norm rows (so `L = 1`) and
    /// targets uniform on `[-1, 1]`.
    pub fn synthetic(agents: usize, samples: usize, dim: usize, seed: u64) -> Result<Self> {
        if agents == 0 || samples == 0 || dim == 0 {
            return Err(Error::InvalidArgument(
                "synthetic quadratic needs positive agents, samples and dim".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Vec::with_capacity(agents);
        let mut y = Vec::with_capacity(agents);
        for _ in 0..agents {
            let mut rows = Vec::with_capacity(samples);
            let mut targets = Vec::with_capacity(samples);
            for _ in 0..samples {
                let mut r: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = norm_sq(&r).sqrt().max(1e-12);
                r.iter_mut().for_each(|v| *v /= norm);
                rows.push(r);
                targets.push(rng.gen_range(-1.0..1.0));
            }
            a.push(rows);
            y.push(targets);
        }
        Self::new(a, y, dim)
    }

    fn row(&self, agent: usize, sample: usize) -> &[f64] {
        &self.a[agent][sample * self.dim..(sample + 1) * self.dim]
    }

    /// Exact minimizer of `f` from the normal equations.
    pub fn minimizer(&self) -> Result<Vec<f64>> {
        let d = self.dim;
        let n = self.agents() as f64;
        let mut h = vec![0.0; d * d];
        let mut b = vec![0.0; d];
        for i in 0..self.agents() {
            let w = 1.0 / (n * self.samples(i) as f64);
            for j in 0..self.samples(i) {
                let r = self.row(i, j);
                for p in 0..d {
                    b[p] += w * self.y[i][j] * r[p];
                    for q in 0..d {
                        h[p * d + q] += w * r[p] * r[q];
                    }
                }
            }
        }
        solve_dense(d, h, b)
    }
}

/// Gaussian elimination with partial pivoting.
fn solve_dense(d: usize, mut h: Vec<f64>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&p, &q| h[p * d + col].abs().total_cmp(&h[q * d + col].abs()))
            .unwrap();
        if h[pivot * d + col].abs() < 1e-300 {
            return Err(Error::InvalidArgument("normal equations are singular".into()));
        }
        if pivot != col {
            for k in 0..d {
                h.swap(pivot * d + k, col * d + k);
            }
            b.swap(pivot, col);
        }
        for row in col + 1..d {
            let factor = h[row * d + col] / h[col * d + col];
            for k in col..d {
                h[row * d + k] -= factor * h[col * d + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; d];
    for row in (0..d).rev() {
        let tail: f64 = (row + 1..d).map(|k| h[row * d + k] * x[k]).sum();
        x[row] = (b[row] - tail) / h[row * d + row];
    }
    Ok(x)
}

impl FiniteSumProblem for QuadraticProblem {
    fn agents(&self) -> usize {
        self.a.len()
    }

    fn samples(&self, agent: usize) -> usize {
        self.y[agent].len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn component_cost_unchecked(&self, agent: usize, sample: usize, x: &[f64]) -> f64 {
        let r = dot(self.row(agent, sample), x) - self.y[agent][sample];
        0.5 * r * r
    }

    fn component_grad_into(&self, agent: usize, sample: usize, x: &[f64], out: &mut [f64]) {
        let a = self.row(agent, sample);
        let r = dot(a, x) - self.y[agent][sample];
        for (o, av) in out.iter_mut().zip(a) {
            *o = r * av;
        }
    }

    fn lipschitz_estimate(&self) -> f64 {
        self.a
            .iter()
            .flat_map(|block| block.chunks(self.dim))
            .map(norm_sq)
            .fold(0.0, f64::max)
    }
}
