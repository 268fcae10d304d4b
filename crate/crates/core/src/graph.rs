//! Undirected topologies, Metropolis mixing matrices and the network radius.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::io::BufRead;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::stacked::Stacked;

/// Row/column sum tolerance for matrices built in-process.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Tolerance applied to matrices loaded from text.
pub const LOAD_TOL: f64 = 1e-9;

const RHO_REL_TOL: f64 = 1e-12;
const RHO_MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TopologyKind {
    Ring,
    Path,
    Complete,
    /// Erdos-Renyi with edge probability `p_edge`, repaired to connectivity
    /// by overlaying a ring.
    Random { p_edge: f64, seed: u64 },
}

impl FromStr for TopologyKind {
    type Err = Error;

    /// Accepts `ring`, `path`, `complete` and `random:<p_edge>[:<seed>]`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ring" => Ok(TopologyKind::Ring),
            "path" => Ok(TopologyKind::Path),
            "complete" => Ok(TopologyKind::Complete),
            _ => {
                let mut parts = s.split(':');
                if parts.next() != Some("random") {
                    return Err(Error::InvalidArgument(format!("unknown topology `{s}`")));
                }
                let p_edge = parts
                    .next()
                    .ok_or_else(|| Error::InvalidArgument("random topology needs p_edge".into()))?
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("p_edge: {e}")))?;
                let seed = match parts.next() {
                    Some(v) => v
                        .parse::<u64>()
                        .map_err(|e| Error::InvalidArgument(format!("topology seed: {e}")))?,
                    None => 0,
                };
                Ok(TopologyKind::Random { p_edge, seed })
            }
        }
    }
}

/// Agent count plus the set of unordered edges `(i, j)` with `i < j`, 0-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Topology {
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 agents, got {n}")));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop at agent {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::IndexOutOfRange {
                    index: a.max(b),
                    len: n,
                });
            }
            set.insert((a.min(b), a.max(b)));
        }
        let t = Topology { n, edges: set };
        if !t.is_connected() {
            return Err(Error::InvalidArgument("topology is not connected".into()));
        }
        Ok(t)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn is_connected(&self) -> bool {
        connected(self.n, &self.edges)
    }
}

fn connected(n: usize, edges: &BTreeSet<(usize, usize)>) -> bool {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == n
}

fn ring_edges(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).map(move |i| {
        let j = (i + 1) % n;
        (i.min(j), i.max(j))
    })
}

pub fn build_topology(kind: TopologyKind, n: usize) -> Result<Topology> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 agents, got {n}")));
    }
    let mut edges = BTreeSet::new();
    match kind {
        TopologyKind::Ring => edges.extend(ring_edges(n)),
        TopologyKind::Path => edges.extend((0..n - 1).map(|i| (i, i + 1))),
        TopologyKind::Complete => {
            for i in 0..n {
                for j in i + 1..n {
                    edges.insert((i, j));
                }
            }
        }
        TopologyKind::Random { p_edge, seed } => {
            if !(p_edge > 0.0 && p_edge <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "p_edge must lie in (0, 1], got {p_edge}"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in 0..n {
                for j in i + 1..n {
                    if rng.gen::<f64>() < p_edge {
                        edges.insert((i, j));
                    }
                }
            }
            if !connected(n, &edges) {
                edges.extend(ring_edges(n));
            }
        }
    }
    Ok(Topology { n, edges })
}

/// Symmetric doubly stochastic weight matrix together with its network radius.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    n: usize,
    w: Vec<f64>,
    rho: f64,
}

impl MixingMatrix {
    /// Metropolis-Hastings weights: `1 / (1 + max(deg_i, deg_j))` on edges,
    /// the remainder on the diagonal.
    pub fn metropolis(t: &Topology) -> Result<Self> {
        let n = t.n();
        let deg = t.degrees();
        let mut w = vec![0.0; n * n];
        for &(a, b) in t.edges() {
            let v = 1.0 / (1.0 + deg[a].max(deg[b]) as f64);
            w[a * n + b] = v;
            w[b * n + a] = v;
        }
        for i in 0..n {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[i * n + j]).sum();
            w[i * n + i] = 1.0 - off;
        }
        Self::from_dense(n, w, STOCHASTIC_TOL)
    }

    /// Validates a dense row-major matrix and computes its radius.
    pub fn from_dense(n: usize, w: Vec<f64>, tol: f64) -> Result<Self> {
        validate(n, &w, tol)?;
        let rho = spectral_radius_rho(n, &w)?;
        Ok(MixingMatrix { n, w, rho })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.w[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    /// Number of neighbours (positive off-diagonal weights) per agent.
    pub fn neighbor_counts(&self) -> Vec<usize> {
        (0..self.n)
            .map(|i| {
                self.row(i)
                    .iter()
                    .enumerate()
                    .filter(|&(j, &v)| j != i && v > 0.0)
                    .count()
            })
            .collect()
    }

    /// `(W kron I_d) X`: row `i` of the result is `sum_r w[i][r] X[r]`.
    pub fn mix(&self, x: &Stacked) -> Result<Stacked> {
        let mut out = Stacked::zeros(x.rows(), x.cols());
        self.mix_into(x, &mut out)?;
        Ok(out)
    }

    pub fn mix_into(&self, x: &Stacked, out: &mut Stacked) -> Result<()> {
        if x.rows() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.rows(),
            });
        }
        if out.rows() != x.rows() || out.cols() != x.cols() {
            return Err(Error::DimensionMismatch {
                expected: x.rows() * x.cols(),
                got: out.rows() * out.cols(),
            });
        }
        for i in 0..self.n {
            self.mix_row(i, x, out.row_mut(i));
        }
        Ok(())
    }

    /// Row `i` of `(W kron I_d) X`, written into `out`.
    pub(crate) fn mix_row(&self, i: usize, x: &Stacked, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (r, &w) in self.row(i).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(x.row(r)) {
                *o += w * v;
            }
        }
    }

    /// Plain-text dump: `n` on the first line, then `n` rows of `n` decimals.
    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.n);
        for i in 0..self.n {
            let row: Vec<String> = self.row(i).iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }

    pub fn from_text(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader
            .lines()
            .map(|l| l.map_err(|e| Error::InvalidMixingMatrix(e.to_string())))
            .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
        let n: usize = lines
            .next()
            .ok_or_else(|| Error::InvalidMixingMatrix("empty input".into()))??
            .trim()
            .parse()
            .map_err(|e| Error::InvalidMixingMatrix(format!("line 1: {e}")))?;
        let mut w = Vec::with_capacity(n * n);
        for i in 0..n {
            let line = lines
                .next()
                .ok_or_else(|| Error::InvalidMixingMatrix(format!("missing row {}", i + 1)))??;
            let row: std::result::Result<Vec<f64>, _> =
                line.split_whitespace().map(str::parse::<f64>).collect();
            let row = row.map_err(|e| Error::InvalidMixingMatrix(format!("row {}: {e}", i + 1)))?;
            if row.len() != n {
                return Err(Error::InvalidMixingMatrix(format!(
                    "row {} has {} entries, expected {n}",
                    i + 1,
                    row.len()
                )));
            }
            w.extend(row);
        }
        if lines.next().is_some() {
            return Err(Error::InvalidMixingMatrix("trailing rows".into()));
        }
        Self::from_dense(n, w, LOAD_TOL)
    }
}

fn validate(n: usize, w: &[f64], tol: f64) -> Result<()> {
    if n == 0 || w.len() != n * n {
        return Err(Error::InvalidMixingMatrix(format!(
            "expected {} entries for n = {n}, got {}",
            n * n,
            w.len()
        )));
    }
    if let Some(v) = w.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidMixingMatrix(format!("entry {v} is negative or non-finite")));
    }
    for i in 0..n {
        if w[i * n + i] <= 0.0 {
            return Err(Error::InvalidMixingMatrix(format!("w[{i}][{i}] must be positive")));
        }
        let row: f64 = (0..n).map(|j| w[i * n + j]).sum();
        let col: f64 = (0..n).map(|j| w[j * n + i]).sum();
        if (row - 1.0).abs() > tol {
            return Err(Error::InvalidMixingMatrix(format!("row {i} sums to {row}")));
        }
        if (col - 1.0).abs() > tol {
            return Err(Error::InvalidMixingMatrix(format!("column {i} sums to {col}")));
        }
        for j in 0..i {
            if (w[i * n + j] - w[j * n + i]).abs() > tol {
                return Err(Error::InvalidMixingMatrix(format!(
                    "not symmetric at ({i}, {j}); only undirected graphs are supported"
                )));
            }
        }
    }
    let support: BTreeSet<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| w[i * n + j] > 0.0)
        .collect();
    if n > 1 && !connected(n, &support) {
        return Err(Error::InvalidMixingMatrix("support graph is not connected".into()));
    }
    Ok(())
}

/// Spectral norm of `W - (1/n) 1 1^T`, by power iteration on `B^T B`.
pub fn spectral_radius_rho(n: usize, w: &[f64]) -> Result<f64> {
    let inv = 1.0 / n as f64;
    let b: Vec<f64> = w.iter().map(|v| v - inv).collect();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = (0..n).map(|k| b[k * n + i] * b[k * n + j]).sum();
        }
    }

    // Fixed pseudo-random start, projected off the consensus direction.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e_ed0f_4a5f);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    let mean = v.iter().sum::<f64>() * inv;
    v.iter_mut().for_each(|x| *x -= mean);
    if normalize(&mut v) == 0.0 {
        return Ok(0.0);
    }

    let mut lambda = 0.0;
    let mut av = vec![0.0; n];
    for _ in 0..RHO_MAX_ITERS {
        for i in 0..n {
            av[i] = (0..n).map(|j| a[i * n + j] * v[j]).sum();
        }
        let next = crate::stacked::dot(&v, &av);
        let norm = normalize(&mut av);
        if norm == 0.0 || next <= f64::MIN_POSITIVE {
            return Ok(0.0);
        }
        std::mem::swap(&mut v, &mut av);
        if (next - lambda).abs() <= RHO_REL_TOL * next {
            return Ok(next.max(0.0).sqrt());
        }
        lambda = next;
    }
    Err(Error::NonConvergence {
        iterations: RHO_MAX_ITERS,
    })
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = crate::stacked::norm_sq(v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}
