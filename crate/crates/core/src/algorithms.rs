//! Synchronous round engine for GT-VR and the DSGD, DSGT and GT-SAGA baselines.
//!
//! Every round reads the start-of-round state of all agents, lets each agent
//! compute its private update, then swaps in the new state. Agent updates can
//! be spread over a rayon pool; because each agent owns its random streams
//! and writes only its own slot, the result does not depend on the schedule.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::MixingMatrix;
use crate::metrics::{self, TraceRow};
use crate::problem::FiniteSumProblem;
use crate::rng::{self, AgentStreams};
use crate::stacked::{norm_sq, Stacked};

/// Iterates whose norm exceeds this are treated as diverged.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    GtVr,
    Dsgd,
    Dsgt,
    GtSaga,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::GtVr => "gtvr",
            Algorithm::Dsgd => "dsgd",
            Algorithm::Dsgt => "dsgt",
            Algorithm::GtSaga => "gtsaga",
        }
    }

    /// Neighbour exchanges per agent per round.
    pub fn exchanges_per_round(self) -> u64 {
        match self {
            Algorithm::Dsgd => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "gtvr" => Ok(Algorithm::GtVr),
            "dsgd" => Ok(Algorithm::Dsgd),
            "dsgt" => Ok(Algorithm::Dsgt),
            "gtsaga" => Ok(Algorithm::GtSaga),
            _ => Err(Error::InvalidArgument(format!("unknown algorithm `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    /// Constant step-size.
    pub eta: f64,
    /// Anchor refresh probability (GT-VR only, validated for all).
    pub p: f64,
    /// Round budget.
    pub rounds: u64,
    /// Optional stop once `grad_evals / M` reaches this many epochs.
    pub max_epochs: Option<f64>,
    pub seed: u64,
    /// Record a trace row every this many rounds (0 means the default cadence).
    pub metric_every: u64,
    pub workers: usize,
    /// When false `wall_ms` is written as zero.
    pub timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            algorithm: Algorithm::GtVr,
            eta: 0.1,
            p: 0.3,
            rounds: 1000,
            max_epochs: None,
            seed: 0,
            metric_every: 0,
            workers: 1,
            timing: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("eta must be > 0, got {}", self.eta)));
        }
        rng::check_probability(self.p)?;
        if self.workers == 0 {
            return Err(Error::InvalidArgument("workers must be >= 1".into()));
        }
        if let Some(e) = self.max_epochs {
            if !(e > 0.0) {
                return Err(Error::InvalidArgument(format!("max_epochs must be > 0, got {e}")));
            }
        }
        Ok(())
    }

    /// Every round up to 10^4 rounds, every 10th beyond.
    pub fn effective_metric_every(&self) -> u64 {
        match self.metric_every {
            0 if self.rounds <= 10_000 => 1,
            0 => 10,
            k => k,
        }
    }
}

/// Component-gradient table of one GT-SAGA agent.
#[derive(Debug, Clone, PartialEq)]
pub struct SagaTable {
    /// `m_i * d`, row `j` is the last gradient seen for component `j`.
    pub grads: Vec<f64>,
    /// Running mean of the rows.
    pub avg: Vec<f64>,
}

impl SagaTable {
    pub fn recomputed_mean(&self, dim: usize) -> Vec<f64> {
        let mut mean = vec![0.0; dim];
        let rows = self.grads.len() / dim;
        for row in self.grads.chunks(dim) {
            for (m, g) in mean.iter_mut().zip(row) {
                *m += g;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        mean
    }
}

/// One agent's iterates.
#[derive(Debug, Clone)]
pub struct AgentState {
    /// Solution estimate.
    pub x: Vec<f64>,
    /// Gradient tracker.
    pub y: Vec<f64>,
    /// Local gradient estimator (the last stochastic gradient for DSGD/DSGT).
    pub v: Vec<f64>,
    /// Anchor point.
    pub tau: Vec<f64>,
    /// `grad f_i(tau)`.
    pub g_tau: Vec<f64>,
    pub grad_evals: u64,
    pub saga: Option<SagaTable>,
    streams: AgentStreams,
    v_prev: Vec<f64>,
    scratch_a: Vec<f64>,
    scratch_b: Vec<f64>,
}

impl AgentState {
    fn new(x: &[f64], streams: AgentStreams) -> Self {
        let d = x.len();
        AgentState {
            x: x.to_vec(),
            y: vec![0.0; d],
            v: vec![0.0; d],
            tau: x.to_vec(),
            g_tau: vec![0.0; d],
            grad_evals: 0,
            saga: None,
            streams,
            v_prev: vec![0.0; d],
            scratch_a: vec![0.0; d],
            scratch_b: vec![0.0; d],
        }
    }
}

/// What happened to one agent during a round; kept for inspection in tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AgentDraw {
    pub refreshed: bool,
    pub sample: usize,
}

/// All agents plus round bookkeeping.
#[derive(Debug, Clone)]
pub struct SwarmState {
    pub agents: Vec<AgentState>,
    /// Rounds completed since initialization.
    pub k: u64,
    /// Neighbour exchanges performed by each agent so far.
    pub exchanges: u64,
    pub last_draws: Vec<AgentDraw>,
    algorithm: Algorithm,
    eta: f64,
    p: f64,
}

fn stack(agents: &[AgentState], field: impl Fn(&AgentState) -> &[f64]) -> Stacked {
    let d = agents.first().map_or(0, |a| a.x.len());
    let mut out = Stacked::zeros(agents.len(), d);
    for (i, a) in agents.iter().enumerate() {
        out.row_mut(i).copy_from_slice(field(a));
    }
    out
}

impl SwarmState {
    /// Initial state for the configured algorithm at the stacked iterate `x1`.
    pub fn init<P: FiniteSumProblem + ?Sized>(problem: &P, x1: &Stacked, cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let n = problem.agents();
        let d = problem.dim();
        if x1.rows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: x1.rows(),
            });
        }
        if x1.cols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x1.cols(),
            });
        }
        let mut agents: Vec<AgentState> = (0..n)
            .map(|i| AgentState::new(x1.row(i), AgentStreams::new(cfg.seed, i)))
            .collect();
        let mut draws = vec![AgentDraw::default(); n];
        for (i, (a, draw)) in agents.iter_mut().zip(&mut draws).enumerate() {
            let m = problem.samples(i);
            match cfg.algorithm {
                Algorithm::GtVr => {
                    problem.local_full_grad_into(i, &a.x, &mut a.g_tau, &mut a.scratch_a);
                    a.grad_evals += m as u64;
                    a.v.copy_from_slice(&a.g_tau);
                    a.y.copy_from_slice(&a.g_tau);
                    draw.refreshed = true;
                }
                Algorithm::Dsgd => {}
                Algorithm::Dsgt => {
                    let s = rng::draw_index(&mut a.streams.index, m)?;
                    problem.component_grad_into(i, s, &a.x, &mut a.v);
                    a.grad_evals += 1;
                    a.y.copy_from_slice(&a.v);
                    draw.sample = s;
                }
                Algorithm::GtSaga => {
                    let mut grads = vec![0.0; m * d];
                    for (j, row) in grads.chunks_mut(d).enumerate() {
                        problem.component_grad_into(i, j, &a.x, row);
                    }
                    a.grad_evals += m as u64;
                    let table = SagaTable {
                        avg: vec![0.0; d],
                        grads,
                    };
                    let avg = table.recomputed_mean(d);
                    a.v.copy_from_slice(&avg);
                    a.y.copy_from_slice(&avg);
                    a.saga = Some(SagaTable { avg, ..table });
                }
            }
        }
        let swarm = SwarmState {
            agents,
            k: 0,
            exchanges: 0,
            last_draws: draws,
            algorithm: cfg.algorithm,
            eta: cfg.eta,
            p: cfg.p,
        };
        swarm.check_finite()?;
        Ok(swarm)
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn dim(&self) -> usize {
        self.agents.first().map_or(0, |a| a.x.len())
    }

    pub fn x(&self) -> Stacked {
        stack(&self.agents, |a| &a.x)
    }

    pub fn y(&self) -> Stacked {
        stack(&self.agents, |a| &a.y)
    }

    pub fn v(&self) -> Stacked {
        stack(&self.agents, |a| &a.v)
    }

    pub fn tau(&self) -> Stacked {
        stack(&self.agents, |a| &a.tau)
    }

    pub fn grad_evals_total(&self) -> u64 {
        self.agents.iter().map(|a| a.grad_evals).sum()
    }

    /// Stored reals devoted to gradient memory (`g_tau` or the SAGA table).
    pub fn gradient_memory(&self) -> usize {
        self.agents
            .iter()
            .map(|a| match &a.saga {
                Some(t) => t.grads.len(),
                None if self.algorithm == Algorithm::GtVr => a.g_tau.len(),
                None => 0,
            })
            .sum()
    }

    fn check_finite(&self) -> Result<()> {
        for a in &self.agents {
            let bad = norm_sq(&a.x).sqrt() > DIVERGENCE_NORM
                || a.x.iter().chain(&a.y).chain(&a.v).any(|v| !v.is_finite());
            if bad {
                return Err(Error::Diverged { round: self.k });
            }
        }
        Ok(())
    }

    /// Advances every agent by one synchronous round.
    pub fn round<P: FiniteSumProblem + ?Sized>(&mut self, problem: &P, w: &MixingMatrix) -> Result<()> {
        if w.n() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: w.n(),
            });
        }
        match self.algorithm {
            Algorithm::Dsgd => self.dsgd_round(problem, w)?,
            _ => self.tracking_round(problem, w)?,
        }
        self.k += 1;
        self.exchanges += self.algorithm.exchanges_per_round();
        self.check_finite()
    }

    /// GT-VR, DSGT and GT-SAGA share the x-mix / local estimator / y-mix shape.
    fn tracking_round<P: FiniteSumProblem + ?Sized>(&mut self, problem: &P, w: &MixingMatrix) -> Result<()> {
        let eta = self.eta;
        let p = self.p;
        let algorithm = self.algorithm;

        // x^{k+1} = W (x^k - eta y^k)
        let mut z = stack(&self.agents, |a| &a.x);
        for (i, a) in self.agents.iter().enumerate() {
            for (zv, yv) in z.row_mut(i).iter_mut().zip(&a.y) {
                *zv -= eta * yv;
            }
        }

        let results: Vec<Result<AgentDraw>> = self
            .agents
            .par_iter_mut()
            .enumerate()
            .map(|(i, a)| {
                w.mix_row(i, &z, &mut a.x);
                std::mem::swap(&mut a.v_prev, &mut a.v);
                match algorithm {
                    Algorithm::GtVr => gtvr_local(problem, i, a, p),
                    Algorithm::Dsgt => dsgt_local(problem, i, a),
                    Algorithm::GtSaga => gt_saga_local(problem, i, a),
                    Algorithm::Dsgd => unreachable!(),
                }
            })
            .collect();
        for (slot, r) in self.last_draws.iter_mut().zip(results) {
            *slot = r?;
        }

        // y^{k+1} = W (y^k + v^{k+1} - v^k)
        let mut q = stack(&self.agents, |a| &a.y);
        for (i, a) in self.agents.iter().enumerate() {
            for ((qv, vn), vo) in q.row_mut(i).iter_mut().zip(&a.v).zip(&a.v_prev) {
                *qv += vn - vo;
            }
        }
        self.agents
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, a)| w.mix_row(i, &q, &mut a.y));
        Ok(())
    }

    fn dsgd_round<P: FiniteSumProblem + ?Sized>(&mut self, problem: &P, w: &MixingMatrix) -> Result<()> {
        let eta = self.eta;
        let results: Vec<Result<AgentDraw>> = self
            .agents
            .par_iter_mut()
            .enumerate()
            .map(|(i, a)| {
                let s = rng::draw_index(&mut a.streams.index, problem.samples(i))?;
                problem.component_grad_into(i, s, &a.x, &mut a.v);
                a.grad_evals += 1;
                a.y.copy_from_slice(&a.v);
                Ok(AgentDraw {
                    refreshed: false,
                    sample: s,
                })
            })
            .collect();
        for (slot, r) in self.last_draws.iter_mut().zip(results) {
            *slot = r?;
        }
        // x^{k+1} = W (x^k - eta g^k)
        let mut z = stack(&self.agents, |a| &a.x);
        for (i, a) in self.agents.iter().enumerate() {
            for (zv, g) in z.row_mut(i).iter_mut().zip(&a.v) {
                *zv -= eta * g;
            }
        }
        self.agents
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, a)| w.mix_row(i, &z, &mut a.x));
        Ok(())
    }
}

/// `grad f_is(x) - grad f_is(tau) + g_tau` written into `out`; two component
/// gradient evaluations.
#[allow(clippy::too_many_arguments)]
pub fn vr_estimate_into<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    agent: usize,
    sample: usize,
    x: &[f64],
    tau: &[f64],
    g_tau: &[f64],
    out: &mut [f64],
    scratch: &mut [f64],
) {
    problem.component_grad_into(agent, sample, x, out);
    problem.component_grad_into(agent, sample, tau, scratch);
    for ((o, gt), full) in out.iter_mut().zip(scratch.iter()).zip(g_tau) {
        *o += full - gt;
    }
}

/// Anchor refresh, index draw and the variance-reduced estimator at the new x.
fn gtvr_local<P: FiniteSumProblem + ?Sized>(problem: &P, i: usize, a: &mut AgentState, p: f64) -> Result<AgentDraw> {
    let m = problem.samples(i);
    let refreshed = rng::draw_bernoulli(&mut a.streams.bernoulli, p)?;
    if refreshed {
        a.tau.copy_from_slice(&a.x);
        problem.local_full_grad_into(i, &a.tau, &mut a.g_tau, &mut a.scratch_a);
        a.grad_evals += m as u64;
    }
    let s = rng::draw_index(&mut a.streams.index, m)?;
    vr_estimate_into(problem, i, s, &a.x, &a.tau, &a.g_tau, &mut a.v, &mut a.scratch_b);
    a.grad_evals += 2;
    Ok(AgentDraw { refreshed, sample: s })
}

fn dsgt_local<P: FiniteSumProblem + ?Sized>(problem: &P, i: usize, a: &mut AgentState) -> Result<AgentDraw> {
    let s = rng::draw_index(&mut a.streams.index, problem.samples(i))?;
    problem.component_grad_into(i, s, &a.x, &mut a.v);
    a.grad_evals += 1;
    Ok(AgentDraw {
        refreshed: false,
        sample: s,
    })
}

fn gt_saga_local<P: FiniteSumProblem + ?Sized>(problem: &P, i: usize, a: &mut AgentState) -> Result<AgentDraw> {
    let m = problem.samples(i);
    let s = rng::draw_index(&mut a.streams.index, m)?;
    problem.component_grad_into(i, s, &a.x, &mut a.scratch_a);
    a.grad_evals += 1;
    let table = a.saga.as_mut().expect("GT-SAGA agent without a gradient table");
    let d = a.scratch_a.len();
    let stored = &mut table.grads[s * d..(s + 1) * d];
    let inv_m = 1.0 / m as f64;
    for k in 0..d {
        let g = a.scratch_a[k];
        a.v[k] = g - stored[k] + table.avg[k];
        table.avg[k] += (g - stored[k]) * inv_m;
        stored[k] = g;
    }
    Ok(AgentDraw {
        refreshed: false,
        sample: s,
    })
}

/// Sequence of recorded rows.
pub type Trace = Vec<TraceRow>;

/// Initializes from the zero iterate and runs the configured budget.
pub fn run_experiment<P: FiniteSumProblem + ?Sized>(problem: &P, w: &MixingMatrix, cfg: &RunConfig) -> Result<Trace> {
    let x1 = Stacked::zeros(problem.agents(), problem.dim());
    run_experiment_from(problem, w, &x1, cfg)
}

pub fn run_experiment_from<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    w: &MixingMatrix,
    x1: &Stacked,
    cfg: &RunConfig,
) -> Result<Trace> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    pool.install(|| run_inner(problem, w, x1, cfg))
}

fn run_inner<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    w: &MixingMatrix,
    x1: &Stacked,
    cfg: &RunConfig,
) -> Result<Trace> {
    let start = Instant::now();
    let total = problem.total_samples() as f64;
    let every = cfg.effective_metric_every();
    let mut swarm = SwarmState::init(problem, x1, cfg)?;
    let record = |swarm: &SwarmState| -> Result<TraceRow> {
        let mut row = metrics::trace_row(problem, w, swarm)?;
        row.epoch = row.grad_evals as f64 / total;
        row.wall_ms = if cfg.timing {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        Ok(row)
    };
    let mut trace = vec![record(&swarm)?];
    while swarm.k < cfg.rounds {
        swarm.round(problem, w)?;
        let epoch = swarm.grad_evals_total() as f64 / total;
        let done = swarm.k == cfg.rounds || cfg.max_epochs.is_some_and(|e| epoch >= e);
        if done || swarm.k % every == 0 {
            trace.push(record(&swarm)?);
        }
        if done {
            break;
        }
    }
    Ok(trace)
}
