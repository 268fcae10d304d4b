//! Per-round diagnostics and trace serialization.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::algorithms::SwarmState;
use crate::error::{Error, Result};
use crate::graph::MixingMatrix;
use crate::problem::FiniteSumProblem;
use crate::stacked::{dist_sq, norm_sq, Stacked};

pub const CSV_HEADER: &str = "k,cost,stat,cons,track,dbar,grad_evals,epoch,wall_ms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// Rounds completed.
    pub k: u64,
    /// `f(x_bar)`.
    pub cost: f64,
    /// `||grad f(x_bar)||^2`.
    pub stat: f64,
    /// `sum_i ||x_i - x_bar||^2`.
    pub cons: f64,
    /// `sum_i ||y_i - grad f_i(x_bar)||^2`.
    pub track: f64,
    /// Laplacian consensus gap `D(x_bar)`.
    pub dbar: f64,
    pub grad_evals: u64,
    pub epoch: f64,
    pub wall_ms: f64,
}

/// `sum_i x_i^T sum_j w_ij (x_i - x_j)`.
pub fn consensus_gap_d(w: &MixingMatrix, x: &Stacked) -> Result<f64> {
    if x.rows() != w.n() {
        return Err(Error::DimensionMismatch {
            expected: w.n(),
            got: x.rows(),
        });
    }
    let d = x.cols();
    let mut total = 0.0;
    let mut acc = vec![0.0; d];
    for i in 0..w.n() {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let xi = x.row(i);
        for (j, &wij) in w.row(i).iter().enumerate() {
            if wij == 0.0 || j == i {
                continue;
            }
            for ((a, a_i), a_j) in acc.iter_mut().zip(xi).zip(x.row(j)) {
                *a += wij * (a_i - a_j);
            }
        }
        total += crate::stacked::dot(xi, &acc);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stationarity {
    pub cost: f64,
    pub stat: f64,
    pub cons: f64,
    pub track: f64,
}

/// Cost, stationarity, consensus and tracking error at the network average.
pub fn stationarity_metrics<P: FiniteSumProblem + ?Sized>(problem: &P, swarm: &SwarmState) -> Result<Stationarity> {
    let x = swarm.x();
    let xbar = x.mean_row();
    let (cost, grad) = problem.global_cost_and_grad(&xbar)?;
    let cons = x.iter_rows().map(|r| dist_sq(r, &xbar)).sum();
    let d = problem.dim();
    let mut local = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    let mut track = 0.0;
    for (i, a) in swarm.agents.iter().enumerate() {
        problem.local_full_grad_into(i, &xbar, &mut local, &mut scratch);
        track += dist_sq(&a.y, &local);
    }
    Ok(Stationarity {
        cost,
        stat: norm_sq(&grad),
        cons,
        track,
    })
}

/// Row for the current state; `epoch` and `wall_ms` are left to the caller.
pub fn trace_row<P: FiniteSumProblem + ?Sized>(problem: &P, w: &MixingMatrix, swarm: &SwarmState) -> Result<TraceRow> {
    let s = stationarity_metrics(problem, swarm)?;
    Ok(TraceRow {
        k: swarm.k,
        cost: s.cost,
        stat: s.stat,
        cons: s.cons,
        track: s.track,
        dbar: consensus_gap_d(w, &swarm.x())?,
        grad_evals: swarm.grad_evals_total(),
        epoch: 0.0,
        wall_ms: 0.0,
    })
}

/// 17 significant digits, enough to round-trip any f64.
fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv(rows: &[TraceRow], mut sink: impl Write) -> std::io::Result<()> {
    writeln!(sink, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            sink,
            "{},{},{},{},{},{},{},{},{}",
            r.k,
            fmt_real(r.cost),
            fmt_real(r.stat),
            fmt_real(r.cons),
            fmt_real(r.track),
            fmt_real(r.dbar),
            r.grad_evals,
            fmt_real(r.epoch),
            fmt_real(r.wall_ms)
        )?;
    }
    Ok(())
}

pub fn write_jsonl(rows: &[TraceRow], mut sink: impl Write) -> std::io::Result<()> {
    for r in rows {
        serde_json::to_writer(&mut sink, r)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes the CSV trace and, if `jsonl` is set, a `.jsonl` mirror next to it.
pub fn write_trace(rows: &[TraceRow], path: &Path, jsonl: bool) -> Result<()> {
    let write = |p: &Path, f: &dyn Fn(&mut std::io::BufWriter<std::fs::File>) -> std::io::Result<()>| {
        let file = std::fs::File::create(p).map_err(|e| Error::io(p, e))?;
        let mut buf = std::io::BufWriter::new(file);
        f(&mut buf).and_then(|_| buf.flush()).map_err(|e| Error::io(p, e))
    };
    write(path, &|b| write_csv(rows, b))?;
    if jsonl {
        let mirror = path.with_extension("jsonl");
        write(&mirror, &|b| write_jsonl(rows, b))?;
    }
    Ok(())
}

pub fn read_csv(reader: impl BufRead) -> Result<Vec<TraceRow>> {
    let bad = |line: usize, msg: String| Error::InvalidArgument(format!("trace line {line}: {msg}"));
    let mut lines = reader.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h.trim() == CSV_HEADER => {}
        _ => return Err(bad(1, "missing or unexpected header".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| bad(i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(bad(i + 1, format!("{} fields", f.len())));
        }
        let real = |s: &str| s.parse::<f64>().map_err(|e| bad(i + 1, e.to_string()));
        let int = |s: &str| s.parse::<u64>().map_err(|e| bad(i + 1, e.to_string()));
        rows.push(TraceRow {
            k: int(f[0])?,
            cost: real(f[1])?,
            stat: real(f[2])?,
            cons: real(f[3])?,
            track: real(f[4])?,
            dbar: real(f[5])?,
            grad_evals: int(f[6])?,
            epoch: real(f[7])?,
            wall_ms: real(f[8])?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_topology, TopologyKind};

    fn two_agent_w() -> MixingMatrix {
        MixingMatrix::from_dense(2, vec![0.5, 0.5, 0.5, 0.5], 1e-12).unwrap()
    }

    #[test]
    fn equal_rows_have_zero_gap() {
        let w = MixingMatrix::metropolis(&build_topology(TopologyKind::Ring, 5).unwrap()).unwrap();
        let x = Stacked::broadcast(5, &[1.0, 2.0]);
        assert_eq!(consensus_gap_d(&w, &x).unwrap(), 0.0);
    }

    #[test]
    fn two_agent_example() {
        // brute force: 1*0.5*(1-0) + 0*0.5*(0-1) = 0.5
        let x = Stacked::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        assert_eq!(consensus_gap_d(&two_agent_w(), &x).unwrap(), 0.5);
    }

    #[test]
    fn gap_dimension_mismatch() {
        assert!(consensus_gap_d(&two_agent_w(), &Stacked::zeros(3, 1)).is_err());
    }

    fn sample_rows() -> Vec<TraceRow> {
        (0..3)
            .map(|k| TraceRow {
                k,
                cost: 0.1 + k as f64 / 3.0,
                stat: 1e-300 * (k as f64 + 1.0),
                cons: std::f64::consts::PI,
                track: 0.0,
                dbar: 1.0 / 7.0,
                grad_evals: 10 * k,
                epoch: k as f64 * 0.3,
                wall_ms: 12.5,
            })
            .collect()
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{CSV_HEADER}\n"));

        let mut buf = Vec::new();
        write_csv(&sample_rows(), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().count(), 4);
        assert_eq!(read_csv(buf.as_slice()).unwrap(), sample_rows());
    }

    #[test]
    fn jsonl_has_same_keys() {
        let mut buf = Vec::new();
        write_jsonl(&sample_rows(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        let keys: Vec<&str> = first.as_object().unwrap().keys().map(String::as_str).collect();
        let mut expected: Vec<&str> = CSV_HEADER.split(',').collect();
        expected.sort_unstable();
        let mut keys = keys;
        keys.sort_unstable();
        assert_eq!(keys, expected);
    }
}
