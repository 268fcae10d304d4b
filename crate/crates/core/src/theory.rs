//! Closed-form step-size, probability and contraction constants for GT-VR.
//!
//! All quantities depend only on the network radius `rho`, the smoothness
//! constant `L`, the refresh probability `P` and the step-size `eta`. The
//! admissible region is `0 < rho`, `3 rho^2 < 1`, `p_lower(rho) < P < 1`,
//! `0 < eta < eta_bar`.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack for the componentwise test `C eps <= 3 rho^2 eps`.
pub const CONTRACTION_REL_TOL: f64 = 1e-12;
const PERRON_TOL: f64 = 1e-12;
const PERRON_MAX_ITERS: usize = 100_000;

pub type Matrix3 = [[f64; 3]; 3];

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && 3.0 * rho * rho < 1.0 {
        Ok(())
    } else {
        Err(Error::Precondition(format!("need 0 < rho and rho^2 < 1/3, got rho = {rho}")))
    }
}

fn check_l(l: f64) -> Result<()> {
    if l > 0.0 && l.is_finite() {
        Ok(())
    } else {
        Err(Error::Precondition(format!("need L > 0, got {l}")))
    }
}

/// `(2/9)(1 + 1/rho) + 1 + rho`, the coefficient multiplying `(1 - P)` in the
/// anchor-error recursion.
fn anchor_coeff(rho: f64) -> f64 {
    (2.0 / 9.0) * (1.0 + 1.0 / rho) + 1.0 + rho
}

/// Smallest admissible refresh probability (exclusive).
pub fn p_lower_bound(rho: f64) -> Result<f64> {
    check_rho(rho)?;
    Ok(1.0 - 3.0 * rho * rho / anchor_coeff(rho))
}

fn check_p(rho: f64, p: f64) -> Result<()> {
    let lower = p_lower_bound(rho)?;
    if p > lower && p < 1.0 {
        Ok(())
    } else {
        Err(Error::Precondition(format!(
            "need {lower} < P < 1 for rho = {rho}, got P = {p}"
        )))
    }
}

/// Third entry of the positive test vector; solves the third contraction row
/// with equality.
pub fn epsilon3(rho: f64, p: f64) -> Result<f64> {
    check_rho(rho)?;
    let r2 = rho * rho;
    let num = 3.0 * r2 * p + (1.0 / 3.0) * (1.0 - p) * (1.0 + 1.0 / rho);
    let den = 3.0 * r2 - (1.0 - p) * anchor_coeff(rho);
    if den <= 0.0 || !(p < 1.0) {
        return Err(Error::Precondition(format!(
            "epsilon3 denominator {den} is not positive (rho = {rho}, P = {p})"
        )));
    }
    Ok(num / den)
}

/// The constant `T` entering the third step-size bound.
pub fn t_constant(l: f64, rho: f64, p: f64, eps3: f64) -> f64 {
    let l2 = l * l;
    let q = 1.0 - p;
    16.0 * l2
        + (8.0 / 3.0 + (16.0 / 3.0) * (1.0 + 1.0 / rho) * q) * l2
        + (32.0 + 32.0 * p) * l2 * rho * rho
        + (16.0 / 9.0 + 16.0 * q * (1.0 + rho + 2.0 * (rho + 1.0) / (9.0 * rho))) * l2 * eps3
}

/// The three candidates whose minimum is `eta_bar`.
pub fn eta_bar_terms(l: f64, rho: f64, p: f64) -> Result<[f64; 3]> {
    check_l(l)?;
    check_p(rho, p)?;
    let eps3 = epsilon3(rho, p)?;
    let r2 = rho * rho;
    let l2 = l * l;
    let q = 1.0 - p;
    let descent = (1.0 - 3.0 * r2)
        / ((16.0 * r2 * l2 + (32.0 * r2 * l2 + 2.0) * q * (rho + 1.0) / rho) * 5.0 * l);
    let smooth = 1.0 / (6.0 * l);
    let t = t_constant(l, rho, p, eps3);
    let contraction = ((1.0 - (4.0 / 3.0 + (8.0 / 9.0) * p) * r2) / (2.0 * t)).sqrt();
    Ok([descent, smooth, contraction])
}

/// Upper end of the admissible step-size interval.
pub fn eta_bar(l: f64, rho: f64, p: f64) -> Result<f64> {
    let terms = eta_bar_terms(l, rho, p)?;
    Ok(terms.into_iter().fold(f64::INFINITY, f64::min))
}

/// Step-size cap used by the complexity estimates.
pub fn eta_tilde(l: f64, rho: f64, p: f64) -> Result<f64> {
    let bar = eta_bar(l, rho, p)?;
    let r2 = rho * rho;
    Ok(bar.min((1.0 - 3.0 * r2) / (3.0 * r2 * l)))
}

/// Linear recursion matrix for `(y-error, x-consensus, anchor-error)` and the
/// forcing coefficients of `||grad f(x_bar)||^2`, divided by `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmiSystem {
    pub c: Matrix3,
    pub c4_per_n: f64,
    pub c4pp_per_n: f64,
}

impl LmiSystem {
    pub fn c4(&self, n: usize) -> f64 {
        self.c4_per_n * n as f64
    }

    pub fn c4pp(&self, n: usize) -> f64 {
        self.c4pp_per_n * n as f64
    }
}

/// Builds the recursion matrix with `beta = rho / eta` substituted.
pub fn lmi_matrix(eta: f64, rho: f64, p: f64, l: f64) -> Result<LmiSystem> {
    check_rho(rho)?;
    check_l(l)?;
    if !(eta > 0.0) || !(p > 0.0 && p < 1.0) {
        return Err(Error::Precondition(format!(
            "need eta > 0 and 0 < P < 1, got eta = {eta}, P = {p}"
        )));
    }
    if eta * l > 1.0 / 6.0 {
        return Err(Error::Precondition(format!(
            "need eta * L <= 1/6, got {}",
            eta * l
        )));
    }
    Ok(lmi_matrix_unchecked(eta, rho, p, l))
}

/// Same entries without the `eta L <= 1/6` guard; for probing the certificate
/// outside the proven region.
pub fn lmi_matrix_unchecked(eta: f64, rho: f64, p: f64, l: f64) -> LmiSystem {
    let r2 = rho * rho;
    let r4 = r2 * r2;
    let l2 = l * l;
    let e2 = eta * eta;
    let q = 1.0 - p;
    let c1 = 2.0 * r2 + (12.0 + 8.0 * p) / 9.0 * r4;
    let c2 = 16.0 * r2 * l2
        + (8.0 * rho + 16.0 * (rho + 1.0) * q) / (3.0 * rho) * r2 * l2
        + (32.0 + 32.0 * p) * l2 * r4;
    let c3 = (16.0 / 9.0) * (1.0 + (9.0 * r2 + 11.0 * rho + 2.0) / rho * q) * r2 * l2;
    let c2pp = 2.0 * r2 * p + (1.0 / 3.0) * q * (1.0 + 1.0 / rho);
    let c1pp = q * anchor_coeff(rho);
    LmiSystem {
        c: [
            [c1, c2, c3],
            [2.0 * r2 * e2, 2.0 * r2, 0.0],
            [2.0 * r2 * e2 * p, c2pp, c1pp],
        ],
        c4_per_n: 16.0 * r2 * e2 * l2 + 32.0 * q * r2 * e2 * l2 * (1.0 + 1.0 / rho),
        c4pp_per_n: 2.0 * e2 * q * (1.0 + 1.0 / rho),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contraction {
    /// Every row of `C eps <= 3 rho^2 eps` holds.
    pub ok: bool,
    pub rows_ok: [bool; 3],
    /// `(C eps)_i` and `3 rho^2 eps_i`.
    pub lhs: [f64; 3],
    pub rhs: [f64; 3],
    /// Spectral radius of `C` by power iteration.
    pub d_c: f64,
}

/// Componentwise certificate with `eps = [1/(2 eta^2), 1, eps3]`, plus an
/// independent power-iteration estimate of the spectral radius.
pub fn verify_contraction(c: &Matrix3, rho: f64, eps3: f64, eta: f64) -> Contraction {
    let eps = [1.0 / (2.0 * eta * eta), 1.0, eps3];
    let theta = 3.0 * rho * rho;
    let mut lhs = [0.0; 3];
    let mut rhs = [0.0; 3];
    let mut rows_ok = [false; 3];
    for i in 0..3 {
        lhs[i] = (0..3).map(|j| c[i][j] * eps[j]).sum();
        rhs[i] = theta * eps[i];
        rows_ok[i] = lhs[i] <= rhs[i] * (1.0 + CONTRACTION_REL_TOL);
    }
    Contraction {
        ok: rows_ok.iter().all(|&b| b) && eps3 > 0.0,
        rows_ok,
        lhs,
        rhs,
        d_c: perron_radius(c),
    }
}

/// Spectral radius of a non-negative matrix by power iteration from the
/// all-ones vector, stopped when the Collatz-Wielandt bounds meet.
pub fn perron_radius(c: &Matrix3) -> f64 {
    let mut v = [1.0; 3];
    let mut upper = f64::INFINITY;
    for _ in 0..PERRON_MAX_ITERS {
        let mut cv = [0.0; 3];
        for i in 0..3 {
            cv[i] = (0..3).map(|j| c[i][j] * v[j]).sum();
        }
        let ratios = (0..3).filter(|&i| v[i] > 0.0).map(|i| cv[i] / v[i]);
        let (lo, hi) = ratios.fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r), hi.max(r)));
        upper = hi;
        if hi == 0.0 {
            return 0.0;
        }
        if hi - lo <= PERRON_TOL * hi {
            return 0.5 * (hi + lo);
        }
        let norm: f64 = cv.iter().sum();
        if norm == 0.0 {
            return 0.0;
        }
        for i in 0..3 {
            v[i] = cv[i] / norm;
        }
    }
    upper
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Complexity {
    pub iterations: f64,
    pub gradient_evals: f64,
    pub communications: f64,
}

/// Iteration, gradient and communication counts sufficient for an
/// `epsilon`-accurate stationary point.
///
/// `f_gap = f(x_bar^1) - f*` and `r0` (initial consensus/tracking/anchor
/// error) are supplied by the caller.
pub fn complexity_estimate(
    eta: f64,
    epsilon: f64,
    f_gap: f64,
    r0: f64,
    p: f64,
    samples: &[usize],
    neighbor_counts: &[usize],
) -> Result<Complexity> {
    if !(eta > 0.0) || !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need eta > 0 and epsilon > 0, got {eta}, {epsilon}"
        )));
    }
    if f_gap < 0.0 || r0 < 0.0 {
        return Err(Error::InvalidArgument("f_gap and R0 must be non-negative".into()));
    }
    let n = samples.len();
    if n == 0 || neighbor_counts.len() != n {
        return Err(Error::InvalidArgument(
            "need one sample count and one neighbour count per agent".into(),
        ));
    }
    let iterations = 9.0 / (eta * epsilon) * (f_gap + 10.0 / (9.0 * n as f64) * r0 / eta);
    let per_round: f64 = samples.iter().map(|&m| p * m as f64 + 2.0).sum();
    let neighbours: usize = neighbor_counts.iter().sum();
    Ok(Complexity {
        iterations,
        gradient_evals: iterations * per_round,
        communications: iterations * neighbours as f64,
    })
}

/// Everything the theory has to say about one `(rho, L, P, eta)` setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub rho: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "P")]
    pub p: f64,
    pub n: usize,
    #[serde(rename = "M")]
    pub m_total: Option<usize>,
    pub p_lower: f64,
    pub eps3: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub eta_bar_terms: [f64; 3],
    pub eta_bar: f64,
    pub eta_tilde: f64,
    /// Step-size the matrix was evaluated at.
    pub eta: f64,
    #[serde(rename = "C")]
    pub c: Matrix3,
    #[serde(rename = "C4")]
    pub c4: f64,
    #[serde(rename = "C4pp")]
    pub c4pp: f64,
    pub contraction_ok: bool,
    #[serde(rename = "dC")]
    pub d_c: f64,
    pub three_rho_sq: f64,
}

impl TheoryReport {
    /// Evaluates the report at `eta`, or at `eta_bar / 2` when `eta` is `None`.
    pub fn compute(
        rho: f64,
        l: f64,
        p: f64,
        n: usize,
        m_total: Option<usize>,
        eta: Option<f64>,
    ) -> Result<Self> {
        let p_lower = p_lower_bound(rho)?;
        let terms = eta_bar_terms(l, rho, p)?;
        let eps3 = epsilon3(rho, p)?;
        let eta_bar = terms.into_iter().fold(f64::INFINITY, f64::min);
        let eta_tilde = eta_tilde(l, rho, p)?;
        let eta = eta.unwrap_or(0.5 * eta_bar);
        let lmi = lmi_matrix(eta, rho, p, l)?;
        let cert = verify_contraction(&lmi.c, rho, eps3, eta);
        Ok(TheoryReport {
            rho,
            l,
            p,
            n,
            m_total,
            p_lower,
            eps3,
            t: t_constant(l, rho, p, eps3),
            eta_bar_terms: terms,
            eta_bar,
            eta_tilde,
            eta,
            c: lmi.c,
            c4: lmi.c4(n),
            c4pp: lmi.c4pp(n),
            contraction_ok: cert.ok,
            d_c: cert.d_c,
            three_rho_sq: 3.0 * rho * rho,
        })
    }
}

impl fmt::Display for TheoryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut rows: Vec<(&str, String)> = vec![
            ("rho", format!("{:.12e}", self.rho)),
            ("L", format!("{:.12e}", self.l)),
            ("P", format!("{:.12e}", self.p)),
            ("n", self.n.to_string()),
            ("M", self.m_total.map_or("-".into(), |m| m.to_string())),
            ("p_lower", format!("{:.12e}", self.p_lower)),
            ("eps3", format!("{:.12e}", self.eps3)),
            ("T", format!("{:.12e}", self.t)),
            ("eta_bar", format!("{:.12e}", self.eta_bar)),
            ("eta_tilde", format!("{:.12e}", self.eta_tilde)),
            ("eta", format!("{:.12e}", self.eta)),
            ("C4", format!("{:.12e}", self.c4)),
            ("C4pp", format!("{:.12e}", self.c4pp)),
            ("contraction_ok", self.contraction_ok.to_string()),
            ("dC", format!("{:.12e}", self.d_c)),
            ("3rho^2", format!("{:.12e}", self.three_rho_sq)),
        ];
        for (i, t) in self.eta_bar_terms.iter().enumerate() {
            rows.push(match i {
                0 => ("eta_bar[descent]", format!("{t:.12e}")),
                1 => ("eta_bar[1/6L]", format!("{t:.12e}")),
                _ => ("eta_bar[contraction]", format!("{t:.12e}")),
            });
        }
        for (i, r) in self.c.iter().enumerate() {
            let mut s = String::new();
            for v in r {
                let _ = write!(s, "{v:>22.12e}");
            }
            rows.push((["C[1]", "C[2]", "C[3]"][i], s));
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        for (k, v) in rows {
            writeln!(f, "{k:<width$}  {v}")?;
        }
        Ok(())
    }
}
