//! Dense primal-dual interior-point method for block-diagonal SDPs.
//!
//! The problem `min c^T x s.t. F0_j + sum_k x_k F_kj <= 0` is the dual form
//! `max b^T y s.t. C - sum_k y_k A_k = S >= 0` with `y = x`, `C = -F0`,
//! `A_k = F_k`, `b = -c`. Iterates follow the HKM direction with a
//! Mehrotra predictor-corrector and an infeasible start.

use nalgebra::DVector;

use super::canon::{Coefficient, LmiConstraint, SdpProblem};
use crate::linalg::{max_abs, sym_eigenvalues, RealMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::NumericalFailure => "numerical failure",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMode {
    Minimize,
    /// Find any point with every `F_j(x) < 0`; the objective is ignored.
    Feasibility,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Relative gap and residual tolerance.
    pub tol: f64,
    pub max_iter: usize,
    pub mode: SolveMode,
    /// Allowed `lambda_max(F_j(x))` relative to `1 + max|F0_j|` when the
    /// returned point is re-checked.
    pub cert_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 120,
            mode: SolveMode::Minimize,
            cert_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// `lambda_max(F_j(x))` per constraint at the returned point.
    pub max_eigs: Vec<f64>,
    pub detail: String,
}

/// A backend able to solve a canonicalized problem.
pub trait SdpBackend {
    fn name(&self) -> &'static str;
    fn solve(&self, problem: &SdpProblem, opts: &SolverOptions) -> SdpSolution;
}

/// The embedded interior-point backend.
#[derive(Debug, Clone, Copy, Default)]
pub struct InteriorPoint;

impl SdpBackend for InteriorPoint {
    fn name(&self) -> &'static str {
        "interior-point"
    }

    fn solve(&self, problem: &SdpProblem, opts: &SolverOptions) -> SdpSolution {
        match opts.mode {
            SolveMode::Minimize => minimize(problem, opts),
            SolveMode::Feasibility => feasibility(problem, opts),
        }
    }
}

/// Solves with the default backend.
pub fn solve(problem: &SdpProblem, opts: &SolverOptions) -> SdpSolution {
    InteriorPoint.solve(problem, opts)
}

struct StdBlock {
    c: RealMatrix,
    a: Vec<(usize, RealMatrix)>,
}

struct StdForm {
    blocks: Vec<StdBlock>,
    b: DVector<f64>,
}

impl StdForm {
    fn new(p: &SdpProblem) -> Self {
        let blocks = p
            .constraints
            .iter()
            .map(|c| {
                let s = c
                    .coeffs
                    .iter()
                    .map(|k| max_abs(&k.matrix))
                    .fold(max_abs(&c.f0), f64::max)
                    .max(1e-300);
                StdBlock {
                    c: &c.f0 * (-1.0 / s),
                    a: c.coeffs.iter().map(|k| (k.index, &k.matrix / s)).collect(),
                }
            })
            .collect();
        let obj_scale = p.objective.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
        let b = DVector::from_iterator(p.n_vars, p.objective.iter().map(|v| -v / obj_scale));
        Self { blocks, b }
    }

    fn m(&self) -> usize {
        self.b.len()
    }

    fn n_total(&self) -> usize {
        self.blocks.iter().map(|b| b.c.nrows()).sum()
    }

    // A(Z)_k = sum_j <A_kj, Z_j>
    fn op_a(&self, z: &[RealMatrix]) -> DVector<f64> {
        let mut out = DVector::zeros(self.m());
        for (blk, zj) in self.blocks.iter().zip(z) {
            for (k, a) in &blk.a {
                out[*k] += a.dot(zj);
            }
        }
        out
    }

    // A^*(y)_j = sum_k y_k A_kj
    fn op_at(&self, y: &DVector<f64>) -> Vec<RealMatrix> {
        self.blocks
            .iter()
            .map(|blk| {
                let n = blk.c.nrows();
                let mut out = RealMatrix::zeros(n, n);
                for (k, a) in &blk.a {
                    let w = y[*k];
                    out.zip_apply(a, |o, v| *o += w * v);
                }
                out
            })
            .collect()
    }
}

fn inner(a: &[RealMatrix], b: &[RealMatrix]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn frob(a: &[RealMatrix]) -> f64 {
    a.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt()
}

fn sym(m: &RealMatrix) -> RealMatrix {
    (m + m.transpose()) * 0.5
}

/// Largest `alpha` with `X + alpha dX >= 0` (infinity if unbounded).
fn max_step(x: &[RealMatrix], dx: &[RealMatrix]) -> Option<f64> {
    let mut alpha = f64::INFINITY;
    for (xb, db) in x.iter().zip(dx) {
        let l = nalgebra::Cholesky::new(xb.clone())?.l();
        let left = l.solve_lower_triangular(db)?;
        let w = l.solve_lower_triangular(&left.transpose())?;
        let lo = sym_eigenvalues(&sym(&w))[0];
        if lo < 0.0 {
            alpha = alpha.min(-1.0 / lo);
        }
    }
    Some(alpha)
}

enum Outcome {
    Converged,
    Stopped,
    Diverged(&'static str),
    Failed(&'static str),
    MaxIter,
}

struct IpmResult {
    y: DVector<f64>,
    outcome: Outcome,
    iterations: usize,
}

fn ipm(std: &StdForm, opts: &SolverOptions, stop: &dyn Fn(&DVector<f64>) -> bool) -> IpmResult {
    let m = std.m();
    let n_tot = std.n_total().max(1) as f64;
    let c_norm = frob(&std.blocks.iter().map(|b| b.c.clone()).collect::<Vec<_>>());
    let b_norm = std.b.norm();
    let mut a_max: f64 = 0.0;
    let mut a_ratio: f64 = 0.0;
    {
        let mut a_norms = vec![0.0; m];
        for blk in &std.blocks {
            for (k, a) in &blk.a {
                a_norms[*k] += a.norm_squared();
            }
        }
        for k in 0..m {
            let nk = a_norms[k].sqrt();
            a_max = a_max.max(nk);
            a_ratio = a_ratio.max((1.0 + std.b[k].abs()) / (1.0 + nk));
        }
    }
    let xi = 10f64.max(n_tot.sqrt()).max(n_tot.sqrt() * a_ratio);
    let eta = 10f64.max(n_tot.sqrt()).max(c_norm).max(a_max);
    let mut x: Vec<RealMatrix> = std
        .blocks
        .iter()
        .map(|b| RealMatrix::identity(b.c.nrows(), b.c.nrows()) * xi)
        .collect();
    let mut s: Vec<RealMatrix> = std
        .blocks
        .iter()
        .map(|b| RealMatrix::identity(b.c.nrows(), b.c.nrows()) * eta)
        .collect();
    let mut y = DVector::zeros(m);
    let diverge = 1e10 * xi.max(eta);

    for iter in 0..opts.max_iter {
        let aty = std.op_at(&y);
        let rd: Vec<RealMatrix> = std
            .blocks
            .iter()
            .zip(&s)
            .zip(&aty)
            .map(|((b, sj), aj)| &b.c - sj - aj)
            .collect();
        let rp = &std.b - std.op_a(&x);
        let pobj = inner(&std.blocks.iter().map(|b| b.c.clone()).collect::<Vec<_>>(), &x);
        let dobj = std.b.dot(&y);
        let mu = inner(&x, &s) / n_tot;
        let pinf = rp.norm() / (1.0 + b_norm);
        let dinf = frob(&rd) / (1.0 + c_norm);
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());

        if stop(&y) {
            return IpmResult { y, outcome: Outcome::Stopped, iterations: iter };
        }
        if pinf < opts.tol && dinf < opts.tol && gap < opts.tol {
            return IpmResult { y, outcome: Outcome::Converged, iterations: iter };
        }
        if frob(&x) > diverge {
            return IpmResult { y, outcome: Outcome::Diverged("primal iterates diverge"), iterations: iter };
        }
        if y.amax() > diverge {
            return IpmResult { y, outcome: Outcome::Diverged("dual iterates diverge"), iterations: iter };
        }

        let s_inv: Option<Vec<RealMatrix>> = s
            .iter()
            .map(|sj| nalgebra::Cholesky::new(sj.clone()).map(|c| c.inverse()))
            .collect();
        let Some(s_inv) = s_inv else {
            return IpmResult { y, outcome: Outcome::Failed("slack lost definiteness"), iterations: iter };
        };

        // Schur complement M_ij = sum_blocks tr(A_i X A_j S^{-1})
        let mut schur = RealMatrix::zeros(m, m);
        for ((blk, xj), sij) in std.blocks.iter().zip(&x).zip(&s_inv) {
            let left: Vec<RealMatrix> = blk.a.iter().map(|(_, a)| xj * a).collect();
            for (jj, (j, _)) in blk.a.iter().enumerate() {
                let t = &left[jj] * sij;
                for (i, ai) in &blk.a {
                    if i <= j {
                        schur[(*i, *j)] += ai.dot(&t);
                    }
                }
            }
        }
        for j in 0..m {
            for i in 0..j {
                schur[(j, i)] = schur[(i, j)];
            }
        }
        let diag_max = (0..m).fold(0.0_f64, |a, i| a.max(schur[(i, i)].abs())).max(1e-300);
        let mut reg = 0.0;
        let chol = loop {
            let mut mm = schur.clone();
            for i in 0..m {
                mm[(i, i)] += reg;
            }
            if let Some(c) = nalgebra::Cholesky::new(mm) {
                break Some(c);
            }
            reg = if reg == 0.0 { 1e-14 * diag_max } else { reg * 100.0 };
            if reg > 1e-4 * diag_max {
                break None;
            }
        };
        let Some(chol) = chol else {
            return IpmResult { y, outcome: Outcome::Failed("Schur complement is singular"), iterations: iter };
        };

        let x_rd_sinv: Vec<RealMatrix> = x
            .iter()
            .zip(&rd)
            .zip(&s_inv)
            .map(|((xj, rj), sj)| xj * rj * sj)
            .collect();
        let h = std.op_a(&x_rd_sinv);

        let direction = |rhs: DVector<f64>, target: f64, corr: Option<&Vec<RealMatrix>>| {
            let dy = chol.solve(&rhs);
            let atdy = std.op_at(&dy);
            let ds: Vec<RealMatrix> = rd.iter().zip(&atdy).map(|(r, a)| r - a).collect();
            let dx: Vec<RealMatrix> = (0..x.len())
                .map(|j| {
                    let mut d = &s_inv[j] * target - &x[j] - sym(&(&x[j] * &ds[j] * &s_inv[j]));
                    if let Some(c) = corr {
                        d -= sym(&c[j]);
                    }
                    d
                })
                .collect();
            (dx, dy, ds)
        };

        // predictor
        let (dxp, _, dsp) = direction(&std.b + &h, 0.0, None);
        let (Some(ap), Some(ad)) = (max_step(&x, &dxp), max_step(&s, &dsp)) else {
            return IpmResult { y, outcome: Outcome::Failed("step length computation failed"), iterations: iter };
        };
        let ap = ap.min(1.0);
        let ad = ad.min(1.0);
        let x_aff: Vec<RealMatrix> = x.iter().zip(&dxp).map(|(a, d)| a + d * ap).collect();
        let s_aff: Vec<RealMatrix> = s.iter().zip(&dsp).map(|(a, d)| a + d * ad).collect();
        let mu_aff = inner(&x_aff, &s_aff) / n_tot;
        let expo = (3.0 * ap.min(ad).powi(2)).max(1.0);
        let sigma = (mu_aff / mu).max(0.0).powf(expo).min(1.0);

        // corrector
        let corr: Vec<RealMatrix> = (0..x.len()).map(|j| &dxp[j] * &dsp[j] * &s_inv[j]).collect();
        let rhs = &std.b - std.op_a(&s_inv) * (sigma * mu) + &h + std.op_a(&corr);
        let (dx, dy, ds) = direction(rhs, sigma * mu, Some(&corr));
        let (Some(ap2), Some(ad2)) = (max_step(&x, &dx), max_step(&s, &ds)) else {
            return IpmResult { y, outcome: Outcome::Failed("step length computation failed"), iterations: iter };
        };
        let tau = 0.9 + 0.09 * ap.min(ad);
        let ap2 = (tau * ap2).min(1.0);
        let ad2 = (tau * ad2).min(1.0);
        for j in 0..x.len() {
            x[j] += &dx[j] * ap2;
            s[j] += &ds[j] * ad2;
            x[j] = sym(&x[j]);
            s[j] = sym(&s[j]);
        }
        y += dy * ad2;
        if !y.iter().all(|v| v.is_finite()) {
            return IpmResult { y, outcome: Outcome::Failed("non-finite iterate"), iterations: iter };
        }
    }
    IpmResult { y, outcome: Outcome::MaxIter, iterations: opts.max_iter }
}

fn cert_limits(p: &SdpProblem, opts: &SolverOptions) -> Vec<f64> {
    p.constraints
        .iter()
        .map(|c| opts.cert_tol * (1.0 + max_abs(&c.f0)))
        .collect()
}

fn solution(p: &SdpProblem, status: SolveStatus, x: Vec<f64>, iterations: usize, detail: String) -> SdpSolution {
    SdpSolution {
        status,
        objective: p.objective_value(&x),
        max_eigs: p.max_eigenvalues(&x),
        x,
        iterations,
        detail,
    }
}

fn minimize(p: &SdpProblem, opts: &SolverOptions) -> SdpSolution {
    let std = StdForm::new(p);
    let res = ipm(&std, opts, &|_| false);
    let x: Vec<f64> = res.y.iter().copied().collect();
    match res.outcome {
        Outcome::Converged => {
            let eigs = p.max_eigenvalues(&x);
            let limits = cert_limits(p, opts);
            if let Some((j, (e, l))) = eigs.iter().zip(&limits).enumerate().find(|(_, (e, l))| e > l) {
                return solution(
                    p,
                    SolveStatus::NumericalFailure,
                    x,
                    res.iterations,
                    format!(
                        "constraint `{}` violated at the returned point (lambda_max {e:e} > {l:e})",
                        p.constraints[j].name
                    ),
                );
            }
            solution(p, SolveStatus::Optimal, x, res.iterations, String::new())
        }
        other => {
            let reason = match other {
                Outcome::Diverged(r) | Outcome::Failed(r) => r,
                _ => "iteration limit reached",
            };
            let phase1 = feasibility(p, opts);
            let iterations = res.iterations + phase1.iterations;
            match phase1.status {
                SolveStatus::Infeasible => SdpSolution { iterations, ..phase1 },
                _ => solution(
                    p,
                    SolveStatus::NumericalFailure,
                    x,
                    iterations,
                    format!("{reason}; a strictly feasible point exists"),
                ),
            }
        }
    }
}

/// Phase I: `min t s.t. F_j(x) <= t I, t >= -1`; strictly feasible iff
/// `t* < 0`.
fn feasibility(p: &SdpProblem, opts: &SolverOptions) -> SdpSolution {
    let n = p.n_vars;
    let mut aux = p.clone();
    aux.n_vars = n + 1;
    aux.objective = vec![0.0; n + 1];
    aux.objective[n] = 1.0;
    aux.objective_offset = 0.0;
    for c in aux.constraints.iter_mut() {
        let d = c.dim();
        c.coeffs.push(Coefficient {
            index: n,
            matrix: -RealMatrix::identity(d, d),
        });
    }
    aux.constraints.push(LmiConstraint {
        name: "phase-one bound".into(),
        f0: RealMatrix::from_element(1, 1, -1.0),
        coeffs: vec![Coefficient {
            index: n,
            matrix: RealMatrix::from_element(1, 1, -1.0),
        }],
    });
    let std = StdForm::new(&aux);
    let strictly_feasible = |y: &[f64]| p.max_eigenvalues(&y[..n]).iter().all(|&e| e < 0.0);
    let res = ipm(&std, opts, &|y: &DVector<f64>| {
        y[n] < 0.0 && strictly_feasible(y.as_slice())
    });
    let x: Vec<f64> = res.y.as_slice()[..n].to_vec();
    let t = res.y[n];
    if strictly_feasible(res.y.as_slice()) {
        return solution(p, SolveStatus::Optimal, x, res.iterations, "strictly feasible point found".into());
    }
    match res.outcome {
        Outcome::Converged | Outcome::MaxIter if t > -opts.tol => solution(
            p,
            SolveStatus::Infeasible,
            x,
            res.iterations,
            format!("no strictly feasible point (phase-one optimum {t:e})"),
        ),
        Outcome::Diverged(r) | Outcome::Failed(r) => {
            solution(p, SolveStatus::NumericalFailure, x, res.iterations, format!("phase one: {r}"))
        }
        _ => solution(
            p,
            SolveStatus::NumericalFailure,
            x,
            res.iterations,
            format!("phase one inconclusive (t = {t:e})"),
        ),
    }
}
