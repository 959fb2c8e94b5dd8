//! Robust and nominal H-infinity estimator synthesis.
//!
//! Decision variables are `Y, X` (symmetric n x n), `K` (n x n), `L`
//! (n x p_y), `M` (p_p x n), `N` (p_p x p_y), the bound `gamma` and, for the
//! robust problem, the multiplier scalings `lambda1, lambda2`. With
//! `XX = [Y Y; Y X]` the closed-loop inequality is, after eliminating the
//! inverse blocks by Schur complement,
//!
//! ```text
//! [ -diag(XX, 0, gamma I) + P(lambda)   [AA B1 B2]^T   [C2 D21 D2]^T ]
//! [  [AA B1 B2]                          -XX            0            ]  < 0
//! [  [C2 D21 D2]                          0            -gamma I      ]
//! ```
//!
//! with `AA = [YA YA; K XA + L Cy]`, `B1 = [Y Bw; X Bw + L Dyw]`,
//! `B2 = [Y Bp; X Bp + L Dyp]`, `C2 = [Cp - M, Cp - N Cy]`,
//! `D21 = -N Dyw`, `D2 = Dp - N Dyp`. The estimator is
//! `A_E = (Y - X)^{-1}(K - X A - L Cy)`, `B_E = (Y - X)^{-1} L`,
//! `C_E = M - N Cy`, `D_E = N`.

mod lft;
mod validate;

use serde::{Deserialize, Serialize};

pub use lft::{assemble_lft, CombinedMultiplier, LftDims, UncertainLft};
pub use validate::{error_system, sample_from_set, validate_estimator, Validation};

use crate::data::PlantRealization;
use crate::error::{Error, Result};
use crate::linalg::io::rows;
use crate::linalg::{max_abs, singular_values, sym_eigenvalues, RealMatrix, SymmetricMatrix};
use crate::lti::spectral_radius;
use crate::sdp::{self, BlockLmi, Expr, SdpBuilder, SdpProblem, Sense, SolveMode, SolveStatus, SolverOptions};

/// `x+ = A_E x + B_E y`, `z_hat = C_E x + D_E y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRealization {
    #[serde(rename = "A", with = "rows")]
    pub a: RealMatrix,
    #[serde(rename = "B", with = "rows")]
    pub b: RealMatrix,
    #[serde(rename = "C", with = "rows")]
    pub c: RealMatrix,
    #[serde(rename = "D", with = "rows")]
    pub d: RealMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisVariables {
    #[serde(rename = "Y", with = "rows")]
    pub y: RealMatrix,
    #[serde(rename = "X", with = "rows")]
    pub x: RealMatrix,
    #[serde(rename = "K", with = "rows")]
    pub k: RealMatrix,
    #[serde(rename = "L", with = "rows")]
    pub l: RealMatrix,
    #[serde(rename = "M", with = "rows")]
    pub m: RealMatrix,
    #[serde(rename = "N", with = "rows")]
    pub n: RealMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub status: String,
    pub iterations: usize,
    pub detail: String,
    /// `lambda_max` of the synthesis inequality at the returned point,
    /// without the strictness margin.
    pub lmi_max_eig: f64,
    /// `lambda_min([Y Y; Y X])`.
    pub x_bold_min_eig: f64,
    pub delta: f64,
    pub trace_regularized: bool,
    pub bisection: bool,
    /// Condition number of `Y - X`.
    pub recovery_condition: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub gamma: f64,
    pub estimator: EstimatorRealization,
    pub variables: SynthesisVariables,
    /// `(lambda1, lambda2)`; absent for nominal synthesis.
    pub scalings: Option<(f64, f64)>,
    pub solver_report: SolverReport,
}

#[derive(Debug, Clone, Copy)]
pub struct SynthesisOptions {
    pub solver: SolverOptions,
    /// Strictness margin relative to the data scale.
    pub delta: f64,
    pub lambda_floor: f64,
    /// Condition number of `Y - X` above which the problem is re-solved
    /// with a trace penalty.
    pub max_recovery_condition: f64,
    pub trace_weight: f64,
    /// Relative tolerance of the fallback bisection on `gamma`.
    pub bisection_tol: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            delta: 1e-7,
            lambda_floor: 1e-6,
            max_recovery_condition: 1e10,
            trace_weight: 1e-6,
            bisection_tol: 1e-6,
        }
    }
}

/// Plant data the synthesis inequality is built from.
struct Design<'a> {
    a: &'a RealMatrix,
    bp: &'a RealMatrix,
    cy: &'a RealMatrix,
    dyp: &'a RealMatrix,
    cp: &'a RealMatrix,
    dp: &'a RealMatrix,
    robust: Option<&'a UncertainLft>,
}

#[derive(Clone, Copy)]
enum Gamma {
    Free,
    Fixed(f64),
}

impl Design<'_> {
    fn n(&self) -> usize {
        self.a.nrows()
    }

    fn scale(&self) -> f64 {
        [self.a, self.bp, self.cy, self.dyp, self.cp, self.dp]
            .iter()
            .map(|m| max_abs(m))
            .fold(1.0, f64::max)
    }

    /// The synthesis inequality and its companions as a block LMI problem.
    fn problem(&self, gamma: Gamma, delta: f64, lambda_floor: f64, trace_weight: f64) -> Result<SdpProblem> {
        let n = self.n();
        let np = self.bp.ncols();
        let py = self.cy.nrows();
        let pp = self.cp.nrows();
        let nw = self.robust.map_or(0, |l| l.dims.w_dim());

        let mut b = SdpBuilder::new();
        let y = b.symmetric("Y", n);
        let x = b.symmetric("X", n);
        let k = b.matrix("K", n, n);
        let l = b.matrix("L", n, py);
        let m = b.matrix("M", pp, n);
        let nn = b.matrix("N", pp, py);
        let g = match gamma {
            Gamma::Free => b.scalar("gamma"),
            Gamma::Fixed(v) => Expr::c(RealMatrix::from_element(1, 1, v)),
        };
        let c = |m: &RealMatrix| Expr::c(m.clone());
        let eye = |k: usize| RealMatrix::identity(k, k);

        let xx = Expr::blocks(
            vec![vec![Some(y.clone()), Some(y.clone())], vec![Some(y.clone()), Some(x.clone())]],
            &[n, n],
            &[n, n],
        );
        let aa = Expr::blocks(
            vec![
                vec![Some(y.clone() * c(self.a)), Some(y.clone() * c(self.a))],
                vec![Some(k.clone()), Some(x.clone() * c(self.a) + l.clone() * c(self.cy))],
            ],
            &[n, n],
            &[n, n],
        );
        let b2 = Expr::blocks(
            vec![
                vec![Some(y.clone() * c(self.bp))],
                vec![Some(x.clone() * c(self.bp) + l.clone() * c(self.dyp))],
            ],
            &[n, n],
            &[np],
        );
        let c2 = Expr::blocks(
            vec![vec![Some(c(self.cp) - m.clone()), Some(c(self.cp) - nn.clone() * c(self.cy))]],
            &[pp],
            &[n, n],
        );
        let d2 = c(self.dp) - nn.clone() * c(self.dyp);

        let cols = 2 * n + nw + np;
        let (ab, cd, top) = if let Some(lft) = self.robust {
            let b1 = Expr::blocks(
                vec![
                    vec![Some(y.clone() * c(&lft.bw()))],
                    vec![Some(x.clone() * c(&lft.bw()) + l.clone() * c(&lft.dyw()))],
                ],
                &[n, n],
                &[nw],
            );
            let d21 = -(nn.clone() * c(&lft.dyw()));
            let ab = Expr::blocks(vec![vec![Some(aa), Some(b1), Some(b2)]], &[2 * n], &[2 * n, nw, np]);
            let cd = Expr::blocks(vec![vec![Some(c2), Some(d21), Some(d2)]], &[pp], &[2 * n, nw, np]);
            // [w; z] as a function of the columns (x_bold, w, wp)
            let z_dim = lft.dims.z_dim();
            let mut wz = RealMatrix::zeros(nw + z_dim, cols);
            wz.view_mut((0, 2 * n), (nw, nw)).fill_with_identity();
            let cw = lft.cw();
            wz.view_mut((nw, 0), (z_dim, n)).copy_from(&cw);
            wz.view_mut((nw, n), (z_dim, n)).copy_from(&cw);
            wz.view_mut((nw, 2 * n + nw), (z_dim, np)).copy_from(&lft.dwp());
            let (e1, e2) = CombinedMultiplier::embeddings(lft.dims);
            let l1 = &e1 * &wz;
            let l2 = &e2 * &wz;
            let phi1 = l1.transpose() * lft.p1.as_matrix() * &l1;
            let phi2 = l2.transpose() * lft.p2.as_matrix() * &l2;
            let lam1 = b.scalar("lambda1");
            let lam2 = b.scalar("lambda2");
            let floor = Expr::c(RealMatrix::from_element(1, 1, lambda_floor));
            b.add_lmi(BlockLmi::single("lambda1 floor", lam1.clone() - floor.clone(), Sense::PosDef, 0.0));
            b.add_lmi(BlockLmi::single("lambda2 floor", lam2.clone() - floor, Sense::PosDef, 0.0));
            let diag = Expr::blocks(
                vec![
                    vec![Some(xx.clone()), None, None],
                    vec![None, None, None],
                    vec![None, None, Some(g.clone() * c(&eye(np)))],
                ],
                &[2 * n, nw, np],
                &[2 * n, nw, np],
            );
            let top = lam1 * c(&phi1) + lam2 * c(&phi2) - diag;
            (ab, cd, top)
        } else {
            let ab = Expr::blocks(vec![vec![Some(aa), Some(b2)]], &[2 * n], &[2 * n, np]);
            let cd = Expr::blocks(vec![vec![Some(c2), Some(d2)]], &[pp], &[2 * n, np]);
            let top = -Expr::blocks(
                vec![vec![Some(xx.clone()), None], vec![None, Some(g.clone() * c(&eye(np)))]],
                &[2 * n, np],
                &[2 * n, np],
            );
            (ab, cd, top)
        };

        let grid = vec![
            vec![Some(top), Some(ab.clone().t()), Some(cd.clone().t())],
            vec![None, Some(-xx.clone()), None],
            vec![None, None, Some(-(g.clone() * c(&eye(pp))))],
        ];
        b.add_lmi(BlockLmi::new(SYNTHESIS_LMI, grid, Sense::NegDef, delta));
        b.add_lmi(BlockLmi::single(X_BOLD_LMI, xx, Sense::PosDef, delta));

        let mut objective = match gamma {
            Gamma::Free => g,
            Gamma::Fixed(_) => Expr::c(RealMatrix::zeros(1, 1)),
        };
        if trace_weight > 0.0 {
            // tr(X) = sum_i e_i^T X e_i
            for i in 0..n {
                let mut e = RealMatrix::zeros(n, 1);
                e[(i, 0)] = 1.0;
                objective = objective + (c(&e.transpose()) * x.clone() * c(&e)).scale(trace_weight);
            }
        }
        b.minimize(objective);
        b.build()
    }
}

const SYNTHESIS_LMI: &str = "synthesis";
const X_BOLD_LMI: &str = "x_bold";

fn unpack_vars(p: &SdpProblem, x: &[f64]) -> Result<SynthesisVariables> {
    Ok(SynthesisVariables {
        y: p.unpack(x, "Y")?,
        x: p.unpack(x, "X")?,
        k: p.unpack(x, "K")?,
        l: p.unpack(x, "L")?,
        m: p.unpack(x, "M")?,
        n: p.unpack(x, "N")?,
    })
}

fn condition(m: &RealMatrix) -> f64 {
    let sv = singular_values(m);
    match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

fn recover(design: &Design, v: &SynthesisVariables) -> Result<EstimatorRealization> {
    let diff = &v.y - &v.x;
    let lu = diff.clone().lu();
    let solve = |rhs: &RealMatrix| {
        lu.solve(rhs)
            .ok_or_else(|| Error::Recovery("Y - X is singular".into()))
    };
    let a = solve(&(&v.k - &v.x * design.a - &v.l * design.cy))?;
    let b = solve(&v.l)?;
    Ok(EstimatorRealization {
        a,
        b,
        c: &v.m - &v.n * design.cy,
        d: v.n.clone(),
    })
}

struct Attempt {
    problem: SdpProblem,
    sol: sdp::SdpSolution,
    gamma: f64,
    bisection: bool,
}

fn solve_once(design: &Design, opts: &SynthesisOptions, delta: f64, trace_weight: f64) -> Result<Attempt> {
    let problem = design.problem(Gamma::Free, delta, opts.lambda_floor, trace_weight)?;
    let sol = sdp::solve(&problem, &opts.solver);
    match sol.status {
        SolveStatus::Optimal => {
            let gamma = problem.unpack(&sol.x, "gamma")?[(0, 0)];
            Ok(Attempt { problem, sol, gamma, bisection: false })
        }
        SolveStatus::Infeasible => Err(Error::Solver {
            status: "infeasible".into(),
            detail: sol.detail,
        }),
        SolveStatus::NumericalFailure => bisect(design, opts, delta),
    }
}

/// Fallback: bisection on a fixed `gamma` with feasibility problems.
fn bisect(design: &Design, opts: &SynthesisOptions, delta: f64) -> Result<Attempt> {
    let feas_opts = SolverOptions {
        mode: SolveMode::Feasibility,
        ..opts.solver
    };
    let try_gamma = |g: f64| -> Result<Option<(SdpProblem, sdp::SdpSolution)>> {
        let p = design.problem(Gamma::Fixed(g), delta, opts.lambda_floor, 0.0)?;
        let s = sdp::solve(&p, &feas_opts);
        Ok((s.status == SolveStatus::Optimal).then_some((p, s)))
    };
    let mut hi = 1.0;
    let mut best = None;
    while hi <= 1e8 {
        if let Some(found) = try_gamma(hi)? {
            best = Some(found);
            break;
        }
        hi *= 4.0;
    }
    let Some(mut best) = best else {
        return Err(Error::Solver {
            status: "infeasible".into(),
            detail: "no feasible gamma up to 1e8 in bisection fallback".into(),
        });
    };
    let mut lo = 0.0;
    while hi - lo > opts.bisection_tol * hi {
        let mid = 0.5 * (lo + hi);
        match try_gamma(mid)? {
            Some(found) => {
                hi = mid;
                best = found;
            }
            None => lo = mid,
        }
    }
    Ok(Attempt {
        problem: best.0,
        sol: best.1,
        gamma: hi,
        bisection: true,
    })
}

fn synthesize(design: &Design, opts: &SynthesisOptions) -> Result<SynthesisResult> {
    let delta = opts.delta * design.scale();
    let mut last_err = None;
    // widen the margin if the returned point does not certify
    for widen in [1.0, 10.0, 100.0] {
        let d = delta * widen;
        let mut attempt = solve_once(design, opts, d, 0.0)?;
        let mut vars = unpack_vars(&attempt.problem, &attempt.sol.x)?;
        let mut regularized = false;
        let mut cond = condition(&(&vars.y - &vars.x));
        if !(cond <= opts.max_recovery_condition) {
            let retry = solve_once(design, opts, d, opts.trace_weight)?;
            let retry_vars = unpack_vars(&retry.problem, &retry.sol.x)?;
            let retry_cond = condition(&(&retry_vars.y - &retry_vars.x));
            if !(retry_cond <= opts.max_recovery_condition) {
                return Err(Error::Recovery(format!(
                    "Y - X ill-conditioned after trace regularization (condition {retry_cond:e})"
                )));
            }
            attempt = retry;
            vars = retry_vars;
            cond = retry_cond;
            regularized = true;
        }

        // certificate without the margin
        let plain = design.problem(Gamma::Free, 0.0, opts.lambda_floor, 0.0)?;
        let plain_x = attempt_vector(&plain, &attempt)?;
        let eigs = plain.max_eigenvalues(&plain_x);
        let idx = |name: &str| plain.constraints.iter().position(|c| c.name == name).expect("constraint present");
        let lmi_max_eig = eigs[idx(SYNTHESIS_LMI)];
        let xx = plain.constraints[idx(X_BOLD_LMI)].evaluate(&plain_x);
        let x_bold_min_eig = -sym_eigenvalues(&xx).last().copied().unwrap_or(0.0);
        if !(lmi_max_eig < 0.0 && x_bold_min_eig > 0.0) {
            last_err = Some(Error::Certification(format!(
                "synthesis inequality max eigenvalue {lmi_max_eig:e}, bold X min eigenvalue {x_bold_min_eig:e}"
            )));
            continue;
        }

        let estimator = recover(design, &vars)?;
        let rho = spectral_radius(&estimator.a);
        if !(rho < 1.0) {
            return Err(Error::Certification(format!(
                "recovered estimator is not stable (spectral radius {rho})"
            )));
        }
        let scalings = if design.robust.is_some() {
            Some((
                attempt.problem.unpack(&attempt.sol.x, "lambda1")?[(0, 0)],
                attempt.problem.unpack(&attempt.sol.x, "lambda2")?[(0, 0)],
            ))
        } else {
            None
        };
        return Ok(SynthesisResult {
            gamma: attempt.gamma,
            estimator,
            variables: vars,
            scalings,
            solver_report: SolverReport {
                status: attempt.sol.status.to_string(),
                iterations: attempt.sol.iterations,
                detail: attempt.sol.detail.clone(),
                lmi_max_eig,
                x_bold_min_eig,
                delta: d,
                trace_regularized: regularized,
                bisection: attempt.bisection,
                recovery_condition: cond,
            },
        });
    }
    Err(last_err.expect("loop ran"))
}

/// Maps an attempt's solution onto another problem built from the same
/// design (the bisection variant has no `gamma` variable).
fn attempt_vector(target: &SdpProblem, attempt: &Attempt) -> Result<Vec<f64>> {
    let mut values = std::collections::BTreeMap::new();
    for v in &target.vars {
        let val = if attempt.problem.var(&v.name).is_some() {
            attempt.problem.unpack(&attempt.sol.x, &v.name)?
        } else if v.name == "gamma" {
            RealMatrix::from_element(1, 1, attempt.gamma)
        } else {
            return Err(Error::Certification(format!("variable `{}` missing", v.name)));
        };
        values.insert(v.name.clone(), val);
    }
    target.pack(&values)
}

/// Robust estimator synthesis over all plants in the LFT.
pub fn synthesize_robust_estimator(lft: &UncertainLft, opts: &SynthesisOptions) -> Result<SynthesisResult> {
    for (p, what) in [(&lft.p1, "P1"), (&lft.p2, "P2")] {
        let k = match what {
            "P1" => lft.dims.n,
            _ => lft.dims.p_y,
        };
        let pi11 = p.view((0, 0), (k, k)).into_owned();
        let top = sym_eigenvalues(&pi11).last().copied().unwrap_or(0.0);
        if top > 1e-12 * (1.0 + max_abs(&pi11)) {
            return Err(Error::Precondition(format!(
                "{what} leading block must be negative semidefinite (max eigenvalue {top:e})"
            )));
        }
    }
    let design = Design {
        a: &lft.a_c,
        bp: &lft.bp_c,
        cy: &lft.cy_c,
        dyp: &lft.dyp_c,
        cp: &lft.cp,
        dp: &lft.dp,
        robust: Some(lft),
    };
    synthesize(&design, opts)
}

/// Estimator synthesis for a known plant.
pub fn synthesize_nominal(plant: &PlantRealization, opts: &SynthesisOptions) -> Result<SynthesisResult> {
    plant.validate()?;
    let design = Design {
        a: &plant.a,
        bp: &plant.bp,
        cy: &plant.cy,
        dyp: &plant.dyp,
        cp: &plant.cp,
        dp: &plant.dp,
        robust: None,
    };
    synthesize(&design, opts)
}

/// The canonical synthesis problem for inspection or export.
pub fn synthesis_problem(lft: Option<&UncertainLft>, plant: Option<&PlantRealization>, opts: &SynthesisOptions) -> Result<SdpProblem> {
    let design = match (lft, plant) {
        (Some(l), _) => Design {
            a: &l.a_c,
            bp: &l.bp_c,
            cy: &l.cy_c,
            dyp: &l.dyp_c,
            cp: &l.cp,
            dp: &l.dp,
            robust: Some(l),
        },
        (None, Some(p)) => Design {
            a: &p.a,
            bp: &p.bp,
            cy: &p.cy,
            dyp: &p.dyp,
            cp: &p.cp,
            dp: &p.dp,
            robust: None,
        },
        (None, None) => return Err(Error::Precondition("need an LFT or a plant".into())),
    };
    design.problem(Gamma::Free, opts.delta * design.scale(), opts.lambda_floor, 0.0)
}

impl SynthesisResult {
    /// Re-evaluates the synthesis inequality (no margin) at the returned
    /// variables: `(lambda_max, lambda_min of bold X)`.
    pub fn recheck(&self, lft: Option<&UncertainLft>, plant: Option<&PlantRealization>) -> Result<(f64, f64)> {
        let p = synthesis_problem(lft, plant, &SynthesisOptions { delta: 0.0, ..Default::default() })?;
        let mut values = std::collections::BTreeMap::new();
        let v = &self.variables;
        for (name, m) in [("Y", &v.y), ("X", &v.x), ("K", &v.k), ("L", &v.l), ("M", &v.m), ("N", &v.n)] {
            values.insert(name.to_string(), m.clone());
        }
        values.insert("gamma".into(), RealMatrix::from_element(1, 1, self.gamma));
        if let Some((l1, l2)) = self.scalings {
            values.insert("lambda1".into(), RealMatrix::from_element(1, 1, l1));
            values.insert("lambda2".into(), RealMatrix::from_element(1, 1, l2));
        }
        let x = p.pack(&values)?;
        let syn = p.constraints.iter().find(|c| c.name == SYNTHESIS_LMI).expect("present");
        let xb = p.constraints.iter().find(|c| c.name == X_BOLD_LMI).expect("present");
        let lmax = sym_eigenvalues(&syn.evaluate(&x)).last().copied().unwrap_or(0.0);
        let xmin = -sym_eigenvalues(&xb.evaluate(&x)).last().copied().unwrap_or(0.0);
        Ok((lmax, xmin))
    }

    /// `[Y Y; Y X]`.
    pub fn x_bold(&self) -> SymmetricMatrix {
        let v = &self.variables;
        let n = v.y.nrows();
        let mut m = RealMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&v.y);
        m.view_mut((0, n), (n, n)).copy_from(&v.y);
        m.view_mut((n, 0), (n, n)).copy_from(&v.y);
        m.view_mut((n, n), (n, n)).copy_from(&v.x);
        SymmetricMatrix::from_sym(m)
    }
}
