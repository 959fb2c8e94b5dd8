//! Matrix-ellipsoidal parameter sets described by a quadratic matrix
//! inequality in `Theta`:
//!
//! ```text
//! [Theta - Theta0; I]^T [Pi11 Pi12; Pi12^T Pi22] [Theta - Theta0; I] >= 0
//! ```
//!
//! Two constructions are provided: the exact set of parameters consistent
//! with the data ([`build_consistent_qmi`]) and the overapproximation
//! obtained by projecting the noise with a right inverse of the regressor
//! ([`build_superset_qmi`]).

use serde::{Deserialize, Serialize};

use crate::data::{noise_membership, NoiseModel, RegressionData};
use crate::error::{dims, Error, Result};
use crate::linalg::io::rows;
use crate::linalg::{
    block_identity_residual, ensure_finite, ensure_shape, kernel_basis, max_abs, rank,
    right_inverse_pair, spd_cholesky, spd_inverse, sym_eigenvalues, PsdCheck, RealMatrix,
    RightInversePair, SymmetricMatrix, RANK_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    Consistent,
    Superset,
}

/// Parameter set `{Theta : (Theta-Theta0)^T Pi11 (Theta-Theta0) + (Theta-Theta0)^T Pi12
/// + Pi12^T (Theta-Theta0) + Pi22 >= 0}` with `Theta` of size p x n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QmiParamSet {
    #[serde(with = "rows")]
    pub theta0: RealMatrix,
    #[serde(rename = "Pi11")]
    pub pi11: SymmetricMatrix,
    #[serde(rename = "Pi12", with = "rows")]
    pub pi12: RealMatrix,
    #[serde(rename = "Pi22")]
    pub pi22: SymmetricMatrix,
    /// `M = G~^T R G~ - Theta~0^T Q Theta~0`; consistent sets only.
    #[serde(rename = "M")]
    pub m: Option<SymmetricMatrix>,
    /// `Theta~0 = (Y - W0) G~`; consistent sets only.
    pub theta_tilde0: Option<RealMatrixSer>,
    pub kind: SetKind,
}

/// Serde wrapper so optional matrices serialize as nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RealMatrixSer(#[serde(with = "rows")] pub RealMatrix);

impl QmiParamSet {
    /// Rows of `Theta`.
    pub fn p(&self) -> usize {
        self.theta0.nrows()
    }

    /// Columns of `Theta`.
    pub fn n(&self) -> usize {
        self.theta0.ncols()
    }

    pub fn theta_tilde0(&self) -> Option<&RealMatrix> {
        self.theta_tilde0.as_ref().map(|t| &t.0)
    }

    /// The full multiplier `[Pi11 Pi12; Pi12^T Pi22]`.
    pub fn multiplier(&self) -> SymmetricMatrix {
        let (p, n) = (self.p(), self.n());
        let mut out = RealMatrix::zeros(p + n, p + n);
        out.view_mut((0, 0), (p, p)).copy_from(self.pi11.as_matrix());
        out.view_mut((0, p), (p, n)).copy_from(&self.pi12);
        out.view_mut((p, 0), (n, p)).copy_from(&self.pi12.transpose());
        out.view_mut((p, p), (n, n)).copy_from(self.pi22.as_matrix());
        SymmetricMatrix::from_sym(out)
    }

    /// The n x n matrix whose semidefiniteness defines membership.
    pub fn evaluate(&self, theta: &RealMatrix) -> Result<SymmetricMatrix> {
        ensure_shape(theta, self.p(), self.n(), "parameter matrix")?;
        ensure_finite(theta, "parameter matrix")?;
        let d = theta - &self.theta0;
        let cross = d.transpose() * &self.pi12;
        Ok(SymmetricMatrix::from_sym(
            d.transpose() * self.pi11.as_matrix() * &d + &cross + cross.transpose() + self.pi22.as_matrix(),
        ))
    }

    /// Default membership tolerance `1e-8 (1 + ||Pi22||)`.
    pub fn default_tol(&self) -> f64 {
        1e-8 * (1.0 + self.pi22.norm2())
    }

    /// Center and shape after completing the square (requires `Pi11 < 0`):
    /// the set is `{C + E : E^T (-Pi11) E <= Pi22 - Pi12^T Pi11^{-1} Pi12}`.
    pub fn completed_square(&self) -> Result<(RealMatrix, SymmetricMatrix)> {
        let neg = SymmetricMatrix::from_sym(-self.pi11.as_matrix());
        let lo = neg.min_eigenvalue();
        if !(lo > 0.0) {
            return Err(Error::Unbounded { max_eig: -lo });
        }
        let chol = spd_cholesky(&neg, "-Pi11")?;
        // C = -Pi11^{-1} Pi12 = (-Pi11)^{-1} Pi12
        let shift = chol.solve(&self.pi12);
        let center = &self.theta0 + &shift;
        let shape = SymmetricMatrix::from_sym(self.pi22.as_matrix() + self.pi12.transpose() * &shift);
        Ok((center, shape))
    }

    /// Center of the (bounded) set.
    pub fn center(&self) -> Result<RealMatrix> {
        Ok(self.completed_square()?.0)
    }

    /// For scalar sets (p = n = 1): the interval `[lo, hi]` of members.
    /// `None` if the set is empty.
    pub fn scalar_interval(&self) -> Result<Option<(f64, f64)>> {
        if self.p() != 1 || self.n() != 1 {
            return Err(Error::DimensionMismatch {
                context: "scalar interval",
                expected: dims(1, 1),
                found: dims(self.p(), self.n()),
            });
        }
        let a = self.pi11[(0, 0)];
        let b = self.pi12[(0, 0)];
        let c = self.pi22[(0, 0)];
        if !(a < 0.0) {
            return Err(Error::Unbounded { max_eig: a });
        }
        // a d^2 + 2 b d + c >= 0 with a < 0
        let disc = b * b - a * c;
        if disc < 0.0 {
            return Ok(None);
        }
        let root = disc.sqrt();
        let t0 = self.theta0[(0, 0)];
        // roots of a d^2 + 2 b d + c: d = (-b -+ sqrt(disc)) / a, ordered for a < 0
        let d_lo = (-b + root) / a;
        let d_hi = (-b - root) / a;
        Ok(Some((t0 + d_lo, t0 + d_hi)))
    }
}

/// `Theta0 = (Y - W0) G`, `Theta~0 = (Y - W0) G~` for a basis satisfying
/// `[X; X~][G G~] = I`.
pub fn split_center(
    data: &RegressionData,
    model: &NoiseModel,
    x_tilde: &RealMatrix,
    g: &RealMatrix,
    g_tilde: &RealMatrix,
) -> Result<(RealMatrix, RealMatrix)> {
    data.check_model(model)?;
    let scale = 1.0 + max_abs(&data.x).max(max_abs(x_tilde)) * max_abs(g).max(max_abs(g_tilde));
    let residual = block_identity_residual(&data.x, x_tilde, g, g_tilde);
    if !(residual < 1e-8 * scale) {
        return Err(Error::BasisIdentity { residual });
    }
    let centered = &data.y - model.w0();
    Ok((&centered * g, &centered * g_tilde))
}

/// Relative floor on `lambda_min(M) / lambda_max(M)` below which `M` is
/// treated as singular.
pub const M_COND_FLOOR: f64 = 1e-10;

/// The exact consistent set. Without an explicit basis the weighted triple
/// `G = R^{-1}X^T(XR^{-1}X^T)^{-1}`, `X~ = X_perp R`,
/// `G~ = X_perp^T (X_perp R X_perp^T)^{-1}` is used, which makes the
/// multiplier block diagonal.
pub fn build_consistent_qmi(
    data: &RegressionData,
    model: &NoiseModel,
    basis: Option<&RightInversePair>,
) -> Result<QmiParamSet> {
    data.check_model(model)?;
    data.check_full_row_rank()?;
    let (n, big_n) = (data.n_regressors(), data.n_samples());
    if big_n <= n {
        return Err(Error::Precondition(format!(
            "consistent set needs more samples than regressors (N = {big_n}, n = {n})"
        )));
    }
    let owned;
    let basis = match basis {
        Some(b) => b,
        None => {
            owned = right_inverse_pair(&data.x, model.r())?;
            &owned
        }
    };
    let (theta0, theta_tilde0) =
        split_center(data, model, &basis.x_tilde, &basis.g, &basis.g_tilde)?;

    let q = model.q().as_matrix();
    let r = model.r().as_matrix();
    let gt = &basis.g_tilde;
    let m = SymmetricMatrix::from_sym(gt.transpose() * r * gt - theta_tilde0.transpose() * q * &theta_tilde0);
    let ev = m.eigenvalues();
    let (lo, hi) = (ev[0], *ev.last().expect("N > n"));
    if !(lo > M_COND_FLOOR * hi.abs()) || !(lo > 0.0) {
        return Err(Error::SlaterViolation {
            lambda_min: lo,
            lambda_max: hi,
        });
    }
    let m_chol = spd_cholesky(&m, "M")?;

    // Pi11 = -Q - Q T M^{-1} T^T Q, Pi12 = -Q T M^{-1} G~^T R G,
    // Pi22 = G^T R G - G^T R G~ M^{-1} G~^T R G
    let qt = q * &theta_tilde0;
    let gtrg = gt.transpose() * r * &basis.g;
    let minv_tq = m_chol.solve(&qt.transpose());
    let minv_gtrg = m_chol.solve(&gtrg);
    let pi11 = SymmetricMatrix::from_sym(-q - &qt * &minv_tq);
    let pi12 = -(&qt * &minv_gtrg);
    let pi22 = SymmetricMatrix::from_sym(
        basis.g.transpose() * r * &basis.g - gtrg.transpose() * &minv_gtrg,
    );

    Ok(QmiParamSet {
        theta0,
        pi11,
        pi12,
        pi22,
        m: Some(m),
        theta_tilde0: Some(RealMatrixSer(theta_tilde0)),
        kind: SetKind::Consistent,
    })
}

/// Membership test against a set; the margin is the smallest eigenvalue of
/// the evaluated n x n matrix and members satisfy `margin >= -tol`.
pub fn qmi_membership(set: &QmiParamSet, theta: &RealMatrix, tol: f64) -> Result<PsdCheck> {
    let margin = set.evaluate(theta)?.min_eigenvalue();
    Ok(PsdCheck {
        is_psd: margin >= -tol,
        margin,
    })
}

/// Brute-force membership: `Theta` is consistent iff `Y - Theta X` is an
/// admissible noise realization.
pub fn direct_membership(
    data: &RegressionData,
    model: &NoiseModel,
    theta: &RealMatrix,
    tol: f64,
) -> Result<PsdCheck> {
    data.check_model(model)?;
    ensure_shape(theta, data.n_outputs(), data.n_regressors(), "parameter matrix")?;
    noise_membership(&(&data.y - theta * &data.x), model, tol)
}

fn check_right_inverse(x: &RealMatrix, g: &RealMatrix) -> Result<()> {
    ensure_finite(g, "right inverse G")?;
    ensure_shape(g, x.ncols(), x.nrows(), "right inverse G")?;
    let residual = max_abs(&(x * g - RealMatrix::identity(x.nrows(), x.nrows())));
    let scale = 1.0 + max_abs(x) * max_abs(g);
    if !(residual < 1e-9 * scale) {
        return Err(Error::Precondition(format!("X G != I (residual {residual:e})")));
    }
    let rk = rank(g, RANK_TOL);
    if rk < g.ncols() {
        return Err(Error::RankDeficient {
            what: "right inverse G",
            rank: rk,
            required: g.ncols(),
        });
    }
    Ok(())
}

/// Superset `{(Y - W) G : W in noise set}` written as a QMI with center
/// `(Y - W0) G`, `Pi11 = -Q`, `Pi12 = 0`, `Pi22 = G^T R G`.
pub fn build_superset_qmi(
    data: &RegressionData,
    model: &NoiseModel,
    g: &RealMatrix,
) -> Result<QmiParamSet> {
    data.check_model(model)?;
    data.check_full_row_rank()?;
    check_right_inverse(&data.x, g)?;
    spd_cholesky(model.r(), "R")?;
    let theta0 = (&data.y - model.w0()) * g;
    let pi22 = SymmetricMatrix::from_sym(g.transpose() * model.r().as_matrix() * g);
    Ok(QmiParamSet {
        pi11: SymmetricMatrix::from_sym(-model.q().as_matrix()),
        pi12: RealMatrix::zeros(data.n_outputs(), data.n_regressors()),
        pi22,
        theta0,
        m: None,
        theta_tilde0: None,
        kind: SetKind::Superset,
    })
}

/// `G^ = R^{-1} X^T (X R^{-1} X^T)^{-1}`, the right inverse minimizing
/// `G^T R G` in the semidefinite order.
pub fn optimal_right_inverse(x: &RealMatrix, r: &SymmetricMatrix) -> Result<RealMatrix> {
    ensure_finite(x, "regressor X")?;
    ensure_shape(r, x.ncols(), x.ncols(), "weight R")?;
    let rk = rank(x, RANK_TOL);
    if rk < x.nrows() {
        return Err(Error::RankDeficient {
            what: "regressor X",
            rank: rk,
            required: x.nrows(),
        });
    }
    let chol = spd_cholesky(r, "R")?;
    let rinv_xt = chol.solve(&x.transpose());
    Ok(&rinv_xt * spd_inverse(&(x * &rinv_xt), "X R^-1 X^T")?)
}

/// Outcome of the constructive witness for the `WG` set identity.
#[derive(Debug, Clone)]
pub struct NoiseWitness {
    pub w_hat: RealMatrix,
    /// `max |W_hat G - Delta|`.
    pub residual: f64,
    pub membership: PsdCheck,
    pub holds: bool,
}

/// Given `Delta` in the reduced set
/// `{Delta : G^T R G - (Delta - W0 G)^T Q (Delta - W0 G) >= 0}`, builds
/// `W_hat = Delta (G^T R G)^{-1} G^T R + W0 R^{-1} G_perp (G_perp^T R^{-1} G_perp)^{-1} G_perp^T`
/// and checks `W_hat G = Delta` and that `W_hat` is admissible noise.
pub fn noise_witness_check(model: &NoiseModel, g: &RealMatrix, delta: &RealMatrix) -> Result<NoiseWitness> {
    let big_n = model.n_samples();
    ensure_finite(g, "G")?;
    ensure_finite(delta, "Delta")?;
    if g.nrows() != big_n {
        return Err(Error::DimensionMismatch {
            context: "noise witness G",
            expected: format!("{big_n} rows"),
            found: dims(g.nrows(), g.ncols()),
        });
    }
    ensure_shape(delta, model.p(), g.ncols(), "noise witness Delta")?;
    let rk = rank(g, RANK_TOL);
    if rk < g.ncols() {
        return Err(Error::RankDeficient {
            what: "G",
            rank: rk,
            required: g.ncols(),
        });
    }
    let r = model.r().as_matrix();
    let q = model.q().as_matrix();
    let r_chol = spd_cholesky(r, "R")?;
    let grg = SymmetricMatrix::from_sym(g.transpose() * r * g);
    let offset = delta - model.w0() * g;
    let reduced = SymmetricMatrix::from_sym(grg.as_matrix() - offset.transpose() * q * &offset);
    let reduced_min = reduced.min_eigenvalue();
    let tol = 1e-9 * (1.0 + grg.norm2());
    if reduced_min < -tol {
        return Err(Error::Precondition(format!(
            "Delta violates the reduced QMI (min eigenvalue {reduced_min:e})"
        )));
    }

    let grg_inv = spd_inverse(&grg, "G^T R G")?;
    let mut w_hat = delta * grg_inv * g.transpose() * r;
    if g.nrows() > g.ncols() {
        let g_perp = kernel_basis(g, RANK_TOL)?;
        let rinv_gp = r_chol.solve(&g_perp);
        let inner = g_perp.transpose() * &rinv_gp;
        w_hat += model.w0() * rinv_gp * spd_inverse(&inner, "G_perp^T R^-1 G_perp")? * g_perp.transpose();
    }
    let residual = max_abs(&(&w_hat * g - delta));
    let membership = noise_membership(&w_hat, model, tol)?;
    let scale = 1.0 + max_abs(delta);
    Ok(NoiseWitness {
        holds: residual < 1e-9 * scale && membership.is_psd,
        w_hat,
        residual,
        membership,
    })
}

/// True iff `||Theta~0||_max <= tol`, i.e. the data lies in the row space
/// of the regressor and consistency adds nothing over the right-inverse
/// superset.
pub fn check_equality_condition(set: &QmiParamSet, tol: f64) -> Result<bool> {
    match set.theta_tilde0() {
        Some(t) => Ok(t.is_empty() || max_abs(t) <= tol),
        None => Err(Error::Precondition(
            "equality condition needs a consistent set".into(),
        )),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollapseReport {
    pub collapsing: bool,
    pub lambda_max_m: f64,
    /// The point the set shrinks to, `(Y - W0) G^`.
    pub limit_point: RealMatrix,
}

/// Reports `lambda_max(M)` and flags collapse when it is at most `eps`.
pub fn check_collapse(set: &QmiParamSet, eps: f64) -> Result<CollapseReport> {
    let m = set
        .m
        .as_ref()
        .ok_or_else(|| Error::Precondition("collapse check needs a consistent set".into()))?;
    let lambda_max_m = m.max_eigenvalue();
    Ok(CollapseReport {
        collapsing: lambda_max_m <= eps,
        lambda_max_m,
        limit_point: set.center()?,
    })
}

/// Spectral-norm diameter `2 sqrt(lambda_max(shape) / lambda_min(-Pi11))`
/// after completing the square. Empty sets have diameter 0.
pub fn set_diameter(set: &QmiParamSet) -> Result<f64> {
    let (_, shape) = set.completed_square()?;
    let lo = sym_eigenvalues(&-set.pi11.as_matrix())[0];
    let hi = shape.max_eigenvalue();
    if hi <= 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * (hi / lo).sqrt())
}

/// Max-block deviation between two sets, relative to the largest block
/// entry of either set.
pub fn block_deviation(a: &QmiParamSet, b: &QmiParamSet) -> f64 {
    let pairs: [(&RealMatrix, &RealMatrix); 4] = [
        (&a.theta0, &b.theta0),
        (a.pi11.as_matrix(), b.pi11.as_matrix()),
        (&a.pi12, &b.pi12),
        (a.pi22.as_matrix(), b.pi22.as_matrix()),
    ];
    if pairs.iter().any(|(x, y)| x.shape() != y.shape()) {
        return f64::INFINITY;
    }
    let scale = pairs
        .iter()
        .map(|(x, y)| max_abs(x).max(max_abs(y)))
        .fold(f64::MIN_POSITIVE, f64::max);
    pairs
        .iter()
        .map(|(x, y)| {
            let local = max_abs(x).max(max_abs(y)).max(1e-8 * scale).max(f64::MIN_POSITIVE);
            max_abs(&(*x - *y)) / local
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::spectral_norm;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn counterexample() -> (RegressionData, NoiseModel) {
        (
            RegressionData::new(dmatrix![1.0, 0.0], dmatrix![0.0, 1.0]).unwrap(),
            NoiseModel::spectral_ball(1, 2, 1.0),
        )
    }

    fn random_instance(seed: u64) -> (RegressionData, NoiseModel, RealMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, n, big_n) = (2, 2, 6);
        let x = RealMatrix::from_fn(n, big_n, |_, _| rng.random_range(-1.0..1.0));
        let theta = RealMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0));
        let mut w = RealMatrix::from_fn(p, big_n, |_, _| rng.random_range(-1.0..1.0));
        w *= 0.6 / spectral_norm(&w);
        let y = &theta * &x + w;
        (
            RegressionData::new(x, y).unwrap(),
            NoiseModel::spectral_ball(p, big_n, 1.0),
            theta,
        )
    }

    #[test]
    fn split_center_row_space_data() {
        let x = dmatrix![1.0, 2.0, 0.0; 0.0, 1.0, 1.0];
        let y = dmatrix![3.0, -1.0] * &x;
        let data = RegressionData::new(x.clone(), y).unwrap();
        let model = NoiseModel::spectral_ball(1, 3, 1.0);
        let b = right_inverse_pair(&x, model.r()).unwrap();
        let (t0, tt) = split_center(&data, &model, &b.x_tilde, &b.g, &b.g_tilde).unwrap();
        assert!(max_abs(&tt) < 1e-14);
        assert!(max_abs(&(t0 - dmatrix![3.0, -1.0])) < 1e-13);
    }

    #[test]
    fn split_center_counterexample() {
        let (data, model) = counterexample();
        let b = right_inverse_pair(&data.x, model.r()).unwrap();
        let (t0, tt) = split_center(&data, &model, &b.x_tilde, &b.g, &b.g_tilde).unwrap();
        assert!(t0[(0, 0)].abs() < 1e-15);
        // sign of the kernel vector cancels between X~ and G~
        assert!((tt[(0, 0)].abs() - 1.0).abs() < 1e-15);
        let recon = hstack_pair(&t0, &tt) * crate::linalg::vstack(&data.x, &b.x_tilde);
        assert!(max_abs(&(recon - &data.y)) < 1e-15);
    }

    fn hstack_pair(a: &RealMatrix, b: &RealMatrix) -> RealMatrix {
        crate::linalg::hstack(a, b)
    }

    #[test]
    fn split_center_is_weighted_least_squares() {
        let (data, _, _) = random_instance(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = RealMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let r = SymmetricMatrix::new(&f * f.transpose() + RealMatrix::identity(6, 6)).unwrap();
        let model = NoiseModel::new(RealMatrix::zeros(2, 6), SymmetricMatrix::identity(2), r.clone()).unwrap();
        let b = right_inverse_pair(&data.x, &r).unwrap();
        let (t0, _) = split_center(&data, &model, &b.x_tilde, &b.g, &b.g_tilde).unwrap();
        let rinv = r.as_matrix().clone().try_inverse().unwrap();
        let wls = &data.y * &rinv * data.x.transpose()
            * (&data.x * &rinv * data.x.transpose()).try_inverse().unwrap();
        assert!(max_abs(&(t0 - wls)) < 1e-10);
    }

    #[test]
    fn split_center_rejects_bad_basis() {
        let (data, model) = counterexample();
        let err = split_center(&data, &model, &dmatrix![1.0, 1.0], &dmatrix![1.0; 0.0], &dmatrix![0.0; 1.0]);
        assert!(matches!(err, Err(Error::BasisIdentity { .. })));
    }

    #[test]
    fn consistent_set_without_kernel_component_matches_superset() {
        let x = dmatrix![1.0, 2.0, 0.0, -1.0; 0.0, 1.0, 1.0, 2.0];
        let mut w = RealMatrix::from_row_slice(1, 2, &[0.3, -0.2]) * &x;
        w *= 0.9 / spectral_norm(&w);
        let y = dmatrix![1.0, 0.5] * &x + w;
        let data = RegressionData::new(x.clone(), y).unwrap();
        let model = NoiseModel::spectral_ball(1, 4, 1.0);
        let cons = build_consistent_qmi(&data, &model, None).unwrap();
        assert!(check_equality_condition(&cons, 1e-10).unwrap());
        let sup = build_superset_qmi(&data, &model, &optimal_right_inverse(&x, model.r()).unwrap()).unwrap();
        assert!(block_deviation(&cons, &sup) < 1e-10);
        let xr = (&x * x.transpose()).try_inverse().unwrap();
        assert!(max_abs(&(cons.pi22.as_matrix() - xr)) < 1e-12);
    }

    #[test]
    fn consistent_counterexample_after_regularization() {
        let (data, model) = counterexample();
        let eps = 1e-6;
        let set = build_consistent_qmi(&data, &model.with_r_shift(eps), None).unwrap();
        // closed form: theta^2 <= eps
        let (lo, hi) = set.scalar_interval().unwrap().unwrap();
        assert!((hi - eps.sqrt()).abs() < 1e-12);
        assert!((lo + eps.sqrt()).abs() < 1e-12);
        assert!(set.m.as_ref().unwrap().min_eigenvalue() > 0.0);
    }

    #[test]
    fn consistent_counterexample_without_regularization_violates_slater() {
        let (data, model) = counterexample();
        assert!(matches!(
            build_consistent_qmi(&data, &model, None),
            Err(Error::SlaterViolation { .. })
        ));
    }

    #[test]
    fn consistent_set_is_bounded_and_contains_truth() {
        for seed in 0..20 {
            let (data, model, theta) = random_instance(seed);
            let set = build_consistent_qmi(&data, &model, None).unwrap();
            assert!(set.pi11.max_eigenvalue() < 0.0);
            assert!(max_abs(&set.pi12) < 1e-10);
            assert!(qmi_membership(&set, &theta, set.default_tol()).unwrap().is_psd);
            let at_center = qmi_membership(&set, &set.theta0, 0.0).unwrap();
            assert!((at_center.margin - set.pi22.min_eigenvalue()).abs() < 1e-12);
        }
    }

    #[test]
    fn direct_membership_examples() {
        let (data, model) = counterexample();
        assert!(direct_membership(&data, &model, &dmatrix![0.0], 1e-12).unwrap().is_psd);
        assert!(!direct_membership(&data, &model, &dmatrix![5.0], 1e-12).unwrap().is_psd);
        let exact = RegressionData::new(dmatrix![1.0, 2.0], dmatrix![2.0, 4.0]).unwrap();
        let m = NoiseModel::spectral_ball(1, 2, 2.0);
        let c = direct_membership(&exact, &m, &dmatrix![2.0], 0.0).unwrap();
        assert!((c.margin - 4.0).abs() < 1e-14);
    }

    #[test]
    fn superset_counterexample_intervals() {
        let (data, model) = counterexample();
        let g_hat = optimal_right_inverse(&data.x, model.r()).unwrap();
        assert!(max_abs(&(&g_hat - dmatrix![1.0; 0.0])) < 1e-15);
        let s_hat = build_superset_qmi(&data, &model, &g_hat).unwrap();
        let s_g = build_superset_qmi(&data, &model, &dmatrix![1.0; 1.0]).unwrap();
        let (a, b) = s_hat.scalar_interval().unwrap().unwrap();
        assert!((a + 1.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
        let (a, b) = s_g.scalar_interval().unwrap().unwrap();
        assert!((a - (1.0 - 2f64.sqrt())).abs() < 1e-12 && (b - (1.0 + 2f64.sqrt())).abs() < 1e-12);
        let m = qmi_membership(&s_hat, &dmatrix![1.0], 0.0).unwrap();
        assert!(m.margin.abs() < 1e-15);
        assert!(qmi_membership(&s_hat, &dmatrix![-1.0], 1e-12).unwrap().is_psd);
        assert!(!qmi_membership(&s_g, &dmatrix![-1.0], 1e-12).unwrap().is_psd);
        assert!((set_diameter(&s_hat).unwrap() - 2.0).abs() < 1e-14);
        assert!((set_diameter(&s_g).unwrap() - 2.0 * 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn superset_rejects_non_inverse() {
        let (data, model) = counterexample();
        assert!(build_superset_qmi(&data, &model, &dmatrix![2.0; 0.0]).is_err());
    }

    #[test]
    fn optimal_inverse_is_moore_penrose_for_identity_weight() {
        let (data, _, _) = random_instance(8);
        let g = optimal_right_inverse(&data.x, &SymmetricMatrix::identity(6)).unwrap();
        let mp = data.x.transpose() * (&data.x * data.x.transpose()).try_inverse().unwrap();
        assert!(max_abs(&(g - mp)) < 1e-12);
    }

    #[test]
    fn optimal_inverse_minimizes_weighted_gram() {
        let (data, _, _) = random_instance(9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let f = RealMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let r = SymmetricMatrix::new(&f * f.transpose() + RealMatrix::identity(6, 6) * 0.5).unwrap();
        let g_hat = optimal_right_inverse(&data.x, &r).unwrap();
        let base = g_hat.transpose() * r.as_matrix() * &g_hat;
        let x_perp = kernel_basis(&data.x, 1e-12).unwrap();
        for _ in 0..100 {
            let lambda = RealMatrix::from_fn(4, 2, |_, _| rng.random_range(-2.0..2.0));
            let g = &g_hat + x_perp.transpose() * lambda;
            assert!(max_abs(&(&data.x * &g - RealMatrix::identity(2, 2))) < 1e-10);
            let diff = g.transpose() * r.as_matrix() * &g - &base;
            assert!(sym_eigenvalues(&diff)[0] >= -1e-10);
        }
    }

    #[test]
    fn noise_witness_center_and_boundary() {
        let (data, model) = counterexample();
        let g = optimal_right_inverse(&data.x, model.r()).unwrap();
        let center = noise_witness_check(&model, &g, &(model.w0() * &g)).unwrap();
        assert!(center.holds);
        let boundary = noise_witness_check(&model, &g, &dmatrix![1.0]).unwrap();
        assert!(boundary.holds);
        assert!(boundary.membership.margin.abs() < 1e-14);
        assert!(max_abs(&(boundary.w_hat - dmatrix![1.0, 0.0])) < 1e-15);
        assert!(matches!(
            noise_witness_check(&model, &g, &dmatrix![1.5]),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn collapse_and_diameter_reporting() {
        let (data, model, _) = random_instance(12);
        let set = build_consistent_qmi(&data, &model, None).unwrap();
        let rep = check_collapse(&set, 1e-6).unwrap();
        assert!(!rep.collapsing);
        assert!(max_abs(&(rep.limit_point - &set.theta0)) < 1e-10);
        assert!(set_diameter(&set).unwrap() > 0.0);
        let g = optimal_right_inverse(&data.x, model.r()).unwrap();
        let sup = build_superset_qmi(&data, &model, &g).unwrap();
        assert!(check_collapse(&sup, 1.0).is_err());
        assert!(check_equality_condition(&sup, 1.0).is_err());
    }

    #[test]
    fn unbounded_set_has_no_diameter() {
        let set = QmiParamSet {
            theta0: dmatrix![0.0],
            pi11: SymmetricMatrix::from_diagonal(&[0.0]),
            pi12: dmatrix![0.0],
            pi22: SymmetricMatrix::identity(1),
            m: None,
            theta_tilde0: None,
            kind: SetKind::Superset,
        };
        assert!(matches!(set_diameter(&set), Err(Error::Unbounded { .. })));
    }

    #[test]
    fn json_layout() {
        let (data, model) = counterexample();
        let set = build_consistent_qmi(&data, &model.with_r_shift(1e-3), None).unwrap();
        let v: serde_json::Value = serde_json::to_value(&set).unwrap();
        for key in ["theta0", "Pi11", "Pi12", "Pi22", "M", "theta_tilde0", "kind"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["kind"], "consistent");
        let back: QmiParamSet = serde_json::from_value(v).unwrap();
        assert_eq!(back, set);
    }
}
