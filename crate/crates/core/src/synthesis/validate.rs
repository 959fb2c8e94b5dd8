//! A-posteriori checks of a synthesized estimator against concrete plants.

use rand::Rng;
use rand_distr::StandardNormal;

use super::EstimatorRealization;
use crate::error::{Error, Result};
use crate::linalg::{ensure_shape, hstack, sym_eigenvalues, vstack, RealMatrix};
use crate::lti::{hinf_norm, StateSpace};
use crate::qmi::{qmi_membership, QmiParamSet};
use crate::rng::{self, Purpose};

/// Error system `e = zp - z_hat` of plant `[A Bp]`, `[Cy Dyp]`, `Cp`, `Dp`
/// in feedback with the estimator; state `(x, x_E)`.
pub fn error_system(
    theta_ab: &RealMatrix,
    theta_cd: &RealMatrix,
    cp: &RealMatrix,
    dp: &RealMatrix,
    est: &EstimatorRealization,
) -> Result<StateSpace> {
    let n = theta_ab.nrows();
    if theta_ab.ncols() < n {
        return Err(Error::Precondition("[A Bp] must have at least n columns".into()));
    }
    let np = theta_ab.ncols() - n;
    let py = theta_cd.nrows();
    let pp = cp.nrows();
    let ne = est.a.nrows();
    ensure_shape(theta_cd, py, n + np, "[Cy Dyp]")?;
    ensure_shape(cp, pp, n, "Cp")?;
    ensure_shape(dp, pp, np, "Dp")?;
    ensure_shape(&est.a, ne, ne, "estimator A")?;
    ensure_shape(&est.b, ne, py, "estimator B")?;
    ensure_shape(&est.c, pp, ne, "estimator C")?;
    ensure_shape(&est.d, pp, py, "estimator D")?;
    let a = theta_ab.columns(0, n).into_owned();
    let bp = theta_ab.columns(n, np).into_owned();
    let cy = theta_cd.columns(0, n).into_owned();
    let dyp = theta_cd.columns(n, np).into_owned();
    let acl = vstack(
        &hstack(&a, &RealMatrix::zeros(n, ne)),
        &hstack(&(&est.b * &cy), &est.a),
    );
    let bcl = vstack(&bp, &(&est.b * &dyp));
    let ccl = hstack(&(cp - &est.d * &cy), &(-&est.c));
    let dcl = dp - &est.d * &dyp;
    StateSpace::new(acl, bcl, ccl, dcl)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validation {
    pub passed: bool,
    pub norm: f64,
    pub worst_omega: f64,
}

/// Checks `||error system||_inf <= gamma (1 + 1e-6) + 1e-8` for one plant.
/// With `sets` given, the plant must belong to both sets.
pub fn validate_estimator(
    theta_ab: &RealMatrix,
    theta_cd: &RealMatrix,
    cp: &RealMatrix,
    dp: &RealMatrix,
    est: &EstimatorRealization,
    gamma: f64,
    sets: Option<(&QmiParamSet, &QmiParamSet)>,
) -> Result<Validation> {
    if let Some((s_ab, s_cd)) = sets {
        for (set, theta, what) in [(s_ab, theta_ab, "[A Bp]"), (s_cd, theta_cd, "[Cy Dyp]")] {
            let check = qmi_membership(set, theta, set.default_tol())?;
            if !check.is_psd {
                return Err(Error::Precondition(format!(
                    "{what} is outside its set (margin {:e})",
                    check.margin
                )));
            }
        }
    }
    let sys = error_system(theta_ab, theta_cd, cp, dp, est)?;
    let h = hinf_norm(&sys)?;
    Ok(Validation {
        passed: h.value.is_finite() && h.value <= gamma * (1.0 + 1e-6) + 1e-8,
        norm: h.value,
        worst_omega: h.peak_omega,
    })
}

/// Members of a bounded set: centers plus points along random directions,
/// alternating between the boundary and the interior.
pub fn sample_from_set(set: &QmiParamSet, count: usize, seed: u64) -> Result<Vec<RealMatrix>> {
    let mut rng = rng::stream(seed, Purpose::SetSampling, 0, 0);
    let (center, shape) = set.completed_square()?;
    let neg = -set.pi11.as_matrix();
    let (p, n) = (set.p(), set.n());
    let shape_eig = shape.as_matrix().clone().symmetric_eigen();
    let lo = shape_eig.eigenvalues.min();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        if i == 0 || lo <= 0.0 {
            out.push(center.clone());
            continue;
        }
        let mut d = RealMatrix::from_fn(p, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = d.norm();
        d /= norm;
        // shape - t^2 D^T (-Pi11) D >= 0  <=>  t^2 <= 1 / lambda_max(S^{-1/2} K S^{-1/2})
        let k = d.transpose() * &neg * &d;
        let inv_sqrt = &shape_eig.eigenvectors
            * RealMatrix::from_diagonal(&shape_eig.eigenvalues.map(|v| 1.0 / v.sqrt()))
            * shape_eig.eigenvectors.transpose();
        let scaled = &inv_sqrt * k * &inv_sqrt;
        let top = sym_eigenvalues(&scaled).last().copied().unwrap_or(0.0);
        if !(top > 0.0) {
            out.push(center.clone());
            continue;
        }
        let t_max = 1.0 / top.sqrt();
        let t = if i % 2 == 1 { t_max } else { t_max * rng.random::<f64>() };
        out.push(&center + d * t);
    }
    Ok(out)
}
