//! The uncertain plant as a linear fractional transformation around the
//! set centers.

use serde::{Deserialize, Serialize};

use crate::error::{dims, Error, Result};
use crate::linalg::io::rows;
use crate::linalg::{ensure_shape, RealMatrix, SymmetricMatrix};
use crate::qmi::QmiParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LftDims {
    pub n: usize,
    pub n_p: usize,
    pub p_y: usize,
    pub p_p: usize,
}

impl LftDims {
    /// Rows of each uncertainty output `z = [x; wp]`.
    pub fn z_dim(&self) -> usize {
        self.n + self.n_p
    }

    /// Rows of the uncertainty input `w`: n entering `x+`, p_y entering `y`.
    pub fn w_dim(&self) -> usize {
        self.n + self.p_y
    }
}

/// Center plant plus the two set multipliers.
///
/// With `Delta = [A - A_c, Bp - Bp_c; Cy - Cy_c, Dyp - Dyp_c]` the plant is
/// `x+ = A_c x + Bp_c wp + [I 0] w`, `y = Cy_c x + Dyp_c wp + [0 I] w`,
/// `z = [x; wp]`, `w = Delta z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainLft {
    #[serde(rename = "A_c", with = "rows")]
    pub a_c: RealMatrix,
    #[serde(rename = "Bp_c", with = "rows")]
    pub bp_c: RealMatrix,
    #[serde(rename = "Cy_c", with = "rows")]
    pub cy_c: RealMatrix,
    #[serde(rename = "Dyp_c", with = "rows")]
    pub dyp_c: RealMatrix,
    #[serde(rename = "Cp", with = "rows")]
    pub cp: RealMatrix,
    #[serde(rename = "Dp", with = "rows")]
    pub dp: RealMatrix,
    /// `[Pi11 Pi12; Pi12^T Pi22]` of the `[A Bp]` set.
    #[serde(rename = "P1")]
    pub p1: SymmetricMatrix,
    /// `[Pi11 Pi12; Pi12^T Pi22]` of the `[Cy Dyp]` set.
    #[serde(rename = "P2")]
    pub p2: SymmetricMatrix,
    pub dims: LftDims,
}

impl UncertainLft {
    /// Selector `[I_n 0]` taking the `x+` rows of `w`.
    pub fn bw(&self) -> RealMatrix {
        let d = self.dims;
        let mut m = RealMatrix::zeros(d.n, d.w_dim());
        m.view_mut((0, 0), (d.n, d.n)).fill_with_identity();
        m
    }

    /// Selector `[0 I_py]` taking the `y` rows of `w`.
    pub fn dyw(&self) -> RealMatrix {
        let d = self.dims;
        let mut m = RealMatrix::zeros(d.p_y, d.w_dim());
        m.view_mut((0, d.n), (d.p_y, d.p_y)).fill_with_identity();
        m
    }

    /// `[I_n; 0]`, mapping `x` into `z`.
    pub fn cw(&self) -> RealMatrix {
        let d = self.dims;
        let mut m = RealMatrix::zeros(d.z_dim(), d.n);
        m.view_mut((0, 0), (d.n, d.n)).fill_with_identity();
        m
    }

    /// `[0; I_np]`, mapping `wp` into `z`.
    pub fn dwp(&self) -> RealMatrix {
        let d = self.dims;
        let mut m = RealMatrix::zeros(d.z_dim(), d.n_p);
        m.view_mut((d.n, 0), (d.n_p, d.n_p)).fill_with_identity();
        m
    }
}

/// The scaled multiplier `lambda1 E1^T P1 E1 + lambda2 E2^T P2 E2` on
/// `[w; z]`, with `E1 = [I_n 0 0; 0 0 I]` and `E2 = [0 I_py 0; 0 0 I]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedMultiplier {
    pub p1: SymmetricMatrix,
    pub p2: SymmetricMatrix,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl CombinedMultiplier {
    /// `(E1, E2)` for the given dimensions.
    pub fn embeddings(d: LftDims) -> (RealMatrix, RealMatrix) {
        let (w, z) = (d.w_dim(), d.z_dim());
        let mut e1 = RealMatrix::zeros(d.n + z, w + z);
        e1.view_mut((0, 0), (d.n, d.n)).fill_with_identity();
        e1.view_mut((d.n, w), (z, z)).fill_with_identity();
        let mut e2 = RealMatrix::zeros(d.p_y + z, w + z);
        e2.view_mut((0, d.n), (d.p_y, d.p_y)).fill_with_identity();
        e2.view_mut((d.p_y, w), (z, z)).fill_with_identity();
        (e1, e2)
    }

    pub fn matrix(&self, d: LftDims) -> SymmetricMatrix {
        let (e1, e2) = Self::embeddings(d);
        SymmetricMatrix::from_sym(
            e1.transpose() * self.p1.as_matrix() * &e1 * self.lambda1
                + e2.transpose() * self.p2.as_matrix() * &e2 * self.lambda2,
        )
    }
}

/// Builds the LFT from the `[A Bp]` and `[Cy Dyp]` sets.
pub fn assemble_lft(
    set_ab: &QmiParamSet,
    set_cd: &QmiParamSet,
    cp: &RealMatrix,
    dp: &RealMatrix,
) -> Result<UncertainLft> {
    let n = set_ab.p();
    let cols = set_ab.n();
    if cols < n {
        return Err(Error::DimensionMismatch {
            context: "[A Bp] set",
            expected: format!("at least {n} columns"),
            found: dims(n, cols),
        });
    }
    let n_p = cols - n;
    if set_cd.n() != cols {
        return Err(Error::DimensionMismatch {
            context: "[Cy Dyp] set columns",
            expected: format!("{cols} columns"),
            found: dims(set_cd.p(), set_cd.n()),
        });
    }
    let p_y = set_cd.p();
    let p_p = cp.nrows();
    ensure_shape(cp, p_p, n, "performance output Cp")?;
    ensure_shape(dp, p_p, n_p, "performance feedthrough Dp")?;
    let t_ab = &set_ab.theta0;
    let t_cd = &set_cd.theta0;
    Ok(UncertainLft {
        a_c: t_ab.columns(0, n).into_owned(),
        bp_c: t_ab.columns(n, n_p).into_owned(),
        cy_c: t_cd.columns(0, n).into_owned(),
        dyp_c: t_cd.columns(n, n_p).into_owned(),
        cp: cp.clone(),
        dp: dp.clone(),
        p1: set_ab.multiplier(),
        p2: set_cd.multiplier(),
        dims: LftDims { n, n_p, p_y, p_p },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PlantRealization;
    use crate::qmi::SetKind;

    fn point_set(theta: &RealMatrix) -> QmiParamSet {
        let (p, n) = theta.shape();
        QmiParamSet {
            theta0: theta.clone(),
            pi11: SymmetricMatrix::from_sym(-RealMatrix::identity(p, p)),
            pi12: RealMatrix::zeros(p, n),
            pi22: SymmetricMatrix::zeros(n),
            m: None,
            theta_tilde0: None,
            kind: SetKind::Superset,
        }
    }

    #[test]
    fn benchmark_dimensions() {
        let plant = PlantRealization::fourth_order_benchmark();
        let lft = assemble_lft(
            &point_set(&plant.theta_ab()),
            &point_set(&plant.theta_cd()),
            &plant.cp,
            &plant.dp,
        )
        .unwrap();
        assert_eq!(lft.dims, LftDims { n: 4, n_p: 6, p_y: 2, p_p: 4 });
        assert_eq!(lft.dims.z_dim(), 10);
        assert_eq!(lft.dims.w_dim(), 6);
        assert_eq!(lft.a_c, plant.a);
        assert_eq!(lft.dyp_c, plant.dyp);
        assert_eq!(lft.p1.dim(), 14);
        assert_eq!(lft.p2.dim(), 12);
    }

    #[test]
    fn swapped_sets_are_rejected() {
        let plant = PlantRealization::fourth_order_benchmark();
        let res = assemble_lft(
            &point_set(&plant.theta_cd()),
            &point_set(&plant.theta_ab()),
            &plant.cp,
            &plant.dp,
        );
        assert!(matches!(res, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn combined_multiplier_quadratic_form() {
        let d = LftDims { n: 1, n_p: 1, p_y: 1, p_p: 1 };
        let p1 = SymmetricMatrix::new(RealMatrix::from_row_slice(3, 3, &[-1.0, 0.1, 0.0, 0.1, 2.0, 0.0, 0.0, 0.0, 3.0])).unwrap();
        let p2 = SymmetricMatrix::new(RealMatrix::from_row_slice(3, 3, &[-2.0, 0.0, 0.0, 0.0, 1.0, 0.5, 0.0, 0.5, 1.0])).unwrap();
        let cm = CombinedMultiplier { p1: p1.clone(), p2: p2.clone(), lambda1: 0.5, lambda2: 2.0 };
        let m = cm.matrix(d);
        // [w1 w2 z1 z2]
        let v = nalgebra::DVector::from_vec(vec![0.3, -0.7, 1.1, 0.4]);
        let v1 = nalgebra::DVector::from_vec(vec![0.3, 1.1, 0.4]);
        let v2 = nalgebra::DVector::from_vec(vec![-0.7, 1.1, 0.4]);
        let lhs = (v.transpose() * m.as_matrix() * &v)[(0, 0)];
        let rhs = 0.5 * (v1.transpose() * p1.as_matrix() * &v1)[(0, 0)]
            + 2.0 * (v2.transpose() * p2.as_matrix() * &v2)[(0, 0)];
        assert!((lhs - rhs).abs() < 1e-14);
    }
}
