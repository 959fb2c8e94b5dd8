//! Noise sets, regression datasets and the two-stage data-collection
//! protocol for the estimation problem.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{dims, Error, Result};
use crate::linalg::io::rows;
use crate::linalg::{
    ensure_finite, ensure_shape, is_psd, kernel_basis, rank, spectral_norm,
    sym_eigenvalues, vstack, PsdCheck, RealMatrix, SymmetricMatrix, RANK_TOL,
};
use crate::rng::{self, Purpose};

/// Relative tolerance used when validating `Q` and `R` at construction.
pub const MODEL_TOL: f64 = 1e-10;

/// The noise set `{W : R - (W - W0)^T Q (W - W0) >= 0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    #[serde(rename = "W0", with = "rows")]
    w0: RealMatrix,
    #[serde(rename = "Q")]
    q: SymmetricMatrix,
    #[serde(rename = "R")]
    r: SymmetricMatrix,
}

impl NoiseModel {
    pub fn new(w0: RealMatrix, q: SymmetricMatrix, r: SymmetricMatrix) -> Result<Self> {
        ensure_finite(&w0, "W0")?;
        ensure_shape(&w0, q.dim(), r.dim(), "noise model W0")?;
        for (m, what) in [(&q, "Q"), (&r, "R")] {
            let check = is_psd(m, MODEL_TOL)?;
            if !check.is_psd {
                return Err(Error::NotPositiveDefinite {
                    what,
                    min_eig: check.margin,
                });
            }
        }
        Ok(Self { w0, q, r })
    }

    /// `sigma_max(W) <= bound`: `W0 = 0`, `Q = I`, `R = bound^2 I`.
    pub fn spectral_ball(p: usize, n_samples: usize, bound: f64) -> Self {
        let mut r = SymmetricMatrix::identity(n_samples).into_inner();
        r *= bound * bound;
        Self {
            w0: RealMatrix::zeros(p, n_samples),
            q: SymmetricMatrix::identity(p),
            r: SymmetricMatrix::from_sym(r),
        }
    }

    pub fn w0(&self) -> &RealMatrix {
        &self.w0
    }

    pub fn q(&self) -> &SymmetricMatrix {
        &self.q
    }

    pub fn r(&self) -> &SymmetricMatrix {
        &self.r
    }

    /// Rows of a noise matrix.
    pub fn p(&self) -> usize {
        self.q.dim()
    }

    /// Number of samples.
    pub fn n_samples(&self) -> usize {
        self.r.dim()
    }

    /// Same model with `R` replaced by `R + eps I`.
    pub fn with_r_shift(&self, eps: f64) -> Self {
        let mut r = self.r.as_matrix().clone();
        for i in 0..r.nrows() {
            r[(i, i)] += eps;
        }
        Self {
            w0: self.w0.clone(),
            q: self.q.clone(),
            r: SymmetricMatrix::from_sym(r),
        }
    }

    /// `R - (W - W0)^T Q (W - W0)`.
    pub fn defect(&self, w: &RealMatrix) -> Result<SymmetricMatrix> {
        ensure_shape(w, self.p(), self.n_samples(), "noise matrix W")?;
        ensure_finite(w, "noise matrix W")?;
        let d = w - &self.w0;
        Ok(SymmetricMatrix::from_sym(
            self.r.as_matrix() - d.transpose() * self.q.as_matrix() * d,
        ))
    }
}

/// Tests `W` against the noise set: member iff
/// `R - (W - W0)^T Q (W - W0) >= -tol`. The margin is the smallest
/// eigenvalue of that matrix.
pub fn noise_membership(w: &RealMatrix, model: &NoiseModel, tol: f64) -> Result<PsdCheck> {
    let margin = model.defect(w)?.min_eigenvalue();
    Ok(PsdCheck {
        is_psd: margin >= -tol,
        margin,
    })
}

/// Regressors `X` (n x N) and regressands `Y` (p x N) with `Y = Theta X + W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionData {
    #[serde(rename = "X", with = "rows")]
    pub x: RealMatrix,
    #[serde(rename = "Y", with = "rows")]
    pub y: RealMatrix,
}

impl RegressionData {
    pub fn new(x: RealMatrix, y: RealMatrix) -> Result<Self> {
        ensure_finite(&x, "regressor X")?;
        ensure_finite(&y, "regressand Y")?;
        if x.ncols() != y.ncols() {
            return Err(Error::DimensionMismatch {
                context: "regression data columns",
                expected: format!("{} columns", x.ncols()),
                found: format!("{} columns", y.ncols()),
            });
        }
        Ok(Self { x, y })
    }

    pub fn n_regressors(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.x.ncols()
    }

    pub(crate) fn check_model(&self, model: &NoiseModel) -> Result<()> {
        if model.p() != self.n_outputs() || model.n_samples() != self.n_samples() {
            return Err(Error::DimensionMismatch {
                context: "noise model vs data",
                expected: dims(self.n_outputs(), self.n_samples()),
                found: dims(model.p(), model.n_samples()),
            });
        }
        Ok(())
    }

    pub(crate) fn check_full_row_rank(&self) -> Result<()> {
        let rk = rank(&self.x, RANK_TOL);
        if rk < self.n_regressors() {
            return Err(Error::RankDeficient {
                what: "regressor X",
                rank: rk,
                required: self.n_regressors(),
            });
        }
        Ok(())
    }
}

/// Plant `x+ = A x + Bp wp`, `zp = Cp x + Dp wp`, `y = Cy x + Dyp wp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantRealization {
    #[serde(rename = "A", with = "rows")]
    pub a: RealMatrix,
    #[serde(rename = "Bp", with = "rows")]
    pub bp: RealMatrix,
    #[serde(rename = "Cy", with = "rows")]
    pub cy: RealMatrix,
    #[serde(rename = "Dyp", with = "rows")]
    pub dyp: RealMatrix,
    #[serde(rename = "Cp", with = "rows")]
    pub cp: RealMatrix,
    #[serde(rename = "Dp", with = "rows")]
    pub dp: RealMatrix,
}

impl PlantRealization {
    pub fn new(
        a: RealMatrix,
        bp: RealMatrix,
        cy: RealMatrix,
        dyp: RealMatrix,
        cp: RealMatrix,
        dp: RealMatrix,
    ) -> Result<Self> {
        let plant = Self { a, bp, cy, dyp, cp, dp };
        plant.validate()?;
        Ok(plant)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        let np = self.bp.ncols();
        let py = self.cy.nrows();
        let pp = self.cp.nrows();
        ensure_shape(&self.a, n, n, "plant A")?;
        ensure_shape(&self.bp, n, np, "plant Bp")?;
        ensure_shape(&self.cy, py, n, "plant Cy")?;
        ensure_shape(&self.dyp, py, np, "plant Dyp")?;
        ensure_shape(&self.cp, pp, n, "plant Cp")?;
        ensure_shape(&self.dp, pp, np, "plant Dp")?;
        for (m, what) in [
            (&self.a, "plant A"),
            (&self.bp, "plant Bp"),
            (&self.cy, "plant Cy"),
            (&self.dyp, "plant Dyp"),
            (&self.cp, "plant Cp"),
            (&self.dp, "plant Dp"),
        ] {
            ensure_finite(m, what)?;
        }
        Ok(())
    }

    /// The fourth-order benchmark: two measured states, six performance
    /// inputs (four on the state, two on the measurement), full-state
    /// estimation target.
    pub fn fourth_order_benchmark() -> Self {
        #[rustfmt::skip]
        let a = RealMatrix::from_row_slice(4, 4, &[
            1.0, 0.2, 0.0, 0.0,
            -1.0, 0.5, 0.6, 0.3,
            0.0, 0.0, 1.0, 0.2,
            0.3, 0.15, -0.3, 0.85,
        ]);
        let mut bp = RealMatrix::zeros(4, 6);
        bp.view_mut((0, 0), (4, 4)).fill_with_identity();
        #[rustfmt::skip]
        let cy = RealMatrix::from_row_slice(2, 4, &[
            1.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0,
        ]);
        let mut dyp = RealMatrix::zeros(2, 6);
        dyp.view_mut((0, 4), (2, 2)).fill_with_identity();
        Self {
            a,
            bp,
            cy,
            dyp,
            cp: RealMatrix::identity(4, 4),
            dp: RealMatrix::zeros(4, 6),
        }
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.bp.ncols()
    }

    pub fn n_measurements(&self) -> usize {
        self.cy.nrows()
    }

    pub fn n_performance(&self) -> usize {
        self.cp.nrows()
    }

    /// `[A Bp]`.
    pub fn theta_ab(&self) -> RealMatrix {
        crate::linalg::hstack(&self.a, &self.bp)
    }

    /// `[Cy Dyp]`.
    pub fn theta_cd(&self) -> RealMatrix {
        crate::linalg::hstack(&self.cy, &self.dyp)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub tau0: f64,
    #[serde(rename = "N")]
    pub n_samples: usize,
}

/// Stacked samples `X, X+, Wp, Y` and the noise sets for `W` (on `X+`) and
/// `V` (on `Y`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationDataset {
    #[serde(rename = "X", with = "rows")]
    pub x: RealMatrix,
    #[serde(rename = "X_plus", with = "rows")]
    pub x_plus: RealMatrix,
    #[serde(rename = "Wp", with = "rows")]
    pub wp: RealMatrix,
    #[serde(rename = "Y", with = "rows")]
    pub y: RealMatrix,
    #[serde(rename = "noise_W")]
    pub noise_w: NoiseModel,
    #[serde(rename = "noise_V")]
    pub noise_v: NoiseModel,
    pub meta: DatasetMeta,
}

impl EstimationDataset {
    pub fn n_samples(&self) -> usize {
        self.x.ncols()
    }

    /// `[X; Wp]`.
    pub fn regressor(&self) -> RealMatrix {
        vstack(&self.x, &self.wp)
    }

    /// Checks shapes and that `[X; Wp]` has full row rank.
    pub fn validate(&self) -> Result<()> {
        let n = self.x.nrows();
        let big_n = self.x.ncols();
        ensure_shape(&self.x_plus, n, big_n, "dataset X_plus")?;
        ensure_shape(&self.wp, self.wp.nrows(), big_n, "dataset Wp")?;
        ensure_shape(&self.y, self.y.nrows(), big_n, "dataset Y")?;
        ensure_shape(self.noise_w.w0(), n, big_n, "dataset noise_W")?;
        ensure_shape(self.noise_v.w0(), self.y.nrows(), big_n, "dataset noise_V")?;
        let reg = self.regressor();
        let rk = rank(&reg, RANK_TOL);
        if rk < reg.nrows() {
            return Err(Error::RankDeficient {
                what: "regressor [X; Wp]",
                rank: rk,
                required: reg.nrows(),
            });
        }
        Ok(())
    }

    /// Regression problem for `[A Bp]`: `X+ = [A Bp][X; Wp] + W`.
    pub fn ab_regression(&self) -> RegressionData {
        RegressionData {
            x: self.regressor(),
            y: self.x_plus.clone(),
        }
    }

    /// Regression problem for `[Cy Dyp]`: `Y = [Cy Dyp][X; Wp] + V`.
    pub fn cd_regression(&self) -> RegressionData {
        RegressionData {
            x: self.regressor(),
            y: self.y.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlaterStatus {
    Strict,
    Marginal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlaterReport {
    pub status: SlaterStatus,
    /// Smallest eigenvalue of `R - (W_bar - W0)^T Q (W_bar - W0)`.
    pub lambda_min: f64,
    pub theta_bar: RealMatrix,
    pub w_bar: RealMatrix,
    /// Smallest `eps` for which `R + eps I` makes the witness strict;
    /// `None` when already strict.
    pub suggested_eps: Option<f64>,
}

/// Relative threshold separating strict from marginal feasibility.
pub const SLATER_TOL: f64 = 1e-9;

/// Evaluates strict feasibility of the noise set at the least-squares
/// witness `Theta_bar = Y X^T (X X^T)^{-1}`.
pub fn check_slater(data: &RegressionData, model: &NoiseModel) -> Result<SlaterReport> {
    data.check_model(model)?;
    data.check_full_row_rank()?;
    let gram = &data.x * data.x.transpose();
    let theta_bar = (crate::linalg::spd_inverse(&gram, "X X^T")? * &data.x * data.y.transpose())
        .transpose();
    let w_bar = &data.y - &theta_bar * &data.x;
    let classify = |ev: &[f64]| -> (SlaterStatus, f64) {
        let lo = ev[0];
        let scale = ev.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
        let status = if lo > SLATER_TOL * scale {
            SlaterStatus::Strict
        } else if lo >= -SLATER_TOL * scale {
            SlaterStatus::Marginal
        } else {
            SlaterStatus::Infeasible
        };
        (status, lo)
    };
    let defect = model.defect(&w_bar)?;
    let (status, lambda_min) = classify(&defect.eigenvalues());

    let suggested_eps = if status == SlaterStatus::Strict {
        None
    } else {
        let strict_at = |eps: f64| -> bool {
            let mut m = defect.as_matrix().clone();
            for i in 0..m.nrows() {
                m[(i, i)] += eps;
            }
            classify(&sym_eigenvalues(&m)).0 == SlaterStatus::Strict
        };
        let mut hi = (-lambda_min).max(0.0) + SLATER_TOL * defect.norm2().max(1.0);
        while !strict_at(hi) {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if strict_at(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(hi)
    };

    Ok(SlaterReport {
        status,
        lambda_min,
        theta_bar,
        w_bar,
        suggested_eps,
    })
}

/// Axis-aligned sampling box for states and performance inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingBox {
    pub state: Vec<(f64, f64)>,
    pub input: Vec<(f64, f64)>,
}

impl SamplingBox {
    pub fn uniform(n: usize, n_p: usize, lo: f64, hi: f64) -> Self {
        Self {
            state: vec![(lo, hi); n],
            input: vec![(lo, hi); n_p],
        }
    }
}

fn draw_box<R: Rng + ?Sized>(bounds: &[(f64, f64)], n_samples: usize, rng: &mut R) -> Result<RealMatrix> {
    let mut out = RealMatrix::zeros(bounds.len(), n_samples);
    let dists = bounds
        .iter()
        .map(|&(lo, hi)| {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::Config(format!("invalid sampling bounds [{lo}, {hi}]")));
            }
            Ok(if lo == hi { None } else { Some(Uniform::new(lo, hi).expect("checked bounds")) })
        })
        .collect::<Result<Vec<_>>>()?;
    // column-major draw order: one sample (all coordinates) at a time
    for k in 0..n_samples {
        for (i, d) in dists.iter().enumerate() {
            out[(i, k)] = match d {
                Some(d) => d.sample(rng),
                None => bounds[i].0,
            };
        }
    }
    Ok(out)
}

/// Draws `n_samples` independent one-step pairs: `x_k` and `wp_k` uniform on
/// the box, `x_{k+1}` and `y_k` exact from the plant. Noise models are the
/// unit spectral balls; noise itself is injected separately.
pub fn generate_dataset(
    plant: &PlantRealization,
    n_samples: usize,
    ranges: &SamplingBox,
    seed: u64,
) -> Result<EstimationDataset> {
    let mut rng = rng::stream(seed, Purpose::Dataset, 0, 0);
    let mut ds = generate_dataset_with_rng(plant, n_samples, ranges, &mut rng)?;
    ds.meta.seed = seed;
    Ok(ds)
}

pub fn generate_dataset_with_rng<R: Rng + ?Sized>(
    plant: &PlantRealization,
    n_samples: usize,
    ranges: &SamplingBox,
    rng: &mut R,
) -> Result<EstimationDataset> {
    plant.validate()?;
    if n_samples == 0 {
        return Err(Error::Config("number of samples must be at least 1".into()));
    }
    if ranges.state.len() != plant.n_states() || ranges.input.len() != plant.n_inputs() {
        return Err(Error::DimensionMismatch {
            context: "sampling box",
            expected: format!("{} state / {} input ranges", plant.n_states(), plant.n_inputs()),
            found: format!("{} / {}", ranges.state.len(), ranges.input.len()),
        });
    }
    let x = draw_box(&ranges.state, n_samples, rng)?;
    let wp = draw_box(&ranges.input, n_samples, rng)?;
    let x_plus = &plant.a * &x + &plant.bp * &wp;
    let y = &plant.cy * &x + &plant.dyp * &wp;
    Ok(EstimationDataset {
        noise_w: NoiseModel::spectral_ball(plant.n_states(), n_samples, 1.0),
        noise_v: NoiseModel::spectral_ball(plant.n_measurements(), n_samples, 1.0),
        x,
        x_plus,
        wp,
        y,
        meta: DatasetMeta {
            seed: 0,
            tau0: 0.0,
            n_samples,
        },
    })
}

/// Noise `W = tau1 Theta_W X + tau0 Theta~ X_perp` with every singular value
/// of `Theta~ X_perp` equal to `bound` and `tau1` chosen so that
/// `sigma_max(W) = bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredNoise {
    pub w: RealMatrix,
    pub tau1: f64,
    /// The kernel component `Theta~ X_perp` before scaling by `tau0`.
    pub kernel_part: RealMatrix,
}

pub fn make_structured_noise(
    x: &RealMatrix,
    rows: usize,
    tau0: f64,
    seed: u64,
    bound: f64,
) -> Result<StructuredNoise> {
    let mut rng = rng::stream(seed, Purpose::ProcessNoise, 0, 0);
    make_structured_noise_with_rng(x, rows, tau0, bound, &mut rng)
}

pub fn make_structured_noise_with_rng<R: Rng + ?Sized>(
    x: &RealMatrix,
    rows: usize,
    tau0: f64,
    bound: f64,
    rng: &mut R,
) -> Result<StructuredNoise> {
    ensure_finite(x, "regressor X")?;
    if !(0.0..1.0).contains(&tau0) {
        return Err(Error::Precondition(format!("tau0 = {tau0} outside [0, 1)")));
    }
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(Error::Precondition(format!("noise bound {bound} must be positive")));
    }
    let (n, big_n) = x.shape();
    let rk = rank(x, RANK_TOL);
    if rk < n {
        return Err(Error::RankDeficient {
            what: "regressor X",
            rank: rk,
            required: n,
        });
    }
    let mut gaussian = |r: usize, c: usize| -> RealMatrix {
        RealMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut *rng))
    };

    let x_perp = kernel_basis(x, RANK_TOL)?;
    let kernel_part = if x_perp.nrows() == 0 {
        RealMatrix::zeros(rows, big_n)
    } else {
        let raw = gaussian(rows, x_perp.nrows()) * &x_perp;
        // replace every nonzero singular value by `bound`
        let svd = raw.svd(true, true);
        let u = svd.u.expect("requested");
        let v_t = svd.v_t.expect("requested");
        let smax = svd.singular_values.max();
        let mut out = RealMatrix::zeros(rows, big_n);
        for (i, &s) in svd.singular_values.iter().enumerate() {
            if s > RANK_TOL * smax {
                out += u.column(i) * v_t.row(i) * bound;
            }
        }
        out
    };
    let theta_w = gaussian(rows, n);
    let row_part = &theta_w * x;

    let kernel_scaled = &kernel_part * tau0;
    let base = spectral_norm(&kernel_scaled);
    if base > bound {
        return Err(Error::Construction(format!(
            "kernel component alone has sigma_max {base:e} > bound {bound:e}"
        )));
    }
    let row_norm = spectral_norm(&row_part);
    if row_norm == 0.0 {
        return Err(Error::Construction("row-space component vanished".into()));
    }
    let sigma = |tau1: f64| spectral_norm(&(&row_part * tau1 + &kernel_scaled));

    let (mut lo, mut hi) = (0.0, bound / row_norm);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let s = sigma(mid);
        if (s - bound).abs() <= 1e-14 * bound {
            lo = mid;
            hi = mid;
            break;
        }
        if s < bound {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau1 = 0.5 * (lo + hi);
    let w = &row_part * tau1 + kernel_scaled;
    let achieved = spectral_norm(&w);
    if (achieved - bound).abs() > 1e-10 * bound.max(1.0) {
        return Err(Error::Construction(format!(
            "sigma_max(W) = {achieved} could not be matched to {bound} (tau1 = {tau1})"
        )));
    }
    Ok(StructuredNoise {
        w,
        tau1,
        kernel_part,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs, singular_values};
    use nalgebra::dmatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn counterexample() -> (RegressionData, NoiseModel) {
        let data = RegressionData::new(dmatrix![1.0, 0.0], dmatrix![0.0, 1.0]).unwrap();
        let model = NoiseModel::spectral_ball(1, 2, 1.0);
        (data, model)
    }

    #[test]
    fn membership_at_center() {
        let model = NoiseModel::new(
            dmatrix![0.3, -0.2, 0.1],
            SymmetricMatrix::identity(1),
            SymmetricMatrix::from_diagonal(&[2.0, 3.0, 4.0]),
        )
        .unwrap();
        let c = noise_membership(&model.w0().clone(), &model, 1e-12).unwrap();
        assert!(c.is_psd);
        assert!((c.margin - 2.0).abs() < 1e-14);
    }

    #[test]
    fn membership_on_boundary() {
        let (_, model) = counterexample();
        let c = noise_membership(&dmatrix![0.0, 1.0], &model, 1e-12).unwrap();
        assert!(c.is_psd);
        assert!(c.margin.abs() < 1e-15);
    }

    #[test]
    fn membership_outside_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut w = RealMatrix::from_fn(2, 5, |_, _| rng.random_range(-1.0..1.0));
        w *= 1.1 / spectral_norm(&w);
        let model = NoiseModel::spectral_ball(2, 5, 1.0);
        let c = noise_membership(&w, &model, 1e-12).unwrap();
        assert!(!c.is_psd);
        // oracle: margin = 1 - sigma_max^2
        assert!((c.margin - (1.0 - 1.21)).abs() < 1e-12);
    }

    #[test]
    fn membership_dimension_mismatch() {
        let model = NoiseModel::spectral_ball(1, 3, 1.0);
        assert!(matches!(
            noise_membership(&dmatrix![0.0, 1.0], &model, 1e-12),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn noise_model_rejects_indefinite_weights() {
        let r = NoiseModel::new(
            RealMatrix::zeros(1, 2),
            SymmetricMatrix::identity(1),
            SymmetricMatrix::from_diagonal(&[1.0, -0.5]),
        );
        assert!(matches!(r, Err(Error::NotPositiveDefinite { what: "R", .. })));
    }

    #[test]
    fn slater_strict_for_exact_data() {
        let data = RegressionData::new(dmatrix![1.0, 2.0, 0.5], dmatrix![2.0, 4.0, 1.0]).unwrap();
        let model = NoiseModel::spectral_ball(1, 3, 1.0);
        let rep = check_slater(&data, &model).unwrap();
        assert_eq!(rep.status, SlaterStatus::Strict);
        assert!(max_abs(&rep.w_bar) < 1e-14);
        assert!(rep.suggested_eps.is_none());
    }

    #[test]
    fn slater_marginal_on_counterexample() {
        let (data, model) = counterexample();
        let rep = check_slater(&data, &model).unwrap();
        assert_eq!(rep.status, SlaterStatus::Marginal);
        assert!(rep.lambda_min.abs() < 1e-15);
        assert!(max_abs(&(rep.w_bar - dmatrix![0.0, 1.0])) < 1e-15);
        let eps = rep.suggested_eps.unwrap();
        assert!(eps > 0.0 && eps < 1e-8);
        let shifted = check_slater(&data, &model.with_r_shift(eps)).unwrap();
        assert_eq!(shifted.status, SlaterStatus::Strict);
    }

    #[test]
    fn slater_strict_after_shift() {
        let (data, model) = counterexample();
        let rep = check_slater(&data, &model.with_r_shift(1e-3)).unwrap();
        assert_eq!(rep.status, SlaterStatus::Strict);
        assert!((rep.lambda_min - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn slater_infeasible_reported() {
        let data = RegressionData::new(dmatrix![1.0, 0.0], dmatrix![0.0, 2.0]).unwrap();
        let model = NoiseModel::spectral_ball(1, 2, 1.0);
        let rep = check_slater(&data, &model).unwrap();
        assert_eq!(rep.status, SlaterStatus::Infeasible);
        // R + eps I - diag(0, 4) is strict once eps > 3
        let eps = rep.suggested_eps.unwrap();
        assert!((eps - 3.0).abs() < 1e-8);
    }

    #[test]
    fn degenerate_state_box_pins_successor() {
        let mut plant = PlantRealization::fourth_order_benchmark();
        plant.a = RealMatrix::identity(4, 4);
        plant.bp = RealMatrix::zeros(4, 6);
        let xbar = [1.0, -2.0, 3.0, 0.5];
        let ranges = SamplingBox {
            state: xbar.iter().map(|&v| (v, v)).collect(),
            input: vec![(-1.0, 1.0); 6],
        };
        let ds = generate_dataset(&plant, 7, &ranges, 3).unwrap();
        for k in 0..7 {
            for i in 0..4 {
                assert_eq!(ds.x_plus[(i, k)], xbar[i]);
            }
        }
    }

    #[test]
    fn benchmark_dataset_shapes_and_exactness() {
        let plant = PlantRealization::fourth_order_benchmark();
        let ds = generate_dataset(&plant, 100, &SamplingBox::uniform(4, 6, -10.0, 10.0), 42).unwrap();
        assert_eq!(ds.x.shape(), (4, 100));
        assert_eq!(ds.wp.shape(), (6, 100));
        assert_eq!(ds.y.shape(), (2, 100));
        assert!(ds.x.iter().chain(ds.wp.iter()).all(|v| (-10.0..10.0).contains(v)));
        let resid = &ds.y - plant.theta_cd() * ds.regressor();
        assert_eq!(max_abs(&resid), 0.0);
        ds.validate().unwrap();
    }

    #[test]
    fn dataset_generation_is_deterministic() {
        let plant = PlantRealization::fourth_order_benchmark();
        let ranges = SamplingBox::uniform(4, 6, -10.0, 10.0);
        let a = generate_dataset(&plant, 20, &ranges, 9).unwrap();
        let b = generate_dataset(&plant, 20, &ranges, 9).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&plant, 20, &ranges, 10).unwrap();
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn dataset_rejects_bad_bounds() {
        let plant = PlantRealization::fourth_order_benchmark();
        let mut ranges = SamplingBox::uniform(4, 6, -10.0, 10.0);
        ranges.state[1] = (1.0, -1.0);
        assert!(generate_dataset(&plant, 5, &ranges, 0).is_err());
        assert!(generate_dataset(&plant, 0, &SamplingBox::uniform(4, 6, -1.0, 1.0), 0).is_err());
    }

    fn regressor(seed: u64) -> RealMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RealMatrix::from_fn(3, 12, |_, _| rng.random_range(-10.0..10.0))
    }

    #[test]
    fn structured_noise_tau0_zero_lies_in_row_space() {
        let x = regressor(1);
        let sn = make_structured_noise(&x, 2, 0.0, 5, 1.0).unwrap();
        let x_perp = kernel_basis(&x, 1e-12).unwrap();
        assert!(max_abs(&(&sn.w * x_perp.transpose())) < 1e-10);
        assert!((spectral_norm(&sn.w) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn structured_noise_kernel_part_has_flat_spectrum() {
        let x = regressor(2);
        let sn = make_structured_noise(&x, 2, 0.5, 6, 0.7).unwrap();
        let sv = singular_values(&sn.kernel_part);
        assert!((sv[0] - 0.7).abs() < 1e-12 && (sv[1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn structured_noise_tau1_matches_closed_form() {
        // the two components are row-orthogonal, so
        // sigma_max(W)^2 = tau1^2 sigma_max(B)^2 + tau0^2 bound^2
        let x = regressor(3);
        for &tau0 in &[0.0, 0.3, 0.9, 0.999] {
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let sn = make_structured_noise_with_rng(&x, 2, tau0, 1.0, &mut rng).unwrap();
            let row_part = &sn.w - &sn.kernel_part * tau0;
            let b_norm = spectral_norm(&row_part) / sn.tau1;
            let expected = (1.0 - tau0 * tau0).sqrt() / b_norm;
            assert!((sn.tau1 - expected).abs() < 1e-10 * expected.max(1.0), "tau0={tau0}");
        }
    }

    #[test]
    fn structured_noise_bound_over_grid() {
        let x = regressor(4);
        let grid = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99];
        for (i, &tau0) in grid.iter().enumerate() {
            let sn = make_structured_noise(&x, 3, tau0, i as u64, 1.0).unwrap();
            assert!((spectral_norm(&sn.w) - 1.0).abs() < 1e-9, "tau0={tau0}");
        }
        // as tau0 -> 1 the row-space weight vanishes while the bound holds
        let tau0 = 0.999_999;
        let sn = make_structured_noise(&x, 3, tau0, 1, 1.0).unwrap();
        let row_weight = spectral_norm(&(&sn.w - &sn.kernel_part * tau0));
        assert!((row_weight - (1.0 - tau0 * tau0).sqrt()).abs() < 1e-8);
        assert!((spectral_norm(&sn.w) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn structured_noise_rejects_bad_tau0() {
        let x = regressor(5);
        assert!(make_structured_noise(&x, 2, 1.0, 0, 1.0).is_err());
        assert!(make_structured_noise(&x, 2, -0.1, 0, 1.0).is_err());
    }
}
