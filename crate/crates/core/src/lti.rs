//! Discrete-time state-space systems: stability and H-infinity norm.

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};
use crate::linalg::RealMatrix;

/// `x+ = A x + B w`, `z = C x + D w`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: RealMatrix,
    pub b: RealMatrix,
    pub c: RealMatrix,
    pub d: RealMatrix,
}

impl StateSpace {
    pub fn new(a: RealMatrix, b: RealMatrix, c: RealMatrix, d: RealMatrix) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || b.nrows() != n || c.ncols() != n || d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::DimensionMismatch {
                context: "state-space realization",
                expected: format!("A {n}x{n}, B {n}xm, C pxn, D pxm"),
                found: format!(
                    "A {:?}, B {:?}, C {:?}, D {:?}",
                    a.shape(),
                    b.shape(),
                    c.shape(),
                    d.shape()
                ),
            });
        }
        Ok(Self { a, b, c, d })
    }

    /// `G(e^{j omega})`.
    pub fn frequency_response(&self, omega: f64) -> Result<DMatrix<Complex<f64>>> {
        let n = self.a.nrows();
        let z = Complex::from_polar(1.0, omega);
        let mut lhs: DMatrix<Complex<f64>> = self.a.map(|v| Complex::new(-v, 0.0));
        for i in 0..n {
            lhs[(i, i)] += z;
        }
        let b = self.b.map(|v| Complex::new(v, 0.0));
        let c = self.c.map(|v| Complex::new(v, 0.0));
        let d = self.d.map(|v| Complex::new(v, 0.0));
        if n == 0 {
            return Ok(d);
        }
        let sol = lhs
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Precondition(format!("pole on the unit circle at omega = {omega}")))?;
        Ok(c * sol + d)
    }

    pub fn gain_at(&self, omega: f64) -> Result<f64> {
        let g = self.frequency_response(omega)?;
        if g.is_empty() {
            return Ok(0.0);
        }
        Ok(g.singular_values().iter().fold(0.0_f64, |m, v| m.max(*v)))
    }
}

pub fn spectral_radius(a: &RealMatrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.complex_eigenvalues().iter().fold(0.0_f64, |m, v| m.max(v.norm()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HinfNorm {
    pub value: f64,
    /// Frequency of the peak in rad/sample; NaN for unstable systems.
    pub peak_omega: f64,
}

/// Grid points on `[0, pi]` for the initial sweep.
pub const SWEEP_POINTS: usize = 1024;
const REFINE_ROUNDS: usize = 3;
const REFINE_POINTS: usize = 41;

/// H-infinity norm by a frequency sweep with local refinement around the
/// largest grid peaks. Infinite for systems that are not Schur stable.
pub fn hinf_norm(sys: &StateSpace) -> Result<HinfNorm> {
    if spectral_radius(&sys.a) >= 1.0 {
        return Ok(HinfNorm {
            value: f64::INFINITY,
            peak_omega: f64::NAN,
        });
    }
    let pi = std::f64::consts::PI;
    let step = pi / (SWEEP_POINTS - 1) as f64;
    let gains = (0..SWEEP_POINTS)
        .map(|k| sys.gain_at(k as f64 * step))
        .collect::<Result<Vec<_>>>()?;
    // local maxima, largest first
    let mut peaks: Vec<usize> = (0..SWEEP_POINTS)
        .filter(|&k| {
            (k == 0 || gains[k] >= gains[k - 1]) && (k + 1 == SWEEP_POINTS || gains[k] >= gains[k + 1])
        })
        .collect();
    peaks.sort_by(|a, b| gains[*b].total_cmp(&gains[*a]));
    peaks.truncate(4);

    let mut best = HinfNorm {
        value: 0.0,
        peak_omega: 0.0,
    };
    for &k in &peaks {
        let mut center = k as f64 * step;
        let mut value = gains[k];
        let mut half = step;
        for _ in 0..REFINE_ROUNDS {
            for i in 0..REFINE_POINTS {
                let w = (center - half + 2.0 * half * i as f64 / (REFINE_POINTS - 1) as f64).clamp(0.0, pi);
                let g = sys.gain_at(w)?;
                if g > value {
                    value = g;
                    center = w;
                }
            }
            half /= 10.0;
        }
        if value > best.value {
            best = HinfNorm {
                value,
                peak_omega: center,
            };
        }
    }
    Ok(best)
}
