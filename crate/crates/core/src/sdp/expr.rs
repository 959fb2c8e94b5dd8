//! Symbolic matrix expressions over named decision variables.

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{dims, Error, Result};
use crate::linalg::RealMatrix;

/// Matrix-valued expression. Products are allowed only when at most one
/// factor depends on a variable; canonicalization rejects the rest. A 1 x 1
/// factor whose partner is not conformable acts as a scalar.
#[derive(Debug, Clone)]
pub enum Expr {
    Const(RealMatrix),
    Var(String),
    Transpose(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Scale(f64, Box<Expr>),
    Neg(Box<Expr>),
}

impl Expr {
    pub fn c(m: RealMatrix) -> Self {
        Expr::Const(m)
    }

    pub fn var(name: &str) -> Self {
        Expr::Var(name.to_string())
    }

    pub fn t(self) -> Self {
        Expr::Transpose(Box::new(self))
    }

    pub fn scale(self, k: f64) -> Self {
        Expr::Scale(k, Box::new(self))
    }

    /// Block matrix with the given row and column partition; `None` is a
    /// zero block.
    pub fn blocks(grid: Vec<Vec<Option<Expr>>>, row_sizes: &[usize], col_sizes: &[usize]) -> Self {
        let (nr, nc) = (row_sizes.iter().sum::<usize>(), col_sizes.iter().sum::<usize>());
        let mut acc: Option<Expr> = None;
        let mut r0 = 0;
        for (i, row) in grid.into_iter().enumerate() {
            let mut c0 = 0;
            for (j, cell) in row.into_iter().enumerate() {
                if let Some(e) = cell {
                    let mut left = RealMatrix::zeros(nr, row_sizes[i]);
                    left.view_mut((r0, 0), (row_sizes[i], row_sizes[i])).fill_with_identity();
                    let mut right = RealMatrix::zeros(col_sizes[j], nc);
                    right.view_mut((0, c0), (col_sizes[j], col_sizes[j])).fill_with_identity();
                    let term = Expr::c(left) * e * Expr::c(right);
                    acc = Some(match acc {
                        Some(a) => a + term,
                        None => term,
                    });
                }
                c0 += col_sizes[j];
            }
            r0 += row_sizes[i];
        }
        acc.unwrap_or_else(|| Expr::c(RealMatrix::zeros(nr, nc)))
    }

    /// Numeric value with the given variable assignment.
    pub fn eval(&self, values: &BTreeMap<String, RealMatrix>) -> Result<RealMatrix> {
        Ok(match self {
            Expr::Const(m) => m.clone(),
            Expr::Var(name) => values
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Precondition(format!("no value for variable `{name}`")))?,
            Expr::Transpose(e) => e.eval(values)?.transpose(),
            Expr::Add(a, b) => {
                let (a, b) = (a.eval(values)?, b.eval(values)?);
                if a.shape() != b.shape() {
                    return Err(Error::DimensionMismatch {
                        context: "expression sum",
                        expected: dims(a.nrows(), a.ncols()),
                        found: dims(b.nrows(), b.ncols()),
                    });
                }
                a + b
            }
            Expr::Mul(a, b) => {
                let (a, b) = (a.eval(values)?, b.eval(values)?);
                if a.shape() == (1, 1) && b.nrows() != 1 {
                    return Ok(b * a[(0, 0)]);
                }
                if b.shape() == (1, 1) && a.ncols() != 1 {
                    return Ok(a * b[(0, 0)]);
                }
                if a.ncols() != b.nrows() {
                    return Err(Error::DimensionMismatch {
                        context: "expression product",
                        expected: format!("{} rows", a.ncols()),
                        found: dims(b.nrows(), b.ncols()),
                    });
                }
                a * b
            }
            Expr::Scale(k, e) => e.eval(values)? * *k,
            Expr::Neg(e) => -e.eval(values)?,
        })
    }
}

impl From<RealMatrix> for Expr {
    fn from(m: RealMatrix) -> Self {
        Expr::Const(m)
    }
}

impl From<&RealMatrix> for Expr {
    fn from(m: &RealMatrix) -> Self {
        Expr::Const(m.clone())
    }
}

impl Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::Add(Box::new(self), Box::new(rhs))
    }
}

impl Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::Add(Box::new(self), Box::new(Expr::Neg(Box::new(rhs))))
    }
}

impl Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::Mul(Box::new(self), Box::new(rhs))
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }
}

/// Direction of a block LMI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// `F(x) <= 0`, or `F(x) <= -margin I` when strict.
    NegDef,
    /// `F(x) >= 0`, or `F(x) >= margin I` when strict.
    PosDef,
}

/// A symmetric block matrix of expressions. Only the upper triangle
/// (including the diagonal) is read; `None` is a zero block.
#[derive(Debug, Clone)]
pub struct BlockLmi {
    pub name: String,
    pub grid: Vec<Vec<Option<Expr>>>,
    pub sense: Sense,
    /// Strictness margin; 0 gives a non-strict inequality.
    pub margin: f64,
}

impl BlockLmi {
    pub fn new(name: &str, grid: Vec<Vec<Option<Expr>>>, sense: Sense, margin: f64) -> Self {
        Self {
            name: name.to_string(),
            grid,
            sense,
            margin,
        }
    }

    /// Single-block LMI.
    pub fn single(name: &str, e: Expr, sense: Sense, margin: f64) -> Self {
        Self::new(name, vec![vec![Some(e)]], sense, margin)
    }
}
