//! Lowering of block LMIs to the standard form `F0 + sum_k x_k F_k <= 0`.

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use super::expr::{BlockLmi, Expr, Sense};
use crate::error::{dims, Error, Result};
use crate::linalg::io::rows;
use crate::linalg::{max_abs, sym_eigenvalues, RealMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarKind {
    /// n x n symmetric, `n(n+1)/2` components in svec order.
    Symmetric(usize),
    /// r x c, column-major components.
    Full(usize, usize),
}

impl VarKind {
    pub fn shape(self) -> (usize, usize) {
        match self {
            VarKind::Symmetric(n) => (n, n),
            VarKind::Full(r, c) => (r, c),
        }
    }

    pub fn n_components(self) -> usize {
        match self {
            VarKind::Symmetric(n) => n * (n + 1) / 2,
            VarKind::Full(r, c) => r * c,
        }
    }

    /// Basis matrix of component `k`. Symmetric off-diagonal components
    /// use `(E_ij + E_ji) / sqrt(2)`, so the component equals
    /// `sqrt(2) P_ij`.
    fn basis(self, k: usize) -> RealMatrix {
        let (r, c) = self.shape();
        let mut e = RealMatrix::zeros(r, c);
        match self {
            VarKind::Symmetric(_) => {
                let (i, j) = svec_index(k);
                if i == j {
                    e[(i, i)] = 1.0;
                } else {
                    e[(i, j)] = 1.0 / SQRT_2;
                    e[(j, i)] = 1.0 / SQRT_2;
                }
            }
            VarKind::Full(r, _) => e[(k % r, k / r)] = 1.0,
        }
        e
    }
}

/// svec order: `(0,0), (1,0), (1,1), (2,0), ...` (lower triangle by rows).
fn svec_index(k: usize) -> (usize, usize) {
    let mut i = 0;
    while (i + 1) * (i + 2) / 2 <= k {
        i += 1;
    }
    (i, k - i * (i + 1) / 2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarInfo {
    pub name: String,
    pub kind: VarKind,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub index: usize,
    #[serde(with = "rows")]
    pub matrix: RealMatrix,
}

/// `F0 + sum_k x_k F_k <= 0`; only nonzero `F_k` are stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiConstraint {
    pub name: String,
    #[serde(with = "rows")]
    pub f0: RealMatrix,
    pub coeffs: Vec<Coefficient>,
}

impl LmiConstraint {
    pub fn dim(&self) -> usize {
        self.f0.nrows()
    }

    pub fn evaluate(&self, x: &[f64]) -> RealMatrix {
        let mut f = self.f0.clone();
        for c in &self.coeffs {
            f.zip_apply(&c.matrix, |a, b| *a += x[c.index] * b);
        }
        f
    }
}

/// Minimize `c^T x` subject to a list of standard-form LMIs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpProblem {
    pub vars: Vec<VarInfo>,
    pub n_vars: usize,
    pub objective: Vec<f64>,
    pub objective_offset: f64,
    pub constraints: Vec<LmiConstraint>,
}

impl SdpProblem {
    /// Constraint matrices `F_j(x)`.
    pub fn evaluate(&self, x: &[f64]) -> Vec<RealMatrix> {
        self.constraints.iter().map(|c| c.evaluate(x)).collect()
    }

    /// Largest eigenvalue of each `F_j(x)`.
    pub fn max_eigenvalues(&self, x: &[f64]) -> Vec<f64> {
        self.constraints
            .iter()
            .map(|c| {
                let ev = sym_eigenvalues(&c.evaluate(x));
                ev.last().copied().unwrap_or(f64::NEG_INFINITY)
            })
            .collect()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective_offset + self.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    pub fn var(&self, name: &str) -> Option<&VarInfo> {
        self.vars.iter().find(|v| v.name == name)
    }

    /// Matrix value of a named variable.
    pub fn unpack(&self, x: &[f64], name: &str) -> Result<RealMatrix> {
        let info = self
            .var(name)
            .ok_or_else(|| Error::Precondition(format!("unknown variable `{name}`")))?;
        let (r, c) = info.kind.shape();
        let mut out = RealMatrix::zeros(r, c);
        for k in 0..info.kind.n_components() {
            let w = x[info.offset + k];
            out.zip_apply(&info.kind.basis(k), |a, b| *a += w * b);
        }
        Ok(out)
    }

    /// Decision vector from named matrix values (inverse of [`unpack`]).
    ///
    /// [`unpack`]: SdpProblem::unpack
    pub fn pack(&self, values: &BTreeMap<String, RealMatrix>) -> Result<Vec<f64>> {
        let mut x = vec![0.0; self.n_vars];
        for info in &self.vars {
            let m = values
                .get(&info.name)
                .ok_or_else(|| Error::Precondition(format!("no value for `{}`", info.name)))?;
            if m.shape() != info.kind.shape() {
                return Err(Error::DimensionMismatch {
                    context: "packed variable",
                    expected: format!("{:?}", info.kind.shape()),
                    found: dims(m.nrows(), m.ncols()),
                });
            }
            for k in 0..info.kind.n_components() {
                x[info.offset + k] = info.kind.basis(k).component_mul(m).sum();
            }
        }
        Ok(x)
    }
}

/// Collects variables, LMIs and a linear objective.
#[derive(Debug, Clone, Default)]
pub struct SdpBuilder {
    vars: BTreeMap<String, VarKind>,
    lmis: Vec<BlockLmi>,
    objective: Option<Expr>,
}

impl SdpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn declare(&mut self, name: &str, kind: VarKind) -> Expr {
        let prev = self.vars.insert(name.to_string(), kind);
        assert!(prev.is_none(), "variable `{name}` declared twice");
        Expr::var(name)
    }

    pub fn symmetric(&mut self, name: &str, n: usize) -> Expr {
        self.declare(name, VarKind::Symmetric(n))
    }

    pub fn matrix(&mut self, name: &str, r: usize, c: usize) -> Expr {
        self.declare(name, VarKind::Full(r, c))
    }

    pub fn scalar(&mut self, name: &str) -> Expr {
        self.declare(name, VarKind::Full(1, 1))
    }

    pub fn add_lmi(&mut self, lmi: BlockLmi) {
        self.lmis.push(lmi);
    }

    /// Objective to minimize; must be a 1 x 1 affine expression.
    pub fn minimize(&mut self, e: Expr) {
        self.objective = Some(e);
    }

    pub fn build(&self) -> Result<SdpProblem> {
        let mut vars = Vec::new();
        let mut offset = 0;
        for (name, &kind) in &self.vars {
            vars.push(VarInfo {
                name: name.clone(),
                kind,
                offset,
            });
            offset += kind.n_components();
        }
        let ctx = Ctx { vars: &vars };
        let mut objective = vec![0.0; offset];
        let mut objective_offset = 0.0;
        if let Some(e) = &self.objective {
            let a = ctx.lower(e, "objective")?;
            if a.shape != (1, 1) {
                return Err(Error::Canonicalization {
                    block: "objective".into(),
                    reason: format!("objective must be 1x1, got {}", dims(a.shape.0, a.shape.1)),
                });
            }
            objective_offset = a.constant[(0, 0)];
            for (k, m) in a.terms {
                objective[k] = m[(0, 0)];
            }
        }
        let constraints = self
            .lmis
            .iter()
            .map(|l| ctx.lower_lmi(l))
            .collect::<Result<Vec<_>>>()?;
        Ok(SdpProblem {
            vars,
            n_vars: offset,
            objective,
            objective_offset,
            constraints,
        })
    }
}

/// Affine matrix form `constant + sum_k x_k terms[k]`.
#[derive(Debug, Clone)]
struct Affine {
    shape: (usize, usize),
    constant: RealMatrix,
    terms: BTreeMap<usize, RealMatrix>,
}

impl Affine {
    fn constant(m: RealMatrix) -> Self {
        Self {
            shape: m.shape(),
            constant: m,
            terms: BTreeMap::new(),
        }
    }

    fn map(self, f: impl Fn(&RealMatrix) -> RealMatrix) -> Self {
        let constant = f(&self.constant);
        Self {
            shape: constant.shape(),
            terms: self.terms.iter().map(|(&k, m)| (k, f(m))).collect(),
            constant,
        }
    }
}

struct Ctx<'a> {
    vars: &'a [VarInfo],
}

impl Ctx<'_> {
    fn lower(&self, e: &Expr, block: &str) -> Result<Affine> {
        let fail = |reason: String| Error::Canonicalization {
            block: block.to_string(),
            reason,
        };
        Ok(match e {
            Expr::Const(m) => Affine::constant(m.clone()),
            Expr::Var(name) => {
                let info = self
                    .vars
                    .iter()
                    .find(|v| &v.name == name)
                    .ok_or_else(|| fail(format!("unknown variable `{name}`")))?;
                let (r, c) = info.kind.shape();
                Affine {
                    shape: (r, c),
                    constant: RealMatrix::zeros(r, c),
                    terms: (0..info.kind.n_components())
                        .map(|k| (info.offset + k, info.kind.basis(k)))
                        .collect(),
                }
            }
            Expr::Transpose(a) => self.lower(a, block)?.map(|m| m.transpose()),
            Expr::Scale(k, a) => self.lower(a, block)?.map(|m| m * *k),
            Expr::Neg(a) => self.lower(a, block)?.map(|m| -m),
            Expr::Add(a, b) => {
                let mut a = self.lower(a, block)?;
                let b = self.lower(b, block)?;
                if a.shape != b.shape {
                    return Err(fail(format!(
                        "sum of {} and {}",
                        dims(a.shape.0, a.shape.1),
                        dims(b.shape.0, b.shape.1)
                    )));
                }
                a.constant += b.constant;
                for (k, m) in b.terms {
                    match a.terms.get_mut(&k) {
                        Some(t) => *t += m,
                        None => {
                            a.terms.insert(k, m);
                        }
                    }
                }
                a
            }
            Expr::Mul(a, b) => {
                let a = self.lower(a, block)?;
                let b = self.lower(b, block)?;
                let scalar_left = a.shape == (1, 1) && b.shape.0 != 1;
                let scalar_right = b.shape == (1, 1) && a.shape.1 != 1;
                if scalar_left || scalar_right {
                    let (s, m) = if scalar_left { (a, b) } else { (b, a) };
                    return match (s.terms.is_empty(), m.terms.is_empty()) {
                        (true, _) => Ok(m.map(|x| x * s.constant[(0, 0)])),
                        (_, true) => {
                            let shape = m.shape;
                            Ok(Affine {
                                shape,
                                constant: &m.constant * s.constant[(0, 0)],
                                terms: s
                                    .terms
                                    .iter()
                                    .map(|(&k, c)| (k, &m.constant * c[(0, 0)]))
                                    .collect(),
                            })
                        }
                        _ => Err(fail("product of two variable-dependent factors".into())),
                    };
                }
                if a.shape.1 != b.shape.0 {
                    return Err(fail(format!(
                        "product of {} and {}",
                        dims(a.shape.0, a.shape.1),
                        dims(b.shape.0, b.shape.1)
                    )));
                }
                match (a.terms.is_empty(), b.terms.is_empty()) {
                    (true, _) => b.map(|m| &a.constant * m),
                    (_, true) => a.map(|m| m * &b.constant),
                    _ => return Err(fail("product of two variable-dependent factors".into())),
                }
            }
        })
    }

    fn lower_lmi(&self, lmi: &BlockLmi) -> Result<LmiConstraint> {
        let fail = |reason: String| Error::Canonicalization {
            block: lmi.name.clone(),
            reason,
        };
        let nb = lmi.grid.len();
        if nb == 0 || lmi.grid.iter().any(|r| r.len() != nb) {
            return Err(fail("block grid must be square and nonempty".into()));
        }
        let mut cells: Vec<Vec<Option<Affine>>> = vec![vec![None; nb]; nb];
        for i in 0..nb {
            for j in i..nb {
                if let Some(e) = &lmi.grid[i][j] {
                    cells[i][j] = Some(self.lower(e, &lmi.name)?);
                }
            }
        }
        // block sizes from any populated block in the row or column
        let mut sizes = vec![None; nb];
        for i in 0..nb {
            for j in i..nb {
                if let Some(a) = &cells[i][j] {
                    for (idx, s) in [(i, a.shape.0), (j, a.shape.1)] {
                        match sizes[idx] {
                            None => sizes[idx] = Some(s),
                            Some(prev) if prev != s => {
                                return Err(fail(format!(
                                    "block ({i},{j}) is {}, inconsistent with size {prev} of block row/column {idx}",
                                    dims(a.shape.0, a.shape.1)
                                )))
                            }
                            _ => {}
                        }
                    }
                }
            }
        }
        let sizes: Vec<usize> = sizes
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| fail(format!("block row {i} has undetermined size"))))
            .collect::<Result<_>>()?;
        let starts: Vec<usize> = sizes
            .iter()
            .scan(0, |acc, s| {
                let st = *acc;
                *acc += s;
                Some(st)
            })
            .collect();
        let dim: usize = sizes.iter().sum();

        for (i, cell) in cells.iter().enumerate() {
            if let Some(a) = &cell[i] {
                let asym = std::iter::once(&a.constant)
                    .chain(a.terms.values())
                    .map(|m| max_abs(&(m - m.transpose())) / (1.0 + max_abs(m)))
                    .fold(0.0, f64::max);
                if asym > 1e-12 {
                    return Err(fail(format!("diagonal block {i} is not symmetric")));
                }
            }
        }

        let sign = match lmi.sense {
            Sense::NegDef => 1.0,
            Sense::PosDef => -1.0,
        };
        let place = |target: &mut RealMatrix, i: usize, j: usize, m: &RealMatrix| {
            target
                .view_mut((starts[i], starts[j]), (sizes[i], sizes[j]))
                .zip_apply(m, |a, b| *a += sign * b);
            if i != j {
                let mt = m.transpose();
                target
                    .view_mut((starts[j], starts[i]), (sizes[j], sizes[i]))
                    .zip_apply(&mt, |a, b| *a += sign * b);
            }
        };
        let mut f0 = RealMatrix::zeros(dim, dim);
        let mut coeffs: BTreeMap<usize, RealMatrix> = BTreeMap::new();
        for i in 0..nb {
            for j in i..nb {
                if let Some(a) = &cells[i][j] {
                    place(&mut f0, i, j, &a.constant);
                    for (&k, m) in &a.terms {
                        let fk = coeffs.entry(k).or_insert_with(|| RealMatrix::zeros(dim, dim));
                        place(fk, i, j, m);
                    }
                }
            }
        }
        for d in 0..dim {
            f0[(d, d)] += lmi.margin;
        }
        let sym = |m: RealMatrix| (&m + m.transpose()) * 0.5;
        Ok(LmiConstraint {
            name: lmi.name.clone(),
            f0: sym(f0),
            coeffs: coeffs
                .into_iter()
                .filter(|(_, m)| max_abs(m) > 0.0)
                .map(|(index, m)| Coefficient {
                    index,
                    matrix: sym(m),
                })
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn svec_order() {
        assert_eq!(svec_index(0), (0, 0));
        assert_eq!(svec_index(1), (1, 0));
        assert_eq!(svec_index(2), (1, 1));
        assert_eq!(svec_index(3), (2, 0));
        assert_eq!(svec_index(5), (2, 2));
    }

    #[test]
    fn lyapunov_lmi_variable_count() {
        let a = dmatrix![0.5, 0.1; 0.0, 0.3];
        let mut b = SdpBuilder::new();
        let p = b.symmetric("P", 2);
        let lhs = Expr::c(a.transpose()) * p.clone() * Expr::c(a.clone()) - p;
        b.add_lmi(BlockLmi::single("lyap", lhs, Sense::NegDef, 0.0));
        let prob = b.build().unwrap();
        assert_eq!(prob.n_vars, 3);
        assert_eq!(prob.constraints[0].dim(), 2);
    }

    #[test]
    fn product_of_variables_is_rejected() {
        let mut b = SdpBuilder::new();
        let p = b.symmetric("P", 2);
        let k = b.matrix("K", 2, 2);
        b.add_lmi(BlockLmi::single("bad", p * k.clone() + k.t(), Sense::NegDef, 0.0));
        match b.build() {
            Err(Error::Canonicalization { block, .. }) => assert_eq!(block, "bad"),
            other => panic!("expected canonicalization error, got {other:?}"),
        }
    }

    #[test]
    fn off_diagonal_symmetric_component_is_scaled() {
        let mut b = SdpBuilder::new();
        let p = b.symmetric("P", 2);
        b.add_lmi(BlockLmi::single("p", p, Sense::PosDef, 0.0));
        let prob = b.build().unwrap();
        let mut values = BTreeMap::new();
        values.insert("P".to_string(), dmatrix![1.0, 3.0; 3.0, 2.0]);
        let x = prob.pack(&values).unwrap();
        assert!((x[1] - 3.0 * SQRT_2).abs() < 1e-14);
        assert!(max_abs(&(prob.unpack(&x, "P").unwrap() - dmatrix![1.0, 3.0; 3.0, 2.0])) < 1e-15);
    }

    #[test]
    fn evaluation_round_trip_matches_expression() {
        let a = dmatrix![0.9, 0.2; -0.1, 0.7];
        let bm = dmatrix![1.0; 0.5];
        let mut b = SdpBuilder::new();
        let p = b.symmetric("P", 2);
        let k = b.matrix("K", 1, 2);
        let g = b.scalar("g");
        let top = Expr::c(a.transpose()) * p.clone() + p.clone() * Expr::c(a.clone());
        let off = Expr::c(bm.clone()) * k.clone();
        let grid = vec![
            vec![Some(top.clone()), Some(off.clone()), None],
            vec![None, Some(-p.clone()), Some(k.clone().t())],
            vec![None, None, Some(-g.clone())],
        ];
        b.add_lmi(BlockLmi::new("blk", grid, Sense::NegDef, 1e-3));
        b.minimize(g.clone().scale(2.0) + Expr::c(dmatrix![1.0]));
        let prob = b.build().unwrap();
        assert_eq!(prob.n_vars, 3 + 2 + 1);

        let mut values = BTreeMap::new();
        values.insert("P".to_string(), dmatrix![2.0, -0.3; -0.3, 1.5]);
        values.insert("K".to_string(), dmatrix![0.4, -1.1]);
        values.insert("g".to_string(), dmatrix![3.0]);
        let x = prob.pack(&values).unwrap();
        let f = prob.constraints[0].evaluate(&x);

        let tv = top.eval(&values).unwrap();
        let ov = off.eval(&values).unwrap();
        let pv = values["P"].clone();
        let kv = values["K"].clone();
        let mut expect = RealMatrix::zeros(5, 5);
        expect.view_mut((0, 0), (2, 2)).copy_from(&tv);
        expect.view_mut((0, 2), (2, 2)).copy_from(&ov);
        expect.view_mut((2, 0), (2, 2)).copy_from(&ov.transpose());
        expect.view_mut((2, 2), (2, 2)).copy_from(&(-&pv));
        expect.view_mut((2, 4), (2, 1)).copy_from(&kv.transpose());
        expect.view_mut((4, 2), (1, 2)).copy_from(&kv);
        expect[(4, 4)] = -3.0;
        for d in 0..5 {
            expect[(d, d)] += 1e-3;
        }
        assert!(max_abs(&(f - expect)) < 1e-13);
        assert!((prob.objective_value(&x) - 7.0).abs() < 1e-14);
    }

    #[test]
    fn inconsistent_block_sizes_are_reported() {
        let mut b = SdpBuilder::new();
        let g = b.scalar("g");
        let grid = vec![
            vec![Some(g.clone()), Some(Expr::c(RealMatrix::zeros(2, 1)))],
            vec![None, Some(g)],
        ];
        b.add_lmi(BlockLmi::new("sizes", grid, Sense::NegDef, 0.0));
        assert!(matches!(b.build(), Err(Error::Canonicalization { .. })));
    }

    #[test]
    fn json_dump_round_trips() {
        let mut b = SdpBuilder::new();
        let t = b.scalar("t");
        b.add_lmi(BlockLmi::single("t", t.clone() - Expr::c(dmatrix![1.0]), Sense::PosDef, 0.0));
        b.minimize(t);
        let prob = b.build().unwrap();
        let text = serde_json::to_string(&prob).unwrap();
        let back: SdpProblem = serde_json::from_str(&text).unwrap();
        assert_eq!(back, prob);
    }
}
