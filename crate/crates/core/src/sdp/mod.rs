//! Block LMIs over named matrix variables, their canonical form, and an
//! embedded interior-point solver.

mod canon;
mod expr;
mod ipm;

pub use canon::{Coefficient, LmiConstraint, SdpBuilder, SdpProblem, VarInfo, VarKind};
pub use expr::{BlockLmi, Expr, Sense};
pub use ipm::{solve, InteriorPoint, SdpBackend, SdpSolution, SolveMode, SolveStatus, SolverOptions};
