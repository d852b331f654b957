//! Mixed-integer formulation of the signal-control problem, its text
//! formats and a branch-and-bound solver.

pub mod atlas;
pub mod bnb;
pub mod build;
pub mod equivalence;
pub mod lp;
pub mod lu;
pub mod model;
pub mod mps;
pub mod simplex;

pub use atlas::{Symbol, VariableAtlas};
pub use build::{assignment_from_trajectory, build_milp, BuildOptions, MilpBuild};
pub use model::{Constraint, LinExpr, MilpModel, Sense, VarKind, Variable};
pub use bnb::{solve_bnb, solve_bnb_with_start, Solution, SolveOptions, SolveStatus};
pub use lp::{parse_lp, write_lp};
pub use mps::{parse_mps, write_mps};
