//! Deterministic reference solvers used to check the Monte Carlo estimators.

pub mod cell;
pub mod cg;
pub mod closed_form;
pub mod polar;

pub use cell::{effective_tensor_from_cells, fd_effective_tensor, CellTensor};
pub use closed_form::{checkerboard_symmetric, layered_effective, LayeredEffective};
pub use polar::{fd_solve, BoundarySample, FdBc, FdProblem, FdSolution, PolarGrid};
