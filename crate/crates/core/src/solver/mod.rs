//! Minimizers for the seam energy.

pub mod brute;
pub mod expansion;
pub mod maxflow;
pub mod qpbo;

pub use brute::{brute_force_minimize, MAX_LABELINGS};
pub use expansion::{
    alpha_expansion, alpha_order, build_expansion, initial_labeling, ExpansionProblem, MoveStat,
    SolveReport, SolverConfig,
};
pub use qpbo::{qpbo_solve, BinaryProblem, QpboResult};
