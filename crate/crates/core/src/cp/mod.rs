//! Complementarity solvers: Lemke pivoting and projected Gauss–Seidel for
//! LCPs, semismooth Newton for box-constrained MCPs.

mod dump;
mod lcp;
mod mcp;

pub use dump::{read_lcp, write_lcp, write_mcp_sample};
pub use lcp::{lcp_residual, solve_lcp_lemke, solve_lcp_pgs, LcpProblem};
pub use mcp::{
    finite_difference_jacobian, mcp_residual, solve_mcp, FnMcp, McpFunction, McpOptions, McpProblem,
};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    RayTermination,
    Singular,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub z: DVector<f64>,
    /// Infinity norm of the natural-map residual at `z`.
    pub residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}
