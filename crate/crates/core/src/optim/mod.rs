//! Trajectory optimization: a small dense QP solver, a receding-horizon
//! gap-constrained speed controller built on it, and a platoon trajectory
//! optimal-control problem solved by projected gradient descent with
//! adjoint gradients.

pub mod mpc;
pub mod ocp;
pub mod qp;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("problem invalid: {0}")]
    BadProblem(String),
    #[error("starting point violates constraint {index} by {violation}")]
    InfeasibleStart { index: usize, violation: f64 },
    #[error("no feasible point found: {0}")]
    Infeasible(String),
    #[error("KKT system is singular (active set {active:?})")]
    SingularKkt { active: Vec<usize> },
    #[error("iteration limit {0} reached without convergence")]
    IterationLimit(usize),
    #[error(transparent)]
    Cfm(#[from] crate::cfm::CfmError),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub use mpc::{leader_predict, mpc_closed_loop, mpc_solve, MpcRollout, MpcSolution, QpProblem};
pub use ocp::{
    ocp_gradient_adjoint, ocp_gradient_fd, ocp_objective, ocp_optimize, ocp_optimize_sequential,
    OcpProblem, OcpResult, PenaltyReport,
};
pub use qp::{solve_qp, Qp, QpSolution};
