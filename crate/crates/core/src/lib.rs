//! Open-loop Nash equilibrium trajectories for vehicle platoon formation
//! games under rearward information topologies, with stability analysis and
//! a receding-horizon baseline.

pub mod cli;
pub mod closed_form;
pub mod general_game;
pub mod io;
pub mod matfun;
pub mod model;
pub mod mpc;
pub mod oracle;
pub mod solver;
pub mod stability;

pub use closed_form::{assemble_p, solve_pf, solve_tpf, PfSolution, TpfSolution};
pub use general_game::{build_info_matrix, eval_trajectory, solve_general, GeneralSolution, InfoMatrix};
pub use model::{build_scenario, relative_initial, Link, Scenario, ScenarioParams, TopologyGraph, TopologyKind, TopologyWeights, TrajectoryTable};
pub use solver::{solve_game, GameSolution, SolverChoice, Trajectory};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Matfun(#[from] matfun::MatfunError),
    #[error(transparent)]
    Solve(#[from] solver::SolveError),
    #[error(transparent)]
    Stability(#[from] stability::StabilityError),
    #[error(transparent)]
    Mpc(#[from] mpc::MpcError),
    #[error(transparent)]
    Io(#[from] io::IoError),
}
