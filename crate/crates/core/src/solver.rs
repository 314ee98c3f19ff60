//! Common interface over the equilibrium solvers and automatic dispatch.

use nalgebra::DVector;
use thiserror::Error;

use crate::closed_form::{solve_pf, solve_tpf, ClosedFormError, PfSolution, TpfSolution};
use crate::general_game::{build_info_matrix, eval_trajectory, solve_general, GeneralSolution};
use crate::matfun::MatfunError;
use crate::model::{Scenario, TopologyKind, TrajectoryTable};
use crate::oracle::{self, OracleError, ShootingSolution};

/// Anything that can report `(y(t), u(t))` on `[0, t_f]`.
pub trait Trajectory {
    fn n(&self) -> usize;
    fn horizon(&self) -> f64;
    fn spacing(&self) -> DVector<f64>;
    fn evaluate(&self, t: f64) -> (DVector<f64>, DVector<f64>);

    /// Pointwise evaluation on `m` uniform samples including both endpoints.
    fn sample(&self, m: usize) -> TrajectoryTable {
        let t = uniform_grid(self.horizon(), m.max(2));
        let (ys, us): (Vec<_>, Vec<_>) = t.iter().map(|&ti| self.evaluate(ti)).unzip();
        TrajectoryTable::from_rows(t, &ys, &us, self.spacing().as_slice())
    }
}

/// `m` points from 0 to `t_f`; the last one is exactly `t_f`.
pub fn uniform_grid(t_f: f64, m: usize) -> Vec<f64> {
    let m = m.max(2);
    (0..m)
        .map(|k| if k + 1 == m { t_f } else { t_f * k as f64 / (m - 1) as f64 })
        .collect()
}

impl Trajectory for PfSolution {
    fn n(&self) -> usize {
        PfSolution::n(self)
    }
    fn horizon(&self) -> f64 {
        self.t_f
    }
    fn spacing(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.d)
    }
    fn evaluate(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        PfSolution::evaluate(self, t)
    }
}

impl Trajectory for TpfSolution {
    fn n(&self) -> usize {
        TpfSolution::n(self)
    }
    fn horizon(&self) -> f64 {
        self.t_f
    }
    fn spacing(&self) -> DVector<f64> {
        self.d.clone()
    }
    fn evaluate(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        TpfSolution::evaluate(self, t)
    }
}

impl Trajectory for GeneralSolution {
    fn n(&self) -> usize {
        GeneralSolution::n(self)
    }
    fn horizon(&self) -> f64 {
        self.t_f
    }
    fn spacing(&self) -> DVector<f64> {
        self.d.clone()
    }
    fn evaluate(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        eval_trajectory(self, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    /// Closed form matching the topology kind, general solver otherwise,
    /// shooting when the spectrum is degenerate.
    Auto,
    Pf,
    Tpf,
    General,
    Shooting,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error(transparent)]
    ClosedForm(#[from] ClosedFormError),
    #[error(transparent)]
    Matfun(#[from] MatfunError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum GameSolution {
    Pf(PfSolution),
    Tpf(TpfSolution),
    General(GeneralSolution),
    Shooting(ShootingSolution),
}

impl GameSolution {
    pub fn label(&self) -> &'static str {
        match self {
            GameSolution::Pf(_) => "pf closed form",
            GameSolution::Tpf(_) => "tpf closed form",
            GameSolution::General(_) => "general closed form",
            GameSolution::Shooting(_) => "shooting",
        }
    }

    fn inner(&self) -> &dyn Trajectory {
        match self {
            GameSolution::Pf(s) => s,
            GameSolution::Tpf(s) => s,
            GameSolution::General(s) => s,
            GameSolution::Shooting(s) => s,
        }
    }
}

impl Trajectory for GameSolution {
    fn n(&self) -> usize {
        self.inner().n()
    }
    fn horizon(&self) -> f64 {
        self.inner().horizon()
    }
    fn spacing(&self) -> DVector<f64> {
        self.inner().spacing()
    }
    fn evaluate(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        self.inner().evaluate(t)
    }
    fn sample(&self, m: usize) -> TrajectoryTable {
        self.inner().sample(m)
    }
}

fn shooting(scenario: &Scenario) -> Result<GameSolution, SolveError> {
    let info = build_info_matrix(scenario);
    Ok(GameSolution::Shooting(oracle::solve_by_shooting(
        scenario,
        info,
        oracle::DEFAULT_STEPS,
    )?))
}

fn degenerate(err: &SolveError) -> bool {
    matches!(
        err,
        SolveError::Matfun(MatfunError::NearDegenerateSpectrum { .. })
            | SolveError::ClosedForm(ClosedFormError::Matfun(
                MatfunError::NearDegenerateSpectrum { .. }
            ))
    )
}

pub fn solve_game(scenario: &Scenario, choice: SolverChoice) -> Result<GameSolution, SolveError> {
    match choice {
        SolverChoice::Pf => Ok(GameSolution::Pf(solve_pf(scenario)?)),
        SolverChoice::Tpf => Ok(GameSolution::Tpf(solve_tpf(scenario)?)),
        SolverChoice::General => Ok(GameSolution::General(solve_general(scenario)?)),
        SolverChoice::Shooting => shooting(scenario),
        SolverChoice::Auto => {
            let attempt = match scenario.topology.kind() {
                TopologyKind::Pf => return Ok(GameSolution::Pf(solve_pf(scenario)?)),
                TopologyKind::Tpf => solve_tpf(scenario)
                    .map(GameSolution::Tpf)
                    .map_err(SolveError::from),
                _ => solve_general(scenario)
                    .map(GameSolution::General)
                    .map_err(SolveError::from),
            };
            match attempt {
                Err(e) if degenerate(&e) => shooting(scenario),
                other => other,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_scenario, ScenarioParams, TopologyWeights};

    #[test]
    fn grid_endpoints() {
        assert_eq!(uniform_grid(10.0, 2), vec![0.0, 10.0]);
        let g = uniform_grid(0.3, 7);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[6], 0.3);
    }

    #[test]
    fn degenerate_tpf_falls_back() {
        let s = build_scenario(
            TopologyKind::Tpf,
            ScenarioParams {
                t_f: 15.0,
                x0: vec![4.0, 3.2, 2.1, 0.5],
                d: vec![-0.25; 3],
                weights: TopologyWeights::Tpf {
                    omega: vec![1.0; 3],
                    omega_tilde: vec![1.0],
                },
            },
        )
        .unwrap();
        let sol = solve_game(&s, SolverChoice::Auto).unwrap();
        assert_eq!(sol.label(), "shooting");
        assert!(solve_game(&s, SolverChoice::Tpf).is_err());
        let table = sol.sample(2);
        assert_eq!(table.t, vec![0.0, 15.0]);
    }
}
