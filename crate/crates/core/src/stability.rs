//! Spacing-error convergence, the PF string-stability condition and the
//! weighted Laplacian of the information graph.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::model::{relative_initial, Scenario, TopologyGraph, TopologyKind, TrajectoryTable};
use crate::solver::{solve_game, SolveError, SolverChoice, Trajectory};

pub const DEFAULT_THRESHOLD: f64 = 0.01;
/// Horizon used for timing when the scenario's own horizon is too short.
pub const EXTENDED_HORIZON: f64 = 30.0;
const MAX_EXTENDED_HORIZON: f64 = 240.0;
/// Sampling step for convergence timing.
const TIMING_STEP: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StabilityError {
    #[error("graph is disconnected: nodes {0:?} are unreachable")]
    Disconnected(Vec<usize>),
    #[error("graph has fewer than two nodes")]
    TooFewNodes,
    #[error("string-stability test needs a PF topology, got {0}")]
    NotPf(TopologyKind),
}

/// Incidence, weights and Laplacian `L = D W D^T` over physical nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianBundle {
    /// Node labels of the rows (0 is the leader).
    pub nodes: Vec<usize>,
    /// Edges as `(follower, informer)`.
    pub edges: Vec<(usize, usize)>,
    pub incidence: DMatrix<f64>,
    pub weights: DMatrix<f64>,
    pub laplacian: DMatrix<f64>,
    pub sigma2: f64,
}

impl LaplacianBundle {
    /// `sum w_ij (x_i - x_j)^2` with `x` indexed like [`Self::nodes`].
    pub fn sum_of_squares(&self, x: &DVector<f64>) -> f64 {
        let pos = |node: usize| self.nodes.iter().position(|&v| v == node).unwrap();
        self.edges
            .iter()
            .enumerate()
            .map(|(k, &(i, j))| self.weights[(k, k)] * (x[pos(i)] - x[pos(j)]).powi(2))
            .sum()
    }

    pub fn quadratic_form(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.laplacian * x)[(0, 0)]
    }
}

fn unreachable_nodes(nodes: &[usize], edges: &[(usize, usize, f64)]) -> Vec<usize> {
    let idx = |v: usize| nodes.iter().position(|&x| x == v).unwrap();
    let mut adj = vec![Vec::new(); nodes.len()];
    for &(i, j, w) in edges {
        if w > 0.0 {
            adj[idx(i)].push(idx(j));
            adj[idx(j)].push(idx(i));
        }
    }
    let mut seen = vec![false; nodes.len()];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    nodes
        .iter()
        .zip(seen)
        .filter(|(_, s)| !s)
        .map(|(&v, _)| v)
        .collect()
}

/// Builds the Laplacian either over nodes `0..=n` or over the followers
/// `1..=n` only (links to the leader dropped).
pub fn build_laplacian(
    topology: &TopologyGraph,
    include_virtual_leader: bool,
) -> Result<LaplacianBundle, StabilityError> {
    let first = if include_virtual_leader { 0 } else { 1 };
    let nodes: Vec<usize> = (first..=topology.n()).collect();
    if nodes.len() < 2 {
        return Err(StabilityError::TooFewNodes);
    }
    let links: Vec<(usize, usize, f64)> = topology
        .links()
        .iter()
        .filter(|l| l.informer >= first)
        .map(|l| (l.follower, l.informer, l.weight))
        .collect();
    let missing = unreachable_nodes(&nodes, &links);
    if !missing.is_empty() {
        return Err(StabilityError::Disconnected(missing));
    }

    let mut incidence = DMatrix::zeros(nodes.len(), links.len());
    for (k, &(i, j, _)) in links.iter().enumerate() {
        incidence[(i - first, k)] = 1.0;
        incidence[(j - first, k)] = -1.0;
    }
    let weights = DMatrix::from_diagonal(&DVector::from_iterator(
        links.len(),
        links.iter().map(|l| l.2),
    ));
    let laplacian = &incidence * &weights * incidence.transpose();
    let mut eig: Vec<f64> = SymmetricEigen::new(laplacian.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eig.sort_by(f64::total_cmp);
    Ok(LaplacianBundle {
        nodes,
        edges: links.iter().map(|l| (l.0, l.1)).collect(),
        incidence,
        weights,
        laplacian,
        sigma2: eig[1].max(0.0),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub threshold: f64,
    pub t_f: f64,
    pub terminal_errors: Vec<f64>,
    /// Time after which `|e_i|` stays below the threshold, if it does.
    pub convergence_times: Vec<Option<f64>>,
    /// Mean convergence time with unconverged vehicles counted at `t_f`.
    pub mean_time: f64,
    pub all_converged: bool,
}

pub fn internal_stability(traj: &TrajectoryTable, threshold: f64) -> StabilityReport {
    let m = traj.samples();
    let n = traj.vehicles();
    let t_f = traj.t[m - 1];
    let convergence_times: Vec<Option<f64>> = (0..n)
        .map(|c| {
            let last_above = (0..m).rev().find(|&r| traj.e[(r, c)].abs() >= threshold);
            match last_above {
                None => Some(traj.t[0]),
                Some(r) if r + 1 < m => Some(traj.t[r + 1]),
                Some(_) => None,
            }
        })
        .collect();
    let mean_time =
        convergence_times.iter().map(|t| t.unwrap_or(t_f)).sum::<f64>() / n as f64;
    StabilityReport {
        threshold,
        t_f,
        terminal_errors: traj.terminal_errors(),
        all_converged: convergence_times.iter().all(Option::is_some),
        convergence_times,
        mean_time,
    }
}

/// Convergence timing, re-solved over a longer horizon when some vehicle is
/// still above the threshold at the scenario's own `t_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub base: StabilityReport,
    pub extended: Option<StabilityReport>,
}

impl ConvergenceStudy {
    pub fn final_report(&self) -> &StabilityReport {
        self.extended.as_ref().unwrap_or(&self.base)
    }
}

fn timing_report(scenario: &Scenario, threshold: f64) -> Result<StabilityReport, SolveError> {
    let sol = solve_game(scenario, SolverChoice::Auto)?;
    let m = (scenario.t_f / TIMING_STEP).round() as usize + 1;
    Ok(internal_stability(&sol.sample(m), threshold))
}

pub fn convergence_study(scenario: &Scenario, threshold: f64) -> Result<ConvergenceStudy, SolveError> {
    let base = timing_report(scenario, threshold)?;
    if base.all_converged {
        return Ok(ConvergenceStudy { base, extended: None });
    }
    let mut t_f = EXTENDED_HORIZON.max(2.0 * scenario.t_f);
    loop {
        let longer = scenario.with_horizon(t_f).expect("positive horizon");
        let report = timing_report(&longer, threshold)?;
        if report.all_converged || 2.0 * t_f > MAX_EXTENDED_HORIZON {
            return Ok(ConvergenceStudy {
                base,
                extended: Some(report),
            });
        }
        t_f *= 2.0;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRatio {
    /// Follower index `i` of the pair `(i - 1, i)`.
    pub index: usize,
    /// `|e_i(0)| / |e_{i-1}(0)|`, absent when the predecessor error is zero.
    pub ratio: Option<f64>,
    pub homogeneous: bool,
}

impl PairRatio {
    pub fn passes(&self) -> Option<bool> {
        self.ratio.map(|r| r <= 1.0 + 1e-12)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StringStability {
    pub pairs: Vec<PairRatio>,
}

impl StringStability {
    /// True when every non-degenerate pair satisfies the ratio condition.
    pub fn passes(&self) -> bool {
        self.pairs.iter().filter_map(PairRatio::passes).all(|p| p)
    }
}

pub fn string_stability_pf(scenario: &Scenario) -> Result<StringStability, StabilityError> {
    let kind = scenario.topology.kind();
    if kind != TopologyKind::Pf {
        return Err(StabilityError::NotPf(kind));
    }
    let y0 = relative_initial(scenario).y;
    let e: Vec<f64> = (0..scenario.n).map(|k| y0[k] + scenario.d[k]).collect();
    let w = scenario.topology.predecessor_weights();
    let pairs = (1..scenario.n)
        .map(|k| PairRatio {
            index: k + 1,
            ratio: (e[k - 1] != 0.0).then(|| (e[k] / e[k - 1]).abs()),
            homogeneous: w[k] == w[k - 1],
        })
        .collect();
    Ok(StringStability { pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Link;
    use nalgebra::dmatrix;

    #[test]
    fn two_node_graph() {
        let g = TopologyGraph::pf(&[0.7]).unwrap();
        let b = build_laplacian(&g, true).unwrap();
        assert_eq!(b.laplacian, dmatrix![0.7, -0.7; -0.7, 0.7]);
        assert!((b.sigma2 - 1.4).abs() < 1e-14);
        assert_eq!(build_laplacian(&g, false), Err(StabilityError::TooFewNodes));
    }

    #[test]
    fn disconnected_followers() {
        let g = TopologyGraph::new(
            TopologyKind::Lf,
            3,
            vec![Link::new(1, 0, 1.0), Link::new(2, 0, 1.0), Link::new(3, 0, 1.0)],
        )
        .unwrap();
        assert!(build_laplacian(&g, true).is_ok());
        assert_eq!(
            build_laplacian(&g, false),
            Err(StabilityError::Disconnected(vec![2, 3]))
        );
    }

    #[test]
    fn convergence_times_from_table() {
        let t = vec![0.0, 1.0, 2.0, 3.0];
        let e = DMatrix::from_row_slice(4, 2, &[0.5, 0.0, 0.005, 0.2, 0.02, 0.1, 0.001, 0.05]);
        let table = TrajectoryTable {
            t,
            y: e.clone(),
            e,
            u: DMatrix::zeros(4, 2),
        };
        let r = internal_stability(&table, 0.01);
        assert_eq!(r.convergence_times, vec![Some(3.0), None]);
        assert_eq!(r.mean_time, 3.0);
        assert!(!r.all_converged);
    }
}
