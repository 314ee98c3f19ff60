//! Scenario, topology and trajectory types shared by every solver.
//!
//! Indexing convention: node `0` is the virtual leader (reference trajectory)
//! and nodes `1..=n` are the actual vehicles. Vectors indexed by vehicle
//! (`d`, `y`, `e`, `u`) are stored 0-based, so vehicle `i` lives at `i - 1`.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("platoon must contain at least one vehicle")]
    EmptyPlatoon,
    #[error("terminal time must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("expected {expected} {what}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("initial ordering violated: x_{prev}(0) = {prev_x} must exceed x_{index}(0) = {x}")]
    InitialOrdering {
        index: usize,
        prev: usize,
        x: f64,
        prev_x: f64,
    },
    #[error("distancing policy must be negative: d_{index} = {value}")]
    NonNegativeSpacing { index: usize, value: f64 },
    #[error("rearward links only (j < i): link {follower} {informer}")]
    ForwardLink { follower: usize, informer: usize },
    #[error("link {follower} {informer} refers to a vehicle outside 1..={n}")]
    OutOfRange {
        follower: usize,
        informer: usize,
        n: usize,
    },
    #[error("link {follower} {informer} has invalid weight {weight}")]
    BadWeight {
        follower: usize,
        informer: usize,
        weight: f64,
    },
    #[error("duplicate link {follower} {informer}")]
    DuplicateLink { follower: usize, informer: usize },
    #[error("vehicle {0} has an empty neighbor set (zero total link weight)")]
    EmptyNeighborSet(usize),
    #[error("{kind} topology: {reason}")]
    KindMismatch { kind: TopologyKind, reason: String },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TopologyKind {
    /// Predecessor following.
    Pf,
    /// Two-predecessor following.
    Tpf,
    /// All-predecessor following.
    Apf,
    /// Leader following.
    Lf,
    Custom,
}

impl TopologyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TopologyKind::Pf => "pf",
            TopologyKind::Tpf => "tpf",
            TopologyKind::Apf => "apf",
            TopologyKind::Lf => "lf",
            TopologyKind::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pf" => Some(TopologyKind::Pf),
            "tpf" => Some(TopologyKind::Tpf),
            "apf" => Some(TopologyKind::Apf),
            "lf" => Some(TopologyKind::Lf),
            "custom" => Some(TopologyKind::Custom),
            _ => None,
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str().to_ascii_uppercase())
    }
}

/// A directed information link: `follower` observes `informer`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub follower: usize,
    pub informer: usize,
    pub weight: f64,
}

impl Link {
    pub fn new(follower: usize, informer: usize, weight: f64) -> Self {
        Link {
            follower,
            informer,
            weight,
        }
    }
}

/// Rearward information topology over nodes `0..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyGraph {
    kind: TopologyKind,
    n: usize,
    links: Vec<Link>,
    // neighbors[i - 1]: informer -> weight for vehicle i
    neighbors: Vec<BTreeMap<usize, f64>>,
}

impl TopologyGraph {
    /// Validates and builds a topology from an explicit link list.
    pub fn new(kind: TopologyKind, n: usize, links: Vec<Link>) -> Result<Self, ModelError> {
        if n == 0 {
            return Err(ModelError::EmptyPlatoon);
        }
        let mut neighbors = vec![BTreeMap::new(); n];
        for l in &links {
            if l.informer >= l.follower {
                return Err(ModelError::ForwardLink {
                    follower: l.follower,
                    informer: l.informer,
                });
            }
            if l.follower == 0 || l.follower > n {
                return Err(ModelError::OutOfRange {
                    follower: l.follower,
                    informer: l.informer,
                    n,
                });
            }
            if !l.weight.is_finite() || l.weight < 0.0 {
                return Err(ModelError::BadWeight {
                    follower: l.follower,
                    informer: l.informer,
                    weight: l.weight,
                });
            }
            if neighbors[l.follower - 1].insert(l.informer, l.weight).is_some() {
                return Err(ModelError::DuplicateLink {
                    follower: l.follower,
                    informer: l.informer,
                });
            }
        }
        for (idx, set) in neighbors.iter().enumerate() {
            if set.values().sum::<f64>() <= 0.0 {
                return Err(ModelError::EmptyNeighborSet(idx + 1));
            }
        }
        let graph = TopologyGraph {
            kind,
            n,
            links,
            neighbors,
        };
        graph.check_kind()?;
        Ok(graph)
    }

    /// Predecessor following with link weights `omega[i - 1]` for vehicle `i`.
    pub fn pf(omega: &[f64]) -> Result<Self, ModelError> {
        let links = omega
            .iter()
            .enumerate()
            .map(|(k, &w)| Link::new(k + 1, k, w))
            .collect();
        Self::new(TopologyKind::Pf, omega.len(), links)
    }

    /// Two-predecessor following. `omega_tilde[k]` is the V2V weight of
    /// vehicle `k + 3`, so its length is `n - 2` (empty when `n < 3`).
    pub fn tpf(omega: &[f64], omega_tilde: &[f64]) -> Result<Self, ModelError> {
        let n = omega.len();
        let expected = n.saturating_sub(2);
        if omega_tilde.len() != expected {
            return Err(ModelError::Length {
                what: "second-predecessor weights",
                expected,
                got: omega_tilde.len(),
            });
        }
        let mut links = Vec::with_capacity(n + expected);
        for (k, &w) in omega.iter().enumerate() {
            let i = k + 1;
            links.push(Link::new(i, i - 1, w));
            if i >= 3 {
                links.push(Link::new(i, i - 2, omega_tilde[i - 3]));
            }
        }
        Self::new(TopologyKind::Tpf, n, links)
    }

    fn check_kind(&self) -> Result<(), ModelError> {
        let mismatch = |reason: String| ModelError::KindMismatch {
            kind: self.kind,
            reason,
        };
        match self.kind {
            TopologyKind::Pf => {
                for (idx, set) in self.neighbors.iter().enumerate() {
                    let i = idx + 1;
                    if set.len() != 1 || !set.contains_key(&(i - 1)) {
                        return Err(mismatch(format!(
                            "vehicle {i} must observe exactly its predecessor"
                        )));
                    }
                    if set[&(i - 1)] <= 0.0 {
                        return Err(mismatch(format!("omega_{i} must be positive")));
                    }
                }
            }
            TopologyKind::Tpf => {
                for (idx, set) in self.neighbors.iter().enumerate() {
                    let i = idx + 1;
                    if !set.contains_key(&(i - 1)) {
                        return Err(mismatch(format!(
                            "vehicle {i} must carry a predecessor link"
                        )));
                    }
                    let allowed = |j: usize| j + 1 == i || (i >= 3 && j + 2 == i);
                    if let Some(&j) = set.keys().find(|&&j| !allowed(j)) {
                        return Err(mismatch(format!(
                            "vehicle {i} may not observe vehicle {j}"
                        )));
                    }
                    if i < 3 && set[&(i - 1)] <= 0.0 {
                        return Err(mismatch(format!("omega_{i} must be positive")));
                    }
                }
            }
            TopologyKind::Apf | TopologyKind::Lf | TopologyKind::Custom => {}
        }
        Ok(())
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    /// Informers of vehicle `i` (1-based) with their weights.
    pub fn neighbors(&self, i: usize) -> &BTreeMap<usize, f64> {
        &self.neighbors[i - 1]
    }

    /// Sum of the link weights of vehicle `i`.
    pub fn row_sum(&self, i: usize) -> f64 {
        self.neighbors(i).values().sum()
    }

    /// Rebuilds the link list from the neighbor sets (ordered by follower,
    /// then informer).
    pub fn links_from_neighbors(&self) -> Vec<Link> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(idx, set)| set.iter().map(move |(&j, &w)| Link::new(idx + 1, j, w)))
            .collect()
    }

    /// Zero-weight links: they contribute nothing to any cost or Laplacian.
    pub fn removable_links(&self) -> Vec<Link> {
        self.links.iter().copied().filter(|l| l.weight == 0.0).collect()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn mean_weight(&self) -> f64 {
        self.links.iter().map(|l| l.weight).sum::<f64>() / self.links.len() as f64
    }

    /// Predecessor weights `omega_i` (PF and TPF kinds).
    pub fn predecessor_weights(&self) -> Vec<f64> {
        (1..=self.n)
            .map(|i| self.neighbors(i).get(&(i - 1)).copied().unwrap_or(0.0))
            .collect()
    }
}

/// Full problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub n: usize,
    pub t_f: f64,
    /// Initial positions `x_0(0) .. x_n(0)`.
    pub x0: Vec<f64>,
    /// Distancing policies `d_1 .. d_n`.
    pub d: Vec<f64>,
    pub topology: TopologyGraph,
    /// Reference speed of the leader. The relative game does not depend on
    /// it; it only shifts reconstructed absolute positions.
    pub reference_speed: f64,
}

/// Topology weights accepted by [`build_scenario`].
#[derive(Debug, Clone, PartialEq)]
pub enum TopologyWeights {
    Pf(Vec<f64>),
    Tpf {
        omega: Vec<f64>,
        omega_tilde: Vec<f64>,
    },
    Links(Vec<Link>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioParams {
    pub t_f: f64,
    pub x0: Vec<f64>,
    pub d: Vec<f64>,
    pub weights: TopologyWeights,
}

pub fn build_scenario(kind: TopologyKind, params: ScenarioParams) -> Result<Scenario, ModelError> {
    let n = params.d.len();
    let topology = match (kind, params.weights) {
        (TopologyKind::Pf, TopologyWeights::Pf(w)) => TopologyGraph::pf(&w)?,
        (TopologyKind::Tpf, TopologyWeights::Tpf { omega, omega_tilde }) => {
            TopologyGraph::tpf(&omega, &omega_tilde)?
        }
        (kind, TopologyWeights::Links(links)) => TopologyGraph::new(kind, n, links)?,
        (kind, _) => {
            return Err(ModelError::KindMismatch {
                kind,
                reason: "weight layout does not match the topology kind".into(),
            })
        }
    };
    Scenario::new(params.t_f, params.x0, params.d, topology)
}

impl Scenario {
    pub fn new(
        t_f: f64,
        x0: Vec<f64>,
        d: Vec<f64>,
        topology: TopologyGraph,
    ) -> Result<Self, ModelError> {
        let n = d.len();
        if n == 0 {
            return Err(ModelError::EmptyPlatoon);
        }
        if !(t_f.is_finite() && t_f > 0.0) {
            return Err(ModelError::BadHorizon(t_f));
        }
        if x0.len() != n + 1 {
            return Err(ModelError::Length {
                what: "initial positions",
                expected: n + 1,
                got: x0.len(),
            });
        }
        if topology.n() != n {
            return Err(ModelError::Length {
                what: "topology vehicles",
                expected: n,
                got: topology.n(),
            });
        }
        if x0.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite("initial positions"));
        }
        if d.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite("distancing policies"));
        }
        for i in 1..=n {
            if x0[i] >= x0[i - 1] {
                return Err(ModelError::InitialOrdering {
                    index: i,
                    prev: i - 1,
                    x: x0[i],
                    prev_x: x0[i - 1],
                });
            }
        }
        if let Some((k, &v)) = d.iter().enumerate().find(|(_, &v)| v >= 0.0) {
            return Err(ModelError::NonNegativeSpacing {
                index: k + 1,
                value: v,
            });
        }
        Ok(Scenario {
            n,
            t_f,
            x0,
            d,
            topology,
            reference_speed: 0.0,
        })
    }

    /// Same platoon solved over a different horizon.
    pub fn with_horizon(&self, t_f: f64) -> Result<Self, ModelError> {
        if !(t_f.is_finite() && t_f > 0.0) {
            return Err(ModelError::BadHorizon(t_f));
        }
        Ok(Scenario {
            t_f,
            ..self.clone()
        })
    }

    pub fn d_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.d)
    }

    /// Initial spacing errors `e_i(0) = y_i(0) + d_i`.
    pub fn initial_errors(&self) -> DVector<f64> {
        relative_initial(self).y + self.d_vector()
    }

    /// Absolute positions from relative displacements at time `t`, including
    /// the leader's constant-speed drift.
    pub fn absolute_positions(&self, y: &DVector<f64>, t: f64) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.n + 1);
        let mut acc = self.x0[0] + self.reference_speed * t;
        x.push(acc);
        for yi in y.iter() {
            acc += yi;
            x.push(acc);
        }
        x
    }
}

/// Relative displacements `y_i = x_i - x_{i-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeState {
    pub y: DVector<f64>,
}

pub fn relative_initial(scenario: &Scenario) -> RelativeState {
    let y = DVector::from_iterator(
        scenario.n,
        scenario.x0.windows(2).map(|w| w[1] - w[0]),
    );
    RelativeState { y }
}

/// Sampled trajectories on a time grid. Rows are samples, columns vehicles.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub t: Vec<f64>,
    pub y: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub u: DMatrix<f64>,
}

impl TrajectoryTable {
    /// Builds the table from per-sample rows; `e` is derived as `y + d`.
    pub fn from_rows(t: Vec<f64>, y_rows: &[DVector<f64>], u_rows: &[DVector<f64>], d: &[f64]) -> Self {
        let m = t.len();
        let n = d.len();
        let y = DMatrix::from_fn(m, n, |r, c| y_rows[r][c]);
        let u = DMatrix::from_fn(m, n, |r, c| u_rows[r][c]);
        let e = DMatrix::from_fn(m, n, |r, c| y[(r, c)] + d[c]);
        TrajectoryTable { t, y, e, u }
    }

    pub fn samples(&self) -> usize {
        self.t.len()
    }

    pub fn vehicles(&self) -> usize {
        self.y.ncols()
    }

    /// Composite-trapezoid integral of `sum_i u_i^2` over the grid.
    pub fn control_effort(&self) -> f64 {
        let power: Vec<f64> = self.u.row_iter().map(|r| r.norm_squared()).collect();
        self.t
            .windows(2)
            .zip(power.windows(2))
            .map(|(t, p)| 0.5 * (t[1] - t[0]) * (p[0] + p[1]))
            .sum()
    }

    pub fn max_abs_control(&self) -> f64 {
        self.u.amax()
    }

    pub fn terminal_errors(&self) -> Vec<f64> {
        let last = self.samples() - 1;
        self.e.row(last).iter().map(|v| v.abs()).collect()
    }
}
