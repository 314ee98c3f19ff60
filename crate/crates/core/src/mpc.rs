//! Discrete-time receding-horizon baseline.
//!
//! The extended state is `x = (x_0, .., x_n, 1)`; each player minimizes its
//! own stacked quadratic cost given the current state and applies the first
//! move.

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use thiserror::Error;

use crate::model::{Scenario, TrajectoryTable};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MpcError {
    #[error("prediction horizon must be at least 1")]
    ZeroHorizon,
    #[error("sampling time must be positive and finite, got {0}")]
    BadSampleTime(f64),
    #[error("rollout duration {duration} is shorter than one sample of {sample_time}")]
    TooShort { duration: f64, sample_time: f64 },
    #[error("extended state must end in 1, got {0}")]
    ExtendedSlot(f64),
    #[error("cost matrix of player {player} does not reproduce the direct cost ({diff:e} apart)")]
    QIdentity { player: usize, diff: f64 },
    #[error("Hessian of player {0} is not positive definite")]
    Singular(usize),
    #[error("rollout diverged at step {step}: |e_{vehicle}| = {value}")]
    Diverged { step: usize, vehicle: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    pub sample_time: f64,
    pub duration: f64,
}

impl MpcConfig {
    pub fn new(horizon: usize, sample_time: f64, duration: f64) -> Result<Self, MpcError> {
        if horizon == 0 {
            return Err(MpcError::ZeroHorizon);
        }
        if !(sample_time > 0.0 && sample_time.is_finite()) {
            return Err(MpcError::BadSampleTime(sample_time));
        }
        if !(duration >= sample_time) {
            return Err(MpcError::TooShort {
                duration,
                sample_time,
            });
        }
        Ok(MpcConfig {
            horizon,
            sample_time,
            duration,
        })
    }

    /// Number of sampling intervals in the rollout.
    pub fn steps(&self) -> usize {
        (self.duration / self.sample_time + 1e-9).floor() as usize
    }
}

/// Stage cost matrix of one player over the extended state.
#[derive(Debug, Clone, PartialEq)]
pub struct QMatrix {
    pub player: usize,
    pub q: DMatrix<f64>,
}

impl QMatrix {
    pub fn quadratic(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.q * x)[(0, 0)]
    }
}

/// Desired `x_i - x_j` offset expressed through the policies `d_{j+1..i}`.
fn offset(scenario: &Scenario, i: usize, j: usize) -> f64 {
    (j + 1..=i).map(|k| scenario.d[k - 1]).sum()
}

/// `sum_j w_ij (x_i - x_j + d_ij)^2`, i.e. the squared spacing errors seen
/// by player `i`.
pub fn direct_cost(scenario: &Scenario, player: usize, x: &DVector<f64>) -> f64 {
    scenario
        .topology
        .neighbors(player)
        .iter()
        .map(|(&j, &w)| w * (x[player] - x[j] + offset(scenario, player, j)).powi(2))
        .sum()
}

/// `Q_i = [[D W D^T, D W c], [c^T W D^T, c^T W c]]` with player `i`'s links
/// only and `c` the per-link offsets.
pub fn build_q(scenario: &Scenario, player: usize) -> Result<QMatrix, MpcError> {
    let n = scenario.n;
    let m = n + 2;
    let links: Vec<(usize, f64)> = scenario
        .topology
        .neighbors(player)
        .iter()
        .map(|(&j, &w)| (j, w))
        .collect();
    let mut inc = DMatrix::zeros(n + 1, links.len());
    for (k, &(j, _)) in links.iter().enumerate() {
        inc[(player, k)] = 1.0;
        inc[(j, k)] = -1.0;
    }
    let w = DMatrix::from_diagonal(&DVector::from_iterator(links.len(), links.iter().map(|l| l.1)));
    let c = DVector::from_iterator(links.len(), links.iter().map(|&(j, _)| offset(scenario, player, j)));

    let lap = &inc * &w * inc.transpose();
    let cross = &inc * &w * &c;
    let corner = (c.transpose() * &w * &c)[(0, 0)];
    let mut q = DMatrix::zeros(m, m);
    q.view_mut((0, 0), (n + 1, n + 1)).copy_from(&lap);
    q.view_mut((0, n + 1), (n + 1, 1)).copy_from(&cross);
    q.view_mut((n + 1, 0), (1, n + 1)).copy_from(&cross.transpose());
    q[(n + 1, n + 1)] = corner;
    let q = QMatrix { player, q };

    let mut rng = StdRng::seed_from_u64(player as u64);
    for _ in 0..10 {
        let mut x = DVector::from_fn(m, |_, _| rng.gen_range(-10.0..10.0));
        x[n + 1] = 1.0;
        let direct = direct_cost(scenario, player, &x);
        let diff = (q.quadratic(&x) - direct).abs();
        if diff > 1e-10 * (1.0 + direct.abs()) {
            return Err(MpcError::QIdentity { player, diff });
        }
    }
    Ok(q)
}

/// Stacked prediction `X = A x(k) + B_i U_i` over `N` steps, per player.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionStack {
    pub horizon: usize,
    pub sample_time: f64,
    pub a_pred: DMatrix<f64>,
    /// `T_s b_i`: extended-state direction moved by player `i`.
    pub b_hat: Vec<DVector<f64>>,
    pub b: Vec<DMatrix<f64>>,
    /// Block-diagonal stage weights.
    pub phi: Vec<DMatrix<f64>>,
}

/// `b_i` has ones at extended slots `i..=n`: moving vehicle `i` shifts every
/// vehicle behind it in absolute position.
pub fn control_direction(n: usize, player: usize) -> DVector<f64> {
    DVector::from_fn(n + 2, |s, _| if (player..=n).contains(&s) { 1.0 } else { 0.0 })
}

pub fn build_prediction_stack(n: usize, config: &MpcConfig, qs: &[QMatrix]) -> PredictionStack {
    let m = n + 2;
    let big_n = config.horizon;
    let mut a_pred = DMatrix::zeros(big_n * m, m);
    for r in 0..big_n {
        a_pred.view_mut((r * m, 0), (m, m)).fill_with_identity();
    }
    let mut b_hat = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut phi = Vec::with_capacity(n);
    for (p, q) in (1..=n).zip(qs) {
        let bh = control_direction(n, p) * config.sample_time;
        let mut bi = DMatrix::zeros(big_n * m, big_n);
        for r in 0..big_n {
            for c in 0..=r {
                bi.view_mut((r * m, c), (m, 1)).copy_from(&bh);
            }
        }
        let mut ph = DMatrix::zeros(big_n * m, big_n * m);
        for r in 0..big_n {
            ph.view_mut((r * m, r * m), (m, m)).copy_from(&q.q);
        }
        b_hat.push(bh);
        b.push(bi);
        phi.push(ph);
    }
    PredictionStack {
        horizon: big_n,
        sample_time: config.sample_time,
        a_pred,
        b_hat,
        b,
        phi,
    }
}

/// `x^T Q x + X^T Phi X + U^T U` for one player, others' inputs held at zero.
pub fn compact_cost(
    stack: &PredictionStack,
    q: &QMatrix,
    x_k: &DVector<f64>,
    u: &DVector<f64>,
) -> f64 {
    let i = q.player - 1;
    let big_x = &stack.a_pred * x_k + &stack.b[i] * u;
    q.quadratic(x_k) + (big_x.transpose() * &stack.phi[i] * &big_x)[(0, 0)] + u.norm_squared()
}

/// `U_i* = -(I + B_i^T Phi_i B_i)^-1 B_i^T Phi_i A x(k)` for every player.
pub fn mpc_step(
    stack: &PredictionStack,
    qs: &[QMatrix],
    x_k: &DVector<f64>,
) -> Result<Vec<DVector<f64>>, MpcError> {
    let last = x_k[x_k.len() - 1];
    if last != 1.0 {
        return Err(MpcError::ExtendedSlot(last));
    }
    let ax = &stack.a_pred * x_k;
    qs.iter()
        .map(|q| {
            let i = q.player - 1;
            let bt_phi = stack.b[i].transpose() * &stack.phi[i];
            let hess = DMatrix::identity(stack.horizon, stack.horizon) + &bt_phi * &stack.b[i];
            let grad = bt_phi * &ax;
            let chol = hess.cholesky().ok_or(MpcError::Singular(q.player))?;
            Ok(-chol.solve(&grad))
        })
        .collect()
}

/// Closed-loop rollout on the `T_s` grid; `u` is the first move of each
/// player's plan at every grid point.
pub fn mpc_rollout(scenario: &Scenario, config: &MpcConfig) -> Result<TrajectoryTable, MpcError> {
    let n = scenario.n;
    let qs = (1..=n)
        .map(|p| build_q(scenario, p))
        .collect::<Result<Vec<_>, _>>()?;
    let stack = build_prediction_stack(n, config, &qs);
    let steps = config.steps();

    let mut x = DVector::from_fn(n + 2, |s, _| if s <= n { scenario.x0[s] } else { 1.0 });
    let errors = |x: &DVector<f64>| DVector::from_fn(n, |k, _| x[k + 1] - x[k] + scenario.d[k]);
    let limit = 10.0 * errors(&x).amax();

    let mut t = Vec::with_capacity(steps + 1);
    let mut ys = Vec::with_capacity(steps + 1);
    let mut us = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let plans = mpc_step(&stack, &qs, &x)?;
        let u = DVector::from_iterator(n, plans.iter().map(|p| p[0]));
        t.push(k as f64 * config.sample_time);
        ys.push(DVector::from_fn(n, |c, _| x[c + 1] - x[c]));
        us.push(u.clone());
        if k == steps {
            break;
        }
        for (bh, &ui) in stack.b_hat.iter().zip(u.iter()) {
            x += bh * ui;
        }
        let e = errors(&x);
        if let Some((c, v)) = e.iter().enumerate().find(|(_, v)| v.abs() > limit) {
            return Err(MpcError::Diverged {
                step: k + 1,
                vehicle: c + 1,
                value: *v,
            });
        }
    }
    Ok(TrajectoryTable::from_rows(t, &ys, &us, &scenario.d))
}
