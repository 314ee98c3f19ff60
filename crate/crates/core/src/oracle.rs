//! Brute-force checks that do not rely on the eigenstructure: fixed-step RK4
//! on the state-costate system, linear shooting for `lambda(0)`, and a
//! unilateral-deviation test of the equilibrium property.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::general_game::InfoMatrix;
use crate::model::{relative_initial, Scenario, TrajectoryTable};
use crate::solver::{uniform_grid, Trajectory};

/// Default number of RK4 steps over the horizon.
pub const DEFAULT_STEPS: usize = 2000;
pub const MIN_STEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("at least {MIN_STEPS} integration steps required, got {0}")]
    TooFewSteps(usize),
    #[error("integration produced non-finite values even with {0} steps")]
    NonFinite(usize),
    #[error("shooting sensitivity matrix is singular")]
    SingularSensitivity,
    #[error("dimension mismatch: system has {expected} vehicles, input has {got}")]
    Dimension { expected: usize, got: usize },
}

/// Dense RK4 solution of the state-costate system.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeRun {
    pub t: Vec<f64>,
    pub y: Vec<DVector<f64>>,
    pub lambda: Vec<DVector<f64>>,
    pub steps: usize,
    pub h: f64,
    pub order: u32,
}

impl OdeRun {
    pub fn terminal_costate(&self) -> &DVector<f64> {
        self.lambda.last().expect("run has at least one point")
    }

    /// Largest defect of the discrete solution against the system, measured
    /// with central differences at interior nodes.
    pub fn residual(&self, info: &InfoMatrix) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 1..self.steps {
            let dy = (&self.y[k + 1] - &self.y[k - 1]) / (2.0 * self.h);
            let dl = (&self.lambda[k + 1] - &self.lambda[k - 1]) / (2.0 * self.h);
            let (fy, fl) = info.rhs(&self.y[k], &self.lambda[k]);
            worst = worst.max((dy - fy).amax()).max((dl - fl).amax());
        }
        worst
    }
}

fn rk4(
    a: &DMatrix<f64>,
    forcing: &DVector<f64>,
    y0: &DVector<f64>,
    lambda0: &DVector<f64>,
    t_end: f64,
    steps: usize,
) -> OdeRun {
    let n = y0.len();
    let h = t_end / steps as f64;
    let f = |z: &DVector<f64>| -> DVector<f64> {
        let y = z.rows(0, n);
        let l = z.rows(n, n);
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&(-l));
        out.rows_mut(n, n).copy_from(&(-(a * y) - forcing));
        out
    };
    let mut z = DVector::zeros(2 * n);
    z.rows_mut(0, n).copy_from(y0);
    z.rows_mut(n, n).copy_from(lambda0);
    // Kahan compensation keeps the accumulated state free of summation drift
    let mut comp = DVector::zeros(2 * n);

    let mut t = Vec::with_capacity(steps + 1);
    let mut ys = Vec::with_capacity(steps + 1);
    let mut ls = Vec::with_capacity(steps + 1);
    let mut push = |k: usize, z: &DVector<f64>| {
        t.push(if k == steps { t_end } else { k as f64 * h });
        ys.push(z.rows(0, n).into_owned());
        ls.push(z.rows(n, n).into_owned());
    };
    push(0, &z);
    for k in 1..=steps {
        let k1 = f(&z);
        let k2 = f(&(&z + &k1 * (h / 2.0)));
        let k3 = f(&(&z + &k2 * (h / 2.0)));
        let k4 = f(&(&z + &k3 * h));
        let inc = (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let adj = inc - &comp;
        let next = &z + &adj;
        comp = (&next - &z) - adj;
        z = next;
        push(k, &z);
    }
    OdeRun {
        t,
        y: ys,
        lambda: ls,
        steps,
        h,
        order: 4,
    }
}

fn finite(run: &OdeRun) -> bool {
    run.y.iter().chain(run.lambda.iter()).all(|v| v.iter().all(|x| x.is_finite()))
}

fn check_dim(info: &InfoMatrix, v: &DVector<f64>) -> Result<(), OracleError> {
    if v.len() != info.n() {
        return Err(OracleError::Dimension {
            expected: info.n(),
            got: v.len(),
        });
    }
    Ok(())
}

/// Classical RK4 from `t = 0` to `t_end`. A non-finite result triggers one
/// retry with twice as many steps.
pub fn integrate_forward(
    info: &InfoMatrix,
    y0: &DVector<f64>,
    lambda0: &DVector<f64>,
    t_end: f64,
    steps: usize,
) -> Result<OdeRun, OracleError> {
    if steps < MIN_STEPS {
        return Err(OracleError::TooFewSteps(steps));
    }
    check_dim(info, y0)?;
    check_dim(info, lambda0)?;
    let run = rk4(&info.a, &info.forcing, y0, lambda0, t_end, steps);
    if finite(&run) {
        return Ok(run);
    }
    let run = rk4(&info.a, &info.forcing, y0, lambda0, t_end, 2 * steps);
    if finite(&run) {
        Ok(run)
    } else {
        Err(OracleError::NonFinite(2 * steps))
    }
}

/// Result of linear shooting.
#[derive(Debug, Clone, PartialEq)]
pub struct Shot {
    pub lambda0: DVector<f64>,
    /// `max |lambda(t_f)|` of the final integration.
    pub residual: f64,
}

/// Finds `lambda(0)` with `lambda(t_f) = 0`. The map `lambda(0) ->
/// lambda(t_f)` is affine, so one particular run plus `n` unit runs give the
/// sensitivity matrix exactly; one refinement pass absorbs roundoff.
pub fn shoot_lambda0(
    info: &InfoMatrix,
    y0: &DVector<f64>,
    t_f: f64,
    steps: usize,
) -> Result<Shot, OracleError> {
    check_dim(info, y0)?;
    let n = info.n();
    let zero = DVector::zeros(n);
    let particular = integrate_forward(info, y0, &zero, t_f, steps)?;

    let homogeneous = InfoMatrix {
        a: info.a.clone(),
        forcing: DVector::zeros(n),
    };
    let mut sens = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        let run = integrate_forward(&homogeneous, &zero, &e, t_f, steps)?;
        sens.set_column(j, run.terminal_costate());
    }
    let lu = sens.lu();
    let mut lambda0 = lu
        .solve(&(-particular.terminal_costate()))
        .ok_or(OracleError::SingularSensitivity)?;
    let run = integrate_forward(info, y0, &lambda0, t_f, steps)?;
    let correction = lu
        .solve(&(-run.terminal_costate()))
        .ok_or(OracleError::SingularSensitivity)?;
    lambda0 += correction;
    let run = integrate_forward(info, y0, &lambda0, t_f, steps)?;
    Ok(Shot {
        lambda0,
        residual: run.terminal_costate().amax(),
    })
}

/// Step count that puts every one of `m` uniform samples on the RK4 grid.
pub fn aligned_steps(m: usize, minimum: usize) -> usize {
    let intervals = m.saturating_sub(1).max(1);
    intervals * minimum.div_ceil(intervals)
}

/// Growth allowed per shooting segment, as `sqrt(delta_max) * length`.
const SEGMENT_GROWTH: f64 = 5.0;

/// Equilibrium computed purely by integration; used where the
/// eigenfactorization is unavailable. The horizon is split into equal
/// segments (multiple shooting) so that roundoff is not amplified by the
/// full `exp(sqrt(delta) t_f)` growth of the costate.
#[derive(Debug, Clone, PartialEq)]
pub struct ShootingSolution {
    pub info: InfoMatrix,
    pub y0: DVector<f64>,
    pub d: DVector<f64>,
    pub t_f: f64,
    pub lambda0: DVector<f64>,
    /// `max |lambda(t_f)|` when integrating the last segment.
    pub residual: f64,
    /// `(y, lambda)` stacked at the start of each segment.
    nodes: Vec<DVector<f64>>,
    segment_steps: usize,
}

fn split(z: &DVector<f64>, n: usize) -> (DVector<f64>, DVector<f64>) {
    (z.rows(0, n).into_owned(), z.rows(n, n).into_owned())
}

fn stacked(run: &OdeRun, k: usize) -> DVector<f64> {
    let n = run.y[k].len();
    let mut z = DVector::zeros(2 * n);
    z.rows_mut(0, n).copy_from(&run.y[k]);
    z.rows_mut(n, n).copy_from(&run.lambda[k]);
    z
}

pub fn solve_by_shooting(
    scenario: &Scenario,
    info: InfoMatrix,
    steps: usize,
) -> Result<ShootingSolution, OracleError> {
    let n = scenario.n;
    let t_f = scenario.t_f;
    let y0 = relative_initial(scenario).y;
    let s_max = info.a.diagonal().max().max(0.0).sqrt();
    let segments = ((s_max * t_f / SEGMENT_GROWTH).ceil() as usize).max(1);
    let segment_steps = steps.div_ceil(segments).max(MIN_STEPS);
    let len = t_f / segments as f64;

    // one segment map z -> Phi z + p, identical for every segment
    let zero = DVector::zeros(n);
    let homogeneous = InfoMatrix {
        a: info.a.clone(),
        forcing: DVector::zeros(n),
    };
    let mut phi = DMatrix::zeros(2 * n, 2 * n);
    for j in 0..2 * n {
        let mut e = DVector::zeros(2 * n);
        e[j] = 1.0;
        let (ey, el) = split(&e, n);
        let run = integrate_forward(&homogeneous, &ey, &el, len, segment_steps)?;
        phi.set_column(j, &stacked(&run, segment_steps));
    }
    let p = stacked(&integrate_forward(&info, &zero, &zero, len, segment_steps)?, segment_steps);

    // unknowns z_0..z_{K-1}; rows: y(0) = y0, continuity, lambda(t_f) = 0
    let dim = 2 * n * segments;
    let mut m = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for r in 0..n {
        m[(r, r)] = 1.0;
        rhs[r] = y0[r];
    }
    for k in 0..segments - 1 {
        let row = n + 2 * n * k;
        m.view_mut((row, 2 * n * k), (2 * n, 2 * n)).copy_from(&phi);
        for r in 0..2 * n {
            m[(row + r, 2 * n * (k + 1) + r)] = -1.0;
            rhs[row + r] = -p[r];
        }
    }
    let row = dim - n;
    let col = 2 * n * (segments - 1);
    m.view_mut((row, col), (n, 2 * n)).copy_from(&phi.view((n, 0), (n, 2 * n)));
    rhs.rows_mut(row, n).copy_from(&(-p.rows(n, n)));

    let lu = m.clone().lu();
    let mut z = lu.solve(&rhs).ok_or(OracleError::SingularSensitivity)?;
    let resid = &rhs - &m * &z;
    z += lu.solve(&resid).ok_or(OracleError::SingularSensitivity)?;

    let nodes: Vec<DVector<f64>> = (0..segments)
        .map(|k| z.rows(2 * n * k, 2 * n).into_owned())
        .collect();
    let (ly, ll) = split(&nodes[segments - 1], n);
    let last = integrate_forward(&info, &ly, &ll, len, segment_steps)?;
    Ok(ShootingSolution {
        lambda0: nodes[0].rows(n, n).into_owned(),
        residual: last.terminal_costate().amax(),
        info,
        y0,
        d: scenario.d_vector(),
        t_f,
        nodes,
        segment_steps,
    })
}

impl ShootingSolution {
    pub fn segments(&self) -> usize {
        self.nodes.len()
    }

    fn segment_length(&self) -> f64 {
        self.t_f / self.segments() as f64
    }

    /// Integrates segment `k` from its start over `span` seconds.
    fn run_segment(&self, k: usize, span: f64, steps: usize) -> Result<OdeRun, OracleError> {
        let (y, l) = split(&self.nodes[k], self.y0.len());
        integrate_forward(&self.info, &y, &l, span, steps)
    }
}

impl Trajectory for ShootingSolution {
    fn n(&self) -> usize {
        self.y0.len()
    }

    fn horizon(&self) -> f64 {
        self.t_f
    }

    fn spacing(&self) -> DVector<f64> {
        self.d.clone()
    }

    fn evaluate(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        let len = self.segment_length();
        let k = ((t / len).floor().max(0.0) as usize).min(self.segments() - 1);
        let span = t - k as f64 * len;
        if span <= 0.0 {
            let (y, l) = split(&self.nodes[k], self.n());
            return (y, -l);
        }
        let steps = ((self.segment_steps as f64 * span / len).ceil() as usize).max(MIN_STEPS);
        let run = self.run_segment(k, span, steps).expect("shooting solution was integrable");
        (run.y[steps].clone(), -&run.lambda[steps])
    }

    fn sample(&self, m: usize) -> TrajectoryTable {
        let m = m.max(2);
        let segs = self.segments();
        // a step count that lands on both the sample grid and segment starts
        let base = aligned_steps(m, DEFAULT_STEPS);
        let mut total = base / gcd(base, segs) * segs;
        while total / segs < MIN_STEPS {
            total *= 2;
        }
        let per_segment = total / segs;
        let stride = total / (m - 1);
        let runs: Vec<OdeRun> = (0..segs)
            .map(|k| {
                self.run_segment(k, self.segment_length(), per_segment)
                    .expect("shooting solution was integrable")
            })
            .collect();
        let mut ys = Vec::with_capacity(m);
        let mut us = Vec::with_capacity(m);
        for j in 0..m {
            let g = j * stride;
            let k = (g / per_segment).min(segs - 1);
            let off = g - k * per_segment;
            ys.push(runs[k].y[off].clone());
            us.push(-&runs[k].lambda[off]);
        }
        TrajectoryTable::from_rows(uniform_grid(self.t_f, m), &ys, &us, self.d.as_slice())
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Outcome of perturbing one player's control while the others stay fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationReport {
    pub player: usize,
    pub baseline: f64,
    pub perturbed: Vec<f64>,
    pub min_delta: f64,
}

impl DeviationReport {
    pub fn tolerance(&self) -> f64 {
        1e-6 * (1.0 + self.baseline.abs())
    }

    pub fn certified(&self) -> bool {
        self.min_delta >= -self.tolerance()
    }
}

/// Grid used for cost quadrature in [`certify_nash`].
pub const CERTIFY_SAMPLES: usize = 2001;
pub const BUMP_AMPLITUDE: f64 = 1e-3;

/// Player cost `1/2 int sum_j w_ij (sum_{k=j+1..i} e_k)^2 + u_i^2`, with
/// `y` rebuilt from `u` by cumulative trapezoid.
fn player_cost(
    scenario: &Scenario,
    player: usize,
    t: &[f64],
    y0: &DVector<f64>,
    u: &DMatrix<f64>,
) -> f64 {
    let m = t.len();
    let n = scenario.n;
    let mut y = DMatrix::zeros(m, n);
    y.set_row(0, &y0.transpose());
    for r in 1..m {
        let h = t[r] - t[r - 1];
        for c in 0..n {
            y[(r, c)] = y[(r - 1, c)] + 0.5 * h * (u[(r - 1, c)] + u[(r, c)]);
        }
    }
    let links = scenario.topology.neighbors(player);
    let integrand: Vec<f64> = (0..m)
        .map(|r| {
            let mut s = u[(r, player - 1)].powi(2);
            for (&j, &w) in links {
                let e: f64 = (j + 1..=player).map(|k| y[(r, k - 1)] + scenario.d[k - 1]).sum();
                s += w * e * e;
            }
            0.5 * s
        })
        .collect();
    t.windows(2)
        .zip(integrand.windows(2))
        .map(|(tt, f)| 0.5 * (tt[1] - tt[0]) * (f[0] + f[1]))
        .sum()
}

/// Perturbs player `player` (1-based) by `n_bumps` tent functions with
/// amplitudes `+-eps` and reports the smallest cost change.
pub fn certify_nash_with(
    scenario: &Scenario,
    solution: &dyn Trajectory,
    player: usize,
    n_bumps: usize,
    eps: f64,
) -> DeviationReport {
    let table = solution.sample(CERTIFY_SAMPLES);
    let y0 = relative_initial(scenario).y;
    let t = &table.t;
    let baseline = player_cost(scenario, player, t, &y0, &table.u);
    let width = scenario.t_f / (n_bumps + 1) as f64;
    let mut perturbed = Vec::with_capacity(2 * n_bumps);
    for b in 0..n_bumps {
        let center = width * (b + 1) as f64;
        for sign in [1.0, -1.0] {
            let mut u = table.u.clone();
            for (r, &tr) in t.iter().enumerate() {
                let tent = (1.0 - (tr - center).abs() / width).max(0.0);
                u[(r, player - 1)] += sign * eps * tent;
            }
            perturbed.push(player_cost(scenario, player, t, &y0, &u));
        }
    }
    let min_delta = perturbed
        .iter()
        .map(|j| j - baseline)
        .fold(f64::INFINITY, f64::min);
    DeviationReport {
        player,
        baseline,
        min_delta: if perturbed.is_empty() { 0.0 } else { min_delta },
        perturbed,
    }
}

pub fn certify_nash(
    scenario: &Scenario,
    solution: &dyn Trajectory,
    player: usize,
    n_bumps: usize,
) -> DeviationReport {
    certify_nash_with(scenario, solution, player, n_bumps, BUMP_AMPLITUDE)
}
