//! Analytic equilibrium trajectories for predecessor following (PF) and
//! two-predecessor following (TPF).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::general_game::build_info_matrix;
use crate::matfun::{self, EigenFactorization, MatfunError};
use crate::model::{relative_initial, Scenario, TopologyKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClosedFormError {
    #[error("{solver} solver does not handle {got} topologies")]
    WrongKind { solver: &'static str, got: TopologyKind },
    #[error("omega_{index} = {value} must be positive")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error(transparent)]
    Matfun(#[from] MatfunError),
}

/// Decoupled per-vehicle solution `e_i(t) = alpha_i(t) e_i(0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PfSolution {
    pub omega: Vec<f64>,
    pub d: Vec<f64>,
    pub y0: Vec<f64>,
    pub t_f: f64,
}

pub fn solve_pf(scenario: &Scenario) -> Result<PfSolution, ClosedFormError> {
    if scenario.topology.kind() != TopologyKind::Pf {
        return Err(ClosedFormError::WrongKind {
            solver: "PF",
            got: scenario.topology.kind(),
        });
    }
    let omega = scenario.topology.predecessor_weights();
    if let Some((k, &w)) = omega.iter().enumerate().find(|(_, &w)| w <= 0.0) {
        return Err(ClosedFormError::NonPositiveWeight {
            index: k + 1,
            value: w,
        });
    }
    Ok(PfSolution {
        omega,
        d: scenario.d.clone(),
        y0: relative_initial(scenario).y.iter().copied().collect(),
        t_f: scenario.t_f,
    })
}

impl PfSolution {
    pub fn n(&self) -> usize {
        self.omega.len()
    }

    pub fn alpha(&self, i: usize, t: f64) -> f64 {
        matfun::scalar_alpha(self.omega[i], t, self.t_f)
    }

    pub fn evaluate(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        let n = self.n();
        let mut y = DVector::zeros(n);
        let mut u = DVector::zeros(n);
        for i in 0..n {
            let a = self.alpha(i, t);
            let rate = matfun::scalar_alpha_rate(self.omega[i], t, self.t_f);
            y[i] = a * self.y0[i] + (a - 1.0) * self.d[i];
            u[i] = rate * (self.y0[i] + self.d[i]);
        }
        (y, u)
    }

    pub fn errors(&self, t: f64) -> DVector<f64> {
        DVector::from_fn(self.n(), |i, _| (self.y0[i] + self.d[i]) * self.alpha(i, t))
    }
}

/// TPF solution built from the eigenfactorization of the information matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TpfSolution {
    pub eig: EigenFactorization,
    /// `coeff[m][(i, k)] = V[i][m] * V^-1[m][k]`: weight of mode `m` in the
    /// coefficient `alpha_k^i`.
    pub coeff: Vec<DMatrix<f64>>,
    pub d: DVector<f64>,
    pub y0: DVector<f64>,
    pub t_f: f64,
}

pub fn solve_tpf(scenario: &Scenario) -> Result<TpfSolution, ClosedFormError> {
    match scenario.topology.kind() {
        TopologyKind::Pf | TopologyKind::Tpf => {}
        other => {
            return Err(ClosedFormError::WrongKind {
                solver: "TPF",
                got: other,
            })
        }
    }
    let info = build_info_matrix(scenario);
    let eig = matfun::eig_lower_triangular(&info.a)?;
    let n = scenario.n;
    let coeff = (0..n)
        .map(|m| {
            DMatrix::from_fn(n, n, |i, k| {
                if k <= i {
                    eig.v[(i, m)] * eig.v_inv[(m, k)]
                } else {
                    0.0
                }
            })
        })
        .collect();
    Ok(TpfSolution {
        eig,
        coeff,
        d: scenario.d_vector(),
        y0: relative_initial(scenario).y,
        t_f: scenario.t_f,
    })
}

impl TpfSolution {
    pub fn n(&self) -> usize {
        self.y0.len()
    }

    fn modal(&self, t: f64, f: fn(f64, f64, f64) -> f64) -> Vec<f64> {
        self.eig.delta.iter().map(|&w| f(w, t, self.t_f)).collect()
    }

    /// Coefficient table `alpha_k^i(t)` as a lower-triangular matrix. The
    /// off-diagonal part is `sum_m coeff_m (alpha_m - 1)`, which is exactly
    /// zero at `t = 0`.
    pub fn coefficients(&self, t: f64) -> DMatrix<f64> {
        let n = self.n();
        let alpha = self.modal(t, matfun::scalar_alpha);
        let mut p = DMatrix::zeros(n, n);
        for (m, a) in alpha.iter().enumerate() {
            p += &self.coeff[m] * (a - 1.0);
        }
        // the diagonal only involves its own mode
        p.set_diagonal(&DVector::from_vec(alpha));
        p
    }

    pub fn coefficient_rates(&self, t: f64) -> DMatrix<f64> {
        let n = self.n();
        let mut p = DMatrix::zeros(n, n);
        for (m, r) in self.modal(t, matfun::scalar_alpha_rate).into_iter().enumerate() {
            p += &self.coeff[m] * r;
        }
        p
    }

    /// Vehicle-by-vehicle evaluation. Vehicles 1 and 2 follow the scalar
    /// form; later vehicles sum over `k = 2..=i` since vehicle 1 never
    /// enters their dynamics.
    pub fn evaluate(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        let n = self.n();
        let p = self.coefficients(t);
        let pd = self.coefficient_rates(t);
        let mut y = DVector::zeros(n);
        let mut u = DVector::zeros(n);
        for i in 0..n {
            if i < 2 {
                let a = matfun::scalar_alpha(self.eig.delta[i], t, self.t_f);
                let r = matfun::scalar_alpha_rate(self.eig.delta[i], t, self.t_f);
                y[i] = a * self.y0[i] + (a - 1.0) * self.d[i];
                u[i] = r * (self.y0[i] + self.d[i]);
                continue;
            }
            let mut yi = 0.0;
            let mut ui = 0.0;
            for k in 1..=i {
                yi += p[(i, k)] * self.y0[k];
                ui += pd[(i, k)] * (self.y0[k] + self.d[k]);
            }
            for k in 1..i {
                yi += p[(i, k)] * self.d[k];
            }
            yi += (p[(i, i)] - 1.0) * self.d[i];
            y[i] = yi;
            u[i] = ui;
        }
        (y, u)
    }
}

/// `P(t) = V diag(alpha(t)) V^-1`.
pub fn assemble_p(tpf: &TpfSolution, t: f64) -> DMatrix<f64> {
    tpf.coefficients(t)
}
