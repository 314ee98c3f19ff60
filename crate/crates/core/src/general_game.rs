//! Open-loop Nash equilibrium for an arbitrary rearward topology.
//!
//! The coupled conditions reduce to the linear two-point problem
//! `y' = -lambda`, `lambda' = -A y - w` with `w = A d`, `lambda(t_f) = 0`.

use nalgebra::{DMatrix, DVector};

use crate::matfun::{self, EigenFactorization, MatfunError};
use crate::model::{relative_initial, Scenario};

/// Lower-triangular information matrix and the constant forcing `w = A d`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoMatrix {
    pub a: DMatrix<f64>,
    pub forcing: DVector<f64>,
}

impl InfoMatrix {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Right-hand side of the state-costate system.
    pub fn rhs(&self, y: &DVector<f64>, lambda: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (-lambda, -(&self.a * y) - &self.forcing)
    }
}

/// `A[i][k] = sum of w_ij over informers j < k` for `k <= i` (1-based).
pub fn build_info_matrix(scenario: &Scenario) -> InfoMatrix {
    let n = scenario.n;
    let g = &scenario.topology;
    let mut a = DMatrix::zeros(n, n);
    for i in 1..=n {
        for (&j, &w) in g.neighbors(i) {
            for k in j + 1..=i {
                a[(i - 1, k - 1)] += w;
            }
        }
    }
    let forcing = &a * scenario.d_vector();
    InfoMatrix { a, forcing }
}

/// Transition blocks of the state-costate system at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiBlocks {
    pub phi11: DMatrix<f64>,
    pub phi12: DMatrix<f64>,
    pub phi21: DMatrix<f64>,
    pub phi22: DMatrix<f64>,
    pub psi1: DMatrix<f64>,
    pub psi2: DMatrix<f64>,
}

pub fn phi_blocks(ef: &EigenFactorization, t: f64) -> Result<PhiBlocks, MatfunError> {
    let (c, s) = matfun::hyp_pair(ef, t)?;
    let a_half_sinh = ef.apply(|d| d.sqrt() * (d.sqrt() * t).sinh());
    let inv_a_one_minus_cosh = ef.apply(|d| -(1.0 - (d.sqrt() * t).cosh()) / d);
    Ok(PhiBlocks {
        phi11: c.clone(),
        phi12: -&s,
        phi21: -a_half_sinh,
        phi22: c,
        psi1: inv_a_one_minus_cosh,
        psi2: -s,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralSolution {
    pub info: InfoMatrix,
    pub eig: EigenFactorization,
    /// Costate at `t = 0`.
    pub lambda0: DVector<f64>,
    pub y0: DVector<f64>,
    pub d: DVector<f64>,
    pub t_f: f64,
    // modal initial error V^-1 (y0 + d)
    z0: DVector<f64>,
    // modal deviation of the costate from the equilibrium value
    mismatch: DVector<f64>,
}

pub fn solve_general(scenario: &Scenario) -> Result<GeneralSolution, MatfunError> {
    let info = build_info_matrix(scenario);
    let eig = matfun::eig_lower_triangular(&info.a)?;
    let y0 = relative_initial(scenario).y;
    let d = scenario.d_vector();
    let t_f = scenario.t_f;

    let blocks = phi_blocks(&eig, t_f)?;
    let rhs = -(&blocks.phi21 * &y0) - &blocks.psi2 * &info.forcing;
    let lambda0 = matfun::solve_lower(&blocks.phi22, &rhs)?;

    let z0 = &eig.v_inv * (&y0 + &d);
    let n = z0.len();
    Ok(GeneralSolution {
        info,
        eig,
        lambda0,
        y0,
        d,
        t_f,
        z0,
        mismatch: DVector::zeros(n),
    })
}

impl GeneralSolution {
    pub fn n(&self) -> usize {
        self.y0.len()
    }

    /// Same problem started from a different costate; used to build
    /// deliberately non-equilibrium trajectories.
    pub fn with_lambda0(&self, lambda0: DVector<f64>) -> Self {
        let mismatch = &self.eig.v_inv * (&lambda0 - &self.lambda0) + &self.mismatch;
        GeneralSolution {
            lambda0,
            mismatch,
            ..self.clone()
        }
    }

    /// `(y(t), lambda(t))`, evaluated in modal coordinates.
    pub fn state(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        let n = self.n();
        let mut dz = DVector::zeros(n);
        let mut mu = DVector::zeros(n);
        for k in 0..n {
            let w = self.eig.delta[k];
            let alpha = matfun::scalar_alpha(w, t, self.t_f);
            let rate = matfun::scalar_alpha_rate(w, t, self.t_f);
            let r = self.mismatch[k];
            dz[k] = (alpha - 1.0) * self.z0[k];
            mu[k] = -rate * self.z0[k];
            if r != 0.0 {
                let s = w.sqrt();
                dz[k] -= matfun::sinhc(s, t) * r;
                mu[k] += (s * t).cosh() * r;
            }
        }
        let y = &self.y0 + &self.eig.v * dz;
        let lambda = &self.eig.v * mu;
        (y, lambda)
    }
}

/// `(y(t), u(t))` with `u = -lambda`.
pub fn eval_trajectory(sol: &GeneralSolution, t: f64) -> (DVector<f64>, DVector<f64>) {
    let (y, lambda) = sol.state(t);
    (y, -lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_scenario, Link, ScenarioParams, TopologyKind, TopologyWeights};

    fn apf() -> Scenario {
        let links = vec![
            Link::new(1, 0, 0.6324),
            Link::new(2, 1, 1.0975),
            Link::new(3, 1, 0.7547),
            Link::new(3, 2, 1.2785),
            Link::new(4, 1, 0.2760),
            Link::new(4, 2, 0.5469),
            Link::new(4, 3, 2.9134),
            Link::new(5, 1, 0.9649),
            Link::new(5, 2, 0.8147),
            Link::new(5, 3, 0.1576),
            Link::new(5, 4, 1.9706),
        ];
        build_scenario(
            TopologyKind::Apf,
            ScenarioParams {
                t_f: 10.0,
                x0: vec![5.5166, 4.7511, 2.1937, 1.9078, 1.5855, 0.1722],
                d: vec![-0.2, -0.2, -0.1, -0.3, -0.2],
                weights: TopologyWeights::Links(links),
            },
        )
        .unwrap()
    }

    #[test]
    fn pf_info_matrix_is_diagonal() {
        let s = build_scenario(
            TopologyKind::Pf,
            ScenarioParams {
                t_f: 10.0,
                x0: vec![3.0, 2.0, 1.0],
                d: vec![-0.1, -0.3],
                weights: TopologyWeights::Pf(vec![0.5, 0.8]),
            },
        )
        .unwrap();
        let info = build_info_matrix(&s);
        assert_eq!(info.a, DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.8]));
        assert!((info.forcing[0] + 0.05).abs() < 1e-16);
        assert!((info.forcing[1] + 0.24).abs() < 1e-16);
    }

    #[test]
    fn apf_row_sum() {
        let info = build_info_matrix(&apf());
        assert!((info.a[(4, 4)] - 3.9078).abs() < 1e-12);
        // k = 1 collects only links to the leader
        assert_eq!(info.a[(4, 0)], 0.0);
        assert!((info.a[(4, 1)] - 0.9649).abs() < 1e-12);
    }

    #[test]
    fn formation_start_stays_put() {
        let mut s = apf();
        // y = -d needs x_i = x_{i-1} - d_i, which violates the ordering, so
        // bypass validation here.
        s.x0 = std::iter::once(0.0)
            .chain(s.d.iter().scan(0.0, |acc, di| {
                *acc -= di;
                Some(*acc)
            }))
            .collect();
        let sol = solve_general(&s).unwrap();
        assert!(sol.lambda0.amax() < 1e-15);
        let (y, u) = eval_trajectory(&sol, 3.7);
        assert!((y + s.d_vector()).amax() < 1e-15);
        assert!(u.amax() < 1e-15);
    }

    #[test]
    fn endpoints() {
        let s = apf();
        let sol = solve_general(&s).unwrap();
        let (y, u) = eval_trajectory(&sol, 0.0);
        assert_eq!(y, relative_initial(&s).y);
        assert!((u + &sol.lambda0).amax() < 1e-12);
        let (_, lambda) = sol.state(s.t_f);
        assert!(lambda.amax() < 1e-8);
    }

    #[test]
    fn phi22_eigenvalues_at_least_one() {
        let sol = solve_general(&apf()).unwrap();
        let b = phi_blocks(&sol.eig, 10.0).unwrap();
        for k in 0..5 {
            assert!(b.phi22[(k, k)] >= 1.0 - 1e-12);
        }
    }
}
