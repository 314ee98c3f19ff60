//! Dense helpers for lower-triangular information matrices: eigenvectors by
//! back-substitution, triangular inversion and hyperbolic matrix functions.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Relative separation below which two diagonal entries count as coincident.
pub const SPECTRAL_GAP: f64 = 1e-8;

/// Largest `sqrt(delta) * t` accepted by [`hyp_pair`].
pub const HYP_ARG_LIMIT: f64 = 700.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatfunError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not lower-triangular: entry ({row}, {col}) = {value}")]
    NotLowerTriangular { row: usize, col: usize, value: f64 },
    #[error("diagonal entry {index} = {value} must be positive")]
    NonPositiveDiagonal { index: usize, value: f64 },
    #[error("near-degenerate spectrum: delta_{i} = {a} and delta_{j} = {b} are not separated")]
    NearDegenerateSpectrum { i: usize, j: usize, a: f64, b: f64 },
    #[error("singular triangular matrix: zero diagonal entry {0}")]
    Singular(usize),
    #[error("hyperbolic argument {0} exceeds the overflow limit")]
    Overflow(f64),
}

/// `A = V diag(delta) V^-1` for a lower-triangular `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenFactorization {
    pub delta: DVector<f64>,
    pub v: DMatrix<f64>,
    pub v_inv: DMatrix<f64>,
}

impl EigenFactorization {
    pub fn n(&self) -> usize {
        self.delta.len()
    }

    /// `V diag(f(delta)) V^-1`.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut vd = self.v.clone();
        for (k, mut col) in vd.column_iter_mut().enumerate() {
            col *= f(self.delta[k]);
        }
        tril(&(vd * &self.v_inv))
    }

    pub fn reassemble(&self) -> DMatrix<f64> {
        self.apply(|x| x)
    }

    /// Square roots of the eigenvalues.
    pub fn sqrt_delta(&self) -> DVector<f64> {
        self.delta.map(f64::sqrt)
    }
}

fn tril(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for c in 1..out.ncols() {
        for r in 0..c.min(out.nrows()) {
            out[(r, c)] = 0.0;
        }
    }
    out
}

fn check_lower(a: &DMatrix<f64>) -> Result<(), MatfunError> {
    if a.nrows() != a.ncols() {
        return Err(MatfunError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    for c in 1..a.ncols() {
        for r in 0..c {
            if a[(r, c)] != 0.0 {
                return Err(MatfunError::NotLowerTriangular {
                    row: r,
                    col: c,
                    value: a[(r, c)],
                });
            }
        }
    }
    Ok(())
}

/// Eigenfactorization of a lower-triangular matrix with positive, pairwise
/// separated diagonal. Eigenvectors are normalized to a unit diagonal, so both
/// `V` and `V^-1` are unit lower-triangular.
pub fn eig_lower_triangular(a: &DMatrix<f64>) -> Result<EigenFactorization, MatfunError> {
    check_lower(a)?;
    let n = a.nrows();
    let delta = a.diagonal();
    for (i, &v) in delta.iter().enumerate() {
        if !(v > 0.0 && v.is_finite()) {
            return Err(MatfunError::NonPositiveDiagonal { index: i, value: v });
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let (x, y) = (delta[i], delta[j]);
            if (x - y).abs() <= SPECTRAL_GAP * x.max(y) {
                return Err(MatfunError::NearDegenerateSpectrum { i, j, a: x, b: y });
            }
        }
    }

    let mut v = DMatrix::zeros(n, n);
    for i in 0..n {
        v[(i, i)] = 1.0;
        for r in i + 1..n {
            let s: f64 = (i..r).map(|c| a[(r, c)] * v[(c, i)]).sum();
            v[(r, i)] = -s / (a[(r, r)] - delta[i]);
        }
    }
    let v_inv = tri_inverse(&v)?;
    Ok(EigenFactorization { delta, v, v_inv })
}

/// Inverse of a lower-triangular matrix by column-wise forward substitution.
pub fn tri_inverse(l: &DMatrix<f64>) -> Result<DMatrix<f64>, MatfunError> {
    check_lower(l)?;
    let n = l.nrows();
    if let Some(i) = (0..n).find(|&i| l[(i, i)] == 0.0) {
        return Err(MatfunError::Singular(i));
    }
    let mut inv = DMatrix::zeros(n, n);
    for c in 0..n {
        inv[(c, c)] = 1.0 / l[(c, c)];
        for r in c + 1..n {
            let s: f64 = (c..r).map(|k| l[(r, k)] * inv[(k, c)]).sum();
            inv[(r, c)] = -s / l[(r, r)];
        }
    }
    Ok(inv)
}

/// Forward substitution `L x = b`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, MatfunError> {
    check_lower(l)?;
    let n = l.nrows();
    let mut x = DVector::zeros(n);
    for r in 0..n {
        if l[(r, r)] == 0.0 {
            return Err(MatfunError::Singular(r));
        }
        let s: f64 = (0..r).map(|k| l[(r, k)] * x[k]).sum();
        x[r] = (b[r] - s) / l[(r, r)];
    }
    Ok(x)
}

/// `(cosh(A^{1/2} t), sinh(A^{1/2} t) A^{-1/2})`.
pub fn hyp_pair(ef: &EigenFactorization, t: f64) -> Result<(DMatrix<f64>, DMatrix<f64>), MatfunError> {
    let max_arg = ef.sqrt_delta().max() * t.abs();
    if !(max_arg <= HYP_ARG_LIMIT) {
        return Err(MatfunError::Overflow(max_arg));
    }
    let c = ef.apply(|d| cosh_safe(d.sqrt() * t));
    let s = ef.apply(|d| sinhc(d.sqrt(), t));
    Ok((c, s))
}

fn cosh_safe(x: f64) -> f64 {
    let x = x.abs();
    0.5 * x.exp() * (1.0 + (-2.0 * x).exp())
}

/// `sinh(s t) / s`, accurate for small `s t`.
pub fn sinhc(s: f64, t: f64) -> f64 {
    let x = s * t;
    if x.abs() < 1e-4 {
        t * (1.0 + x * x / 6.0)
    } else {
        let e = (-2.0 * x.abs()).exp();
        x.signum() * 0.5 * x.abs().exp() * (1.0 - e) / s
    }
}

/// `cosh(sqrt(omega)(t_f - t)) / cosh(sqrt(omega) t_f)` without overflow.
pub fn scalar_alpha(omega: f64, t: f64, t_f: f64) -> f64 {
    let s = omega.sqrt();
    ((-s * t).exp() + (-s * (2.0 * t_f - t)).exp()) / (1.0 + (-2.0 * s * t_f).exp())
}

/// Time derivative of [`scalar_alpha`].
pub fn scalar_alpha_rate(omega: f64, t: f64, t_f: f64) -> f64 {
    let s = omega.sqrt();
    -s * ((-s * t).exp() - (-s * (2.0 * t_f - t)).exp()) / (1.0 + (-2.0 * s * t_f).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn diagonal_input() {
        let ef = eig_lower_triangular(&DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]))).unwrap();
        assert_eq!(ef.delta.as_slice(), &[4.0, 9.0]);
        assert_eq!(ef.v, DMatrix::identity(2, 2));
        assert_eq!(ef.v_inv, DMatrix::identity(2, 2));
    }

    #[test]
    fn two_by_two_hand_case() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 5.0]);
        let ef = eig_lower_triangular(&a).unwrap();
        assert_eq!(ef.delta.as_slice(), &[2.0, 5.0]);
        assert_relative_eq!(ef.v[(1, 0)], -1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(ef.v[(0, 1)], 0.0);
        assert_eq!(ef.v[(1, 1)], 1.0);
        let resid = &a * &ef.v - &ef.v * DMatrix::from_diagonal(&ef.delta);
        assert!(resid.amax() < 1e-14);
    }

    #[test]
    fn degenerate_and_invalid() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.3, 1.0]);
        assert!(matches!(
            eig_lower_triangular(&a),
            Err(MatfunError::NearDegenerateSpectrum { i: 0, j: 1, .. })
        ));
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.3, 2.0]);
        assert!(matches!(eig_lower_triangular(&a), Err(MatfunError::NotLowerTriangular { .. })));
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.3, 2.0]);
        assert!(matches!(eig_lower_triangular(&a), Err(MatfunError::NonPositiveDiagonal { .. })));
    }

    #[test]
    fn tri_inverse_small() {
        assert_eq!(tri_inverse(&DMatrix::identity(3, 3)).unwrap(), DMatrix::identity(3, 3));
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.7, 1.0]);
        assert_eq!(
            tri_inverse(&l).unwrap(),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -0.7, 1.0])
        );
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.7, 0.0]);
        assert_eq!(tri_inverse(&l), Err(MatfunError::Singular(1)));
    }

    #[test]
    fn hyp_pair_at_zero_and_scalar() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 5.0]);
        let ef = eig_lower_triangular(&a).unwrap();
        let (c, s) = hyp_pair(&ef, 0.0).unwrap();
        assert!((c - DMatrix::identity(2, 2)).amax() < 1e-15);
        assert_eq!(s.amax(), 0.0);

        let ef = eig_lower_triangular(&DMatrix::from_element(1, 1, 1.0)).unwrap();
        let (c, s) = hyp_pair(&ef, 1.0).unwrap();
        assert_relative_eq!(c[(0, 0)], 1.5430806348152437784779, max_relative = 1e-15);
        assert_relative_eq!(s[(0, 0)], 1.17520119364380145688238, max_relative = 1e-15);

        assert!(matches!(hyp_pair(&ef, 701.0), Err(MatfunError::Overflow(_))));
        let (c, _) = hyp_pair(&ef, 700.0).unwrap();
        assert!(c[(0, 0)].is_finite());
    }

    #[test]
    fn alpha_values() {
        assert_eq!(scalar_alpha(0.6443, 0.0, 10.0), 1.0);
        // 1 / cosh(10)
        assert_relative_eq!(scalar_alpha(1.0, 10.0, 10.0), 9.07998593378172440801295e-5, max_relative = 1e-15);
        assert_relative_eq!(
            scalar_alpha(1.0, 10.0, 10.0),
            1.0 / 10f64.cosh(),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            scalar_alpha(0.6443, 5.0, 10.0),
            0.018077475144688365973979722854920954,
            max_relative = 1e-14
        );
        let a = scalar_alpha(1e4, 7.0, 100.0);
        assert!(a > 0.0 && a.is_finite());
        // e^{-5000} is below the smallest subnormal
        assert_eq!(scalar_alpha(1e4, 50.0, 100.0), 0.0);
    }

    #[test]
    fn alpha_rate_matches_difference_quotient() {
        let (w, tf) = (0.6443, 10.0);
        for &t in &[0.5, 3.0, 7.5, 9.9] {
            let h = 1e-6;
            let fd = (scalar_alpha(w, t + h, tf) - scalar_alpha(w, t - h, tf)) / (2.0 * h);
            assert_relative_eq!(scalar_alpha_rate(w, t, tf), fd, max_relative = 1e-7);
        }
        assert!(scalar_alpha_rate(w, tf, tf).abs() < 1e-16);
    }

    #[test]
    fn sinhc_small_argument() {
        assert_relative_eq!(sinhc(1e-9, 2.0), 2.0, max_relative = 1e-15);
        assert_relative_eq!(sinhc(2.0, 1.5), 3f64.sinh() / 2.0, max_relative = 1e-15);
    }
}
