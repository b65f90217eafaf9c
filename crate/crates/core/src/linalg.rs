//! Small dense complex linear algebra: spectra, a lower-triangular Schur
//! form with sorted diagonal, and the `E_eps` rescaling that turns an
//! attracting linear part into a norm contraction.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;
use thiserror::Error;

use crate::{CMatrix, Point};

const SCHUR_EPS: f64 = 1e-15;
const SCHUR_MAX_ITER: usize = 10_000;
/// `eps` is swept over `2^-1 ..= 2^-EPS_SWEEP_MAX`.
pub const EPS_SWEEP_MAX: i32 = 40;
pub const DEFAULT_MARGIN: f64 = 0.05;
pub const ALPHA_CAP: f64 = 0.99;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix must be square and nonempty, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("Schur iteration did not converge within {0} sweeps")]
    NoConvergence(usize),
    #[error("not attracting: spectral radius {0} >= 1")]
    NotAttracting(f64),
    #[error("no eps in 2^-1..2^-{EPS_SWEEP_MAX} brings the conjugated norm below {alpha}")]
    NoScaling { alpha: f64 },
}

fn check(a: &CMatrix) -> Result<(), LinalgError> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(LinalgError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    Ok(())
}

/// Inverse of a square matrix, `None` when singular to working precision.
pub fn invert(a: &CMatrix) -> Option<CMatrix> {
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return None;
    }
    let lu = a.clone().lu();
    let det = lu.determinant().norm();
    if det <= (scale * 1e-14).powi(a.nrows() as i32) {
        return None;
    }
    lu.try_inverse()
}

/// Conjugate transpose.
pub fn adjoint(a: &CMatrix) -> CMatrix {
    a.adjoint()
}

/// Largest singular value.
pub fn operator_norm(a: &CMatrix) -> f64 {
    a.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Eigenvalues with multiplicity, ascending by modulus.
pub fn eigenvalues(a: &CMatrix) -> Result<Vec<Complex64>, LinalgError> {
    let (_, t) = lower_triangularize(a)?;
    let mut ev: Vec<Complex64> = (0..t.nrows()).map(|i| t[(i, i)]).collect();
    ev.sort_by(|x, y| x.norm().total_cmp(&y.norm()));
    Ok(ev)
}

pub fn spectral_radius(a: &CMatrix) -> Result<f64, LinalgError> {
    Ok(eigenvalues(a)?.last().map(|z| z.norm()).unwrap_or(0.0))
}

/// Unitary `q` and lower-triangular `t` with `q* a q = t`.
///
/// The diagonal of `t` is ordered by descending modulus, which places every
/// resonant monomial `lambda_i = lambda^alpha` on variables preceding `i`.
pub fn lower_triangularize(a: &CMatrix) -> Result<(CMatrix, CMatrix), LinalgError> {
    check(a)?;
    let n = a.nrows();
    if is_lower_triangular(a) && diagonal_descending(a) {
        return Ok((CMatrix::identity(n, n), a.clone()));
    }
    // Upper Schur form of the transpose: a^T = U S U*.
    let schur = Schur::try_new(a.transpose(), SCHUR_EPS, SCHUR_MAX_ITER)
        .ok_or(LinalgError::NoConvergence(SCHUR_MAX_ITER))?;
    let (mut u, mut s) = schur.unpack();
    for i in 0..n {
        for j in 0..i {
            s[(i, j)] = Complex64::default();
        }
    }
    sort_upper_schur(&mut u, &mut s);
    // a = conj(U) S^T U^T, so q = conj(U) and t = S^T.
    let q = u.map(|z| z.conj());
    let t = s.transpose();
    Ok((q, t))
}

fn is_lower_triangular(a: &CMatrix) -> bool {
    let n = a.nrows();
    (0..n).all(|i| (i + 1..n).all(|j| a[(i, j)] == Complex64::default()))
}

fn diagonal_descending(a: &CMatrix) -> bool {
    (1..a.nrows()).all(|i| a[(i - 1, i - 1)].norm() >= a[(i, i)].norm())
}

/// Bubble-sorts the diagonal of an upper-triangular `s` into descending
/// modulus with adjacent unitary swaps, accumulating into `u`.
fn sort_upper_schur(u: &mut CMatrix, s: &mut CMatrix) {
    let n = s.nrows();
    for pass in 0..n {
        let mut swapped = false;
        for k in 0..n.saturating_sub(1 + pass) {
            let t11 = s[(k, k)];
            let t22 = s[(k + 1, k + 1)];
            if t22.norm() <= t11.norm() || t11 == t22 {
                continue;
            }
            // First column of the rotation spans the eigenvector of the 2x2
            // block belonging to t22.
            let v1 = s[(k, k + 1)];
            let v2 = t22 - t11;
            let len = (v1.norm_sqr() + v2.norm_sqr()).sqrt();
            let (c1, c2) = (v1 / len, v2 / len);
            let g = DMatrix::from_row_slice(2, 2, &[c1, -c2.conj(), c2, c1.conj()]);
            let cols = s.columns(k, 2) * &g;
            s.columns_mut(k, 2).copy_from(&cols);
            let rows = g.adjoint() * s.rows(k, 2);
            s.rows_mut(k, 2).copy_from(&rows);
            let ucols = u.columns(k, 2) * &g;
            u.columns_mut(k, 2).copy_from(&ucols);
            s[(k + 1, k)] = Complex64::default();
            s[(k, k)] = t22;
            s[(k + 1, k + 1)] = t11;
            swapped = true;
        }
        if !swapped {
            break;
        }
    }
}

/// `diag(eps^N, eps^(N-1), ..., eps)`.
pub fn scaling_matrix(n: usize, eps: f64) -> CMatrix {
    CMatrix::from_diagonal(&DVector::from_fn(n, |i, _| {
        Complex64::new(eps.powi((n - i) as i32), 0.0)
    }))
}

/// `E_eps^{-1} t E_eps`; entry `(i, j)` picks up the factor `eps^(i-j)`.
pub fn conjugate_by_scaling(t: &CMatrix, eps: f64) -> CMatrix {
    let n = t.nrows();
    CMatrix::from_fn(n, n, |i, j| t[(i, j)] * eps.powi(i as i32 - j as i32))
}

/// A neighborhood `R = center + frame · E_eps(B(0, rho))` of an attracting
/// fixed point, on which the germ contracts by `alpha` in the scaled frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularityNbhd {
    pub eps: f64,
    /// Zero means only the linear certificate has been computed.
    pub rho: f64,
    pub alpha: f64,
    pub scaling: CMatrix,
    pub frame: CMatrix,
    /// Lower-triangular `frame* A frame`.
    pub triangular: CMatrix,
    pub center: Point,
}

impl RegularityNbhd {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `E_eps^{-1} frame* (z - center)`.
    pub fn scaled_coords(&self, z: &Point) -> Point {
        let local = self.frame.adjoint() * (z - &self.center);
        let n = self.dim();
        Point::from_fn(n, |i, _| local[i] / self.eps.powi((n - i) as i32))
    }

    pub fn scaled_norm(&self, z: &Point) -> f64 {
        self.scaled_coords(z).norm()
    }

    /// Inverse of [`RegularityNbhd::scaled_coords`].
    pub fn from_scaled(&self, u: &Point) -> Point {
        &self.center + &self.frame * (&self.scaling * u)
    }

    /// Local (frame) coordinates `frame* (z - center)`.
    pub fn local_coords(&self, z: &Point) -> Point {
        self.frame.adjoint() * (z - &self.center)
    }

    pub fn from_local(&self, u: &Point) -> Point {
        &self.center + &self.frame * u
    }

    pub fn contains(&self, z: &Point) -> bool {
        self.scaled_norm(z) < self.rho
    }
}

/// Linear part of the regularity certificate: the frame, `eps` and `alpha`
/// with `||E_eps^{-1} t E_eps|| <= alpha < 1`. `rho` is left at 0.
pub fn scaling_neighborhood(a: &CMatrix, margin: f64) -> Result<RegularityNbhd, LinalgError> {
    let (q, t) = lower_triangularize(a)?;
    let n = a.nrows();
    let radius = (0..n).map(|i| t[(i, i)].norm()).fold(0.0, f64::max);
    if radius >= 1.0 {
        return Err(LinalgError::NotAttracting(radius));
    }
    let mut alpha = (radius + margin).min(ALPHA_CAP);
    if alpha <= radius {
        alpha = 0.5 * (radius + 1.0);
    }
    for j in 1..=EPS_SWEEP_MAX {
        let eps = 2f64.powi(-j);
        if operator_norm(&conjugate_by_scaling(&t, eps)) <= alpha {
            return Ok(RegularityNbhd {
                eps,
                rho: 0.0,
                alpha,
                scaling: scaling_matrix(n, eps),
                frame: q,
                triangular: t,
                center: Point::zeros(n),
            });
        }
    }
    Err(LinalgError::NoScaling { alpha })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn m2(a: f64, b: f64, c: f64, d: f64) -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[r(a), r(b), r(c), r(d)])
    }

    fn unitary_defect(q: &CMatrix) -> f64 {
        (q.adjoint() * q - CMatrix::identity(q.nrows(), q.nrows())).norm()
    }

    fn upper_part_norm(t: &CMatrix) -> f64 {
        let n = t.nrows();
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                s += t[(i, j)].norm_sqr();
            }
        }
        s.sqrt()
    }

    #[test]
    fn eigenvalues_of_diagonal_and_triangular() {
        let ev = eigenvalues(&m2(0.5, 0.0, 0.0, 0.25)).unwrap();
        assert!((ev[0] - r(0.25)).norm() < 1e-14 && (ev[1] - r(0.5)).norm() < 1e-14);
        let ev = eigenvalues(&m2(0.5, 0.0, 1.0, 0.5)).unwrap();
        assert!(ev.iter().all(|z| (z - r(0.5)).norm() < 1e-14));
    }

    #[test]
    fn companion_matrix_double_root() {
        // x^2 - x + 1/4 = (x - 1/2)^2; a defective double root only
        // resolves to about sqrt(machine eps).
        let ev = eigenvalues(&m2(0.0, 1.0, -0.25, 1.0)).unwrap();
        assert!(ev.iter().all(|z| (z - r(0.5)).norm() < 1e-7));
    }

    #[test]
    fn triangularize_passes_through_lower_input() {
        let a = m2(0.5, 0.0, 1.0, 0.25);
        let (q, t) = lower_triangularize(&a).unwrap();
        assert_eq!(q, CMatrix::identity(2, 2));
        assert_eq!(t, a);
    }

    #[test]
    fn triangularize_companion_with_real_roots() {
        // Characteristic polynomial x^2 - 3/4 x + 1/8 has roots 1/2, 1/4.
        let a = m2(0.0, 1.0, -0.125, 0.75);
        let (q, t) = lower_triangularize(&a).unwrap();
        assert!(unitary_defect(&q) < 1e-12);
        assert!((q.adjoint() * &a * &q - &t).norm() < 1e-10);
        assert!(upper_part_norm(&t) == 0.0);
        assert!((t[(0, 0)] - r(0.5)).norm() < 1e-12);
        assert!((t[(1, 1)] - r(0.25)).norm() < 1e-12);
    }

    #[test]
    fn triangularize_unitary_gives_unit_diagonal() {
        let (s, c) = (0.6f64, 0.8f64);
        let u = CMatrix::from_row_slice(
            2,
            2,
            &[r(c), r(-s), Complex64::new(0.0, s), Complex64::new(0.0, c)],
        );
        let (q, t) = lower_triangularize(&u).unwrap();
        assert!(unitary_defect(&q) < 1e-12);
        for i in 0..2 {
            assert!((t[(i, i)].norm() - 1.0).abs() < 1e-12);
        }
        assert!(t[(1, 0)].norm() < 1e-10);
    }

    #[test]
    fn scaling_examples() {
        let nb = scaling_neighborhood(&m2(0.5, 0.0, 0.0, 0.5), DEFAULT_MARGIN).unwrap();
        assert!((nb.alpha - 0.55).abs() < 1e-15);
        assert_eq!(nb.eps, 0.5);

        let t = m2(0.5, 0.0, 1.0, 0.5);
        let conj = conjugate_by_scaling(&t, 0.1);
        assert!((conj - m2(0.5, 0.0, 0.1, 0.5)).norm() < 1e-15);
        assert!(operator_norm(&conjugate_by_scaling(&t, 0.1)) <= 0.6);
        let e = scaling_matrix(2, 0.1);
        let direct = crate::linalg::invert(&e).unwrap() * &t * &e;
        assert!((direct - m2(0.5, 0.0, 0.1, 0.5)).norm() < 1e-14);

        let err = scaling_neighborhood(&m2(1.0, 0.0, 0.0, 0.5), DEFAULT_MARGIN).unwrap_err();
        assert!(matches!(err, LinalgError::NotAttracting(_)));
    }

    #[test]
    fn scaling_matrix_has_exact_powers() {
        let eps = 2f64.powi(-7);
        let e = scaling_matrix(3, eps);
        assert_eq!(e[(0, 0)].re, eps * eps * eps);
        assert_eq!(e[(1, 1)].re, eps * eps);
        assert_eq!(e[(2, 2)].re, eps);
    }

    #[test]
    fn rejects_non_square() {
        let a = CMatrix::zeros(2, 3);
        assert!(matches!(
            lower_triangularize(&a),
            Err(LinalgError::NotSquare { .. })
        ));
    }
}
