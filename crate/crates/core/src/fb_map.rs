//! The Fatou-Bieberbach map `Psi = lim G^-k ∘ T ∘ F^k` on the potential basin
//! and its entire inverse `Theta = lim h^k ∘ T^-1 ∘ G^k`.
//!
//! The normal form `(G, T)` lives in the unitary frame `q` that triangularizes
//! the germ at the fixed point `p`; in the original coordinates
//! `Psi(z) = q Psi_loc(q* (z - p))` and the conjugated automorphism is
//! `Ghat(w) = q G(q* w)`, so that `Psi ∘ F = Ghat ∘ Psi` and `Psi(p) = 0`,
//! `dPsi(p) = id`.

use std::fmt::Write as _;

use thiserror::Error;

use crate::continuation::{pullback_chain, ContinuationError, RiemannPoint, SheetId};
use crate::dynamics::{ball_samples, find_regularity_neighborhood, DynamicsError, HoloMap};
use crate::linalg::RegularityNbhd;
use crate::normal_form::{poincare_dulac, NormalFormError, NormalFormResult, DEFAULT_RES_TOL};
use crate::poly::{map_compose, map_inverse_formal, PolyError, PolyMap};
use crate::{CMatrix, EvalError, Point};

pub const DEFAULT_K_MAX: usize = 200;
pub const DEFAULT_PSI_TOL: f64 = 1e-13;
pub const DEFAULT_THETA_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FbError {
    #[error("point is outside the regularity neighborhood (scaled norm {norm:e} >= rho {rho:e})")]
    OutsideR { norm: f64, rho: f64 },
    #[error("no convergence within {iterations} iterations (last delta {last_delta:e})")]
    NoConvergence { iterations: usize, last_delta: f64 },
    #[error("orbit did not reach the regularity neighborhood within {0} steps")]
    NotInBasin(usize),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    NormalForm(#[from] NormalFormError),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Continuation(#[from] ContinuationError),
}

impl From<FbError> for EvalError {
    fn from(e: FbError) -> Self {
        match e {
            FbError::Eval(e) => e,
            FbError::NoConvergence { iterations, last_delta } => EvalError::NoConvergence { iterations, last_delta },
            other => EvalError::OutsideDomain(other.to_string()),
        }
    }
}

/// `(k, ||Psi_k - Psi_{k-1}||)` pairs from one evaluation.
pub type ConvergenceLog = Vec<(usize, f64)>;

/// Shared pieces of both evaluators.
#[derive(Debug, Clone)]
struct Frame {
    q: CMatrix,
    q_adj: CMatrix,
    center: Point,
}

impl Frame {
    fn new(nbhd: &RegularityNbhd) -> Self {
        Frame {
            q: nbhd.frame.clone(),
            q_adj: nbhd.frame.adjoint(),
            center: nbhd.center.clone(),
        }
    }

    fn to_local(&self, z: &Point) -> Point {
        &self.q_adj * (z - &self.center)
    }

    fn from_local(&self, u: &Point) -> Point {
        &self.center + &self.q * u
    }
}

fn g_eval(nf: &NormalFormResult, v: &Point) -> Point {
    nf.g.eval_point(v)
}

fn g_inv(nf: &NormalFormResult, v: &Point) -> Point {
    Point::from_vec(nf.g_inverse_eval(v.as_slice()))
}

/// Evaluator for `Psi` on the regularity neighborhood, on the basin, and on
/// sheets of the Riemann domain.
#[derive(Debug, Clone)]
pub struct FbMapEvaluator {
    pub h: HoloMap,
    pub nbhd: RegularityNbhd,
    pub nf: NormalFormResult,
    pub k_max: usize,
    pub tol: f64,
    frame: Frame,
}

/// Evaluator for `Theta`, the entire inverse of `Psi`.
#[derive(Debug, Clone)]
pub struct ThetaEvaluator {
    pub h: HoloMap,
    pub nbhd: RegularityNbhd,
    pub nf: NormalFormResult,
    pub t_inv: PolyMap,
    pub k_max: usize,
    pub tol: f64,
    frame: Frame,
}

/// The germ in the triangularizing frame, `q* F(p + q u) - ...`, with its
/// linear part replaced by the exactly lower-triangular Schur factor.
pub fn local_germ(h: &HoloMap, nbhd: &RegularityNbhd) -> Result<PolyMap, PolyError> {
    let order = h.germ.order();
    let q = PolyMap::linear(&nbhd.frame, order);
    let q_adj = PolyMap::linear(&nbhd.frame.adjoint(), order);
    let conj = map_compose(&q_adj, &map_compose(&h.germ, &q, order)?, order)?;
    PolyMap::linear(&nbhd.triangular, order).add(&conj.nonlinear_part())
}

/// Certifies `R`, computes the normal form of order `m` and builds both
/// evaluators.
pub fn build_pipeline(h: HoloMap, m: u32) -> Result<(FbMapEvaluator, ThetaEvaluator), FbError> {
    let nbhd = find_regularity_neighborhood(&h)?;
    let f_loc = local_germ(&h, &nbhd)?;
    let nf = poincare_dulac(&f_loc, m, DEFAULT_RES_TOL)?;
    Ok(evaluators_from_parts(h, nbhd, nf)?)
}

pub fn evaluators_from_parts(h: HoloMap, nbhd: RegularityNbhd, nf: NormalFormResult) -> Result<(FbMapEvaluator, ThetaEvaluator), PolyError> {
    let t_inv = map_inverse_formal(&nf.t, nf.order.saturating_sub(1).max(1))?;
    let frame = Frame::new(&nbhd);
    let psi = FbMapEvaluator {
        h: h.clone(),
        nbhd: nbhd.clone(),
        nf: nf.clone(),
        k_max: DEFAULT_K_MAX,
        tol: DEFAULT_PSI_TOL,
        frame: frame.clone(),
    };
    let theta = ThetaEvaluator {
        h,
        nbhd,
        nf,
        t_inv,
        k_max: DEFAULT_K_MAX,
        tol: DEFAULT_THETA_TOL,
        frame,
    };
    Ok((psi, theta))
}

impl FbMapEvaluator {
    pub fn dim(&self) -> usize {
        self.h.dim
    }

    /// `Ghat(w) = q G(q* w)`.
    pub fn g_hat(&self, w: &Point) -> Point {
        &self.frame.q * g_eval(&self.nf, &(&self.frame.q_adj * w))
    }

    /// `Ghat^{-1}`.
    pub fn g_hat_inverse(&self, w: &Point) -> Point {
        &self.frame.q * g_inv(&self.nf, &(&self.frame.q_adj * w))
    }

    fn g_inv_iter_local(&self, v: &Point, k: usize) -> Point {
        (0..k).fold(v.clone(), |acc, _| g_inv(&self.nf, &acc))
    }

    /// `Psi(z)` for `z ∈ R`, with its convergence log.
    pub fn psi_eval_logged(&self, z: &Point) -> Result<(Point, ConvergenceLog), FbError> {
        let norm = self.nbhd.scaled_norm(z);
        if norm >= self.nbhd.rho {
            return Err(FbError::OutsideR { norm, rho: self.nbhd.rho });
        }
        let mut log = Vec::new();
        let mut x = z.clone();
        let mut prev = self.nf.t.eval_point(&self.frame.to_local(&x));
        let mut delta = f64::INFINITY;
        for k in 1..=self.k_max {
            x = self.h.inverse_principal(&x)?;
            let cur = self.g_inv_iter_local(&self.nf.t.eval_point(&self.frame.to_local(&x)), k);
            delta = (&cur - &prev).norm();
            log.push((k, delta));
            prev = cur;
            if delta < self.tol * (1.0 + prev.norm()) {
                return Ok((&self.frame.q * prev, log));
            }
        }
        Err(FbError::NoConvergence {
            iterations: self.k_max,
            last_delta: delta,
        })
    }

    pub fn psi_eval(&self, z: &Point) -> Result<Point, FbError> {
        Ok(self.psi_eval_logged(z)?.0)
    }

    /// `Ghat^{-n}(Psi(x))`, for `x` reached from a base point by `n`
    /// pullbacks.
    pub fn psi_from_level(&self, x: &Point, n: usize) -> Result<Point, FbError> {
        let v = self.psi_on_basin(x)?;
        let local = self.g_inv_iter_local(&(&self.frame.q_adj * v), n);
        Ok(&self.frame.q * local)
    }

    /// `Psi` on the principal sheet of the basin: push into `R` with the
    /// principal inverse branch, then undo with `Ghat^{-j}`.
    pub fn psi_on_basin(&self, z: &Point) -> Result<Point, FbError> {
        let mut x = z.clone();
        for j in 0..=self.k_max {
            if self.nbhd.contains(&x) {
                let v = self.psi_eval(&x)?;
                let local = self.g_inv_iter_local(&(&self.frame.q_adj * v), j);
                return Ok(&self.frame.q * local);
            }
            x = self.h.inverse_principal(&x)?;
        }
        Err(FbError::NotInBasin(self.k_max))
    }

    /// `Psi` on the sheet recorded in `x`: follow the labelled branch chain
    /// from the base point, then apply `Ghat^{-n}`.
    pub fn psi_eval_on_sheet(&self, x: &RiemannPoint) -> Result<Point, FbError> {
        if x.level == 0 {
            return self.psi_on_basin(&x.base);
        }
        let inv = self.h.inverse.as_ref().ok_or(ContinuationError::NoInverseBranch)?;
        let chain = pullback_chain(inv, &x.base, &x.sheet, x.level)?;
        self.psi_from_level(chain.last().expect("nonempty"), x.level)
    }

    /// The trivial-sheet point over `z`.
    pub fn riemann_point(&self, z: &Point) -> Result<RiemannPoint, FbError> {
        Ok(RiemannPoint {
            base: z.clone(),
            sheet: SheetId::trivial(),
            level: 0,
            psi_value: self.psi_on_basin(z)?,
        })
    }

    /// Finite-difference Jacobian of `Psi` at `z`.
    pub fn psi_jacobian(&self, z: &Point) -> Result<CMatrix, FbError> {
        Ok(crate::dynamics::jacobian_fd(&|x| self.psi_on_basin(x).map_err(EvalError::from), z)?)
    }
}

impl ThetaEvaluator {
    /// `Theta(w)`: push `q* w` into `R` with `G`, pull back with `T^{-1}`
    /// and map out with `h^k`, increasing `k` until successive values agree.
    pub fn theta_eval(&self, w: &Point) -> Result<Point, FbError> {
        let mut v = &self.frame.q_adj * w;
        let half = 0.5 * self.nbhd.rho;
        let scaled = |v: &Point| -> f64 {
            let n = v.len();
            Point::from_fn(n, |i, _| v[i] / self.nbhd.eps.powi((n - i) as i32)).norm()
        };
        let mut k = 0;
        while scaled(&v) >= half {
            if k >= self.k_max {
                return Err(FbError::NoConvergence {
                    iterations: k,
                    last_delta: scaled(&v),
                });
            }
            v = g_eval(&self.nf, &v);
            k += 1;
        }
        let candidate = |v: &Point, k: usize| -> Result<Point, FbError> {
            let x = self.frame.from_local(&self.t_inv.eval_point(v));
            Ok(self.h.eval_iter(&x, k)?)
        };
        let mut prev = candidate(&v, k)?;
        let mut delta = f64::INFINITY;
        while k < self.k_max {
            v = g_eval(&self.nf, &v);
            k += 1;
            let cur = candidate(&v, k)?;
            delta = (&cur - &prev).norm();
            prev = cur;
            if delta < self.tol * (1.0 + prev.norm()) {
                return Ok(prev);
            }
        }
        Err(FbError::NoConvergence {
            iterations: k,
            last_delta: delta,
        })
    }

    pub fn g_hat(&self, w: &Point) -> Point {
        &self.frame.q * g_eval(&self.nf, &(&self.frame.q_adj * w))
    }
}

/// Maxima of the three functional-equation residuals over seeded samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    /// `||Psi(F z) - Ghat(Psi z)||` on `R`.
    pub conjugacy: f64,
    /// `||h(Theta(Ghat w)) - Theta(w)||` on the unit ball.
    pub theta_step: f64,
    /// `||Theta(Psi z) - z||` near the fixed point.
    pub round_trip: f64,
    pub samples: usize,
}

impl ResidualReport {
    pub fn max(&self) -> f64 {
        self.conjugacy.max(self.theta_step).max(self.round_trip)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "samples: {}", self.samples);
        let _ = writeln!(s, "residual_conjugacy: {:e}", self.conjugacy);
        let _ = writeln!(s, "residual_theta_step: {:e}", self.theta_step);
        let _ = writeln!(s, "residual_round_trip: {:e}", self.round_trip);
        s
    }
}

/// Points of `R` with scaled norm below `fraction * rho`.
pub fn samples_in_r(nbhd: &RegularityNbhd, count: usize, fraction: f64, seed: u64) -> Vec<Point> {
    ball_samples(nbhd.dim(), count, fraction * nbhd.rho, seed)
        .iter()
        .map(|u| nbhd.from_scaled(u))
        .collect()
}

pub fn functional_residuals(e: &FbMapEvaluator, t: &ThetaEvaluator, samples: usize, seed: u64) -> Result<ResidualReport, FbError> {
    let mut conjugacy = 0.0f64;
    for z in samples_in_r(&e.nbhd, samples, 0.5, seed) {
        let fz = e.h.inverse_principal(&z)?;
        let lhs = e.psi_eval(&fz)?;
        let rhs = e.g_hat(&e.psi_eval(&z)?);
        conjugacy = conjugacy.max((lhs - rhs).norm());
    }
    let mut theta_step = 0.0f64;
    for w in ball_samples(e.dim(), samples, 1.0, seed ^ 0x9e37) {
        let lhs = t.h.eval(&t.theta_eval(&t.g_hat(&w))?)?;
        let rhs = t.theta_eval(&w)?;
        theta_step = theta_step.max((lhs - rhs).norm());
    }
    let mut round_trip = 0.0f64;
    for z in samples_in_r(&e.nbhd, samples, 0.25, seed ^ 0x7f4a) {
        let back = t.theta_eval(&e.psi_eval(&z)?)?;
        round_trip = round_trip.max((back - z).norm());
    }
    Ok(ResidualReport {
        conjugacy,
        theta_step,
        round_trip,
        samples,
    })
}

/// A point of the Riemann domain with `Psi = w`: the base is `Theta(w)` and
/// the sheet is read off the chain `x_k = p + q T^{-1}(G^k q* w)`,
/// `x_{i-1} = h(x_i)`.
pub fn surjectivity_witness(e: &FbMapEvaluator, t: &ThetaEvaluator, w: &Point) -> Result<RiemannPoint, FbError> {
    let base = t.theta_eval(w)?;
    let mut v = &t.frame.q_adj * w;
    let mut k = 0;
    let mut x = t.frame.from_local(&t.t_inv.eval_point(&v));
    while !e.nbhd.contains(&x) || (k > 0 && (e.h.eval_iter(&x, k)? - &base).norm() > 1e-6 * (1.0 + base.norm())) {
        if k >= e.k_max {
            return Err(FbError::NotInBasin(k));
        }
        v = g_eval(&t.nf, &v);
        k += 1;
        x = t.frame.from_local(&t.t_inv.eval_point(&v));
    }
    if k == 0 {
        return Ok(RiemannPoint {
            base: base.clone(),
            sheet: SheetId::trivial(),
            level: 0,
            psi_value: e.psi_eval(&base)?,
        });
    }
    let mut chain = vec![x];
    for _ in 0..k {
        let next = e.h.eval(chain.last().expect("nonempty"))?;
        chain.push(next);
    }
    chain.reverse();
    // chain[0] = h^k(x_k) is the base up to the Theta tolerance; use the
    // returned base so the labels describe branches at the stored point.
    chain[0] = base.clone();
    let inv = e.h.inverse.as_ref().ok_or(ContinuationError::NoInverseBranch)?;
    let mut labels = Vec::new();
    for i in 0..k {
        labels.extend(inv.labels_for(&chain[i], &chain[i + 1])?);
    }
    let moduli: Vec<u32> = (0..k).flat_map(|_| inv.family.moduli()).collect();
    let mut point = RiemannPoint {
        base,
        sheet: SheetId::new(labels, moduli),
        level: k,
        psi_value: Point::zeros(e.dim()),
    };
    point.psi_value = e.psi_eval_on_sheet(&point)?;
    Ok(point)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuation::BranchedMap;
    use num_complex::Complex64;
    use crate::poly::CPoly;
    use std::sync::Arc;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn koenigs() -> HoloMap {
        let germ = PolyMap::new(
            vec![CPoly::from_terms(1, [(vec![1], c(0.5, 0.0)), (vec![2], c(1.0, 0.0))])],
            10,
        )
        .unwrap();
        HoloMap {
            name: "koenigs".into(),
            dim: 1,
            forward: Arc::new(|x: &Point| Ok(x.map(|w| (-1.0 + (1.0 + 16.0 * w).sqrt()) / 4.0))),
            inverse: Some(Arc::new(BranchedMap::single_valued(1, Arc::new(|x: &Point| Ok(x.map(|z| z / 2.0 + z * z)))))),
            germ,
            fixed_point: Point::zeros(1),
        }
    }

    fn linear2() -> HoloMap {
        let a = CMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.0, 0.0), c(0.3, 0.0), c(0.4, 0.0)]);
        let a_inv = crate::linalg::invert(&a).unwrap();
        let a2 = a.clone();
        HoloMap {
            name: "linear".into(),
            dim: 2,
            forward: Arc::new(move |x: &Point| Ok(&a_inv * x)),
            inverse: Some(Arc::new(BranchedMap::single_valued(2, Arc::new(move |x: &Point| Ok(&a2 * x))))),
            germ: PolyMap::linear(&a, 6),
            fixed_point: Point::zeros(2),
        }
    }

    fn pt(z: Complex64) -> Point {
        Point::from_vec(vec![z])
    }

    /// `lim 2^k F^k(z)`, the Koenigs function of `z/2 + z^2`.
    fn koenigs_oracle(z: Complex64) -> Complex64 {
        let mut x = z;
        for _ in 0..60 {
            x = x / 2.0 + x * x;
        }
        x * 2f64.powi(60)
    }

    #[test]
    fn psi_fixes_origin() {
        let (e, t) = build_pipeline(koenigs(), 8).unwrap();
        assert_eq!(e.psi_eval(&Point::zeros(1)).unwrap()[0], c(0.0, 0.0));
        assert_eq!(t.theta_eval(&Point::zeros(1)).unwrap()[0], c(0.0, 0.0));
    }

    #[test]
    fn linear_map_gives_identity() {
        let (e, t) = build_pipeline(linear2(), 4).unwrap();
        let z = Point::from_vec(vec![c(0.01, 0.002), c(-0.003, 0.01)]);
        assert!(e.nbhd.contains(&z));
        assert!((e.psi_eval(&z).unwrap() - &z).norm() < 1e-12);
        let w = Point::from_vec(vec![c(0.7, 0.1), c(-0.2, 0.5)]);
        assert!((t.theta_eval(&w).unwrap() - &w).norm() < 1e-12);
        let r = functional_residuals(&e, &t, 10, 1).unwrap();
        assert!(r.max() < 1e-12, "{r:?}");
    }

    #[test]
    fn koenigs_matches_brute_force_oracle() {
        let (e, _) = build_pipeline(koenigs(), 10).unwrap();
        for z in [c(0.1, 0.0), c(0.05, 0.07), c(-0.12, 0.02)] {
            let got = e.psi_on_basin(&pt(z)).unwrap()[0];
            assert!((got - koenigs_oracle(z)).norm() < 1e-9, "z={z}");
        }
        let z = e.nbhd.from_scaled(&pt(c(0.5 * e.nbhd.rho, 0.0)));
        let (v, log) = e.psi_eval_logged(&z).unwrap();
        assert!((v[0] - koenigs_oracle(z[0])).norm() < 1e-12);
        assert!(!log.is_empty());
    }

    #[test]
    fn koenigs_residuals_small() {
        let (e, t) = build_pipeline(koenigs(), 8).unwrap();
        let r = functional_residuals(&e, &t, 20, 7).unwrap();
        assert!(r.max() < 1e-8, "{r:?}");
        assert!(r.to_text().contains("residual_conjugacy: "));
    }

    #[test]
    fn corrupted_t_breaks_conjugacy() {
        // A nonlinear perturbation of T does not change the limit (it is
        // conjugated away), but an offset at the fixed point does.
        let (mut e, t) = build_pipeline(koenigs(), 8).unwrap();
        e.nf.t.component_mut(0).add_term(crate::poly::MultiIndex::new(vec![0]), c(1e-3, 0.0));
        match functional_residuals(&e, &t, 20, 7) {
            Ok(r) => assert!(r.conjugacy > 1e-3, "{r:?}"),
            Err(err) => assert!(matches!(err, FbError::NoConvergence { .. }), "{err}"),
        }
    }

    #[test]
    fn derivative_at_fixed_point_is_identity() {
        let (e, _) = build_pipeline(koenigs(), 8).unwrap();
        let jac = e.psi_jacobian(&Point::zeros(1)).unwrap();
        assert!((jac[(0, 0)] - c(1.0, 0.0)).norm() < 1e-6);
    }

    #[test]
    fn single_valued_witness_round_trip() {
        let (e, t) = build_pipeline(koenigs(), 8).unwrap();
        let w0 = e.psi_eval(&Point::zeros(1)).unwrap();
        let x0 = surjectivity_witness(&e, &t, &w0).unwrap();
        assert_eq!(x0.level, 0);
        for w in [c(0.3, 0.2), c(-0.8, 0.1), c(0.0, -0.9)] {
            let x = surjectivity_witness(&e, &t, &pt(w)).unwrap();
            assert!((x.psi_value[0] - w).norm() < 1e-6, "w={w}");
        }
    }
}
