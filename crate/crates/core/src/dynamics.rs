//! Orbits, certified regularity neighborhoods and potential-basin membership.
//!
//! Membership of `p` in `Omega = U_k h^k(R)` is decided by pulling `p` back
//! with explicit inverse branches until the chain lands in `R`, then checking
//! (and if needed polishing with damped Newton) that `h^k(witness) = p`.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::continuation::{BranchedMap, MapFn};
use crate::linalg::{scaling_neighborhood, LinalgError, RegularityNbhd, DEFAULT_MARGIN};
use crate::poly::PolyMap;
use crate::{EvalError, Point};

pub const DEFAULT_K_MAX: usize = 60;
pub const DEFAULT_NEWTON_TOL: f64 = 1e-9;
/// Norm beyond which an orbit counts as divergent.
pub const ESCAPE_NORM: f64 = 1e100;
pub const BOUNDARY_SAMPLES: usize = 500;
pub const CONTRACTION_STEPS: usize = 10;
pub const DEFAULT_SEED: u64 = 0x5eed;
/// Smallest radius the dyadic sweep will certify.
pub const MIN_RHO: f64 = 1e-8;
/// Step for central finite differences.
pub const FD_STEP: f64 = 1e-5;
/// Log-branch labels `|k| <= LOG_WINDOW` are tried during pullback.
pub const LOG_WINDOW: i64 = 2;
const NEWTON_MAX_ITER: usize = 40;
const NEWTON_MAX_HALVINGS: usize = 30;
const LINEARIZED_ATTEMPTS: usize = 6;
/// Chains kept per level by the germ-chain search.
pub const BEAM_WIDTH: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("fixed point is not attracting for the inverse germ (spectral radius {0})")]
    NotAttracting(f64),
    #[error("degenerate neighborhood: no radius above {MIN_RHO:e} passes the contraction test")]
    DegenerateNeighborhood,
    #[error("{0}")]
    Linalg(LinalgError),
    #[error("inverse-branch iteration requested but the map has no inverse branch")]
    NoInverseBranch,
    #[error("invalid slice: {0}")]
    InvalidSlice(String),
}

impl From<LinalgError> for DynamicsError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::NotAttracting(r) => DynamicsError::NotAttracting(r),
            other => DynamicsError::Linalg(other),
        }
    }
}

/// A holomorphic map `h` with a repelling fixed point, its explicit inverse
/// branches, and the truncated germ `F(p + u) - p` of `F = [h|_R]^{-1}`.
#[derive(Clone)]
pub struct HoloMap {
    pub name: String,
    pub dim: usize,
    pub forward: MapFn,
    pub inverse: Option<Arc<BranchedMap>>,
    pub germ: PolyMap,
    pub fixed_point: Point,
}

impl std::fmt::Debug for HoloMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HoloMap")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("inverse", &self.inverse)
            .field("germ_order", &self.germ.order())
            .field("fixed_point", &self.fixed_point)
            .finish()
    }
}

fn escape_check(p: Point) -> Result<Point, EvalError> {
    let p = crate::finite(p)?;
    let n = p.norm();
    if n > ESCAPE_NORM {
        Err(EvalError::Escaped(n))
    } else {
        Ok(p)
    }
}

impl HoloMap {
    /// `h(x)`.
    pub fn eval(&self, x: &Point) -> Result<Point, EvalError> {
        escape_check((self.forward)(x)?)
    }

    /// `h^k(x)`.
    pub fn eval_iter(&self, x: &Point, k: usize) -> Result<Point, EvalError> {
        let mut y = x.clone();
        for _ in 0..k {
            y = self.eval(&y)?;
        }
        Ok(y)
    }

    /// `F(x)` on the principal branch, falling back to the truncated germ
    /// when no explicit inverse is available.
    pub fn inverse_principal(&self, x: &Point) -> Result<Point, EvalError> {
        match &self.inverse {
            Some(inv) => escape_check(inv.eval_principal(x)?),
            None => {
                let u = x - &self.fixed_point;
                escape_check(&self.fixed_point + self.germ.eval_point(&u))
            }
        }
    }

    /// `F` on the branch with the given labels.
    pub fn inverse_branch(&self, labels: &[i64], x: &Point) -> Result<Point, EvalError> {
        match &self.inverse {
            Some(inv) => escape_check(inv.eval(labels, x)?),
            None => Err(EvalError::OutsideDomain("no inverse branch".into())),
        }
    }

    /// `|h(p) - p|`.
    pub fn fixed_point_defect(&self) -> Result<f64, EvalError> {
        Ok((self.eval(&self.fixed_point)? - &self.fixed_point).norm())
    }

    /// Largest disagreement between the germ's linear and quadratic parts and
    /// central finite differences of the principal inverse at the fixed
    /// point, over a few complex directions.
    pub fn germ_defect(&self) -> Result<f64, EvalError> {
        let s = 1e-4;
        let n = self.dim;
        let lin = self.germ.linear_part();
        let quad = self.germ.homogeneous(2);
        let p = &self.fixed_point;
        let mut worst = 0.0f64;
        for d in probe_units(n) {
            let plus = self.inverse_principal(&(p + &d * Complex64::new(s, 0.0)))? - p;
            let minus = self.inverse_principal(&(p - &d * Complex64::new(s, 0.0)))? - p;
            let first = (&plus - &minus) / Complex64::new(2.0 * s, 0.0);
            let second = (&plus + &minus) / Complex64::new(2.0 * s * s, 0.0);
            worst = worst.max((first - &lin * &d).norm());
            worst = worst.max((second - quad.eval_point(&d)).norm());
        }
        Ok(worst)
    }
}

/// Coordinate axes plus a few mixed complex unit directions.
pub(crate) fn probe_units(n: usize) -> Vec<Point> {
    let mut out = Vec::new();
    for i in 0..n {
        let mut e = Point::zeros(n);
        e[i] = Complex64::new(1.0, 0.0);
        out.push(e);
    }
    for k in 0..3 {
        let v = Point::from_fn(n, |j, _| Complex64::from_polar(1.0, 0.9 * (k + 1) as f64 + 1.3 * j as f64));
        let norm = v.norm();
        out.push(v / Complex64::new(norm, 0.0));
    }
    out
}

/// Seeded uniform samples on the unit sphere of `C^n`.
pub fn sphere_samples(n: usize, count: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v = Point::from_fn(n, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let r = v.norm();
        if r > 1e-3 && r <= 1.0 {
            out.push(v / Complex64::new(r, 0.0));
        }
    }
    out
}

/// Seeded uniform samples in the ball of radius `radius` in `C^n`.
pub fn ball_samples(n: usize, count: usize, radius: f64, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v = Point::from_fn(n, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        if v.norm() < 1.0 {
            out.push(v * Complex64::new(radius, 0.0));
        }
    }
    out
}

/// Number of boundary samples of `R` (scaled radius `rho`) violating
/// `F^n(x) ∈ alpha^n R` for some `n <= steps`.
pub fn contraction_violations(f: &HoloMap, nbhd: &RegularityNbhd, rho: f64, samples: usize, steps: usize, seed: u64) -> usize {
    sphere_samples(nbhd.dim(), samples, seed)
        .iter()
        .filter(|u| {
            let mut x = nbhd.from_scaled(&(*u * Complex64::new(rho, 0.0)));
            let mut bound = rho;
            for _ in 0..steps {
                bound *= nbhd.alpha;
                match f.inverse_principal(&x) {
                    Ok(y) if nbhd.scaled_norm(&y) < bound => x = y,
                    _ => return true,
                }
            }
            false
        })
        .count()
}

/// Certifies `R`: the frame and `eps` come from the linear part of the germ,
/// `rho` is the largest dyadic radius whose sampled boundary contracts by
/// `alpha` for `n = 1..10` steps.
pub fn find_regularity_neighborhood(f: &HoloMap) -> Result<RegularityNbhd, DynamicsError> {
    find_regularity_neighborhood_with(f, BOUNDARY_SAMPLES, DEFAULT_SEED)
}

pub fn find_regularity_neighborhood_with(f: &HoloMap, samples: usize, seed: u64) -> Result<RegularityNbhd, DynamicsError> {
    let mut nbhd = scaling_neighborhood(&f.germ.linear_part(), DEFAULT_MARGIN)?;
    nbhd.center = f.fixed_point.clone();
    let mut rho = 1.0;
    while rho >= MIN_RHO {
        if contraction_violations(f, &nbhd, rho, samples, CONTRACTION_STEPS, seed) == 0 {
            nbhd.rho = rho;
            return Ok(nbhd);
        }
        rho *= 0.5;
    }
    Err(DynamicsError::DegenerateNeighborhood)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    InverseBranch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrbitRecord {
    pub points: Vec<Point>,
    pub entered_r_at: Option<usize>,
    pub scaled_norms: Vec<f64>,
    /// The orbit overflowed or hit a singularity before `n` steps.
    pub diverged: bool,
}

/// Orbit of length `n + 1` under `h` or under the principal inverse branch.
pub fn iterate(f: &HoloMap, nbhd: &RegularityNbhd, z: &Point, n: usize, direction: Direction) -> Result<OrbitRecord, DynamicsError> {
    if direction == Direction::InverseBranch && f.inverse.is_none() {
        return Err(DynamicsError::NoInverseBranch);
    }
    let mut points = vec![z.clone()];
    let mut scaled_norms = vec![nbhd.scaled_norm(z)];
    let mut diverged = false;
    for _ in 0..n {
        let cur = points.last().expect("nonempty");
        let next = match direction {
            Direction::Forward => f.eval(cur),
            Direction::InverseBranch => f.inverse_principal(cur),
        };
        match next {
            Ok(y) => {
                scaled_norms.push(nbhd.scaled_norm(&y));
                points.push(y);
            }
            Err(_) => {
                diverged = true;
                break;
            }
        }
    }
    let entered_r_at = scaled_norms.iter().position(|&s| s < nbhd.rho);
    Ok(OrbitRecord {
        points,
        entered_r_at,
        scaled_norms,
        diverged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Membership {
    /// `h^level(witness) = p` with `witness ∈ R`; `labels` are the branch
    /// labels of the pullback chain, level-major.
    Member { level: usize, witness: Point, labels: Vec<i64> },
    NonMember { reason: String },
    /// Undecided: Newton stagnated or `k_max` ran out without divergence.
    Unknown { reason: String },
}

impl Membership {
    pub fn is_member(&self) -> bool {
        matches!(self, Membership::Member { .. })
    }

    pub fn is_non_member(&self) -> bool {
        matches!(self, Membership::NonMember { .. })
    }

    pub fn level(&self) -> Option<usize> {
        match self {
            Membership::Member { level, .. } => Some(*level),
            _ => None,
        }
    }

    pub fn witness(&self) -> Option<&Point> {
        match self {
            Membership::Member { witness, .. } => Some(witness),
            _ => None,
        }
    }
}

/// Jacobian of `h` at `x` by central differences.
pub fn jacobian_fd(g: &dyn Fn(&Point) -> Result<Point, EvalError>, x: &Point) -> Result<DMatrix<Complex64>, EvalError> {
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += FD_STEP;
        xm[j] -= FD_STEP;
        let col = (g(&xp)? - g(&xm)?) / Complex64::new(2.0 * FD_STEP, 0.0);
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// Damped Newton for `h^k(x) = p` from `x0`, with the chain-rule Jacobian.
/// `None` on stagnation or a singular Jacobian.
pub fn newton_refine(h: &HoloMap, k: usize, x0: &Point, p: &Point, tol: f64) -> Option<Point> {
    let target = tol * (1.0 + p.norm());
    let residual = |x: &Point| -> Option<f64> { h.eval_iter(x, k).ok().map(|y| (y - p).norm()) };
    let mut x = x0.clone();
    let mut res = residual(&x)?;
    for _ in 0..NEWTON_MAX_ITER {
        if res <= target {
            return Some(x);
        }
        let mut jac = DMatrix::<Complex64>::identity(x.len(), x.len());
        let mut y = x.clone();
        for _ in 0..k {
            jac = jacobian_fd(&|z| h.eval(z), &y).ok()? * jac;
            y = h.eval(&y).ok()?;
        }
        let step = jac.lu().solve(&(p - &y))?;
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..NEWTON_MAX_HALVINGS {
            let cand = &x + &step * Complex64::new(t, 0.0);
            if let Some(r) = residual(&cand) {
                if r < res {
                    x = cand;
                    res = r;
                    improved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !improved {
            return None;
        }
    }
    (res <= target).then_some(x)
}

fn accept_witness(h: &HoloMap, nbhd: &RegularityNbhd, p: &Point, x: Point, level: usize, labels: Vec<i64>, tol: f64) -> Membership {
    let target = tol * (1.0 + p.norm());
    let ok = h.eval_iter(&x, level).map(|y| (y - p).norm() <= target).unwrap_or(false);
    let witness = if ok {
        Some(x)
    } else {
        newton_refine(h, level, &x, p, tol).filter(|w| nbhd.contains(w))
    };
    match witness {
        Some(witness) => Membership::Member { level, witness, labels },
        None => Membership::Unknown {
            reason: format!("Newton stagnated at level {level}"),
        },
    }
}

/// Decides whether `p ∈ U_{k <= k_max} h^k(R)`.
///
/// The pullback tries the principal branch first and then neighboring labels.
/// `NonMember` is reported only for definitive failures: every branch is
/// singular or escapes at the first step, or a single-valued inverse orbit
/// escapes.
pub fn basin_membership(h: &HoloMap, nbhd: &RegularityNbhd, p: &Point, k_max: usize, newton_tol: f64) -> Membership {
    if nbhd.contains(p) {
        return Membership::Member {
            level: 0,
            witness: p.clone(),
            labels: Vec::new(),
        };
    }
    let inv = match &h.inverse {
        Some(inv) => inv.clone(),
        None => return linearized_membership(h, nbhd, p, k_max, newton_tol),
    };
    let single_valued = inv.num_generators() == 0;
    let candidates = inv.family.candidate_labels(LOG_WINDOW);
    let mut x = p.clone();
    let mut labels = Vec::new();
    for level in 1..=k_max {
        let mut next = None;
        let mut all_singular = true;
        for c in &candidates {
            match h.inverse_branch(c, &x) {
                Ok(y) => {
                    next = Some((c, y));
                    break;
                }
                Err(EvalError::Singular(_)) => {}
                Err(_) => all_singular = false,
            }
        }
        let Some((c, y)) = next else {
            if single_valued || level == 1 {
                let why = if all_singular { "branch point" } else { "escape" };
                return Membership::NonMember {
                    reason: format!("every inverse branch fails at level {level} ({why})"),
                };
            }
            return Membership::Unknown {
                reason: format!("pullback chain broke at level {level}"),
            };
        };
        labels.extend_from_slice(c);
        if nbhd.contains(&y) {
            return accept_witness(h, nbhd, p, y, level, labels, newton_tol);
        }
        x = y;
    }
    Membership::Unknown {
        reason: format!("no entry into R within {k_max} pullbacks"),
    }
}

/// Pullback search that keeps the `BEAM_WIDTH` chains whose heads have the
/// smallest scaled norm, expanding every candidate branch at each level.
fn beam_search<T>(
    h: &HoloMap,
    nbhd: &RegularityNbhd,
    p: &Point,
    candidates: &[Vec<i64>],
    k_max: usize,
    step_tol: Option<f64>,
    accept: impl Fn(&Point, usize, &[i64]) -> Option<T>,
) -> Option<T> {
    let mut beam: Vec<(Point, Vec<i64>)> = vec![(p.clone(), Vec::new())];
    for level in 1..=k_max {
        let mut next: Vec<(f64, Point, Vec<i64>)> = Vec::new();
        for (x, labels) in &beam {
            for c in candidates {
                let Ok(y) = h.inverse_branch(c, x) else { continue };
                if let Some(tol) = step_tol {
                    let ok = h.eval(&y).map(|hy| (hy - x).norm() <= tol * (1.0 + x.norm())).unwrap_or(false);
                    if !ok {
                        continue;
                    }
                }
                let mut l = labels.clone();
                l.extend_from_slice(c);
                next.push((nbhd.scaled_norm(&y), y, l));
            }
        }
        next.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (_, y, l) in next.iter().filter(|(_, y, _)| nbhd.contains(y)) {
            if let Some(found) = accept(y, level, l) {
                return Some(found);
            }
        }
        next.dedup_by(|a, b| (&a.1 - &b.1).norm() <= 1e-12 * (1.0 + b.1.norm()));
        next.truncate(BEAM_WIDTH);
        if next.is_empty() {
            return None;
        }
        beam = next.into_iter().map(|(_, y, l)| (y, l)).collect();
    }
    None
}

/// A germ chain from `p` into `R`: labels of inverse branches
/// `x_{j+1} = F(x_j)` with every link verified locally,
/// `||h(x_{j+1}) - x_j|| <= tol (1 + ||x_j||)`. Unlike [`basin_membership`], the end point is not checked
/// against `p` through `h^k`, whose derivative amplifies roundoff. Returns
/// the chain length and the concatenated labels.
pub fn germ_chain(h: &HoloMap, nbhd: &RegularityNbhd, p: &Point, k_max: usize, tol: f64) -> Option<(usize, Vec<i64>)> {
    if nbhd.contains(p) {
        return Some((0, Vec::new()));
    }
    let inv = h.inverse.as_ref()?;
    let candidates = inv.family.candidate_labels(LOG_WINDOW);
    beam_search(h, nbhd, p, &candidates, k_max, Some(tol), |_, level, labels| Some((level, labels.to_vec())))
}

/// Membership without explicit inverse branches: Newton on `h^k` seeded by
/// the linearized pullback `p* + A^k (p - p*)`.
fn linearized_membership(h: &HoloMap, nbhd: &RegularityNbhd, p: &Point, k_max: usize, tol: f64) -> Membership {
    let a = h.germ.linear_part();
    let mut u = p - &h.fixed_point;
    let mut tried = 0;
    for level in 1..=k_max {
        u = &a * u;
        let seed = &h.fixed_point + &u;
        if !nbhd.contains(&seed) {
            continue;
        }
        if let Some(witness) = newton_refine(h, level, &seed, p, tol).filter(|w| nbhd.contains(w)) {
            return Membership::Member {
                level,
                witness,
                labels: Vec::new(),
            };
        }
        // Deeper seeds sit closer to the fixed point, where the linearization
        // is more accurate.
        tried += 1;
        if tried >= LINEARIZED_ATTEMPTS {
            return Membership::Unknown {
                reason: format!("Newton stagnated up to level {level}"),
            };
        }
    }
    Membership::Unknown {
        reason: format!("linearized pullback did not reach R within {k_max} steps"),
    }
}

/// A witness at exactly `level`: a lower-level witness pushed further into
/// `R` by the principal inverse branch.
pub fn member_at_level(h: &HoloMap, nbhd: &RegularityNbhd, p: &Point, level: usize, newton_tol: f64) -> Option<Point> {
    let (k, mut x) = match basin_membership(h, nbhd, p, level, newton_tol) {
        Membership::Member { level: k, witness, .. } => (k, witness),
        _ => return None,
    };
    for _ in k..level {
        x = h.inverse_principal(&x).ok()?;
    }
    let ok = nbhd.contains(&x) && h.eval_iter(&x, level).ok().is_some_and(|y| (y - p).norm() <= 10.0 * newton_tol * (1.0 + p.norm()));
    ok.then_some(x)
}

/// An affine complex line `origin + s u + t v` with real parameters on the
/// window `[s0, s1] x [t0, t1]`, sampled with inclusive endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSpec {
    pub origin: Point,
    pub u: Point,
    pub v: Point,
    pub window: [f64; 4],
    pub resolution: usize,
}

pub const MAX_RESOLUTION: usize = 4096;

impl SliceSpec {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let [s0, s1, t0, t1] = self.window;
        if self.resolution < 2 || self.resolution > MAX_RESOLUTION {
            return Err(DynamicsError::InvalidSlice(format!(
                "resolution {} outside 2..={MAX_RESOLUTION}",
                self.resolution
            )));
        }
        if !(s1 > s0 && t1 > t0) || !self.window.iter().all(|x| x.is_finite()) {
            return Err(DynamicsError::InvalidSlice("window has zero area".into()));
        }
        if self.u.len() != self.origin.len() || self.v.len() != self.origin.len() {
            return Err(DynamicsError::InvalidSlice("dimension mismatch".into()));
        }
        // u and v must span a real 2-plane.
        let uu = self.u.norm_squared();
        let vv = self.v.norm_squared();
        let uv = self.u.iter().zip(self.v.iter()).map(|(a, b)| (a.conj() * b).re).sum::<f64>();
        if uu * vv - uv * uv <= 1e-24 * (1.0 + uu * vv) {
            return Err(DynamicsError::InvalidSlice("spanning vectors are degenerate".into()));
        }
        Ok(())
    }

    /// Parameters of pixel column `i`, row `j`.
    pub fn params(&self, i: usize, j: usize) -> (f64, f64) {
        let [s0, s1, t0, t1] = self.window;
        let d = (self.resolution - 1) as f64;
        (s0 + i as f64 * (s1 - s0) / d, t0 + j as f64 * (t1 - t0) / d)
    }

    pub fn point(&self, i: usize, j: usize) -> Point {
        let (s, t) = self.params(i, j);
        &self.origin + &self.u * Complex64::new(s, 0.0) + &self.v * Complex64::new(t, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PixelClass {
    Member(u32),
    NonMember,
    Unknown,
}

impl From<&Membership> for PixelClass {
    fn from(m: &Membership) -> Self {
        match m {
            Membership::Member { level, .. } => PixelClass::Member(*level as u32),
            Membership::NonMember { .. } => PixelClass::NonMember,
            Membership::Unknown { .. } => PixelClass::Unknown,
        }
    }
}

/// Row-major classification, row `j` at parameter `t0 + j dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<PixelClass>,
}

impl Raster {
    pub fn get(&self, i: usize, j: usize) -> PixelClass {
        self.pixels[j * self.width + i]
    }
}

/// Classifies every pixel of the slice in parallel on the current rayon pool.
pub fn classify_grid(h: &HoloMap, nbhd: &RegularityNbhd, slice: &SliceSpec, k_max: usize) -> Result<Raster, DynamicsError> {
    slice.validate()?;
    let res = slice.resolution;
    let pixels = (0..res * res)
        .into_par_iter()
        .map(|idx| {
            let p = slice.point(idx % res, idx / res);
            PixelClass::from(&basin_membership(h, nbhd, &p, k_max, DEFAULT_NEWTON_TOL))
        })
        .collect();
    Ok(Raster {
        width: res,
        height: res,
        pixels,
    })
}
