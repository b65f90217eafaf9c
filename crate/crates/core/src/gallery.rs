//! Configured example maps.
//!
//! * `koenigs1d`: `F(z) = z/2 + z^2`, `h` its principal inverse.
//! * `resonant2d`: `F(z) = (z1/2, z2/4 + z1^2)`, which carries the resonance
//!   `lambda_2 = lambda_1^2`.
//! * `henon_fb`: the quadratic automorphism `P(x, y) = (y, -delta x + tau y + c y^2)`
//!   with an attracting fixed point at the origin; `h = P^{-1}`. Its basin is
//!   a Fatou-Bieberbach domain and `Theta` maps `C^2` onto it.
//! * `exp_regular`: `h = E ∘ (2 chi)` with `E(u, v) = (e^u - 1, v)` and
//!   `chi = Theta_P` from `henon_fb`. The first coordinate of `h` never equals
//!   `-1`, so the potential basin is a proper subset of `C^2`; the inverse
//!   branches are labelled by the logarithm.
//! * `power_cover(n)`: `h(z, w) = H(z^n, w)` with `H(y) = p + L P^{-1}(L^{-1}(y - p))`
//!   and `p = (1, 0)`; the inverse branches are labelled by `n`-th roots.

use std::f64::consts::TAU;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use thiserror::Error;

use crate::continuation::{BranchFamily, BranchedMap, Generator};
use crate::dynamics::{HoloMap, SliceSpec};
use crate::fb_map::{build_pipeline, FbError, FbMapEvaluator, ThetaEvaluator};
use crate::poly::{map_compose, CPoly, PolyError, PolyMap};
use crate::verify::Report;
use crate::{CMatrix, EvalError, Point};

pub const EXAMPLE_NAMES: [&str; 5] = ["koenigs1d", "resonant2d", "henon_fb", "exp_regular", "power_cover"];

/// Parameters of the quadratic automorphism `P`.
pub const HENON_DELTA: f64 = 0.3;
pub const HENON_TAU: f64 = 1.0;
pub const HENON_C: f64 = 0.1;
/// Normal-form order of the `P` pipeline used inside `exp_regular`.
pub const HENON_ORDER: u32 = 10;
/// Truncation order of the stored germs.
pub const GERM_ORDER: u32 = 10;
/// `exp_regular`'s germ is only exact up to `HENON_ORDER - 1`.
pub const EXP_GERM_ORDER: u32 = 8;
pub const DEFAULT_POWER: u32 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GalleryError {
    #[error("unknown example '{0}' (known: koenigs1d, resonant2d, henon_fb, exp_regular, power_cover[:n])")]
    UnknownExample(String),
    #[error("power_cover needs n >= 2, got {0}")]
    BadPower(u32),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Pipeline(#[from] FbError),
}

/// Machine-checkable expectations attached to an example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Property {
    /// The Poincaré-Dulac residual vanishes to the example's order.
    PdResidual,
    /// `Psi` and `Theta` satisfy their functional equations.
    FunctionalEquations,
    /// Sampled points of a known excluded set are non-members.
    BasinProper,
    /// Fibers over generic points have exactly this many sheets.
    Sheets(u32),
    /// A loop around the logarithm's branch locus shifts the label by one.
    LogSheeting,
    /// Sampled root loops have cyclic monodromy and sheets are compatible.
    StronglyRegularSample,
}

impl Property {
    pub fn flag(&self) -> String {
        match self {
            Property::PdResidual => "pd-residual".into(),
            Property::FunctionalEquations => "functional-equations".into(),
            Property::BasinProper => "basin-proper".into(),
            Property::Sheets(n) => format!("sheets={n}"),
            Property::LogSheeting => "log-sheeting".into(),
            Property::StronglyRegularSample => "strongly-regular-sample".into(),
        }
    }
}

pub type LoopFn = Arc<dyn Fn(i32, usize) -> Vec<Point> + Send + Sync>;

#[derive(Clone)]
pub struct ExampleSpec {
    pub name: String,
    pub dimension: usize,
    pub h: HoloMap,
    pub generators: BranchFamily,
    pub properties: Vec<Property>,
    /// Normal-form order used by the checks.
    pub nf_order: u32,
    /// Default render slice.
    pub slice: SliceSpec,
    /// Closed loop around the branch locus traversed `turns` times, in
    /// `segments` pieces per turn; starts and ends at a point where the
    /// principal branch is regular.
    pub branch_loop: Option<LoopFn>,
    /// Points known to lie outside the potential basin.
    pub excluded: Option<Arc<dyn Fn(usize, u64) -> Vec<Point> + Send + Sync>>,
}

impl std::fmt::Debug for ExampleSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExampleSpec")
            .field("name", &self.name)
            .field("dimension", &self.dimension)
            .field("generators", &self.generators)
            .field("properties", &self.properties)
            .finish()
    }
}

impl ExampleSpec {
    pub fn has(&self, p: Property) -> bool {
        self.properties.contains(&p)
    }

    /// The `key = value` description used by config files.
    pub fn to_config(&self) -> String {
        let flags: Vec<String> = self.properties.iter().map(|p| format!("\"{}\"", p.flag())).collect();
        format!(
            "example = \"{}\"\ndimension = {}\nm = {}\nproperties = [{}]\n",
            self.name,
            self.dimension,
            self.nf_order,
            flags.join(", ")
        )
    }
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn p2(a: Complex64, b: Complex64) -> Point {
    Point::from_vec(vec![a, b])
}

fn default_slice(dim: usize) -> SliceSpec {
    let mut u = Point::zeros(dim);
    u[0] = c(1.0);
    let mut v = Point::zeros(dim);
    if dim == 1 {
        v[0] = Complex64::new(0.0, 1.0);
    } else {
        v[1] = c(1.0);
    }
    SliceSpec {
        origin: Point::zeros(dim),
        u,
        v,
        window: [-2.0, 2.0, -2.0, 2.0],
        resolution: 256,
    }
}

/// Looks up an example; `power_cover:n` selects the covering degree.
pub fn get_example(name: &str) -> Result<ExampleSpec, GalleryError> {
    match name {
        "koenigs1d" => Ok(koenigs1d()),
        "resonant2d" => Ok(resonant2d()),
        "henon_fb" => Ok(henon_fb()),
        "exp_regular" => exp_regular(),
        "power_cover" => power_cover(DEFAULT_POWER),
        other => match other.strip_prefix("power_cover:").map(str::parse::<u32>) {
            Some(Ok(n)) => power_cover(n),
            _ => Err(GalleryError::UnknownExample(name.to_string())),
        },
    }
}

pub fn koenigs1d() -> ExampleSpec {
    let germ = PolyMap::new(vec![CPoly::from_terms(1, [(vec![1], c(0.5)), (vec![2], c(1.0))])], GERM_ORDER).expect("valid germ");
    let h = HoloMap {
        name: "koenigs1d".into(),
        dim: 1,
        forward: Arc::new(|x: &Point| Ok(x.map(|w| (-1.0 + (1.0 + 16.0 * w).sqrt()) / 4.0))),
        inverse: Some(Arc::new(BranchedMap::single_valued(1, Arc::new(|x: &Point| Ok(x.map(|z| z / 2.0 + z * z)))))),
        germ,
        fixed_point: Point::zeros(1),
    };
    ExampleSpec {
        name: "koenigs1d".into(),
        dimension: 1,
        generators: BranchFamily::trivial(1),
        h,
        properties: vec![Property::PdResidual, Property::FunctionalEquations],
        nf_order: 6,
        slice: SliceSpec {
            window: [-0.5, 0.5, -0.5, 0.5],
            ..default_slice(1)
        },
        branch_loop: None,
        excluded: None,
    }
}

pub fn resonant2d() -> ExampleSpec {
    let germ = PolyMap::new(
        vec![
            CPoly::from_terms(2, [(vec![1, 0], c(0.5))]),
            CPoly::from_terms(2, [(vec![0, 1], c(0.25)), (vec![2, 0], c(1.0))]),
        ],
        GERM_ORDER,
    )
    .expect("valid germ");
    let f = germ.clone();
    let h = HoloMap {
        name: "resonant2d".into(),
        dim: 2,
        forward: Arc::new(|x: &Point| Ok(p2(2.0 * x[0], 4.0 * x[1] - 16.0 * x[0] * x[0]))),
        inverse: Some(Arc::new(BranchedMap::single_valued(2, Arc::new(move |x: &Point| Ok(f.eval_point(x)))))),
        germ,
        fixed_point: Point::zeros(2),
    };
    ExampleSpec {
        name: "resonant2d".into(),
        dimension: 2,
        generators: BranchFamily::trivial(2),
        h,
        properties: vec![Property::PdResidual, Property::FunctionalEquations],
        nf_order: 4,
        slice: default_slice(2),
        branch_loop: None,
        excluded: None,
    }
}

/// `P(x, y) = (y, -delta x + tau y + c y^2)`.
pub fn henon(x: &Point) -> Point {
    p2(x[1], -HENON_DELTA * x[0] + HENON_TAU * x[1] + HENON_C * x[1] * x[1])
}

/// `P^{-1}(X, Y) = ((tau X + c X^2 - Y) / delta, X)`.
pub fn henon_inverse(x: &Point) -> Point {
    p2((HENON_TAU * x[0] + HENON_C * x[0] * x[0] - x[1]) / HENON_DELTA, x[0])
}

fn henon_germ(order: u32) -> PolyMap {
    PolyMap::new(
        vec![
            CPoly::from_terms(2, [(vec![0, 1], c(1.0))]),
            CPoly::from_terms(2, [(vec![1, 0], c(-HENON_DELTA)), (vec![0, 1], c(HENON_TAU)), (vec![0, 2], c(HENON_C))]),
        ],
        order,
    )
    .expect("valid germ")
}

fn henon_holomap() -> HoloMap {
    HoloMap {
        name: "henon_fb".into(),
        dim: 2,
        forward: Arc::new(|x: &Point| Ok(henon_inverse(x))),
        inverse: Some(Arc::new(BranchedMap::single_valued(2, Arc::new(|x: &Point| Ok(henon(x)))))),
        germ: henon_germ(GERM_ORDER),
        fixed_point: Point::zeros(2),
    }
}

pub fn henon_fb() -> ExampleSpec {
    ExampleSpec {
        name: "henon_fb".into(),
        dimension: 2,
        generators: BranchFamily::trivial(2),
        h: henon_holomap(),
        properties: vec![Property::PdResidual, Property::FunctionalEquations],
        nf_order: 8,
        slice: SliceSpec {
            window: [-6.0, 6.0, -6.0, 6.0],
            ..default_slice(2)
        },
        branch_loop: None,
        excluded: None,
    }
}

/// The `Psi`/`Theta` pipeline of `P`, built once.
pub fn henon_pipeline() -> Result<&'static (FbMapEvaluator, ThetaEvaluator), GalleryError> {
    static CELL: OnceLock<Result<(FbMapEvaluator, ThetaEvaluator), FbError>> = OnceLock::new();
    CELL.get_or_init(|| build_pipeline(henon_holomap(), HENON_ORDER))
        .as_ref()
        .map_err(|e| GalleryError::Pipeline(e.clone()))
}

/// Power series of `log(1 + s)` in the first coordinate, identity in the rest.
fn log1p_map(dim: usize, order: u32) -> PolyMap {
    let mut comps: Vec<CPoly> = (0..dim).map(|i| CPoly::var(dim, i)).collect();
    let mut log = CPoly::zero(dim);
    for k in 1..=order {
        let mut e = vec![0; dim];
        e[0] = k;
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        log.add_term(crate::poly::MultiIndex::new(e), c(sign / k as f64));
    }
    comps[0] = log;
    PolyMap::new(comps, order).expect("valid series")
}

/// `(1 + s)^(1/n) - 1` in the first coordinate, identity in the rest.
fn root1p_map(dim: usize, n: u32, order: u32) -> PolyMap {
    let mut comps: Vec<CPoly> = (0..dim).map(|i| CPoly::var(dim, i)).collect();
    let a = 1.0 / n as f64;
    let mut series = CPoly::zero(dim);
    let mut binom = 1.0;
    for k in 1..=order {
        binom *= (a - (k - 1) as f64) / k as f64;
        let mut e = vec![0; dim];
        e[0] = k;
        series.add_term(crate::poly::MultiIndex::new(e), c(binom));
    }
    comps[0] = series;
    PolyMap::new(comps, order).expect("valid series")
}

pub fn exp_regular() -> Result<ExampleSpec, GalleryError> {
    let (psi_p, theta_p) = henon_pipeline()?;
    let psi_p: &'static FbMapEvaluator = psi_p;
    let theta_p: &'static ThetaEvaluator = theta_p;

    let forward = Arc::new(move |x: &Point| -> Result<Point, EvalError> {
        let y = theta_p.theta_eval(x)?;
        let u = y * c(2.0);
        crate::finite(p2(u[0].exp() - 1.0, u[1]))
    });
    let inverse = BranchedMap {
        pre: Some(Arc::new(|y: &Point| Ok(p2(y[0] + 1.0, y[1])))),
        family: BranchFamily::new(vec![Generator::Log, Generator::Identity]),
        post: Some(Arc::new(move |s: &Point| Ok(psi_p.psi_on_basin(&(s * c(0.5)))?))),
        post_inverse: Some(Arc::new(move |x: &Point| Ok(theta_p.theta_eval(x)? * c(2.0)))),
    };

    // F = Psi_P((log(1 + y1), y2) / 2), and Psi_P agrees with q T_P q* to
    // the normal form's order.
    let order = EXP_GERM_ORDER;
    let q = &psi_p.nbhd.frame;
    let psi_germ = map_compose(
        &PolyMap::linear(q, order),
        &map_compose(&psi_p.nf.t.with_order(order), &PolyMap::linear(&q.adjoint(), order), order)?,
        order,
    )?;
    let half_log = log1p_map(2, order).scale(c(0.5));
    let germ = map_compose(&psi_germ, &half_log, order)?;

    let h = HoloMap {
        name: "exp_regular".into(),
        dim: 2,
        forward,
        inverse: Some(Arc::new(inverse)),
        germ,
        fixed_point: Point::zeros(2),
    };
    let branch_loop: LoopFn = Arc::new(|turns, segments| {
        crate::continuation::circle_loop(&p2(c(1.0), c(0.0)), 0, c(-1.0), 2.0, 0.0, turns, segments)
    });
    let excluded = Arc::new(|count: usize, seed: u64| {
        crate::dynamics::ball_samples(1, count, 3.0, seed)
            .into_iter()
            .map(|z| p2(c(-1.0), z[0]))
            .collect()
    });
    Ok(ExampleSpec {
        name: "exp_regular".into(),
        dimension: 2,
        generators: BranchFamily::new(vec![Generator::Log, Generator::Identity]),
        h,
        properties: vec![Property::PdResidual, Property::BasinProper, Property::LogSheeting],
        nf_order: 6,
        // Step 1/64 in both directions so the excluded line z1 = -1 is a
        // pixel column.
        slice: SliceSpec {
            window: [-2.5, 1.484375, -2.0, 1.984375],
            ..default_slice(2)
        },
        branch_loop: Some(branch_loop),
        excluded: Some(excluded),
    })
}

/// Shear `L = [[1, 0], [s, 1]]` that makes the covering map's linear part
/// trace-free, so its eigenvalues `±i sqrt(delta / n)` are non-resonant.
pub fn power_cover_shear(n: u32) -> f64 {
    -HENON_TAU * n as f64 / (n as f64 - 1.0)
}

pub fn power_cover(n: u32) -> Result<ExampleSpec, GalleryError> {
    if n < 2 {
        return Err(GalleryError::BadPower(n));
    }
    let s = power_cover_shear(n);
    let p = p2(c(1.0), c(0.0));
    let l = move |v: &Point| p2(v[0], s * v[0] + v[1]);
    let l_inv = move |v: &Point| p2(v[0], v[1] - s * v[0]);
    let pc = p.clone();
    // H(y) = p + L P^{-1}(L^{-1}(y - p)) and its inverse Q.
    let big_h = Arc::new(move |y: &Point| &pc + l(&henon_inverse(&l_inv(&(y - &pc)))));
    let pc = p.clone();
    let big_q = move |y: &Point| &pc + l(&henon(&l_inv(&(y - &pc))));

    let hh = big_h.clone();
    let nn = n as i32;
    let forward = Arc::new(move |x: &Point| Ok(hh(&p2(x[0].powi(nn), x[1]))));
    let inverse = BranchedMap {
        pre: Some(Arc::new(move |y: &Point| Ok(big_q(y)))),
        family: BranchFamily::new(vec![Generator::Root(n), Generator::Identity]),
        post: None,
        post_inverse: None,
    };

    let order = GERM_ORDER;
    let lm = CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(s), c(1.0)]);
    let lm_inv = CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(-s), c(1.0)]);
    let inner = map_compose(
        &PolyMap::linear(&lm, order),
        &map_compose(&henon_germ(order), &PolyMap::linear(&lm_inv, order), order)?,
        order,
    )?;
    let germ = map_compose(&root1p_map(2, n, order), &inner, order)?;

    let h = HoloMap {
        name: format!("power_cover:{n}"),
        dim: 2,
        forward,
        inverse: Some(Arc::new(inverse)),
        germ,
        fixed_point: p.clone(),
    };
    let hl = big_h.clone();
    let branch_loop: LoopFn = Arc::new(move |turns, segments| {
        let total = segments * turns.unsigned_abs() as usize;
        let sign = if turns < 0 { -1.0 } else { 1.0 };
        (0..=total)
            .map(|k| {
                let z = Complex64::from_polar(1.0, sign * TAU * k as f64 / segments as f64);
                hl(&p2(z, c(0.0)))
            })
            .collect()
    });
    Ok(ExampleSpec {
        name: format!("power_cover:{n}"),
        dimension: 2,
        generators: BranchFamily::new(vec![Generator::Root(n), Generator::Identity]),
        h,
        properties: vec![Property::PdResidual, Property::Sheets(n), Property::StronglyRegularSample],
        nf_order: 6,
        slice: SliceSpec {
            origin: p,
            window: [-1.5, 1.5, -1.5, 1.5],
            ..default_slice(2)
        },
        branch_loop: Some(branch_loop),
        excluded: None,
    })
}

/// Runs every check implied by the example's property flags.
pub fn verify_example(spec: &ExampleSpec) -> Report {
    crate::verify::run_checks(spec, &crate::verify::checks_for(spec), &crate::verify::VerifyConfig::default())
}
