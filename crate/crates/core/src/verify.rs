//! Named property checks with line-oriented reports.
//!
//! Every check produces one record `name: STATUS: value: tolerance`; a check
//! passes when `value <= tolerance` (counts of violations use tolerance 0).

use std::fmt::Write as _;

use num_complex::Complex64;

use crate::continuation::{compatibility_check, fiber_enumerate, monodromy, MapElement, RiemannPoint};
use crate::dynamics::{ball_samples, basin_membership, contraction_violations, DEFAULT_K_MAX, DEFAULT_NEWTON_TOL};
use crate::fb_map::{build_pipeline, functional_residuals, local_germ, FbMapEvaluator, ThetaEvaluator};
use crate::gallery::{ExampleSpec, Property};
use crate::linalg::RegularityNbhd;
use crate::normal_form::{check_residual, poincare_dulac, DEFAULT_ORDER, DEFAULT_RES_TOL};
use crate::poly::MultiIndex;
use crate::Point;

pub const CHECK_NAMES: [&str; 9] = [
    "fixed-point",
    "germ-agreement",
    "PD-residual",
    "regularity",
    "functional-residual",
    "basin-proper",
    "monodromy",
    "sheets",
    "compatibility",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub status: Status,
    pub value: f64,
    pub tolerance: f64,
    /// Set when the check could not be evaluated at all.
    pub error: Option<String>,
}

impl CheckResult {
    /// Passes iff `value <= tolerance` and `value` is not NaN.
    pub fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        let status = if value <= tolerance { Status::Pass } else { Status::Fail };
        CheckResult {
            name: name.to_string(),
            status,
            value,
            tolerance,
            error: None,
        }
    }

    pub fn errored(name: &str, tolerance: f64, msg: impl Into<String>) -> Self {
        CheckResult {
            name: name.to_string(),
            status: Status::Fail,
            value: f64::INFINITY,
            tolerance,
            error: Some(msg.into()),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    pub fn line(&self) -> String {
        let mut s = format!("{}: {}: {:e}: {:e}", self.name, self.status, self.value, self.tolerance);
        if let Some(e) = &self.error {
            let _ = write!(s, " ({e})");
        }
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub checks: Vec<CheckResult>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn push(&mut self, c: CheckResult) {
        self.checks.push(c);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed())
    }

    pub fn extend(&mut self, other: Report) {
        self.checks.extend(other.checks);
        self.warnings.extend(other.warnings);
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        for c in &self.checks {
            let _ = writeln!(s, "{}", c.line());
        }
        let failed = self.failures().count();
        let _ = writeln!(
            s,
            "summary: {}: {} checks: {} failed",
            if failed == 0 { "PASS" } else { "FAIL" },
            self.checks.len(),
            failed
        );
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub samples: usize,
    pub seed: u64,
    /// Normal-form order for the residual check; the example's own when unset.
    pub m: Option<u32>,
    /// Perturb a coefficient of `T` before the residual check (self-test of
    /// the verifier).
    pub corrupt_normal_form: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            samples: 50,
            seed: 7,
            m: None,
            corrupt_normal_form: false,
        }
    }
}

/// Check names implied by an example's property flags.
pub fn checks_for(spec: &ExampleSpec) -> Vec<String> {
    let mut names: Vec<&str> = vec!["fixed-point", "germ-agreement", "regularity"];
    for p in &spec.properties {
        match p {
            Property::PdResidual => names.push("PD-residual"),
            Property::FunctionalEquations => names.push("functional-residual"),
            Property::BasinProper => names.push("basin-proper"),
            Property::Sheets(_) => names.push("sheets"),
            Property::LogSheeting => names.push("monodromy"),
            Property::StronglyRegularSample => {
                names.push("monodromy");
                names.push("compatibility");
            }
        }
    }
    let mut out: Vec<String> = Vec::new();
    for n in names {
        if !out.iter().any(|o| o == n) {
            out.push(n.to_string());
        }
    }
    out
}

/// Runs the selected checks. Unknown names become failed records; an empty
/// selection passes with a warning.
pub fn run_checks(spec: &ExampleSpec, selection: &[String], cfg: &VerifyConfig) -> Report {
    let mut report = Report::default();
    if selection.is_empty() {
        report.warnings.push("empty check selection: nothing verified".into());
        return report;
    }
    let mut ctx = Context::new(spec);
    for name in selection {
        let result = match name.as_str() {
            "fixed-point" => check_fixed_point(spec),
            "germ-agreement" => check_germ(spec),
            "PD-residual" => check_pd_residual(spec, cfg),
            "regularity" => check_regularity(&mut ctx, cfg),
            "functional-residual" => check_functional(&mut ctx, cfg),
            "basin-proper" => check_basin_proper(&mut ctx, cfg),
            "monodromy" => check_monodromy(&mut ctx),
            "sheets" => check_sheets(&mut ctx),
            "compatibility" => check_compatibility(&mut ctx, cfg),
            other => CheckResult::errored(other, 0.0, "unknown check"),
        };
        report.push(result);
    }
    report
}

/// Lazily built pipeline shared by the checks of one run.
struct Context<'a> {
    spec: &'a ExampleSpec,
    pipeline: Option<Result<(FbMapEvaluator, ThetaEvaluator), String>>,
}

impl<'a> Context<'a> {
    fn new(spec: &'a ExampleSpec) -> Self {
        Context { spec, pipeline: None }
    }

    fn pipeline(&mut self) -> Result<&(FbMapEvaluator, ThetaEvaluator), String> {
        let spec = self.spec;
        self.pipeline
            .get_or_insert_with(|| build_pipeline(spec.h.clone(), DEFAULT_ORDER).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(Clone::clone)
    }

    fn nbhd(&mut self) -> Result<RegularityNbhd, String> {
        Ok(self.pipeline()?.0.nbhd.clone())
    }
}

fn check_fixed_point(spec: &ExampleSpec) -> CheckResult {
    match spec.h.fixed_point_defect() {
        Ok(d) => CheckResult::at_most("fixed-point", d, 1e-12),
        Err(e) => CheckResult::errored("fixed-point", 1e-12, e.to_string()),
    }
}

fn check_germ(spec: &ExampleSpec) -> CheckResult {
    match spec.h.germ_defect() {
        Ok(d) => CheckResult::at_most("germ-agreement", d, 1e-6),
        Err(e) => CheckResult::errored("germ-agreement", 1e-6, e.to_string()),
    }
}

/// `max |[G^{-1} T F - T]_{deg < m}|` for the example's germ.
pub fn pd_residual(spec: &ExampleSpec, m: u32, corrupt: bool) -> Result<f64, String> {
    let nbhd = crate::dynamics::find_regularity_neighborhood(&spec.h).map_err(|e| e.to_string())?;
    let f = local_germ(&spec.h, &nbhd).map_err(|e| e.to_string())?;
    let mut nf = poincare_dulac(&f, m, DEFAULT_RES_TOL).map_err(|e| e.to_string())?;
    if corrupt {
        let n = nf.dim();
        let mut e = vec![0; n];
        e[0] = 2;
        nf.t.component_mut(0).add_term(MultiIndex::new(e), Complex64::new(1e-3, 0.0));
    }
    check_residual(&nf, &f).map_err(|e| e.to_string())
}

fn check_pd_residual(spec: &ExampleSpec, cfg: &VerifyConfig) -> CheckResult {
    let m = cfg.m.unwrap_or(spec.nf_order);
    match pd_residual(spec, m, cfg.corrupt_normal_form) {
        Ok(r) => CheckResult::at_most("PD-residual", r, 1e-10),
        Err(e) => CheckResult::errored("PD-residual", 1e-10, e),
    }
}

fn check_regularity(ctx: &mut Context, cfg: &VerifyConfig) -> CheckResult {
    match ctx.nbhd() {
        Ok(r) => {
            let v = contraction_violations(&ctx.spec.h, &r, r.rho, 500, 10, cfg.seed ^ 0xabcd);
            CheckResult::at_most("regularity", v as f64, 0.0)
        }
        Err(e) => CheckResult::errored("regularity", 0.0, e),
    }
}

fn check_functional(ctx: &mut Context, cfg: &VerifyConfig) -> CheckResult {
    let samples = cfg.samples.min(50);
    match ctx.pipeline() {
        Ok((e, t)) => match functional_residuals(e, t, samples, cfg.seed) {
            Ok(r) => CheckResult::at_most("functional-residual", r.max(), 1e-8),
            Err(err) => CheckResult::errored("functional-residual", 1e-8, err.to_string()),
        },
        Err(err) => CheckResult::errored("functional-residual", 1e-8, err),
    }
}

fn check_basin_proper(ctx: &mut Context, cfg: &VerifyConfig) -> CheckResult {
    let Some(excluded) = ctx.spec.excluded.clone() else {
        return CheckResult::errored("basin-proper", 0.0, "example has no excluded set");
    };
    let nbhd = match ctx.nbhd() {
        Ok(r) => r,
        Err(e) => return CheckResult::errored("basin-proper", 0.0, e),
    };
    let pts = excluded(200, cfg.seed);
    let bad = pts
        .iter()
        .filter(|p| !basin_membership(&ctx.spec.h, &nbhd, p, DEFAULT_K_MAX, DEFAULT_NEWTON_TOL).is_non_member())
        .count();
    CheckResult::at_most("basin-proper", bad as f64, 0.0)
}

/// Integer mismatch between observed and expected monodromy: one loop must
/// shift the first label by one, and for roots `n` loops must return.
pub fn monodromy_mismatch(spec: &ExampleSpec) -> Result<i64, String> {
    let lp = spec.branch_loop.as_ref().ok_or("example has no branch loop")?;
    let inv = spec.h.inverse.clone().ok_or("example has no inverse branch")?;
    let once = lp(1, 64);
    let start = MapElement::new(inv.clone(), once[0].clone(), 0.05, &inv.family.principal_labels()).map_err(|e| e.to_string())?;
    let d1 = monodromy(&start, &once, 0.1).map_err(|e| e.to_string())?;
    let mut mismatch = (d1.indices()[0] - 1).abs();
    let modulus = d1.moduli()[0];
    if modulus > 0 {
        let full = monodromy(&start, &lp(modulus as i32, 64), 0.1).map_err(|e| e.to_string())?;
        mismatch += full.indices()[0].abs();
    }
    Ok(mismatch)
}

fn check_monodromy(ctx: &mut Context) -> CheckResult {
    match monodromy_mismatch(ctx.spec) {
        Ok(m) => CheckResult::at_most("monodromy", m as f64, 0.0),
        Err(e) => CheckResult::errored("monodromy", 0.0, e),
    }
}

/// Generic base points for fibers: `h^2` of points near the fixed point.
pub fn fiber_bases(spec: &ExampleSpec, nbhd: &RegularityNbhd, count: usize, seed: u64) -> Vec<Point> {
    ball_samples(spec.dimension, count, 0.5 * nbhd.rho, seed)
        .iter()
        .filter_map(|u| spec.h.eval_iter(&nbhd.from_scaled(u), 2).ok())
        .collect()
}

fn check_sheets(ctx: &mut Context) -> CheckResult {
    let expected = ctx
        .spec
        .properties
        .iter()
        .find_map(|p| match p {
            Property::Sheets(n) => Some(*n as f64),
            _ => None,
        })
        .unwrap_or(1.0);
    let spec = ctx.spec;
    let (e, _) = match ctx.pipeline() {
        Ok(p) => p,
        Err(err) => return CheckResult::errored("sheets", 0.0, err),
    };
    let mut worst = 0.0f64;
    for base in fiber_bases(spec, &e.nbhd, 3, 11) {
        match fiber_enumerate(e, &base, 1, DEFAULT_NEWTON_TOL) {
            Ok(f) => worst = worst.max((f.len() as f64 - expected).abs()),
            Err(err) => return CheckResult::errored("sheets", 0.0, err.to_string()),
        }
    }
    CheckResult::at_most("sheets", worst, 0.0)
}

/// Riemann points over several bases (all sheets found at depth 1).
pub fn sample_riemann_points(e: &FbMapEvaluator, spec: &ExampleSpec, bases: usize, seed: u64) -> Vec<RiemannPoint> {
    fiber_bases(spec, &e.nbhd, bases, seed)
        .iter()
        .filter_map(|b| fiber_enumerate(e, b, 1, DEFAULT_NEWTON_TOL).ok())
        .flatten()
        .collect()
}

/// Violations of `Psi(x1) = Psi(x2) => pi(x1) = pi(x2)` over at most
/// `max_pairs` pairs; returns `(violations, pairs)`.
pub fn compatibility_violations(points: &[RiemannPoint], max_pairs: usize) -> (usize, usize) {
    let mut pairs = 0;
    let mut bad = 0;
    'outer: for i in 0..points.len() {
        for j in i..points.len() {
            if pairs >= max_pairs {
                break 'outer;
            }
            pairs += 1;
            if !compatibility_check(&points[i], &points[j], 1e-9).passed {
                bad += 1;
            }
        }
    }
    (bad, pairs)
}

fn check_compatibility(ctx: &mut Context, cfg: &VerifyConfig) -> CheckResult {
    let spec = ctx.spec;
    let (e, _) = match ctx.pipeline() {
        Ok(p) => p,
        Err(err) => return CheckResult::errored("compatibility", 0.0, err),
    };
    let pts = sample_riemann_points(e, spec, 8, cfg.seed);
    let (bad, _) = compatibility_violations(&pts, 200);
    CheckResult::at_most("compatibility", bad as f64, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery::get_example;

    #[test]
    fn report_lines_are_parseable() {
        let c = CheckResult::at_most("PD-residual", 1e-14, 1e-10);
        let line = c.line();
        let parts: Vec<&str> = line.split(": ").collect();
        assert_eq!(parts, vec!["PD-residual", "PASS", "1e-14", "1e-10"]);
        assert!(!CheckResult::at_most("x", f64::NAN, 1.0).passed());
    }

    #[test]
    fn empty_selection_passes_with_warning() {
        let spec = get_example("koenigs1d").unwrap();
        let r = run_checks(&spec, &[], &VerifyConfig::default());
        assert!(r.passed() && r.checks.is_empty() && !r.warnings.is_empty());
    }

    #[test]
    fn koenigs_suite_passes() {
        let spec = get_example("koenigs1d").unwrap();
        let r = crate::gallery::verify_example(&spec);
        assert!(r.passed(), "{}", r.to_text());
    }

    #[test]
    fn corruption_is_caught_by_name() {
        let spec = get_example("koenigs1d").unwrap();
        let cfg = VerifyConfig {
            corrupt_normal_form: true,
            ..VerifyConfig::default()
        };
        let r = run_checks(&spec, &["PD-residual".to_string()], &cfg);
        assert!(!r.passed());
        assert_eq!(r.failures().next().unwrap().name, "PD-residual");
    }

    #[test]
    fn unknown_check_fails() {
        let spec = get_example("koenigs1d").unwrap();
        assert!(!run_checks(&spec, &["bogus".to_string()], &VerifyConfig::default()).passed());
    }
}
