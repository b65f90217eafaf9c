use std::path::{Path, PathBuf};
use std::sync::Arc;

use fatou_core::continuation::{continue_along_path, fiber_enumerate, ContinuationError, MapElement};
use fatou_core::dynamics::{basin_membership, classify_grid, find_regularity_neighborhood, DynamicsError, HoloMap};
use fatou_core::fb_map::{build_pipeline, local_germ, FbError, FbMapEvaluator, ThetaEvaluator};
use fatou_core::gallery::{get_example, ExampleSpec, GalleryError};
use fatou_core::linalg::{scaling_neighborhood, LinalgError, RegularityNbhd, DEFAULT_MARGIN};
use fatou_core::normal_form::{check_residual, poincare_dulac, NormalFormError, DEFAULT_ORDER, DEFAULT_RES_TOL};
use fatou_core::poly::PolyMap;
use fatou_core::raster::{counts, encode_p6, metadata_toml};
use fatou_core::verify::{checks_for, fiber_bases, run_checks, CheckResult, Report, VerifyConfig};
use fatou_core::{EvalError, Point};

use crate::config::{format_point, to_point, RunConfig};
use crate::CliError;

const PD_TOL: f64 = 1e-10;

fn linalg_err(e: LinalgError) -> CliError {
    match e {
        LinalgError::NotAttracting(_) | LinalgError::NotSquare { .. } | LinalgError::NonFinite => {
            CliError::Config(format!("regularity check: {e}"))
        }
        _ => CliError::Numerical(format!("regularity check: {e}")),
    }
}

fn dyn_err(e: DynamicsError) -> CliError {
    match e {
        DynamicsError::Linalg(l) => linalg_err(l),
        DynamicsError::NotAttracting(_) => CliError::Config(format!("regularity check: {e}")),
        DynamicsError::InvalidSlice(_) | DynamicsError::NoInverseBranch => CliError::Config(e.to_string()),
        DynamicsError::DegenerateNeighborhood => CliError::Numerical(format!("regularity check: {e}")),
    }
}

fn nf_err(e: NormalFormError) -> CliError {
    match e {
        NormalFormError::Poly(_) => CliError::Numerical(format!("PD-residual: {e}")),
        _ => CliError::Config(format!("PD-residual: {e}")),
    }
}

fn fb_err(e: FbError) -> CliError {
    match e {
        FbError::Dynamics(d) => dyn_err(d),
        FbError::NormalForm(n) => nf_err(n),
        FbError::OutsideR { .. } | FbError::NotInBasin(_) => CliError::Config(format!("point outside the basin: {e}")),
        FbError::Eval(EvalError::OutsideDomain(_) | EvalError::Singular(_) | EvalError::Escaped(_)) => {
            CliError::Config(format!("point outside the basin: {e}"))
        }
        _ => CliError::Numerical(e.to_string()),
    }
}

fn gallery_err(e: GalleryError) -> CliError {
    match e {
        GalleryError::Pipeline(f) => fb_err(f),
        GalleryError::Poly(_) => CliError::Numerical(e.to_string()),
        _ => CliError::Config(e.to_string()),
    }
}

fn continuation_err(e: ContinuationError) -> CliError {
    match e {
        ContinuationError::Eval(EvalError::NoConvergence { .. }) | ContinuationError::Obstruction { .. } => {
            CliError::Numerical(e.to_string())
        }
        _ => CliError::Config(e.to_string()),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Config(format!("cannot write {}: {e}", path.display()))
}

fn example(cfg: &RunConfig) -> Result<ExampleSpec, CliError> {
    get_example(cfg.example_name()?).map_err(gallery_err)
}

fn file_stem(spec_name: &str) -> String {
    spec_name.replace([':', '/'], "_")
}

fn write_artifact(cfg: &RunConfig, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
    let dir = cfg.out_dir();
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

fn pipeline(cfg: &RunConfig, spec: &ExampleSpec) -> Result<(FbMapEvaluator, ThetaEvaluator), CliError> {
    let m = cfg.m.unwrap_or(DEFAULT_ORDER);
    let (mut e, mut t) = build_pipeline(spec.h.clone(), m).map_err(fb_err)?;
    e.tol = cfg.psi_tol();
    t.tol = cfg.theta_tol();
    Ok((e, t))
}

fn points(cfg: &RunConfig, dim: usize) -> Result<Vec<Point>, CliError> {
    let pts = cfg.points.as_ref().filter(|p| !p.is_empty()).ok_or_else(|| CliError::Config("no points given (use --point re,im;re,im)".into()))?;
    pts.iter().map(|p| to_point(p, dim)).collect()
}

/// A polynomial germ read from disk, wrapped as a map whose only known
/// inverse branch is the germ itself.
fn germ_map(path: &Path) -> Result<(String, HoloMap), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let germ = PolyMap::from_text(&text).map_err(|e| CliError::Config(format!("invalid germ file {}: {e}", path.display())))?;
    if let Some(i) = germ.constant_part().iter().position(|c| c.norm() > 0.0) {
        return Err(CliError::Config(format!("germ does not fix the origin (component {} has a constant term)", i + 1)));
    }
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "germ".into());
    let dim = germ.dim();
    let f = germ.clone();
    let h = HoloMap {
        name: name.clone(),
        dim,
        forward: Arc::new(|_: &Point| Err(EvalError::OutsideDomain("the forward map of a bare germ is not available".into()))),
        inverse: Some(Arc::new(fatou_core::continuation::BranchedMap::single_valued(dim, Arc::new(move |x: &Point| Ok(f.eval_point(x)))))),
        germ,
        fixed_point: Point::zeros(dim),
    };
    Ok((name, h))
}

pub fn normalize(cfg: &RunConfig) -> Result<(), CliError> {
    let (name, h, nbhd, default_m): (String, HoloMap, RegularityNbhd, u32) = match &cfg.germ {
        Some(path) => {
            let (name, h) = germ_map(path)?;
            let nbhd = scaling_neighborhood(&h.germ.linear_part(), DEFAULT_MARGIN).map_err(linalg_err)?;
            (name, h, nbhd, DEFAULT_ORDER)
        }
        None => {
            let spec = example(cfg)?;
            let nbhd = find_regularity_neighborhood(&spec.h).map_err(dyn_err)?;
            (file_stem(&spec.name), spec.h, nbhd, spec.nf_order)
        }
    };
    let m = cfg.m.unwrap_or(default_m);
    let f = local_germ(&h, &nbhd).map_err(|e| CliError::Numerical(e.to_string()))?;
    let nf = poincare_dulac(&f, m, DEFAULT_RES_TOL).map_err(nf_err)?;
    let residual = check_residual(&nf, &f).map_err(nf_err)?;
    let path = write_artifact(cfg, &format!("{name}.nf.txt"), nf.to_text().as_bytes())?;

    let mut report = Report::default();
    report.push(CheckResult::at_most("PD-residual", residual, PD_TOL));
    for r in &nf.resonances {
        report.warnings.push(format!("resonance: component {}: z^({}): defect {:e}", r.component + 1, r.alpha, r.defect));
    }
    for r in &nf.ill_conditioned {
        report.warnings.push(format!("ill-conditioned: component {}: z^({}): divisor {:e}", r.component + 1, r.alpha, r.defect));
    }
    print!("{}", report.to_text());
    println!("normal form: {}", path.display());
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("PD-residual {residual:e} exceeds {PD_TOL:e}")))
    }
}

pub fn psi_eval(cfg: &RunConfig) -> Result<(), CliError> {
    let spec = example(cfg)?;
    let (e, _) = pipeline(cfg, &spec)?;
    for z in points(cfg, spec.dimension)? {
        let w = e.psi_on_basin(&z).map_err(fb_err)?;
        println!("psi: {} -> {}", format_point(&z), format_point(&w));
    }
    Ok(())
}

pub fn theta_eval(cfg: &RunConfig) -> Result<(), CliError> {
    let spec = example(cfg)?;
    let (_, t) = pipeline(cfg, &spec)?;
    for w in points(cfg, spec.dimension)? {
        let z = t.theta_eval(&w).map_err(fb_err)?;
        println!("theta: {} -> {}", format_point(&w), format_point(&z));
    }
    Ok(())
}

pub fn render(cfg: &RunConfig) -> Result<(), CliError> {
    let spec = example(cfg)?;
    let slice = cfg.slice(&spec.slice)?;
    slice.validate().map_err(dyn_err)?;
    let nbhd = find_regularity_neighborhood(&spec.h).map_err(dyn_err)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let k_max = cfg.k_max();
    let raster = pool.install(|| classify_grid(&spec.h, &nbhd, &slice, k_max)).map_err(dyn_err)?;
    let stem = file_stem(&spec.name);
    let image = write_artifact(cfg, &format!("{stem}.ppm"), &encode_p6(&raster))?;
    let meta = write_artifact(cfg, &format!("{stem}.toml"), metadata_toml(&spec.name, &slice, k_max, cfg.seed(), &raster).as_bytes())?;
    let c = counts(&raster);
    println!("render: {}x{}: member {}: non-member {}: unknown {}", raster.width, raster.height, c.member, c.non_member, c.unknown);
    println!("image: {}", image.display());
    println!("metadata: {}", meta.display());
    Ok(())
}

pub fn fibers(cfg: &RunConfig) -> Result<(), CliError> {
    let spec = example(cfg)?;
    let (e, _) = pipeline(cfg, &spec)?;
    let base = match &cfg.points {
        Some(p) if !p.is_empty() => to_point(&p[0], spec.dimension)?,
        _ => fiber_bases(&spec, &e.nbhd, 1, cfg.seed())
            .pop()
            .ok_or_else(|| CliError::Numerical("could not generate a base point".into()))?,
    };
    if !basin_membership(&spec.h, &e.nbhd, &base, cfg.k_max(), cfg.newton_tol()).is_member() {
        return Err(CliError::Config(format!("base point {} is not a basin member", format_point(&base))));
    }
    let depth = cfg.depth.unwrap_or(1);
    if depth < 0 {
        return Err(CliError::Config(format!("depth must be non-negative, got {depth}")));
    }
    let fiber = fiber_enumerate(&e, &base, depth, cfg.newton_tol()).map_err(continuation_err)?;
    println!("fiber: {} points over {}", fiber.len(), format_point(&base));
    for x in &fiber {
        println!("sheet {}: level {}: psi {}", x.sheet, x.level, format_point(&x.psi_value));
    }
    Ok(())
}

pub fn monodromy(cfg: &RunConfig) -> Result<(), CliError> {
    let spec = example(cfg)?;
    let lp_fn = spec.branch_loop.as_ref().ok_or_else(|| CliError::Config(format!("example {} has no branch loop", spec.name)))?;
    let inv = spec.h.inverse.clone().ok_or_else(|| CliError::Config("example has no inverse branch".into()))?;
    let turns = cfg.turns.unwrap_or(1);
    if turns == 0 {
        return Err(CliError::Config("turns must be nonzero".into()));
    }
    let lp = lp_fn(turns, cfg.segments.unwrap_or(64));
    let start = MapElement::new(inv.clone(), lp[0].clone(), 0.05, &inv.family.principal_labels()).map_err(continuation_err)?;
    let gp = continue_along_path(&start, &lp, 0.1).map_err(continuation_err)?;
    let delta = gp.end_sheet.delta(&gp.start_sheet);
    let shift = &gp.end().center_value - &start.center_value;
    println!("monodromy: turns {turns}: start {}: end {}: delta {}", gp.start_sheet, gp.end_sheet, delta);
    println!("family shift: {}", format_point(&shift));
    if cfg.out.is_some() {
        let path = write_artifact(cfg, &format!("{}.monodromy.txt", file_stem(&spec.name)), gp.to_text().as_bytes())?;
        println!("germ path: {}", path.display());
    }
    Ok(())
}

pub fn verify(cfg: &RunConfig) -> Result<(), CliError> {
    let spec = example(cfg)?;
    let sec = cfg.verify.clone().unwrap_or_default();
    let selection = sec.checks.unwrap_or_else(|| checks_for(&spec));
    let vcfg = VerifyConfig {
        samples: sec.samples.unwrap_or(50),
        seed: cfg.seed(),
        m: cfg.m,
        corrupt_normal_form: sec.corrupt_normal_form.unwrap_or(false),
    };
    let report = run_checks(&spec, &selection, &vcfg);
    let text = report.to_text();
    print!("{text}");
    if cfg.out.is_some() {
        write_artifact(cfg, &format!("{}.verify.txt", file_stem(&spec.name)), text.as_bytes())?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::VerifyFailed)
    }
}
