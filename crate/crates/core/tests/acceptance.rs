//! End-to-end acceptance suite. Every criterion prints one
//! `criterion N: PASS|FAIL: detail` line; the test fails if any criterion
//! fails.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use fatou_core::continuation::{compatibility_check, continue_along_path, fiber_enumerate, monodromy, MapElement};
use fatou_core::dynamics::{
    ball_samples, basin_membership, classify_grid, contraction_violations, find_regularity_neighborhood, Membership, PixelClass,
    DEFAULT_K_MAX, DEFAULT_NEWTON_TOL,
};
use fatou_core::fb_map::{build_pipeline, local_germ, samples_in_r, surjectivity_witness, FbMapEvaluator};
use fatou_core::gallery::{get_example, henon_pipeline, ExampleSpec};
use fatou_core::normal_form::{check_residual, poincare_dulac, DEFAULT_RES_TOL};
use fatou_core::poly::{map_compose, MultiIndex};
use fatou_core::raster::encode_p6;
use fatou_core::verify::{compatibility_violations, fiber_bases, sample_riemann_points};
use fatou_core::Point;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn spec(name: &str) -> ExampleSpec {
    get_example(name).expect("gallery example")
}

/// Coefficients `t_1..t_m` of the Koenigs linearizer of `F(z) = z/2 + z^2`,
/// from `T(F(z)) = T(z)/2` solved degree by degree:
/// `t_k (2^-k - 1/2) = -sum_{j<k} t_j [z^k] (z/2 + z^2)^j`.
fn koenigs_coefficients(m: usize) -> Vec<f64> {
    let binom = |n: usize, k: usize| -> f64 { (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64) };
    let mut t = vec![0.0; m + 1];
    t[1] = 1.0;
    for k in 2..=m {
        let mut s = 0.0;
        for (j, tj) in t.iter().enumerate().take(k).skip(1) {
            if 2 * j >= k {
                // (z/2 + z^2)^j = z^j (1/2 + z)^j; the z^k term picks z^(k-j).
                s += tj * binom(j, k - j) * 0.5f64.powi((2 * j - k) as i32);
            }
        }
        t[k] = s / (0.5 - 0.5f64.powi(k as i32));
    }
    t
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut t2_err = f64::INFINITY;
    let mut coeff_err = 0.0f64;
    for (name, m) in [("koenigs1d", 6u32), ("resonant2d", 4)] {
        let s = spec(name);
        let nbhd = find_regularity_neighborhood(&s.h).expect("neighborhood");
        let f = local_germ(&s.h, &nbhd).expect("local germ");
        let nf = poincare_dulac(&f, m, DEFAULT_RES_TOL).expect("normal form");
        worst = worst.max(check_residual(&nf, &f).expect("residual"));
        if name == "koenigs1d" {
            // In one dimension the frame is a unit scalar; undo it so the
            // coefficients compare with the recurrence.
            let q = nbhd.frame[(0, 0)];
            let oracle = koenigs_coefficients(m as usize - 1);
            for (k, want) in oracle.iter().enumerate().skip(1) {
                let got = nf.t.component(0).coeff(&MultiIndex::new(vec![k as u32])) * q.powi(k as i32 - 1);
                coeff_err = coeff_err.max((got - Complex64::new(*want, 0.0)).norm());
                if k == 2 {
                    t2_err = (got - Complex64::new(4.0, 0.0)).norm();
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-10 && t2_err < 1e-12 && coeff_err < 1e-12 && secs < 1.0,
        format!("max residual {worst:.3e} (tol 1e-10), |t2 - 4| = {t2_err:.3e}, max coefficient error {coeff_err:.3e} (tol 1e-12), {secs:.3} s (limit 1 s)"),
    )
}

fn criterion_2() -> Outcome {
    let s = spec("resonant2d");
    let nbhd = find_regularity_neighborhood(&s.h).expect("neighborhood");
    let f = local_germ(&s.h, &nbhd).expect("local germ");
    let nf = poincare_dulac(&f, 4, DEFAULT_RES_TOL).expect("normal form");
    let one = nf.resonances.len() == 1;
    let right = nf.resonances.first().is_some_and(|r| r.component == 1 && r.alpha.exponents() == [2, 0]);
    let id = fatou_core::poly::PolyMap::identity(2, 4);
    let dist = nf.t.distance(&id).expect("same shape");
    outcome(
        one && right && dist < 1e-12,
        format!(
            "{} resonance(s) {:?}, ||T - id|| = {dist:.3e} (tol 1e-12)",
            nf.resonances.len(),
            nf.resonances.iter().map(|r| (r.component + 1, r.alpha.exponents().to_vec())).collect::<Vec<_>>()
        ),
    )
}

/// The approximants `Psi_k(z) = Ghat^{-k} T(q*(F^k z - p))` for `k <= k_max`
/// (in the local frame), computed independently of the evaluator's stopping
/// rule.
fn psi_approximants(e: &FbMapEvaluator, z: &Point, k_max: usize) -> Vec<Point> {
    let q_adj = e.nbhd.frame.adjoint();
    let mut out = Vec::new();
    let mut x = z.clone();
    for k in 0..=k_max {
        if k > 0 {
            x = e.h.inverse_principal(&x).expect("inverse branch");
        }
        let mut v = e.nf.t.eval_point(&(&q_adj * (&x - &e.nbhd.center)));
        for _ in 0..k {
            v = Point::from_vec(e.nf.g_inverse_eval(v.as_slice()));
        }
        out.push(v);
    }
    out
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut worst_ratio = 0.0f64;
    let mut ratios = 0usize;
    let mut late_ratio = 0.0f64;
    let mut late = 0usize;
    let mut early = 0usize;
    let mut worst_residual = 0.0f64;
    let mut failures = Vec::new();
    let koenigs = build_pipeline(spec("koenigs1d").h, 6).expect("koenigs pipeline");
    let henon = henon_pipeline().expect("henon pipeline");
    for (name, e) in [("koenigs1d", &koenigs.0), ("henon_fb", &henon.0)] {
        for z in samples_in_r(&e.nbhd, 100, 0.9, 31) {
            let approx = psi_approximants(e, &z, 25);
            let scale = 1.0 + approx.last().expect("nonempty").norm();
            let deltas: Vec<f64> = approx.windows(2).map(|w| (&w[1] - &w[0]).norm()).collect();
            // deltas[k-1] compares Psi_k with Psi_{k-1}. Once a delta reaches
            // the roundoff floor the ratio measures noise, not convergence.
            // Most points reach the floor before the burn-in ends, so ratios
            // are measured from k = 1 as well as after k = 5.
            let floor = 1e-13 * scale;
            for k in 1..deltas.len() {
                let (prev, cur) = (deltas[k - 1], deltas[k]);
                if prev <= floor || cur <= floor {
                    if k <= 5 {
                        early += 1;
                    }
                    break;
                }
                worst_ratio = worst_ratio.max(cur / prev);
                ratios += 1;
                if k >= 5 {
                    late_ratio = late_ratio.max(cur / prev);
                    late += 1;
                }
            }
            match e.psi_eval(&z) {
                Ok(psi) => {
                    let fz = e.h.inverse_principal(&z).expect("inverse branch");
                    match e.psi_eval(&fz) {
                        Ok(lhs) => worst_residual = worst_residual.max((lhs - e.g_hat(&psi)).norm()),
                        Err(err) => failures.push(format!("{name}: {err}")),
                    }
                }
                Err(err) => failures.push(format!("{name}: {err}")),
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failures.is_empty() && ratios > 0 && worst_ratio <= 0.7 && worst_residual < 1e-8 && secs < 10.0,
        format!(
            "worst delta ratio {worst_ratio:.3} over {ratios} ratios above the roundoff floor, {late_ratio:.3} over {late} after k = 5 (limit 0.7; {early}/200 points reach the floor by k = 5), functional residual {worst_residual:.3e} (tol 1e-8), {secs:.2} s, {} evaluation failures",
            failures.len()
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut round_trip = 0.0f64;
    let mut step = 0.0f64;
    let mut errors = 0;
    let koenigs = build_pipeline(spec("koenigs1d").h, 6).expect("koenigs pipeline");
    let resonant = build_pipeline(spec("resonant2d").h, 4).expect("resonant pipeline");
    let henon = henon_pipeline().expect("henon pipeline");
    for (e, t) in [(&koenigs.0, &koenigs.1), (&resonant.0, &resonant.1), (&henon.0, &henon.1)] {
        for z in samples_in_r(&e.nbhd, 50, 0.25, 41) {
            match e.psi_eval(&z).and_then(|w| t.theta_eval(&w)) {
                Ok(back) => round_trip = round_trip.max((back - z).norm()),
                Err(_) => errors += 1,
            }
        }
        for w in ball_samples(e.dim(), 50, 1.0, 43) {
            let lhs = t.theta_eval(&t.g_hat(&w)).map_err(|e| e.to_string()).and_then(|x| t.h.eval(&x).map_err(|e| e.to_string()));
            match (lhs, t.theta_eval(&w)) {
                (Ok(l), Ok(r)) => step = step.max((l - r).norm()),
                _ => errors += 1,
            }
        }
    }
    outcome(
        errors == 0 && round_trip < 1e-6 && step < 1e-6,
        format!("koenigs1d, resonant2d, henon_fb: max |Theta(Psi(z)) - z| = {round_trip:.3e}, max |h(Theta(G w)) - Theta(w)| = {step:.3e} (tol 1e-6), {errors} errors"),
    )
}

fn criterion_5() -> Outcome {
    let s = spec("resonant2d");
    let nbhd = find_regularity_neighborhood(&s.h).expect("neighborhood");
    let f = local_germ(&s.h, &nbhd).expect("local germ");
    let nf = poincare_dulac(&f, 4, DEFAULT_RES_TOL).expect("normal form");
    let g = nf.g.with_order(16);
    let mut gk = g.clone();
    let mut degrees = vec![gk.degree()];
    for _ in 2..=20 {
        gk = map_compose(&g, &gk, 16).expect("compose");
        degrees.push(gk.degree());
    }
    let constant_degree = degrees.iter().all(|&d| d == 2);

    // Contraction of the scaled ball Delta: beta_k = (sup |G^k z|_scaled / rho)^(1/k).
    let samples: Vec<Point> = samples_in_r(&nbhd, 100, 1.0, 51).iter().map(|z| nbhd.local_coords(z)).collect();
    let mut beta = 0.0f64;
    let mut g20 = 0.0f64;
    let mut v: Vec<Point> = samples.clone();
    for k in 1..=20 {
        v = v.iter().map(|x| nf.g.eval_point(x)).collect();
        let sup = v.iter().map(|x| nbhd.scaled_norm(&nbhd.from_local(x))).fold(0.0f64, f64::max);
        beta = beta.max((sup / nbhd.rho).powf(1.0 / k as f64));
        if k == 20 {
            g20 = v.iter().map(|x| x.norm()).fold(0.0f64, f64::max);
        }
    }
    outcome(
        constant_degree && beta < 1.0 && g20 < 1e-4,
        format!("deg G^k for k = 1..20: {:?}, measured beta = {beta:.4} (< 1), max |G^20| = {g20:.3e} (tol 1e-4)", {
            let mut d = degrees.clone();
            d.dedup();
            d
        }),
    )
}

fn criterion_6() -> Outcome {
    let mut lines = Vec::new();
    let mut all_zero = true;
    for name in ["koenigs1d", "resonant2d", "henon_fb", "exp_regular", "power_cover"] {
        let s = spec(name);
        let nbhd = find_regularity_neighborhood(&s.h).expect("neighborhood");
        let v = contraction_violations(&s.h, &nbhd, nbhd.rho, 500, 10, 0xacce);
        all_zero &= v == 0;
        lines.push(format!("{name} {v}"));
    }
    outcome(all_zero, format!("violations over 500 boundary samples, 10 steps: {}", lines.join(", ")))
}

fn criterion_7() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();

    let exp = spec("exp_regular");
    let inv = exp.h.inverse.clone().expect("branched inverse");
    let lp = (exp.branch_loop.as_ref().expect("loop"))(1, 64);
    let start = MapElement::new(inv.clone(), lp[0].clone(), 0.05, &inv.family.principal_labels()).expect("element");
    match continue_along_path(&start, &lp, 0.1) {
        Ok(gp) => {
            let delta = gp.end_sheet.delta(&gp.start_sheet);
            let shift = gp.end().center_value[0] - start.center_value[0];
            let shift_err = (shift - Complex64::new(0.0, 2.0 * PI)).norm();
            ok &= delta.indices() == [1] && shift_err < 1e-9;
            notes.push(format!("exp_regular delta {delta}, |shift - 2 pi i| = {shift_err:.2e}"));
        }
        Err(err) => {
            ok = false;
            notes.push(format!("exp_regular continuation failed: {err}"));
        }
    }

    let pc = spec("power_cover");
    let inv = pc.h.inverse.clone().expect("branched inverse");
    let lp = pc.branch_loop.as_ref().expect("loop");
    let start = MapElement::new(inv.clone(), lp(1, 64)[0].clone(), 0.05, &inv.family.principal_labels()).expect("element");
    match (monodromy(&start, &lp(1, 64), 0.1), monodromy(&start, &lp(3, 64), 0.1)) {
        (Ok(once), Ok(thrice)) => {
            ok &= once.indices()[0] == 1 && thrice.indices()[0] == 0;
            notes.push(format!("power_cover one loop {once}, three loops {thrice}"));
        }
        (a, b) => {
            ok = false;
            notes.push(format!("power_cover monodromy failed: {:?} {:?}", a.err(), b.err()));
        }
    }

    let (e, _) = build_pipeline(pc.h.clone(), 6).expect("power_cover pipeline");
    let mut counts = Vec::new();
    for base in fiber_bases(&pc, &e.nbhd, 3, 71) {
        let f = fiber_enumerate(&e, &base, 1, DEFAULT_NEWTON_TOL).map(|f| f.len()).unwrap_or(0);
        ok &= f == 3;
        counts.push(f);
    }
    notes.push(format!("power_cover fiber sizes {counts:?}"));

    let (e, _) = build_pipeline(exp.h.clone(), 6).expect("exp_regular pipeline");
    let mut counts = Vec::new();
    for base in fiber_bases(&exp, &e.nbhd, 2, 73) {
        let f = fiber_enumerate(&e, &base, 2, DEFAULT_NEWTON_TOL).map(|f| f.len()).unwrap_or(0);
        ok &= f == 5;
        counts.push(f);
    }
    notes.push(format!("exp_regular depth-2 fiber sizes {counts:?}"));
    outcome(ok, notes.join("; "))
}

fn criterion_8() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for name in ["power_cover", "exp_regular"] {
        let s = spec(name);
        let (e, _) = build_pipeline(s.h.clone(), 6).expect("pipeline");
        let pts = sample_riemann_points(&e, &s, 8, 81);
        let (bad, pairs) = compatibility_violations(&pts, 200);
        // Near-collisions across distinct points, if any, must share a base.
        let mut closest = f64::INFINITY;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                closest = closest.min(compatibility_check(&pts[i], &pts[j], 1e-9).psi_distance);
            }
        }
        ok &= bad == 0 && pairs >= 200;
        notes.push(format!("{name}: {pairs} pairs from {} points, {bad} violations, closest distinct Psi values {closest:.3e}", pts.len()));
    }
    outcome(ok, notes.join("; "))
}

fn criterion_9() -> Outcome {
    let s = spec("exp_regular");
    let nbhd = find_regularity_neighborhood(&s.h).expect("neighborhood");
    let line = (s.excluded.as_ref().expect("excluded set"))(200, 91);
    let non = line
        .iter()
        .filter(|p| basin_membership(&s.h, &nbhd, p, DEFAULT_K_MAX, DEFAULT_NEWTON_TOL).is_non_member())
        .count();
    let ball: Vec<Point> = ball_samples(2, 200, 0.3, 93).into_iter().map(|u| &s.h.fixed_point + u).collect();
    let members = ball
        .iter()
        .filter(|p| basin_membership(&s.h, &nbhd, p, DEFAULT_K_MAX, DEFAULT_NEWTON_TOL).is_member())
        .count();
    let frac = members as f64 / ball.len() as f64;
    outcome(
        non == line.len() && frac >= 0.95,
        format!("{non}/{} points on z1 = -1 non-member, {members}/{} of the ball of radius 0.3 member ({:.1}%, need 95%)", line.len(), ball.len(), 100.0 * frac),
    )
}

fn criterion_10() -> Outcome {
    let (e, t) = henon_pipeline().expect("henon pipeline");
    let mut members = 0;
    let mut worst = 0.0f64;
    let mut errors = 0;
    let ws = ball_samples(2, 100, 1.0, 101);
    for w in &ws {
        match t.theta_eval(w) {
            Ok(x) => {
                if basin_membership(&e.h, &e.nbhd, &x, DEFAULT_K_MAX, DEFAULT_NEWTON_TOL).is_member() {
                    members += 1;
                }
            }
            Err(_) => errors += 1,
        }
        match surjectivity_witness(e, t, w) {
            Ok(rp) => worst = worst.max((&rp.psi_value - w).norm()),
            Err(_) => errors += 1,
        }
    }
    outcome(
        members == ws.len() && errors == 0 && worst < 1e-6,
        format!("{members}/{} Theta(w) are members, witness round trip {worst:.3e} (tol 1e-6), {errors} errors", ws.len()),
    )
}

fn criterion_11() -> Outcome {
    let s = spec("exp_regular");
    let nbhd = find_regularity_neighborhood(&s.h).expect("neighborhood");
    let mut slice = s.slice.clone();
    slice.resolution = 256;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().expect("thread pool");
    let start = Instant::now();
    let first = pool.install(|| classify_grid(&s.h, &nbhd, &slice, DEFAULT_K_MAX)).expect("render");
    let secs = start.elapsed().as_secs_f64();
    let second = pool.install(|| classify_grid(&s.h, &nbhd, &slice, DEFAULT_K_MAX)).expect("render");
    let identical = encode_p6(&first) == encode_p6(&second);

    let mut rng = ChaCha8Rng::seed_from_u64(111);
    let mut mismatches = 0;
    for _ in 0..100 {
        let (i, j) = (rng.gen_range(0..256), rng.gen_range(0..256));
        let direct = basin_membership(&s.h, &nbhd, &slice.point(i, j), DEFAULT_K_MAX, DEFAULT_NEWTON_TOL);
        if PixelClass::from(&direct) != first.get(i, j) {
            mismatches += 1;
        }
    }
    let unknown = first.pixels.iter().filter(|p| matches!(p, PixelClass::Unknown)).count();
    let non_member = first.pixels.iter().filter(|p| matches!(p, PixelClass::NonMember)).count();
    outcome(
        secs < 60.0 && identical && mismatches == 0,
        format!(
            "256x256 on 4 threads in {secs:.2} s (limit 60 s), byte-identical rerun: {identical}, {mismatches}/100 audited pixels disagree; {non_member} non-member and {unknown} unknown pixels"
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [(u32, fn() -> Outcome); 11] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
        (11, criterion_11),
    ];
    let mut failed = Vec::new();
    for (n, run) in criteria {
        let o = run();
        // Written to the process stdout directly so the lines appear even
        // when the harness captures test output.
        let line = format!("criterion {n}: {}: {}\n", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        let mut out = std::io::stdout().lock();
        out.write_all(line.as_bytes()).expect("stdout");
        out.flush().expect("stdout");
        if !o.pass {
            failed.push(n);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

#[test]
fn membership_witness_is_consistent() {
    let s = spec("exp_regular");
    let nbhd = find_regularity_neighborhood(&s.h).expect("neighborhood");
    for p in ball_samples(2, 50, 0.3, 7).iter().map(|u| &s.h.fixed_point + u) {
        if let Membership::Member { level, witness, .. } = basin_membership(&s.h, &nbhd, &p, DEFAULT_K_MAX, DEFAULT_NEWTON_TOL) {
            assert!(nbhd.contains(&witness));
            let back = s.h.eval_iter(&witness, level).expect("forward orbit");
            assert!((back - &p).norm() <= DEFAULT_NEWTON_TOL * (1.0 + p.norm()));
        }
    }
}
