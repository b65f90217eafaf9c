//! Poincaré-Dulac normalization of an attracting germ with lower-triangular
//! linear part.
//!
//! Given `F = A + f_2 + f_3 + ...` the solver builds, degree by degree, a
//! polynomial `T = id + t_2 + ...` and a lower-triangular polynomial
//! automorphism `G = A + g_2 + ...` with `T ∘ F = G ∘ T` through degree
//! `m - 1`. Each monomial `z^beta` in component `i` either gets solved into `T`
//! through the homological equation `(lambda^beta - lambda_i) t = rhs`, or, when
//! `lambda^beta` is resonant with `lambda_i`, is kept in `G`.

use std::fmt::Write as _;

use num_complex::Complex64;
use thiserror::Error;

use crate::poly::{map_compose, map_inverse_formal, CPoly, MultiIndex, PolyError, PolyMap};

pub const DEFAULT_RES_TOL: f64 = 1e-8;
pub const DEFAULT_ORDER: u32 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NormalFormError {
    #[error("germ does not fix the origin (component {0} has a constant term)")]
    NotFixed(usize),
    #[error("linear part is not lower triangular (entry {row},{col})")]
    NotLowerTriangular { row: usize, col: usize },
    #[error("not attracting: eigenvalue {0} has modulus >= 1")]
    NotAttracting(Complex64),
    #[error("order m must be at least 2, got {0}")]
    OrderTooLow(u32),
    #[error(
        "resonant monomial z^({alpha}) in component {component} uses a variable with index >= {component}; \
         triangular normal form impossible"
    )]
    StructuralResonance { component: usize, alpha: MultiIndex },
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("parse error: {0}")]
    Parse(String),
}

/// A monomial `z^alpha` in component `i` retained in `G`, or flagged as nearly
/// resonant.
#[derive(Debug, Clone, PartialEq)]
pub struct ResonanceRecord {
    pub component: usize,
    pub alpha: MultiIndex,
    /// `|lambda^alpha - lambda_i|`.
    pub defect: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalFormResult {
    /// Lower-triangular polynomial automorphism with `G(0) = 0`, `G'(0) = A`.
    pub g: PolyMap,
    /// Conjugacy with `T(0) = 0`, `T'(0) = id`.
    pub t: PolyMap,
    pub order: u32,
    pub resonances: Vec<ResonanceRecord>,
    /// Non-resonant monomials whose divisor lies in `(tol, 10 tol]`.
    pub ill_conditioned: Vec<ResonanceRecord>,
    /// Highest degree at which resonances were searched for.
    pub resonance_scan_degree: u32,
}

impl NormalFormResult {
    pub fn dim(&self) -> usize {
        self.g.dim()
    }

    /// `G^{-1}` as a polynomial map. `G` is a triangular automorphism, so its
    /// inverse is polynomial; `trunc` bounds the expansion.
    pub fn g_inverse_formal(&self, trunc: u32) -> Result<PolyMap, PolyError> {
        map_inverse_formal(&self.g, trunc)
    }

    /// Exact pointwise `G^{-1}` by forward substitution: component `i` of `G`
    /// is `a_ii z_i + (polynomial in z_1..z_{i-1})`.
    pub fn g_inverse_eval(&self, w: &[Complex64]) -> Vec<Complex64> {
        let n = self.dim();
        let mut z = vec![Complex64::default(); n];
        for i in 0..n {
            let diag = self.g.component(i).coeff(&MultiIndex::unit(n, i));
            // Evaluate the rest with z_i = 0 and later coordinates unknown (0).
            let rest = self.g.component(i).eval(&z);
            z[i] = (w[i] - rest) / diag;
        }
        z
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "normal_form {}", self.order);
        s.push_str("[G]\n");
        s.push_str(&self.g.to_text());
        s.push_str("[T]\n");
        s.push_str(&self.t.to_text());
        s.push_str("[resonances]\n");
        for r in &self.resonances {
            let _ = writeln!(s, "resonance {} {} {:?}", r.component + 1, r.alpha, r.defect);
        }
        for r in &self.ill_conditioned {
            let _ = writeln!(s, "ill_conditioned {} {} {:?}", r.component + 1, r.alpha, r.defect);
        }
        let _ = writeln!(s, "scan_degree {}", self.resonance_scan_degree);
        s.push_str("[end]\n");
        s
    }

    pub fn from_text(text: &str) -> Result<NormalFormResult, NormalFormError> {
        let lines: Vec<&str> = text.lines().collect();
        let perr = |m: &str| NormalFormError::Parse(m.to_string());
        let mut idx = 0;
        let next_content = |idx: &mut usize| -> Option<&str> {
            while *idx < lines.len() {
                let l = lines[*idx].trim();
                *idx += 1;
                if !l.is_empty() && !l.starts_with('#') {
                    return Some(l);
                }
            }
            None
        };
        let header = next_content(&mut idx).ok_or_else(|| perr("empty input"))?;
        let order: u32 = header
            .strip_prefix("normal_form ")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| perr("expected `normal_form <m>`"))?;
        if next_content(&mut idx) != Some("[G]") {
            return Err(perr("expected [G]"));
        }
        let (g, used) = PolyMap::from_text_lines(lines[idx..].iter().copied(), idx)?;
        idx += used;
        if next_content(&mut idx) != Some("[T]") {
            return Err(perr("expected [T]"));
        }
        let (t, used) = PolyMap::from_text_lines(lines[idx..].iter().copied(), idx)?;
        idx += used;
        if next_content(&mut idx) != Some("[resonances]") {
            return Err(perr("expected [resonances]"));
        }
        let mut resonances = Vec::new();
        let mut ill_conditioned = Vec::new();
        let mut resonance_scan_degree = 0;
        loop {
            let l = next_content(&mut idx).ok_or_else(|| perr("missing [end]"))?;
            if l == "[end]" {
                break;
            }
            let f: Vec<&str> = l.split_whitespace().collect();
            match f.as_slice() {
                ["scan_degree", d] => {
                    resonance_scan_degree = d.parse().map_err(|_| perr("bad scan_degree"))?
                }
                [kind @ ("resonance" | "ill_conditioned"), comp, alpha, defect] => {
                    let component: usize = comp.parse().map_err(|_| perr("bad component"))?;
                    let exps = alpha
                        .split(',')
                        .map(str::parse)
                        .collect::<Result<Vec<u32>, _>>()
                        .map_err(|_| perr("bad multi-index"))?;
                    let rec = ResonanceRecord {
                        component: component
                            .checked_sub(1)
                            .ok_or_else(|| perr("components are 1-based"))?,
                        alpha: MultiIndex::new(exps),
                        defect: defect.parse().map_err(|_| perr("bad defect"))?,
                    };
                    if *kind == "resonance" {
                        resonances.push(rec);
                    } else {
                        ill_conditioned.push(rec);
                    }
                }
                _ => return Err(perr(&format!("unexpected line `{l}`"))),
            }
        }
        Ok(NormalFormResult {
            g,
            t,
            order,
            resonances,
            ill_conditioned,
            resonance_scan_degree,
        })
    }
}

/// Degree bound beyond which no resonance `lambda_i = lambda^alpha` can occur
/// for a contracting spectrum: `|lambda^alpha| <= |lambda_max|^|alpha| < |lambda_min|`.
pub fn resonance_degree_bound(eigenvalues: &[Complex64]) -> Option<u32> {
    let max = eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let min = eigenvalues.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
    if min == 0.0 || max == 0.0 || max >= 1.0 {
        return None;
    }
    Some((min.ln() / max.ln() + 1.0).floor() as u32)
}

/// Computes `(G, T)` with `G^{-1} ∘ T ∘ F - T = O(|z|^m)`.
///
/// `f` must fix the origin and have lower-triangular linear part with all
/// eigenvalues inside the unit disc; triangularize first with
/// [`crate::linalg::lower_triangularize`].
pub fn poincare_dulac(f: &PolyMap, m: u32, res_tol: f64) -> Result<NormalFormResult, NormalFormError> {
    let n = f.dim();
    if m < 2 {
        return Err(NormalFormError::OrderTooLow(m));
    }
    for (i, c) in f.constant_part().iter().enumerate() {
        if c.norm() != 0.0 {
            return Err(NormalFormError::NotFixed(i));
        }
    }
    let a = f.linear_part();
    for i in 0..n {
        for j in i + 1..n {
            if a[(i, j)].norm() != 0.0 {
                return Err(NormalFormError::NotLowerTriangular { row: i, col: j });
            }
        }
    }
    let lambda: Vec<Complex64> = (0..n).map(|i| a[(i, i)]).collect();
    if let Some(bad) = lambda.iter().find(|z| z.norm() >= 1.0) {
        return Err(NormalFormError::NotAttracting(*bad));
    }
    let scan_limit = resonance_degree_bound(&lambda).map_or(m - 1, |b| b.min(m - 1));

    let top = m - 1;
    let f = f.with_order(top);
    let lin = PolyMap::linear(&a, top);
    let mut t = PolyMap::identity(n, top);
    let mut g = lin.clone();
    let mut resonances = Vec::new();
    let mut ill_conditioned = Vec::new();

    for d in 2..=top {
        // Known part of T∘F - G∘T at degree d, before t_d and g_d exist.
        let tf = map_compose(&t, &f, d)?;
        let gt = map_compose(&g, &t, d)?;
        let known = tf.sub(&gt)?.homogeneous(d);

        let monomials = MultiIndex::all_of_degree(n, d);
        // z^alpha ∘ A for each monomial of this degree.
        let pulled: Vec<CPoly> = monomials
            .iter()
            .map(|alpha| {
                let mono = PolyMap::new(
                    vec![CPoly::monomial(alpha.clone(), Complex64::new(1.0, 0.0)); n],
                    d,
                )
                .expect("square");
                map_compose(&mono, &lin, d).map(|p| p.component(0).clone())
            })
            .collect::<Result<_, _>>()?;

        // coeff[i][k] = t_{i, monomials[k]}
        let mut coeff = vec![vec![Complex64::default(); monomials.len()]; n];
        for i in 0..n {
            for (k, beta) in monomials.iter().enumerate() {
                let mut rhs = -known.component(i).coeff(beta);
                // Contributions of already-solved t_{i,alpha}, alpha <lex beta.
                for (kk, c) in coeff[i][..k].iter().enumerate() {
                    if *c != Complex64::default() {
                        rhs -= c * pulled[kk].coeff(beta);
                    }
                }
                for (j, row) in coeff.iter().enumerate().take(i) {
                    rhs += a[(i, j)] * row[k];
                }
                let divisor = beta.eval_monomial(&lambda) - lambda[i];
                let defect = divisor.norm();
                let scale = if lambda[i].norm() > 0.0 { lambda[i].norm() } else { 1.0 };
                let resonant = d <= scan_limit && defect <= res_tol * scale;
                if resonant {
                    if beta.last_variable().is_some_and(|v| v >= i) && rhs.norm() > 0.0 {
                        return Err(NormalFormError::StructuralResonance {
                            component: i + 1,
                            alpha: beta.clone(),
                        });
                    }
                    resonances.push(ResonanceRecord {
                        component: i,
                        alpha: beta.clone(),
                        defect,
                    });
                    g.component_mut(i).add_term(beta.clone(), -rhs);
                } else {
                    if defect <= 10.0 * res_tol * scale {
                        ill_conditioned.push(ResonanceRecord {
                            component: i,
                            alpha: beta.clone(),
                            defect,
                        });
                    }
                    let c = rhs / divisor;
                    coeff[i][k] = c;
                    t.component_mut(i).add_term(beta.clone(), c);
                }
            }
        }
    }
    Ok(NormalFormResult {
        g: g.with_order(m),
        t: t.with_order(m),
        order: m,
        resonances,
        ill_conditioned,
        resonance_scan_degree: scan_limit,
    })
}

/// Largest coefficient of degree `< m` in `G^{-1} ∘ T ∘ F - T`.
pub fn check_residual(result: &NormalFormResult, f: &PolyMap) -> Result<f64, NormalFormError> {
    let top = result.order - 1;
    let g_inv = result.g_inverse_formal(top)?;
    let tf = map_compose(&result.t.with_order(top), &f.with_order(top), top)?;
    let lhs = map_compose(&g_inv, &tf, top)?;
    let diff = lhs.sub(&result.t.with_order(top))?;
    Ok(diff.max_abs_below(result.order))
}
