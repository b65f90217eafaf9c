//! Sparse multivariate polynomials over `C` and truncated polynomial maps
//! `C^N -> C^N`.
//!
//! Every product and composition takes an explicit truncation degree; terms of
//! higher total degree are dropped. Coefficients are `f64` complex numbers.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::{CMatrix, Point};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("inner map has a nonzero constant term in component {0}")]
    NonzeroConstantTerm(usize),
    #[error("linear part is singular")]
    SingularLinearPart,
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Exponent vector of a monomial `z^alpha`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        assert!(!exponents.is_empty(), "multi-index needs at least one variable");
        MultiIndex(exponents)
    }

    pub fn zero(dim: usize) -> Self {
        MultiIndex::new(vec![0; dim])
    }

    /// `e_i`, the exponent of the coordinate function `z_i`.
    pub fn unit(dim: usize, i: usize) -> Self {
        let mut e = vec![0; dim];
        e[i] = 1;
        MultiIndex::new(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// Index of the last variable with a nonzero exponent.
    pub fn last_variable(&self) -> Option<usize> {
        self.0.iter().rposition(|&e| e > 0)
    }

    /// `lambda^alpha`.
    pub fn eval_monomial(&self, z: &[Complex64]) -> Complex64 {
        self.0
            .iter()
            .zip(z)
            .fold(Complex64::new(1.0, 0.0), |acc, (&e, &zi)| acc * zi.powu(e))
    }

    /// All exponent vectors of `dim` variables with total degree `degree`, in
    /// ascending lexicographic order.
    pub fn all_of_degree(dim: usize, degree: u32) -> Vec<MultiIndex> {
        fn rec(dim: usize, left: u32, prefix: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
            if prefix.len() == dim - 1 {
                prefix.push(left);
                out.push(MultiIndex(prefix.clone()));
                prefix.pop();
                return;
            }
            for e in 0..=left {
                prefix.push(e);
                rec(dim, left - e, prefix, out);
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        rec(dim, degree, &mut Vec::with_capacity(dim), &mut out);
        out
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|e| e.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// A polynomial in `dim` complex variables, stored sparsely.
#[derive(Debug, Clone, PartialEq)]
pub struct CPoly {
    dim: usize,
    terms: BTreeMap<MultiIndex, Complex64>,
}

impl CPoly {
    pub fn zero(dim: usize) -> Self {
        CPoly {
            dim,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(dim: usize, c: Complex64) -> Self {
        let mut p = CPoly::zero(dim);
        p.add_term(MultiIndex::zero(dim), c);
        p
    }

    pub fn monomial(alpha: MultiIndex, c: Complex64) -> Self {
        let mut p = CPoly::zero(alpha.dim());
        p.add_term(alpha, c);
        p
    }

    /// The coordinate function `z_i`.
    pub fn var(dim: usize, i: usize) -> Self {
        CPoly::monomial(MultiIndex::unit(dim, i), Complex64::new(1.0, 0.0))
    }

    /// Builds a polynomial from `(exponents, coefficient)` pairs; repeated
    /// exponents are summed.
    pub fn from_terms<I>(dim: usize, terms: I) -> Self
    where
        I: IntoIterator<Item = (Vec<u32>, Complex64)>,
    {
        let mut p = CPoly::zero(dim);
        for (e, c) in terms {
            assert_eq!(e.len(), dim);
            p.add_term(MultiIndex::new(e), c);
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, &Complex64)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coeff(&self, alpha: &MultiIndex) -> Complex64 {
        self.terms.get(alpha).copied().unwrap_or_default()
    }

    /// Adds `c * z^alpha`, pruning the entry if it cancels to zero.
    pub fn add_term(&mut self, alpha: MultiIndex, c: Complex64) {
        debug_assert_eq!(alpha.dim(), self.dim);
        if c == Complex64::default() {
            return;
        }
        match self.terms.entry(alpha) {
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if *o.get() == Complex64::default() {
                    o.remove();
                }
            }
            Entry::Vacant(v) => {
                v.insert(c);
            }
        }
    }

    pub fn set_coeff(&mut self, alpha: MultiIndex, c: Complex64) {
        if c == Complex64::default() {
            self.terms.remove(&alpha);
        } else {
            self.terms.insert(alpha, c);
        }
    }

    /// Highest total degree among stored terms (0 for the zero polynomial).
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(MultiIndex::degree).max().unwrap_or(0)
    }

    /// Lowest total degree among stored terms, `None` for zero.
    pub fn low_degree(&self) -> Option<u32> {
        self.terms.keys().map(MultiIndex::degree).min()
    }

    pub fn constant_term(&self) -> Complex64 {
        self.coeff(&MultiIndex::zero(self.dim))
    }

    fn check_dim(&self, other: &CPoly) -> Result<(), PolyError> {
        if self.dim != other.dim {
            return Err(PolyError::DimensionMismatch {
                left: self.dim,
                right: other.dim,
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &CPoly) -> Result<CPoly, PolyError> {
        self.check_dim(other)?;
        let mut out = self.clone();
        for (k, v) in &other.terms {
            out.add_term(k.clone(), *v);
        }
        Ok(out)
    }

    pub fn sub(&self, other: &CPoly) -> Result<CPoly, PolyError> {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, c: Complex64) -> CPoly {
        let mut out = CPoly::zero(self.dim);
        for (k, v) in &self.terms {
            out.add_term(k.clone(), v * c);
        }
        out
    }

    /// Product with all terms of degree `> trunc` discarded.
    pub fn mul(&self, other: &CPoly, trunc: u32) -> Result<CPoly, PolyError> {
        self.check_dim(other)?;
        let mut acc: BTreeMap<MultiIndex, Complex64> = BTreeMap::new();
        for (ka, va) in &self.terms {
            let da = ka.degree();
            if da > trunc {
                continue;
            }
            for (kb, vb) in &other.terms {
                if da + kb.degree() > trunc {
                    continue;
                }
                *acc.entry(ka.add(kb)).or_default() += va * vb;
            }
        }
        acc.retain(|_, v| *v != Complex64::default());
        Ok(CPoly {
            dim: self.dim,
            terms: acc,
        })
    }

    /// Drops every term of degree `> trunc`.
    pub fn truncate(&self, trunc: u32) -> CPoly {
        CPoly {
            dim: self.dim,
            terms: self
                .terms
                .iter()
                .filter(|(k, _)| k.degree() <= trunc)
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        }
    }

    /// Homogeneous component of degree `d`.
    pub fn homogeneous(&self, d: u32) -> CPoly {
        CPoly {
            dim: self.dim,
            terms: self
                .terms
                .iter()
                .filter(|(k, _)| k.degree() == d)
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        }
    }

    /// Largest coefficient modulus among terms of degree `< below`.
    pub fn max_abs_below(&self, below: u32) -> f64 {
        self.terms
            .iter()
            .filter(|(k, _)| k.degree() < below)
            .map(|(_, v)| v.norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.terms.values().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Evaluates at `z` using per-variable power tables.
    pub fn eval(&self, z: &[Complex64]) -> Complex64 {
        debug_assert_eq!(z.len(), self.dim);
        let deg = self.degree() as usize;
        let powers = power_table(z, deg);
        self.eval_with(&powers)
    }

    fn eval_with(&self, powers: &[Vec<Complex64>]) -> Complex64 {
        let mut sum = Complex64::default();
        for (k, v) in &self.terms {
            let mut m = *v;
            for (i, &e) in k.exponents().iter().enumerate() {
                if e > 0 {
                    m *= powers[i][e as usize];
                }
            }
            sum += m;
        }
        sum
    }

    /// Largest `i` such that the polynomial depends on `z_i`.
    pub fn last_variable(&self) -> Option<usize> {
        self.terms.keys().filter_map(MultiIndex::last_variable).max()
    }
}

fn power_table(z: &[Complex64], deg: usize) -> Vec<Vec<Complex64>> {
    z.iter()
        .map(|&zi| {
            let mut row = Vec::with_capacity(deg + 1);
            let mut acc = Complex64::new(1.0, 0.0);
            row.push(acc);
            for _ in 0..deg {
                acc *= zi;
                row.push(acc);
            }
            row
        })
        .collect()
}

/// An `N`-tuple of polynomials in `N` variables, viewed as a truncated map.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMap {
    components: Vec<CPoly>,
    order: u32,
}

impl PolyMap {
    pub fn new(components: Vec<CPoly>, order: u32) -> Result<Self, PolyError> {
        let n = components.len();
        for c in &components {
            if c.dim() != n {
                return Err(PolyError::DimensionMismatch {
                    left: n,
                    right: c.dim(),
                });
            }
        }
        Ok(PolyMap {
            components: components.into_iter().map(|c| c.truncate(order)).collect(),
            order,
        })
    }

    pub fn identity(dim: usize, order: u32) -> Self {
        PolyMap {
            components: (0..dim).map(|i| CPoly::var(dim, i)).collect(),
            order,
        }
    }

    /// The linear map `z -> a z`.
    pub fn linear(a: &CMatrix, order: u32) -> Self {
        let n = a.nrows();
        let components = (0..n)
            .map(|i| {
                let mut p = CPoly::zero(n);
                for j in 0..n {
                    p.add_term(MultiIndex::unit(n, j), a[(i, j)]);
                }
                p
            })
            .collect();
        PolyMap { components, order }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn components(&self) -> &[CPoly] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &CPoly {
        &self.components[i]
    }

    pub fn component_mut(&mut self, i: usize) -> &mut CPoly {
        &mut self.components[i]
    }

    /// Same map with a different truncation order; raising the order keeps
    /// the stored terms, lowering it drops terms.
    pub fn with_order(&self, order: u32) -> PolyMap {
        PolyMap {
            components: self.components.iter().map(|c| c.truncate(order)).collect(),
            order,
        }
    }

    /// Highest total degree of any stored term.
    pub fn degree(&self) -> u32 {
        self.components.iter().map(CPoly::degree).max().unwrap_or(0)
    }

    pub fn linear_part(&self) -> CMatrix {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| {
            self.components[i].coeff(&MultiIndex::unit(n, j))
        })
    }

    pub fn constant_part(&self) -> Vec<Complex64> {
        self.components.iter().map(CPoly::constant_term).collect()
    }

    /// Degree-`d` homogeneous part of each component.
    pub fn homogeneous(&self, d: u32) -> PolyMap {
        PolyMap {
            components: self.components.iter().map(|c| c.homogeneous(d)).collect(),
            order: self.order,
        }
    }

    /// Everything except the constant and linear terms.
    pub fn nonlinear_part(&self) -> PolyMap {
        PolyMap {
            components: self
                .components
                .iter()
                .map(|c| {
                    let mut out = CPoly::zero(c.dim());
                    for (k, v) in c.terms() {
                        if k.degree() >= 2 {
                            out.add_term(k.clone(), *v);
                        }
                    }
                    out
                })
                .collect(),
            order: self.order,
        }
    }

    fn check_dim(&self, other: &PolyMap) -> Result<(), PolyError> {
        if self.dim() != other.dim() {
            return Err(PolyError::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &PolyMap) -> Result<PolyMap, PolyError> {
        self.check_dim(other)?;
        let order = self.order.min(other.order);
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.add(b).map(|p| p.truncate(order)))
            .collect::<Result<_, _>>()?;
        Ok(PolyMap { components, order })
    }

    pub fn sub(&self, other: &PolyMap) -> Result<PolyMap, PolyError> {
        self.check_dim(other)?;
        let order = self.order.min(other.order);
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.sub(b).map(|p| p.truncate(order)))
            .collect::<Result<_, _>>()?;
        Ok(PolyMap { components, order })
    }

    pub fn scale(&self, c: Complex64) -> PolyMap {
        PolyMap {
            components: self.components.iter().map(|p| p.scale(c)).collect(),
            order: self.order,
        }
    }

    /// Largest coefficient modulus over all components among degrees `< below`.
    pub fn max_abs_below(&self, below: u32) -> f64 {
        self.components
            .iter()
            .map(|c| c.max_abs_below(below))
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.components.iter().map(CPoly::max_abs).fold(0.0, f64::max)
    }

    /// Coefficientwise distance to `other` (max modulus of the difference).
    pub fn distance(&self, other: &PolyMap) -> Result<f64, PolyError> {
        self.check_dim(other)?;
        let mut worst = 0.0f64;
        for (a, b) in self.components.iter().zip(&other.components) {
            worst = worst.max(a.sub(b)?.max_abs());
        }
        Ok(worst)
    }

    /// Formal composition `self ∘ inner`, truncated at degree `trunc`.
    pub fn compose(&self, inner: &PolyMap, trunc: u32) -> Result<PolyMap, PolyError> {
        map_compose(self, inner, trunc)
    }

    pub fn eval(&self, z: &[Complex64]) -> Vec<Complex64> {
        map_eval(self, z)
    }

    pub fn eval_point(&self, z: &Point) -> Point {
        Point::from_vec(map_eval(self, z.as_slice()))
    }

    /// Serializes as line records `term <component> <exponents> <re> <im>`.
    ///
    /// Floats are printed in shortest round-trip form, so `from_text`
    /// reproduces the map bit for bit.
    pub fn to_text(&self) -> String {
        let mut s = format!("polymap {} {}\n", self.dim(), self.order);
        for (i, c) in self.components.iter().enumerate() {
            for (k, v) in c.terms() {
                s.push_str(&format!("term {} {} {:?} {:?}\n", i, k, v.re, v.im));
            }
        }
        s.push_str("end\n");
        s
    }

    /// Parses the text form written by [`PolyMap::to_text`]. Lines are read
    /// until `end`; the number of consumed lines is returned alongside.
    pub fn from_text_lines<'a, I>(lines: I, line_offset: usize) -> Result<(PolyMap, usize), PolyError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let perr = |line: usize, msg: &str| PolyError::Parse {
            line,
            msg: msg.to_string(),
        };
        let mut iter = lines.into_iter().enumerate();
        let (dim, order) = loop {
            let (i, raw) = iter.next().ok_or_else(|| perr(line_offset, "missing header"))?;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 || f[0] != "polymap" {
                return Err(perr(line_offset + i + 1, "expected `polymap <dim> <order>`"));
            }
            let dim: usize = f[1].parse().map_err(|_| perr(line_offset + i + 1, "bad dimension"))?;
            let order: u32 = f[2].parse().map_err(|_| perr(line_offset + i + 1, "bad order"))?;
            if dim == 0 {
                return Err(perr(line_offset + i + 1, "dimension must be positive"));
            }
            break (dim, order);
        };
        let mut components = vec![CPoly::zero(dim); dim];
        for (i, raw) in iter {
            let lineno = line_offset + i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line == "end" {
                return Ok((PolyMap { components, order }, i + 1));
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 || f[0] != "term" {
                return Err(perr(lineno, "expected `term <i> <exps> <re> <im>`"));
            }
            let comp: usize = f[1].parse().map_err(|_| perr(lineno, "bad component"))?;
            if comp >= dim {
                return Err(perr(lineno, "component out of range"));
            }
            let exps = f[2]
                .split(',')
                .map(|e| e.parse::<u32>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| perr(lineno, "bad exponent vector"))?;
            if exps.len() != dim {
                return Err(perr(lineno, "exponent vector has wrong length"));
            }
            let re: f64 = f[3].parse().map_err(|_| perr(lineno, "bad real part"))?;
            let im: f64 = f[4].parse().map_err(|_| perr(lineno, "bad imaginary part"))?;
            let alpha = MultiIndex::new(exps);
            if alpha.degree() > order {
                return Err(perr(lineno, "term degree exceeds order"));
            }
            components[comp].set_coeff(alpha, Complex64::new(re, im));
        }
        Err(perr(line_offset, "missing `end`"))
    }

    pub fn from_text(text: &str) -> Result<PolyMap, PolyError> {
        PolyMap::from_text_lines(text.lines(), 0).map(|(m, _)| m)
    }
}

/// Coefficientwise sum of two polynomials.
pub fn poly_add(a: &CPoly, b: &CPoly) -> Result<CPoly, PolyError> {
    a.add(b)
}

/// Product truncated at degree `trunc`.
pub fn poly_mul(a: &CPoly, b: &CPoly, trunc: u32) -> Result<CPoly, PolyError> {
    a.mul(b, trunc)
}

/// Formal composition `outer ∘ inner` up to degree `trunc`. `inner` must fix
/// the origin.
pub fn map_compose(outer: &PolyMap, inner: &PolyMap, trunc: u32) -> Result<PolyMap, PolyError> {
    outer.check_dim(inner)?;
    for (i, c) in inner.components.iter().enumerate() {
        if c.constant_term() != Complex64::default() {
            return Err(PolyError::NonzeroConstantTerm(i));
        }
    }
    let n = outer.dim();
    let needed = outer.degree().min(trunc) as usize;
    // powers[var][e] = inner_var^e truncated; inner has no constant term so
    // z^e starts at degree e and anything past `trunc` is never needed.
    let mut powers: Vec<Vec<CPoly>> = Vec::with_capacity(n);
    for v in 0..n {
        let base = inner.components[v].truncate(trunc);
        let mut row = vec![CPoly::constant(n, Complex64::new(1.0, 0.0))];
        for e in 1..=needed {
            let next = row[e - 1].mul(&base, trunc)?;
            row.push(next);
        }
        powers.push(row);
    }
    let mut components = Vec::with_capacity(n);
    for comp in &outer.components {
        let mut acc = CPoly::zero(n);
        for (alpha, coef) in comp.terms() {
            if alpha.degree() > trunc {
                continue;
            }
            let mut term = CPoly::constant(n, *coef);
            for (v, &e) in alpha.exponents().iter().enumerate() {
                if e > 0 {
                    term = term.mul(&powers[v][e as usize], trunc)?;
                }
            }
            for (k, c) in term.terms() {
                acc.add_term(k.clone(), *c);
            }
        }
        components.push(acc);
    }
    Ok(PolyMap {
        components,
        order: trunc,
    })
}

/// Formal inverse `s` of `t` with `t ∘ s = s ∘ t = id` up to degree `trunc`.
///
/// Fixed-point iteration `s <- A^{-1} (z - N(s))` where `t = A + N`; each
/// pass fixes one more degree.
pub fn map_inverse_formal(t: &PolyMap, trunc: u32) -> Result<PolyMap, PolyError> {
    let n = t.dim();
    for (i, c) in t.constant_part().iter().enumerate() {
        if *c != Complex64::default() {
            return Err(PolyError::NonzeroConstantTerm(i));
        }
    }
    let a = t.linear_part();
    let a_inv = crate::linalg::invert(&a).ok_or(PolyError::SingularLinearPart)?;
    let a_inv_map = PolyMap::linear(&a_inv, trunc);
    let nonlinear = t.nonlinear_part();
    let id = PolyMap::identity(n, trunc);
    let mut s = a_inv_map.clone();
    if nonlinear.components.iter().all(CPoly::is_zero) {
        return Ok(s);
    }
    for _ in 1..trunc.max(1) {
        let ns = map_compose(&nonlinear, &s, trunc)?;
        s = map_compose(&a_inv_map, &id.sub(&ns)?, trunc)?;
    }
    Ok(s)
}

/// Evaluates each component at `z`.
pub fn map_eval(m: &PolyMap, z: &[Complex64]) -> Vec<Complex64> {
    let deg = m.degree() as usize;
    let powers = power_table(z, deg);
    m.components.iter().map(|c| c.eval_with(&powers)).collect()
}
