//! Analytic continuation of multi-valued inverse branches along paths.
//!
//! A [`BranchedMap`] is `post ∘ family ∘ pre` where `pre` and `post` are
//! single-valued and `family` applies a multi-valued generator (a logarithm
//! or an `n`-th root) coordinatewise. Branches are labelled relative to the
//! principal cuts, so a label is only meaningful at a point; what continuation
//! preserves is the germ, and the label bookkeeping in [`SheetId`] records
//! which principal-cut branch the germ coincides with.
//!
//! Sheets of the Riemann domain over the potential basin are represented
//! extensionally: a [`RiemannPoint`] is a base point plus the labels of the
//! inverse branches that pull it back into the regularity neighborhood.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::sync::Arc;

use num_complex::Complex64;
use thiserror::Error;

use crate::dynamics::{basin_membership, germ_chain, Membership};
use crate::fb_map::FbMapEvaluator;
use crate::{EvalError, Point};

pub type MapFn = Arc<dyn Fn(&Point) -> Result<Point, EvalError> + Send + Sync>;

/// Smallest step before continuation gives up.
pub const MIN_STEP: f64 = 1e-8;
/// Sampled overlap agreement required between consecutive elements.
pub const OVERLAP_TOL: f64 = 1e-9;
const OVERLAP_SAMPLES: usize = 8;
/// A nearest-branch choice is trusted while the distance to the reference
/// stays below this fraction of the gap between neighboring branches.
const AMBIGUITY_FRACTION: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContinuationError {
    #[error("continuation obstructed near {location:?} (step fell below {MIN_STEP:e})")]
    Obstruction { location: Vec<Complex64> },
    #[error("path must start inside the element's ball (distance {distance}, radius {radius})")]
    StartOutsideBall { distance: f64, radius: f64 },
    #[error("loop is not closed (gap {0:e})")]
    OpenLoop(f64),
    #[error("path is empty")]
    EmptyPath,
    #[error("label vector has length {got}, family expects {expected}")]
    LabelLength { expected: usize, got: usize },
    #[error("map has no inverse branch")]
    NoInverseBranch,
    #[error("point is not in the potential basin: {0}")]
    NotMember(String),
    #[error("base points differ by {0:e}")]
    BaseMismatch(f64),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// A multi-valued generator acting on one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    Identity,
    /// `log s + 2 pi i k`, cut along the negative reals.
    Log,
    /// `omega^k s^(1/n)` with `omega = exp(2 pi i / n)`.
    Root(u32),
}

impl Generator {
    /// Modulus of the label group: 0 for `Z`.
    pub fn modulus(self) -> u32 {
        match self {
            Generator::Root(n) => n,
            _ => 0,
        }
    }

    fn principal(self, s: Complex64) -> Result<Complex64, EvalError> {
        match self {
            Generator::Identity => Ok(s),
            Generator::Log => {
                if s == Complex64::default() {
                    Err(EvalError::Singular("log"))
                } else {
                    Ok(s.ln())
                }
            }
            Generator::Root(n) => {
                if s == Complex64::default() {
                    Err(EvalError::Singular("root"))
                } else {
                    Ok((s.ln() / n as f64).exp())
                }
            }
        }
    }

    fn on_branch(self, s: Complex64, label: i64) -> Result<Complex64, EvalError> {
        let p = self.principal(s)?;
        Ok(match self {
            Generator::Identity => p,
            Generator::Log => p + Complex64::new(0.0, TAU * label as f64),
            Generator::Root(n) => p * Complex64::from_polar(1.0, TAU * label as f64 / n as f64),
        })
    }

    /// Label of the principal-cut branch closest to `value`, with the distance
    /// to it and the gap between neighboring branches.
    fn nearest(self, s: Complex64, value: Complex64) -> Result<(i64, Complex64, f64, f64), EvalError> {
        let p = self.principal(s)?;
        Ok(match self {
            Generator::Identity => (0, p, (p - value).norm(), f64::INFINITY),
            Generator::Log => {
                let k = ((value - p).im / TAU).round();
                let v = p + Complex64::new(0.0, TAU * k);
                (k as i64, v, (v - value).norm(), TAU)
            }
            Generator::Root(n) => {
                let nf = n as f64;
                let turn = (value / p).arg() * nf / TAU;
                let k = turn.round().rem_euclid(nf);
                let v = p * Complex64::from_polar(1.0, TAU * k / nf);
                let gap = p.norm() * 2.0 * (PI / nf).sin();
                (k as i64, v, (v - value).norm(), gap)
            }
        })
    }
}

/// Coordinatewise product of generators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchFamily {
    coords: Vec<Generator>,
}

impl BranchFamily {
    pub fn new(coords: Vec<Generator>) -> Self {
        BranchFamily { coords }
    }

    /// All coordinates single-valued.
    pub fn trivial(n: usize) -> Self {
        BranchFamily::new(vec![Generator::Identity; n])
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn generators(&self) -> impl Iterator<Item = Generator> + '_ {
        self.coords.iter().copied().filter(|g| *g != Generator::Identity)
    }

    pub fn num_generators(&self) -> usize {
        self.generators().count()
    }

    pub fn moduli(&self) -> Vec<u32> {
        self.generators().map(Generator::modulus).collect()
    }

    pub fn principal_labels(&self) -> Vec<i64> {
        vec![0; self.num_generators()]
    }

    /// Value on the branch with the given labels (principal cuts).
    pub fn eval(&self, labels: &[i64], s: &Point) -> Result<Point, EvalError> {
        let mut li = labels.iter();
        let mut out = s.clone();
        for (i, g) in self.coords.iter().enumerate() {
            if *g == Generator::Identity {
                continue;
            }
            let label = *li.next().unwrap_or(&0);
            out[i] = g.on_branch(s[i], label)?;
        }
        crate::finite(out)
    }

    /// Labels of the principal-cut branch whose value at `s` is closest to
    /// `value`.
    pub fn labels_of(&self, s: &Point, value: &Point) -> Result<Vec<i64>, EvalError> {
        let mut labels = Vec::new();
        for (i, g) in self.coords.iter().enumerate() {
            if *g != Generator::Identity {
                labels.push(g.nearest(s[i], value[i])?.0);
            }
        }
        Ok(labels)
    }

    /// Value of the branch nearest to `reference`, with the worst ratio of
    /// distance-to-reference over branch gap (small means unambiguous).
    fn eval_nearest(&self, s: &Point, reference: &Point) -> Result<(Point, f64), EvalError> {
        let mut out = s.clone();
        let mut ratio = 0.0f64;
        for (i, g) in self.coords.iter().enumerate() {
            if *g == Generator::Identity {
                continue;
            }
            let (_, v, dist, gap) = g.nearest(s[i], reference[i])?;
            out[i] = v;
            ratio = ratio.max(dist / gap);
        }
        Ok((crate::finite(out)?, ratio))
    }

    /// Label vectors to try when pulling back: principal first, then
    /// neighbors (`|k| <= window` for logarithms, every root).
    pub fn candidate_labels(&self, window: i64) -> Vec<Vec<i64>> {
        let mut out: Vec<Vec<i64>> = vec![Vec::new()];
        for g in self.generators() {
            let choices: Vec<i64> = match g {
                Generator::Log => {
                    let mut v = vec![0];
                    for k in 1..=window {
                        v.push(k);
                        v.push(-k);
                    }
                    v
                }
                Generator::Root(n) => (0..n as i64).collect(),
                Generator::Identity => vec![0],
            };
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    choices.iter().map(move |c| {
                        let mut p = prefix.clone();
                        p.push(*c);
                        p
                    })
                })
                .collect();
        }
        out
    }
}

/// `post ∘ family ∘ pre`.
#[derive(Clone)]
pub struct BranchedMap {
    pub pre: Option<MapFn>,
    pub family: BranchFamily,
    pub post: Option<MapFn>,
    /// Right inverse of `post`, used to recover labels from known preimages.
    pub post_inverse: Option<MapFn>,
}

impl std::fmt::Debug for BranchedMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BranchedMap")
            .field("family", &self.family)
            .field("pre", &self.pre.is_some())
            .field("post", &self.post.is_some())
            .finish()
    }
}

impl BranchedMap {
    /// A single-valued map.
    pub fn single_valued(dim: usize, f: MapFn) -> Self {
        BranchedMap {
            pre: Some(f),
            family: BranchFamily::trivial(dim),
            post: None,
            post_inverse: None,
        }
    }

    pub fn apply_pre(&self, x: &Point) -> Result<Point, EvalError> {
        match &self.pre {
            Some(f) => f(x),
            None => Ok(x.clone()),
        }
    }

    pub fn apply_post(&self, y: &Point) -> Result<Point, EvalError> {
        match &self.post {
            Some(f) => f(y),
            None => Ok(y.clone()),
        }
    }

    pub fn num_generators(&self) -> usize {
        self.family.num_generators()
    }

    pub fn eval(&self, labels: &[i64], x: &Point) -> Result<Point, EvalError> {
        let s = self.apply_pre(x)?;
        let v = self.family.eval(labels, &s)?;
        self.apply_post(&v)
    }

    pub fn eval_principal(&self, x: &Point) -> Result<Point, EvalError> {
        self.eval(&self.family.principal_labels(), x)
    }

    /// Labels of the branch sending `x` to the known preimage `target`.
    pub fn labels_for(&self, x: &Point, target: &Point) -> Result<Vec<i64>, EvalError> {
        if self.num_generators() == 0 {
            return Ok(Vec::new());
        }
        let s = self.apply_pre(x)?;
        if let Some(inv) = &self.post_inverse {
            let v = inv(target)?;
            return self.family.labels_of(&s, &v);
        }
        let mut best: Option<(f64, Vec<i64>)> = None;
        for labels in self.family.candidate_labels(8) {
            if let Ok(y) = self.eval(&labels, x) {
                let d = (y - target).norm();
                if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                    best = Some((d, labels));
                }
            }
        }
        best.map(|(_, l)| l)
            .ok_or(EvalError::OutsideDomain("no branch reaches the target".into()))
    }
}

/// Branch labels, one per multi-valued generator instance; root labels are
/// reduced modulo their order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct SheetId {
    indices: Vec<i64>,
    moduli: Vec<u32>,
}

impl SheetId {
    pub fn new(indices: Vec<i64>, moduli: Vec<u32>) -> Self {
        assert_eq!(indices.len(), moduli.len());
        let indices = indices
            .into_iter()
            .zip(&moduli)
            .map(|(k, &m)| if m > 0 { k.rem_euclid(m as i64) } else { k })
            .collect();
        SheetId { indices, moduli }
    }

    pub fn trivial() -> Self {
        SheetId::default()
    }

    pub fn indices(&self) -> &[i64] {
        &self.indices
    }

    pub fn moduli(&self) -> &[u32] {
        &self.moduli
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.indices.iter().all(|&k| k == 0)
    }

    /// `self - before`, componentwise in each label group.
    pub fn delta(&self, before: &SheetId) -> SheetId {
        assert_eq!(self.moduli, before.moduli, "sheet ids from different families");
        SheetId::new(
            self.indices.iter().zip(&before.indices).map(|(a, b)| a - b).collect(),
            self.moduli.clone(),
        )
    }

    pub fn add(&self, other: &SheetId) -> SheetId {
        assert_eq!(self.moduli, other.moduli, "sheet ids from different families");
        SheetId::new(
            self.indices.iter().zip(&other.indices).map(|(a, b)| a + b).collect(),
            self.moduli.clone(),
        )
    }

    pub fn concat(&self, other: &SheetId) -> SheetId {
        let mut indices = self.indices.clone();
        indices.extend_from_slice(&other.indices);
        let mut moduli = self.moduli.clone();
        moduli.extend_from_slice(&other.moduli);
        SheetId { indices, moduli }
    }

    /// Labels of pullback level `level` when each level has `per_level`
    /// generators.
    pub fn level(&self, level: usize, per_level: usize) -> &[i64] {
        &self.indices[level * per_level..(level + 1) * per_level]
    }
}

impl std::fmt::Display for SheetId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self
            .indices
            .iter()
            .zip(&self.moduli)
            .map(|(k, m)| if *m > 0 { format!("{k}/{m}") } else { k.to_string() })
            .collect();
        write!(f, "[{}]", parts.join(","))
    }
}

/// A germ of a branched map on a ball, fixed by its family value at the
/// center.
#[derive(Debug, Clone)]
pub struct MapElement {
    pub center: Point,
    pub radius: f64,
    pub map: Arc<BranchedMap>,
    pub branch_state: SheetId,
    /// Family-level value (before `post`) at the center.
    pub center_value: Point,
}

impl MapElement {
    /// The element of the branch with `labels` at `center`.
    pub fn new(map: Arc<BranchedMap>, center: Point, radius: f64, labels: &[i64]) -> Result<Self, ContinuationError> {
        if labels.len() != map.num_generators() {
            return Err(ContinuationError::LabelLength {
                expected: map.num_generators(),
                got: labels.len(),
            });
        }
        let s = map.apply_pre(&center)?;
        let center_value = map.family.eval(labels, &s)?;
        let branch_state = SheetId::new(labels.to_vec(), map.family.moduli());
        Ok(MapElement {
            center,
            radius,
            map,
            branch_state,
            center_value,
        })
    }

    /// Family-level value at `x` together with the ambiguity ratio.
    fn family_value(&self, x: &Point) -> Result<(Point, f64), EvalError> {
        let s = self.map.apply_pre(x)?;
        self.map.family.eval_nearest(&s, &self.center_value)
    }

    /// Value of this germ at `x` (family value followed by `post`).
    pub fn eval(&self, x: &Point) -> Result<Point, EvalError> {
        let (v, _) = self.family_value(x)?;
        self.map.apply_post(&v)
    }

    /// Family-level value at `x` (no `post`).
    pub fn eval_family(&self, x: &Point) -> Result<Point, EvalError> {
        Ok(self.family_value(x)?.0)
    }

    /// Post-processed value at the center.
    pub fn value(&self) -> Result<Point, EvalError> {
        self.map.apply_post(&self.center_value)
    }

    /// Labels of the branch at the center.
    pub fn labels(&self) -> &[i64] {
        self.branch_state.indices()
    }
}

/// A chain of overlapping elements following a polyline.
#[derive(Debug, Clone)]
pub struct GermPath {
    pub path: Vec<Point>,
    pub elements: Vec<MapElement>,
    /// Index into `elements` of the element centered at each path vertex.
    pub vertex_elements: Vec<usize>,
    pub start_sheet: SheetId,
    pub end_sheet: SheetId,
}

impl GermPath {
    pub fn end(&self) -> &MapElement {
        self.elements.last().expect("germ path is never empty")
    }

    /// Audit listing: one line per element with center, radius, sheet and the
    /// family value at the center.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "germ_path elements={} start_sheet={} end_sheet={}\n",
            self.elements.len(),
            self.start_sheet,
            self.end_sheet
        );
        for (i, e) in self.elements.iter().enumerate() {
            let _ = writeln!(
                s,
                "element {i} center={} radius={:?} sheet={} value={}",
                fmt_point(&e.center),
                e.radius,
                e.branch_state,
                fmt_point(&e.center_value)
            );
        }
        s
    }
}

pub(crate) fn fmt_point(p: &Point) -> String {
    let parts: Vec<String> = p.iter().map(|z| format!("{:?}{:+?}i", z.re, z.im)).collect();
    format!("({})", parts.join(","))
}

/// Fixed unit directions used to probe balls and lenses.
fn probe_directions(n: usize) -> Vec<Point> {
    (0..OVERLAP_SAMPLES)
        .map(|k| {
            let v = Point::from_fn(n, |j, _| {
                let w = 1.0 / (1.0 + j as f64);
                Complex64::from_polar(w, TAU * k as f64 / OVERLAP_SAMPLES as f64 + 0.7 * j as f64)
            });
            let norm = v.norm();
            v / Complex64::new(norm, 0.0)
        })
        .collect()
}

/// Tries to place an element at `center` continuing `prev`; `None` when the
/// step must shrink.
fn try_step(prev: &MapElement, center: &Point, radius: f64, dirs: &[Point]) -> Option<MapElement> {
    let (value, ratio) = prev.family_value(center).ok()?;
    if ratio > AMBIGUITY_FRACTION {
        return None;
    }
    let s = prev.map.apply_pre(center).ok()?;
    let labels = prev.map.family.labels_of(&s, &value).ok()?;
    let next = MapElement {
        center: center.clone(),
        radius,
        map: prev.map.clone(),
        branch_state: SheetId::new(labels, prev.map.family.moduli()),
        center_value: value,
    };
    // The new germ must be unambiguous on its own ball.
    for d in dirs {
        let x = center + d * Complex64::new(radius, 0.0);
        match next.family_value(&x) {
            Ok((_, r)) if r <= AMBIGUITY_FRACTION => {}
            _ => return None,
        }
    }
    // Sampled agreement on the lens between the two balls.
    let mid = (center + &prev.center) * Complex64::new(0.5, 0.0);
    let off = 0.2 * radius.min(prev.radius);
    for d in dirs {
        let x = &mid + d * Complex64::new(off, 0.0);
        let a = prev.family_value(&x).ok()?.0;
        let b = next.family_value(&x).ok()?.0;
        if (a - b).norm() > OVERLAP_TOL {
            return None;
        }
    }
    Some(next)
}

/// Continues `start` along the polyline `path`, halving the step whenever the
/// sampled overlap agreement fails.
pub fn continue_along_path(start: &MapElement, path: &[Point], max_step: f64) -> Result<GermPath, ContinuationError> {
    let first = path.first().ok_or(ContinuationError::EmptyPath)?;
    let distance = (first - &start.center).norm();
    if distance > start.radius {
        return Err(ContinuationError::StartOutsideBall {
            distance,
            radius: start.radius,
        });
    }
    let dirs = probe_directions(start.center.len());
    let mut elements = vec![start.clone()];
    let mut vertex_elements = Vec::with_capacity(path.len());
    let mut cur = start.clone();
    if distance > 0.0 {
        cur = try_step(start, first, start.radius.min(max_step).max(distance), &dirs).ok_or_else(|| {
            ContinuationError::Obstruction {
                location: first.iter().copied().collect(),
            }
        })?;
        elements.push(cur.clone());
    }
    vertex_elements.push(elements.len() - 1);
    let mut step = cur.radius.min(max_step);
    for target in path.iter().skip(1) {
        loop {
            let remaining = (target - &cur.center).norm();
            if remaining == 0.0 {
                break;
            }
            step = step.min(max_step).min(1.5 * cur.radius);
            let h = step.min(remaining);
            let center = if h >= remaining {
                target.clone()
            } else {
                &cur.center + (target - &cur.center) * Complex64::new(h / remaining, 0.0)
            };
            match try_step(&cur, &center, h, &dirs) {
                Some(next) => {
                    elements.push(next.clone());
                    cur = next;
                    step = 1.5 * h;
                }
                None => {
                    step = 0.5 * h;
                    if step < MIN_STEP {
                        return Err(ContinuationError::Obstruction {
                            location: cur.center.iter().copied().collect(),
                        });
                    }
                }
            }
        }
        vertex_elements.push(elements.len() - 1);
    }
    let end_sheet = elements.last().expect("nonempty").branch_state.clone();
    Ok(GermPath {
        path: path.to_vec(),
        start_sheet: start.branch_state.clone(),
        end_sheet,
        elements,
        vertex_elements,
    })
}

/// Label change after continuing `start` once around the closed polyline
/// `lp`.
pub fn monodromy(start: &MapElement, lp: &[Point], max_step: f64) -> Result<SheetId, ContinuationError> {
    let (first, last) = match (lp.first(), lp.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(ContinuationError::EmptyPath),
    };
    let gap = (first - last).norm();
    if gap > 1e-12 * (1.0 + first.norm()) {
        return Err(ContinuationError::OpenLoop(gap));
    }
    let gp = continue_along_path(start, lp, max_step)?;
    Ok(gp.end_sheet.delta(&gp.start_sheet))
}

/// Polyline approximation of the circle `center + r e^{i theta}` in
/// coordinate `coord` (other coordinates fixed at `base`), traversed `turns`
/// times, starting at angle `theta0`.
pub fn circle_loop(base: &Point, coord: usize, center: Complex64, r: f64, theta0: f64, turns: i32, segments: usize) -> Vec<Point> {
    let total = segments * turns.unsigned_abs() as usize;
    let sign = if turns < 0 { -1.0 } else { 1.0 };
    (0..=total)
        .map(|k| {
            let theta = theta0 + sign * TAU * k as f64 / segments as f64;
            let mut p = base.clone();
            p[coord] = center + Complex64::from_polar(r, theta);
            p
        })
        .collect()
}

/// A point of the Riemann domain: base point in the basin plus the branch
/// labels of a pullback chain into the regularity neighborhood.
#[derive(Debug, Clone)]
pub struct RiemannPoint {
    pub base: Point,
    /// Level-major labels, `generators_per_level` entries per level.
    pub sheet: SheetId,
    /// Number of pullback steps.
    pub level: usize,
    pub psi_value: Point,
}

impl RiemannPoint {
    pub fn level_labels(&self, level: usize) -> &[i64] {
        let per = self.sheet.len().checked_div(self.level).unwrap_or(0);
        self.sheet.level(level, per)
    }
}

/// Follows the labelled pullback chain from `base`: `x_{i+1} = F_{labels_i}(x_i)`.
pub fn pullback_chain(map: &BranchedMap, base: &Point, sheet: &SheetId, level: usize) -> Result<Vec<Point>, EvalError> {
    let per = map.num_generators();
    let mut pts = vec![base.clone()];
    for i in 0..level {
        let labels = sheet.level(i, per);
        let next = map.eval(labels, pts.last().expect("nonempty"))?;
        pts.push(next);
    }
    Ok(pts)
}

/// Lifts `gamma` (a polyline in the basin starting at `start.base`) to the
/// Riemann domain, continuing every level of the start point's pullback
/// chain. Levels are appended on the principal branch until the whole lifted
/// path sits in the regularity neighborhood.
pub fn lift_path(e: &FbMapEvaluator, gamma: &[Point], start: &RiemannPoint, max_step: f64) -> Result<Vec<RiemannPoint>, ContinuationError> {
    let first = gamma.first().ok_or(ContinuationError::EmptyPath)?;
    let gap = (first - &start.base).norm();
    if gap > 1e-9 * (1.0 + first.norm()) {
        return Err(ContinuationError::BaseMismatch(gap));
    }
    let inv = e.h.inverse.clone().ok_or(ContinuationError::NoInverseBranch)?;
    let per = inv.num_generators();
    let moduli_one = inv.family.moduli();
    // Current level path and, for each gamma vertex, its index in that path.
    let mut level_path: Vec<Point> = gamma.to_vec();
    let mut idx: Vec<usize> = (0..gamma.len()).collect();
    let mut labels_per_vertex: Vec<Vec<i64>> = vec![Vec::new(); gamma.len()];
    let mut level = 0;
    let max_levels = start.level.max(1) + e.k_max;
    loop {
        let enough = level >= start.level;
        if enough && idx.iter().all(|&i| e.nbhd.contains(&level_path[i])) {
            break;
        }
        if level >= max_levels {
            return Err(ContinuationError::NotMember(
                "lifted path never settles into the regularity neighborhood".into(),
            ));
        }
        let labels0 = if level < start.level {
            start.level_labels(level).to_vec()
        } else {
            vec![0; per]
        };
        let elem = MapElement::new(inv.clone(), level_path[0].clone(), max_step, &labels0)?;
        let gp = continue_along_path(&elem, &level_path, max_step)?;
        let next_path: Vec<Point> = gp
            .elements
            .iter()
            .map(MapElement::value)
            .collect::<Result<_, _>>()?;
        for (g, i) in idx.iter_mut().enumerate() {
            let el = gp.vertex_elements[*i];
            labels_per_vertex[g].extend_from_slice(gp.elements[el].labels());
            *i = el;
        }
        level_path = next_path;
        level += 1;
    }
    let moduli: Vec<u32> = (0..level).flat_map(|_| moduli_one.iter().copied()).collect();
    gamma
        .iter()
        .zip(idx)
        .zip(labels_per_vertex)
        .map(|((base, i), labels)| {
            let psi = e.psi_from_level(&level_path[i], level).map_err(EvalError::from)?;
            Ok(RiemannPoint {
                base: base.clone(),
                sheet: SheetId::new(labels, moduli.clone()),
                level,
                psi_value: psi,
            })
        })
        .collect()
}

/// Points of the Riemann domain over `p`: every first-level branch (log labels
/// in `-depth..=depth`, all roots) completed by a pullback chain into the
/// regularity neighborhood. Sheets with coinciding `Psi` values are merged.
pub fn fiber_enumerate(e: &FbMapEvaluator, p: &Point, depth: i64, newton_tol: f64) -> Result<Vec<RiemannPoint>, ContinuationError> {
    let inv = e.h.inverse.clone().ok_or(ContinuationError::NoInverseBranch)?;
    let per = inv.num_generators();
    let moduli_one = inv.family.moduli();
    let mut out: Vec<RiemannPoint> = Vec::new();
    for first in inv.family.candidate_labels(depth) {
        let x1 = match inv.eval(&first, p) {
            Ok(x) => x,
            Err(_) => continue,
        };
        let m = basin_membership(&e.h, &e.nbhd, &x1, e.k_max, newton_tol);
        let (level, labels) = match m {
            Membership::Member { level, labels, .. } => (level, labels),
            _ => match germ_chain(&e.h, &e.nbhd, &x1, e.k_max, newton_tol) {
                Some(found) => found,
                None => continue,
            },
        };
        let mut all = first.clone();
        all.extend_from_slice(&labels);
        let total = level + 1;
        let moduli: Vec<u32> = (0..total).flat_map(|_| moduli_one.iter().copied()).collect();
        let sheet = SheetId::new(all, moduli);
        debug_assert_eq!(sheet.len(), per * total);
        let x = RiemannPoint {
            base: p.clone(),
            sheet,
            level: total,
            psi_value: Point::zeros(p.len()),
        };
        let psi = match e.psi_eval_on_sheet(&x) {
            Ok(v) => v,
            Err(_) => continue,
        };
        let scale = 1.0 + psi.norm();
        if out.iter().any(|o| (&o.psi_value - &psi).norm() <= 1e-9 * scale) {
            continue;
        }
        out.push(RiemannPoint { psi_value: psi, ..x });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityReport {
    pub psi_distance: f64,
    pub base_distance: f64,
    /// Whether `||Psi(x1) - Psi(x2)|| < tol`.
    pub antecedent: bool,
    pub passed: bool,
}

/// `Psi(x1) = Psi(x2) => pi(x1) = pi(x2)`, checked as: if the `Psi` values
/// are within `tol`, the bases must be within `10 tol`.
pub fn compatibility_check(x1: &RiemannPoint, x2: &RiemannPoint, tol: f64) -> CompatibilityReport {
    let psi_distance = (&x1.psi_value - &x2.psi_value).norm();
    let base_distance = (&x1.base - &x2.base).norm();
    let antecedent = psi_distance < tol;
    CompatibilityReport {
        psi_distance,
        base_distance,
        antecedent,
        passed: !antecedent || base_distance < 10.0 * tol,
    }
}
