//! Binary tree vertices, the tree metric, and the horizontally contracted
//! metric `d_eps` on truncations of the infinite binary tree.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_traits::{One, Signed};
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::metric::{ExactMetric, Metric};
use crate::rational::{self, Rational};

/// Largest depth representable by [`TreeVertex`].
pub const MAX_REPRESENTABLE_DEPTH: usize = 127;
pub const DEFAULT_MAX_DEPTH: usize = 64;

/// A vertex of the infinite binary tree, addressed by its root path.
///
/// The path is stored left-aligned in a `u128` (step `i` at bit `127 - i`), so
/// the lca is a leading-zeros count. Ordering is by depth, then path, which is
/// BFS order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TreeVertex {
    depth: u8,
    bits: u128,
}

impl TreeVertex {
    pub const ROOT: TreeVertex = TreeVertex { depth: 0, bits: 0 };

    pub fn root() -> Self {
        Self::ROOT
    }

    /// Builds a vertex from its first `depth` path bits, given right-aligned in
    /// `path` (most significant of those bits is the first step).
    pub fn from_path(path: u128, depth: usize) -> Self {
        assert!(depth <= MAX_REPRESENTABLE_DEPTH);
        if depth == 0 {
            return Self::ROOT;
        }
        let masked = if depth == 128 { path } else { path & ((1u128 << depth) - 1) };
        Self { depth: depth as u8, bits: masked << (128 - depth) }
    }

    pub fn depth(&self) -> usize {
        self.depth as usize
    }

    /// The path as a right-aligned integer.
    pub fn path(&self) -> u128 {
        if self.depth == 0 {
            0
        } else {
            self.bits >> (128 - self.depth as u32)
        }
    }

    /// Step `i` of the root path (`i < depth`).
    pub fn step(&self, i: usize) -> u8 {
        debug_assert!(i < self.depth());
        ((self.bits >> (127 - i)) & 1) as u8
    }

    pub fn child(&self, bit: u8) -> Self {
        assert!(self.depth() < MAX_REPRESENTABLE_DEPTH, "tree depth overflow");
        let d = self.depth as u32;
        Self { depth: self.depth + 1, bits: self.bits | ((bit as u128 & 1) << (127 - d)) }
    }

    pub fn parent(&self) -> Option<Self> {
        (self.depth > 0).then(|| self.ancestor_at(self.depth() - 1))
    }

    /// The ancestor at depth `d <= depth` (the vertex itself when equal).
    pub fn ancestor_at(&self, d: usize) -> Self {
        assert!(d <= self.depth());
        if d == 0 {
            return Self::ROOT;
        }
        let mask = !0u128 << (128 - d);
        Self { depth: d as u8, bits: self.bits & mask }
    }

    /// Extends the path with zeros down to depth `d`; ancestors for `d <= depth`.
    pub fn along_zeros(&self, d: usize) -> Self {
        assert!(d <= MAX_REPRESENTABLE_DEPTH);
        if d <= self.depth() {
            self.ancestor_at(d)
        } else {
            Self { depth: d as u8, bits: self.bits }
        }
    }

    /// The sibling subtree root: same parent, other child.
    pub fn sibling(&self) -> Option<Self> {
        (self.depth > 0).then(|| Self { depth: self.depth, bits: self.bits ^ (1u128 << (128 - self.depth as u32)) })
    }

    /// Non-strict: a vertex is its own ancestor.
    pub fn is_ancestor_of(&self, other: &Self) -> bool {
        self.depth <= other.depth && other.ancestor_at(self.depth()) == *self
    }

    pub fn lca_depth(&self, other: &Self) -> usize {
        let common = (self.bits ^ other.bits).leading_zeros() as usize;
        common.min(self.depth()).min(other.depth())
    }

    pub fn lca(&self, other: &Self) -> Self {
        self.ancestor_at(self.lca_depth(other))
    }

    pub fn random<R: Rng + ?Sized>(depth: usize, rng: &mut R) -> Self {
        Self::from_path(rng.gen::<u128>(), depth)
    }

    pub fn to_bit_string(&self) -> String {
        (0..self.depth()).map(|i| if self.step(i) == 1 { '1' } else { '0' }).collect()
    }
}

impl fmt::Debug for TreeVertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v\"{}\"", self.to_bit_string())
    }
}

impl fmt::Display for TreeVertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bit_string())
    }
}

impl FromStr for TreeVertex {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.len() > MAX_REPRESENTABLE_DEPTH {
            return Err(Error::DepthExceeded { depth: s.len(), max: MAX_REPRESENTABLE_DEPTH });
        }
        let mut v = Self::ROOT;
        for c in s.chars() {
            v = match c {
                '0' => v.child(0),
                '1' => v.child(1),
                _ => return Err(Error::Parse(format!("bad vertex path {s:?}"))),
            };
        }
        Ok(v)
    }
}

impl Serialize for TreeVertex {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_bit_string())
    }
}

impl<'de> Deserialize<'de> for TreeVertex {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `h(x) + h(y) - 2 h(lca(x, y))`.
pub fn tree_distance(x: &TreeVertex, y: &TreeVertex) -> u64 {
    (x.depth() + y.depth() - 2 * x.lca_depth(y)) as u64
}

/// The tree metric on the infinite binary tree.
#[derive(Clone, Copy, Debug, Default)]
pub struct TreeMetric;

impl Metric for TreeMetric {
    type Point = TreeVertex;
    fn distance(&self, a: &TreeVertex, b: &TreeVertex) -> f64 {
        tree_distance(a, b) as f64
    }
}

impl ExactMetric for TreeMetric {
    fn distance_exact(&self, a: &TreeVertex, b: &TreeVertex) -> Rational {
        rational::int(tree_distance(a, b) as i64)
    }
}

/// A validated contraction schedule `eps_0..=eps_N`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsilonSequence {
    values: Vec<Rational>,
    floats: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonViolationKind {
    NotPositive,
    AboveOne,
    /// `eps_n > eps_{n-1}`.
    Increasing,
    /// `n eps_n < (n-1) eps_{n-1}`.
    ProductDecreasing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpsilonViolation {
    pub index: usize,
    pub kind: EpsilonViolationKind,
}

/// Accepts `raw` iff every value lies in `(0, 1]`, the sequence is
/// non-increasing and `n eps_n` is non-decreasing. On rejection, reports the
/// first offending index for each kind of violation.
pub fn validate_epsilon(raw: Vec<Rational>) -> std::result::Result<EpsilonSequence, Vec<EpsilonViolation>> {
    use EpsilonViolationKind::*;
    let mut found: Vec<EpsilonViolation> = Vec::new();
    let mut note = |index: usize, kind| {
        if !found.iter().any(|v| v.kind == kind) {
            found.push(EpsilonViolation { index, kind });
        }
    };
    if raw.is_empty() {
        note(0, NotPositive);
    }
    for (n, e) in raw.iter().enumerate() {
        if !e.is_positive() {
            note(n, NotPositive);
        }
        if *e > Rational::one() {
            note(n, AboveOne);
        }
        if n > 0 {
            if *e > raw[n - 1] {
                note(n, Increasing);
            }
            if rational::int(n as i64) * e < rational::int(n as i64 - 1) * &raw[n - 1] {
                note(n, ProductDecreasing);
            }
        }
    }
    if found.is_empty() {
        let floats = raw.iter().map(rational::to_f64).collect();
        Ok(EpsilonSequence { values: raw, floats })
    } else {
        found.sort_by_key(|v| v.index);
        Err(found)
    }
}

impl EpsilonSequence {
    pub fn constant(c: Rational, max_index: usize) -> Result<Self> {
        validate_epsilon(vec![c; max_index + 1])
            .map_err(|v| Error::PreconditionViolated(format!("invalid constant schedule: {v:?}")))
    }

    /// Largest supported index `N`.
    pub fn max_index(&self) -> usize {
        self.values.len() - 1
    }

    pub fn values(&self) -> &[Rational] {
        &self.values
    }

    pub fn get(&self, n: usize) -> Result<&Rational> {
        self.values.get(n).ok_or(Error::DepthExceeded { depth: n, max: self.max_index() })
    }

    #[inline]
    pub fn at(&self, n: usize) -> &Rational {
        &self.values[n]
    }

    #[inline]
    pub fn at_f64(&self, n: usize) -> f64 {
        self.floats[n]
    }

    /// Every value is strictly below 1/4.
    pub fn classifier_ready(&self) -> bool {
        let quarter = rational::ratio(1, 4);
        self.values.iter().all(|e| *e < quarter)
    }

    /// Least common denominator of all values, if it fits in 64 bits.
    pub fn common_denominator(&self) -> Option<u64> {
        use num_integer::Integer;
        use num_traits::ToPrimitive;
        let mut l = BigInt::one();
        for e in &self.values {
            l = l.lcm(e.denom());
        }
        l.to_u64()
    }
}

/// `eps_n = 1/s(n)` with `s(n)` rounded to a multiple of `1/10^6`. The growth
/// hypothesis (`s >= 4`, `s` and `n/s(n)` non-decreasing) is checked on the
/// rounded values.
pub fn epsilon_from_growth(s: impl Fn(usize) -> f64, max_index: usize) -> Result<EpsilonSequence> {
    let vals: Vec<Rational> = (0..=max_index).map(|n| rational::rationalize(s(n), 1_000_000)).collect();
    epsilon_from_rational_growth(&vals)
}

pub fn epsilon_from_rational_growth(s: &[Rational]) -> Result<EpsilonSequence> {
    let four = rational::int(4);
    for (n, v) in s.iter().enumerate() {
        if *v < four {
            return Err(Error::HypothesisViolated(n));
        }
        if n > 0 {
            let prev = &s[n - 1];
            let nn = rational::int(n as i64);
            if v < prev || &nn * prev < (nn - Rational::one()) * v {
                return Err(Error::HypothesisViolated(n));
            }
        }
    }
    if s.is_empty() {
        return Err(Error::HypothesisViolated(0));
    }
    validate_epsilon(s.iter().map(|v| v.recip()).collect())
        .map_err(|v| Error::PreconditionViolated(format!("derived schedule invalid: {v:?}")))
}

/// The H-tree metric `d_eps` truncated at `max_depth`.
#[derive(Clone, Debug, PartialEq)]
pub struct HTreeSpace {
    eps: EpsilonSequence,
    max_depth: usize,
}

#[derive(Serialize, Deserialize)]
struct HTreeSpaceJson {
    #[serde(with = "rational::serde_vec")]
    eps: Vec<Rational>,
    max_depth: usize,
}

impl HTreeSpace {
    pub fn new(eps: EpsilonSequence, max_depth: usize) -> Result<Self> {
        if max_depth > eps.max_index() {
            return Err(Error::DepthExceeded { depth: max_depth, max: eps.max_index() });
        }
        if max_depth > MAX_REPRESENTABLE_DEPTH {
            return Err(Error::DepthExceeded { depth: max_depth, max: MAX_REPRESENTABLE_DEPTH });
        }
        Ok(Self { eps, max_depth })
    }

    /// Constant schedule `eps_n = c` up to `max_depth`.
    pub fn constant(c: Rational, max_depth: usize) -> Result<Self> {
        Self::new(EpsilonSequence::constant(c, max_depth)?, max_depth)
    }

    pub fn eps(&self) -> &EpsilonSequence {
        &self.eps
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn classifier_ready(&self) -> bool {
        self.eps.classifier_ready()
    }

    pub fn check(&self, v: &TreeVertex) -> Result<()> {
        if v.depth() > self.max_depth {
            Err(Error::DepthExceeded { depth: v.depth(), max: self.max_depth })
        } else {
            Ok(())
        }
    }

    /// `|h(y)-h(x)| + 2 eps_m (m - h(lca))` with `m = min(h(x), h(y))`.
    pub fn distance(&self, x: &TreeVertex, y: &TreeVertex) -> Result<Rational> {
        self.check(x)?;
        self.check(y)?;
        Ok(self.d(x, y))
    }

    /// Unchecked exact distance.
    pub fn d(&self, x: &TreeVertex, y: &TreeVertex) -> Rational {
        let (hx, hy) = (x.depth(), y.depth());
        let m = hx.min(hy);
        let l = x.lca_depth(y);
        let vertical = rational::int(hx.abs_diff(hy) as i64);
        if m == l {
            return vertical;
        }
        vertical + self.eps.at(m) * rational::int(2 * (m - l) as i64)
    }

    /// Unchecked floating distance.
    #[inline]
    pub fn d_f64(&self, x: &TreeVertex, y: &TreeVertex) -> f64 {
        let (hx, hy) = (x.depth(), y.depth());
        let m = hx.min(hy);
        let l = x.lca_depth(y);
        hx.abs_diff(hy) as f64 + 2.0 * self.eps.at_f64(m) * (m - l) as f64
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(HTreeSpaceJson { eps: self.eps.values.clone(), max_depth: self.max_depth }).unwrap()
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let raw: HTreeSpaceJson = serde_json::from_value(v.clone()).map_err(|e| Error::Parse(e.to_string()))?;
        let eps = validate_epsilon(raw.eps).map_err(|v| Error::PreconditionViolated(format!("invalid eps: {v:?}")))?;
        Self::new(eps, raw.max_depth)
    }
}

impl Metric for HTreeSpace {
    type Point = TreeVertex;
    fn distance(&self, a: &TreeVertex, b: &TreeVertex) -> f64 {
        self.d_f64(a, b)
    }
}

impl ExactMetric for HTreeSpace {
    fn distance_exact(&self, a: &TreeVertex, b: &TreeVertex) -> Rational {
        self.d(a, b)
    }
}

pub const ENUMERATION_LIMIT: usize = 20;

/// All vertices of `B_n` in BFS order.
pub fn enumerate_bn(n: usize) -> Result<Vec<TreeVertex>> {
    if n > ENUMERATION_LIMIT {
        return Err(Error::TooLarge { what: "tree depth", value: n, limit: ENUMERATION_LIMIT });
    }
    let mut out = Vec::with_capacity((1usize << (n + 1)) - 1);
    for d in 0..=n {
        for p in 0..(1u128 << d) {
            out.push(TreeVertex::from_path(p, d));
        }
    }
    Ok(out)
}

/// Index of `v` in the BFS order of [`enumerate_bn`].
pub fn bfs_index(v: &TreeVertex) -> usize {
    (1usize << v.depth()) - 1 + v.path() as usize
}

pub fn leaves(n: usize) -> impl Iterator<Item = TreeVertex> {
    (0..(1u128 << n)).map(move |p| TreeVertex::from_path(p, n))
}

pub fn internal_vertices(n: usize) -> impl Iterator<Item = TreeVertex> {
    (0..n).flat_map(|d| (0..(1u128 << d)).map(move |p| TreeVertex::from_path(p, d)))
}

/// Pairs `(ancestor, descendant)` with the ancestor strict, in BFS order of the
/// ancestor, then of the descendant.
pub fn sp_pairs(n: usize) -> impl Iterator<Item = (TreeVertex, TreeVertex)> {
    internal_vertices(n).flat_map(move |a| {
        ((a.depth() + 1)..=n).flat_map(move |d| {
            let span = d - a.depth();
            (0..(1u128 << span)).map(move |suffix| (a, TreeVertex::from_path((a.path() << span) | suffix, d)))
        })
    })
}

/// `(x, y, z)` with `h(z) <= h(y) <= h(x)`, `x` in the subtree of `y`, and
/// `z` outside it.
pub fn is_path_type(x: &TreeVertex, y: &TreeVertex, z: &TreeVertex) -> bool {
    z.depth() <= y.depth() && y.depth() <= x.depth() && y.is_ancestor_of(x) && z.lca_depth(y) < y.depth()
}

/// `(x, y, z)` with `h(y) <= h(z)`, `y` in the subtree of `x`, and `z` outside it.
pub fn is_tent_type(x: &TreeVertex, y: &TreeVertex, z: &TreeVertex) -> bool {
    y.depth() <= z.depth() && x.is_ancestor_of(y) && x.lca_depth(z) < x.depth()
}

/// Both sides of a verified stitching inequality, `lhs <= rhs`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StitchBound {
    #[serde(with = "rational::serde_str")]
    pub lhs: Rational,
    #[serde(with = "rational::serde_str")]
    pub rhs: Rational,
}

fn checked_bound(lhs: Rational, rhs: Rational, what: &str) -> Result<StitchBound> {
    if lhs <= rhs {
        Ok(StitchBound { lhs, rhs })
    } else {
        Err(Error::PreconditionViolated(format!(
            "{what} bound failed: {} > {}",
            rational::format(&lhs),
            rational::format(&rhs)
        )))
    }
}

/// For `y` an ancestor of `x` and `y'` of `x'` with equal depth gaps:
/// `d(y, y') <= d(x, x')`.
pub fn stitch_ancestor(
    x: &TreeVertex,
    xp: &TreeVertex,
    y: &TreeVertex,
    yp: &TreeVertex,
    space: &HTreeSpace,
) -> Result<StitchBound> {
    for v in [x, xp, y, yp] {
        space.check(v)?;
    }
    if !y.is_ancestor_of(x) || !yp.is_ancestor_of(xp) || x.depth() - y.depth() != xp.depth() - yp.depth() {
        return Err(Error::PreconditionViolated("stitch_ancestor needs matching ancestor pairs".into()));
    }
    checked_bound(space.d(y, yp), space.d(x, xp), "ancestor stitching")
}

/// For `y` a descendant of `x` and `y'` of `x'` with equal depth gaps:
/// `d(y, y') <= d(x, x') + 2 eps_{h(y)} [h(y) - h(x) + d(x, x')]`.
pub fn stitch_descendant(
    x: &TreeVertex,
    xp: &TreeVertex,
    y: &TreeVertex,
    yp: &TreeVertex,
    space: &HTreeSpace,
) -> Result<StitchBound> {
    for v in [x, xp, y, yp] {
        space.check(v)?;
    }
    if !x.is_ancestor_of(y) || !xp.is_ancestor_of(yp) || y.depth() - x.depth() != yp.depth() - xp.depth() {
        return Err(Error::PreconditionViolated("stitch_descendant needs matching descendant pairs".into()));
    }
    let dxx = space.d(x, xp);
    let gap = rational::int((y.depth() - x.depth()) as i64);
    let rhs = &dxx + rational::int(2) * space.eps().at(y.depth()) * (gap + &dxx);
    checked_bound(space.d(y, yp), rhs, "descendant stitching")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HorizontalStitch {
    pub y_prime: TreeVertex,
    /// Which construction applied: 1 when `h(x) >= h(x')`; 2 when the lca
    /// heights differ; 3 when they agree.
    pub case: u8,
    pub bound: StitchBound,
}

/// Given `h(y) <= h(x)`, produces `y'` with `h(y') - h(x') = h(y) - h(x)`,
/// `d(y, y') <= d(x, x')` and `|d(y', x') - d(x, y)| <= 2 d(x, x')`.
/// Free choices of descendant take the all-zeros extension.
pub fn stitch_horizontal(x: &TreeVertex, xp: &TreeVertex, y: &TreeVertex, space: &HTreeSpace) -> Result<HorizontalStitch> {
    for v in [x, xp, y] {
        space.check(v)?;
    }
    if y.depth() > x.depth() {
        return Err(Error::PreconditionViolated("stitch_horizontal needs h(y) <= h(x)".into()));
    }
    let (hx, hxp, hy) = (x.depth() as i64, xp.depth() as i64, y.depth() as i64);
    let target = hy + hxp - hx;
    if target < 0 {
        return Err(Error::PreconditionViolated(format!("required depth {target} is negative")));
    }
    let target = target as usize;
    if target > space.max_depth() {
        return Err(Error::DepthExceeded { depth: target, max: space.max_depth() });
    }
    let (y_prime, case) = if hx >= hxp {
        (y.ancestor_at(target), 1)
    } else if x.lca_depth(xp) != x.lca_depth(y) {
        (y.along_zeros(target), 2)
    } else {
        (x.along_zeros(target), 3)
    };
    let dxx = space.d(x, xp);
    let bound = checked_bound(space.d(y, &y_prime), dxx.clone(), "horizontal stitching")?;
    let drift = (space.d(&y_prime, xp) - space.d(x, y)).abs();
    checked_bound(drift, rational::int(2) * dxx, "horizontal distance drift")?;
    Ok(HorizontalStitch { y_prime, case, bound })
}

/// A random valid schedule on the grid `k / 2^20` with all values in
/// `(0, cap)`.
pub fn random_epsilon<R: Rng + ?Sized>(max_index: usize, cap: &Rational, rng: &mut R) -> EpsilonSequence {
    const GRID: i64 = 1 << 20;
    let cap_units = {
        let c = cap * rational::int(GRID);
        let f = c.floor().to_integer();
        let f: i64 = num_traits::ToPrimitive::to_i64(&f).unwrap();
        if rational::int(f) == c {
            f - 1
        } else {
            f
        }
    };
    assert!(cap_units >= 2, "cap too small for the grid");
    let mut units = vec![rng.gen_range(cap_units / 2..=cap_units)];
    for n in 1..=max_index {
        let prev = units[n - 1];
        // n e_n >= (n-1) e_{n-1}, rounded up to the grid
        let lower = ((n as i64 - 1) * prev + n as i64 - 1) / n as i64;
        let lower = lower.max(1);
        units.push(if lower >= prev { prev } else { rng.gen_range(lower..=prev) });
    }
    let vals = units.into_iter().map(|u| rational::ratio(u, GRID)).collect();
    validate_epsilon(vals).expect("grid construction keeps both monotonicity conditions")
}

/// `L d_eps` as an integer, for `L` a common denominator of the schedule.
struct ScaledHTree {
    l: i128,
    eps: Vec<i128>,
}

impl ScaledHTree {
    fn new(space: &HTreeSpace) -> Option<Self> {
        let l = space.eps.common_denominator()? as i128;
        let eps = (0..=space.max_depth.min(space.eps.max_index()))
            .map(|n| {
                let e = space.eps.at(n) * rational::int(l as i64);
                num_traits::ToPrimitive::to_i128(e.numer()).unwrap()
            })
            .collect();
        Some(Self { l, eps })
    }

    fn d(&self, x: &TreeVertex, y: &TreeVertex) -> i128 {
        let (hx, hy) = (x.depth(), y.depth());
        let m = hx.min(hy);
        let lca = x.lca_depth(y);
        self.l * hx.abs_diff(hy) as i128 + 2 * self.eps[m] * (m - lca) as i128
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TriangleViolation {
    pub x: TreeVertex,
    pub y: TreeVertex,
    pub z: TreeVertex,
}

/// Reported violations are capped at this many per call.
pub const VIOLATION_SAMPLE: usize = 32;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TriangleReport {
    pub triples: u64,
    pub violation_count: u64,
    pub violations: Vec<TriangleViolation>,
}

impl TriangleReport {
    fn push(&mut self, x: &TreeVertex, y: &TreeVertex, z: &TreeVertex) {
        self.violation_count += 1;
        if self.violations.len() < VIOLATION_SAMPLE {
            self.violations.push(TriangleViolation { x: *x, y: *y, z: *z });
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.triples += other.triples;
        self.violation_count += other.violation_count;
        let room = VIOLATION_SAMPLE.saturating_sub(self.violations.len());
        self.violations.extend(other.violations.into_iter().take(room));
        self
    }
}

/// Every triangle inequality among the vertices of `B_n`, exactly.
pub fn triangle_check_exhaustive(space: &HTreeSpace, n: usize) -> Result<TriangleReport> {
    use rayon::prelude::*;
    if n > space.max_depth {
        return Err(Error::DepthExceeded { depth: n, max: space.max_depth });
    }
    if n > 10 {
        return Err(Error::TooLarge { what: "exhaustive depth", value: n, limit: 10 });
    }
    let verts = enumerate_bn(n)?;
    let v = verts.len();
    let Some(scaled) = ScaledHTree::new(space) else {
        let d = |i: usize, j: usize| space.d(&verts[i], &verts[j]);
        let mut r = TriangleReport::default();
        for x in 0..v {
            for z in x + 1..v {
                let dxz = d(x, z);
                for y in 0..v {
                    r.triples += 1;
                    if dxz > d(x, y) + d(y, z) {
                        r.push(&verts[x], &verts[y], &verts[z]);
                    }
                }
            }
        }
        return Ok(r);
    };
    let mat: Vec<i64> = verts
        .iter()
        .flat_map(|a| verts.iter().map(|b| i64::try_from(scaled.d(a, b)).expect("scaled distance fits i64")).collect::<Vec<_>>())
        .collect();
    let report = (0..v)
        .into_par_iter()
        .map(|x| {
            let mut r = TriangleReport::default();
            let row_x = &mat[x * v..(x + 1) * v];
            for z in x + 1..v {
                // symmetric, so d(y, z) is row z read at y
                let row_z = &mat[z * v..(z + 1) * v];
                let detour = row_x.iter().zip(row_z).map(|(a, b)| a + b).min().unwrap();
                if row_x[z] > detour {
                    for y in 0..v {
                        if row_x[z] > row_x[y] + row_z[y] {
                            r.push(&verts[x], &verts[y], &verts[z]);
                        }
                    }
                }
                r.triples += v as u64;
            }
            r
        })
        .reduce(TriangleReport::default, TriangleReport::merge);
    Ok(report)
}

/// A random vertex of depth at most `max`, sharing a random prefix with `base`.
fn random_relative<R: Rng + ?Sized>(base: &TreeVertex, max: usize, rng: &mut R) -> TreeVertex {
    let mut v = base.ancestor_at(rng.gen_range(0..=base.depth()));
    let target = rng.gen_range(v.depth()..=max);
    while v.depth() < target {
        v = v.child(rng.gen_range(0..2));
    }
    v
}

/// `triples` random triples with depths at most `depth`, built around shared
/// prefixes so that all lca configurations occur.
pub fn triangle_check_random<R: Rng + ?Sized>(space: &HTreeSpace, depth: usize, triples: u64, rng: &mut R) -> Result<TriangleReport> {
    if depth > space.max_depth {
        return Err(Error::DepthExceeded { depth, max: space.max_depth });
    }
    let scaled = ScaledHTree::new(space);
    let fails = |a: &TreeVertex, b: &TreeVertex, c: &TreeVertex| match &scaled {
        Some(s) => s.d(a, c) > s.d(a, b) + s.d(b, c),
        None => space.d(a, c) > space.d(a, b) + space.d(b, c),
    };
    let mut r = TriangleReport::default();
    for _ in 0..triples {
        let x = TreeVertex::random(rng.gen_range(0..=depth), rng);
        let y = random_relative(&x, depth, rng);
        let z = random_relative(if rng.gen() { &x } else { &y }, depth, rng);
        r.triples += 1;
        for (a, b, c) in [(&x, &y, &z), (&y, &z, &x), (&z, &x, &y)] {
            if fails(a, b, c) {
                r.push(a, b, c);
            }
        }
    }
    Ok(r)
}

/// Pairs of `B_n` where `d_eps` with `eps = 1` differs from the tree metric.
pub fn tree_metric_mismatches(n: usize) -> Result<u64> {
    use rayon::prelude::*;
    let space = HTreeSpace::constant(Rational::one(), n)?;
    let scaled = ScaledHTree::new(&space).expect("integer schedule");
    let verts = enumerate_bn(n)?;
    Ok(verts
        .par_iter()
        .map(|a| verts.iter().filter(|b| scaled.d(a, b) != tree_distance(a, b) as i128).count() as u64)
        .sum())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HTreeValidation {
    pub sequences: usize,
    pub exhaustive_depth: usize,
    pub random_depth: usize,
    pub exhaustive: TriangleReport,
    pub random: TriangleReport,
    pub tree_metric_depth: usize,
    pub tree_metric_mismatches: u64,
}

impl HTreeValidation {
    pub fn passed(&self) -> bool {
        self.exhaustive.violation_count == 0 && self.random.violation_count == 0 && self.tree_metric_mismatches == 0
    }
}

/// Triangle checks over `sequences` random schedules below `cap`: exhaustive
/// on `B_{exhaustive_depth}` and `random_triples` sampled triples to
/// `random_depth`, plus the `eps = 1` comparison with the tree metric.
pub fn validate_htree(
    sequences: usize,
    cap: &Rational,
    exhaustive_depth: usize,
    random_depth: usize,
    random_triples: u64,
    tree_metric_depth: usize,
    seed: u64,
) -> Result<HTreeValidation> {
    use rand::SeedableRng;
    let mut exhaustive = TriangleReport::default();
    let mut random = TriangleReport::default();
    let depth = exhaustive_depth.max(random_depth);
    for i in 0..sequences as u64 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ i.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let space = HTreeSpace::new(random_epsilon(depth, cap, &mut rng), depth)?;
        exhaustive = exhaustive.merge(triangle_check_exhaustive(&space, exhaustive_depth)?);
        random = random.merge(triangle_check_random(&space, random_depth, random_triples, &mut rng)?);
    }
    Ok(HTreeValidation {
        sequences,
        exhaustive_depth,
        random_depth,
        exhaustive,
        random,
        tree_metric_depth,
        tree_metric_mismatches: tree_metric_mismatches(tree_metric_depth)?,
    })
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{verify_metric, FiniteMetricSpace};
    use crate::rational::{int, ratio};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(s: &str) -> TreeVertex {
        s.parse().unwrap()
    }

    #[test]
    fn vertex_basics() {
        let x = v("0110");
        assert_eq!(x.depth(), 4);
        assert_eq!(x.to_string(), "0110");
        assert_eq!(x.parent().unwrap(), v("011"));
        assert_eq!(x.ancestor_at(2), v("01"));
        assert_eq!(x.along_zeros(6), v("011000"));
        assert_eq!(x.sibling().unwrap(), v("0111"));
        assert_eq!(x.lca(&v("010")), v("01"));
        assert!(v("01").is_ancestor_of(&x));
        assert!(x.is_ancestor_of(&x));
        assert!(!v("1").is_ancestor_of(&x));
        assert_eq!(TreeVertex::root().to_string(), "");
        assert_eq!(TreeVertex::from_path(0b0110, 4), x);
        assert_eq!(x.path(), 0b0110);
    }

    #[test]
    fn tree_distance_examples() {
        assert_eq!(tree_distance(&TreeVertex::root(), &v("01")), 2);
        assert_eq!(tree_distance(&v("00"), &v("01")), 2);
        assert_eq!(tree_distance(&v("010"), &v("0110")), 3);
    }

    /// Brute-force lca by walking both root paths.
    fn lca_oracle(a: &str, b: &str) -> usize {
        a.chars().zip(b.chars()).take_while(|(x, y)| x == y).count()
    }

    #[test]
    fn deep_vertices_lca_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let a = TreeVertex::random(rng.gen_range(0..=127), &mut rng);
            let b = TreeVertex::random(rng.gen_range(0..=127), &mut rng);
            assert_eq!(a.lca_depth(&b), lca_oracle(&a.to_bit_string(), &b.to_bit_string()));
        }
    }

    #[test]
    fn unit_eps_recovers_tree_metric() {
        let space = HTreeSpace::constant(int(1), 12).unwrap();
        let all = enumerate_bn(6).unwrap();
        for a in &all {
            for b in &all {
                assert_eq!(space.d(a, b), int(tree_distance(a, b) as i64));
            }
        }
    }

    #[test]
    fn siblings_use_eps_at_min_depth() {
        let eps = validate_epsilon(vec![ratio(1, 5), ratio(1, 5), ratio(1, 5)]).unwrap();
        let space = HTreeSpace::new(eps, 2).unwrap();
        // min depth 1, lca depth 0: 2 * eps_1 * 1
        assert_eq!(space.distance(&v("0"), &v("1")).unwrap(), ratio(2, 5));
        assert_eq!(space.distance(&v("0"), &v("011")).unwrap_err(), Error::DepthExceeded { depth: 3, max: 2 });
    }

    #[test]
    fn ancestor_distance_ignores_eps() {
        let space = HTreeSpace::constant(ratio(1, 7), 10).unwrap();
        assert_eq!(space.d(&v("01"), &v("0110101")), int(5));
    }

    #[test]
    fn epsilon_validation() {
        assert!(validate_epsilon(vec![ratio(1, 4); 10]).is_ok());
        assert!(validate_epsilon((0..20).map(|n| ratio(1, n + 4)).collect()).is_ok());
        let err = validate_epsilon(vec![ratio(1, 4), ratio(1, 2), ratio(1, 2)]).unwrap_err();
        assert_eq!(err[0], EpsilonViolation { index: 1, kind: EpsilonViolationKind::Increasing });
        let err = validate_epsilon(vec![int(1), int(1), ratio(1, 4)]).unwrap_err();
        assert_eq!(err, vec![EpsilonViolation { index: 2, kind: EpsilonViolationKind::ProductDecreasing }]);
        assert!(validate_epsilon(vec![int(0)]).is_err());
        assert!(validate_epsilon(vec![int(2)]).is_err());
        assert!(!validate_epsilon(vec![ratio(1, 4)]).unwrap().classifier_ready());
        assert!(validate_epsilon(vec![ratio(1, 5)]).unwrap().classifier_ready());
    }

    #[test]
    fn growth_functions() {
        let e = epsilon_from_growth(|_| 5.0, 10).unwrap();
        assert!(e.values().iter().all(|x| *x == ratio(1, 5)));
        let e = epsilon_from_growth(|n| f64::max(4.0, ((n + 2) as f64).log2()), 500).unwrap();
        assert_eq!(e.max_index(), 500);
        assert_eq!(epsilon_from_growth(|n| n as f64, 10).unwrap_err(), Error::HypothesisViolated(0));
        // n/s(n) decreasing
        assert!(matches!(epsilon_from_growth(|n| 4.0 + (n * n) as f64, 10), Err(Error::HypothesisViolated(_))));
    }

    #[test]
    fn bn_enumeration() {
        let b1 = enumerate_bn(1).unwrap();
        assert_eq!(b1.len(), 3);
        let sp1: Vec<_> = sp_pairs(1).collect();
        assert_eq!(sp1, vec![(TreeVertex::root(), v("0")), (TreeVertex::root(), v("1"))]);
        assert_eq!(sp_pairs(2).count(), 10);
        assert_eq!(enumerate_bn(4).unwrap().len(), 31);
        assert!(enumerate_bn(21).is_err());
        let b3 = enumerate_bn(3).unwrap();
        for (i, x) in b3.iter().enumerate() {
            assert_eq!(bfs_index(x), i);
        }
        let mut sorted = b3.clone();
        sorted.sort();
        assert_eq!(sorted, b3);
        assert_eq!(leaves(3).count(), 8);
        assert_eq!(internal_vertices(3).count(), 7);
        // every SP pair is a strict ancestor pair and all are present
        let brute = b3.iter().flat_map(|a| b3.iter().map(move |b| (*a, *b)))
            .filter(|(a, b)| a != b && a.is_ancestor_of(b))
            .count();
        assert_eq!(sp_pairs(3).count(), brute);
    }

    #[test]
    fn truncated_htree_is_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let eps = random_epsilon(12, &ratio(1, 4), &mut rng);
        let space = HTreeSpace::new(eps, 12).unwrap();
        // a depth-12 sample: all vertices to depth 5 plus random deep ones
        let mut pts = enumerate_bn(5).unwrap();
        for _ in 0..60 {
            let d = rng.gen_range(6..=12);
            pts.push(TreeVertex::random(d, &mut rng));
        }
        pts.sort();
        pts.dedup();
        let labels = pts.iter().map(|p| p.to_string()).collect();
        let fms = FiniteMetricSpace::from_exact_metric(&space, &pts, labels);
        assert!(verify_metric(&fms).is_metric());
    }

    #[test]
    fn stitch_examples() {
        let space = HTreeSpace::constant(ratio(1, 5), 20).unwrap();
        let b = stitch_ancestor(&v("0101"), &v("0101"), &v("01"), &v("01"), &space).unwrap();
        assert_eq!((b.lhs, b.rhs), (int(0), int(0)));
        let b = stitch_ancestor(&v("00"), &v("11"), &v("0"), &v("1"), &space).unwrap();
        assert!(b.lhs <= b.rhs);
        assert!(stitch_ancestor(&v("00"), &v("11"), &v("1"), &v("1"), &space).is_err());
        let b = stitch_descendant(&v("0"), &v("0"), &v("011"), &v("011"), &space).unwrap();
        assert_eq!(b.lhs, int(0));
        let b = stitch_descendant(&v("0"), &v("1"), &v("0110"), &v("1001"), &space).unwrap();
        assert!(b.lhs <= b.rhs);
    }

    #[test]
    fn horizontal_three_cases() {
        let space = HTreeSpace::constant(ratio(1, 5), 30).unwrap();
        // h(x) >= h(x')
        let s = stitch_horizontal(&v("01101"), &v("0111"), &v("010"), &space).unwrap();
        assert_eq!(s.case, 1);
        assert_eq!(s.y_prime, v("01"));
        // h(x) < h(x'), lca heights differ: lca(x,x') depth 3, lca(x,y) depth 1
        let s = stitch_horizontal(&v("0110"), &v("01111"), &v("00"), &space).unwrap();
        assert_eq!(s.case, 2);
        assert_eq!(s.y_prime, v("000"));
        // h(x) < h(x'), equal lca heights: both lca depth 1
        let s = stitch_horizontal(&v("0110"), &v("00111"), &v("00"), &space).unwrap();
        assert_eq!(s.case, 3);
        assert_eq!(s.y_prime, v("011"));
        for s in [s] {
            assert!(s.bound.lhs <= s.bound.rhs);
        }
        assert!(stitch_horizontal(&v("01"), &v("0"), &v("011"), &space).is_err());
    }

    fn arb_vertex(max: usize) -> impl Strategy<Value = TreeVertex> {
        (0..=max, any::<u128>()).prop_map(|(d, p)| TreeVertex::from_path(p, d))
    }

    fn arb_space() -> impl Strategy<Value = HTreeSpace> {
        any::<u64>().prop_map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            HTreeSpace::new(random_epsilon(64, &int(1), &mut rng), 64).unwrap()
        })
    }

    proptest! {
        #[test]
        fn htree_triangle_inequality(space in arb_space(), a in arb_vertex(64), b in arb_vertex(64), c in arb_vertex(64)) {
            prop_assert!(space.d(&a, &c) <= space.d(&a, &b) + space.d(&b, &c));
        }

        #[test]
        fn htree_dominated_by_tree_metric(space in arb_space(), a in arb_vertex(64), b in arb_vertex(64)) {
            let d = space.d(&a, &b);
            let t = int(tree_distance(&a, &b) as i64);
            prop_assert!(d <= t);
            let m = a.depth().min(b.depth());
            let equal_expected = *space.eps().at(m) == int(1) || a.lca_depth(&b) == m;
            prop_assert_eq!(d == t, equal_expected);
        }

        #[test]
        fn stitch_ancestor_random(space in arb_space(), x in arb_vertex(64), xp in arb_vertex(64), gap in 0usize..64) {
            let gap = gap.min(x.depth()).min(xp.depth());
            let (y, yp) = (x.ancestor_at(x.depth() - gap), xp.ancestor_at(xp.depth() - gap));
            prop_assert!(stitch_ancestor(&x, &xp, &y, &yp, &space).is_ok());
        }

        #[test]
        fn stitch_descendant_random(space in arb_space(), x in arb_vertex(40), xp in arb_vertex(40),
                                    gap in 0usize..24, s1 in any::<u128>(), s2 in any::<u128>()) {
            let ext = |v: &TreeVertex, s: u128| TreeVertex::from_path((v.path() << gap) | (s & ((1u128 << gap) - 1)), v.depth() + gap);
            let (y, yp) = (ext(&x, s1), ext(&xp, s2));
            prop_assert!(stitch_descendant(&x, &xp, &y, &yp, &space).is_ok());
        }

        #[test]
        fn stitch_horizontal_random(space in arb_space(), x in arb_vertex(40), xp in arb_vertex(40), y in arb_vertex(40)) {
            prop_assume!(y.depth() <= x.depth());
            prop_assume!(y.depth() + xp.depth() >= x.depth());
            let s = stitch_horizontal(&x, &xp, &y, &space);
            prop_assert!(s.is_ok(), "{:?}", s);
            let s = s.unwrap();
            prop_assert_eq!(s.y_prime.depth() + x.depth(), y.depth() + xp.depth());
        }

        #[test]
        fn vertex_string_roundtrip(x in arb_vertex(127)) {
            let s = x.to_string();
            prop_assert_eq!(s.parse::<TreeVertex>().unwrap(), x);
        }
    }

    #[test]
    fn validation_small() {
        let r = validate_htree(2, &ratio(1, 4), 5, 20, 2000, 6, 3).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.exhaustive.triples, 2 * 63 * 62 / 2 * 63);
    }

    fn scaled_or_exact(space: &HTreeSpace) -> impl Fn(&TreeVertex, &TreeVertex) -> Rational + Sync + '_ {
        let scaled = ScaledHTree::new(space);
        move |x, y| match &scaled {
            Some(s) => Rational::new(s.d(x, y).into(), BigInt::from(s.l)),
            None => space.d(x, y),
        }
    }

    #[test]
    fn scaled_distance_matches_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let space = HTreeSpace::new(random_epsilon(30, &ratio(1, 4), &mut rng), 30).unwrap();
        let d = scaled_or_exact(&space);
        for _ in 0..500 {
            let x = TreeVertex::random(rng.gen_range(0..=30), &mut rng);
            let y = random_relative(&x, 30, &mut rng);
            assert_eq!(d(&x, &y), space.d(&x, &y));
        }
    }

    #[test]
    fn broken_metric_is_caught() {
        // eps increasing from level 1 to 2 breaks the triangle inequality
        let values = vec![int(1), ratio(1, 100), int(1), int(1)];
        let eps = EpsilonSequence { floats: values.iter().map(rational::to_f64).collect(), values };
        let space = HTreeSpace { eps, max_depth: 3 };
        let r = triangle_check_exhaustive(&space, 3).unwrap();
        assert!(r.violation_count > 0);
    }
}
