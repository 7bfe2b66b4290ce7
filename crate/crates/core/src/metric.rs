//! Finite metric spaces, distortion of point maps, and approximate midpoints.

use std::sync::OnceLock;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::{self, Rational};

/// A metric on some point type, evaluated in floating point.
pub trait Metric {
    type Point;
    fn distance(&self, a: &Self::Point, b: &Self::Point) -> f64;
}

/// A metric whose values are rational and can be produced exactly.
pub trait ExactMetric: Metric {
    fn distance_exact(&self, a: &Self::Point, b: &Self::Point) -> Rational;
}

impl<M: Metric + ?Sized> Metric for &M {
    type Point = M::Point;
    fn distance(&self, a: &M::Point, b: &M::Point) -> f64 {
        (**self).distance(a, b)
    }
}

/// The real line with `|a - b|`.
#[derive(Clone, Copy, Debug, Default)]
pub struct RealLine;

impl Metric for RealLine {
    type Point = f64;
    fn distance(&self, a: &f64, b: &f64) -> f64 {
        (a - b).abs()
    }
}

/// The rationals with `|a - b|`, exact.
#[derive(Clone, Copy, Debug, Default)]
pub struct RationalLine;

impl Metric for RationalLine {
    type Point = Rational;
    fn distance(&self, a: &Rational, b: &Rational) -> f64 {
        rational::to_f64(&(a - b))
    }
}

impl ExactMetric for RationalLine {
    fn distance_exact(&self, a: &Rational, b: &Rational) -> Rational {
        num_traits::Signed::abs(&(a - b))
    }
}

pub const DEFAULT_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub enum DistanceMatrix {
    Exact(Vec<Rational>),
    Float { values: Vec<f64>, tolerance: f64 },
}

/// Points `0..n` with labels and a row-major distance matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteMetricSpace {
    labels: Vec<String>,
    dist: DistanceMatrix,
    cached_f64: Vec<f64>,
}

impl FiniteMetricSpace {
    pub fn exact(labels: Vec<String>, rows: Vec<Vec<Rational>>) -> Result<Self> {
        let n = labels.len();
        check_square(n, rows.iter().map(|r| r.len()))?;
        let flat: Vec<Rational> = rows.into_iter().flatten().collect();
        let cached_f64 = flat.iter().map(rational::to_f64).collect();
        Ok(Self { labels, dist: DistanceMatrix::Exact(flat), cached_f64 })
    }

    pub fn float(labels: Vec<String>, rows: Vec<Vec<f64>>, tolerance: f64) -> Result<Self> {
        let n = labels.len();
        check_square(n, rows.iter().map(|r| r.len()))?;
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Ok(Self {
            labels,
            cached_f64: flat.clone(),
            dist: DistanceMatrix::Float { values: flat, tolerance },
        })
    }

    /// Materializes `metric` on `points` exactly.
    pub fn from_exact_metric<M: ExactMetric>(metric: &M, points: &[M::Point], labels: Vec<String>) -> Self {
        let n = points.len();
        assert_eq!(labels.len(), n);
        let mut flat = vec![Rational::zero(); n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = metric.distance_exact(&points[i], &points[j]);
                flat[j * n + i] = d.clone();
                flat[i * n + j] = d;
            }
        }
        let cached_f64 = flat.iter().map(rational::to_f64).collect();
        Self { labels, dist: DistanceMatrix::Exact(flat), cached_f64 }
    }

    pub fn from_metric<M: Metric>(metric: &M, points: &[M::Point], labels: Vec<String>, tolerance: f64) -> Self {
        let n = points.len();
        assert_eq!(labels.len(), n);
        let mut flat = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = metric.distance(&points[i], &points[j]);
                flat[i * n + j] = d;
                flat[j * n + i] = d;
            }
        }
        Self { labels, cached_f64: flat.clone(), dist: DistanceMatrix::Float { values: flat, tolerance } }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.dist, DistanceMatrix::Exact(_))
    }

    pub fn matrix(&self) -> &DistanceMatrix {
        &self.dist
    }

    pub fn tolerance(&self) -> f64 {
        match &self.dist {
            DistanceMatrix::Exact(_) => 0.0,
            DistanceMatrix::Float { tolerance, .. } => *tolerance,
        }
    }

    #[inline]
    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.cached_f64[i * self.len() + j]
    }

    pub fn d_exact(&self, i: usize, j: usize) -> Option<&Rational> {
        match &self.dist {
            DistanceMatrix::Exact(v) => Some(&v[i * self.len() + j]),
            DistanceMatrix::Float { .. } => None,
        }
    }

    /// All distances multiplied by `lambda`.
    pub fn scaled(&self, lambda: &Rational) -> Self {
        match &self.dist {
            DistanceMatrix::Exact(v) => {
                let flat: Vec<Rational> = v.iter().map(|d| d * lambda).collect();
                let cached_f64 = flat.iter().map(rational::to_f64).collect();
                Self { labels: self.labels.clone(), dist: DistanceMatrix::Exact(flat), cached_f64 }
            }
            DistanceMatrix::Float { values, tolerance } => {
                let l = rational::to_f64(lambda);
                let flat: Vec<f64> = values.iter().map(|d| d * l).collect();
                Self {
                    labels: self.labels.clone(),
                    cached_f64: flat.clone(),
                    dist: DistanceMatrix::Float { values: flat, tolerance: *tolerance },
                }
            }
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let n = self.len();
        let rows: Vec<serde_json::Value> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| match &self.dist {
                        DistanceMatrix::Exact(v) => serde_json::Value::String(rational::format(&v[i * n + j])),
                        DistanceMatrix::Float { values, .. } => serde_json::json!(values[i * n + j]),
                    })
                    .collect()
            })
            .collect();
        serde_json::json!({ "points": self.labels, "dist": rows, "exact": self.is_exact() })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let raw: RawSpace = serde_json::from_value(value.clone()).map_err(|e| Error::Parse(e.to_string()))?;
        if raw.exact {
            let rows = raw
                .dist
                .iter()
                .map(|row| row.iter().map(json_rational).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?;
            Self::exact(raw.points, rows)
        } else {
            let rows = raw
                .dist
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|v| match v {
                            serde_json::Value::Number(x) => x.as_f64().ok_or_else(|| Error::Parse("bad float".into())),
                            other => json_rational(other).map(|r| rational::to_f64(&r)),
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Self::float(raw.points, rows, DEFAULT_TOLERANCE)
        }
    }
}

#[derive(Deserialize)]
struct RawSpace {
    points: Vec<String>,
    dist: Vec<Vec<serde_json::Value>>,
    exact: bool,
}

fn json_rational(v: &serde_json::Value) -> Result<Rational> {
    match v {
        serde_json::Value::String(s) => rational::parse(s),
        serde_json::Value::Number(n) => rational::parse(&n.to_string()),
        other => Err(Error::Parse(format!("expected rational, got {other}"))),
    }
}

fn check_square(n: usize, row_lens: impl Iterator<Item = usize>) -> Result<()> {
    let lens: Vec<usize> = row_lens.collect();
    if lens.len() != n || lens.iter().any(|&l| l != n) {
        return Err(Error::Parse(format!("distance matrix is not {n}x{n}")));
    }
    Ok(())
}

impl Metric for FiniteMetricSpace {
    type Point = usize;
    fn distance(&self, a: &usize, b: &usize) -> f64 {
        self.d(*a, *b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NonzeroDiagonal { x: usize },
    Asymmetric { x: usize, y: usize },
    /// `d(x,z) > d(x,y) + d(y,z)`.
    Triangle { x: usize, y: usize, z: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum VerifyMode {
    Exhaustive,
    Sampled { triples: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mode: VerifyMode,
    pub violations: Vec<Violation>,
}

impl MetricReport {
    pub fn is_metric(&self) -> bool {
        self.violations.is_empty()
    }
}

pub const EXHAUSTIVE_LIMIT: usize = 2000;
pub const SAMPLED_TRIPLES: usize = 1_000_000;

/// Checks zero diagonal, symmetry and every triangle inequality. Spaces larger
/// than [`EXHAUSTIVE_LIMIT`] get [`SAMPLED_TRIPLES`] random triples instead.
pub fn verify_metric(space: &FiniteMetricSpace) -> MetricReport {
    verify_metric_seeded(space, 0)
}

pub fn verify_metric_seeded(space: &FiniteMetricSpace, seed: u64) -> MetricReport {
    let n = space.len();
    let mut violations = Vec::new();
    let cmp = Comparator::new(space);
    for x in 0..n {
        if !cmp.is_zero(x, x) {
            violations.push(Violation::NonzeroDiagonal { x });
        }
        for y in (x + 1)..n {
            if !cmp.equal(x, y, y, x) {
                violations.push(Violation::Asymmetric { x, y });
            }
        }
    }
    if n <= EXHAUSTIVE_LIMIT {
        let mut tri: Vec<Violation> = (0..n)
            .into_par_iter()
            .flat_map_iter(|x| {
                let cmp = &cmp;
                ((x + 1)..n).flat_map(move |z| {
                    (0..n).filter_map(move |y| {
                        (y != x && y != z && cmp.triangle_fails(x, y, z)).then_some(Violation::Triangle { x, y, z })
                    })
                })
            })
            .collect();
        violations.append(&mut tri);
        MetricReport { mode: VerifyMode::Exhaustive, violations }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..SAMPLED_TRIPLES {
            let (x, y, z) = (rng.gen_range(0..n), rng.gen_range(0..n), rng.gen_range(0..n));
            if x != y && y != z && x != z && cmp.triangle_fails(x, y, z) {
                violations.push(Violation::Triangle { x, y, z });
            }
        }
        MetricReport { mode: VerifyMode::Sampled { triples: SAMPLED_TRIPLES }, violations }
    }
}

/// Distance comparisons in the cheapest exact representation available:
/// integers over a common denominator when they fit in `i128`.
enum Comparator<'a> {
    Scaled { n: usize, values: Vec<i128> },
    Big(&'a FiniteMetricSpace),
    Float { space: &'a FiniteMetricSpace, tol: f64 },
}

impl<'a> Comparator<'a> {
    fn new(space: &'a FiniteMetricSpace) -> Self {
        match space.matrix() {
            DistanceMatrix::Float { tolerance, .. } => Comparator::Float { space, tol: *tolerance },
            DistanceMatrix::Exact(v) => match scale_to_integers(v) {
                Some(values) => Comparator::Scaled { n: space.len(), values },
                None => Comparator::Big(space),
            },
        }
    }

    fn is_zero(&self, i: usize, j: usize) -> bool {
        match self {
            Comparator::Scaled { n, values } => values[i * n + j] == 0,
            Comparator::Big(s) => s.d_exact(i, j).unwrap().is_zero(),
            Comparator::Float { space, tol } => space.d(i, j).abs() <= *tol,
        }
    }

    fn equal(&self, a: usize, b: usize, c: usize, d: usize) -> bool {
        match self {
            Comparator::Scaled { n, values } => values[a * n + b] == values[c * n + d],
            Comparator::Big(s) => s.d_exact(a, b) == s.d_exact(c, d),
            Comparator::Float { space, tol } => {
                let (u, v) = (space.d(a, b), space.d(c, d));
                (u - v).abs() <= tol * u.abs().max(v.abs()).max(f64::MIN_POSITIVE)
            }
        }
    }

    fn triangle_fails(&self, x: usize, y: usize, z: usize) -> bool {
        match self {
            Comparator::Scaled { n, values } => values[x * n + z] > values[x * n + y] + values[y * n + z],
            Comparator::Big(s) => {
                let (xz, xy, yz) = (s.d_exact(x, z).unwrap(), s.d_exact(x, y).unwrap(), s.d_exact(y, z).unwrap());
                *xz > xy + yz
            }
            Comparator::Float { space, tol } => {
                let (xz, sum) = (space.d(x, z), space.d(x, y) + space.d(y, z));
                xz - sum > tol * xz.abs().max(sum.abs())
            }
        }
    }
}

fn scale_to_integers(v: &[Rational]) -> Option<Vec<i128>> {
    let mut lcm = BigInt::one();
    for r in v {
        lcm = lcm.lcm(r.denom());
        if lcm.bits() > 100 {
            return None;
        }
    }
    let limit = BigInt::one() << 125usize;
    v.iter()
        .map(|r| {
            let s = r.numer() * (&lcm / r.denom());
            if s.magnitude() >= limit.magnitude() {
                None
            } else {
                s.to_i128()
            }
        })
        .collect()
}

/// Expansion and contraction suprema of a map between finite point sets.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Distortion {
    pub lip: f64,
    /// `f64::INFINITY` when a pair collapses.
    pub colip: f64,
    pub dist: f64,
    pub collapsed: Option<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact: Option<ExactDistortion>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExactDistortion {
    #[serde(with = "rational::serde_str")]
    pub lip: Rational,
    /// `None` when a pair collapses.
    #[serde(serialize_with = "ser_opt_rational")]
    pub colip: Option<Rational>,
    #[serde(serialize_with = "ser_opt_rational")]
    pub dist: Option<Rational>,
}

fn ser_opt_rational<S: serde::Serializer>(r: &Option<Rational>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match r {
        Some(r) => s.serialize_str(&rational::format(r)),
        None => s.serialize_str("inf"),
    }
}

impl Distortion {
    pub fn is_finite(&self) -> bool {
        self.collapsed.is_none()
    }

    pub fn require_finite(&self) -> Result<f64> {
        match self.collapsed {
            Some((i, j)) => Err(Error::CollapsedPair(i, j)),
            None => Ok(self.dist),
        }
    }
}

/// Distortion of the map `i -> image(i)` on `n` points, from pairwise source and
/// target distances. Source distances must be positive off the diagonal.
pub fn distortion_by(n: usize, src: impl Fn(usize, usize) -> f64, tgt: impl Fn(usize, usize) -> f64) -> Distortion {
    let mut lip: f64 = 0.0;
    let mut colip: f64 = 0.0;
    let mut collapsed = None;
    for i in 0..n {
        for j in (i + 1)..n {
            let (s, t) = (src(i, j), tgt(i, j));
            debug_assert!(s > 0.0, "source distance must be positive");
            if t == 0.0 {
                collapsed.get_or_insert((i, j));
                continue;
            }
            lip = lip.max(t / s);
            colip = colip.max(s / t);
        }
    }
    if n < 2 {
        return Distortion { lip: 1.0, colip: 1.0, dist: 1.0, collapsed: None, exact: None };
    }
    if collapsed.is_some() {
        return Distortion { lip, colip: f64::INFINITY, dist: f64::INFINITY, collapsed, exact: None };
    }
    Distortion { lip, colip, dist: lip * colip, collapsed, exact: None }
}

/// Exact analogue of [`distortion_by`].
pub fn exact_distortion_by(
    n: usize,
    src: impl Fn(usize, usize) -> Rational,
    tgt: impl Fn(usize, usize) -> Rational,
) -> ExactDistortion {
    let mut lip: Option<Rational> = None;
    let mut colip: Option<Rational> = None;
    let mut collapsed = false;
    for i in 0..n {
        for j in (i + 1)..n {
            let (s, t) = (src(i, j), tgt(i, j));
            if t.is_zero() {
                collapsed = true;
                continue;
            }
            let up = &t / &s;
            let down = s / t;
            if lip.as_ref().map_or(true, |l| up > *l) {
                lip = Some(up);
            }
            if colip.as_ref().map_or(true, |c| down > *c) {
                colip = Some(down);
            }
        }
    }
    let lip = lip.unwrap_or_else(|| if collapsed { Rational::zero() } else { Rational::one() });
    if collapsed {
        return ExactDistortion { lip, colip: None, dist: None };
    }
    let colip = colip.unwrap_or_else(Rational::one);
    let dist = &lip * &colip;
    ExactDistortion { lip, colip: Some(colip), dist: Some(dist) }
}

/// A map between two finite metric spaces with lazily cached distortion.
#[derive(Debug)]
pub struct PointMap<'a> {
    source: &'a FiniteMetricSpace,
    target: &'a FiniteMetricSpace,
    assignment: Vec<usize>,
    stats: OnceLock<Distortion>,
}

impl<'a> PointMap<'a> {
    pub fn new(source: &'a FiniteMetricSpace, target: &'a FiniteMetricSpace, assignment: Vec<usize>) -> Result<Self> {
        if assignment.len() != source.len() {
            return Err(Error::PreconditionViolated(format!(
                "assignment has {} entries for {} source points",
                assignment.len(),
                source.len()
            )));
        }
        if let Some(&bad) = assignment.iter().find(|&&a| a >= target.len()) {
            return Err(Error::PreconditionViolated(format!("target index {bad} out of range")));
        }
        for i in 0..source.len() {
            for j in (i + 1)..source.len() {
                if source.d(i, j) <= 0.0 {
                    return Err(Error::PreconditionViolated(format!("source points {i} and {j} coincide")));
                }
            }
        }
        Ok(Self { source, target, assignment, stats: OnceLock::new() })
    }

    pub fn identity(space: &'a FiniteMetricSpace) -> Result<Self> {
        Self::new(space, space, (0..space.len()).collect())
    }

    pub fn source(&self) -> &FiniteMetricSpace {
        self.source
    }

    pub fn target(&self) -> &FiniteMetricSpace {
        self.target
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn image(&self, i: usize) -> usize {
        self.assignment[i]
    }

    /// Never fails; a collapsed pair yields `dist = inf`.
    pub fn distortion(&self) -> &Distortion {
        self.stats.get_or_init(|| {
            let f = &self.assignment;
            let mut d = distortion_by(self.source.len(), |i, j| self.source.d(i, j), |i, j| self.target.d(f[i], f[j]));
            if self.source.is_exact() && self.target.is_exact() {
                d.exact = Some(exact_distortion_by(
                    self.source.len(),
                    |i, j| self.source.d_exact(i, j).unwrap().clone(),
                    |i, j| self.target.d_exact(f[i], f[j]).unwrap().clone(),
                ));
            }
            d
        })
    }

    pub fn try_distortion(&self) -> Result<&Distortion> {
        let d = self.distortion();
        d.require_finite()?;
        Ok(d)
    }
}

/// `max(dxy, dyz) <= (1+delta)/2 * dxz`, exactly.
pub fn is_midpoint_exact(dxy: &Rational, dyz: &Rational, dxz: &Rational, delta: &Rational) -> bool {
    let two = rational::int(2);
    let bound = (Rational::one() + delta) * dxz;
    let m = if dxy > dyz { dxy } else { dyz };
    &two * m <= bound
}

/// `Mid(x, z, delta)` in index order.
pub fn midpoint_set(space: &FiniteMetricSpace, x: usize, z: usize, delta: &Rational) -> Result<Vec<usize>> {
    if x == z {
        return Err(Error::PreconditionViolated("midpoint endpoints must differ".into()));
    }
    let n = space.len();
    if x >= n || z >= n {
        return Err(Error::OutOfRange(format!("point index out of range for {n} points")));
    }
    if space.is_exact() {
        let dxz = space.d_exact(x, z).unwrap();
        Ok((0..n)
            .filter(|&y| is_midpoint_exact(space.d_exact(x, y).unwrap(), space.d_exact(y, z).unwrap(), dxz, delta))
            .collect())
    } else {
        let bound = (1.0 + rational::to_f64(delta)) / 2.0 * space.d(x, z);
        let slack = space.tolerance() * bound.abs();
        Ok((0..n).filter(|&y| space.d(x, y).max(space.d(y, z)) <= bound + slack).collect())
    }
}
