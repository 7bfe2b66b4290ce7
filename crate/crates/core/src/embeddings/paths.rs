//! Maps from the discrete path `P_n = {0, ..., n}`, the straightness
//! functional `T`, and extraction of nearly isometric sub-progressions.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metric::{distortion_by, Distortion, FiniteMetricSpace, Metric};

/// A map `f: P_n -> X`, stored as the images of `0..=n`.
#[derive(Clone, Debug)]
pub struct PathMap<M: Metric> {
    metric: M,
    points: Vec<M::Point>,
}

impl<M: Metric> PathMap<M> {
    pub fn new(metric: M, points: Vec<M::Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::PreconditionViolated("a path map needs at least one point".into()));
        }
        Ok(Self { metric, points })
    }

    /// Path length `n`.
    pub fn n(&self) -> usize {
        self.points.len() - 1
    }

    pub fn points(&self) -> &[M::Point] {
        &self.points
    }

    pub fn metric(&self) -> &M {
        &self.metric
    }

    #[inline]
    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.metric.distance(&self.points[i], &self.points[j])
    }
}

impl<'a> PathMap<&'a FiniteMetricSpace> {
    pub fn from_space(space: &'a FiniteMetricSpace, assignment: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = assignment.iter().find(|&&i| i >= space.len()) {
            return Err(Error::OutOfRange(format!("point {bad} not in a space of {} points", space.len())));
        }
        Self::new(space, assignment)
    }
}

/// An arithmetic progression `i -> start + i * step`, `i = 0..=len`, in `P_n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Grid {
    pub start: usize,
    pub step: usize,
    pub len: usize,
}

impl Grid {
    pub fn at(&self, i: usize) -> usize {
        self.start + i * self.step
    }

    pub fn end(&self) -> usize {
        self.at(self.len)
    }
}

/// `T` of `f` restricted to a grid: endpoint distance over `len` times the
/// largest consecutive step; `0` for a constant restriction.
pub fn grid_t<M: Metric>(f: &PathMap<M>, g: Grid) -> f64 {
    if g.len == 0 {
        return 0.0;
    }
    let mut max_step: f64 = 0.0;
    for i in 1..=g.len {
        max_step = max_step.max(f.d(g.at(i - 1), g.at(i)));
    }
    if max_step == 0.0 {
        return 0.0;
    }
    f.d(g.start, g.end()) / (g.len as f64 * max_step)
}

pub fn t_functional<M: Metric>(f: &PathMap<M>) -> f64 {
    grid_t(f, Grid { start: 0, step: 1, len: f.n() })
}

/// Distortion of `i -> f(start + i * step)` as a map from `P_len`.
pub fn grid_distortion<M: Metric>(f: &PathMap<M>, g: Grid) -> Distortion {
    distortion_by(g.len + 1, |i, j| i.abs_diff(j) as f64, |i, j| f.d(g.at(i), g.at(j)))
}

pub fn path_distortion<M: Metric>(f: &PathMap<M>) -> Distortion {
    grid_distortion(f, Grid { start: 0, step: 1, len: f.n() })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Split {
    pub t_full: f64,
    /// `T` of `i -> f(i n)` on `P_m`.
    pub t_coarse: f64,
    /// Index of the block `[i n, (i+1) n]` with the largest `T`.
    pub block: usize,
    pub t_block: f64,
}

/// Factors `f: P_{mn} -> X` through the coarse grid and its best block, with
/// `T(f) <= T(coarse) T(block)`.
pub fn submultiplicative_split<M: Metric>(f: &PathMap<M>, m: usize, n: usize) -> Result<Split> {
    if m == 0 || n == 0 || f.n() != m * n {
        return Err(Error::LengthMismatch { len: f.n(), m, n });
    }
    let t_full = t_functional(f);
    let t_coarse = grid_t(f, Grid { start: 0, step: n, len: m });
    let (block, t_block) = best_block(f, 0, n, m);
    assert!(
        t_full <= t_coarse * t_block * (1.0 + 1e-12) + 1e-15,
        "submultiplicativity failed: {t_full} > {t_coarse} * {t_block}"
    );
    Ok(Split { t_full, t_coarse, block, t_block })
}

/// Among `count` consecutive unit-step blocks of length `len` from `start`,
/// the one with the largest `T` (lowest index on ties).
fn best_block<M: Metric>(f: &PathMap<M>, start: usize, len: usize, count: usize) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for i in 0..count {
        let t = grid_t(f, Grid { start: start + i * len, step: 1, len });
        if t > best.1 {
            best = (i, t);
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoostMethod {
    /// Found along the nested chain of best blocks.
    Chain,
    /// The chain missed the threshold; found by scanning all progressions.
    Exhaustive,
}

#[derive(Clone, Debug, Serialize)]
pub struct Boost {
    /// `phi(i) = start + i * step`.
    pub grid: Grid,
    pub t_value: f64,
    pub threshold: f64,
    /// Distortion of `f o phi`, computed directly.
    pub distortion: f64,
    pub method: BoostMethod,
    /// Whether `n >= D^{4 t ln t / delta}` held; `None` when no `D` was given.
    pub precondition_met: Option<bool>,
    /// `T` of the coarse grid at each level of the chain, top level first.
    pub chain: Vec<f64>,
}

/// Finds a rescaled isometry `phi: P_t -> P_n` with `dist(f o phi) <= 1 + delta`
/// by descending the nested chain of best blocks in `P_{t^k}`,
/// `k = floor(log_t n)`, and keeping the straightest coarse grid. Falls back to
/// scanning every progression if no grid on the chain reaches
/// `T >= 1 - delta/(2t)`.
pub fn path_boost<M: Metric>(f: &PathMap<M>, t: usize, delta: f64, d: Option<f64>) -> Result<Boost> {
    if t < 2 || !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::PreconditionViolated(format!("need t >= 2 and 0 < delta <= 1, got t = {t}, delta = {delta}")));
    }
    let n = f.n();
    let mut k = 0u32;
    let mut span = 1usize;
    while span.checked_mul(t).is_some_and(|s| s <= n) {
        span *= t;
        k += 1;
    }
    let threshold = 1.0 - delta / (2.0 * t as f64);
    let precondition_met = d.map(|d| (n as f64).ln() >= 4.0 * t as f64 * (t as f64).ln() / delta * d.ln());

    let mut chain = Vec::new();
    let mut best: Option<(Grid, f64)> = None;
    let mut offset = 0usize;
    let mut block = span;
    for _ in 0..k {
        block /= t;
        let coarse = Grid { start: offset, step: block, len: t };
        let tv = grid_t(f, coarse);
        chain.push(tv);
        if best.map_or(true, |(_, b)| tv > b) {
            best = Some((coarse, tv));
        }
        if block > 1 {
            let (i, _) = best_block(f, offset, block, t);
            offset += i * block;
        }
    }

    let finish = |grid: Grid, tv: f64, method: BoostMethod, chain: Vec<f64>| -> Boost {
        let distortion = grid_distortion(f, grid).dist;
        // T >= 1 - delta/(2t) forces dist <= 1/(1 - delta/2) <= 1 + delta
        assert!(
            distortion <= (1.0 / (1.0 - delta / 2.0)) * (1.0 + 1e-12),
            "grid with T = {tv} has distortion {distortion}"
        );
        Boost { grid, t_value: tv, threshold, distortion, method, precondition_met, chain }
    };

    if let Some((grid, tv)) = best {
        if tv >= threshold {
            return Ok(finish(grid, tv, BoostMethod::Chain, chain));
        }
    }
    let mut best_any = best.map_or(0.0, |(_, b)| b);
    for step in 1..=n / t {
        for start in 0..=(n - t * step) {
            let g = Grid { start, step, len: t };
            let tv = grid_t(f, g);
            if tv >= threshold {
                return Ok(finish(g, tv, BoostMethod::Exhaustive, chain));
            }
            best_any = best_any.max(tv);
        }
    }
    Err(Error::BoostFailed { best_t: best_any, threshold })
}

/// Monotone real path with every step in `[1, D]`, so `dist <= D`. Log-slopes
/// are a clamped sum of random per-scale offsets with scales `t^j`.
pub fn random_bounded_path<R: Rng + ?Sized>(n: usize, t: usize, d: f64, rng: &mut R) -> Vec<f64> {
    let log_d = d.ln();
    let mut scales = Vec::new();
    let mut s = 1usize;
    while s <= n {
        scales.push(s);
        s = s.saturating_mul(t.max(2));
    }
    let offsets: Vec<Vec<f64>> =
        scales.iter().map(|&s| (0..=n / s).map(|_| rng.gen_range(-0.5..0.5) * log_d).collect()).collect();
    let base = rng.gen_range(0.0..=log_d);
    let mut pos = 0.0;
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    for i in 0..n {
        let mut l = base;
        for (j, &s) in scales.iter().enumerate() {
            l += offsets[j][i / s];
        }
        pos += l.clamp(0.0, log_d).exp();
        out.push(pos);
    }
    out
}
