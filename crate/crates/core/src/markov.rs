//! Finite-horizon Markov chains and exact evaluation of the Markov
//! p-convexity functional
//! `sum_k sum_t E[d(f(X_t), f(X~_t(t-2^k)))^p] / 2^{kp}` against
//! `sum_t E[d(f(X_t), f(X_{t-1}))^p]`.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laakso::LaaksoGraph;
use crate::metric::{ExactMetric, Metric, PointMap};
use crate::numeric::{Dyadic, Value, Weight};
use crate::rational::{self, Rational};
use crate::trees::{enumerate_bn, TreeVertex};

pub type SparseRow = Vec<(usize, Rational)>;

/// Row-stochastic transition matrix in sparse row form.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    rows: Vec<SparseRow>,
}

impl Kernel {
    pub fn new(rows: Vec<SparseRow>) -> Self {
        Self { rows }
    }

    pub fn row(&self, state: usize) -> &[(usize, Rational)] {
        &self.rows[state]
    }

    pub fn rows(&self) -> &[SparseRow] {
        &self.rows
    }

    pub fn identity(n: usize) -> Self {
        Self { rows: (0..n).map(|i| vec![(i, Rational::one())]).collect() }
    }
}

/// A chain on states `0..n` over times `t_min..=t_max`, frozen outside the
/// horizon: `X_t = X_{t_min}` before it and `X_t = X_{t_max}` after it.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSpec {
    labels: Vec<String>,
    t_min: i64,
    t_max: i64,
    initial: SparseRow,
    /// `kernels[i]` moves from time `t_min + i` to `t_min + i + 1`.
    kernels: Vec<Arc<Kernel>>,
}

fn check_law(row: &[(usize, Rational)], n: usize, what: &str) -> Result<()> {
    let mut total = Rational::zero();
    for (s, w) in row {
        if *s >= n {
            return Err(Error::InvalidChain(format!("{what}: state {s} out of range")));
        }
        if w.is_negative() {
            return Err(Error::InvalidChain(format!("{what}: negative probability")));
        }
        total += w;
    }
    if !total.is_one() {
        return Err(Error::InvalidChain(format!("{what}: sums to {}", rational::format(&total))));
    }
    Ok(())
}

impl ChainSpec {
    pub fn new(
        labels: Vec<String>,
        t_min: i64,
        t_max: i64,
        initial: SparseRow,
        kernels: Vec<Arc<Kernel>>,
    ) -> Result<Self> {
        let n = labels.len();
        if t_max < t_min {
            return Err(Error::InvalidChain("t_max < t_min".into()));
        }
        if kernels.len() as i64 != t_max - t_min {
            return Err(Error::InvalidChain(format!(
                "need {} kernels, got {}",
                t_max - t_min,
                kernels.len()
            )));
        }
        check_law(&initial, n, "initial law")?;
        let mut seen: Vec<*const Kernel> = Vec::new();
        for (i, k) in kernels.iter().enumerate() {
            if seen.contains(&Arc::as_ptr(k)) {
                continue;
            }
            seen.push(Arc::as_ptr(k));
            if k.rows.len() != n {
                return Err(Error::InvalidChain(format!("kernel {i} has {} rows", k.rows.len())));
            }
            for (s, row) in k.rows.iter().enumerate() {
                check_law(row, n, &format!("kernel {i} row {s}"))?;
            }
        }
        let mut initial = initial;
        initial.sort_by_key(|e| e.0);
        Ok(Self { labels, t_min, t_max, initial, kernels })
    }

    /// The same kernel at every step.
    pub fn homogeneous(labels: Vec<String>, t_min: i64, t_max: i64, initial: SparseRow, kernel: Kernel) -> Result<Self> {
        let k = Arc::new(kernel);
        let steps = (t_max - t_min).max(0) as usize;
        Self::new(labels, t_min, t_max, initial, vec![k; steps])
    }

    pub fn n_states(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn t_min(&self) -> i64 {
        self.t_min
    }

    pub fn t_max(&self) -> i64 {
        self.t_max
    }

    pub fn horizon(&self) -> usize {
        (self.t_max - self.t_min) as usize
    }

    pub fn initial(&self) -> &[(usize, Rational)] {
        &self.initial
    }

    /// Kernel moving from time `t` to `t + 1` (`t_min <= t < t_max`).
    pub fn kernel_at(&self, t: i64) -> &Kernel {
        &self.kernels[(t - self.t_min) as usize]
    }

    pub fn clamp(&self, t: i64) -> i64 {
        t.clamp(self.t_min, self.t_max)
    }

    /// True when every probability has a power-of-two denominator.
    pub fn is_dyadic(&self) -> bool {
        self.initial.iter().all(|(_, w)| Dyadic::is_representable(w))
            && self.kernels.iter().all(|k| k.rows.iter().flatten().all(|(_, w)| Dyadic::is_representable(w)))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let row = |r: &SparseRow| -> Vec<(usize, String)> { r.iter().map(|(s, w)| (*s, rational::format(w))).collect() };
        let kernels: Vec<Vec<Vec<(usize, String)>>> =
            self.kernels.iter().map(|k| k.rows.iter().map(row).collect()).collect();
        serde_json::json!({
            "states": self.labels,
            "t_min": self.t_min,
            "t_max": self.t_max,
            "initial": row(&self.initial),
            "kernels": kernels,
        })
    }

    /// Accepts either `"kernels"` (one per step) or a single `"kernel"`.
    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let raw: ChainJson = serde_json::from_value(v.clone()).map_err(|e| Error::Parse(e.to_string()))?;
        let parse_row = |r: &Vec<(usize, String)>| -> Result<SparseRow> {
            r.iter().map(|(s, w)| Ok((*s, rational::parse(w)?))).collect()
        };
        let parse_kernel =
            |k: &Vec<Vec<(usize, String)>>| -> Result<Kernel> { Ok(Kernel::new(k.iter().map(parse_row).collect::<Result<_>>()?)) };
        let initial = parse_row(&raw.initial)?;
        match (raw.kernels, raw.kernel) {
            (Some(ks), None) => {
                let kernels = ks.iter().map(|k| parse_kernel(k).map(Arc::new)).collect::<Result<_>>()?;
                Self::new(raw.states, raw.t_min, raw.t_max, initial, kernels)
            }
            (None, Some(k)) => Self::homogeneous(raw.states, raw.t_min, raw.t_max, initial, parse_kernel(&k)?),
            _ => Err(Error::Parse("chain needs exactly one of \"kernels\" or \"kernel\"".into())),
        }
    }
}

#[derive(Deserialize)]
struct ChainJson {
    states: Vec<String>,
    t_min: i64,
    t_max: i64,
    initial: Vec<(usize, String)>,
    kernels: Option<Vec<Vec<Vec<(usize, String)>>>>,
    kernel: Option<Vec<Vec<(usize, String)>>>,
}

pub const DOWNWARD_WALK_LIMIT: usize = 16;

/// Downward walk on `B_n` from the root, absorbed at the leaves. States are
/// the vertices in BFS order (returned alongside).
pub fn downward_walk(n: usize) -> Result<(ChainSpec, Vec<TreeVertex>)> {
    if n > DOWNWARD_WALK_LIMIT {
        return Err(Error::TooLarge { what: "tree depth", value: n, limit: DOWNWARD_WALK_LIMIT });
    }
    let vertices = enumerate_bn(n)?;
    let half = rational::ratio(1, 2);
    let rows = vertices
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if v.depth() == n {
                vec![(i, Rational::one())]
            } else {
                vec![(2 * i + 1, half.clone()), (2 * i + 2, half.clone())]
            }
        })
        .collect();
    let labels = vertices.iter().map(|v| v.to_string()).collect();
    let chain = ChainSpec::homogeneous(labels, 0, n as i64, vec![(0, Rational::one())], Kernel::new(rows))?;
    Ok((chain, vertices))
}

/// Walk on the oriented Laakso graph from the root, uniform over out-edges,
/// over times `0..=4^m`.
pub fn laakso_walk(g: &LaaksoGraph) -> Result<ChainSpec> {
    let rows = (0..g.vertex_count())
        .map(|v| {
            let outs = g.out_neighbors(v);
            if outs.is_empty() {
                vec![(v, Rational::one())]
            } else {
                let w = rational::ratio(1, outs.len() as i64);
                outs.iter().map(|&u| (u, w.clone())).collect()
            }
        })
        .collect();
    let labels = g.vertices().iter().map(|v| v.address.clone()).collect();
    ChainSpec::homogeneous(labels, 0, g.path_length() as i64, vec![(g.root(), Rational::one())], Kernel::new(rows))
}

/// Pairwise cost `c(x, y) = d(f(x), f(y))^p`, symmetric with zero diagonal.
pub trait PairCost<W: Weight>: Sync {
    fn cost(&self, x: usize, y: usize) -> W;

    /// `sum_{x,y} w_x w_y c(x, y)` for a law sorted by state.
    fn pair_sum(&self, law: &[(usize, W)]) -> W {
        let mut total = W::nil();
        for (i, (x, wx)) in law.iter().enumerate() {
            let mut inner = W::nil();
            for (y, wy) in &law[i + 1..] {
                inner.plus_assign(&wy.times(&self.cost(*x, *y)));
            }
            if !inner.is_nil() {
                total.plus_assign(&wx.times(&inner));
            }
        }
        total.plus(&total)
    }
}

/// Costs precomputed into a dense matrix.
#[derive(Clone, Debug)]
pub struct MatrixCost<W> {
    n: usize,
    values: Vec<W>,
}

impl<W: Weight> MatrixCost<W> {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> W) -> Self {
        let mut values = vec![W::nil(); n * n];
        for x in 0..n {
            for y in (x + 1)..n {
                let c = f(x, y);
                values[y * n + x] = c.clone();
                values[x * n + y] = c;
            }
        }
        Self { n, values }
    }
}

impl<W: Weight> PairCost<W> for MatrixCost<W> {
    #[inline]
    fn cost(&self, x: usize, y: usize) -> W {
        self.values[x * self.n + y].clone()
    }

    fn pair_sum(&self, law: &[(usize, W)]) -> W {
        let mut total = W::nil();
        for (i, (x, wx)) in law.iter().enumerate() {
            let row = &self.values[x * self.n..(x + 1) * self.n];
            let mut inner = W::nil();
            for (y, wy) in &law[i + 1..] {
                let c = &row[*y];
                if !c.is_nil() {
                    inner.plus_assign(&wy.times(c));
                }
            }
            if !inner.is_nil() {
                total.plus_assign(&wx.times(&inner));
            }
        }
        total.plus(&total)
    }
}

/// Costs from a closure.
pub struct FnCost<F>(pub F);

impl<W: Weight, F: Fn(usize, usize) -> W + Sync> PairCost<W> for FnCost<F> {
    fn cost(&self, x: usize, y: usize) -> W {
        (self.0)(x, y)
    }
}

/// States mapped to tree vertices, with a cost depending only on the two
/// depths and the lca depth. Laws supported on one level are summed by
/// grouping common prefixes, in `O(depth * support)`.
pub struct TreeLevelCost<W, F> {
    points: Vec<TreeVertex>,
    cost: F,
    _w: std::marker::PhantomData<W>,
}

impl<W: Weight, F: Fn(usize, usize, usize) -> W + Sync> TreeLevelCost<W, F> {
    /// `cost(h(x), h(y), h(lca))`. States must be listed so that state order
    /// agrees with (depth, path) order on each level, as BFS order does.
    pub fn new(points: Vec<TreeVertex>, cost: F) -> Self {
        Self { points, cost, _w: std::marker::PhantomData }
    }
}

impl<W: Weight, F: Fn(usize, usize, usize) -> W + Sync + Send> PairCost<W> for TreeLevelCost<W, F> {
    fn cost(&self, x: usize, y: usize) -> W {
        let (a, b) = (&self.points[x], &self.points[y]);
        if a == b {
            return W::nil();
        }
        (self.cost)(a.depth(), b.depth(), a.lca_depth(b))
    }

    fn pair_sum(&self, law: &[(usize, W)]) -> W {
        let Some(first) = law.first() else { return W::nil() };
        let depth = self.points[first.0].depth();
        if law.iter().any(|(s, _)| self.points[*s].depth() != depth) {
            return default_pair_sum(self, law);
        }
        // groups[i] = (prefix path, mass) at the current level, sorted by path
        let mut groups: Vec<(u128, W)> = law.iter().map(|(s, w)| (self.points[*s].path(), w.clone())).collect();
        let square_sum = |g: &[(u128, W)]| g.iter().fold(W::nil(), |acc, (_, w)| acc.plus(&w.times(w)));
        let mut below = square_sum(&groups);
        let mut total = W::nil();
        for j in (0..depth).rev() {
            let mut merged: Vec<(u128, W)> = Vec::with_capacity(groups.len());
            for (p, w) in groups {
                let q = p >> 1;
                match merged.last_mut() {
                    Some((lp, lw)) if *lp == q => lw.plus_assign(&w),
                    _ => merged.push((q, w)),
                }
            }
            groups = merged;
            let at_least_j = square_sum(&groups);
            let exactly_j = at_least_j.minus(&below);
            if !exactly_j.is_nil() {
                total.plus_assign(&exactly_j.times(&(self.cost)(depth, depth, j)));
            }
            below = at_least_j;
        }
        total
    }
}

fn default_pair_sum<W: Weight, C: PairCost<W> + ?Sized>(c: &C, law: &[(usize, W)]) -> W {
    let mut total = W::nil();
    for (i, (x, wx)) in law.iter().enumerate() {
        let mut inner = W::nil();
        for (y, wy) in &law[i + 1..] {
            inner.plus_assign(&wy.times(&c.cost(*x, *y)));
        }
        total.plus_assign(&wx.times(&inner));
    }
    total.plus(&total)
}

/// `d(f(x), f(y))^p` in floating point.
pub fn metric_cost_f64<M: Metric>(metric: &M, points: &[M::Point], p: f64) -> MatrixCost<f64> {
    MatrixCost::from_fn(points.len(), |x, y| metric.distance(&points[x], &points[y]).powf(p))
}

/// `d(f(x), f(y))^p` exactly, for integer `p`.
pub fn exact_metric_cost<M: ExactMetric>(metric: &M, points: &[M::Point], p: u32) -> MatrixCost<Rational> {
    MatrixCost::from_fn(points.len(), |x, y| num_traits::pow(metric.distance_exact(&points[x], &points[y]), p as usize))
}

/// Shortest-path cost on `G_m`, `(hops / 4^m)^p`.
pub fn laakso_cost<W: Weight>(g: &LaaksoGraph, p: u32) -> MatrixCost<W> {
    let n = g.vertex_count();
    let shift = (2 * g.level() as u32 * p) as f64;
    MatrixCost::from_fn(n, |x, y| {
        let h = g.hop_distance(x, y) as i64;
        W::from_int(h.checked_pow(p).expect("hop power overflow")).div_pow2(shift)
    })
}

/// Tree-metric cost on `B_n` vertices in BFS order.
pub fn tree_cost<W: Weight>(points: Vec<TreeVertex>, p: u32) -> TreeLevelCost<W, impl Fn(usize, usize, usize) -> W + Sync + Send> {
    TreeLevelCost::new(points, move |hx, hy, l| W::from_int(((hx + hy - 2 * l) as i64).pow(p)))
}

/// Exact report value set for one `(chain, cost, p)` evaluation.
#[derive(Clone, Debug, Serialize)]
pub struct ConvexityReport {
    pub p: f64,
    pub k_max: usize,
    /// `sum_t E[d(f(X_t), f(X~_t(t-2^k)))^p] / 2^{kp}` for `k = 0..=k_max`.
    pub per_k: Vec<Value>,
    pub lhs_total: Value,
    pub rhs: Value,
    /// `None` when `rhs = 0`.
    pub ratio: Option<Value>,
    pub pi_lower: Option<f64>,
}

impl ConvexityReport {
    pub fn require_ratio(&self) -> Result<f64> {
        self.ratio.as_ref().map(Value::to_f64).ok_or(Error::DegenerateChain)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,term,term_f64\n");
        for (k, v) in self.per_k.iter().enumerate() {
            s.push_str(&format!("{k},{v},{:.12e}\n", v.to_f64()));
        }
        s
    }
}

/// `ceil(log2(horizon)) + 1`.
pub fn default_k_max(horizon: usize) -> usize {
    if horizon <= 1 {
        return horizon;
    }
    (usize::BITS - (horizon - 1).leading_zeros()) as usize + 1
}

type Law<W> = Vec<(usize, W)>;

struct Prepared<W> {
    initial: Law<W>,
    kernels: Vec<Arc<Vec<Law<W>>>>,
    n: usize,
}

impl<W: Weight> Prepared<W> {
    fn new(chain: &ChainSpec) -> Self {
        let mut cache: Vec<(*const Kernel, Arc<Vec<Law<W>>>)> = Vec::new();
        let kernels = chain
            .kernels
            .iter()
            .map(|k| {
                let ptr = Arc::as_ptr(k);
                if let Some((_, c)) = cache.iter().find(|(p, _)| *p == ptr) {
                    return c.clone();
                }
                let conv: Arc<Vec<Law<W>>> =
                    Arc::new(k.rows.iter().map(|r| r.iter().map(|(s, w)| (*s, W::from_rational(w))).collect()).collect());
                cache.push((ptr, conv.clone()));
                conv
            })
            .collect();
        let initial = chain.initial.iter().map(|(s, w)| (*s, W::from_rational(w))).collect();
        Self { initial, kernels, n: chain.n_states() }
    }

    fn step(&self, law: &Law<W>, idx: usize, acc: &mut Vec<Option<W>>, touched: &mut Vec<usize>) -> Law<W> {
        let kernel = &self.kernels[idx];
        for (z, wz) in law {
            for (x, k) in &kernel[*z] {
                let add = wz.times(k);
                match &mut acc[*x] {
                    Some(v) => v.plus_assign(&add),
                    slot @ None => {
                        *slot = Some(add);
                        touched.push(*x);
                    }
                }
            }
        }
        touched.sort_unstable();
        let out = touched.iter().filter_map(|&x| acc[x].take().map(|w| (x, w))).filter(|(_, w)| !w.is_nil()).collect();
        touched.clear();
        out
    }

    fn scratch(&self) -> (Vec<Option<W>>, Vec<usize>) {
        (vec![None; self.n], Vec::new())
    }
}

fn marginals<W: Weight>(chain: &ChainSpec, prep: &Prepared<W>) -> Vec<Law<W>> {
    let (mut acc, mut touched) = prep.scratch();
    let mut out = vec![prep.initial.clone()];
    for i in 0..chain.horizon() {
        let next = prep.step(out.last().unwrap(), i, &mut acc, &mut touched);
        out.push(next);
    }
    out
}

/// `G(s, targets)`: for each target time `t > s` (sorted), the value
/// `sum_z mu_s(z) pair_sum(P(X_t = . | X_s = z))`.
fn forked_sums<W: Weight, C: PairCost<W>>(
    chain: &ChainSpec,
    prep: &Prepared<W>,
    marg: &[Law<W>],
    cost: &C,
    s: i64,
    targets: &[i64],
) -> Vec<W> {
    let (mut acc, mut touched) = prep.scratch();
    let mut out = vec![W::nil(); targets.len()];
    let Some(&last) = targets.last() else { return out };
    for (z, mu) in &marg[(s - chain.t_min) as usize] {
        let mut law: Law<W> = vec![(*z, W::unit())];
        let mut next = 0;
        for t in (s + 1)..=last {
            law = prep.step(&law, (t - 1 - chain.t_min) as usize, &mut acc, &mut touched);
            if targets[next] == t {
                let v = cost.pair_sum(&law);
                if !v.is_nil() {
                    out[next].plus_assign(&mu.times(&v));
                }
                next += 1;
            }
        }
    }
    out
}

/// `E[d(f(X_t), f(X~_t(s)))^p]` with the frozen-outside-horizon convention;
/// zero when `s >= t` after clamping.
pub fn pair_expectation<W: Weight, C: PairCost<W>>(chain: &ChainSpec, cost: &C, t: i64, s: i64) -> W {
    let (cs, ct) = (chain.clamp(s), chain.clamp(t));
    if cs >= ct {
        return W::nil();
    }
    let prep = Prepared::<W>::new(chain);
    let marg = marginals(chain, &prep);
    forked_sums(chain, &prep, &marg, cost, cs, &[ct]).remove(0)
}

/// `sum_t E[d(f(X_t), f(X_{t-1}))^p]`.
pub fn step_sum<W: Weight, C: PairCost<W>>(chain: &ChainSpec, cost: &C) -> W {
    let prep = Prepared::<W>::new(chain);
    let marg = marginals(chain, &prep);
    step_sum_with(chain, &prep, &marg, cost)
}

fn step_sum_with<W: Weight, C: PairCost<W>>(chain: &ChainSpec, prep: &Prepared<W>, marg: &[Law<W>], cost: &C) -> W {
    let mut rhs = W::nil();
    for i in 0..chain.horizon() {
        for (z, mu) in &marg[i] {
            let mut inner = W::nil();
            for (x, k) in &prep.kernels[i][*z] {
                if x != z {
                    inner.plus_assign(&k.times(&cost.cost(*z, *x)));
                }
            }
            if !inner.is_nil() {
                rhs.plus_assign(&mu.times(&inner));
            }
        }
    }
    rhs
}

/// Multiplicity of each clamped pair `(s, t)` in the `k`-th time sum.
/// Times outside `t_min < t < t_max + 2^k` contribute nothing; the boundary
/// pairs on either side are asserted to clamp to `s >= t`.
pub fn clamped_pairs(chain: &ChainSpec, k: usize) -> BTreeMap<(i64, i64), u64> {
    let span = 1i64 << k;
    let mut counts = BTreeMap::new();
    let (lo, hi) = (chain.t_min + 1, chain.t_max + span - 1);
    for t in lo..=hi {
        let (cs, ct) = (chain.clamp(t - span), chain.clamp(t));
        if cs < ct {
            *counts.entry((cs, ct)).or_insert(0) += 1;
        }
    }
    for t in [lo - 1, hi + 1] {
        assert!(chain.clamp(t - span) >= chain.clamp(t), "boundary term at t = {t} does not vanish");
    }
    counts
}

/// Both sides of the Markov p-convexity inequality for one chain and map.
/// `p` must be integral for exact weight types.
pub fn convexity_ratio<W: Weight, C: PairCost<W>>(
    chain: &ChainSpec,
    cost: &C,
    p: f64,
    k_max: Option<usize>,
) -> Result<ConvexityReport> {
    if p < 1.0 {
        return Err(Error::PreconditionViolated(format!("p = {p} < 1")));
    }
    let k_max = k_max.unwrap_or_else(|| default_k_max(chain.horizon()));
    let prep = Prepared::<W>::new(chain);
    let marg = marginals(chain, &prep);
    let rhs = step_sum_with(chain, &prep, &marg, cost);

    let per_k_pairs: Vec<BTreeMap<(i64, i64), u64>> = (0..=k_max).map(|k| clamped_pairs(chain, k)).collect();
    let mut targets: BTreeMap<i64, Vec<i64>> = BTreeMap::new();
    for pairs in &per_k_pairs {
        for &(s, t) in pairs.keys() {
            targets.entry(s).or_default().push(t);
        }
    }
    let mut g: BTreeMap<(i64, i64), W> = BTreeMap::new();
    for (s, ts) in targets.iter_mut() {
        ts.sort_unstable();
        ts.dedup();
        let vals = forked_sums(chain, &prep, &marg, cost, *s, ts);
        for (t, v) in ts.iter().zip(vals) {
            g.insert((*s, *t), v);
        }
    }

    let mut per_k = Vec::with_capacity(k_max + 1);
    let mut lhs = W::nil();
    for (k, pairs) in per_k_pairs.iter().enumerate() {
        let mut term = W::nil();
        for (key, count) in pairs {
            term.plus_assign(&g[key].times(&W::from_int(*count as i64)));
        }
        let term = term.div_pow2(k as f64 * p);
        lhs.plus_assign(&term);
        per_k.push(term.to_value());
    }
    let (lhs_total, rhs) = (lhs.to_value(), rhs.to_value());
    let ratio = lhs_total.ratio(&rhs);
    let pi_lower = ratio.as_ref().map(|r| r.to_f64().powf(1.0 / p));
    Ok(ConvexityReport { p, k_max, per_k, lhs_total, rhs, ratio, pi_lower })
}

/// Like [`convexity_ratio`] but fails with `DegenerateChain` when `rhs = 0`.
pub fn convexity_ratio_strict<W: Weight, C: PairCost<W>>(
    chain: &ChainSpec,
    cost: &C,
    p: f64,
    k_max: Option<usize>,
) -> Result<ConvexityReport> {
    let r = convexity_ratio(chain, cost, p, k_max)?;
    r.require_ratio()?;
    Ok(r)
}

/// Exact report for the Laakso walk with the identity map.
pub fn laakso_report(g: &LaaksoGraph, p: u32, k_max: Option<usize>) -> Result<ConvexityReport> {
    let chain = laakso_walk(g)?;
    let cost = laakso_cost::<Dyadic>(g, p);
    convexity_ratio(&chain, &cost, p as f64, k_max)
}

/// Exact report for the downward walk on `B_n` with the identity map.
pub fn bn_report(n: usize, p: u32, k_max: Option<usize>) -> Result<ConvexityReport> {
    let (chain, pts) = downward_walk(n)?;
    let cost = tree_cost::<Dyadic>(pts, p);
    convexity_ratio(&chain, &cost, p as f64, k_max)
}

/// `|T_k|` and the certified lower bound `|T_k| 2^{-(2m+3)p-1}` on the `k`-th
/// term of the Laakso walk, for `0 <= k <= 2m-2`.
#[derive(Clone, Debug, Serialize)]
pub struct LaaksoBound {
    pub m: usize,
    pub k: usize,
    pub p: u32,
    pub t_k: u64,
    pub bound: Value,
}

pub fn per_k_laakso_bound(g: &LaaksoGraph, k: usize, p: u32) -> Result<LaaksoBound> {
    let m = g.level();
    if m == 0 || k > 2 * m - 2 {
        return Err(Error::OutOfRange(format!("k = {k} outside 0..=2m-2 for m = {m}")));
    }
    let h = k.div_ceil(2) as i64;
    let four_h = rational::pow2(2 * h);
    let quarter_step = rational::pow2(2 * (h - 2));
    let horizon = 4i64.pow(m as u32);
    let last_i = 4i64.pow((m as i64 - h - 1).max(0) as u32) + 1;
    let mut count = 0u64;
    for i in 0..=last_i {
        let base = rational::int(4 * i + 1) * &four_h;
        let lo = (&base + &quarter_step).ceil().to_integer();
        let hi = (&base + rational::int(2) * &quarter_step).floor().to_integer();
        let lo: i64 = num_traits::ToPrimitive::to_i64(&lo).unwrap().max(0);
        let hi: i64 = num_traits::ToPrimitive::to_i64(&hi).unwrap().min(horizon - 1);
        if hi >= lo {
            count += (hi - lo + 1) as u64;
        }
    }
    let bound = rational::int(count as i64) * rational::pow2(-((2 * m as i64 + 3) * p as i64 + 1));
    Ok(LaaksoBound { m, k, p, t_k: count, bound: Value::Exact(bound) })
}

#[derive(Clone, Debug, Serialize)]
pub struct DistortionCertificate {
    pub m: usize,
    pub p: u32,
    /// `(LHS / RHS)^{1/p}` for the Laakso walk on `G_m`.
    pub pi_lower: f64,
    pub target_pi: f64,
    /// Lower bound on `lip(f) * lip(f^-1)` for any map into the target.
    pub lower_bound: f64,
    /// Distortion of `f` computed directly; `None` if `f` collapses a pair.
    pub actual: Option<f64>,
}

/// If the target has Markov p-convexity constant at most `target_pi`, then
/// `dist(f) >= pi_lower(G_m) / target_pi`. Without an upper bound on the
/// target there is nothing to certify.
pub fn embedding_distortion_certificate(
    g: &LaaksoGraph,
    f: &PointMap<'_>,
    p: u32,
    target_pi: Option<f64>,
) -> Result<DistortionCertificate> {
    let Some(target_pi) = target_pi else {
        return Err(Error::PreconditionViolated("no Markov convexity bound for the target".into()));
    };
    if f.source().len() != g.vertex_count() {
        return Err(Error::PreconditionViolated(format!(
            "map has {} source points, G_{} has {}",
            f.source().len(),
            g.level(),
            g.vertex_count()
        )));
    }
    let report = laakso_report(g, p, None)?;
    let pi_lower = report.pi_lower.ok_or(Error::DegenerateChain)?;
    let d = f.distortion();
    Ok(DistortionCertificate {
        m: g.level(),
        p,
        pi_lower,
        target_pi,
        lower_bound: pi_lower / target_pi,
        actual: d.is_finite().then_some(d.dist),
    })
}

/// A random time-inhomogeneous chain on `n` states with small-denominator
/// laws; `sparse` limits every law to at most two states.
pub fn random_chain<R: rand::Rng + ?Sized>(n: usize, horizon: i64, sparse: bool, rng: &mut R) -> ChainSpec {
    let row = |rng: &mut R| -> SparseRow {
        let support: Vec<usize> = if sparse {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a == b { vec![a] } else { vec![a, b] }
        } else {
            (0..n).filter(|_| rng.gen_bool(0.6)).collect()
        };
        let support = if support.is_empty() { vec![rng.gen_range(0..n)] } else { support };
        let weights: Vec<i64> = support.iter().map(|_| rng.gen_range(1..5)).collect();
        let total: i64 = weights.iter().sum();
        support.into_iter().zip(weights).map(|(s, w)| (s, rational::ratio(w, total))).collect()
    };
    let initial = row(rng);
    let kernels = (0..horizon).map(|_| Arc::new(Kernel::new((0..n).map(|_| row(rng)).collect()))).collect();
    let labels = (0..n).map(|i| format!("s{i}")).collect();
    ChainSpec::new(labels, 0, horizon, initial, kernels).expect("rows are probability laws")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{FiniteMetricSpace, RationalLine};
    use crate::rational::{int, ratio};
    use crate::trees::tree_distance;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// All trajectories over the horizon with their probabilities.
    fn trajectories(chain: &ChainSpec) -> Vec<(Vec<usize>, Rational)> {
        let mut paths: Vec<(Vec<usize>, Rational)> = chain.initial().iter().map(|(s, w)| (vec![*s], w.clone())).collect();
        for t in chain.t_min()..chain.t_max() {
            let k = chain.kernel_at(t);
            paths = paths
                .into_iter()
                .flat_map(|(p, w)| {
                    let last = *p.last().unwrap();
                    k.row(last).iter().map(move |(x, kx)| {
                        let mut q = p.clone();
                        q.push(*x);
                        (q, &w * kx)
                    }).collect::<Vec<_>>()
                })
                .filter(|(_, w)| !w.is_zero())
                .collect();
        }
        paths
    }

    /// Enumerates pairs of trajectories that agree up to time `s`.
    fn oracle_pair(chain: &ChainSpec, cost: &dyn Fn(usize, usize) -> Rational, t: i64, s: i64) -> Rational {
        let (cs, ct) = (chain.clamp(s), chain.clamp(t));
        if cs >= ct {
            return Rational::zero();
        }
        let paths = trajectories(chain);
        let (is, it) = ((cs - chain.t_min()) as usize, (ct - chain.t_min()) as usize);
        let mut prefix: BTreeMap<Vec<usize>, Rational> = BTreeMap::new();
        for (p, w) in &paths {
            *prefix.entry(p[..=is].to_vec()).or_insert_with(Rational::zero) += w;
        }
        let mut total = Rational::zero();
        for (p, w) in &paths {
            for (q, v) in &paths {
                if p[..=is] == q[..=is] {
                    total += w * v / &prefix[&p[..=is].to_vec()] * cost(p[it], q[it]);
                }
            }
        }
        total
    }

    fn line_cost(pos: &[Rational], p: u32) -> MatrixCost<Rational> {
        exact_metric_cost(&RationalLine, pos, p)
    }

    #[test]
    fn chain_validation() {
        let bad = ChainSpec::homogeneous(vec!["a".into()], 0, 1, vec![(0, ratio(1, 2))], Kernel::identity(1));
        assert!(bad.is_err());
        let k = Kernel::new(vec![vec![(0, ratio(1, 3)), (1, ratio(1, 3))], vec![(1, int(1))]]);
        assert!(ChainSpec::homogeneous(vec!["a".into(), "b".into()], 0, 1, vec![(0, int(1))], k).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = random_chain(4, 3, false, &mut rng);
        assert_eq!(ChainSpec::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn downward_walk_marginals() {
        let (c, pts) = downward_walk(1).unwrap();
        let prep = Prepared::<Rational>::new(&c);
        let m = marginals(&c, &prep);
        assert_eq!(m[1], vec![(1, ratio(1, 2)), (2, ratio(1, 2))]);
        let (c2, _) = downward_walk(2).unwrap();
        let m2 = marginals(&c2, &Prepared::<Rational>::new(&c2));
        assert!(m2[2].iter().all(|(s, w)| *w == ratio(1, 4) && pts.len() <= *s + 4));
        let (c4, pts4) = downward_walk(4).unwrap();
        let m4 = marginals(&c4, &Prepared::<Rational>::new(&c4));
        for t in 0..=4usize {
            assert_eq!(m4[t].len(), 1 << t);
            assert!(m4[t].iter().all(|(s, w)| pts4[*s].depth() == t && *w == rational::pow2(-(t as i64))));
        }
        assert!(downward_walk(17).is_err());
    }

    #[test]
    fn bn_adjacent_fork_is_two_to_p_minus_one() {
        let (c, pts) = downward_walk(6).unwrap();
        for p in [1u32, 2, 3] {
            let cost = tree_cost::<Rational>(pts.clone(), p);
            for t in 1..=6 {
                assert_eq!(pair_expectation(&c, &cost, t, t - 1), rational::pow2(p as i64 - 1));
            }
        }
    }

    #[test]
    fn deterministic_chain_is_zero() {
        let labels: Vec<String> = (0..4).map(|i| i.to_string()).collect();
        let k = Kernel::new((0..4).map(|i| vec![((i + 1) % 4, int(1))]).collect());
        let c = ChainSpec::homogeneous(labels, 0, 6, vec![(0, int(1))], k).unwrap();
        let pos: Vec<Rational> = (0..4).map(int).collect();
        let cost = line_cost(&pos, 2);
        for t in -2..9 {
            for s in -3..9 {
                assert!(pair_expectation::<Rational, _>(&c, &cost, t, s).is_nil());
            }
        }
        let r = convexity_ratio::<Rational, _>(&c, &cost, 2.0, None).unwrap();
        assert!(r.lhs_total.exact().unwrap().is_zero());
        assert!(r.ratio.is_some());
    }

    #[test]
    fn constant_chain_is_degenerate() {
        let c = ChainSpec::homogeneous(vec!["x".into()], 0, 4, vec![(0, int(1))], Kernel::identity(1)).unwrap();
        let cost = line_cost(&[int(0)], 2);
        let r = convexity_ratio::<Rational, _>(&c, &cost, 2.0, None).unwrap();
        assert!(r.rhs.exact().unwrap().is_zero());
        assert_eq!(r.require_ratio().unwrap_err(), Error::DegenerateChain);
        assert!(convexity_ratio_strict::<Rational, _>(&c, &cost, 2.0, None).is_err());
    }

    #[test]
    fn tree_fast_path_matches_matrix() {
        let (c, pts) = downward_walk(7).unwrap();
        let fast = tree_cost::<Rational>(pts.clone(), 2);
        let slow = MatrixCost::from_fn(pts.len(), |x, y| int((tree_distance(&pts[x], &pts[y]) as i64).pow(2)));
        let a = convexity_ratio::<Rational, _>(&c, &fast, 2.0, None).unwrap();
        let b = convexity_ratio::<Rational, _>(&c, &slow, 2.0, None).unwrap();
        assert_eq!(a.per_k, b.per_k);
        assert_eq!(a.rhs, b.rhs);
        let d = convexity_ratio::<Dyadic, _>(&c, &tree_cost::<Dyadic>(pts, 2), 2.0, None).unwrap();
        assert_eq!(a.per_k, d.per_k);
    }

    #[test]
    fn laakso_pair_matches_path_enumeration() {
        let g = LaaksoGraph::build(2).unwrap();
        let c = laakso_walk(&g).unwrap();
        let cost = laakso_cost::<Rational>(&g, 2);
        let oracle_cost = |x: usize, y: usize| num_traits::pow(g.distance(x, y), 2);
        for (t, s) in [(2, 1), (5, 1), (8, 4), (16, 0), (6, 5), (13, 9), (20, 3)] {
            assert_eq!(pair_expectation(&c, &cost, t, s), oracle_pair(&c, &oracle_cost, t, s), "t={t} s={s}");
        }
    }

    #[test]
    fn laakso_level_one_branch_law() {
        let g = LaaksoGraph::build(1).unwrap();
        let c = laakso_walk(&g).unwrap();
        let m = marginals(&c, &Prepared::<Rational>::new(&c));
        assert_eq!(m[2], vec![(2, ratio(1, 2)), (3, ratio(1, 2))]);
        assert_eq!(m[4], vec![(g.sink(), int(1))]);
        let g0 = LaaksoGraph::build(0).unwrap();
        let c0 = laakso_walk(&g0).unwrap();
        assert_eq!(c0.horizon(), 1);
        assert_eq!(convexity_ratio::<Rational, _>(&c0, &laakso_cost::<Rational>(&g0, 2), 2.0, None).unwrap().lhs_total, Value::Exact(int(0)));
    }

    #[test]
    fn laakso_rhs_small() {
        for m in 1..=3 {
            let g = LaaksoGraph::build(m).unwrap();
            for p in [2u32, 3] {
                let r = laakso_report(&g, p, Some(0)).unwrap();
                let want = rational::pow2(-2 * (m as i64) * (p as i64 - 1));
                assert_eq!(r.rhs, Value::Exact(want));
            }
        }
    }

    #[test]
    fn per_k_bound_counts() {
        let g = LaaksoGraph::build(3).unwrap();
        // k <= 2 gives h <= 1, where the intervals hold no integers
        for k in 0..=2 {
            assert_eq!(per_k_laakso_bound(&g, k, 2).unwrap().t_k, 0);
        }
        // h = 2: intervals [16(4i+1)+1, 16(4i+1)+2] for i = 0..=1, both inside [0, 63]
        assert_eq!(per_k_laakso_bound(&g, 3, 2).unwrap().t_k, 2);
        assert!(per_k_laakso_bound(&g, 5, 2).is_err());
        assert!(per_k_laakso_bound(&LaaksoGraph::build(0).unwrap(), 0, 2).is_err());
    }

    #[test]
    fn certificate_below_actual_distortion() {
        let g = LaaksoGraph::build(2).unwrap();
        let src = g.metric_space().unwrap();
        assert!(embedding_distortion_certificate(&g, &PointMap::identity(&src).unwrap(), 2, None).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..5 {
            // vertex level on one axis plus a small random perturbation
            let pts: Vec<Vec<f64>> = g
                .vertices()
                .iter()
                .map(|v| {
                    let mut x: Vec<f64> = (0..8).map(|_| rng.gen_range(-0.05..0.05) * (trial + 1) as f64).collect();
                    x[0] += v.level as f64 / g.path_length() as f64;
                    x
                })
                .collect();
            let rows = pts
                .iter()
                .map(|a| pts.iter().map(|b| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()).collect())
                .collect();
            let tgt = FiniteMetricSpace::float(src.labels().to_vec(), rows, 1e-12).unwrap();
            let f = PointMap::new(&src, &tgt, (0..src.len()).collect()).unwrap();
            let cert = embedding_distortion_certificate(&g, &f, 2, Some(4.0)).unwrap();
            assert!(cert.lower_bound <= cert.actual.unwrap());
        }
        let g1 = LaaksoGraph::build(1).unwrap();
        let s1 = g1.metric_space().unwrap();
        let cert = embedding_distortion_certificate(&g1, &PointMap::identity(&s1).unwrap(), 2, Some(4.0)).unwrap();
        assert!(cert.lower_bound <= 1.0);
    }

    #[test]
    fn k_max_default() {
        assert_eq!(default_k_max(1), 1);
        assert_eq!(default_k_max(4), 3);
        assert_eq!(default_k_max(5), 4);
        assert_eq!(default_k_max(256), 9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn pair_expectation_matches_oracle(seed in any::<u64>(), n in 2usize..6, horizon in 1i64..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_chain(n, horizon, false, &mut rng);
            let pos: Vec<Rational> = (0..n).map(|_| ratio(rng.gen_range(-9..9), rng.gen_range(1..4))).collect();
            let cost = line_cost(&pos, 2);
            let oc = |x: usize, y: usize| num_traits::pow(&pos[x] - &pos[y], 2);
            for _ in 0..4 {
                let t = rng.gen_range(-1..horizon + 3);
                let s = rng.gen_range(-2..horizon + 2);
                prop_assert_eq!(pair_expectation(&c, &cost, t, s), oracle_pair(&c, &oc, t, s));
            }
        }

        #[test]
        fn sparse_long_chains_match_oracle(seed in any::<u64>(), n in 2usize..20, horizon in 1i64..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_chain(n, horizon, true, &mut rng);
            let pos: Vec<Rational> = (0..n).map(|_| int(rng.gen_range(-9..9))).collect();
            let cost = line_cost(&pos, 3);
            let oc = |x: usize, y: usize| num_traits::pow(num_traits::Signed::abs(&(&pos[x] - &pos[y])), 3);
            let t = rng.gen_range(1..=horizon);
            let s = rng.gen_range(-1..t);
            prop_assert_eq!(pair_expectation(&c, &cost, t, s), oracle_pair(&c, &oc, t, s));
            // float mode agrees to 1e-12
            let fc = metric_cost_f64(&crate::metric::RealLine, &pos.iter().map(rational::to_f64).collect::<Vec<_>>(), 3.0);
            let f = pair_expectation::<f64, _>(&c, &fc, t, s);
            let e = rational::to_f64(&oracle_pair(&c, &oc, t, s));
            prop_assert!((f - e).abs() <= 1e-12 * e.abs().max(1.0));
        }

        #[test]
        fn independent_of_s_before_start(seed in any::<u64>(), n in 2usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_chain(n, 4, false, &mut rng);
            let pos: Vec<Rational> = (0..n).map(|_| int(rng.gen_range(-5..5))).collect();
            let cost = line_cost(&pos, 2);
            let base = pair_expectation::<Rational, _>(&c, &cost, 3, 0);
            for s in -5..0 {
                prop_assert_eq!(pair_expectation::<Rational, _>(&c, &cost, 3, s), base.clone());
            }
            for s in 3..7 {
                prop_assert!(pair_expectation::<Rational, _>(&c, &cost, 3, s).is_nil());
            }
        }

        #[test]
        fn per_k_terms_below_crude_bound(seed in any::<u64>(), n in 2usize..6, horizon in 1i64..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_chain(n, horizon, false, &mut rng);
            let pos: Vec<Rational> = (0..n).map(|_| int(rng.gen_range(-5..5))).collect();
            let cost = line_cost(&pos, 2);
            let r = convexity_ratio::<Rational, _>(&c, &cost, 2.0, None).unwrap();
            let rhs = r.rhs.exact().unwrap().clone();
            for term in &r.per_k {
                prop_assert!(*term.exact().unwrap() <= &rhs * int(16));
            }
        }

        #[test]
        fn relabeling_invariance(seed in any::<u64>(), n in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_chain(n, 4, false, &mut rng);
            let pos: Vec<Rational> = (0..n).map(|_| int(rng.gen_range(-5..5))).collect();
            // permute states
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() { perm.swap(i, rng.gen_range(0..=i)); }
            let relabel = |r: &SparseRow| -> SparseRow { r.iter().map(|(s, w)| (perm[*s], w.clone())).collect() };
            let kernels = (0..4).map(|t| {
                let k = c.kernel_at(t);
                let mut rows = vec![Vec::new(); n];
                for s in 0..n { rows[perm[s]] = relabel(&k.row(s).to_vec()); }
                Arc::new(Kernel::new(rows))
            }).collect();
            let c2 = ChainSpec::new(c.labels().to_vec(), 0, 4, relabel(&c.initial().to_vec()), kernels).unwrap();
            let mut pos2 = vec![int(0); n];
            for s in 0..n { pos2[perm[s]] = pos[s].clone(); }
            let a = convexity_ratio::<Rational, _>(&c, &line_cost(&pos, 2), 2.0, None).unwrap();
            let b = convexity_ratio::<Rational, _>(&c2, &line_cost(&pos2, 2), 2.0, None).unwrap();
            prop_assert_eq!(a.per_k, b.per_k);
            prop_assert_eq!(a.rhs, b.rhs);
        }
    }
}
