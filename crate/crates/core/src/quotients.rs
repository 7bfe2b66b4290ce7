//! Lipschitz quotients between finite metric spaces and lifting of Markov
//! chains through them.
//!
//! A surjection `f: X -> Y` is an `(a, b)`-quotient when for every `x` and
//! `r >= 0`
//!
//! ```text
//! B_Y(f(x), r/a) ⊆ f(B_X(x, r)) ⊆ B_Y(f(x), b r)
//! ```
//!
//! with closed balls. For fixed `x`, membership of a point in any of the three
//! sets only changes at radii of the form `d_X(x, x')`, `a d_Y(f(x), y)` or
//! `d_Y(f(x), y) / b`, and is constant on the open intervals between them. So
//! checking every breakpoint, every midpoint between consecutive breakpoints
//! and one radius past the last is a complete test.

use std::collections::HashMap;
use std::sync::Arc;

use num_traits::{One, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::markov::{self, ChainSpec, Kernel, MatrixCost};
use crate::metric::{FiniteMetricSpace, PointMap};
use crate::rational::{self, Rational};

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuotientViolation {
    /// `y` lies in `B_Y(f(x), r/a)` but no preimage of `y` lies in `B_X(x, r)`.
    Openness {
        x: usize,
        #[serde(with = "rational::serde_str")]
        r: Rational,
        y: usize,
    },
    /// `x2` lies in `B_X(x, r)` but `f(x2)` is outside `B_Y(f(x), b r)`.
    Lipschitz {
        x: usize,
        #[serde(with = "rational::serde_str")]
        r: Rational,
        x2: usize,
    },
}

fn exact_rows(space: &FiniteMetricSpace, what: &str) -> Result<Vec<Vec<Rational>>> {
    if !space.is_exact() {
        return Err(Error::PreconditionViolated(format!("{what} space must have exact distances")));
    }
    let n = space.len();
    Ok((0..n).map(|i| (0..n).map(|j| space.d_exact(i, j).unwrap().clone()).collect()).collect())
}

fn preimages(map: &PointMap) -> Result<Vec<Vec<usize>>> {
    let mut pre = vec![Vec::new(); map.target().len()];
    for (x, &y) in map.assignment().iter().enumerate() {
        pre[y].push(x);
    }
    if let Some(y) = pre.iter().position(Vec::is_empty) {
        return Err(Error::NotSurjective(y));
    }
    Ok(pre)
}

/// All violations of the `(a, b)`-quotient inclusions, reporting each
/// offending pair once at the least failing test radius.
pub fn verify_quotient(map: &PointMap, a: &Rational, b: &Rational) -> Result<Vec<QuotientViolation>> {
    if *a <= Rational::zero() || *b <= Rational::zero() {
        return Err(Error::PreconditionViolated("quotient constants must be positive".into()));
    }
    let dx = exact_rows(map.source(), "source")?;
    let dy = exact_rows(map.target(), "target")?;
    let pre = preimages(map)?;
    let f = map.assignment();
    let (nx, ny) = (dx.len(), dy.len());
    let mut out = Vec::new();
    for x in 0..nx {
        let fx = f[x];
        let mut radii: Vec<Rational> = dx[x].clone();
        for y in 0..ny {
            radii.push(a * &dy[fx][y]);
            radii.push(&dy[fx][y] / b);
        }
        radii.sort();
        radii.dedup();
        let mut tests = Vec::with_capacity(2 * radii.len() + 1);
        for w in radii.windows(2) {
            tests.push(w[0].clone());
            tests.push((&w[0] + &w[1]) / rational::int(2));
        }
        let last = radii.last().unwrap().clone();
        tests.push(last.clone());
        tests.push(last + Rational::one());

        let mut open_seen = vec![false; ny];
        let mut lip_seen = vec![false; nx];
        for r in &tests {
            let r_over_a = r / a;
            for y in 0..ny {
                if !open_seen[y] && dy[fx][y] <= r_over_a && !pre[y].iter().any(|&x2| dx[x][x2] <= *r) {
                    open_seen[y] = true;
                    out.push(QuotientViolation::Openness { x, r: r.clone(), y });
                }
            }
            let br = b * r;
            for x2 in 0..nx {
                if !lip_seen[x2] && dx[x][x2] <= *r && dy[fx][f[x2]] > br {
                    lip_seen[x2] = true;
                    out.push(QuotientViolation::Lipschitz { x, r: r.clone(), x2 });
                }
            }
        }
    }
    Ok(out)
}

/// The least `(a, b)` for which `map` is an `(a, b)`-quotient:
/// `a = max d_X(x, f^{-1}(y)) / d_Y(f(x), y)` and `b` the Lipschitz constant.
/// A constant map onto a single point gets `a = 1`.
pub fn quotient_constants(map: &PointMap) -> Result<(Rational, Rational)> {
    let dx = exact_rows(map.source(), "source")?;
    let dy = exact_rows(map.target(), "target")?;
    let pre = preimages(map)?;
    let f = map.assignment();
    let mut a = Rational::zero();
    let mut b = Rational::zero();
    for x in 0..dx.len() {
        for (y, ys) in pre.iter().enumerate() {
            if y == f[x] {
                continue;
            }
            let rho = ys.iter().map(|&x2| &dx[x][x2]).min().unwrap();
            let q = rho / &dy[f[x]][y];
            if q > a {
                a = q;
            }
        }
        for x2 in 0..dx.len() {
            if x2 != x && !dy[f[x]][f[x2]].is_zero() {
                let q = &dy[f[x]][f[x2]] / &dx[x][x2];
                if q > b {
                    b = q;
                }
            }
        }
    }
    if a.is_zero() {
        a = Rational::one();
    }
    if b.is_zero() {
        b = Rational::one();
    }
    Ok((a, b))
}

/// A verified `(a, b)`-quotient.
#[derive(Debug)]
pub struct QuotientMap<'a> {
    map: PointMap<'a>,
    a: Rational,
    b: Rational,
    pre: Vec<Vec<usize>>,
}

impl<'a> QuotientMap<'a> {
    pub fn new(map: PointMap<'a>, a: Rational, b: Rational) -> Result<Self> {
        let v = verify_quotient(&map, &a, &b)?;
        if let Some(first) = v.first() {
            return Err(Error::PreconditionViolated(format!("not an (a, b)-quotient: {first:?}")));
        }
        let pre = preimages(&map)?;
        Ok(Self { map, a, b, pre })
    }

    pub fn map(&self) -> &PointMap<'a> {
        &self.map
    }

    pub fn a(&self) -> &Rational {
        &self.a
    }

    pub fn b(&self) -> &Rational {
        &self.b
    }

    /// `D = a b`.
    pub fn d(&self) -> Rational {
        &self.a * &self.b
    }
}

/// Lifts trajectories of `g(X_t)` to `X` through a quotient, step by step.
#[derive(Debug)]
pub struct Lifter<'q, 'a> {
    q: &'q QuotientMap<'a>,
    g: Vec<usize>,
}

/// Prepares lifting of the process `g(X_t)` for a chain on `0..g.len()`.
pub fn lift_chain<'q, 'a>(q: &'q QuotientMap<'a>, chain: &ChainSpec, g: &[usize]) -> Result<Lifter<'q, 'a>> {
    if g.len() != chain.n_states() {
        return Err(Error::PreconditionViolated(format!("g has {} entries for {} states", g.len(), chain.n_states())));
    }
    if let Some(&bad) = g.iter().find(|&&y| y >= q.map.target().len()) {
        return Err(Error::OutOfRange(format!("g maps to point {bad} outside the target")));
    }
    Ok(Lifter { q, g: g.to_vec() })
}

impl Lifter<'_, '_> {
    fn start(&self, w: usize) -> usize {
        self.q.pre[self.g[w]][0]
    }

    /// Next lifted point: the first preimage of `g(to)` within
    /// `a d_Y(g(from), g(to))` of `cur`.
    fn step(&self, cur: usize, from: usize, to: usize) -> Result<usize> {
        let (sx, sy) = (self.q.map.source(), self.q.map.target());
        let (yf, yt) = (self.g[from], self.g[to]);
        let reach = &self.q.a * sy.d_exact(yf, yt).unwrap();
        let next = self.q.pre[yt]
            .iter()
            .copied()
            .find(|&x| *sx.d_exact(cur, x).unwrap() <= reach)
            .ok_or_else(|| Error::LiftFailed(format!("no preimage of {yt} within {} of {cur}", rational::format(&reach))))?;
        Ok(next)
    }

    /// `h*` along a trajectory of states; `f(h*_t) = g(w_t)` and
    /// `d_X(h*_{t-1}, h*_t) <= a d_Y(g(w_{t-1}), g(w_t))` are asserted.
    pub fn lift(&self, trajectory: &[usize]) -> Result<Vec<usize>> {
        let Some(&first) = trajectory.first() else { return Ok(Vec::new()) };
        let mut out = vec![self.start(first)];
        for w in trajectory.windows(2) {
            let next = self.step(*out.last().unwrap(), w[0], w[1])?;
            out.push(next);
        }
        self.check(trajectory, &out);
        Ok(out)
    }

    fn check(&self, trajectory: &[usize], lifted: &[usize]) {
        let (sx, sy) = (self.q.map.source(), self.q.map.target());
        for (i, (&w, &x)) in trajectory.iter().zip(lifted).enumerate() {
            assert_eq!(self.q.map.image(x), self.g[w], "lift leaves the fibre at step {i}");
            if i > 0 {
                let step = sx.d_exact(lifted[i - 1], x).unwrap();
                let bound = &self.q.a * sy.d_exact(self.g[trajectory[i - 1]], self.g[w]).unwrap();
                assert!(*step <= bound, "lifted step {i} too long");
            }
        }
    }
}

pub const HISTORY_HORIZON_LIMIT: usize = 8;
pub const HISTORY_STATE_LIMIT: usize = 20;
pub const HISTORY_CHAIN_LIMIT: usize = 200_000;

/// The chain of reachable histories `(w_{t_min}, ..., w_t)` and the lifted
/// point of each.
struct HistoryChain {
    chain: ChainSpec,
    last: Vec<usize>,
    lifted: Vec<usize>,
}

fn history_chain(lifter: &Lifter, chain: &ChainSpec) -> Result<HistoryChain> {
    let horizon = chain.horizon();
    if horizon > HISTORY_HORIZON_LIMIT {
        return Err(Error::HorizonTooLong { horizon, limit: HISTORY_HORIZON_LIMIT });
    }
    if chain.n_states() > HISTORY_STATE_LIMIT {
        return Err(Error::TooLarge { what: "states", value: chain.n_states(), limit: HISTORY_STATE_LIMIT });
    }
    let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut hist: Vec<Vec<usize>> = Vec::new();
    let mut lifted: Vec<usize> = Vec::new();
    let mut initial = Vec::new();
    for (w, p) in chain.initial() {
        if p.is_zero() {
            continue;
        }
        index.insert(vec![*w], hist.len());
        initial.push((hist.len(), p.clone()));
        lifted.push(lifter.start(*w));
        hist.push(vec![*w]);
    }
    let mut level: Vec<usize> = (0..hist.len()).collect();
    let mut steps: Vec<Vec<(usize, Vec<(usize, Rational)>)>> = Vec::new();
    for i in 0..horizon {
        let kernel = chain.kernel_at(chain.t_min() + i as i64);
        let mut next_level = Vec::new();
        let mut rows = Vec::new();
        for &h in &level {
            let w = *hist[h].last().unwrap();
            let mut row = Vec::new();
            for (w2, p) in kernel.row(w) {
                if p.is_zero() {
                    continue;
                }
                let mut ext = hist[h].clone();
                ext.push(*w2);
                let id = hist.len();
                index.insert(ext.clone(), id);
                lifted.push(lifter.step(lifted[h], w, *w2)?);
                hist.push(ext);
                next_level.push(id);
                row.push((id, p.clone()));
                if hist.len() > HISTORY_CHAIN_LIMIT {
                    return Err(Error::TooLarge { what: "histories", value: hist.len(), limit: HISTORY_CHAIN_LIMIT });
                }
            }
            rows.push((h, row));
        }
        steps.push(rows);
        level = next_level;
    }
    let n = hist.len();
    let kernels = steps
        .into_iter()
        .map(|rows| {
            let mut full: Vec<Vec<(usize, Rational)>> = (0..n).map(|h| vec![(h, Rational::one())]).collect();
            for (h, row) in rows {
                full[h] = row;
            }
            Arc::new(Kernel::new(full))
        })
        .collect();
    let labels = hist.iter().map(|h| h.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(".")).collect();
    let last = hist.iter().map(|h| *h.last().unwrap()).collect();
    let chain = ChainSpec::new(labels, chain.t_min(), chain.t_max(), initial, kernels)?;
    Ok(HistoryChain { chain, last, lifted })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransferReport {
    pub p: u32,
    pub history_states: usize,
    #[serde(with = "rational::serde_str")]
    pub lhs_y: Rational,
    #[serde(with = "rational::serde_str")]
    pub rhs_y: Rational,
    /// Both sides for the lifted process in `X`.
    #[serde(with = "rational::serde_str")]
    pub lhs_x: Rational,
    #[serde(with = "rational::serde_str")]
    pub rhs_x: Rational,
    /// `lhs_y <= b^p lhs_x`.
    pub lhs_bound_holds: bool,
    /// `rhs_x <= a^p rhs_y`.
    pub rhs_bound_holds: bool,
    /// `lhs_y rhs_x <= (ab)^p lhs_x rhs_y`, i.e. ratio in `Y` at most `D^p`
    /// times the witness ratio of the lift.
    pub holds: bool,
}

/// Checks the transfer of the Markov convexity inequality through a quotient
/// on one instance: the lifted process `h*(X_{<=t})` lives on the chain of
/// histories, where both functionals are evaluated exactly.
pub fn transfer_check(q: &QuotientMap, chain: &ChainSpec, g: &[usize], p: u32, k_max: Option<usize>) -> Result<TransferReport> {
    let lifter = lift_chain(q, chain, g)?;
    let hc = history_chain(&lifter, chain)?;
    let (sx, sy) = (q.map.source(), q.map.target());
    let pw = |r: &Rational| num_traits::pow(r.clone(), p as usize);
    let n = hc.last.len();
    let cost_y = MatrixCost::from_fn(n, |i, j| pw(sy.d_exact(g[hc.last[i]], g[hc.last[j]]).unwrap()));
    let cost_x = MatrixCost::from_fn(n, |i, j| pw(sx.d_exact(hc.lifted[i], hc.lifted[j]).unwrap()));
    let ry = markov::convexity_ratio::<Rational, _>(&hc.chain, &cost_y, p as f64, k_max)?;
    let rx = markov::convexity_ratio::<Rational, _>(&hc.chain, &cost_x, p as f64, k_max)?;
    let get = |v: &crate::numeric::Value| v.exact().expect("exact mode").clone();
    let (lhs_y, rhs_y, lhs_x, rhs_x) = (get(&ry.lhs_total), get(&ry.rhs), get(&rx.lhs_total), get(&rx.rhs));
    let lhs_bound_holds = lhs_y <= pw(&q.b) * &lhs_x;
    let rhs_bound_holds = rhs_x <= pw(&q.a) * &rhs_y;
    let holds = &lhs_y * &rhs_x <= pw(&q.d()) * &lhs_x * &rhs_y;
    Ok(TransferReport { p, history_states: n, lhs_y, rhs_y, lhs_x, rhs_x, lhs_bound_holds, rhs_bound_holds, holds })
}

/// A random instance: `X` is a random integer point set in the plane with the
/// `l_1` metric, `Y` its projection to the first coordinate, and `(a, b)` the
/// least quotient constants of the projection.
pub fn random_projection_instance<R: rand::Rng + ?Sized>(n: usize, spread: i64, rng: &mut R) -> (FiniteMetricSpace, FiniteMetricSpace, Vec<usize>) {
    let mut pts: Vec<(i64, i64)> = Vec::new();
    while pts.len() < n {
        let p = (rng.gen_range(0..spread), rng.gen_range(0..spread));
        if !pts.contains(&p) {
            pts.push(p);
        }
    }
    let mut xs: Vec<i64> = pts.iter().map(|p| p.0).collect();
    xs.sort_unstable();
    xs.dedup();
    let rows_x = pts.iter().map(|a| pts.iter().map(|b| rational::int((a.0 - b.0).abs() + (a.1 - b.1).abs())).collect()).collect();
    let rows_y = xs.iter().map(|a| xs.iter().map(|b| rational::int((a - b).abs())).collect()).collect();
    let lx = pts.iter().map(|p| format!("{},{}", p.0, p.1)).collect();
    let ly = xs.iter().map(|x| x.to_string()).collect();
    let f = pts.iter().map(|p| xs.binary_search(&p.0).unwrap()).collect();
    (FiniteMetricSpace::exact(lx, rows_x).unwrap(), FiniteMetricSpace::exact(ly, rows_y).unwrap(), f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::downward_walk;
    use crate::metric::RationalLine;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn path(n: usize) -> FiniteMetricSpace {
        let pts: Vec<Rational> = (0..=n as i64).map(rational::int).collect();
        FiniteMetricSpace::from_exact_metric(&RationalLine, &pts, (0..=n).map(|i| i.to_string()).collect())
    }

    /// Pointwise form of openness: every `y` has a preimage within
    /// `a d_Y(f(x), y)` of `x`, and `f` is `b`-Lipschitz.
    fn oracle_is_quotient(map: &PointMap, a: &Rational, b: &Rational) -> bool {
        let (sx, sy, f) = (map.source(), map.target(), map.assignment());
        let open = (0..sx.len()).all(|x| {
            (0..sy.len()).all(|y| {
                (0..sx.len()).any(|x2| f[x2] == y && *sx.d_exact(x, x2).unwrap() <= a * sy.d_exact(f[x], y).unwrap())
            })
        });
        let lip = (0..sx.len())
            .all(|x| (0..sx.len()).all(|x2| *sy.d_exact(f[x], f[x2]).unwrap() <= b * sx.d_exact(x, x2).unwrap()));
        open && lip
    }

    #[test]
    fn identity_quotient() {
        let p = path(4);
        let id = PointMap::identity(&p).unwrap();
        assert!(verify_quotient(&id, &rational::int(1), &rational::int(1)).unwrap().is_empty());
        assert_eq!(quotient_constants(&id).unwrap(), (rational::int(1), rational::int(1)));
        let q = QuotientMap::new(id, rational::int(1), rational::int(1)).unwrap();
        let lin = ChainSpec::homogeneous(
            (0..5).map(|i| i.to_string()).collect(),
            0,
            4,
            vec![(0, rational::int(1))],
            Kernel::new((0..5).map(|i| vec![((i + 1).min(4), rational::int(1))]).collect()),
        )
        .unwrap();
        let g: Vec<usize> = (0..5).collect();
        let lifter = lift_chain(&q, &lin, &g).unwrap();
        assert_eq!(lifter.lift(&[0, 1, 2, 3]).unwrap(), vec![0, 1, 2, 3]);
        let r = transfer_check(&q, &lin, &g, 2, None).unwrap();
        assert_eq!((r.lhs_x.clone(), r.rhs_x.clone()), (r.lhs_y.clone(), r.rhs_y.clone()));
        assert!(r.holds);
    }

    fn fold() -> (FiniteMetricSpace, FiniteMetricSpace, Vec<usize>) {
        (path(4), path(2), vec![0, 1, 2, 1, 0])
    }

    #[test]
    fn fold_quotient_and_lift() {
        let (x, y, f) = fold();
        let map = PointMap::new(&x, &y, f).unwrap();
        assert_eq!(quotient_constants(&map).unwrap(), (rational::int(1), rational::int(1)));
        let q = QuotientMap::new(map, rational::int(1), rational::int(1)).unwrap();
        // walk on Y = {0,1,2}: 0 -> 1 -> 2 -> 1 -> 0 -> 1
        let lin = ChainSpec::homogeneous(
            (0..3).map(|i| i.to_string()).collect(),
            0,
            5,
            vec![(0, rational::int(1))],
            Kernel::new(vec![vec![(1, rational::int(1))]; 3]),
        )
        .unwrap();
        let lifter = lift_chain(&q, &lin, &[0, 1, 2]).unwrap();
        let h = lifter.lift(&[0, 1, 2, 1, 0, 1]).unwrap();
        // the first preimage of 1 is 1, and from 2 the lift turns back
        assert_eq!(h, vec![0, 1, 2, 1, 0, 1]);
        for w in h.windows(2) {
            assert_eq!(x.d(w[0], w[1]), 1.0);
        }
    }

    #[test]
    fn fold_with_downward_walk() {
        // the walk on B_3 read through its depth, folded onto P_2
        let (x, y, f) = fold();
        let q = QuotientMap::new(PointMap::new(&x, &y, f).unwrap(), rational::int(1), rational::int(1)).unwrap();
        let (chain, verts) = downward_walk(3).unwrap();
        let g: Vec<usize> = verts.iter().map(|v| [0, 1, 2, 1][v.depth()]).collect();
        let r = transfer_check(&q, &chain, &g, 2, None).unwrap();
        assert!(r.holds && r.lhs_bound_holds && r.rhs_bound_holds);
    }

    #[test]
    fn openness_failure_has_witness() {
        let x = path(2);
        let y = path(1);
        let map = PointMap::new(&x, &y, vec![0, 0, 1]).unwrap();
        let v = verify_quotient(&map, &rational::int(1), &rational::int(1)).unwrap();
        assert!(v.contains(&QuotientViolation::Openness { x: 0, r: rational::int(1), y: 1 }));
        assert!(verify_quotient(&map, &rational::int(2), &rational::int(1)).unwrap().is_empty());
        assert_eq!(quotient_constants(&map).unwrap().0, rational::int(2));
    }

    #[test]
    fn not_surjective() {
        let x = path(2);
        let y = path(3);
        let map = PointMap::new(&x, &y, vec![0, 1, 2]).unwrap();
        assert_eq!(verify_quotient(&map, &rational::int(1), &rational::int(1)).unwrap_err(), Error::NotSurjective(3));
    }

    #[test]
    fn horizon_guard() {
        let p = path(1);
        let q = QuotientMap::new(PointMap::identity(&p).unwrap(), rational::int(1), rational::int(1)).unwrap();
        let long = ChainSpec::homogeneous(vec!["0".into(), "1".into()], 0, 9, vec![(0, rational::int(1))], Kernel::identity(2)).unwrap();
        assert!(matches!(transfer_check(&q, &long, &[0, 1], 2, None), Err(Error::HorizonTooLong { horizon: 9, limit: 8 })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn verification_matches_pointwise_oracle(seed in any::<u64>(), n in 2usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, y, f) = random_projection_instance(n, 5, &mut rng);
            let map = PointMap::new(&x, &y, f).unwrap();
            let (a, b) = quotient_constants(&map).unwrap();
            prop_assert!(verify_quotient(&map, &a, &b).unwrap().is_empty());
            prop_assert!(oracle_is_quotient(&map, &a, &b));
            for (a2, b2) in [(&a * rational::ratio(9, 10), b.clone()), (a.clone(), &b * rational::ratio(9, 10))] {
                let v = verify_quotient(&map, &a2, &b2).unwrap();
                prop_assert_eq!(v.is_empty(), oracle_is_quotient(&map, &a2, &b2));
            }
        }

        #[test]
        fn composition(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, y, f1) = random_projection_instance(8, 5, &mut rng);
            // fold Y onto Z by halving coordinates
            let ys: Vec<i64> = y.labels().iter().map(|l| l.parse().unwrap()).collect();
            let mut zs: Vec<i64> = ys.iter().map(|v| v / 2).collect();
            zs.sort_unstable();
            zs.dedup();
            let z = FiniteMetricSpace::exact(
                zs.iter().map(|v| v.to_string()).collect(),
                zs.iter().map(|a| zs.iter().map(|b| rational::int((a - b).abs())).collect()).collect(),
            ).unwrap();
            let f2: Vec<usize> = ys.iter().map(|v| zs.binary_search(&(v / 2)).unwrap()).collect();
            let m1 = PointMap::new(&x, &y, f1.clone()).unwrap();
            let m2 = PointMap::new(&y, &z, f2.clone()).unwrap();
            let (a1, b1) = quotient_constants(&m1).unwrap();
            let (a2, b2) = quotient_constants(&m2).unwrap();
            let comp = PointMap::new(&x, &z, f1.iter().map(|&i| f2[i]).collect()).unwrap();
            prop_assert!(verify_quotient(&comp, &(&a1 * &a2), &(&b1 * &b2)).unwrap().is_empty());
        }

        #[test]
        fn random_lifts(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, y, f) = random_projection_instance(12, 6, &mut rng);
            let map = PointMap::new(&x, &y, f).unwrap();
            let (a, b) = quotient_constants(&map).unwrap();
            let q = QuotientMap::new(map, a, b).unwrap();
            let n = rng.gen_range(2..6);
            let chain = markov::random_chain(n, 4, false, &mut rng);
            let g: Vec<usize> = (0..n).map(|_| rng.gen_range(0..y.len())).collect();
            let lifter = lift_chain(&q, &chain, &g).unwrap();
            for _ in 0..20 {
                let traj: Vec<usize> = (0..6).map(|_| rng.gen_range(0..n)).collect();
                let h = lifter.lift(&traj).unwrap();
                prop_assert_eq!(h.len(), traj.len());
            }
            let r = transfer_check(&q, &chain, &g, 2, None).unwrap();
            prop_assert!(r.holds && r.lhs_bound_holds && r.rhs_bound_holds);
            // the Y side only sees the current state, so it matches the plain chain
            let cost = MatrixCost::from_fn(n, |i, j| num_traits::pow(y.d_exact(g[i], g[j]).unwrap().clone(), 2));
            let plain = markov::convexity_ratio::<Rational, _>(&chain, &cost, 2.0, None).unwrap();
            prop_assert_eq!(plain.lhs_total.exact().unwrap(), &r.lhs_y);
            prop_assert_eq!(plain.rhs.exact().unwrap(), &r.rhs_y);
        }
    }
}
