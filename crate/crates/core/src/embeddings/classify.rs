//! Classification of approximate midpoints, forks and 3-paths in H-trees by
//! their nearest path-type or tent-type configurations.
//!
//! A configuration near `(x, y, z)` is built around a single pivot vertex (the
//! middle vertex `b` for path type, the top vertex `a` for tent type). For a
//! fixed pivot the other two witness points are independent and their optimal
//! heights are found by a scan over depths, so the only search is over pivots.
//! Pivots range over the ancestors of the instance points and their siblings.

use num_traits::Zero;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metric::is_midpoint_exact;
use crate::rational::{self, Rational};
use crate::trees::{is_path_type, is_tent_type, HTreeSpace, TreeVertex};

/// A configuration triple near some ordered triple, with its nearness
/// `max_j d(u_j, v_j)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Config {
    pub witness: [TreeVertex; 3],
    #[serde(with = "rational::serde_str")]
    pub nearness: Rational,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Path,
    Tent,
}

fn pivot_pool(points: &[&TreeVertex]) -> Vec<TreeVertex> {
    let mut pool = Vec::new();
    for p in points {
        for h in 0..=p.depth() {
            let v = p.ancestor_at(h);
            pool.push(v);
            if let Some(s) = v.sibling() {
                pool.push(s);
            }
        }
    }
    pool.sort_unstable();
    pool.dedup();
    pool
}

fn path_candidate(space: &HTreeSpace, x: &TreeVertex, y: &TreeVertex, z: &TreeVertex, b: &TreeVertex) -> Option<(f64, [TreeVertex; 3])> {
    let eps = |m: usize| space.eps().at_f64(m);
    let hb = b.depth();
    let hz = z.depth();
    let (dc, c) = if !b.is_ancestor_of(z) {
        if hz <= hb {
            (0.0, *z)
        } else {
            ((hz - hb) as f64, z.ancestor_at(hb))
        }
    } else {
        if hb == 0 {
            return None;
        }
        let up = (hz - hb + 1) as f64;
        let side = (hz - hb) as f64 + 2.0 * eps(hb);
        if side < up {
            (side, b.sibling().unwrap())
        } else {
            (up, b.ancestor_at(hb - 1))
        }
    };
    let (da, a) = if b.is_ancestor_of(x) {
        (0.0, *x)
    } else {
        let hx = x.depth();
        let l = x.lca_depth(b);
        let mut best = (f64::INFINITY, hb);
        for h in hb..=hb.max(hx) {
            let m = h.min(hx);
            let v = h.abs_diff(hx) as f64 + 2.0 * eps(m) * (m - l) as f64;
            if v < best.0 {
                best = (v, h);
            }
        }
        (best.0, b.along_zeros(best.1))
    };
    let dy = space.d_f64(y, b);
    Some((da.max(dy).max(dc), [a, *b, c]))
}

fn tent_candidate(space: &HTreeSpace, x: &TreeVertex, y: &TreeVertex, z: &TreeVertex, a: &TreeVertex) -> Option<(f64, [TreeVertex; 3])> {
    let eps = |m: usize| space.eps().at_f64(m);
    let ha = a.depth();
    let z_in = a.is_ancestor_of(z);
    if z_in && ha == 0 {
        return None;
    }
    let y_in = a.is_ancestor_of(y);
    let (hy, hz) = (y.depth(), z.depth());
    let ly = y.lca_depth(a);
    let top = ha.max(hy).max(hz);
    let n = top - ha + 1;

    // suffix minima of the c-term over depths >= h
    let mut suf = vec![(f64::INFINITY, top); n + 1];
    for i in (0..n).rev() {
        let h = ha + i;
        let v = if z_in {
            let m = h.min(hz);
            h.abs_diff(hz) as f64 + 2.0 * eps(m) * (m + 1 - ha) as f64
        } else {
            h.abs_diff(hz) as f64
        };
        suf[i] = if v <= suf[i + 1].0 { (v, h) } else { suf[i + 1] };
    }
    let mut best = (f64::INFINITY, ha, ha);
    for i in 0..n {
        let h = ha + i;
        let fb = if y_in {
            h.abs_diff(hy) as f64
        } else {
            let m = h.min(hy);
            h.abs_diff(hy) as f64 + 2.0 * eps(m) * (m - ly) as f64
        };
        let v = fb.max(suf[i].0);
        if v < best.0 {
            best = (v, h, suf[i].1);
        }
    }
    let (_, hb, hc) = best;
    let b = if y_in { y.along_zeros(hb) } else { a.along_zeros(hb) };
    let c = if z_in || z.is_ancestor_of(a) { a.sibling().unwrap().along_zeros(hc) } else { z.along_zeros(hc) };
    let dx = space.d_f64(x, a);
    Some((dx.max(best.0), [*a, b, c]))
}

/// The nearest configuration of the given shape to `(x, y, z)` over the pivot
/// pool, certified exactly. `None` when no pivot admits one (only possible when
/// every pivot is the root).
pub fn nearest(space: &HTreeSpace, shape: Shape, x: &TreeVertex, y: &TreeVertex, z: &TreeVertex) -> Option<Config> {
    let pool = pivot_pool(&[x, y, z]);
    let cands: Vec<(f64, [TreeVertex; 3])> = pool
        .iter()
        .filter_map(|p| match shape {
            Shape::Path => path_candidate(space, x, y, z, p),
            Shape::Tent => tent_candidate(space, x, y, z, p),
        })
        .collect();
    let best = cands.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return None;
    }
    let tol = 1e-9 * (1.0 + best);
    let mut out: Option<Config> = None;
    for (v, w) in cands {
        if v > best + tol {
            continue;
        }
        let ok = match shape {
            Shape::Path => is_path_type(&w[0], &w[1], &w[2]),
            Shape::Tent => is_tent_type(&w[0], &w[1], &w[2]),
        };
        assert!(ok, "{shape:?} witness {w:?} has the wrong shape");
        let exact = [space.d(x, &w[0]), space.d(y, &w[1]), space.d(z, &w[2])].into_iter().max().unwrap();
        if out.as_ref().map_or(true, |o| exact < o.nearness) {
            out = Some(Config { witness: w, nearness: exact });
        }
    }
    out
}

/// Nearest configurations of both shapes for `(x, y, z)` and for `(z, y, x)`.
/// Reversed witnesses are listed in the `(z, y, x)` order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Symbols {
    pub path: Option<Config>,
    pub tent: Option<Config>,
    pub rev_path: Option<Config>,
    pub rev_tent: Option<Config>,
}

impl Symbols {
    pub fn compute(space: &HTreeSpace, x: &TreeVertex, y: &TreeVertex, z: &TreeVertex) -> Self {
        Self {
            path: nearest(space, Shape::Path, x, y, z),
            tent: nearest(space, Shape::Tent, x, y, z),
            rev_path: nearest(space, Shape::Path, z, y, x),
            rev_tent: nearest(space, Shape::Tent, z, y, x),
        }
    }

    pub fn get(&self, v: MidpointVariant) -> Option<&Config> {
        match v {
            MidpointVariant::PathType => self.path.as_ref(),
            MidpointVariant::TentType => self.tent.as_ref(),
            MidpointVariant::ReversePathType => self.rev_path.as_ref(),
            MidpointVariant::ReverseTentType => self.rev_tent.as_ref(),
            MidpointVariant::Unclassified => None,
        }
    }

    fn within(&self, v: MidpointVariant, bound: &Rational) -> bool {
        self.get(v).is_some_and(|c| c.nearness <= *bound)
    }

    /// The variant with smallest nearness within `bound` (earlier variants win
    /// ties).
    pub fn best_within(&self, bound: &Rational) -> Option<(MidpointVariant, &Config)> {
        let mut best: Option<(MidpointVariant, &Config)> = None;
        for v in MidpointVariant::CLASSIFIED {
            if let Some(c) = self.get(v) {
                if c.nearness <= *bound && best.map_or(true, |(_, b)| c.nearness < b.nearness) {
                    best = Some((v, c));
                }
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MidpointVariant {
    PathType,
    TentType,
    ReversePathType,
    ReverseTentType,
    Unclassified,
}

impl MidpointVariant {
    pub const CLASSIFIED: [MidpointVariant; 4] =
        [Self::PathType, Self::TentType, Self::ReversePathType, Self::ReverseTentType];

    /// One-letter symbol: `P`, `T` for `(x, y, z)`, `p`, `t` for `(z, y, x)`.
    pub fn symbol(self) -> char {
        match self {
            Self::PathType => 'P',
            Self::TentType => 'T',
            Self::ReversePathType => 'p',
            Self::ReverseTentType => 't',
            Self::Unclassified => '?',
        }
    }
}

/// Checks that no triple is simultaneously near two incompatible
/// configurations: path and tent from the same end within `d/5`, or the same
/// shape from both ends within `d/11`, where `d` is the distance from that end
/// to `y`.
pub fn mutual_exclusion_holds(space: &HTreeSpace, x: &TreeVertex, y: &TreeVertex, z: &TreeVertex, s: &Symbols) -> bool {
    use MidpointVariant::*;
    let check = |d: Rational, path: MidpointVariant, tent: MidpointVariant, rpath: MidpointVariant, rtent: MidpointVariant| {
        if d.is_zero() {
            return true;
        }
        let fifth = &d / rational::int(5);
        let eleventh = &d / rational::int(11);
        !(s.within(path, &fifth) && s.within(tent, &fifth))
            && !(s.within(path, &eleventh) && s.within(rpath, &eleventh))
            && !(s.within(tent, &eleventh) && s.within(rtent, &eleventh))
    };
    check(space.d(x, y), PathType, TentType, ReversePathType, ReverseTentType)
        && check(space.d(z, y), ReversePathType, ReverseTentType, PathType, TentType)
}

fn check_points(space: &HTreeSpace, pts: &[&TreeVertex]) -> Result<()> {
    if !space.classifier_ready() {
        return Err(Error::PreconditionViolated("classifiers need eps_n < 1/4 for all n".into()));
    }
    for p in pts {
        space.check(p)?;
    }
    Ok(())
}

fn require_delta_below(delta: &Rational, limit: i64) -> Result<()> {
    if *delta <= Rational::zero() || *delta >= rational::ratio(1, limit) {
        return Err(Error::PreconditionViolated(format!("need 0 < delta < 1/{limit}, got {}", rational::format(delta))));
    }
    Ok(())
}

fn in_mid(space: &HTreeSpace, x: &TreeVertex, y: &TreeVertex, z: &TreeVertex, delta: &Rational) -> bool {
    is_midpoint_exact(&space.d(x, y), &space.d(y, z), &space.d(x, z), delta)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MidpointClass {
    pub variant: MidpointVariant,
    pub witness: Option<Config>,
    /// `3 delta d(x, z)`.
    #[serde(with = "rational::serde_str")]
    pub bound: Rational,
    pub symbols: Symbols,
    pub exclusion_holds: bool,
}

/// Classifies a `delta`-midpoint `y` of `(x, z)` by its nearest configuration
/// within `3 delta d(x, z)`.
pub fn classify_midpoint(
    space: &HTreeSpace,
    x: &TreeVertex,
    y: &TreeVertex,
    z: &TreeVertex,
    delta: &Rational,
) -> Result<MidpointClass> {
    require_delta_below(delta, 16)?;
    check_points(space, &[x, y, z])?;
    if !in_mid(space, x, y, z, delta) {
        return Err(Error::PreconditionViolated("y is not a delta-midpoint of (x, z)".into()));
    }
    let bound = rational::int(3) * delta * space.d(x, z);
    let symbols = Symbols::compute(space, x, y, z);
    let exclusion_holds = mutual_exclusion_holds(space, x, y, z, &symbols);
    let (variant, witness) = match symbols.best_within(&bound) {
        Some((v, c)) => (v, Some(c.clone())),
        None => (MidpointVariant::Unclassified, None),
    };
    Ok(MidpointClass { variant, witness, bound, symbols, exclusion_holds })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum ForkVariant {
    I,
    II,
    III,
    IV,
    ProngsContracted,
    Unclassified,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForkClass {
    pub variant: ForkVariant,
    /// Witnesses for the `(x, y, z)` and `(x, y, w)` sides of a type I to IV
    /// classification.
    pub witnesses: Option<[(MidpointVariant, Config); 2]>,
    #[serde(with = "rational::serde_str")]
    pub nearness: Rational,
    /// `35 delta d(x, y)`.
    #[serde(with = "rational::serde_str")]
    pub bound: Rational,
    /// Midpoint classification symbols of the two prongs.
    pub combination: (char, char),
    #[serde(with = "rational::serde_str")]
    pub prong_distance: Rational,
    /// `2 (35 delta + eps_{h_0}) d(x, y)`, `h_0` the least of the four heights.
    #[serde(with = "rational::serde_str")]
    pub prong_bound: Rational,
    pub exclusion_holds: bool,
}

impl ForkClass {
    pub fn prong_bound_holds(&self) -> bool {
        self.prong_distance <= self.prong_bound
    }
}

/// Classifies a `delta`-fork `(x, y, z, w)` into types I to IV, or reports
/// contracted prongs.
pub fn classify_fork(
    space: &HTreeSpace,
    x: &TreeVertex,
    y: &TreeVertex,
    z: &TreeVertex,
    w: &TreeVertex,
    delta: &Rational,
) -> Result<ForkClass> {
    use MidpointVariant::*;
    require_delta_below(delta, 70)?;
    check_points(space, &[x, y, z, w])?;
    if !in_mid(space, x, y, z, delta) || !in_mid(space, x, y, w, delta) {
        return Err(Error::PreconditionViolated("(x, y, z, w) is not a delta-fork".into()));
    }
    let dxy = space.d(x, y);
    let bound = rational::int(35) * delta * &dxy;
    let sz = Symbols::compute(space, x, y, z);
    let sw = Symbols::compute(space, x, y, w);
    let exclusion_holds = mutual_exclusion_holds(space, x, y, z, &sz) && mutual_exclusion_holds(space, x, y, w, &sw);
    let mid_bound_z = rational::int(3) * delta * space.d(x, z);
    let mid_bound_w = rational::int(3) * delta * space.d(x, w);
    let combination = (
        sz.best_within(&mid_bound_z).map_or('?', |(v, _)| v.symbol()),
        sw.best_within(&mid_bound_w).map_or('?', |(v, _)| v.symbol()),
    );

    let table: [(ForkVariant, MidpointVariant, MidpointVariant); 6] = [
        (ForkVariant::I, TentType, TentType),
        (ForkVariant::II, PathType, PathType),
        (ForkVariant::III, ReversePathType, TentType),
        (ForkVariant::III, TentType, ReversePathType),
        (ForkVariant::IV, ReversePathType, ReverseTentType),
        (ForkVariant::IV, ReverseTentType, ReversePathType),
    ];
    let mut best: Option<(ForkVariant, [(MidpointVariant, Config); 2], Rational)> = None;
    for (variant, vz, vw) in table {
        if let (Some(cz), Some(cw)) = (sz.get(vz), sw.get(vw)) {
            let near = (&cz.nearness).max(&cw.nearness).clone();
            if near <= bound && best.as_ref().map_or(true, |b| near < b.2) {
                best = Some((variant, [(vz, cz.clone()), (vw, cw.clone())], near));
            }
        }
    }

    let h0 = x.depth().min(y.depth()).min(z.depth()).min(w.depth());
    let prong_distance = space.d(z, w);
    let prong_bound = rational::int(2) * (rational::int(35) * delta + space.eps().at(h0)) * &dxy;
    let (variant, witnesses, nearness) = match best {
        Some((v, wit, near)) => (v, Some(wit), near),
        None if prong_distance <= prong_bound => (ForkVariant::ProngsContracted, None, Rational::zero()),
        None => (ForkVariant::Unclassified, None, Rational::zero()),
    };
    Ok(ForkClass { variant, witnesses, nearness, bound, combination, prong_distance, prong_bound, exclusion_holds })
}

/// Scale fit of a quadruple to `P_3`: with `r_ij = d(x_i, x_j) / (j - i)`, the
/// best `L` is `min r` and the quadruple is a `(1 + delta)`-approximate 3-path
/// iff `max r <= (1 + delta) min r`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathFit {
    #[serde(with = "rational::serde_str")]
    pub scale: Rational,
    /// Least `delta` for which the quadruple qualifies.
    #[serde(with = "rational::serde_str")]
    pub delta_star: Rational,
}

pub fn approximate_path_fit(space: &HTreeSpace, xs: &[TreeVertex; 4]) -> Option<PathFit> {
    let mut lo: Option<Rational> = None;
    let mut hi: Option<Rational> = None;
    for i in 0..4 {
        for j in i + 1..4 {
            let r = space.d(&xs[i], &xs[j]) / rational::int((j - i) as i64);
            if lo.as_ref().map_or(true, |l| r < *l) {
                lo = Some(r.clone());
            }
            if hi.as_ref().map_or(true, |h| r > *h) {
                hi = Some(r);
            }
        }
    }
    let (lo, hi) = (lo?, hi?);
    if lo.is_zero() {
        return None;
    }
    let delta_star = &hi / &lo - rational::int(1);
    Some(PathFit { scale: lo, delta_star })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum ThreePathVariant {
    A,
    B,
    C,
    ReverseA,
    ReverseB,
    ReverseC,
    Unclassified,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThreePathClass {
    pub variant: ThreePathVariant,
    /// Witnesses for the two triples of the classification, each listed in its
    /// configuration order.
    pub witnesses: Option<[Config; 2]>,
    #[serde(with = "rational::serde_str")]
    pub nearness: Rational,
    /// `35 delta d(x_0, x_1)`.
    #[serde(with = "rational::serde_str")]
    pub bound: Rational,
    pub fit: PathFit,
}

/// Classifies a `(1 + delta)`-approximate 3-path by the types A, B, C of it or
/// of its reversal.
pub fn classify_3path(space: &HTreeSpace, xs: &[TreeVertex; 4], delta: &Rational) -> Result<ThreePathClass> {
    use ThreePathVariant::*;
    require_delta_below(delta, 200)?;
    check_points(space, &xs.iter().collect::<Vec<_>>())?;
    let fit = approximate_path_fit(space, xs).ok_or(Error::NotApproximatePath)?;
    if fit.delta_star > *delta {
        return Err(Error::NotApproximatePath);
    }
    let [x0, x1, x2, x3] = xs;
    let bound = rational::int(35) * delta * space.d(x0, x1);
    let s012 = Symbols::compute(space, x0, x1, x2);
    let s123 = Symbols::compute(space, x1, x2, x3);
    // (x0,x1,x2) forward P, T and (x2,x1,x0) as rev_*; likewise for (x1,x2,x3)
    let p012 = s012.path.as_ref();
    let t012 = s012.tent.as_ref();
    let p210 = s012.rev_path.as_ref();
    let t210 = s012.rev_tent.as_ref();
    let p123 = s123.path.as_ref();
    let t123 = s123.tent.as_ref();
    let p321 = s123.rev_path.as_ref();
    let t321 = s123.rev_tent.as_ref();
    let table = [
        (A, p012, p123),
        (B, p012, t321),
        (C, p210, t123),
        (ReverseA, p321, p210),
        (ReverseB, p321, t012),
        (ReverseC, p123, t210),
    ];
    let mut best: Option<(ThreePathVariant, [Config; 2], Rational)> = None;
    for (variant, first, second) in table {
        if let (Some(c1), Some(c2)) = (first, second) {
            let near = (&c1.nearness).max(&c2.nearness).clone();
            if near <= bound && best.as_ref().map_or(true, |b| near < b.2) {
                best = Some((variant, [c1.clone(), c2.clone()], near));
            }
        }
    }
    Ok(match best {
        Some((variant, w, nearness)) => ThreePathClass { variant, witnesses: Some(w), nearness, bound, fit },
        None => ThreePathClass { variant: Unclassified, witnesses: None, nearness: Rational::zero(), bound, fit },
    })
}
