//! Level-colored copies of `B_m` in the complete `k`-ary tree `T_{k,m}`, and
//! the toy-scale pipeline extracting a nearly isometric, vertically faithful
//! copy of `B_t` from a map `B_n -> X`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metric::Metric;
use crate::trees::{bfs_index, enumerate_bn, TreeMetric, TreeVertex};

use super::paths::{path_boost, Grid, PathMap};
use super::vertical::{preserves_ancestry, tree_map_distortion, vertical_report};

pub const MAX_M: usize = 2;
pub const MAX_K: usize = 16;
pub const MAX_R: usize = 3;

/// A vertex of `T_{k,m}` as its sequence of child indices.
pub type KaryVertex = Vec<u8>;

/// A coloring of ancestor pairs `(ancestor, descendant)` by `0..r`.
pub trait PairColoring {
    fn color(&self, anc: &[u8], desc: &[u8]) -> usize;
}

impl<F: Fn(&[u8], &[u8]) -> usize> PairColoring for F {
    fn color(&self, anc: &[u8], desc: &[u8]) -> usize {
        self(anc, desc)
    }
}

/// Pseudo-random coloring from a hash of the pair, reproducible from `seed`.
#[derive(Clone, Copy, Debug)]
pub struct HashColoring {
    pub r: usize,
    pub seed: u64,
}

impl PairColoring for HashColoring {
    fn color(&self, anc: &[u8], desc: &[u8]) -> usize {
        // FNV-1a over both paths, then a splitmix finalizer
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.seed;
        for &b in anc.iter().chain([255u8].iter()).chain(desc.iter()) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h ^= h >> 30;
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 27;
        (h % self.r as u64) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum RamseyOutcome {
    /// `copy[i]` is the image of the `i`-th vertex of `B_m` in BFS order; the
    /// color of every ancestor pair depends only on its two levels.
    Found { copy: Vec<KaryVertex>, level_colors: BTreeMap<String, usize> },
    /// No copy exists; `nodes` search states were visited.
    Exhausted { nodes: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RamseyReport {
    pub k: usize,
    pub m: usize,
    pub r: usize,
    /// Whether `k >= r^{(m+1)^2}`, under which a copy always exists.
    pub guaranteed: bool,
    pub outcome: RamseyOutcome,
}

struct Search<'a, C: PairColoring + ?Sized> {
    k: usize,
    m: usize,
    coloring: &'a C,
    /// Images of the `B_m` vertices in BFS order.
    copy: Vec<KaryVertex>,
    /// Color fixed for each level pair `(i, j)`, `i < j`, or `None`.
    table: Vec<Vec<Option<usize>>>,
    nodes: u64,
}

impl<C: PairColoring + ?Sized> Search<'_, C> {
    fn run(&mut self, idx: usize) -> bool {
        let total = (1usize << (self.m + 1)) - 1;
        if idx == total {
            return true;
        }
        self.nodes += 1;
        let parent = self.copy[(idx - 1) / 2].clone();
        // the right child only takes indices above its left sibling's
        let lo = if idx % 2 == 0 { self.copy[idx - 1][parent.len()] as usize + 1 } else { 0 };
        for c in lo..self.k {
            let mut v = parent.clone();
            v.push(c as u8);
            let j = v.len();
            let mut set = Vec::new();
            let mut ok = true;
            // ancestors of idx in B_m are at BFS indices along the parent chain
            let mut a = idx;
            while a > 0 {
                a = (a - 1) / 2;
                let i = self.copy[a].len();
                let col = self.coloring.color(&self.copy[a], &v);
                match self.table[i][j] {
                    Some(t) if t != col => {
                        ok = false;
                        break;
                    }
                    Some(_) => {}
                    None => {
                        self.table[i][j] = Some(col);
                        set.push((i, j));
                    }
                }
            }
            if ok {
                self.copy.push(v);
                if self.run(idx + 1) {
                    return true;
                }
                self.copy.pop();
            }
            for (i, j) in set {
                self.table[i][j] = None;
            }
        }
        false
    }
}

/// Backtracking search for a copy of `B_m` in `T_{k,m}` whose ancestor-pair
/// colors depend only on levels. Copies are level preserving and send the two
/// children of a vertex to distinct children, listed in increasing order.
pub fn ramsey_search<C: PairColoring + ?Sized>(k: usize, m: usize, r: usize, coloring: &C) -> Result<RamseyReport> {
    if m > MAX_M {
        return Err(Error::TooLarge { what: "m", value: m, limit: MAX_M });
    }
    if k > MAX_K {
        return Err(Error::TooLarge { what: "k", value: k, limit: MAX_K });
    }
    if r > MAX_R {
        return Err(Error::TooLarge { what: "r", value: r, limit: MAX_R });
    }
    if r == 0 || (m > 0 && k < 2) {
        return Err(Error::PreconditionViolated("need r >= 1 and k >= 2".into()));
    }
    let mut s = Search { k, m, coloring, copy: vec![Vec::new()], table: vec![vec![None; m + 1]; m + 1], nodes: 0 };
    let found = s.run(1);
    let guaranteed = (k as f64).ln() >= ((m + 1) * (m + 1)) as f64 * (r as f64).ln();
    let outcome = if found {
        let mut level_colors = BTreeMap::new();
        for (i, row) in s.table.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                if let Some(c) = c {
                    level_colors.insert(format!("{i},{j}"), *c);
                }
            }
        }
        RamseyOutcome::Found { copy: s.copy, level_colors }
    } else {
        RamseyOutcome::Exhausted { nodes: s.nodes }
    };
    Ok(RamseyReport { k, m, r, guaranteed, outcome })
}

#[derive(Clone, Debug, Serialize)]
pub struct Extraction {
    /// `phi(v)` for `v` in `B_t`, BFS order.
    pub phi: Vec<TreeVertex>,
    /// `T_{2^k, m}` is the auxiliary tree, `ell` the spacing factor.
    pub k: usize,
    pub ell: usize,
    pub m: usize,
    pub r: usize,
    /// Levels of the boosted path inside the Ramsey copy.
    pub grid: Grid,
    pub dist_phi: f64,
    /// Vertical distortion of `f o phi`.
    pub vertical_d: f64,
}

fn fail(stage: &'static str, detail: impl Into<String>) -> Error {
    Error::PipelineFailed { stage, detail: detail.into() }
}

/// Runs the extraction at toy scale: spread `T_{2^k,m}` into `B_n`, color
/// ancestor pairs by the log-ratio of their stretch, find a level-colored
/// `B_m`, boost a root-leaf path to `P_t`, and assemble `phi: B_t -> B_n`.
/// The three outputs are re-verified before returning.
pub fn extract_vertically_faithful<M: Metric>(
    metric: &M,
    images: &[M::Point],
    n: usize,
    t: usize,
    delta: f64,
    xi: f64,
) -> Result<Extraction>
where
    M::Point: Clone,
{
    if t == 0 || t > 3 || !(delta > 0.0 && delta <= 1.0) || !(xi > 0.0) {
        return Err(Error::PreconditionViolated(format!("need 1 <= t <= 3, 0 < delta <= 1, xi > 0; got t = {t}")));
    }
    let vr = vertical_report(n, metric, images).map_err(|e| fail("vertical", e.to_string()))?;
    let ell = ((2.0 / xi).ceil() as usize).max(2);
    let k = (1..=4)
        .rev()
        .find(|&k| (n / (k * ell)).min(MAX_M) >= t)
        .ok_or_else(|| fail("parameters", format!("n = {n} too small for t = {t} with ell = {ell}")))?;
    let m = (n / (k * ell)).min(MAX_M);
    let arity = 1usize << k;

    // g: T_{2^k,m} -> B_n
    let g = |v: &[u8]| -> TreeVertex {
        let mut u = TreeVertex::root();
        for &c in v {
            for b in (0..k).rev() {
                u = u.child((c >> b) & 1);
            }
            u = u.along_zeros(u.depth() - k + ell * k);
        }
        u
    };
    let f_at = |u: &TreeVertex| &images[bfs_index(u)];

    let base = 1.0 + delta / 4.0;
    let r = ((vr.d.ln() / base.ln()).ceil().max(1.0)) as usize;
    if r > MAX_R {
        return Err(fail("coloring", format!("r = {r} colors exceeds the toy limit {MAX_R}")));
    }
    let unit = (k * ell) as f64 * vr.lambda;
    let coloring = |a: &[u8], d: &[u8]| -> usize {
        let ratio = metric.distance(f_at(&g(a)), f_at(&g(d))) / (unit * (d.len() - a.len()) as f64);
        let c = (ratio.ln() / base.ln() + 1e-12).floor();
        c.clamp(0.0, (r - 1) as f64) as usize
    };
    let report = ramsey_search(arity, m, r, &coloring)?;
    let copy = match report.outcome {
        RamseyOutcome::Found { copy, .. } => copy,
        RamseyOutcome::Exhausted { nodes } => return Err(fail("ramsey", format!("no level-colored copy after {nodes} states"))),
    };
    // psi: B_m -> T_{2^k,m} is copy[] in BFS order
    let psi = |v: &TreeVertex| -> &KaryVertex { &copy[bfs_index(v)] };

    let leftmost: Vec<M::Point> = (0..=m).map(|i| f_at(&g(psi(&TreeVertex::from_path(0, i)))).clone()).collect();
    let path = PathMap::new(metric, leftmost)?;
    let boost = path_boost(&path, t, delta / 4.0, None).map_err(|e| fail("boost", e.to_string()))?;
    let grid = boost.grid;

    // phi_b: B_t -> B_m, then g o psi
    let phi: Vec<TreeVertex> = enumerate_bn(t)?
        .iter()
        .map(|v| {
            let mut u = TreeVertex::from_path(0, grid.start);
            for i in 0..v.depth() {
                u = u.child(v.step(i));
                u = u.along_zeros(u.depth() + grid.step - 1);
            }
            g(psi(&u))
        })
        .collect();

    if !preserves_ancestry(t, &phi) {
        return Err(fail("verify", "phi does not preserve ancestry"));
    }
    let dist_phi = tree_map_distortion(t, &TreeMetric, &phi)?.require_finite().map_err(|e| fail("verify", e.to_string()))?;
    if dist_phi > 1.0 + xi + 1e-12 {
        return Err(fail("verify", format!("dist(phi) = {dist_phi} > 1 + xi")));
    }
    let composed: Vec<M::Point> = phi.iter().map(|u| f_at(u).clone()).collect();
    let vertical_d = vertical_report(t, metric, &composed).map_err(|e| fail("verify", e.to_string()))?.d;
    if vertical_d > 1.0 + delta + 1e-12 {
        return Err(fail("verify", format!("f o phi has vertical distortion {vertical_d} > 1 + delta")));
    }
    Ok(Extraction { phi, k, ell, m, r, grid, dist_phi, vertical_d })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::FiniteMetricSpace;
    use crate::rational;
    use crate::trees::HTreeSpace;

    fn check_copy(report: &RamseyReport, coloring: &dyn PairColoring) {
        let RamseyOutcome::Found { copy, level_colors } = &report.outcome else { panic!("expected a copy") };
        let verts = enumerate_bn(report.m).unwrap();
        for (i, a) in verts.iter().enumerate() {
            assert_eq!(copy[i].len(), a.depth());
            for (j, b) in verts.iter().enumerate() {
                if a != b && a.is_ancestor_of(b) {
                    assert!(copy[j].starts_with(&copy[i]));
                    let c = coloring.color(&copy[i], &copy[j]);
                    assert_eq!(level_colors[&format!("{},{}", a.depth(), b.depth())], c);
                }
            }
        }
        // siblings go to distinct children
        for v in verts.iter().filter(|v| v.depth() < report.m) {
            let (l, r) = (bfs_index(&v.child(0)), bfs_index(&v.child(1)));
            assert_ne!(copy[l], copy[r]);
        }
    }

    #[test]
    fn single_color_is_trivial() {
        let c = |_: &[u8], _: &[u8]| 0usize;
        let r = ramsey_search(2, 2, 1, &c).unwrap();
        assert!(r.guaranteed);
        check_copy(&r, &c);
    }

    #[test]
    fn m1_r2_k4_every_coloring() {
        // pairs of T_{4,1} are the four root-child pairs
        for mask in 0u32..16 {
            let c = move |_: &[u8], d: &[u8]| ((mask >> d[0]) & 1) as usize;
            let r = ramsey_search(4, 1, 2, &c).unwrap();
            check_copy(&r, &c);
        }
        assert!(ramsey_search(16, 1, 2, &HashColoring { r: 2, seed: 0 }).unwrap().guaranteed);
    }

    #[test]
    fn adversarial_coloring_exhausts() {
        let c = |_: &[u8], d: &[u8]| d[0] as usize;
        let r = ramsey_search(2, 1, 2, &c).unwrap();
        assert!(!r.guaranteed);
        assert!(matches!(r.outcome, RamseyOutcome::Exhausted { .. }));
    }

    #[test]
    fn random_colorings_m2() {
        for seed in 0..20 {
            let c = HashColoring { r: 2, seed };
            let r = ramsey_search(16, 2, 2, &c).unwrap();
            if let RamseyOutcome::Found { .. } = r.outcome {
                check_copy(&r, &c);
            }
        }
    }

    #[test]
    fn limits() {
        let c = HashColoring { r: 2, seed: 0 };
        assert!(matches!(ramsey_search(17, 1, 2, &c), Err(Error::TooLarge { .. })));
        assert!(matches!(ramsey_search(4, 3, 2, &c), Err(Error::TooLarge { .. })));
        assert!(matches!(ramsey_search(4, 1, 4, &c), Err(Error::TooLarge { .. })));
    }

    fn verify(e: &Extraction, metric: &impl Metric<Point = TreeVertex>, t: usize, delta: f64, xi: f64) {
        assert!(preserves_ancestry(t, &e.phi));
        assert!(tree_map_distortion(t, &TreeMetric, &e.phi).unwrap().dist <= 1.0 + xi);
        assert!(vertical_report(t, metric, &e.phi).unwrap().d <= 1.0 + delta);
    }

    #[test]
    fn identity_on_b6() {
        let id = enumerate_bn(6).unwrap();
        let e = extract_vertically_faithful(&TreeMetric, &id, 6, 2, 0.5, 1.0).unwrap();
        assert_eq!((e.k, e.ell, e.m, e.r), (1, 2, 2, 1));
        assert_eq!(e.vertical_d, 1.0);
        verify(&e, &TreeMetric, 2, 0.5, 1.0);
    }

    #[test]
    fn identity_into_htree() {
        let h = HTreeSpace::constant(rational::ratio(1, 5), 12).unwrap();
        for n in [4, 6, 8] {
            let id = enumerate_bn(n).unwrap();
            let e = extract_vertically_faithful(&h, &id, n, 2, 0.5, 1.0).unwrap();
            verify(&e, &h, 2, 0.5, 1.0);
        }
        // too small a tree is a diagnosed failure
        let id = enumerate_bn(3).unwrap();
        assert!(matches!(
            extract_vertically_faithful(&h, &id, 3, 2, 0.5, 1.0),
            Err(Error::PipelineFailed { stage: "parameters", .. })
        ));
    }

    #[test]
    fn level_dependent_scaling() {
        // edge weights 1 above level 3 and 11/10 below it
        let n = 6;
        let verts = enumerate_bn(n).unwrap();
        let weight = |h: usize| if h < 3 { rational::int(1) } else { rational::ratio(11, 10) };
        let depth_cost = |h: usize| (0..h).map(weight).sum::<rational::Rational>();
        let rows: Vec<Vec<rational::Rational>> = verts
            .iter()
            .map(|a| {
                verts
                    .iter()
                    .map(|b| {
                        let l = a.lca_depth(b);
                        depth_cost(a.depth()) + depth_cost(b.depth()) - rational::int(2) * depth_cost(l)
                    })
                    .collect()
            })
            .collect();
        let space = FiniteMetricSpace::exact(verts.iter().map(|v| v.to_string()).collect(), rows).unwrap();
        let idx: Vec<usize> = (0..verts.len()).collect();
        let e = extract_vertically_faithful(&space, &idx, n, 2, 0.5, 1.0).unwrap();
        assert!(preserves_ancestry(2, &e.phi));
        let composed: Vec<usize> = e.phi.iter().map(bfs_index).collect();
        assert!(vertical_report(2, &space, &composed).unwrap().d <= 1.5);
        assert!(e.dist_phi <= 2.0);
    }
}
