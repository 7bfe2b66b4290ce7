//! Random approximate midpoints, forks and 3-paths in H-trees, sampled by
//! rejection.
//!
//! All samplers work with a "nearby move" from a center `y` and a length `L`:
//! climb `u <= L` levels, then descend `L - u` (plus a jitter of at most one
//! level) levels, leaving the path of `y` on the first step down with
//! probability 1/2 and taking uniform bits afterwards. This covers ancestors,
//! descendants and branched points, in the proportions a binary tree gives
//! them. Candidates are filtered in floating point first and then accepted by
//! an exact check.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metric::is_midpoint_exact;
use crate::rational::{self, Rational};
use crate::trees::{HTreeSpace, TreeVertex};

use super::classify::{
    approximate_path_fit, classify_3path, classify_fork, classify_midpoint, mutual_exclusion_holds, ForkVariant,
    MidpointVariant, Symbols, ThreePathVariant,
};

#[derive(Clone, Debug)]
pub struct GenParams {
    /// Range of the move length `L`.
    pub min_len: usize,
    pub max_len: usize,
    /// Least depth of the center.
    pub min_center_depth: usize,
    /// Rejection attempts per outer sample before restarting with a new center.
    pub tries: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        Self { min_len: 2, max_len: 12, min_center_depth: 2, tries: 200 }
    }
}

/// A random point about `len` away from `y` in `d_eps`, kept within depth
/// `max_depth`. Half the time this is a short tree move (climb `u <= len`, then
/// descend `len - u`, give or take a level); otherwise it targets the depth
/// `h(y) +- len` through a branch point that may lie far above `y`, which
/// costs only the horizontal `eps` term.
pub fn random_near<R: Rng + ?Sized>(y: &TreeVertex, len: usize, max_depth: usize, rng: &mut R) -> TreeVertex {
    let hy = y.depth();
    let jitter: isize = rng.gen_range(-1..=1);
    let (up, down) = if rng.gen_bool(0.5) {
        let up = rng.gen_range(0..=len.min(hy));
        (up, ((len - up) as isize + jitter).max(0) as usize)
    } else {
        let target = if rng.gen_bool(0.5) { hy as isize + len as isize } else { hy as isize - len as isize } + jitter;
        let target = target.clamp(0, max_depth as isize) as usize;
        let branch = rng.gen_range(0..=hy.min(target));
        (hy - branch, target - branch)
    };
    let base = y.ancestor_at(hy - up);
    let down = down.min(max_depth - base.depth());
    let mut v = base;
    for i in 0..down {
        let bit = if i == 0 && up > 0 {
            let on_path = y.step(base.depth());
            if rng.gen_bool(0.5) { 1 - on_path } else { on_path }
        } else {
            rng.gen_range(0..=1)
        };
        v = v.child(bit);
    }
    v
}

fn mid_f64(space: &HTreeSpace, x: &TreeVertex, y: &TreeVertex, z: &TreeVertex, delta: f64) -> bool {
    let (a, b, c) = (space.d_f64(x, y), space.d_f64(y, z), space.d_f64(x, z));
    2.0 * a.max(b) <= (1.0 + delta) * c * (1.0 + 1e-9) + 1e-12
}

fn mid_exact(space: &HTreeSpace, x: &TreeVertex, y: &TreeVertex, z: &TreeVertex, delta: &Rational) -> bool {
    is_midpoint_exact(&space.d(x, y), &space.d(y, z), &space.d(x, z), delta)
}

fn center<R: Rng + ?Sized>(space: &HTreeSpace, p: &GenParams, rng: &mut R) -> (TreeVertex, usize) {
    let len = rng.gen_range(p.min_len..=p.max_len);
    let hi = space.max_depth().saturating_sub(len + 1).max(p.min_center_depth);
    let y = TreeVertex::random(rng.gen_range(p.min_center_depth..=hi), rng);
    (y, len)
}

/// Samples `z` near `y` with `y` a `delta`-midpoint of `(x, z)`.
fn far_side<R: Rng + ?Sized>(
    space: &HTreeSpace,
    x: &TreeVertex,
    y: &TreeVertex,
    len: usize,
    delta: &Rational,
    p: &GenParams,
    rng: &mut R,
) -> Option<TreeVertex> {
    let df = rational::to_f64(delta);
    for _ in 0..p.tries {
        let z = random_near(y, len, space.max_depth(), rng);
        if z != *x && mid_f64(space, x, y, &z, df) && mid_exact(space, x, y, &z, delta) {
            return Some(z);
        }
    }
    None
}

/// A triple `(x, y, z)` with `x != z` and `y` in `Mid(x, z, delta)`.
pub fn random_midpoint<R: Rng + ?Sized>(space: &HTreeSpace, delta: &Rational, p: &GenParams, rng: &mut R) -> [TreeVertex; 3] {
    loop {
        let (y, len) = center(space, p, rng);
        let x = random_near(&y, len, space.max_depth(), rng);
        if x == y {
            continue;
        }
        if let Some(z) = far_side(space, &x, &y, len, delta, p, rng) {
            return [x, y, z];
        }
    }
}

/// A `delta`-fork `(x, y, z, w)`: `y` is a `delta`-midpoint of both `(x, z)`
/// and `(x, w)`. The prongs are sampled independently.
pub fn random_fork<R: Rng + ?Sized>(space: &HTreeSpace, delta: &Rational, p: &GenParams, rng: &mut R) -> [TreeVertex; 4] {
    loop {
        let [x, y, z] = random_midpoint(space, delta, p, rng);
        let len = (space.d_f64(&x, &y).round() as usize).max(1);
        if let Some(w) = far_side(space, &x, &y, len, delta, p, rng) {
            return [x, y, z, w];
        }
    }
}

/// A `(1 + delta)`-approximate 3-path, grown one step at a time so that each
/// inner point is a `delta`-midpoint of its neighbours.
pub fn random_3path<R: Rng + ?Sized>(space: &HTreeSpace, delta: &Rational, p: &GenParams, rng: &mut R) -> [TreeVertex; 4] {
    loop {
        let [x0, x1, x2] = random_midpoint(space, delta, p, rng);
        let len = (space.d_f64(&x1, &x2).round() as usize).max(1);
        let Some(x3) = far_side(space, &x1, &x2, len, delta, p, rng) else { continue };
        let xs = [x0, x1, x2, x3];
        if approximate_path_fit(space, &xs).is_some_and(|f| f.delta_star <= *delta) {
            return xs;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    Midpoint,
    Fork,
    ThreePath,
}

impl FromStr for InstanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "midpoint" => Ok(Self::Midpoint),
            "fork" => Ok(Self::Fork),
            "3path" | "three-path" => Ok(Self::ThreePath),
            _ => Err(Error::Parse(format!("unknown instance kind {s:?}; expected midpoint, fork or 3path"))),
        }
    }
}

/// One classified instance, reduced to what a survey tallies.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Outcome {
    pub points: Vec<TreeVertex>,
    pub variant: String,
    pub unclassified: bool,
    pub exclusion_holds: bool,
    /// For forks whose midpoint combination is `pp` or `tt`, whether the
    /// prongs are within the contraction bound; `true` otherwise.
    pub prong_bound_holds: bool,
}

impl Outcome {
    pub fn ok(&self) -> bool {
        !self.unclassified && self.exclusion_holds && self.prong_bound_holds
    }
}

/// Classifies one instance of the given kind.
pub fn classify_instance(space: &HTreeSpace, kind: InstanceKind, pts: &[TreeVertex], delta: &Rational) -> Result<Outcome> {
    let want = if kind == InstanceKind::Midpoint { 3 } else { 4 };
    if pts.len() != want {
        return Err(Error::PreconditionViolated(format!("{kind:?} needs {want} points, got {}", pts.len())));
    }
    let points = pts.to_vec();
    Ok(match kind {
        InstanceKind::Midpoint => {
            let c = classify_midpoint(space, &pts[0], &pts[1], &pts[2], delta)?;
            Outcome {
                points,
                variant: format!("{:?}", c.variant),
                unclassified: c.variant == MidpointVariant::Unclassified,
                exclusion_holds: c.exclusion_holds,
                prong_bound_holds: true,
            }
        }
        InstanceKind::Fork => {
            let c = classify_fork(space, &pts[0], &pts[1], &pts[2], &pts[3], delta)?;
            let prong = !matches!(c.combination, ('p', 'p') | ('t', 't')) || c.prong_bound_holds();
            Outcome {
                points,
                variant: format!("{:?}", c.variant),
                unclassified: c.variant == ForkVariant::Unclassified,
                exclusion_holds: c.exclusion_holds,
                prong_bound_holds: prong,
            }
        }
        InstanceKind::ThreePath => {
            let xs = [pts[0], pts[1], pts[2], pts[3]];
            let c = classify_3path(space, &xs, delta)?;
            let excl = |a: &TreeVertex, b: &TreeVertex, c: &TreeVertex| {
                mutual_exclusion_holds(space, a, b, c, &Symbols::compute(space, a, b, c))
            };
            Outcome {
                points,
                variant: format!("{:?}", c.variant),
                unclassified: c.variant == ThreePathVariant::Unclassified,
                exclusion_holds: excl(&xs[0], &xs[1], &xs[2]) && excl(&xs[1], &xs[2], &xs[3]),
                prong_bound_holds: true,
            }
        }
    })
}

/// Failing instances kept in a survey report.
pub const FAILURE_SAMPLE: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassificationSurvey {
    pub kind: InstanceKind,
    #[serde(with = "rational::serde_str")]
    pub delta: Rational,
    pub instances: usize,
    pub tally: BTreeMap<String, u64>,
    pub unclassified: u64,
    pub exclusion_failures: u64,
    pub prong_failures: u64,
    pub failures: Vec<Outcome>,
}

impl ClassificationSurvey {
    pub fn passed(&self) -> bool {
        self.unclassified == 0 && self.exclusion_failures == 0 && self.prong_failures == 0
    }
}

/// Samples `count` instances of `kind` and classifies each. Instance `i` uses
/// its own generator seeded from `(seed, i)`, so the report does not depend on
/// the thread count.
pub fn classification_survey(
    space: &HTreeSpace,
    kind: InstanceKind,
    delta: &Rational,
    count: usize,
    seed: u64,
) -> Result<ClassificationSurvey> {
    let params = GenParams::default();
    let outcomes: Vec<Outcome> = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ i);
            let pts: Vec<TreeVertex> = match kind {
                InstanceKind::Midpoint => random_midpoint(space, delta, &params, &mut rng).to_vec(),
                InstanceKind::Fork => random_fork(space, delta, &params, &mut rng).to_vec(),
                InstanceKind::ThreePath => random_3path(space, delta, &params, &mut rng).to_vec(),
            };
            classify_instance(space, kind, &pts, delta)
        })
        .collect::<Result<_>>()?;
    let mut s = ClassificationSurvey {
        kind,
        delta: delta.clone(),
        instances: count,
        tally: BTreeMap::new(),
        unclassified: 0,
        exclusion_failures: 0,
        prong_failures: 0,
        failures: Vec::new(),
    };
    for o in outcomes {
        *s.tally.entry(o.variant.clone()).or_default() += 1;
        s.unclassified += o.unclassified as u64;
        s.exclusion_failures += !o.exclusion_holds as u64;
        s.prong_failures += !o.prong_bound_holds as u64;
        if !o.ok() && s.failures.len() < FAILURE_SAMPLE {
            s.failures.push(o);
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::classify::*;
    use crate::trees::random_epsilon;

    fn spaces() -> Vec<HTreeSpace> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cap = rational::ratio(1, 4);
        let small = rational::ratio(1, 256);
        vec![
            HTreeSpace::constant(rational::ratio(1, 5), 40).unwrap(),
            HTreeSpace::constant(rational::ratio(1, 1024), 40).unwrap(),
            HTreeSpace::new(random_epsilon(40, &cap, &mut rng), 40).unwrap(),
            HTreeSpace::new(random_epsilon(40, &cap, &mut rng), 40).unwrap(),
            HTreeSpace::new(random_epsilon(40, &small, &mut rng), 40).unwrap(),
        ]
    }

    #[test]
    fn random_near_stays_close() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let y = TreeVertex::random(rng.gen_range(0..30), &mut rng);
            let len = rng.gen_range(1..8);
            let x = random_near(&y, len, 40, &mut rng);
            assert!(x.depth().abs_diff(y.depth()) <= len + 1);
            assert!(x.depth() <= 40);
        }
    }

    #[test]
    fn midpoints_classified() {
        let delta = rational::ratio(1, 32);
        for (i, s) in spaces().iter().enumerate() {
            let fails: Vec<_> = (0..200u64)
                .into_par_iter()
                .filter_map(|k| {
                    let mut rng = ChaCha8Rng::seed_from_u64(1000 * i as u64 + k);
                    let [x, y, z] = random_midpoint(s, &delta, &GenParams::default(), &mut rng);
                    let c = classify_midpoint(s, &x, &y, &z, &delta).unwrap();
                    (c.variant == MidpointVariant::Unclassified || !c.exclusion_holds).then_some((x, y, z))
                })
                .collect();
            assert!(fails.is_empty(), "{fails:?}");
        }
    }

    #[test]
    fn forks_classified() {
        let delta = rational::ratio(1, 128);
        for (i, s) in spaces().iter().enumerate() {
            let fails: Vec<_> = (0..200u64)
                .into_par_iter()
                .filter_map(|k| {
                    let mut rng = ChaCha8Rng::seed_from_u64(2000 * i as u64 + k);
                    let [x, y, z, w] = random_fork(s, &delta, &GenParams::default(), &mut rng);
                    let c = classify_fork(s, &x, &y, &z, &w, &delta).unwrap();
                    let bad = c.variant == ForkVariant::Unclassified
                        || !c.exclusion_holds
                        || (matches!(c.combination, ('p', 'p') | ('t', 't')) && !c.prong_bound_holds());
                    bad.then_some(([x, y, z, w], c.combination))
                })
                .collect();
            assert!(fails.is_empty(), "{fails:?}");
        }
    }

    #[test]
    fn three_paths_classified() {
        let delta = rational::ratio(1, 256);
        for (i, s) in spaces().iter().enumerate() {
            let fails: Vec<_> = (0..200u64)
                .into_par_iter()
                .filter_map(|k| {
                    let mut rng = ChaCha8Rng::seed_from_u64(3000 * i as u64 + k);
                    let xs = random_3path(s, &delta, &GenParams::default(), &mut rng);
                    let c = classify_3path(s, &xs, &delta).unwrap();
                    (c.variant == ThreePathVariant::Unclassified).then_some(xs)
                })
                .collect();
            assert!(fails.is_empty(), "{fails:?}");
        }
    }

    #[test]
    fn generators_reach_every_common_shape() {
        use std::collections::HashSet;
        // tent shapes need eps well below delta
        let s = HTreeSpace::constant(rational::ratio(1, 1024), 40).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = GenParams::default();
        let (d1, d2, d3) = (rational::ratio(1, 32), rational::ratio(1, 128), rational::ratio(1, 256));
        let (mut mids, mut forks, mut paths) = (HashSet::new(), HashSet::new(), HashSet::new());
        for _ in 0..400 {
            let [x, y, z] = random_midpoint(&s, &d1, &p, &mut rng);
            mids.insert(classify_midpoint(&s, &x, &y, &z, &d1).unwrap().variant);
            let [x, y, z, w] = random_fork(&s, &d2, &p, &mut rng);
            forks.insert(classify_fork(&s, &x, &y, &z, &w, &d2).unwrap().variant);
            let xs = random_3path(&s, &d3, &p, &mut rng);
            paths.insert(classify_3path(&s, &xs, &d3).unwrap().variant);
        }
        assert_eq!(mids.len(), 4, "{mids:?}");
        for v in [ForkVariant::I, ForkVariant::II, ForkVariant::III] {
            assert!(forks.contains(&v), "{forks:?}");
        }
        use ThreePathVariant::*;
        for v in [A, B, C, ReverseA, ReverseB, ReverseC] {
            assert!(paths.contains(&v), "{paths:?}");
        }
    }

    #[test]
    fn survey_is_deterministic() {
        let s = &spaces()[2];
        let d = rational::ratio(1, 128);
        let a = classification_survey(s, InstanceKind::Fork, &d, 60, 9).unwrap();
        let b = classification_survey(s, InstanceKind::Fork, &d, 60, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.passed(), "{a:?}");
        assert_eq!(a.tally.values().sum::<u64>(), 60);
        assert_eq!("3path".parse::<InstanceKind>().unwrap(), InstanceKind::ThreePath);
    }
}
