//! The contraction bound for vertically faithful embeddings of `B_4` into
//! H-trees: a checker, a random generator of such embeddings, an annealing
//! search for low-distortion ones, and the distortion-gap experiment.

use num_traits::{One, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rational::{self, Rational};
use crate::trees::{epsilon_from_growth, HTreeSpace, TreeVertex};

use super::vertical::{tree_map_distortion, tree_map_distortion_exact, vertical_report_exact};

pub const B4_SIZE: usize = 31;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct B4Check {
    /// Least depth among the images.
    pub h0: usize,
    /// `inf` when two vertices collapse.
    pub dist: f64,
    /// `1 / (500 delta + eps_{h0})`.
    #[serde(with = "rational::serde_str")]
    pub bound: Rational,
    pub holds: bool,
    /// Vertical distortion `D` of the embedding.
    #[serde(with = "rational::serde_str")]
    pub vertical_d: Rational,
}

/// Checks `dist(f) >= 1/(500 delta + eps_{h0})` for a `(1 + delta)`-vertically
/// faithful `f: B_4 -> H-tree`, comparing exactly when the floating values are
/// within rounding of each other.
pub fn b4_bound_check(space: &HTreeSpace, images: &[TreeVertex], delta: &Rational) -> Result<B4Check> {
    if *delta <= Rational::zero() || *delta >= rational::ratio(1, 400) {
        return Err(Error::PreconditionViolated(format!("need 0 < delta < 1/400, got {}", rational::format(delta))));
    }
    if images.len() != B4_SIZE {
        return Err(Error::PreconditionViolated(format!("B_4 has {B4_SIZE} vertices, got {}", images.len())));
    }
    for v in images {
        space.check(v)?;
    }
    let vr = vertical_report_exact(4, space, images)?;
    let vertical_d = vr.exact.unwrap().d;
    if vertical_d > Rational::one() + delta {
        return Err(Error::PreconditionViolated(format!(
            "embedding has vertical distortion {} > 1 + delta",
            rational::format(&vertical_d)
        )));
    }
    let h0 = images.iter().map(|v| v.depth()).min().unwrap();
    let bound = (rational::int(500) * delta + space.eps().at(h0)).recip();
    let d = tree_map_distortion(4, space, images)?;
    let b = rational::to_f64(&bound);
    let holds = if !d.is_finite() {
        true
    } else if (d.dist - b).abs() > 1e-9 * b {
        d.dist > b
    } else {
        let exact = tree_map_distortion_exact(4, space, images)?.exact.unwrap();
        exact.dist.map_or(true, |x| x >= bound)
    };
    Ok(B4Check { h0, dist: d.dist, bound, holds, vertical_d })
}

fn parent_index(i: usize) -> usize {
    (i - 1) / 2
}

/// Places the image of BFS vertex `i` (non-root) `scale` levels below its
/// parent's image. The second child shares a random prefix of length
/// `< scale` with its sibling and then leaves it.
fn place_child<R: Rng + ?Sized>(images: &[TreeVertex], i: usize, scale: usize, rng: &mut R) -> TreeVertex {
    let p = images[parent_index(i)];
    if i % 2 == 1 {
        let mut v = p;
        for _ in 0..scale {
            v = v.child(rng.gen_range(0..=1));
        }
        return v;
    }
    let sib = images[i - 1];
    let shared = rng.gen_range(0..scale);
    let mut v = sib.ancestor_at(p.depth() + shared);
    v = v.child(1 - sib.step(v.depth()));
    while v.depth() < p.depth() + scale {
        v = v.child(rng.gen_range(0..=1));
    }
    v
}

/// A random `B_4` embedding mapping every vertex `scale` levels below its
/// parent's image, for a random `scale` in `1..=max_scale`. Such embeddings
/// are exactly vertically isometric up to the factor `scale`.
pub fn random_vertical_b4<R: Rng + ?Sized>(space: &HTreeSpace, max_scale: usize, rng: &mut R) -> Vec<TreeVertex> {
    let scale = rng.gen_range(1..=max_scale.min(space.max_depth() / 4).max(1));
    let h0 = rng.gen_range(0..=space.max_depth() - 4 * scale);
    let mut images = vec![TreeVertex::random(h0, rng)];
    for i in 1..B4_SIZE {
        let v = place_child(&images, i, scale, rng);
        images.push(v);
    }
    images
}

fn scale_of(images: &[TreeVertex]) -> usize {
    images[1].depth() - images[0].depth()
}

/// Re-places the subtree of BFS vertex `i`, parents and left siblings first.
fn resample_subtree<R: Rng + ?Sized>(images: &mut [TreeVertex], i: usize, rng: &mut R) {
    let scale = scale_of(images);
    let in_subtree = |mut j: usize| {
        while j > i {
            j = parent_index(j);
        }
        j == i
    };
    for j in (i..B4_SIZE).filter(|&j| in_subtree(j)) {
        images[j] = place_child(images, j, scale, rng);
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub images: Vec<TreeVertex>,
    pub check: B4Check,
}

#[derive(Clone, Debug, Serialize)]
pub struct AnnealResult {
    pub steps: usize,
    pub images: Vec<TreeVertex>,
    pub check: B4Check,
}

#[derive(Clone, Debug, Serialize)]
pub struct B4SearchReport {
    pub trials: usize,
    pub violations: Vec<Violation>,
    /// Least distortion among the random trials.
    pub min_dist: f64,
    /// Largest bound among the random trials.
    pub max_bound: f64,
    pub annealed: Option<AnnealResult>,
}

/// Runs `trials` random vertically faithful embeddings through
/// [`b4_bound_check`], then anneals from the best one for `anneal_steps`
/// steps to look for lower distortion.
pub fn b4_search(space: &HTreeSpace, delta: &Rational, trials: usize, anneal_steps: usize, seed: u64) -> Result<B4SearchReport> {
    let results: Vec<(Vec<TreeVertex>, B4Check)> = (0..trials as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(k));
            let images = random_vertical_b4(space, 6, &mut rng);
            let check = b4_bound_check(space, &images, delta)?;
            Ok((images, check))
        })
        .collect::<Result<_>>()?;
    let violations: Vec<Violation> = results
        .iter()
        .filter(|(_, c)| !c.holds)
        .map(|(images, check)| Violation { images: images.clone(), check: check.clone() })
        .collect();
    let min_dist = results.iter().map(|(_, c)| c.dist).fold(f64::INFINITY, f64::min);
    let max_bound = results.iter().map(|(_, c)| rational::to_f64(&c.bound)).fold(0.0, f64::max);
    let best = results.iter().min_by(|a, b| a.1.dist.total_cmp(&b.1.dist)).map(|(i, _)| i.clone());
    let annealed = match best {
        Some(start) if anneal_steps > 0 => Some(anneal(space, delta, start, anneal_steps, seed)?),
        _ => None,
    };
    Ok(B4SearchReport { trials, violations, min_dist, max_bound, annealed })
}

/// Metropolis search on `ln dist`, each move re-placing one random subtree.
pub fn anneal(space: &HTreeSpace, delta: &Rational, start: Vec<TreeVertex>, steps: usize, seed: u64) -> Result<AnnealResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cost = |im: &[TreeVertex]| tree_map_distortion(4, space, im).map(|d| d.dist.ln());
    let mut cur = start;
    let mut cur_cost = cost(&cur)?;
    let mut best = (cur.clone(), cur_cost);
    let vertices: Vec<usize> = (1..B4_SIZE).collect();
    for step in 0..steps {
        let temp = 0.5 * (1.0 - step as f64 / steps as f64) + 1e-3;
        let mut next = cur.clone();
        resample_subtree(&mut next, *vertices.choose(&mut rng).unwrap(), &mut rng);
        let c = cost(&next)?;
        if c <= cur_cost || rng.gen::<f64>() < ((cur_cost - c) / temp).exp() {
            cur = next;
            cur_cost = c;
            if c < best.1 {
                best = (cur.clone(), c);
            }
        }
    }
    let check = b4_bound_check(space, &best.0, delta)?;
    Ok(AnnealResult { steps, images: best.0, check })
}

/// Exact distortion of the identity `B_n -> (B_inf, d_eps)`, from one pair per
/// class `(h(x), h(y), h(lca))`.
pub fn identity_distortion(space: &HTreeSpace, n: usize) -> Result<Rational> {
    if n > space.max_depth() {
        return Err(Error::DepthExceeded { depth: n, max: space.max_depth() });
    }
    let mut lip = Rational::zero();
    let mut colip = Rational::zero();
    for m in 0..=n {
        for h in m..=n {
            for l in 0..=m {
                if l == m && h == m {
                    continue;
                }
                let vertical = rational::int((h - m) as i64);
                let span = rational::int((m - l) as i64);
                let dt = &vertical + rational::int(2) * &span;
                let de = &vertical + rational::int(2) * space.eps().at(m) * &span;
                let up = &de / &dt;
                let down = dt / de;
                if up > lip {
                    lip = up;
                }
                if down > colip {
                    colip = down;
                }
            }
        }
    }
    if n == 0 {
        return Ok(Rational::one());
    }
    Ok(lip * colip)
}

#[derive(Clone, Debug, Serialize)]
pub struct GapReport {
    pub n: usize,
    pub s_n: f64,
    /// Distortion of the identity on `B_n`.
    pub upper: f64,
    #[serde(with = "rational::serde_str")]
    pub upper_exact: Rational,
    /// Least distortion found among vertically faithful `B_4` embeddings.
    pub lower_evidence: f64,
    /// Largest contraction bound over the same embeddings.
    pub b5_bound: f64,
    pub violations: usize,
    pub note: &'static str,
}

/// Builds the H-tree with `eps_n = 1/s(n)` and reports the identity distortion
/// of `B_n` next to what a randomized `B_4` search finds.
pub fn distortion_gap_experiment(s: impl Fn(usize) -> f64, n: usize, trials: usize, seed: u64) -> Result<GapReport> {
    if n > 12 {
        return Err(Error::TooLarge { what: "n", value: n, limit: 12 });
    }
    const DEPTH: usize = 60;
    let space = HTreeSpace::new(epsilon_from_growth(&s, DEPTH)?, DEPTH)?;
    let upper_exact = identity_distortion(&space, n)?;
    let report = b4_search(&space, &rational::ratio(1, 512), trials, 0, seed)?;
    Ok(GapReport {
        n,
        s_n: s(n),
        upper: rational::to_f64(&upper_exact),
        upper_exact,
        lower_evidence: report.min_dist,
        b5_bound: report.max_bound,
        violations: report.violations.len(),
        note: "empirical evidence from a randomized search, not a proof",
    })
}
