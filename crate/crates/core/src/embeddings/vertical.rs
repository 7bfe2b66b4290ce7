//! Vertical faithfulness and distortion of maps defined on `B_n`.
//!
//! Maps are given as image slices indexed by BFS order (see
//! [`crate::trees::bfs_index`]).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metric::{distortion_by, exact_distortion_by, Distortion, ExactMetric, Metric};
use crate::rational::{self, Rational};
use crate::trees::{bfs_index, enumerate_bn, sp_pairs, tree_distance, TreeVertex};

/// `lambda d_T(u, v) <= d(f u, f v) <= D lambda d_T(u, v)` over ancestor pairs,
/// with `lambda` the least ratio and `D` the spread.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerticalReport {
    pub lambda: f64,
    pub d: f64,
    /// BFS indices of a pair attaining the least and the greatest ratio.
    pub min_pair: (usize, usize),
    pub max_pair: (usize, usize),
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact: Option<ExactVertical>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExactVertical {
    #[serde(with = "rational::serde_str")]
    pub lambda: Rational,
    #[serde(with = "rational::serde_str")]
    pub d: Rational,
}

fn check_len<T>(n: usize, images: &[T]) -> Result<()> {
    let want = (1usize << (n + 1)) - 1;
    if images.len() != want {
        return Err(Error::PreconditionViolated(format!("B_{n} has {want} vertices, got {} images", images.len())));
    }
    Ok(())
}

pub fn vertical_report<M: Metric>(n: usize, metric: &M, images: &[M::Point]) -> Result<VerticalReport> {
    check_len(n, images)?;
    let mut lo = (f64::INFINITY, (0, 0));
    let mut hi = (0.0f64, (0, 0));
    for (a, b) in sp_pairs(n) {
        let (i, j) = (bfs_index(&a), bfs_index(&b));
        let r = metric.distance(&images[i], &images[j]) / (b.depth() - a.depth()) as f64;
        if r == 0.0 {
            return Err(Error::CollapsedAncestorPair(i, j));
        }
        if r < lo.0 {
            lo = (r, (i, j));
        }
        if r > hi.0 {
            hi = (r, (i, j));
        }
    }
    if n == 0 {
        return Ok(VerticalReport { lambda: 1.0, d: 1.0, min_pair: (0, 0), max_pair: (0, 0), exact: None });
    }
    Ok(VerticalReport { lambda: lo.0, d: hi.0 / lo.0, min_pair: lo.1, max_pair: hi.1, exact: None })
}

/// As [`vertical_report`], with exact `lambda` and `D` attached.
pub fn vertical_report_exact<M: ExactMetric>(n: usize, metric: &M, images: &[M::Point]) -> Result<VerticalReport> {
    let mut report = vertical_report(n, metric, images)?;
    if n == 0 {
        report.exact = Some(ExactVertical { lambda: rational::int(1), d: rational::int(1) });
        return Ok(report);
    }
    let mut lo: Option<Rational> = None;
    let mut hi: Option<Rational> = None;
    for (a, b) in sp_pairs(n) {
        let (i, j) = (bfs_index(&a), bfs_index(&b));
        let r = metric.distance_exact(&images[i], &images[j]) / rational::int((b.depth() - a.depth()) as i64);
        if lo.as_ref().map_or(true, |l| r < *l) {
            lo = Some(r.clone());
        }
        if hi.as_ref().map_or(true, |h| r > *h) {
            hi = Some(r);
        }
    }
    let (lo, hi) = (lo.unwrap(), hi.unwrap());
    report.exact = Some(ExactVertical { d: &hi / &lo, lambda: lo });
    Ok(report)
}

/// Distortion of a map `B_n -> X` over all vertex pairs.
pub fn tree_map_distortion<M: Metric>(n: usize, metric: &M, images: &[M::Point]) -> Result<Distortion> {
    check_len(n, images)?;
    let verts = enumerate_bn(n)?;
    Ok(distortion_by(
        verts.len(),
        |i, j| tree_distance(&verts[i], &verts[j]) as f64,
        |i, j| metric.distance(&images[i], &images[j]),
    ))
}

pub fn tree_map_distortion_exact<M: ExactMetric>(n: usize, metric: &M, images: &[M::Point]) -> Result<Distortion> {
    let mut d = tree_map_distortion(n, metric, images)?;
    let verts = enumerate_bn(n)?;
    d.exact = Some(exact_distortion_by(
        verts.len(),
        |i, j| rational::int(tree_distance(&verts[i], &verts[j]) as i64),
        |i, j| metric.distance_exact(&images[i], &images[j]),
    ));
    Ok(d)
}

/// Whether `f` maps ancestor pairs of `B_n` to ancestor pairs.
pub fn preserves_ancestry(n: usize, images: &[TreeVertex]) -> bool {
    sp_pairs(n).all(|(a, b)| images[bfs_index(&a)].is_ancestor_of(&images[bfs_index(&b)]))
}
