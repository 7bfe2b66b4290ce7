//! The benchmark inputs must stay valid, otherwise the timings measure error paths.

use mconvex::markov::{bn_report, laakso_report};
use mconvex::LaaksoGraph;

#[test]
fn benchmark_inputs_succeed() {
    let g = LaaksoGraph::build(2).unwrap();
    assert!(laakso_report(&g, 2, None).unwrap().ratio.is_some());
    assert!(bn_report(8, 2, None).unwrap().require_ratio().unwrap() > 1.0);
}
