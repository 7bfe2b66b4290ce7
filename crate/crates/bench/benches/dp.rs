use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mconvex::embeddings::paths::random_bounded_path;
use mconvex::embeddings::{path_boost, PathMap};
use mconvex::markov::{bn_report, laakso_report};
use mconvex::metric::RealLine;
use mconvex::rational;
use mconvex::trees::triangle_check_exhaustive;
use mconvex::{HTreeSpace, LaaksoGraph};

fn markov_dp(c: &mut Criterion) {
    let mut g = c.benchmark_group("markov_dp");
    g.sample_size(10);
    for m in [2, 3] {
        let graph = LaaksoGraph::build(m).unwrap();
        g.bench_function(format!("laakso_m{m}_p2"), |b| b.iter(|| laakso_report(black_box(&graph), 2, None).unwrap()));
    }
    for n in [8, 12] {
        g.bench_function(format!("bn{n}_p2"), |b| b.iter(|| bn_report(black_box(n), 2, None).unwrap()));
    }
    g.finish();
}

fn htree(c: &mut Criterion) {
    let space = HTreeSpace::constant(rational::ratio(1, 5), 8).unwrap();
    c.bench_function("triangle_exhaustive_b6", |b| b.iter(|| triangle_check_exhaustive(black_box(&space), 6).unwrap()));
}

fn boost(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = PathMap::new(RealLine, random_bounded_path(4096, 4, 2.0, &mut rng)).unwrap();
    c.bench_function("path_boost_p4096", |b| b.iter(|| path_boost(black_box(&f), 4, 0.5, Some(2.0)).unwrap()));
}

criterion_group!(benches, markov_dp, htree, boost);
criterion_main!(benches);
