use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fockx::basis::{generate_cluster, hilbert_order, BasisSystem, ClusterModel};
use fockx::density::exp_decay;
use fockx::exchange_symmetry::build_exchange_symmetric;
use fockx::harness::HILBERT_BITS;
use fockx::quadtree::{
    build_matrix_tree, build_pair_tree, build_partition, MatrixQuadtree, PairTree,
    DEFAULT_LEAF_SIZE,
};
use fockx::{build_exchange_naive, ExchangeOptions};

struct Setup {
    sys: BasisSystem,
    pairs: PairTree,
    p: MatrixQuadtree,
}

fn setup(n: usize) -> Setup {
    let sys = generate_cluster(n, 1, ClusterModel::WaterLike).unwrap();
    let sys = hilbert_order(&sys, HILBERT_BITS).unwrap().system;
    let part = build_partition(&sys, DEFAULT_LEAF_SIZE).unwrap();
    let pairs = build_pair_tree(&sys, &part, 1e-11).unwrap();
    let p = build_matrix_tree(&exp_decay(&sys, 0.4, 1.0), &part, 0.0).unwrap();
    Setup { sys, pairs, p }
}

fn exchange(c: &mut Criterion) {
    let mut group = c.benchmark_group("exchange");
    group.sample_size(10);
    for n in [10, 30] {
        let s = setup(n);
        for parallel in [false, true] {
            let opts = ExchangeOptions {
                parallel,
                ..ExchangeOptions::new(1e-8)
            };
            let tag = if parallel { "parallel" } else { "sequential" };
            group.bench_with_input(BenchmarkId::new(format!("naive/{tag}"), n), &s, |b, s| {
                b.iter(|| build_exchange_naive(&s.sys, &s.pairs, &s.p, &opts).unwrap())
            });
            group.bench_with_input(
                BenchmarkId::new(format!("symmetry/{tag}"), n),
                &s,
                |b, s| b.iter(|| build_exchange_symmetric(&s.sys, &s.pairs, &s.p, &opts).unwrap()),
            );
        }
    }
    group.finish();
}

criterion_group!(benches, exchange);
criterion_main!(benches);
