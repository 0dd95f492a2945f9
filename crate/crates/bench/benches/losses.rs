//! Loss evaluation and label-algebra throughput across batch sizes.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use simdis::losses::Strategy;
use simdis::verify::{random_batch, BatchParams};
use simdis::{evaluate, pair_factors, LabelSet, PenaltyKind, Relation};

fn batch_of(samples: usize) -> simdis::ContrastiveBatch {
    let params = BatchParams {
        min_samples: samples,
        max_samples: samples,
        max_dim: 32,
        universe: 12,
        min_temperature: 0.5,
        max_temperature: 0.5,
    };
    random_batch(samples as u64, &params).expect("batch")
}

fn bench_losses(c: &mut Criterion) {
    let mut group = c.benchmark_group("evaluate");
    for samples in [16usize, 64, 128] {
        let batch = batch_of(samples);
        group.throughput(Throughput::Elements(samples as u64));
        for strategy in Strategy::verification_set() {
            group.bench_with_input(
                BenchmarkId::new(strategy.slug(), samples),
                &batch,
                |b, batch| b.iter(|| evaluate(black_box(batch), strategy).unwrap().total),
            );
        }
    }
    group.finish();
}

fn bench_label_algebra(c: &mut Criterion) {
    let universe = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let sets: Vec<LabelSet> = (0..256)
        .map(|_| {
            let card = rng.gen_range(1..=12);
            let mut members = Vec::new();
            while members.len() < card {
                let c = rng.gen_range(0..universe);
                if !members.contains(&c) {
                    members.push(c);
                }
            }
            LabelSet::from_indices(universe, members).unwrap()
        })
        .collect();

    let mut group = c.benchmark_group("label_algebra");
    group.throughput(Throughput::Elements((sets.len() * sets.len()) as u64));
    group.bench_function("classify_relations", |b| {
        b.iter(|| {
            let mut counts = [0usize; 5];
            for s in &sets {
                for t in &sets {
                    let r = Relation::of(black_box(s), black_box(t)).unwrap();
                    counts[Relation::ALL.iter().position(|x| *x == r).unwrap()] += 1;
                }
            }
            counts
        })
    });
    group.bench_function("pair_factors", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for s in &sets {
                for t in &sets {
                    acc += pair_factors(black_box(s), black_box(t), PenaltyKind::Reciprocal)
                        .unwrap()
                        .weight;
                }
            }
            acc
        })
    });
    group.finish();
}

criterion_group!(benches, bench_losses, bench_label_algebra);
criterion_main!(benches);
