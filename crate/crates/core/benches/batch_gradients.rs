use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;
use vroc_core::cotrain::{Item, TrainConfig, Trainer};
use vroc_core::heads::TaskHead;
use vroc_core::labels::{Stance, Task};
use vroc_core::par;
use vroc_core::text::{BOS, EOS};
use vroc_core::vae::Vae;

const VOCAB: usize = 200;

fn batch(n: usize) -> Vec<Item> {
    (0..n)
        .map(|i| {
            let mut tokens = vec![BOS];
            tokens.extend((0..20).map(|t| 4 + (i * 31 + t * 7) % (VOCAB - 4)));
            tokens.push(EOS);
            Item::new(tokens, vec![Some(i % 4)])
        })
        .collect()
}

fn bench(c: &mut Criterion) {
    let cfg = TrainConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let vae = Vae::new(cfg.vae_config(VOCAB), &mut rng);
    let head = TaskHead::new(Task::Stance, Stance::names(), cfg.head.clone(), &mut rng).unwrap();
    let trainer = Trainer::new(vae, vec![head], vec![1.0], true, &cfg);
    let items = batch(cfg.batch_size);
    let refs: Vec<&Item> = items.iter().collect();
    let seeds: Vec<u64> = (0..refs.len() as u64).collect();

    let mut group = c.benchmark_group("batch_gradients");
    group.sample_size(10);
    for (name, parallel) in [("sequential", false), ("parallel", true)] {
        group.bench_with_input(BenchmarkId::new(name, refs.len()), &parallel, |b, &parallel| {
            par::set_parallel(parallel);
            b.iter(|| black_box(trainer.batch_objective(&refs, &seeds, 1.0, true).unwrap()));
        });
    }
    par::set_parallel(true);
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
