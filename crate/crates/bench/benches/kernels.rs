use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use vcstar_bench::{desk_trainer, pairs, random_mcep, random_tensor, smoke_corpus, st_adv_models};
use vcstar_core::autograd::Graph;
use vcstar_core::metrics::{dtw_align, mcd, modulation_spectrum, msd, McepView};
use vcstar_core::training::{TrainingConfig, Widths};

fn generator(c: &mut Criterion) {
    let arch = Widths::desk().arch(8, 2);
    let (models, params) = st_adv_models(&arch);
    let cfg = TrainingConfig::desk();
    let (b, t) = (cfg.batch_size, cfg.segment_len);
    let x = random_tensor(&[b, 8, t], 1);
    let pairs = pairs(b);

    c.bench_function("generator/forward", |bench| {
        bench.iter(|| models.generator.convert(&params.g, black_box(&x), &pairs).unwrap())
    });
    c.bench_function("generator/forward_backward", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let p = params.g.bind(&mut g, true);
            let xv = g.constant(x.clone());
            let y = models.generator.forward(&mut g, &p, xv, &pairs).unwrap();
            let sq = g.square(y);
            let loss = g.mean(sq);
            black_box(g.backward(loss).unwrap())
        })
    });
}

fn metrics(c: &mut Criterion) {
    let q = 34;
    for t in [64, 256] {
        let a = random_mcep(q, t, 2);
        let b = random_mcep(q, t + t / 8, 3);
        let va = McepView::new(&a, q, t).unwrap();
        let vb = McepView::new(&b, q, t + t / 8).unwrap();
        c.bench_function(&format!("dtw/q34_t{t}"), |bench| {
            bench.iter(|| dtw_align(black_box(va), black_box(vb)).unwrap())
        });
        c.bench_function(&format!("mcd/q34_t{t}"), |bench| {
            bench.iter(|| mcd(black_box(va), black_box(vb), true).unwrap())
        });
    }
    let t = 512;
    let a = random_mcep(q, t, 4);
    let b = random_mcep(q, t, 5);
    let va = McepView::new(&a, q, t).unwrap();
    let vb = McepView::new(&b, q, t).unwrap();
    c.bench_function("modspec/q34_t512", |bench| bench.iter(|| modulation_spectrum(black_box(va)).unwrap()));
    c.bench_function("msd/q34_t512", |bench| bench.iter(|| msd(black_box(va), black_box(vb)).unwrap()));
}

fn train_step(c: &mut Criterion) {
    let corpus = smoke_corpus();
    let trainer = desk_trainer(&corpus);
    let state = trainer.init_state().unwrap();
    let mut group = c.benchmark_group("train");
    group.sample_size(20);
    group.bench_function("step/desk_st_adv_q8", |bench| {
        bench.iter_batched(
            || state.clone(),
            |mut s| trainer.step(&mut s).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, generator, metrics, train_step);
criterion_main!(benches);
