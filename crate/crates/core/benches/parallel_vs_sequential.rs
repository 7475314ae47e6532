//! Hot kernels under the rayon build and the sequential build.
//!
//! Each benchmark id carries the build mode. Run the suite twice and compare:
//!
//! ```text
//! cargo bench -p coordfit --bench parallel_vs_sequential -- --save-baseline parallel
//! cargo bench -p coordfit --bench parallel_vs_sequential --no-default-features -- --save-baseline sequential
//! ```
//!
//! The rayon build also times every kernel inside a one-thread pool, which
//! isolates scheduling overhead from the chunked code path itself.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use coordfit::embedders::SuperGaussianConfig;
use coordfit::graphlap::build_graph;
use coordfit::linalg::{matmul, Matrix};
use coordfit::net::{train, InputSource, RunConfig, SgInput};
use coordfit::par;
use coordfit::signals::{make_split, synth, SplitScheme};

fn mode() -> &'static str {
    if par::PARALLEL {
        "parallel"
    } else {
        "sequential"
    }
}

fn filled(rows: usize, cols: usize, salt: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |i, j| (((i * 31 + j * 17 + salt) % 97) as f64 - 48.0) / 97.0)
}

type Kernel = Box<dyn Fn() + Send + Sync>;

fn kernels() -> Vec<(&'static str, Kernel)> {
    let a = filled(2048, 256, 1);
    let b = filled(256, 256, 2);

    let cfg = SuperGaussianConfig::default_for(1);
    let coords: Vec<f64> = (0..4096).map(|i| i as f64 / 4095.0).collect();
    let sigmas = vec![cfg.initial_sigma(); coords.len()];
    let emb = cfg.embed_batch(&coords[..512], &sigmas[..512]).unwrap();

    let signal = synth::signal_1d(0, 512);
    let split = make_split(&signal, SplitScheme::Regular, 0.5, 0).unwrap();
    let train_coords = signal.gather_coords(&split.train_idx);
    let source = InputSource::SuperGaussian(
        SgInput::new(cfg.clone(), &train_coords, vec![cfg.initial_sigma(); train_coords.len()], true).unwrap(),
    );
    let run = RunConfig {
        hidden: 128,
        epochs: 5,
        ..RunConfig::default()
    };
    let embed_cfg = cfg.clone();

    vec![
        ("gemm_2048x256x256", Box::new(move || {
            black_box(matmul(&a, &b));
        })),
        ("embed_batch_4096", Box::new(move || {
            black_box(embed_cfg.embed_batch(&coords, &sigmas).unwrap());
        })),
        ("build_graph_512", Box::new(move || {
            black_box(build_graph(&emb, 0.5, 0.5).unwrap());
        })),
        ("train_5_epochs", Box::new(move || {
            black_box(train(&signal, &split, &source, &run).unwrap());
        })),
    ]
}

fn bench(c: &mut Criterion) {
    let mut group = c.benchmark_group("kernels");
    group.sample_size(10);
    #[cfg(feature = "parallel")]
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    for (name, f) in kernels() {
        group.bench_function(format!("{name}/{}", mode()), |bch| bch.iter(&f));
        #[cfg(feature = "parallel")]
        group.bench_function(format!("{name}/parallel_1_thread"), |bch| {
            bch.iter(|| single.install(&f))
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
