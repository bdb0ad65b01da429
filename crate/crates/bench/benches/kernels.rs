use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use hinge::evalbench::{synth_hin, SyntheticSpec};
use hinge::hypergraph::adjacency_of;
use hinge::numkern::SparseBinaryMatrix;
use hinge::trainer::{init, step, TrainConfig, TrainContext};
use hinge::DenseMatrix;

fn dense(rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |i, j| ((i * 31 + j * 17) % 101) as f64 / 101.0 - 0.5)
}

fn kernels(c: &mut Criterion) {
    let (rows, cols) = (2000, 500);
    let coords = (0..rows).flat_map(|i| (0..8).map(move |k| (i, (i * 7 + k * 61) % cols)));
    let s = SparseBinaryMatrix::from_coords(rows, cols, coords).unwrap();
    let x = dense(cols, 64);
    c.bench_function("spmm 2000x500 nnz16k x64", |b| b.iter(|| s.spmm(&x).unwrap()));

    let a = dense(300, 64);
    let w = dense(64, 64);
    c.bench_function("matmul 300x64x64", |b| b.iter(|| a.matmul(&w).unwrap()));
}

fn model(c: &mut Criterion) {
    let g = synth_hin(&SyntheticSpec::default()).unwrap();
    let config = TrainConfig::default();
    let ctx = TrainContext::new(&g, &config).unwrap();

    c.bench_function("adjacency build (300 anchors)", |b| b.iter(|| adjacency_of(&ctx.hypergraph).unwrap()));

    let state = init(&ctx, &config).unwrap();
    c.bench_function("forward (300 anchors)", |b| b.iter(|| ctx.inputs.forward(&state.params).unwrap()));

    c.bench_function("train step (300 anchors)", |b| {
        b.iter_batched(
            || state.clone(),
            |mut s| step(&mut s, &ctx, &config).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

criterion_group!(benches, kernels, model);
criterion_main!(benches);
