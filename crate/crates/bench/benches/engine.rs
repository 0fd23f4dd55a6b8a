use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use evotrain_bench::mnist_model_fixture;
use evotrain_core::forward::Evaluator;
use evotrain_core::grad::backward;
use evotrain_core::rng::rng_for;
use evotrain_core::tensor::Tensor;

fn bench_forward(c: &mut Criterion) {
    let (net, params, data) = mnist_model_fixture(100);
    let ev = Evaluator::new(&net, &data).unwrap();
    let mut g = c.benchmark_group("forward");
    g.throughput(Throughput::Elements(data.len() as u64));
    g.bench_function("aggregate_loss_1000_examples", |b| {
        b.iter(|| ev.loss(&params.values))
    });
    g.finish();
}

fn bench_backward(c: &mut Criterion) {
    let (net, params, data) = mnist_model_fixture(13);
    let feat = data.example_len();
    let b128 = Tensor::new(
        vec![128, 28, 28, 1],
        data.inputs.data()[..128 * feat].to_vec(),
    )
    .unwrap();
    let labels: Vec<u32> = data.labels[..128].to_vec();
    let mut g = c.benchmark_group("backward");
    g.throughput(Throughput::Elements(128));
    g.bench_function("batch_128", |b| {
        b.iter(|| backward(&net, &params, &b128, &labels, &mut rng_for(0, 0)).unwrap())
    });
    g.finish();
}

fn bench_prefix_cache(c: &mut Criterion) {
    let (net, params, data) = mnist_model_fixture(100);
    let ev = Evaluator::new(&net, &data).unwrap();
    // suffix evaluation from the first dense layer (node 7)
    let (_, _, cache) = ev.loss_acc_capture(&params.values, 7);
    let mut g = c.benchmark_group("suffix");
    g.throughput(Throughput::Elements(data.len() as u64));
    g.bench_function("dense_head_from_cache", |b| {
        b.iter(|| ev.suffix_loss(&params.values, 7, &cache))
    });
    g.finish();
}

criterion_group!(benches, bench_forward, bench_backward, bench_prefix_cache);
criterion_main!(benches);
