use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fluoroden::fusion::{hf_extract, HighpassConfig};
use fluoroden::nn::{Denoiser, Msr2auConfig, Msr2auNet, StudentConfig, StudentUNet, Tape};
use fluoroden::{estimate_flow, recursive_filter, FlowEstimatorConfig, RecursiveFilterConfig};
use fluoroden_bench::{first_window, noisy_sequence, tensor};

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d");
    for (cin, cout, k) in [(1, 32, 7), (16, 16, 3), (64, 64, 3)] {
        let x = tensor((4, cin, 32, 32));
        let w = tensor((cout, cin, k, k));
        let b = tensor((1, cout, 1, 1));
        g.bench_with_input(BenchmarkId::from_parameter(format!("{cin}x{cout}k{k}")), &(), |bench, _| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let (xv, wv, bv) = (tape.input(x.clone()), tape.input(w.clone()), tape.input(b.clone()));
                let y = tape.conv2d(xv, wv, bv);
                black_box(tape.value(y).sum())
            })
        });
    }
    g.finish();
}

fn networks(c: &mut Criterion) {
    let teacher = Msr2auNet::new(
        Msr2auConfig {
            scale_filters: 8,
            levels: 2,
            base_channels: 8,
            ..Default::default()
        },
        0,
    )
    .unwrap();
    let student = StudentUNet::new(StudentConfig { levels: 2, base_channels: 8 }, 0).unwrap();
    let xt = tensor((16, 4, 32, 32));
    let xs = tensor((16, 1, 32, 32));
    let mut g = c.benchmark_group("train_step_batch16_32px");
    g.sample_size(10);
    g.bench_function("teacher", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let x = tape.input(xt.clone());
            let y = teacher.forward(&mut tape, x);
            let seed = tape.value(y).clone();
            black_box(tape.backward(y, seed, teacher.store().len()))
        })
    });
    g.bench_function("student", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let x = tape.input(xs.clone());
            let y = student.forward(&mut tape, x);
            let seed = tape.value(y).clone();
            black_box(tape.backward(y, seed, student.store().len()))
        })
    });
    g.finish();
}

fn flow(c: &mut Criterion) {
    let mut g = c.benchmark_group("lucas_kanade");
    for size in [64, 128] {
        let seq = noisy_sequence(size);
        let cfg = FlowEstimatorConfig::default();
        g.bench_with_input(BenchmarkId::from_parameter(size), &seq, |b, seq| {
            b.iter(|| black_box(estimate_flow(&seq.frames[3], &seq.frames[4], &cfg).unwrap()))
        });
    }
    g.finish();
}

fn hf(c: &mut Criterion) {
    let mut g = c.benchmark_group("hf_extract");
    for size in [64, 256] {
        let seq = noisy_sequence(size);
        let cfg = HighpassConfig::default();
        g.bench_with_input(BenchmarkId::from_parameter(size), &seq.frames[0], |b, f| {
            b.iter(|| black_box(hf_extract(f, &cfg).unwrap()))
        });
    }
    g.finish();
}

fn filter(c: &mut Criterion) {
    let seq = noisy_sequence(256);
    let window = first_window(&seq);
    let cfg = RecursiveFilterConfig::default();
    c.bench_function("recursive_filter_5x256", |b| {
        b.iter(|| black_box(recursive_filter(&window.stack(), &cfg).unwrap()))
    });
}

criterion_group!(benches, conv, networks, flow, hf, filter);
criterion_main!(benches);
