//! Hot-path benchmarks: conv forward/backward, the dynamic-conv mix, and
//! the log-mel front end.

use criterion::{criterion_group, criterion_main, Criterion};
use freqdyn_core::dynconv::{dfd_forward, AttentionWeights, BasisKernelSet};
use freqdyn_core::features::{log_mel, MelConfig};
use freqdyn_core::ops::{conv2d, softmax_axis, sum_all, Conv2dCfg};
use freqdyn_core::rng::substream;
use freqdyn_core::tape::Tape;
use freqdyn_core::tensor::Tensor;

fn bench_conv2d(c: &mut Criterion) {
    let mut rng = substream(0, "bench-conv");
    let x = Tensor::<f32>::rand_uniform(&[4, 32, 64, 156], -1.0, 1.0, &mut rng);
    let w = Tensor::<f32>::rand_uniform(&[32, 32, 3, 3], -0.1, 0.1, &mut rng);
    let b = Tensor::<f32>::rand_uniform(&[32], -0.1, 0.1, &mut rng);

    c.bench_function("conv2d_forward", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let wv = tape.leaf(w.clone());
            let bv = tape.leaf(b.clone());
            let y = conv2d(&mut tape, xv, wv, Some(bv), &Conv2dCfg::default()).unwrap();
            std::hint::black_box(tape.value(y).data()[0]);
        })
    });

    c.bench_function("conv2d_forward_backward", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let wv = tape.leaf(w.clone());
            let bv = tape.leaf(b.clone());
            let y = conv2d(&mut tape, xv, wv, Some(bv), &Conv2dCfg::default()).unwrap();
            let s = sum_all(&mut tape, y);
            let grads = tape.backward(s).unwrap();
            std::hint::black_box(grads.get_or_zeros(wv, w.shape()).data()[0]);
        })
    });
}

fn bench_dfd(c: &mut Criterion) {
    let mut rng = substream(0, "bench-dfd");
    let x = Tensor::<f32>::rand_uniform(&[2, 16, 32, 64], -1.0, 1.0, &mut rng);
    let w = Tensor::<f32>::rand_uniform(&[4, 16, 16, 3, 3], -0.1, 0.1, &mut rng);
    let b = Tensor::<f32>::rand_uniform(&[4, 16], -0.1, 0.1, &mut rng);
    let logits = Tensor::<f32>::rand_uniform(&[2, 4, 32, 1], -1.0, 1.0, &mut rng);

    c.bench_function("dfd_forward_k4", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let kernels = BasisKernelSet {
                weights: tape.leaf(w.clone()),
                biases: tape.leaf(b.clone()),
                dilations: vec![(1, 1); 4],
            };
            let lv = tape.leaf(logits.clone());
            let pi = AttentionWeights { pi: softmax_axis(&mut tape, lv, 1).unwrap() };
            let y = dfd_forward(&mut tape, xv, &kernels, &pi).unwrap();
            std::hint::black_box(tape.value(y).data()[0]);
        })
    });
}

fn bench_log_mel(c: &mut Criterion) {
    let mut rng = substream(0, "bench-mel");
    let cfg = MelConfig::default();
    let wave: Vec<f32> = (0..160_000)
        .map(|_| rand::Rng::gen_range(&mut rng, -0.5f32..0.5))
        .collect();

    c.bench_function("log_mel_10s", |bench| {
        bench.iter(|| {
            let m = log_mel(&wave, &cfg).unwrap();
            std::hint::black_box(m.data()[0]);
        })
    });
}

criterion_group!(benches, bench_conv2d, bench_dfd, bench_log_mel);
criterion_main!(benches);
