//! Parallel-versus-serial kernel benchmarks.
//!
//! The same data-parallel code runs under the default rayon pool and under a
//! single-thread pool, so the two measurements isolate the threading gain.
//! A naive direct convolution is included as the reference point for the
//! im2col/GEMM path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use slimnet::model::{ModelSpec, ResNet};
use slimnet::ops;
use slimnet::tensor::Tensor;

fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let data = (0..shape.iter().product::<usize>()).map(|_| rng.gen::<f32>() - 0.5).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Direct six-nested-loop convolution, the pre-optimization baseline.
fn naive_conv2d(input: &Tensor<f32>, weight: &Tensor<f32>, stride: usize, padding: usize) -> Tensor<f32> {
    let (n, c_in, h, w) = input.dims4().unwrap();
    let (c_out, _, k, _) = weight.dims4().unwrap();
    let h_out = (h + 2 * padding - k) / stride + 1;
    let w_out = (w + 2 * padding - k) / stride + 1;
    let mut out = Tensor::zeros(&[n, c_out, h_out, w_out]);
    for b in 0..n {
        for o in 0..c_out {
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut sum = 0.0f32;
                    for i in 0..c_in {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    let iv = input.data()
                                        [((b * c_in + i) * h + iy as usize) * w + ix as usize];
                                    let wv = weight.data()[((o * c_in + i) * k + ky) * k + kx];
                                    sum += iv * wv;
                                }
                            }
                        }
                    }
                    out.data_mut()[((b * c_out + o) * h_out + oy) * w_out + ox] = sum;
                }
            }
        }
    }
    out
}

fn with_threads<R>(threads: usize, f: impl FnOnce() -> R + Send) -> R
where
    R: Send,
{
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("pool builds")
        .install(f)
}

fn bench_conv2d(c: &mut Criterion) {
    let input = random_tensor(&[32, 16, 32, 32], 1);
    let weight = random_tensor(&[16, 16, 3, 3], 2);
    let mut group = c.benchmark_group("conv2d_forward");
    group.sample_size(20);
    group.bench_function(BenchmarkId::new("gemm", "parallel"), |b| {
        b.iter(|| ops::conv2d_forward(&input, &weight, 1, 1).unwrap())
    });
    group.bench_function(BenchmarkId::new("gemm", "serial"), |b| {
        b.iter(|| with_threads(1, || ops::conv2d_forward(&input, &weight, 1, 1).unwrap()))
    });
    group.bench_function(BenchmarkId::new("naive", "serial"), |b| {
        b.iter(|| naive_conv2d(&input, &weight, 1, 1))
    });
    group.finish();
}

fn bench_conv2d_backward(c: &mut Criterion) {
    let input = random_tensor(&[32, 16, 32, 32], 3);
    let weight = random_tensor(&[16, 16, 3, 3], 4);
    let grad_out = random_tensor(&[32, 16, 32, 32], 5);
    let mut group = c.benchmark_group("conv2d_backward");
    group.sample_size(20);
    group.bench_function("parallel", |b| {
        b.iter(|| ops::conv2d_backward(&grad_out, &input, &weight, 1, 1).unwrap())
    });
    group.bench_function("serial", |b| {
        b.iter(|| with_threads(1, || ops::conv2d_backward(&grad_out, &input, &weight, 1, 1).unwrap()))
    });
    group.finish();
}

fn bench_resnet20_forward(c: &mut Criterion) {
    let model: ResNet<f32> = ResNet::build(ModelSpec::new(20).unwrap(), 0);
    let batch = random_tensor(&[32, 3, 32, 32], 6);
    let mut group = c.benchmark_group("resnet20_forward_eval");
    group.sample_size(10);
    group.bench_function("parallel", |b| b.iter(|| model.forward_eval(&batch).unwrap()));
    group.bench_function("serial", |b| {
        b.iter(|| with_threads(1, || model.forward_eval(&batch).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, bench_conv2d, bench_conv2d_backward, bench_resnet20_forward);
criterion_main!(benches);
