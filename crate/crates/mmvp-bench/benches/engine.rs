//! Engine and pipeline benchmarks: conv/matmul kernels, motion-matrix
//! construction + composition, and a full training step.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use mmvp_core::data::{generate_sequences, SplitMix64};
use mmvp_core::model::{build_motion_matrices, compose_future_vars, SourceKind};
use mmvp_core::{Graph, MmvpModel, ModelConfig, Tensor};

fn rand_t(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = SplitMix64::new(seed);
    Tensor::from_fn(shape, |_| rng.uniform() as f32)
}

fn bench_conv2d(c: &mut Criterion) {
    let x = rand_t(&[10, 32, 32, 32], 1);
    let w = rand_t(&[3, 3, 32, 16], 2);
    let b = rand_t(&[16], 3);
    c.bench_function("conv2d_fwd_10x32x32x32", |bench| {
        bench.iter(|| {
            let g = Graph::new();
            let xv = g.constant(x.clone());
            let wv = g.constant(w.clone());
            let bv = g.constant(b.clone());
            black_box(g.value(g.conv2d(xv, wv, Some(bv), 1, 1).unwrap()))
        })
    });
    c.bench_function("conv2d_fwd_bwd_10x32x32x32", |bench| {
        bench.iter(|| {
            let g = Graph::new();
            let xv = g.leaf(x.clone(), true);
            let wv = g.leaf(w.clone(), true);
            let bv = g.leaf(b.clone(), true);
            let y = g.conv2d(xv, wv, Some(bv), 1, 1).unwrap();
            g.backward(g.sum(y)).unwrap();
            black_box(g.grad(wv))
        })
    });
}

fn bench_matmul(c: &mut Criterion) {
    let a = rand_t(&[256, 256], 4);
    let b = rand_t(&[256, 256], 5);
    c.bench_function("matmul_256", |bench| {
        bench.iter(|| {
            let g = Graph::new();
            let av = g.constant(a.clone());
            let bv = g.constant(b.clone());
            black_box(g.value(g.matmul(av, bv).unwrap()))
        })
    });
}

fn bench_motion_pipeline(c: &mut Criterion) {
    // 16x16 grid, 10 frames, toy-scale matrix work
    let feats: Vec<Tensor<f32>> = (0..10).map(|i| rand_t(&[16, 16, 16], 10 + i)).collect();
    c.bench_function("motion_matrices_10x16x16", |bench| {
        bench.iter(|| black_box(build_motion_matrices(&feats).unwrap()))
    });

    let cfg = ModelConfig {
        height: 16,
        width: 16,
        c_in: 1,
        t_obs: 10,
        t_fut: 10,
        c_img: 4,
        c_motion: 4,
        s: 1,
        scales: vec![1],
        include_image: false,
        average_composition: false,
        use_filter: true,
    };
    let n = 256;
    let mut rng = SplitMix64::new(77);
    let stochastic = |rng: &mut SplitMix64| {
        let mut m = vec![0.0f32; n * n];
        for r in 0..n {
            let row = &mut m[r * n..(r + 1) * n];
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = rng.uniform() as f32 + 1e-3;
                s += *x;
            }
            for x in row.iter_mut() {
                *x /= s;
            }
        }
        Tensor::from_vec(vec![n, n], m).unwrap()
    };
    let mats: Vec<Tensor<f32>> = (0..9).map(|_| stochastic(&mut rng)).collect();
    let mhats: Vec<Tensor<f32>> = (0..10).map(|_| stochastic(&mut rng)).collect();
    let src = rand_t(&[10, 16, 16, 16], 99);
    c.bench_function("compose_future_16x16_T10", |bench| {
        bench.iter(|| {
            let g = Graph::new();
            let mv: Vec<_> = mats.iter().map(|m| g.constant(m.clone())).collect();
            let hv: Vec<_> = mhats.iter().map(|m| g.constant(m.clone())).collect();
            let composed = compose_future_vars(
                &g,
                &cfg,
                &[(SourceKind::Scale(1), g.constant(src.clone()))],
                &mv,
                &hv,
            )
            .unwrap();
            black_box(g.value(composed[0].feats))
        })
    });
}

fn bench_train_step(c: &mut Criterion) {
    let cfg = ModelConfig {
        height: 32,
        width: 32,
        c_in: 1,
        t_obs: 4,
        t_fut: 4,
        c_img: 8,
        c_motion: 16,
        s: 4,
        scales: vec![1, 2, 4, 8],
        include_image: true,
        average_composition: false,
        use_filter: true,
    };
    let model = MmvpModel::<f32>::build(cfg, 0).unwrap();
    let ds = generate_sequences(5, 1, 8, 32, 32, 2).unwrap();
    let frames = ds.frames_f32(0, 0, 4);
    let targets = ds.frames_f32(0, 4, 4);
    c.bench_function("train_step_32x32_T4", |bench| {
        bench.iter(|| {
            let (g, vars, out) = model.training_forward(&frames, &targets).unwrap();
            g.backward(out.loss.unwrap()).unwrap();
            black_box(g.grad(vars[0]))
        })
    });
}

criterion_group!(
    benches,
    bench_conv2d,
    bench_matmul,
    bench_motion_pipeline,
    bench_train_step
);
criterion_main!(benches);
