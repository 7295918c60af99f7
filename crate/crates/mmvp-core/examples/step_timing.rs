//! Measures one training step (forward+backward+update) at the acceptance
//! criteria scales to budget the long runs.

use std::time::Instant;

use mmvp_core::data::generate_sequences;
use mmvp_core::train::{AdamW, AdamWParams};
use mmvp_core::{MmvpModel, TrainConfig};

fn time_steps(label: &str, cfg: &TrainConfig, steps: usize) {
    let ds = generate_sequences(1, 4, cfg.t_obs + cfg.t_fut, cfg.height, cfg.width, 2).unwrap();
    let model = MmvpModel::<f32>::build(cfg.model(), 0).unwrap();
    let mut store = model.store.clone();
    let mut opt = AdamW::new(&store);
    let frames = ds.frames_f32(0, 0, cfg.t_obs);
    let targets = ds.frames_f32(0, cfg.t_obs, cfg.t_fut);
    // warm
    let (g, vars, out) = model.training_forward(&frames, &targets).unwrap();
    g.backward(out.loss.unwrap()).unwrap();
    let t0 = Instant::now();
    for _ in 0..steps {
        let (g, vars_i, out) = model.training_forward(&frames, &targets).unwrap();
        g.backward(out.loss.unwrap()).unwrap();
        let grads: Vec<_> = vars_i.iter().map(|&v| g.grad(v)).collect();
        opt.step(&mut store, &grads, 1e-3, &AdamWParams::default()).unwrap();
    }
    let dt = t0.elapsed().as_secs_f64() / steps as f64;
    let _ = vars;
    println!("{label}: {:.3} s/seq-step  (params {})", dt, model.count_params().total);
}

fn main() {
    // criterion 7 scale: 32x32, T=4->4, C_img=8, C_motion=16, S=4
    let c7 = TrainConfig {
        height: 32,
        width: 32,
        t_obs: 4,
        t_fut: 4,
        c_img: 8,
        c_motion: 16,
        s: 4,
        scales: vec![1, 2, 4, 8],
        ..TrainConfig::default()
    };
    time_steps("criterion-7 scale", &c7, 10);
    // criterion 8 scale: toy default 64x64, T=10->10
    let c8 = TrainConfig::default();
    time_steps("criterion-8 scale", &c8, 5);
}
