//! Cross-module integration: data generation -> training -> evaluation.

use mmvp_core::data::generate_sequences;
use mmvp_core::train::{load_checkpoint, model_from_checkpoint, train_loop, TrainConfig};

fn small_cfg() -> TrainConfig {
    TrainConfig {
        height: 32,
        width: 32,
        c_in: 1,
        t_obs: 3,
        t_fut: 2,
        c_img: 8,
        c_motion: 8,
        s: 4,
        scales: vec![1, 2, 4, 8],
        include_image: true,
        restart_period: 50,
        batch_size: 2,
        total_epochs: 25,
        seed: 7,
        checkpoint_every: 100,
        ..TrainConfig::default()
    }
}

#[test]
fn fifty_steps_halve_the_training_loss() {
    // 2 sequences, batch 2 -> one step per epoch, 25 epochs = ... use 50
    let mut cfg = small_cfg();
    cfg.total_epochs = 50;
    let ds = generate_sequences(3, 2, cfg.t_obs + cfg.t_fut, 32, 32, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut lines = Vec::new();
    let summary = train_loop(&cfg, &ds, None, dir.path(), None, &mut |l: &str| {
        lines.push(l.to_string())
    })
    .unwrap();
    assert_eq!(summary.steps, 50);
    let first = summary.epoch_losses[0];
    let last = *summary.epoch_losses.last().unwrap();
    assert!(
        last <= 0.5 * first,
        "loss {first:.6} -> {last:.6} did not halve in 50 steps"
    );
    // structured log lines
    assert!(lines[0].starts_with("epoch=0 step=1 loss="));
    assert!(lines[0].contains("lr="));
}

#[test]
fn identical_seeds_give_bit_identical_checkpoints() {
    let mut cfg = small_cfg();
    cfg.total_epochs = 5; // 5 epochs x 1 step/epoch... batch 2 over 4 seqs = 2 steps
    let ds = generate_sequences(11, 4, cfg.t_obs + cfg.t_fut, 32, 32, 2).unwrap();
    let run = |dir: &std::path::Path| {
        let summary = train_loop(&cfg, &ds, None, dir, None, &mut |_| {}).unwrap();
        std::fs::read(summary.final_checkpoint).unwrap()
    };
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let (a, b) = (run(d1.path()), run(d2.path()));
    assert_eq!(a, b, "checkpoints differ between identical runs");
}

#[test]
fn resume_reproduces_uninterrupted_training_bit_exactly() {
    let ds = generate_sequences(13, 4, 5, 32, 32, 2).unwrap();
    // uninterrupted: 4 epochs
    let mut full_cfg = small_cfg();
    full_cfg.total_epochs = 4;
    let dir_full = tempfile::tempdir().unwrap();
    let full = train_loop(&full_cfg, &ds, None, dir_full.path(), None, &mut |_| {}).unwrap();

    // interrupted: 2 epochs, then resume to 4
    let mut head_cfg = full_cfg.clone();
    head_cfg.total_epochs = 2;
    let dir_head = tempfile::tempdir().unwrap();
    let head = train_loop(&head_cfg, &ds, None, dir_head.path(), None, &mut |_| {}).unwrap();
    let dir_tail = tempfile::tempdir().unwrap();
    let tail = train_loop(
        &full_cfg,
        &ds,
        None,
        dir_tail.path(),
        Some(&head.final_checkpoint),
        &mut |_| {},
    )
    .unwrap();
    assert_eq!(tail.epochs_run, 2);

    let a = std::fs::read(&full.final_checkpoint).unwrap();
    let b = std::fs::read(&tail.final_checkpoint).unwrap();
    assert_eq!(a, b, "resumed training diverged from uninterrupted run");
}

#[test]
fn checkpointed_model_predicts_like_the_live_one() {
    let cfg = small_cfg();
    let ds = generate_sequences(17, 2, 5, 32, 32, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = cfg;
    cfg.total_epochs = 2;
    let summary = train_loop(&cfg, &ds, None, dir.path(), None, &mut |_| {}).unwrap();
    let ck = load_checkpoint(&summary.final_checkpoint).unwrap();
    assert_eq!(ck.epoch, 2);
    let model = model_from_checkpoint(&ck).unwrap();
    let frames = ds.frames_f32(0, 0, cfg.t_obs);
    let pred = model.predict_frames(&frames).unwrap();
    assert_eq!(pred.shape(), &[cfg.t_fut, 32, 32, 1]);
    assert!(pred.data().iter().all(|v| v.is_finite()));
}
