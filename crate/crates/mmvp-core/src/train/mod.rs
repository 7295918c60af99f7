//! Training: config, AdamW + cosine restarts, deterministic single-threaded
//! loop, and checkpointing.

mod checkpoint;
mod config;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{load_config, TrainConfig};
pub use optim::{lr_schedule, AdamW, AdamWParams};

use std::path::{Path, PathBuf};

use crate::data::{read_dataset, SequenceDataset, SplitMix64};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalSpec};
use crate::model::MmvpModel;
use crate::tensor::{Element, Tensor};

pub struct TrainSummary {
    pub epochs_run: usize,
    pub steps: u64,
    /// Mean per-sequence training loss per epoch, in epoch order.
    pub epoch_losses: Vec<f64>,
    pub final_checkpoint: PathBuf,
    /// Mean validation PSNR of the model and of the repeat-last baseline,
    /// when a validation set was given.
    pub val_psnr: Option<f64>,
    pub baseline_psnr: Option<f64>,
    pub val_mse_sum: Option<f64>,
    pub baseline_mse_sum: Option<f64>,
}

impl TrainConfig {
    fn adamw(&self) -> AdamWParams {
        AdamWParams {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

fn checkpoint_path(out: &Path, epoch: usize) -> PathBuf {
    out.join(format!("checkpoint_{epoch:05}.mmck"))
}

/// File-based entry point: reads datasets from the config's paths.
pub fn train(
    cfg: &TrainConfig,
    resume: Option<&Path>,
    log: &mut dyn FnMut(&str),
) -> Result<TrainSummary> {
    cfg.validate()?;
    let data_path = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("training requires a data path".into()))?;
    let out = cfg
        .out
        .as_ref()
        .ok_or_else(|| Error::Config("training requires an output directory".into()))?
        .clone();
    let ds = read_dataset(data_path)?;
    let val = cfg.val.as_ref().map(|p| read_dataset(p)).transpose()?;
    train_loop(cfg, &ds, val.as_ref(), &out, resume, log)
}

/// Deterministic single-threaded training over an in-memory dataset.
pub fn train_loop(
    cfg: &TrainConfig,
    ds: &SequenceDataset,
    val: Option<&SequenceDataset>,
    out: &Path,
    resume: Option<&Path>,
    log: &mut dyn FnMut(&str),
) -> Result<TrainSummary> {
    cfg.validate()?;
    let need = cfg.t_obs + cfg.t_fut;
    if (ds.seq_len as usize) < need {
        return Err(Error::Invalid(format!(
            "dataset sequences of length {} are shorter than T + T' = {need}",
            ds.seq_len
        )));
    }
    std::fs::create_dir_all(out)?;
    let mut model = MmvpModel::<f32>::build(cfg.model(), cfg.seed)?;
    let mut opt = AdamW::new(&model.store);
    let adamw = cfg.adamw();
    let mut start_epoch = 0usize;
    if let Some(path) = resume {
        let ck = load_checkpoint(path)?;
        if ck.config.model() != cfg.model() {
            return Err(Error::Config(
                "checkpoint model configuration differs from the requested one".into(),
            ));
        }
        ck.restore_into(&mut model.store, &mut opt)?;
        start_epoch = ck.epoch;
    }

    let n_seq = ds.num_sequences as usize;
    let mut epoch_losses = Vec::new();
    for epoch in start_epoch..cfg.total_epochs {
        let lr = lr_schedule(epoch, cfg);
        let mut order: Vec<usize> = (0..n_seq).collect();
        SplitMix64::derive(cfg.seed, epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0f64;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut acc: Vec<Option<Tensor<f32>>> = vec![None; model.store.len()];
            let inv = 1.0 / batch.len() as f64;
            for &seq in batch {
                let frames = ds.frames_f32(seq, 0, cfg.t_obs);
                let targets = ds.frames_f32(seq, cfg.t_obs, cfg.t_fut);
                let mut step = || -> Result<f64> {
                    let (g, vars, fwd) = model.training_forward(&frames, &targets)?;
                    let loss = fwd.loss.expect("targets given");
                    let value = g.value(loss).item() as f64;
                    g.backward(g.scale(loss, f32::from_f64(inv)))?;
                    for (slot, &v) in acc.iter_mut().zip(&vars) {
                        let grad = g.grad(v).expect("parameter leaf");
                        match slot {
                            None => *slot = Some(grad),
                            Some(t) => {
                                let dst = t.data_mut();
                                for (x, y) in dst.iter_mut().zip(grad.data()) {
                                    *x += *y;
                                }
                            }
                        }
                    }
                    Ok(value)
                };
                loss_sum += step().map_err(|e| {
                    Error::Invalid(format!("epoch {epoch} batch {b} sequence {seq}: {e}"))
                })?;
            }
            opt.step(&mut model.store, &acc, lr, &adamw)?;
        }
        let mean_loss = loss_sum / n_seq as f64;
        epoch_losses.push(mean_loss);
        log(&format!(
            "epoch={epoch} step={} loss={mean_loss:.6e} lr={lr:.6e}",
            opt.step
        ));
        let done = epoch + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done != cfg.total_epochs
        {
            save_checkpoint(&checkpoint_path(out, done), cfg, done, &model.store, &opt)?;
        }
    }
    let final_checkpoint = checkpoint_path(out, cfg.total_epochs);
    save_checkpoint(
        &final_checkpoint,
        cfg,
        cfg.total_epochs,
        &model.store,
        &opt,
    )?;

    let (mut val_psnr, mut baseline_psnr) = (None, None);
    let (mut val_mse_sum, mut baseline_mse_sum) = (None, None);
    if let Some(val_ds) = val {
        let spec = EvalSpec {
            t_obs: cfg.t_obs,
            t_fut: cfg.t_fut,
            data_range: 1.0,
        };
        let report = evaluate(|_, frames| model.predict_frames(frames), val_ds, &spec)?;
        log(&format!(
            "val psnr={:.4} baseline_psnr={:.4} mse_sum={:.4} baseline_mse_sum={:.4}",
            report.model.full.psnr,
            report.baseline.full.psnr,
            report.model.full.mse_sum,
            report.baseline.full.mse_sum
        ));
        val_psnr = Some(report.model.full.psnr);
        baseline_psnr = Some(report.baseline.full.psnr);
        val_mse_sum = Some(report.model.full.mse_sum);
        baseline_mse_sum = Some(report.baseline.full.mse_sum);
    }
    Ok(TrainSummary {
        epochs_run: cfg.total_epochs - start_epoch,
        steps: opt.step,
        epoch_losses,
        final_checkpoint,
        val_psnr,
        baseline_psnr,
        val_mse_sum,
        baseline_mse_sum,
    })
}

/// Rebuilds a model from a checkpoint (architecture from the config echo,
/// parameters from the archive).
pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<MmvpModel<f32>> {
    let mut model = MmvpModel::<f32>::build(ck.config.model(), ck.config.seed)?;
    let mut opt = AdamW::new(&model.store);
    ck.restore_into(&mut model.store, &mut opt)?;
    Ok(model)
}
