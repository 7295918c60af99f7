//! AdamW with decoupled weight decay, and the cosine-restart learning-rate
//! schedule.

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{Element, Tensor};
use crate::train::TrainConfig;

/// lr(epoch) = lr_min + 0.5 (lr_max - lr_min) (1 + cos(pi t / P)),
/// t = epoch mod P. Periodic with period `restart_period`, bounded in
/// [lr_min, lr_max], lr(0) = lr_max.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let t = (epoch % cfg.restart_period) as f64;
    let frac = t / cfg.restart_period as f64;
    cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[derive(Clone, Copy, Debug)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Optimizer state: first/second moment per parameter plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamW<E: Element> {
    pub m: Vec<Tensor<E>>,
    pub v: Vec<Tensor<E>>,
    pub step: u64,
}

impl<E: Element> AdamW<E> {
    pub fn new(store: &ParamStore<E>) -> Self {
        let zeros: Vec<Tensor<E>> = (0..store.len())
            .map(|i| Tensor::zeros(store.tensor(i).shape()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    /// One update over all parameters:
    /// theta <- theta - lr*wd*theta - lr*m_hat/(sqrt(v_hat) + eps).
    /// Gradients must be present for every parameter.
    pub fn step(
        &mut self,
        store: &mut ParamStore<E>,
        grads: &[Option<Tensor<E>>],
        lr: f64,
        p: &AdamWParams,
    ) -> Result<()> {
        assert_eq!(grads.len(), store.len());
        if let Some(i) = grads.iter().position(Option::is_none) {
            return Err(Error::MissingGrad(store.name(i).to_string()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - p.beta1.powi(t);
        let bc2 = 1.0 - p.beta2.powi(t);
        let (b1, b2) = (E::from_f64(p.beta1), E::from_f64(p.beta2));
        let (ob1, ob2) = (E::from_f64(1.0 - p.beta1), E::from_f64(1.0 - p.beta2));
        let inv_bc1 = E::from_f64(1.0 / bc1);
        let inv_bc2_sqrt = E::from_f64(1.0 / bc2.sqrt());
        let eps = E::from_f64(p.eps);
        let lr_e = E::from_f64(lr);
        let decay = E::from_f64(lr * p.weight_decay);
        for i in 0..store.len() {
            let g = grads[i].as_ref().expect("checked above");
            let mut theta = store.tensor(i).clone();
            let td = theta.data_mut();
            let md = self.m[i].data_mut();
            let vd = self.v[i].data_mut();
            for ((th, (m, v)), &gv) in td
                .iter_mut()
                .zip(md.iter_mut().zip(vd.iter_mut()))
                .zip(g.data())
            {
                *m = b1 * *m + ob1 * gv;
                *v = b2 * *v + ob2 * gv * gv;
                let m_hat = *m * inv_bc1;
                let v_hat_sqrt = (*v).sqrt() * inv_bc2_sqrt;
                *th = *th - decay * *th - lr_e * m_hat / (v_hat_sqrt + eps);
            }
            store.set_tensor(i, theta);
        }
        Ok(())
    }
}
