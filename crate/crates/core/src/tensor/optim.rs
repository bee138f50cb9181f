//! AdamW with decoupled weight decay and the warm-up/cosine learning-rate
//! schedule used for all supervised objectives.

use super::nn::ParamBank;
use super::Tensor;
use crate::error::{PpgtaError, Result};

#[derive(Debug, Clone)]
pub enum LrSchedule {
    Constant(f32),
    /// Linear warm-up from `start` to `peak` over `warmup_epochs`, then
    /// cosine decay to zero at `total_epochs`.
    WarmupCosine {
        start: f32,
        peak: f32,
        warmup_epochs: f32,
        total_epochs: f32,
        steps_per_epoch: usize,
    },
}

impl LrSchedule {
    pub fn lr_at(&self, step: u64) -> f32 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::WarmupCosine {
                start,
                peak,
                warmup_epochs,
                total_epochs,
                steps_per_epoch,
            } => {
                let epoch = step as f32 / steps_per_epoch.max(1) as f32;
                if epoch < warmup_epochs {
                    start + (peak - start) * epoch / warmup_epochs
                } else if epoch >= total_epochs {
                    0.0
                } else {
                    let frac = (epoch - warmup_epochs) / (total_epochs - warmup_epochs);
                    peak * 0.5 * (1.0 + (std::f32::consts::PI * frac).cos())
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    pub schedule: LrSchedule,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(bank: &ParamBank, schedule: LrSchedule, weight_decay: f32) -> Self {
        let m = (0..bank.len())
            .map(|i| Tensor::zeros(&bank.value(i).shape))
            .collect();
        let v = (0..bank.len())
            .map(|i| Tensor::zeros(&bank.value(i).shape))
            .collect();
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            schedule,
            step: 0,
            m,
            v,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn current_lr(&self) -> f32 {
        self.schedule.lr_at(self.step)
    }

    /// Applies one update from the gradients accumulated in the bank and
    /// clears them. Errors on NaN gradients.
    pub fn step(&mut self, bank: &mut ParamBank) -> Result<()> {
        let lr = self.schedule.lr_at(self.step);
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..bank.len() {
            if bank.grad(i).data.iter().any(|g| !g.is_finite()) {
                return Err(PpgtaError::Diverged(format!(
                    "NaN gradient in parameter {} at step {}",
                    bank.name(i),
                    self.step
                )));
            }
            let grad = bank.grad(i).data.clone();
            let m = &mut self.m[i].data;
            let v = &mut self.v[i].data;
            let p = bank.value_mut(i);
            for j in 0..grad.len() {
                let g = grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p.data[j] -= lr * (mhat / (vhat.sqrt() + self.eps)
                    + self.weight_decay * p.data[j]);
            }
        }
        bank.zero_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn warmup_cosine_hits_documented_endpoints() {
        let s = LrSchedule::WarmupCosine {
            start: 2e-3,
            peak: 1e-2,
            warmup_epochs: 10.0,
            total_epochs: 40.0,
            steps_per_epoch: 7,
        };
        assert_eq!(s.lr_at(0), 2e-3);
        assert!((s.lr_at(70) - 1e-2).abs() < 1e-9, "peak at epoch 10");
        assert!(s.lr_at(35) > 2e-3 && s.lr_at(35) < 1e-2, "warming up");
        assert!(s.lr_at(140) < 1e-2, "decaying after warm-up");
        assert_eq!(s.lr_at(280), 0.0, "decayed to zero at total_epochs");
    }

    #[test]
    fn adamw_descends_a_quadratic() {
        let mut bank = ParamBank::new();
        bank.add("w", Tensor::from_vec(&[2], vec![3.0, -2.0]));
        let mut opt = AdamW::new(&bank, LrSchedule::Constant(0.1), 0.0);
        for _ in 0..200 {
            let g: Vec<f32> = bank.value(0).data.iter().map(|w| 2.0 * w).collect();
            bank.add_grad(0, &g);
            opt.step(&mut bank).unwrap();
        }
        assert!(bank.value(0).data.iter().all(|w| w.abs() < 1e-2));
        assert_eq!(opt.step_count(), 200);
    }

    #[test]
    fn nan_gradient_is_a_divergence_error() {
        let mut bank = ParamBank::new();
        bank.add("w", Tensor::from_vec(&[1], vec![1.0]));
        bank.add_grad(0, &[f32::NAN]);
        let mut opt = AdamW::new(&bank, LrSchedule::Constant(0.1), 0.0);
        assert!(matches!(
            opt.step(&mut bank),
            Err(crate::PpgtaError::Diverged(_))
        ));
    }

    #[test]
    fn weight_decay_is_decoupled() {
        // zero gradient: the update must still shrink the weight by lr * wd * w
        let mut bank = ParamBank::new();
        bank.add("w", Tensor::from_vec(&[1], vec![2.0]));
        let mut opt = AdamW::new(&bank, LrSchedule::Constant(0.5), 0.1);
        opt.step(&mut bank).unwrap();
        assert!((bank.value(0).data[0] - (2.0 - 0.5 * 0.1 * 2.0)).abs() < 1e-6);
    }
}
