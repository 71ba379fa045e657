//! Adam and reduce-on-plateau learning-rate scheduling.

use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tensor::Scalar;

/// Adam hyperparameters and step counter. Moment tensors live on each
/// [`Param`](crate::param::Param) so they stay aligned with the registry.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
        }
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            ..Default::default()
        }
    }

    /// One bias-corrected update of every parameter, then zeroes the
    /// gradients. Fails unless a backward pass has populated them.
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if !store.grads_ready() {
            return Err(Error::TapeState(
                "optimizer step requested before any backward pass".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for p in store.params_mut() {
            let value = p.value.data_mut();
            let m = p.adam_m.data_mut();
            let v = p.adam_v.data_mut();
            for (i, g) in p.grad.data().iter().enumerate() {
                let g = g.as_f64();
                let mi = b1 * m[i].as_f64() + (1.0 - b1) * g;
                let vi = b2 * v[i].as_f64() + (1.0 - b2) * g * g;
                m[i] = T::of(mi);
                v[i] = T::of(vi);
                let update = self.lr * (mi / c1) / ((vi / c2).sqrt() + self.eps);
                value[i] = T::of(value[i].as_f64() - update);
            }
        }
        store.zero_grads();
        Ok(())
    }
}

/// Reduce-on-plateau scheduler monitoring a quantity to be minimized.
#[derive(Debug, Clone, PartialEq)]
pub struct Plateau {
    pub best: f64,
    pub bad_epochs: usize,
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
    /// Relative improvement required to reset the counter.
    pub threshold: f64,
}

impl Default for Plateau {
    fn default() -> Self {
        Plateau::new(5)
    }
}

impl Plateau {
    pub fn new(patience: usize) -> Self {
        Plateau {
            best: f64::INFINITY,
            bad_epochs: 0,
            patience,
            factor: 0.1,
            min_lr: 1e-6,
            threshold: 1e-4,
        }
    }

    /// Records one monitored value and returns the possibly reduced rate.
    pub fn step(&mut self, monitored: f64, lr: f64) -> Result<f64> {
        if !monitored.is_finite() {
            return Err(Error::NonFinite(format!(
                "plateau scheduler got monitored value {monitored}"
            )));
        }
        if monitored < self.best * (1.0 - self.threshold) || self.best.is_infinite() {
            self.best = monitored;
            self.bad_epochs = 0;
            return Ok(lr);
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.patience {
            self.bad_epochs = 0;
            return Ok((lr * self.factor).max(self.min_lr).min(lr));
        }
        Ok(lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(v: f32, g: f32) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        let id = s.register("w", Tensor::scalar(v)).unwrap();
        s.get_mut(id).grad = Tensor::scalar(g);
        s.mark_grads_ready();
        s
    }

    #[test]
    fn first_step_hand_value() {
        let mut s = scalar_store(0.0, 1.0);
        let mut adam = Adam::default();
        adam.step(&mut s).unwrap();
        let w = s.params()[0].value.data()[0] as f64;
        assert!((w + 9.99999990e-4).abs() < 1e-10, "{w}");
        assert_eq!(adam.step, 1);
        assert_eq!(s.params()[0].grad.data()[0], 0.0);
    }

    #[test]
    fn zero_gradients_are_fixed_points() {
        let mut s = scalar_store(0.25, 0.0);
        let mut adam = Adam::default();
        adam.step(&mut s).unwrap();
        assert_eq!(s.params()[0].value.data()[0], 0.25);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn step_without_backward_fails() {
        let mut s = ParamStore::<f32>::new();
        s.register("w", Tensor::scalar(1.0)).unwrap();
        assert!(Adam::default().step(&mut s).is_err());
    }

    #[test]
    fn constant_signal_reduces_once_at_epoch_seven() {
        let mut p = Plateau::new(5);
        let mut lr = 1e-3;
        let mut reductions = Vec::new();
        for epoch in 1..=7 {
            let next = p.step(1.0, lr).unwrap();
            if next < lr {
                reductions.push(epoch);
            }
            lr = next;
        }
        assert_eq!(reductions, vec![7]);
        assert!((lr - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn floor_and_nan() {
        let mut p = Plateau::new(0);
        let mut lr = 1e-6;
        p.step(1.0, lr).unwrap();
        for _ in 0..5 {
            lr = p.step(1.0, lr).unwrap();
        }
        assert_eq!(lr, 1e-6);
        assert!(p.step(f64::NAN, lr).is_err());
    }
}
