//! Adam with decoupled weight decay, plus the linear learning-rate
//! schedule used by every training run.

use crate::error::{Error, Result};
use crate::registry::ParamRegistry;
use crate::tensor::Scalar;
use std::collections::HashMap;

/// Adam optimizer state. Moment buffers are created lazily for trainable
/// parameters and dropped when a parameter is frozen.
#[derive(Debug, Clone)]
pub struct Adam<T = f32> {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    moments: HashMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Adam<T> {
    /// Standard constants: beta1 0.9, beta2 0.999, epsilon 1e-8.
    pub fn new(base_lr: f64, weight_decay: f64) -> Self {
        Self {
            base_lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            moments: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update over all trainable parameters at learning rate `lr_now`.
    ///
    /// Only trainable parameters move. Weight decay is decoupled: applied
    /// directly to the weights of trainable parameters, not through the
    /// gradient. Errors if a trainable parameter is missing its gradient.
    pub fn step(&mut self, registry: &mut ParamRegistry<T>, lr_now: f64) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let one = T::one();
        let lr = T::from_f64(lr_now);
        let wd = T::from_f64(self.weight_decay);
        let eps = T::from_f64(self.epsilon);
        let (inv_bias1, inv_bias2) = (T::from_f64(1.0 / bias1), T::from_f64(1.0 / bias2));

        let trainable = registry.trainable_names();
        // Freezing a parameter invalidates its moments.
        let keep: std::collections::HashSet<&String> = trainable.iter().collect();
        self.moments.retain(|name, _| keep.contains(name));

        for name in &trainable {
            let tensor = registry.get_mut(name)?;
            let grad = tensor
                .grad()
                .ok_or_else(|| Error::MissingGradient { name: name.clone() })?
                .to_vec();
            let numel = tensor.numel();
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![T::zero(); numel], vec![T::zero(); numel]));
            let data = tensor.data_mut();
            for i in 0..numel {
                let g = grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let m_hat = m[i] * inv_bias1;
                let v_hat = v[i] * inv_bias2;
                data[i] = data[i] - lr * (m_hat / (v_hat.sqrt() + eps) + wd * data[i]);
            }
        }
        Ok(())
    }
}

/// Linear decay to zero over `total_epochs`: `base_lr * (1 - epoch/total)`.
pub fn linear_lr(epoch: usize, total_epochs: usize, base_lr: f64) -> Result<f64> {
    if epoch >= total_epochs {
        return Err(Error::EpochOutOfRange {
            epoch,
            total: total_epochs,
        });
    }
    Ok(base_lr * (1.0 - epoch as f64 / total_epochs as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn registry_with(name: &str, values: Vec<f64>, trainable: bool) -> ParamRegistry<f64> {
        let mut reg = ParamRegistry::new();
        let n = values.len();
        let t = Tensor::new(vec![n], values).unwrap().with_requires_grad(trainable);
        reg.insert(name, t).unwrap();
        reg
    }

    #[test]
    fn first_step_moves_by_lr() {
        // With any constant nonzero gradient and no weight decay, the
        // bias-corrected first step has magnitude ~lr per element.
        for &g in &[0.5, -2.0, 10.0] {
            let mut reg = registry_with("w", vec![1.0, -1.0], true);
            reg.get_mut("w").unwrap().accumulate_grad(&[g, g]).unwrap();
            let mut adam = Adam::new(1e-3, 0.0);
            adam.step(&mut reg, 1e-3).unwrap();
            let w = reg.get("w").unwrap().data();
            let expected = 1e-3 * g.signum();
            assert!((w[0] - (1.0 - expected)).abs() < 1e-8, "g={g}");
            assert!((w[1] - (-1.0 - expected)).abs() < 1e-8, "g={g}");
        }
    }

    #[test]
    fn frozen_parameter_never_moves() {
        let mut reg = registry_with("w", vec![3.0], false);
        let mut adam = Adam::<f64>::new(1e-2, 0.1);
        for _ in 0..5 {
            adam.step(&mut reg, 1e-2).unwrap();
        }
        assert_eq!(reg.get("w").unwrap().data(), &[3.0]);
        assert!(adam.moments.is_empty());
    }

    #[test]
    fn zero_gradient_no_decay_leaves_parameter() {
        let mut reg = registry_with("w", vec![2.5], true);
        reg.get_mut("w").unwrap().accumulate_grad(&[0.0]).unwrap();
        let mut adam = Adam::new(1e-2, 0.0);
        adam.step(&mut reg, 1e-2).unwrap();
        assert_eq!(reg.get("w").unwrap().data(), &[2.5]);
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut reg = registry_with("encoder.w", vec![1.0], true);
        let mut adam = Adam::new(1e-3, 0.0);
        match adam.step(&mut reg, 1e-3) {
            Err(Error::MissingGradient { name }) => assert_eq!(name, "encoder.w"),
            other => panic!("expected MissingGradient, got {other:?}"),
        }
    }

    #[test]
    fn decoupled_decay_shrinks_weights() {
        let mut reg = registry_with("w", vec![1.0], true);
        reg.get_mut("w").unwrap().accumulate_grad(&[0.0]).unwrap();
        let mut adam = Adam::new(1e-2, 0.1);
        adam.step(&mut reg, 1e-2).unwrap();
        // zero gradient, so the only movement is -lr * wd * w
        let w = reg.get("w").unwrap().data()[0];
        assert!((w - (1.0 - 1e-2 * 0.1)).abs() < 1e-12);
    }

    #[test]
    fn schedule_values() {
        assert_eq!(linear_lr(0, 50, 1e-3).unwrap(), 1e-3);
        assert_eq!(linear_lr(25, 50, 1e-3).unwrap(), 5e-4);
        assert!((linear_lr(49, 50, 1e-3).unwrap() - 2e-5).abs() < 1e-18);
        assert!(linear_lr(50, 50, 1e-3).is_err());
    }

    #[test]
    fn schedule_is_affine_and_decreasing() {
        let base = 3e-4;
        let total = 17;
        let values: Vec<f64> = (0..total)
            .map(|e| linear_lr(e, total, base).unwrap())
            .collect();
        assert_eq!(values[0], base);
        for w in values.windows(3) {
            assert!(w[1] < w[0]);
            let d1 = w[1] - w[0];
            let d2 = w[2] - w[1];
            assert!((d1 - d2).abs() < 1e-15);
        }
    }
}
