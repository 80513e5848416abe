//! Adaptive-moment (Adam) updates over groups of tensors.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for one parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamGroup {
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl AdamGroup {
    pub fn new(shapes: &[&[usize]]) -> Self {
        Self {
            step: 0,
            first: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            second: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// One step on `params` with gradients `grads`; returns the largest
    /// absolute parameter change.
    pub fn update(
        &mut self,
        cfg: &AdamConfig,
        lr: f64,
        params: &mut [&mut Tensor],
        grads: &[Tensor],
    ) -> Result<f64, ModelError> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(ModelError::Dims(format!(
                "optimizer group holds {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(cfg.beta1, t);
        let c2 = 1.0 - libm::pow(cfg.beta2, t);
        let mut max_change: f64 = 0.0;
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            if p.shape() != g.shape() || m.shape() != p.shape() {
                return Err(ModelError::Dims(format!(
                    "param {:?}, grad {:?}, moment {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                let gi = g.data()[i];
                md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gi;
                vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = md[i] / c1;
                let v_hat = vd[i] / c2;
                let delta = lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
                let before = pd[i];
                pd[i] = before - delta;
                max_change = max_change.max(libm::fabs(pd[i] - before));
            }
        }
        Ok(max_change)
    }
}

/// Optimizer state for the three parameter groups of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub theta: AdamGroup,
    pub lambda: AdamGroup,
    pub pattern: AdamGroup,
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        let cfg = AdamConfig::default();
        for g in [0.37, -2.5, 1e-3] {
            let mut group = AdamGroup::new(&[&[1]]);
            let mut p = Tensor::vector(vec![1.0]);
            let lr = 0.01;
            group.update(&cfg, lr, &mut [&mut p], &[Tensor::vector(vec![g])]).unwrap();
            let expect = 1.0 - lr * g / (libm::fabs(g) + 1e-8);
            assert!((p.data()[0] - expect).abs() < 1e-15);
            assert!((p.data()[0] - (1.0 - lr * g.signum())).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_rate_leaves_params() {
        let mut group = AdamGroup::new(&[&[2]]);
        let mut p = Tensor::vector(vec![0.5, -0.5]);
        let before = p.clone();
        let change = group
            .update(&AdamConfig::default(), 0.0, &mut [&mut p], &[Tensor::vector(vec![3.0, -1.0])])
            .unwrap();
        assert_eq!(p, before);
        assert_eq!(change, 0.0);
    }

    #[test]
    fn shape_mismatch() {
        let mut group = AdamGroup::new(&[&[2]]);
        let mut p = Tensor::vector(vec![0.5, -0.5]);
        assert!(group
            .update(&AdamConfig::default(), 0.1, &mut [&mut p], &[Tensor::vector(vec![1.0])])
            .is_err());
    }
}
