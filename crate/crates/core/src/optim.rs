//! Adam with bias correction.

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// First/second moment accumulators for one parameter tensor plus the
/// shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Tensor,
    v: Tensor,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, shape: &[usize]) -> Self {
        Self { config, m: Tensor::zeros(shape), v: Tensor::zeros(shape), step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn check_shape(&self, t: &Tensor, op: &'static str) -> Result<()> {
        if t.shape() == self.m.shape() {
            Ok(())
        } else {
            Err(CoreError::ShapeMismatch {
                op,
                left: self.m.shape().to_vec(),
                right: t.shape().to_vec(),
            })
        }
    }

    /// One Adam step applied in place.
    pub fn apply(&mut self, param: &mut Tensor, grad: &Tensor) -> Result<()> {
        self.check_shape(param, "adam_update")?;
        self.check_shape(grad, "adam_update")?;
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (m, v) = (self.m.data_mut(), self.v.data_mut());
        for ((p, g), (mi, vi)) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
            *vi = c.beta2 * *vi + (1.0 - c.beta2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
        }
        param.check_finite("adam_update")
    }

    /// Advances the step counter and updates only the given rows of a
    /// matrix parameter, leaving other rows' moments untouched. Used for
    /// sparse embedding-table gradients.
    pub fn apply_rows(&mut self, param: &mut Tensor, rows: &[(usize, &[f64])]) -> Result<()> {
        self.check_shape(param, "adam_update_rows")?;
        if param.shape().len() != 2 {
            return Err(CoreError::Contract("apply_rows expects a matrix parameter".into()));
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let cols = param.shape()[1];
        for &(r, grad_row) in rows {
            debug_assert_eq!(grad_row.len(), cols);
            let base = r * cols;
            let p = &mut param.data_mut()[base..base + cols];
            let m = &mut self.m.data_mut()[base..base + cols];
            let v = &mut self.v.data_mut()[base..base + cols];
            for ((pv, g), (mi, vi)) in
                p.iter_mut().zip(grad_row).zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pv -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        param.check_finite("adam_update_rows")
    }
}

/// Functional form of one Adam step: returns the updated parameter and
/// the advanced state.
pub fn adam_update(param: &Tensor, grad: &Tensor, state: &AdamState) -> Result<(Tensor, AdamState)> {
    let mut p = param.clone();
    let mut s = state.clone();
    s.apply(&mut p, grad)?;
    Ok((p, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_param_unchanged() {
        let p = Tensor::vector(vec![1.0, -2.0, 3.0]).unwrap();
        let g = Tensor::zeros(&[3]);
        let s = AdamState::new(AdamConfig::default(), &[3]);
        let (p2, s2) = adam_update(&p, &g, &s).unwrap();
        assert_eq!(p2.data(), p.data());
        assert_eq!(s2.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // t=1: m_hat = g, v_hat = g^2, so the step is lr * g/(|g|+eps) ≈ lr
        let p = Tensor::vector(vec![0.0]).unwrap();
        let g = Tensor::vector(vec![1.0]).unwrap();
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let s = AdamState::new(cfg, &[1]);
        let (p2, _) = adam_update(&p, &g, &s).unwrap();
        assert!((p2.data()[0] + 0.1).abs() < 1e-8, "{}", p2.data()[0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = Tensor::vector(vec![0.0, 0.0]).unwrap();
        let g = Tensor::vector(vec![1.0]).unwrap();
        let s = AdamState::new(AdamConfig::default(), &[2]);
        assert!(adam_update(&p, &g, &s).is_err());
    }

    #[test]
    fn converges_on_quadratic() {
        // minimize (x - 3)^2 from x = 0
        let mut p = Tensor::vector(vec![0.0]).unwrap();
        let mut s = AdamState::new(AdamConfig { lr: 0.05, ..AdamConfig::default() }, &[1]);
        for _ in 0..1000 {
            let g = Tensor::vector(vec![2.0 * (p.data()[0] - 3.0)]).unwrap();
            s.apply(&mut p, &g).unwrap();
        }
        assert!((p.data()[0] - 3.0).abs() < 1e-2, "{}", p.data()[0]);
    }

    #[test]
    fn row_updates_match_dense_updates_on_touched_rows() {
        let mut dense = Tensor::matrix(3, 2, vec![0.1; 6]).unwrap();
        let mut sparse = dense.clone();
        let mut sd = AdamState::new(AdamConfig::default(), &[3, 2]);
        let mut ss = AdamState::new(AdamConfig::default(), &[3, 2]);

        // dense: gradient only on row 1
        let g = Tensor::matrix(3, 2, vec![0.0, 0.0, 0.5, -0.5, 0.0, 0.0]).unwrap();
        sd.apply(&mut dense, &g).unwrap();
        ss.apply_rows(&mut sparse, &[(1, &[0.5, -0.5])]).unwrap();
        assert_eq!(dense.row(1), sparse.row(1));
        // untouched rows agree too (zero gradient leaves them in place)
        assert_eq!(dense.row(0), sparse.row(0));
    }
}
