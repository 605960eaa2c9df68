//! Adam with bias correction.

use super::tensor::Tensor;
use crate::error::{LdamError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
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

/// Optimizer state: step counter plus first/second moment buffers that mirror
/// the parameter list passed to [`AdamState::update`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(config: AdamConfig, params: &[&Tensor]) -> Self {
        let sizes: Vec<usize> = params.iter().map(|p| p.len()).collect();
        Self::new(config, &sizes)
    }

    /// Applies one Adam step. `grads[i]` belongs to `params[i]`.
    ///
    /// A parameter tensor whose gradient is exactly zero everywhere is left
    /// untouched, moments included.
    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[Option<&[f64]>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(LdamError::Optimizer(format!(
                "{} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let g = g.ok_or_else(|| LdamError::Optimizer(format!("missing gradient for parameter {i}")))?;
            if g.len() != p.len() || self.m[i].len() != p.len() {
                return Err(LdamError::Optimizer(format!("gradient {i} has the wrong size")));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].expect("checked");
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar Adam written out directly.
    fn scalar_adam(x0: f64, steps: usize, grad: impl Fn(f64) -> f64, c: AdamConfig) -> f64 {
        let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
        for t in 1..=steps as i32 {
            let g = grad(x);
            m = c.beta1 * m + (1.0 - c.beta1) * g;
            v = c.beta2 * v + (1.0 - c.beta2) * g * g;
            x -= c.lr * (m / (1.0 - c.beta1.powi(t))) / ((v / (1.0 - c.beta2.powi(t))).sqrt() + c.eps);
        }
        x
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let mut st = AdamState::for_params(AdamConfig::default(), &[&p]);
        let zero = [0.0, 0.0];
        st.update(&mut [&mut p], &[Some(&zero[..])]).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_matches_scalar_formula() {
        let c = AdamConfig::default();
        let mut p = Tensor::vector(vec![0.5, 0.5]);
        let mut st = AdamState::for_params(c, &[&p]);
        let g = [0.3, -4.0];
        st.update(&mut [&mut p], &[Some(&g[..])]).unwrap();
        assert!((p.data()[0] - scalar_adam(0.5, 1, |_| 0.3, c)).abs() < 1e-15);
        assert!((p.data()[1] - scalar_adam(0.5, 1, |_| -4.0, c)).abs() < 1e-15);
        // The first bias-corrected step has magnitude ≈ lr in the direction of −g.
        assert!((p.data()[0] - (0.5 - 1e-3)).abs() < 1e-9);
        assert!((p.data()[1] - (0.5 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn two_steps_reduce_a_quadratic() {
        let c = AdamConfig { lr: 0.1, ..Default::default() };
        let mut x = Tensor::scalar(1.0);
        let mut st = AdamState::for_params(c, &[&x]);
        for _ in 0..2 {
            let g = [2.0 * x.data()[0]];
            st.update(&mut [&mut x], &[Some(&g[..])]).unwrap();
        }
        assert!(x.data()[0].powi(2) < 1.0);
        assert!((x.data()[0] - scalar_adam(1.0, 2, |x| 2.0 * x, c)).abs() < 1e-12);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = Tensor::scalar(1.0);
        let mut st = AdamState::for_params(AdamConfig::default(), &[&p]);
        assert!(st.update(&mut [&mut p], &[None]).is_err());
        assert_eq!(st.step, 0);
    }
}
