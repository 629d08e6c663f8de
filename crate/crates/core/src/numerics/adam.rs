use crate::error::{Error, Result};

use super::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for a fixed list of named parameters.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    names: Vec<String>,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[(String, Vec<usize>)]) -> Self {
        let sizes = params.iter().map(|(_, s)| s.iter().product::<usize>());
        AdamState {
            config,
            names: params.iter().map(|(n, _)| n.clone()).collect(),
            m: sizes.clone().map(|n| vec![T::zero(); n]).collect(),
            v: sizes.map(|n| vec![T::zero(); n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update at the configured learning rate.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        let lr = self.config.lr;
        self.step_with_lr(params, grads, lr)
    }

    /// One bias-corrected update at learning rate `lr`.
    ///
    /// All gradients are checked before any parameter is touched, so a NaN
    /// leaves both the parameters and the moments unchanged.
    pub fn step_with_lr(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.names.len() || grads.len() != self.names.len() {
            return Err(Error::shape(
                "adam",
                format!(
                    "{} parameters, {} gradients, state for {}",
                    params.len(),
                    grads.len(),
                    self.names.len()
                ),
            ));
        }
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {lr}")));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || p.shape() != g.shape() {
                return Err(Error::shape(
                    "adam",
                    format!("parameter {}: {:?} vs gradient {:?}", self.names[i], p.shape(), g.shape()),
                ));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", self.names[i])));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(t));
        let bc2 = T::of(1.0 - c.beta2.powi(t));
        let (lr, eps) = (T::of(lr), T::of(c.eps));
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mj = b1 * *mj + (T::one() - b1) * gj;
                *vj = b2 * *vj + (T::one() - b2) * gj * gj;
                let mhat = *mj / bc1;
                let vhat = *vj / bc2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_state(lr: f64) -> AdamState<f64> {
        AdamState::new(
            AdamConfig {
                lr,
                ..AdamConfig::default()
            },
            &[("w".into(), vec![1])],
        )
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut st = AdamState::<f64>::new(AdamConfig::default(), &[("a".into(), vec![2, 3])]);
        let mut p = vec![Tensor::from_fn(&[2, 3], |i| i as f64)];
        let before = p[0].clone();
        st.step(&mut p, &[Tensor::zeros(&[2, 3])]).unwrap();
        assert_eq!(p[0], before);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [0.3, -7.0] {
            let mut st = scalar_state(0.01);
            let mut p = vec![Tensor::scalar(1.0)];
            st.step(&mut p, &[Tensor::scalar(g)]).unwrap();
            let delta = p[0].data()[0] - 1.0;
            assert!((delta + 0.01 * g.signum()).abs() < 1e-8, "{delta}");
        }
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut st = scalar_state(0.1);
        let mut p = vec![Tensor::scalar(1.0)];
        let err = st.step(&mut p, &[Tensor::scalar(f64::NAN)]).unwrap_err();
        assert!(err.to_string().contains('w'));
        assert_eq!(p[0].data()[0], 1.0);
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn quadratic_converges() {
        let mut st = scalar_state(0.1);
        let mut p = vec![Tensor::scalar(0.0)];
        for _ in 0..100 {
            let w = p[0].data()[0];
            st.step(&mut p, &[Tensor::scalar(2.0 * (w - 3.0))]).unwrap();
        }
        assert!((p[0].data()[0] - 3.0).abs() < 0.05, "{}", p[0].data()[0]);
    }
}
