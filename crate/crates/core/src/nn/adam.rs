use super::{Module, Param, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adaptive-moment optimizer state: one first/second moment pair per
/// trainable tensor, in visit order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// One bias-corrected update of every parameter of `module` from its
    /// accumulated gradients.
    pub fn step<M: Module + ?Sized>(&mut self, module: &mut M) -> Result<()> {
        self.t += 1;
        let mut index = 0;
        let mut result = Ok(());
        module.visit_params_mut("", &mut |name, p| {
            if result.is_ok() {
                result = self.update(index, p).map_err(|e| Error::Shape(format!("{name}: {e}")));
            }
            index += 1;
        });
        result
    }

    fn update(&mut self, index: usize, p: &mut Param) -> Result<()> {
        if index == self.m.len() {
            self.m.push(Tensor::zeros_like(&p.value));
            self.v.push(Tensor::zeros_like(&p.value));
        }
        let (m, v) = (&mut self.m[index], &mut self.v[index]);
        p.value.same_dims(&p.grad, "parameter vs gradient")?;
        p.value.same_dims(m, "parameter vs moment")?;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (((x, g), mi), vi) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *mi = beta1 * *mi + (1.0 - beta1) * g;
            *vi = beta2 * *vi + (1.0 - beta2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Updates `params` in place from `grads` (matched by position).
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut Adam) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape(format!("{} parameters but {} gradients", params.len(), grads.len())));
    }
    if !state.m.is_empty() && state.m.len() != params.len() {
        return Err(Error::Shape("optimizer state tracks a different parameter list".into()));
    }
    state.t += 1;
    for (i, (value, grad)) in params.iter_mut().zip(grads).enumerate() {
        let mut p = Param { value: std::mem::replace(value, Tensor::zeros(&[0])), grad: grad.clone() };
        let r = state.update(i, &mut p);
        *value = p.value;
        r?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = vec![Tensor::filled(&[3], 1.5)];
        let mut adam = Adam::new(AdamConfig::default());
        adam_step(&mut params, &[Tensor::zeros(&[3])], &mut adam).unwrap();
        assert_eq!(params[0].data(), &[1.5; 3]);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut params = vec![Tensor::new(&[3], vec![0.0, 1.0, -2.0]).unwrap()];
        let grads = vec![Tensor::new(&[3], vec![0.3, -7.0, 1e-2]).unwrap()];
        let mut adam = Adam::new(AdamConfig::default());
        adam_step(&mut params, &grads, &mut adam).unwrap();
        let want = [-1e-3, 1.0 + 1e-3, -2.0 - 1e-3];
        for (a, b) in params[0].data().iter().zip(want) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let run = || {
            let mut params = vec![Tensor::new(&[2], vec![0.1, 0.2]).unwrap()];
            let grads = vec![Tensor::new(&[2], vec![0.5, -0.25]).unwrap()];
            let mut adam = Adam::new(AdamConfig::default());
            adam_step(&mut params, &grads, &mut adam).unwrap();
            adam_step(&mut params, &grads, &mut adam).unwrap();
            params
        };
        let (a, b) = (run(), run());
        assert!(a[0].data().iter().zip(b[0].data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn shape_mismatch() {
        let mut params = vec![Tensor::zeros(&[2])];
        let mut adam = Adam::new(AdamConfig::default());
        assert!(adam_step(&mut params, &[Tensor::zeros(&[3])], &mut adam).is_err());
        assert!(adam_step(&mut params, &[], &mut adam).is_err());
    }
}
