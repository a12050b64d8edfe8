use crate::error::{Error, Result};
use crate::params::{Gradients, ParameterSet};
use crate::tensor::Real;

/// Adam hyperparameters. Moments and step counters live in the
/// [`ParameterSet`], one per tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step on every trainable tensor that has a gradient.
/// Frozen tensors and tensors without a gradient keep their values and step
/// counters.
pub fn adam_update<T: Real>(params: &mut ParameterSet<T>, grads: &Gradients<T>, adam: &Adam) -> Result<()> {
    for (id, g) in grads.iter() {
        if id.index() >= params.len() {
            return Err(Error::dim(format!("gradient for unknown parameter #{}", id.index())));
        }
        if g.shape() != params.get(id).shape() {
            return Err(Error::dim(format!(
                "gradient shape {} for `{}` of shape {}",
                g.shape(),
                params.name(id),
                params.get(id).shape()
            )));
        }
    }
    let b1 = T::from_f64c(adam.beta1);
    let b2 = T::from_f64c(adam.beta2);
    let eps = T::from_f64c(adam.eps);
    let one = T::one();
    for (id, g) in grads.iter() {
        if !params.is_trainable(id) {
            continue;
        }
        let e = params.entry_mut(id);
        e.step += 1;
        let t = e.step as i32;
        let c1 = T::from_f64c(1.0 - adam.beta1.powi(t));
        let c2 = T::from_f64c(1.0 - adam.beta2.powi(t));
        let lr = T::from_f64c(adam.lr);
        let value = e.value.data_mut();
        for i in 0..value.len() {
            let gi = g.data()[i];
            e.m[i] = b1 * e.m[i] + (one - b1) * gi;
            e.v[i] = b2 * e.v[i] + (one - b2) * gi * gi;
            let mhat = e.m[i] / c1;
            let vhat = e.v[i] / c2;
            value[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamKind;
    use crate::tensor::Tensor;

    fn one_param(v: Vec<f64>) -> (ParameterSet<f64>, crate::ParamId) {
        let mut p = ParameterSet::new();
        let id = p.add("w", ParamKind::Weight, Tensor::vector(v)).unwrap();
        (p, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut p, id) = one_param(vec![0.5, -1.0]);
        let mut g = Gradients::zeros_like(&p);
        g.insert(id, Tensor::vector(vec![0.0, 0.0]));
        adam_update(&mut p, &g, &Adam::new(0.1)).unwrap();
        assert_eq!(p.get(id).data(), &[0.5, -1.0]);
        assert_eq!(p.step(id), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut p, id) = one_param(vec![0.0, 0.0, 0.0]);
        let mut g = Gradients::zeros_like(&p);
        g.insert(id, Tensor::vector(vec![0.3, -7.0, 1e-3]));
        adam_update(&mut p, &g, &Adam::new(0.01)).unwrap();
        // m̂ = g and v̂ = g², so the step is lr · g / (|g| + ε).
        for (&x, want) in p.get(id).data().iter().zip([-0.01, 0.01, -0.01]) {
            assert!((x - want).abs() < 1e-6, "{x}");
        }
    }

    #[test]
    fn frozen_tensors_are_skipped() {
        let (mut p, id) = one_param(vec![1.0]);
        p.set_trainable(id, false);
        let mut g = Gradients::zeros_like(&p);
        g.insert(id, Tensor::vector(vec![1.0]));
        adam_update(&mut p, &g, &Adam::new(0.1)).unwrap();
        assert_eq!(p.get(id).data(), &[1.0]);
        assert_eq!(p.step(id), 0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (mut p, id) = one_param(vec![1.0]);
        let mut g = Gradients::zeros_like(&p);
        g.insert(id, Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(adam_update(&mut p, &g, &Adam::new(0.1)), Err(Error::Dimension(_))));
    }
}
