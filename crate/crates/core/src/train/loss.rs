use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParamKind;
use crate::tensor::{Real, Tensor};

fn mean<T: Real>(g: &mut Graph<'_, T>, terms: &[Var]) -> Result<Var> {
    if terms.is_empty() {
        return Err(Error::Input("loss over an empty batch".into()));
    }
    let total = g.add_all(terms)?;
    g.scale(total, T::from_f64c(1.0 / terms.len() as f64))
}

/// Mean softmax cross entropy of `logits[i]` against class `gold[i]`.
pub fn loss_xent_softmax<T: Real>(g: &mut Graph<'_, T>, logits: &[Var], gold: &[usize]) -> Result<Var> {
    if logits.len() != gold.len() {
        return Err(Error::Input(format!("{} logit vectors for {} labels", logits.len(), gold.len())));
    }
    let terms = logits
        .iter()
        .zip(gold)
        .map(|(&l, &y)| g.softmax_xent(l, y))
        .collect::<Result<Vec<_>>>()?;
    mean(g, &terms)
}

/// Mean binary cross entropy of `sigmoid(logits[i])` against `labels[i]`.
/// Taking pre-sigmoid scores keeps the loss finite when the sigmoid saturates.
pub fn loss_xent_sigmoid<T: Real>(g: &mut Graph<'_, T>, logits: &[Var], labels: &[bool]) -> Result<Var> {
    if logits.len() != labels.len() {
        return Err(Error::Input(format!("{} logits for {} labels", logits.len(), labels.len())));
    }
    let terms = logits
        .iter()
        .zip(labels)
        .map(|(&l, &y)| g.sigmoid_xent(l, y))
        .collect::<Result<Vec<_>>>()?;
    mean(g, &terms)
}

/// `λ · Σ ‖W‖²` over the trainable weight matrices of the graph's parameter
/// set. Biases and embedding tables are excluded.
pub fn l2_penalty<T: Real>(g: &mut Graph<'_, T>, lambda: f64) -> Result<Var> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("L2 strength must be nonnegative, got {lambda}")));
    }
    let ids: Vec<_> = match g.params() {
        Some(p) if lambda > 0.0 => p
            .ids()
            .filter(|&id| p.kind(id) == ParamKind::Weight && p.is_trainable(id))
            .collect(),
        _ => Vec::new(),
    };
    if ids.is_empty() {
        return Ok(g.constant(Tensor::scalar(T::zero())));
    }
    let mut terms = Vec::with_capacity(ids.len());
    for id in ids {
        let w = g.param(id)?;
        terms.push(g.sum_squares(w)?);
    }
    let total = g.add_all(&terms)?;
    g.scale(total, T::from_f64c(lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParameterSet;

    #[test]
    fn uniform_logits_give_ln_c() {
        let mut g = Graph::<f64>::new();
        let l = g.leaf(Tensor::vector(vec![0.7; 5]));
        let loss = loss_xent_softmax(&mut g, &[l, l], &[0, 4]).unwrap();
        assert!((g.value(loss).item() - 5f64.ln()).abs() < 1e-12);
        assert!(matches!(loss_xent_softmax(&mut g, &[l], &[5]), Err(Error::Input(_))));
    }

    #[test]
    fn half_probability_gives_ln_2() {
        let mut g = Graph::<f64>::new();
        let l = g.leaf(Tensor::vector(vec![0.0]));
        for y in [true, false] {
            let loss = loss_xent_sigmoid(&mut g, &[l], &[y]).unwrap();
            assert!((g.value(loss).item() - 2f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_lambda_is_zero() {
        let mut p = ParameterSet::<f64>::new();
        p.add("w", ParamKind::Weight, Tensor::vector(vec![3.0, 4.0])).unwrap();
        let mut g = Graph::with_params(&p);
        let pen = l2_penalty(&mut g, 0.0).unwrap();
        assert_eq!(g.value(pen).item(), 0.0);
        let pen = l2_penalty(&mut g, 0.5).unwrap();
        assert_eq!(g.value(pen).item(), 12.5);
    }

    #[test]
    fn biases_are_not_decayed() {
        let mut p = ParameterSet::<f64>::new();
        p.add("b", ParamKind::Bias, Tensor::vector(vec![3.0])).unwrap();
        p.add("e", ParamKind::Embedding, Tensor::vector(vec![3.0])).unwrap();
        let mut g = Graph::with_params(&p);
        let pen = l2_penalty(&mut g, 1.0).unwrap();
        assert_eq!(g.value(pen).item(), 0.0);
    }
}
