use nse_core::cells::Init;
use nse_core::gradcheck::grad_check;
use nse_core::heads::{ClassifierConfig, Embedder, SentenceClassifier};
use nse_core::tasks::ClassifyTask;
use nse_core::train::{adam_update, bucket_batches, l2_penalty, train_epoch, Adam, TrainConfig};
use nse_core::{Gradients, Graph, ParamKind, ParameterSet, Tensor};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};

fn config(cases: u32) -> Config {
    Config {
        cases,
        rng_seed: RngSeed::Fixed(0xb0b),
        failure_persistence: None,
        ..Config::default()
    }
}

proptest! {
    #![proptest_config(config(200))]

    /// After one step both moment estimates are exact after bias correction,
    /// so the update is `lr · g / (|g| + eps)`.
    #[test]
    fn first_adam_step_closed_form(w in prop::collection::vec(-3.0..3.0f64, 1..8), scale in 1e-3..10.0f64, lr in 1e-4..1e-1f64) {
        let n = w.len();
        let mut p = ParameterSet::<f64>::new();
        let id = p.add("w", ParamKind::Weight, Tensor::vector(w.clone())).unwrap();
        let g: Vec<f64> = (0..n).map(|i| scale * (i as f64 - 1.5)).collect();
        let mut grads = Gradients::zeros_like(&p);
        grads.insert(id, Tensor::vector(g.clone()));
        let adam = Adam::new(lr);
        adam_update(&mut p, &grads, &adam).unwrap();
        for i in 0..n {
            let want = w[i] - lr * g[i] / (g[i].abs() + adam.eps);
            prop_assert!((p.get(id).data()[i] - want).abs() < 1e-12);
        }
        prop_assert_eq!(p.step(id), 1);
    }

    #[test]
    fn batches_partition_the_input(keys in prop::collection::vec(0usize..5, 1..80), bs in 1usize..12, seed in any::<u64>()) {
        let batches = bucket_batches(&keys, bs, seed).unwrap();
        let mut all: Vec<usize> = batches.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..keys.len()).collect::<Vec<_>>());
        for b in &batches {
            prop_assert!(!b.is_empty() && b.len() <= bs);
            prop_assert!(b.iter().all(|&i| keys[i] == keys[b[0]]));
        }
    }
}

#[test]
fn l2_gradient_is_two_lambda_w() {
    let lambda = 0.03;
    let mut p = ParameterSet::<f64>::new();
    let w = p.add("w", ParamKind::Weight, Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 0.1, 0.0, -0.7]).unwrap()).unwrap();
    let b = p.add("b", ParamKind::Bias, Tensor::vector(vec![3.0, -4.0])).unwrap();
    let mut g = Graph::with_params(&p);
    let pen = l2_penalty(&mut g, lambda).unwrap();
    let grads = g.backward(pen).unwrap().params(&p);
    for (got, &wv) in grads.get(w).unwrap().data().iter().zip(p.get(w).data()) {
        assert!((got - 2.0 * lambda * wv).abs() < 1e-15);
    }
    assert!(grads.get(b).is_none_or(|t| t.data().iter().all(|&v| v == 0.0)));
    let r = grad_check(&p, 1e-5, |g| l2_penalty(g, lambda)).unwrap();
    assert!(r.max_rel_error < 1e-8, "{:.3e}", r.max_rel_error);
}

fn tiny_task(p: &mut ParameterSet<f32>) -> ClassifyTask {
    let mut init = Init::new(p, 5);
    let embed = Embedder::new(&mut init, "emb", 10, 6, 0.5).unwrap();
    let model = SentenceClassifier::new(&mut init, "cls", &ClassifierConfig::new(6, 8, 2)).unwrap();
    ClassifyTask { embed, model }
}

/// Same seed, same data: bit-identical parameters after an epoch with dropout
/// and L2 on.
#[test]
fn training_is_reproducible() {
    let data: Vec<(Vec<usize>, usize)> = (0..24).map(|i| ((0..3 + i % 4).map(|t| (t * 7 + i) % 10).collect(), i % 2)).collect();
    let run = || {
        let mut p = ParameterSet::<f32>::new();
        let mut task = tiny_task(&mut p);
        task.model.encoder.config.rw_dropout = 0.2;
        let cfg = TrainConfig {
            batch_size: 5,
            l2: 1e-4,
            ..TrainConfig::default()
        };
        for epoch in 0..2 {
            train_epoch(&task, &mut p, &data, &cfg, epoch).unwrap();
        }
        p.iter().flat_map(|(_, _, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
