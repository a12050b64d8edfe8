//! Per-op properties of the tape: finite-difference agreement for every
//! differentiable op, softmax invariants, gradient accumulation, and hand
//! oracles for the linear-algebra ops.

use nse_core::gradcheck::grad_check;
use nse_core::{Graph, ParamKind, ParameterSet, Result, Shape, Tensor, Var};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};

const TOL: f64 = 1e-6;
const EPS: f64 = 1e-5;

fn config(cases: u32) -> Config {
    Config {
        cases,
        rng_seed: RngSeed::Fixed(0x5eed),
        failure_persistence: None,
        ..Config::default()
    }
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, n)
}

/// Values bounded away from zero, for ops with a kink there.
fn off_zero(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0.05..2.0f64, any::<bool>()).prop_map(|(m, s)| if s { m } else { -m }), n)
}

/// Readout weights with magnitudes in [0.5, 1] and alternating sign, so that
/// no output coordinate is ignored.
fn weights(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let m = 0.5 + 0.5 * ((i as f64 * 0.618_033_988_7).fract());
            if i % 2 == 0 {
                m
            } else {
                -m
            }
        })
        .collect()
}

/// Max relative error between the tape and central differences for
/// `sum(w ⊙ f(inputs))`.
fn op_error(inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>) -> f64 {
    let mut p = ParameterSet::new();
    let ids: Vec<_> = inputs
        .into_iter()
        .enumerate()
        .map(|(i, t)| p.add(format!("x{i}"), ParamKind::Weight, t).unwrap())
        .collect();
    let r = grad_check(&p, EPS, |g| {
        let xs = ids.iter().map(|&id| g.param(id)).collect::<Result<Vec<_>>>()?;
        let y = f(g, &xs)?;
        let w = g.constant(Tensor::new(g.shape(y), weights(g.value(y).len()))?);
        let y = g.mul(y, w)?;
        g.sum(y)
    })
    .unwrap();
    r.max_rel_error
}

fn vec_t(v: Vec<f64>) -> Tensor<f64> {
    Tensor::vector(v)
}

fn mat_t(r: usize, c: usize, v: Vec<f64>) -> Tensor<f64> {
    Tensor::matrix(r, c, v).unwrap()
}

proptest! {
    #![proptest_config(config(100))]

    #[test]
    fn matmul_grad(a in values(6), b in values(8)) {
        prop_assert!(op_error(vec![mat_t(3, 2, a), mat_t(2, 4, b)], |g, x| g.matmul(x[0], x[1])) < TOL);
    }

    #[test]
    fn matvec_and_vecmat_grad(w in values(12), x in values(4), y in values(3)) {
        prop_assert!(op_error(vec![mat_t(3, 4, w.clone()), vec_t(x)], |g, x| g.matvec(x[0], x[1])) < TOL);
        prop_assert!(op_error(vec![vec_t(y), mat_t(3, 4, w)], |g, x| g.vecmat(x[0], x[1])) < TOL);
    }

    #[test]
    fn elementwise_binary_grads(a in values(5), b in values(5)) {
        let ins = || vec![vec_t(a.clone()), vec_t(b.clone())];
        prop_assert!(op_error(ins(), |g, x| g.add(x[0], x[1])) < TOL);
        prop_assert!(op_error(ins(), |g, x| g.sub(x[0], x[1])) < TOL);
        prop_assert!(op_error(ins(), |g, x| g.mul(x[0], x[1])) < TOL);
        prop_assert!(op_error(ins(), |g, x| g.add_all(&[x[0], x[1], x[0]])) < TOL);
        prop_assert!(op_error(ins(), |g, x| g.dot(x[0], x[1])) < TOL);
    }

    #[test]
    fn elementwise_unary_grads(a in values(6), c in -3.0..3.0f64) {
        let ins = || vec![vec_t(a.clone())];
        prop_assert!(op_error(ins(), |g, x| g.scale(x[0], c)) < TOL);
        prop_assert!(op_error(ins(), |g, x| g.neg(x[0])) < TOL);
        prop_assert!(op_error(ins(), |g, x| g.tanh(x[0])) < TOL);
        prop_assert!(op_error(ins(), |g, x| g.sigmoid(x[0])) < TOL);
        prop_assert!(op_error(ins(), |g, x| g.softmax(x[0])) < TOL);
        prop_assert!(op_error(ins(), |g, x| g.sum(x[0])) < TOL);
        prop_assert!(op_error(ins(), |g, x| g.mean(x[0])) < TOL);
        prop_assert!(op_error(ins(), |g, x| g.sum_squares(x[0])) < TOL);
    }

    #[test]
    fn kinked_grads_away_from_zero(a in off_zero(6)) {
        prop_assert!(op_error(vec![vec_t(a.clone())], |g, x| g.relu(x[0])) < TOL);
        prop_assert!(op_error(vec![vec_t(a)], |g, x| g.abs(x[0])) < TOL);
    }

    #[test]
    fn structural_grads(a in values(4), b in values(4), m in values(12)) {
        prop_assert!(op_error(vec![vec_t(a.clone()), vec_t(b.clone())], |g, x| g.outer(x[0], x[1])) < TOL);
        prop_assert!(op_error(vec![vec_t(a.clone()), vec_t(b.clone())], |g, x| g.concat(&[x[1], x[0], x[1]])) < TOL);
        prop_assert!(op_error(vec![vec_t(a.clone())], |g, x| g.slice(x[0], 1, 2)) < TOL);
        prop_assert!(op_error(vec![vec_t(a.clone()), vec_t(b.clone())], |g, x| g.stack_cols(&[x[0], x[1], x[0]])) < TOL);
        prop_assert!(op_error(vec![mat_t(3, 4, m.clone())], |g, x| g.gather_row(x[0], 1)) < TOL);
        prop_assert!(op_error(vec![mat_t(3, 4, m.clone()), vec_t(a)], |g, x| g.add_row_broadcast(x[0], x[1])) < TOL);
        prop_assert!(op_error(vec![mat_t(4, 3, m), vec_t(b)], |g, x| g.add_col_broadcast(x[0], x[1])) < TOL);
    }

    #[test]
    fn mask_grad(a in values(6)) {
        let mask = vec![1.0, 0.0, 2.0, -0.5, 0.0, 1.0];
        prop_assert!(op_error(vec![vec_t(a)], move |g, x| g.apply_mask(x[0], mask.clone())) < TOL);
    }

    /// Dropout is linear in its input for a fixed mask, so the gradient of
    /// `sum(w ⊙ dropout(x))` satisfies `grad_i · x_i = w_i · y_i`.
    #[test]
    fn dropout_grad(a in off_zero(12), seed in any::<u64>()) {
        let mut g = Graph::<f64>::new().training(seed);
        let x = g.leaf(vec_t(a.clone()));
        let y = g.dropout(x, 0.4).unwrap();
        let w = weights(12);
        let wc = g.constant(vec_t(w.clone()));
        let r = g.dot(y, wc).unwrap();
        let grad = g.backward(r).unwrap().wrt(x).unwrap();
        for i in 0..12 {
            let lhs = grad.data()[i] * a[i];
            let rhs = w[i] * g.value(y).data()[i];
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn memory_write_grad(m in values(12), z in values(4), h in values(3)) {
        let ins = vec![mat_t(3, 4, m), vec_t(z), vec_t(h)];
        prop_assert!(op_error(ins, |g, x| g.memory_write(x[0], x[1], x[2])) < TOL);
    }

    #[test]
    fn cross_entropy_grads(a in values(5), gold in 0usize..5, s in -4.0..4.0f64, label in any::<bool>()) {
        prop_assert!(op_error(vec![vec_t(a)], move |g, x| g.softmax_xent(x[0], gold)) < TOL);
        prop_assert!(op_error(vec![vec_t(vec![s])], move |g, x| g.sigmoid_xent(x[0], label)) < TOL);
    }

    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(a in prop::collection::vec(-30.0..30.0f64, 1..12), c in -50.0..50.0f64) {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::vector(a.clone()));
        let s = g.softmax(x).unwrap();
        let y = g.leaf(Tensor::vector(a.iter().map(|v| v + c).collect()));
        let t = g.softmax(y).unwrap();
        let sv = g.value(s).data();
        prop_assert!((sv.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(sv.iter().all(|&p| p >= 0.0));
        for (p, q) in sv.iter().zip(g.value(t).data()) {
            prop_assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn two_uses_accumulate(a in values(4), w1 in values(4), w2 in values(4)) {
        let grad_of = |uses: &[&[f64]]| {
            let mut g = Graph::<f64>::new();
            let x = g.leaf(Tensor::vector(a.clone()));
            let t = g.tanh(x).unwrap();
            let terms: Vec<Var> = uses
                .iter()
                .map(|w| {
                    let w = g.constant(Tensor::vector(w.to_vec()));
                    g.dot(t, w).unwrap()
                })
                .collect();
            let root = g.add_all(&terms).unwrap();
            g.backward(root).unwrap().wrt(x).unwrap().into_data()
        };
        let both = grad_of(&[&w1, &w2]);
        let one = grad_of(&[&w1]);
        let two = grad_of(&[&w2]);
        for i in 0..4 {
            prop_assert!((both[i] - one[i] - two[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_masks_repeat_per_seed(a in values(16), seed in any::<u64>()) {
        let run = || {
            let mut g = Graph::<f64>::new().training(seed);
            let x = g.leaf(Tensor::vector(a.clone()));
            let y = g.dropout(x, 0.5).unwrap();
            g.value(y).clone()
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn matmul_matches_hand_product() {
    let mut g = Graph::<f64>::new();
    let a = g.leaf(mat_t(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let b = g.leaf(mat_t(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.shape(c), Shape::Matrix(2, 2));
    assert_eq!(g.value(c).data(), &[58.0, 64.0, 139.0, 154.0]);
}

#[test]
fn outer_matches_hand_product() {
    let mut g = Graph::<f64>::new();
    let u = g.leaf(vec_t(vec![1.0, -2.0]));
    let v = g.leaf(vec_t(vec![3.0, 0.5, 4.0]));
    let o = g.outer(u, v).unwrap();
    assert_eq!(g.value(o).data(), &[3.0, 0.5, 4.0, -6.0, -1.0, -8.0]);
}

#[test]
fn memory_write_matches_interpolation() {
    let mut g = Graph::<f64>::new();
    let m = g.leaf(mat_t(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let z = g.leaf(vec_t(vec![0.5, 0.25, 0.25]));
    let h = g.leaf(vec_t(vec![-1.0, 1.0]));
    let out = g.memory_write(m, z, h).unwrap();
    assert_eq!(g.value(out).data(), &[0.0, 1.25, 2.0, 2.5, 4.0, 4.75]);
}
