//! Finite-difference validation of every backward rule.
//!
//! Each case rebuilds the graph from scratch per perturbed element, so the
//! analytic gradient is compared against a central difference with h = 1e-5
//! in f64. Weight tensors multiply outputs before reduction so that the
//! incoming gradient is non-uniform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use umt_tensor::{Tape, Tensor, Var};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn check_grads(inputs: &[Tensor<f64>], build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();

    let eval = |xs: &[Tensor<f64>]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.param(x)).collect();
        let l = build(&mut t, &vs);
        t.value(l).item()
    };

    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .unwrap_or_else(|| panic!("no gradient for input {i}"));
        for j in 0..x.numel() {
            let mut xs = inputs.to_vec();
            let x0 = x.data()[j];
            xs[i].data_mut()[j] = x0 + H;
            let f_plus = eval(&xs);
            xs[i].data_mut()[j] = x0 - H;
            let f_minus = eval(&xs);
            let numeric = (f_plus - f_minus) / (2.0 * H);
            let a = analytic.data()[j];
            let denom = a.abs().max(numeric.abs()).max(1.0);
            assert!(
                (a - numeric).abs() / denom < TOL,
                "input {i} element {j}: analytic {a} vs finite difference {numeric}"
            );
        }
    }
}

fn randn(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Random values bounded away from zero so relu kinks stay clear of +-H.
fn rand_offzero(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let mag = rng.gen_range(0.2..1.0);
        if rng.gen::<f64>() < 0.5 {
            mag
        } else {
            -mag
        }
    })
}

#[test]
fn add_same_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = randn(&mut rng, vec![3, 4]);
    let b = randn(&mut rng, vec![3, 4]);
    let w = randn(&mut rng, vec![3, 4]);
    check_grads(&[a, b, w], &|t, v| {
        let s = t.add(v[0], v[1]).unwrap();
        let p = t.mul(s, v[2]).unwrap();
        t.sum(p)
    });
}

#[test]
fn add_suffix_broadcast() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = randn(&mut rng, vec![4, 3]);
    let bias = randn(&mut rng, vec![3]);
    let w = randn(&mut rng, vec![4, 3]);
    check_grads(&[x, bias, w], &|t, v| {
        let s = t.add(v[0], v[1]).unwrap();
        let p = t.mul(s, v[2]).unwrap();
        t.sum(p)
    });
}

#[test]
fn mul_elementwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = randn(&mut rng, vec![2, 5]);
    let b = randn(&mut rng, vec![2, 5]);
    check_grads(&[a, b], &|t, v| {
        let p = t.mul(v[0], v[1]).unwrap();
        t.sum(p)
    });
}

#[test]
fn scale_by_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = randn(&mut rng, vec![6]);
    check_grads(&[a], &|t, v| {
        let s = t.scale(v[0], -2.5);
        let q = t.mul(s, s).unwrap();
        t.sum(q)
    });
}

#[test]
fn matmul_both_operands() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = randn(&mut rng, vec![3, 4]);
    let b = randn(&mut rng, vec![4, 2]);
    let w = randn(&mut rng, vec![3, 2]);
    check_grads(&[a, b, w], &|t, v| {
        let c = t.matmul(v[0], v[1]).unwrap();
        let p = t.mul(c, v[2]).unwrap();
        t.sum(p)
    });
}

#[test]
fn transpose_grad() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = randn(&mut rng, vec![3, 5]);
    let w = randn(&mut rng, vec![5, 3]);
    check_grads(&[a, w], &|t, v| {
        let at = t.transpose(v[0]).unwrap();
        let p = t.mul(at, v[1]).unwrap();
        t.sum(p)
    });
}

#[test]
fn reshape_grad() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = randn(&mut rng, vec![2, 6]);
    let w = randn(&mut rng, vec![3, 4]);
    check_grads(&[a, w], &|t, v| {
        let r = t.reshape(v[0], vec![3, 4]).unwrap();
        let p = t.mul(r, v[1]).unwrap();
        t.sum(p)
    });
}

#[test]
fn concat_three_parts() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = randn(&mut rng, vec![2, 3]);
    let b = randn(&mut rng, vec![2, 1]);
    let c = randn(&mut rng, vec![2, 2]);
    let w = randn(&mut rng, vec![2, 6]);
    check_grads(&[a, b, c, w], &|t, v| {
        let cat = t.concat(&[v[0], v[1], v[2]], 1).unwrap();
        let p = t.mul(cat, v[3]).unwrap();
        t.sum(p)
    });
}

#[test]
fn slice_interior_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = randn(&mut rng, vec![3, 5]);
    let w = randn(&mut rng, vec![3, 2]);
    check_grads(&[a, w], &|t, v| {
        let s = t.slice(v[0], 1, 1, 2).unwrap();
        let p = t.mul(s, v[1]).unwrap();
        t.sum(p)
    });
}

#[test]
fn softmax_inner_and_outer_axis() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for axis in [1, 2] {
        let a = randn(&mut rng, vec![2, 3, 4]);
        let w = randn(&mut rng, vec![2, 3, 4]);
        check_grads(&[a, w], &|t, v| {
            let s = t.softmax(v[0], axis).unwrap();
            let p = t.mul(s, v[1]).unwrap();
            t.sum(p)
        });
    }
}

#[test]
fn layer_norm_all_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = randn(&mut rng, vec![4, 6]);
    let gain = randn(&mut rng, vec![6]);
    let bias = randn(&mut rng, vec![6]);
    let w = randn(&mut rng, vec![4, 6]);
    check_grads(&[x, gain, bias, w], &|t, v| {
        let n = t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
        let p = t.mul(n, v[3]).unwrap();
        t.sum(p)
    });
}

#[test]
fn relu_away_from_kink() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = rand_offzero(&mut rng, vec![4, 4]);
    let w = randn(&mut rng, vec![4, 4]);
    check_grads(&[a, w], &|t, v| {
        let r = t.relu(v[0]);
        let p = t.mul(r, v[1]).unwrap();
        t.sum(p)
    });
}

#[test]
fn embedding_with_repeated_ids() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let table = randn(&mut rng, vec![5, 3]);
    let w = randn(&mut rng, vec![4, 3]);
    check_grads(&[table, w], &|t, v| {
        let e = t.embedding(v[0], &[0, 2, 1, 2]).unwrap();
        let p = t.mul(e, v[1]).unwrap();
        t.sum(p)
    });
}

#[test]
fn cross_entropy_with_ignored_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let logits = randn(&mut rng, vec![4, 6]);
    check_grads(&[logits], &|t, v| t.cross_entropy(v[0], &[2, 0, 5, 0], 0).unwrap());
}

#[test]
fn mean_grad() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let a = randn(&mut rng, vec![3, 3]);
    check_grads(&[a], &|t, v| {
        let q = t.mul(v[0], v[0]).unwrap();
        t.mean(q)
    });
}

/// Embedding -> layer norm -> linear -> relu -> linear, with a cross-entropy
/// head and a softmax head mixed into one scalar. Exercises chained backward
/// through every op used by the transformer, across 100 seeds.
#[test]
fn composed_block_over_100_seeds() {
    let ids = [3u32, 1, 4, 2];
    let targets = [1u32, 0, 4, 2];
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = randn(&mut rng, vec![5, 4]);
        let gain = rand_offzero(&mut rng, vec![4]);
        let bias = randn(&mut rng, vec![4]);
        let w1 = randn(&mut rng, vec![4, 6]);
        let b1 = randn(&mut rng, vec![6]);
        let w2 = randn(&mut rng, vec![6, 5]);
        let wmix = randn(&mut rng, vec![4, 5]);
        check_grads(&[table, gain, bias, w1, b1, w2, wmix], &|t, v| {
            let e = t.embedding(v[0], &ids).unwrap();
            let n = t.layer_norm(e, v[1], v[2], 1e-5).unwrap();
            let h = t.matmul(n, v[3]).unwrap();
            let h = t.add(h, v[4]).unwrap();
            let h = t.relu(h);
            let logits = t.matmul(h, v[5]).unwrap();
            let ce = t.cross_entropy(logits, &targets, 0).unwrap();
            let sm = t.softmax(logits, 1).unwrap();
            let mixed = t.mul(sm, v[6]).unwrap();
            let aux = t.sum(mixed);
            let aux = t.scale(aux, 0.5);
            t.add(ce, aux).unwrap()
        });
    }
}

#[test]
fn backward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let a = randn(&mut rng, vec![6, 6]);
        let b = randn(&mut rng, vec![6, 6]);
        let mut tape = Tape::new();
        let av = tape.param(&a);
        let bv = tape.param(&b);
        let c = tape.matmul(av, bv).unwrap();
        let s = tape.softmax(c, 1).unwrap();
        let p = tape.mul(s, c).unwrap();
        let loss = tape.mean(p);
        let grads = tape.backward(loss).unwrap();
        (grads.get(av).unwrap().clone(), grads.get(bv).unwrap().clone())
    };
    let (ga1, gb1) = run();
    let (ga2, gb2) = run();
    assert_eq!(ga1, ga2);
    assert_eq!(gb1, gb2);
}

#[test]
fn params_used_only_under_no_grad_get_no_gradient() {
    let mut tape = Tape::<f64>::new();
    let w = tape.param(&Tensor::from_fn(vec![3], |i| i as f64 + 1.0));
    let frozen = tape.param(&Tensor::full(vec![3], 2.0));
    let z = tape.no_grad(|t| t.mul(w, frozen).unwrap());
    let y = tape.mul(w, z).unwrap();
    let loss = tape.sum(y);
    let grads = tape.backward(loss).unwrap();
    assert!(grads.get(frozen).is_none());
    assert!(grads.get(w).is_some());
}
