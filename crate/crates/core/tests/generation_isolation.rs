//! Generation must stay out of the gradient graph and be unaffected by it.
//!
//! The prepare functions take the model, not the tape, so isolation holds
//! structurally; these tests pin the behavioral consequences: preparing
//! batches mid-graph neither grows the tape nor changes what is generated,
//! and gradients are bitwise identical whether or not generation ran while
//! the graph was alive.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use umt_tensor::Tape;

use umt_core::model::{Model, ModelDims};
use umt_core::noise::NoiseSpec;
use umt_core::train::{bt_prepare, lm_loss_from, lm_prepare, rl_prepare};

fn model() -> Model<f32> {
    let dims = ModelDims { d_model: 16, n_heads: 2, n_layers: 1, d_ff: 32, max_len: 16 };
    Model::new(16, dims, &mut ChaCha8Rng::seed_from_u64(21)).unwrap()
}

fn corpora() -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
    let src = vec![vec![6, 7, 8, 9], vec![10, 11, 12], vec![13, 14]];
    let tgt = vec![vec![8, 6, 10], vec![15, 14, 13, 12], vec![9, 9, 9]];
    (src, tgt)
}

#[test]
fn preparing_batches_leaves_a_live_tape_untouched() {
    let m = model();
    let (src, tgt) = corpora();
    let spec = NoiseSpec::new(0.1, 0.1, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let mut tape = Tape::new();
    let tm = m.bind(&mut tape);
    let lm_batch = lm_prepare(&src, &tgt, &spec, &mut rng);
    let _lm = lm_loss_from(&mut tape, &tm, &lm_batch).unwrap();
    let nodes_before = tape.len();

    let with_tape_bt = bt_prepare(&m, &src, &tgt).unwrap();
    let with_tape_rl = rl_prepare(&m, &src, 0.35).unwrap();
    assert_eq!(tape.len(), nodes_before);

    let without_tape_bt = bt_prepare(&m, &src, &tgt).unwrap();
    let without_tape_rl = rl_prepare(&m, &src, 0.35).unwrap();
    assert_eq!(with_tape_bt, without_tape_bt);
    assert_eq!(with_tape_rl, without_tape_rl);
}

#[test]
fn gradients_are_bitwise_equal_with_and_without_interleaved_generation() {
    let (src, tgt) = corpora();
    let spec = NoiseSpec::new(0.1, 0.1, 1).unwrap();

    let run = |generate_mid_graph: bool| {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let lm_batch = lm_prepare(&src, &tgt, &spec, &mut rng);
        let mut tape = Tape::new();
        let tm = m.bind(&mut tape);
        let lm = lm_loss_from(&mut tape, &tm, &lm_batch).unwrap();
        if generate_mid_graph {
            bt_prepare(&m, &src, &tgt).unwrap();
            rl_prepare(&m, &src, 0.35).unwrap();
        }
        let vars = tm.param_vars().to_vec();
        let mut grads = tape.backward(lm).unwrap();
        vars.iter()
            .map(|&v| grads.take(v).expect("every parameter gets a gradient"))
            .collect::<Vec<_>>()
    };

    let quiet = run(false);
    let interleaved = run(true);
    assert_eq!(quiet.len(), interleaved.len());
    for (a, b) in quiet.iter().zip(&interleaved) {
        assert_eq!(a, b);
    }
}
