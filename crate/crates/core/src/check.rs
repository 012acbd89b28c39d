//! Finite-difference verification of loss gradients.
//!
//! The loss builders in `train` are deterministic functions of the model
//! parameters once their prepared batches are frozen, so their gradients can
//! be checked coordinate by coordinate against a central difference in f64.
//! These helpers run that comparison for externally chosen coordinates; the
//! callers decide how many parameter draws and coordinates to sample.

use rand::Rng;

use umt_tensor::{Tape, Var};

use crate::error::{Error, Result};
use crate::model::{Model, TracedModel};

/// A parameter coordinate: the parameter's name and a flat element index.
pub type Coord = (String, usize);

/// Uniformly sample `n` parameter coordinates across the whole model.
pub fn sample_coords(model: &Model<f64>, n: usize, rng: &mut impl Rng) -> Vec<Coord> {
    let names = model.param_names().to_vec();
    (0..n)
        .map(|_| {
            let name = names[rng.gen_range(0..names.len())].clone();
            let numel = model.param(&name).unwrap().numel();
            (name, rng.gen_range(0..numel))
        })
        .collect()
}

/// Largest relative error between the tape gradient and a central finite
/// difference with step `h`, over the given coordinates. The relative error
/// uses max(|analytic|, |numeric|, 1) as the denominator.
pub fn max_fd_rel_err<B>(
    model: &mut Model<f64>,
    batch: &B,
    loss: &dyn Fn(&mut Tape<f64>, &TracedModel<'_, f64>, &B) -> Result<Var>,
    coords: &[Coord],
    h: f64,
) -> Result<f64> {
    let mut analytic = Vec::with_capacity(coords.len());
    {
        let mut tape = Tape::new();
        let tm = model.bind(&mut tape);
        let l = loss(&mut tape, &tm, batch)?;
        let vars: Vec<Option<Var>> = coords.iter().map(|(name, _)| tm.var_of(name)).collect();
        let grads = tape.backward(l)?;
        for ((name, idx), var) in coords.iter().zip(vars) {
            let var = var.ok_or_else(|| Error::InvalidInput {
                op: "fd_check",
                msg: format!("unknown parameter {name}"),
            })?;
            analytic.push(grads.get(var).map_or(0.0, |g| g.data()[*idx]));
        }
    }

    let mut worst = 0.0f64;
    for ((name, idx), a) in coords.iter().zip(analytic) {
        let original = model.param(name).unwrap().data()[*idx];
        let mut eval_at = |x: f64| -> Result<f64> {
            model.param_mut(name).unwrap().data_mut()[*idx] = x;
            let mut tape = Tape::new();
            let tm = model.bind(&mut tape);
            let l = loss(&mut tape, &tm, batch)?;
            Ok(tape.value(l).item())
        };
        let plus = eval_at(original + h)?;
        let minus = eval_at(original - h)?;
        model.param_mut(name).unwrap().data_mut()[*idx] = original;
        let numeric = (plus - minus) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;
    use crate::noise::NoiseSpec;
    use crate::train::{lm_loss_from, lm_prepare};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lm_gradient_matches_finite_differences() {
        let dims = ModelDims { d_model: 8, n_heads: 2, n_layers: 1, d_ff: 16, max_len: 12 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut model: Model<f64> = Model::new(12, dims, &mut rng).unwrap();
        let src = vec![vec![6, 7, 8], vec![9, 10]];
        let tgt = vec![vec![11, 6], vec![7, 8, 9]];
        let spec = NoiseSpec::new(0.2, 0.2, 1).unwrap();
        let batch = lm_prepare(&src, &tgt, &spec, &mut rng);
        let coords = sample_coords(&model, 6, &mut rng);
        let err = max_fd_rel_err(
            &mut model,
            &batch,
            &|tape, tm, b| lm_loss_from(tape, tm, b),
            &coords,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn unknown_coordinate_is_reported() {
        let dims = ModelDims { d_model: 8, n_heads: 2, n_layers: 1, d_ff: 16, max_len: 12 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut model: Model<f64> = Model::new(12, dims, &mut rng).unwrap();
        let src = vec![vec![6, 7]];
        let spec = NoiseSpec::new(0.0, 0.0, 0).unwrap();
        let batch = lm_prepare(&src, &src, &spec, &mut rng);
        let out = max_fd_rel_err(
            &mut model,
            &batch,
            &|tape, tm, b| lm_loss_from(tape, tm, b),
            &[("nope.w".into(), 0)],
            1e-5,
        );
        assert!(out.is_err());
    }
}
