//! Sequence corruption for denoising language modeling.
//!
//! Three stages in a fixed order, each drawing one uniform value per token
//! via `rng.gen::<f64>()`:
//!
//! 1. drop: token removed when its draw < p_drop
//! 2. blank: surviving token replaced by BLANK when its draw < p_blank
//! 3. shuffle: each surviving position i gets key i + k * draw; a stable
//!    sort by key moves no token more than k positions

use rand::Rng;

use crate::corpus::TokenSeq;
use crate::error::{Error, Result};
use crate::vocab::BLANK;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub p_drop: f64,
    pub p_blank: f64,
    pub swap_window: usize,
}

impl NoiseSpec {
    pub fn new(p_drop: f64, p_blank: f64, swap_window: usize) -> Result<Self> {
        for (name, p) in [("p_drop", p_drop), ("p_blank", p_blank)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidInput {
                    op: "noise",
                    msg: format!("{name} = {p} outside [0, 1]"),
                });
            }
        }
        Ok(Self { p_drop, p_blank, swap_window })
    }
}

/// The output may be empty (e.g. p_drop = 1); callers decide how to handle
/// that.
pub fn add_noise(seq: &TokenSeq, spec: &NoiseSpec, rng: &mut impl Rng) -> TokenSeq {
    let kept: Vec<u32> = seq
        .ids
        .iter()
        .copied()
        .filter(|_| rng.gen::<f64>() >= spec.p_drop)
        .collect();

    let blanked: Vec<u32> = kept
        .into_iter()
        .map(|id| if rng.gen::<f64>() < spec.p_blank { BLANK } else { id })
        .collect();

    let mut keyed: Vec<(f64, u32)> = blanked
        .into_iter()
        .enumerate()
        .map(|(i, id)| (i as f64 + spec.swap_window as f64 * rng.gen::<f64>(), id))
        .collect();
    keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite keys"));

    TokenSeq { ids: keyed.into_iter().map(|(_, id)| id).collect(), lang: seq.lang }
}
