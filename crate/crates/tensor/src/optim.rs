//! Adam with bias correction.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 3e-4, beta1: 0.9, beta2: 0.98, eps: 1e-9 }
    }
}

struct Slot<E> {
    m: Tensor<E>,
    v: Tensor<E>,
}

/// Optimizer state is keyed by parameter position, so `step` must always be
/// called with the same parameters in the same order.
pub struct Adam<E> {
    cfg: AdamConfig,
    t: u64,
    slots: Vec<Slot<E>>,
}

impl<E: Element> Adam<E> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, t: 0, slots: Vec::new() }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    /// Apply one update. `grads[i]` is the gradient for `params[i]`; a `None`
    /// entry is an error because it means the parameter fell off the graph.
    pub fn step(
        &mut self,
        params: &mut [(&str, &mut Tensor<E>)],
        grads: &[Option<&Tensor<E>>],
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::InvalidArgument {
                op: "adam",
                msg: format!("{} params but {} grads", params.len(), grads.len()),
            });
        }
        self.t += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        let lr = E::from_f64(self.cfg.lr);
        let b1 = E::from_f64(self.cfg.beta1);
        let b2 = E::from_f64(self.cfg.beta2);
        let one_m_b1 = E::from_f64(1.0 - self.cfg.beta1);
        let one_m_b2 = E::from_f64(1.0 - self.cfg.beta2);
        let inv_bc1 = E::from_f64(1.0 / bc1);
        let inv_bc2 = E::from_f64(1.0 / bc2);
        let eps = E::from_f64(self.cfg.eps);

        for (i, ((name, p), g)) in params.iter_mut().zip(grads).enumerate() {
            let g = g.ok_or_else(|| Error::MissingGrad { name: name.to_string() })?;
            if g.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if self.slots.len() == i {
                self.slots.push(Slot {
                    m: Tensor::zeros(p.shape().to_vec()),
                    v: Tensor::zeros(p.shape().to_vec()),
                });
            }
            let slot = &mut self.slots[i];
            if slot.m.shape() != p.shape() {
                return Err(Error::InvalidArgument {
                    op: "adam",
                    msg: format!("parameter {name} changed shape between steps"),
                });
            }
            for (((w, &gv), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(slot.m.data_mut())
                .zip(slot.v.data_mut())
            {
                *m = b1 * *m + one_m_b1 * gv;
                *v = b2 * *v + one_m_b2 * gv * gv;
                let m_hat = *m * inv_bc1;
                let v_hat = *v * inv_bc2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_matches_hand_computation() {
        // m = 0.1*0.5, v = 0.02*0.25; after bias correction m_hat = 0.5,
        // v_hat = 0.25, so the update is lr * 0.5 / 0.5 = lr.
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut adam = Adam::<f64>::new(cfg);
        let mut w = Tensor::scalar(1.0);
        let g = Tensor::scalar(0.5);
        adam.step(&mut [("w", &mut w)], &[Some(&g)]).unwrap();
        assert!((w.item() - 0.9).abs() < 1e-9, "{}", w.item());
    }

    #[test]
    fn zero_grad_leaves_param_untouched() {
        let mut adam = Adam::<f32>::new(AdamConfig::default());
        let mut w = Tensor::from_fn(vec![3], |i| i as f32 + 0.25);
        let before = w.clone();
        let g = Tensor::zeros(vec![3]);
        for _ in 0..10 {
            adam.step(&mut [("w", &mut w)], &[Some(&g)]).unwrap();
        }
        assert_eq!(w, before);
    }

    #[test]
    fn missing_grad_names_param() {
        let mut adam = Adam::<f32>::new(AdamConfig::default());
        let mut w = Tensor::scalar(1.0);
        let err = adam.step(&mut [("enc.w_q", &mut w)], &[None]).unwrap_err();
        assert!(err.to_string().contains("enc.w_q"), "{err}");
    }

    #[test]
    fn converges_on_quadratic_bowl() {
        let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
        let mut adam = Adam::<f64>::new(cfg);
        let mut w = Tensor::from_fn(vec![4], |i| [0.8, -0.6, 0.3, -1.1][i]);
        for _ in 0..2000 {
            let g = w.clone();
            adam.step(&mut [("w", &mut w)], &[Some(&g)]).unwrap();
        }
        for &x in w.data() {
            assert!(x.abs() < 1e-3, "{x}");
        }
    }
}
