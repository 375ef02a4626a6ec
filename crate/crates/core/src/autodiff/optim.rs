use std::collections::BTreeMap;

use super::tape::Params;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Bias-corrected Adam with per-parameter moment estimates keyed by name.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: BETA1, beta2: BETA2, eps: EPSILON, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor> {
        self.m.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor> {
        self.v.get(name)
    }

    /// Applies one update to every parameter named in `grads`.
    pub fn step(&mut self, params: &mut Params, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| Error::Shape(format!("gradient for unknown parameter {name}")))?;
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "{name}: parameter {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            if let Some(m) = self.m.get(name) {
                if m.shape() != p.shape() {
                    return Err(Error::Shape(format!("{name}: optimizer state {:?}", m.shape())));
                }
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = params.get_mut(name).expect("validated above");
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Global L2 norm over a gradient set.
pub fn global_norm(grads: &BTreeMap<String, Tensor>) -> f64 {
    grads.values().map(Tensor::sum_squares).sum::<f64>().sqrt()
}

/// Rescales all gradients by `max_norm / norm` when the global norm exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = global_norm(grads);
    if norm > max_norm {
        let k = max_norm / norm;
        grads.values_mut().for_each(|g| g.scale_in_place(k));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(name: &str, t: Tensor) -> BTreeMap<String, Tensor> {
        BTreeMap::from([(name.to_owned(), t)])
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut params = Params::new();
        params.insert("w", Tensor::filled(2, 3, 0.5));
        let mut adam = Adam::new(1e-3);
        adam.step(&mut params, &single("w", Tensor::filled(2, 3, 1.0))).unwrap();
        let expected = 0.5 - 1e-3 / (1.0 + 1e-8);
        for &v in params.get("w").unwrap().data() {
            assert!((v - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut params = Params::new();
        params.insert("w", Tensor::filled(1, 4, 0.25));
        let before = params.clone();
        let mut adam = Adam::new(1e-3);
        adam.step(&mut params, &single("w", Tensor::zeros(1, 4))).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn two_steps_match_hand_recurrence() {
        // g = 0.5 constant, lr = 0.1, p0 = 1.
        // t=1: m=0.05, v=0.00025, m̂=0.5, v̂=0.25 → Δ = 0.1·0.5/(0.5+1e-8)
        // t=2: m=0.095, v=0.00049975, m̂=0.5, v̂=0.25 → same Δ
        let mut params = Params::new();
        params.insert("p", Tensor::scalar(1.0));
        let mut adam = Adam::new(0.1);
        let g = single("p", Tensor::scalar(0.5));
        adam.step(&mut params, &g).unwrap();
        assert!((adam.first_moment("p").unwrap().item() - 0.05).abs() < 1e-15);
        assert!((adam.second_moment("p").unwrap().item() - 0.00025).abs() < 1e-15);
        let delta = 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((params.get("p").unwrap().item() - (1.0 - delta)).abs() < 1e-14);
        adam.step(&mut params, &g).unwrap();
        assert!((adam.first_moment("p").unwrap().item() - 0.095).abs() < 1e-15);
        assert!((adam.second_moment("p").unwrap().item() - 0.00049975).abs() < 1e-15);
        assert!((params.get("p").unwrap().item() - (1.0 - 2.0 * delta)).abs() < 1e-14);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = Params::new();
        params.insert("w", Tensor::zeros(2, 2));
        let mut adam = Adam::new(1e-3);
        assert!(adam.step(&mut params, &single("w", Tensor::zeros(1, 4))).is_err());
        assert!(adam.step(&mut params, &single("missing", Tensor::zeros(2, 2))).is_err());
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn clipping_scales_or_leaves_alone() {
        // norm 10 → halved at max 5
        let mut g = single("a", Tensor::row(vec![6.0, 8.0]));
        let n = clip_gradients(&mut g, 5.0);
        assert_eq!(n, 10.0);
        assert_eq!(g["a"].data(), &[3.0, 4.0]);
        // norm 3 → unchanged
        let mut g = single("a", Tensor::row(vec![3.0, 0.0]));
        clip_gradients(&mut g, 5.0);
        assert_eq!(g["a"].data(), &[3.0, 0.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn clipped_norm_is_bounded(
            a in prop::collection::vec(-100.0f64..100.0, 1..20),
            b in prop::collection::vec(-100.0f64..100.0, 1..20),
            max_norm in 0.01f64..50.0,
        ) {
            let mut grads = BTreeMap::new();
            grads.insert("a".to_owned(), Tensor::row(a));
            grads.insert("b".to_owned(), Tensor::row(b));
            let before = global_norm(&grads);
            clip_gradients(&mut grads, max_norm);
            let after = global_norm(&grads);
            prop_assert!(after <= max_norm + 1e-12);
            prop_assert!(after <= before + 1e-12);
        }
    }
}
