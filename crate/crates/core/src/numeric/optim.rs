use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam hyper-parameters and per-parameter moment accumulators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    #[serde(skip)]
    pub(crate) first: Vec<Tensor>,
    #[serde(skip)]
    pub(crate) second: Vec<Tensor>,
}

impl OptimState {
    /// Zeroed moments shaped like `params`, with the usual defaults
    /// (beta1 = 0.9, beta2 = 0.999, eps = 1e-8).
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros = |p: &ParamStore| p.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        OptimState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros(params),
            second: zeros(params),
        }
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.second
    }

    /// Scalars only; moment vectors left empty.
    pub(crate) fn without_moments(&self) -> Self {
        OptimState {
            first: Vec::new(),
            second: Vec::new(),
            ..*self
        }
    }

    pub(crate) fn set_moments(&mut self, first: Vec<Tensor>, second: Vec<Tensor>) {
        self.first = first;
        self.second = second;
    }
}

/// One bias-corrected Adam update. Parameters without a gradient are left
/// untouched, moments included. Nothing is modified if any gradient is
/// non-finite.
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, state: &mut OptimState) -> Result<()> {
    for (id, g) in grads.iter() {
        if id.0 >= params.len() {
            return Err(Error::UnknownParameter(format!("#{}", id.0)));
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(params.name(id).to_string()));
        }
        if g.shape() != params.get(id).shape() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "gradient {:?} for parameter `{}` {:?}",
                    g.shape(),
                    params.name(id),
                    params.get(id).shape()
                ),
            ));
        }
    }
    if state.first.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} moment slots for {} parameters", state.first.len(), params.len()),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    for (id, g) in grads.iter() {
        let m = state.first[id.0].data_mut();
        let v = state.second[id.0].data_mut();
        let p = params.get_mut(id).data_mut();
        for (((p, m), v), &g) in p.iter_mut().zip(m).zip(v).zip(g.data()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (ParamStore, Gradients) {
        let mut p = ParamStore::new();
        let id = p.insert("w", Tensor::row(vec![0.5, -1.0, 2.0]));
        let mut g = Gradients::default();
        g.set(id, Tensor::row(vec![0.3, -4.0, 1e-3]));
        (p, g)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut p, _) = setup();
        let before = p.clone();
        let mut g = Gradients::default();
        g.set(p.id("w").unwrap(), Tensor::zeros(&[1, 3]));
        let mut s = OptimState::new(&p, 1e-3);
        adam_step(&mut p, &g, &mut s).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let (mut p, g) = setup();
        let before = p.by_name("w").unwrap().clone();
        let mut s = OptimState::new(&p, 1e-3);
        adam_step(&mut p, &g, &mut s).unwrap();
        let after = p.by_name("w").unwrap();
        let grad = g.get(p.id("w").unwrap()).unwrap();
        for i in 0..3 {
            let delta = after.data()[i] - before.data()[i];
            let expect = -1e-3 * grad.data()[i].signum();
            // |g| / (|g| + 1e-8) differs from 1 by at most 1e-5 for |g| >= 1e-3.
            assert!((delta - expect).abs() < 1e-3 * 1e-5 + 1e-15, "{delta} vs {expect}");
        }
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        let run = || {
            let (mut p, g) = setup();
            let mut s = OptimState::new(&p, 1e-3);
            adam_step(&mut p, &g, &mut s).unwrap();
            adam_step(&mut p, &g, &mut s).unwrap();
            p
        };
        let (a, b) = (run(), run());
        let bits = |p: &ParamStore| -> Vec<u64> {
            p.by_name("w").unwrap().data().iter().map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let (mut p, _) = setup();
        let mut g = Gradients::default();
        g.set(p.id("w").unwrap(), Tensor::row(vec![0.0, f64::NAN, 0.0]));
        let mut s = OptimState::new(&p, 1e-3);
        let err = adam_step(&mut p, &g, &mut s).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "w"));
        assert_eq!(s.step, 0);
    }
}
