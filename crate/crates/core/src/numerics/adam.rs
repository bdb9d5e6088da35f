//! Bias-corrected Adam.

use crate::error::{Error, Result};
use crate::numerics::params::ModelParams;
use crate::numerics::real::Real;

/// Per-parameter first/second moment buffers plus hyperparameters.
///
/// The moment buffers are allocated on the first step and must match the
/// parameter set on every later step.
#[derive(Clone, Debug)]
pub struct AdamState<E> {
    lr: E,
    beta1: E,
    beta2: E,
    eps: E,
    t: u64,
    moments: Vec<(String, Vec<E>, Vec<E>)>,
}

impl<E: Real> AdamState<E> {
    pub fn new(lr: E, beta1: E, beta2: E, eps: E) -> Self {
        AdamState { lr, beta1, beta2, eps, t: 0, moments: Vec::new() }
    }

    /// lr 1e-3, beta1 0.9, beta2 0.999, eps 1e-8.
    pub fn with_defaults(lr: E) -> Self {
        AdamState::new(lr, E::from_f64(0.9), E::from_f64(0.999), E::from_f64(1e-8))
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One in-place Adam update over every parameter in `params`.
///
/// Every parameter must carry a gradient; gradients are cleared afterward.
pub fn adam_step<E: Real>(state: &mut AdamState<E>, params: &mut ModelParams<E>) -> Result<()> {
    if state.t == 0 {
        state.moments = params
            .iter()
            .map(|(name, t)| (name.to_string(), vec![E::zero(); t.len()], vec![E::zero(); t.len()]))
            .collect();
    } else if state.moments.len() != params.len() {
        return Err(Error::contract(format!(
            "optimizer tracks {} parameters but was given {}",
            state.moments.len(),
            params.len()
        )));
    }
    state.t += 1;

    let one = E::one();
    let bc1 = one - state.beta1.powi(state.t as i32);
    let bc2 = one - state.beta2.powi(state.t as i32);

    for ((name, m, v), (pname, tensor)) in state.moments.iter_mut().zip(params.iter_mut()) {
        if name != pname {
            return Err(Error::contract(format!(
                "optimizer state for {name:?} does not match parameter {pname:?}"
            )));
        }
        let grad = tensor
            .grad()
            .ok_or_else(|| Error::contract(format!("parameter {name:?} has no gradient")))?
            .to_vec();
        let data = tensor.data_mut();
        for i in 0..data.len() {
            let g = grad[i];
            m[i] = state.beta1 * m[i] + (one - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (one - state.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] = data[i] - state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
        tensor.zero_grad();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;

    fn one_param(value: f64) -> ModelParams<f64> {
        let mut p = ModelParams::new();
        p.insert("p", Tensor::new(vec![1], vec![value]).unwrap()).unwrap();
        p
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_almost_lr() {
        // m_hat = v_hat = 1 at t = 1, so the step is -lr / (1 + eps).
        let mut state = AdamState::with_defaults(1e-3);
        let mut params = one_param(0.0);
        params.get_mut("p").unwrap().accumulate_grad(&[1.0]).unwrap();
        adam_step(&mut state, &mut params).unwrap();
        let got = params.get("p").unwrap().data()[0];
        let want = -1e-3 / (1.0 + 1e-8);
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        // Gradient cleared after the step.
        assert!(params.get("p").unwrap().grad().is_none());
    }

    #[test]
    fn constant_gradient_takes_bias_corrected_unit_steps() {
        // With g = 1 forever, bias correction makes m_hat = v_hat = 1 at
        // every t, so each step is lr / (1 + eps) up to roundoff in the
        // two evaluation orders of 1 - beta^t.
        let mut state = AdamState::with_defaults(1e-3);
        let mut params = one_param(0.0);
        let want = 1e-3 / (1.0 + 1e-8);
        let mut last = 0.0;
        for _ in 0..5 {
            params.get_mut("p").unwrap().accumulate_grad(&[1.0]).unwrap();
            adam_step(&mut state, &mut params).unwrap();
            let now = params.get("p").unwrap().data()[0];
            let step = (now - last).abs();
            assert!((step - want).abs() < 1e-12, "step {step} far from {want}");
            last = now;
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut state = AdamState::with_defaults(1e-3);
        let mut params = one_param(0.75);
        params.get_mut("p").unwrap().accumulate_grad(&[0.0]).unwrap();
        adam_step(&mut state, &mut params).unwrap();
        assert_eq!(params.get("p").unwrap().data()[0], 0.75);
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut state = AdamState::with_defaults(1e-3);
        let mut params = one_param(0.0);
        assert!(matches!(adam_step(&mut state, &mut params), Err(Error::Contract(_))));
    }

    #[test]
    fn step_counter_increases_by_one_per_step() {
        let mut state = AdamState::with_defaults(1e-3);
        let mut params = one_param(0.0);
        for want in 1..=3 {
            params.get_mut("p").unwrap().accumulate_grad(&[0.5]).unwrap();
            adam_step(&mut state, &mut params).unwrap();
            assert_eq!(state.step_count(), want);
        }
    }
}
