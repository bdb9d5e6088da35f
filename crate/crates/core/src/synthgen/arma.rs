//! ARMA(1,1) sampling with unit Gaussian innovations, covering the AR(1),
//! MA(1) and mixed processes in the regime table.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Draws `length` samples of `x_t = phi*x_{t-1} + eps_t + theta*eps_{t-1}`
/// with `eps_t ~ N(0,1)`, discarding the first `burn_in` samples so the
/// returned stretch approximates the stationary distribution.
pub fn arma_sample<R: Rng>(
    phi: f64,
    theta: f64,
    length: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    arma_sample_impl(phi, theta, length, burn_in, length, rng)
}

/// [`arma_sample`] with every innovation from sample index `known_len`
/// onward replaced by zero. The draws are still consumed, so with the same
/// generator state the first `known_len` samples match `arma_sample` bit
/// for bit, and the remainder is the conditional expectation of each later
/// sample given that realized prefix.
pub fn arma_sample_conditional_mean<R: Rng>(
    phi: f64,
    theta: f64,
    length: usize,
    burn_in: usize,
    known_len: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    arma_sample_impl(phi, theta, length, burn_in, known_len, rng)
}

fn arma_sample_impl<R: Rng>(
    phi: f64,
    theta: f64,
    length: usize,
    burn_in: usize,
    known_len: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if phi.abs() >= 1.0 {
        return Err(Error::contract(format!(
            "AR coefficient {phi} outside the stationary region |phi| < 1"
        )));
    }
    let mut out = Vec::with_capacity(length);
    let mut x_prev = 0.0f64;
    let mut eps_prev = 0.0f64;
    for i in 0..burn_in + length {
        let drawn: f64 = StandardNormal.sample(rng);
        let eps = if i < burn_in + known_len { drawn } else { 0.0 };
        let x = phi * x_prev + eps + theta * eps_prev;
        if i >= burn_in {
            out.push(x);
        }
        x_prev = x;
        eps_prev = eps;
    }
    Ok(out)
}
