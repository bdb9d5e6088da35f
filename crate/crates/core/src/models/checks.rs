//! Finite-difference audits of every layer type in isolation and of the
//! full training objectives, backing the `gradcheck` command.
//!
//! Each audit builds a small double-precision problem, runs the tape to get
//! analytic gradients, and compares them against central differences via
//! [`grad_check_sampled`]. The layer audits make the *input* a parameter as
//! well, so both the weight and the data paths of each backward rule are
//! exercised. Layer objectives are quadratic in their parameters (ReLU is
//! piecewise so, with inputs kept away from the kink), so their tolerance
//! can sit at roundoff level; the composites go through four ReLU stages
//! and get the looser documented bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::models::config::{
    HeadKind, LinearInit, ModelConfig, PredictorKind, TrainMode,
};
use crate::models::net::{self, lift_activation_margins, Model};
use crate::numerics::gradcheck::grad_check_sampled;
use crate::numerics::params::ModelParams;
use crate::numerics::tape::Tape;
use crate::numerics::tensor::Tensor;

/// Tolerance for single layers, whose objectives are exactly quadratic.
pub const LAYER_TOLERANCE: f64 = 1e-6;

/// Tolerance for the full JEPA and autoencoder objectives.
pub const COMPOSITE_TOLERANCE: f64 = 1e-4;

/// One audit's outcome: the worst relative error over sampled coordinates
/// and the bound it is held to.
#[derive(Debug, Clone)]
pub struct GradAudit {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradAudit {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// Runs the per-layer audits followed by the composite ones.
pub fn run_all(seed: u64) -> Result<Vec<GradAudit>> {
    let mut audits = layer_audits(seed)?;
    audits.extend(composite_audits(seed)?);
    Ok(audits)
}

/// Audits each differentiable operation in isolation: affine, conv1d,
/// conv_transpose1d, relu, and the mean-squared-error reduction.
pub fn layer_audits(seed: u64) -> Result<Vec<GradAudit>> {
    Ok(vec![
        affine_audit(seed)?,
        conv1d_audit(seed)?,
        conv_transpose1d_audit(seed)?,
        relu_audit(seed)?,
        mse_audit(seed)?,
    ])
}

/// Audits the two end-to-end objectives on a tiny model: the prediction
/// loss with its constant EMA branch, and the reconstruction loss through
/// the mirrored decoder.
pub fn composite_audits(seed: u64) -> Result<Vec<GradAudit>> {
    Ok(vec![jepa_audit(seed)?, ae_audit(seed)?])
}

fn uniform(rng: &mut impl Rng, shape: Vec<usize>) -> Tensor<f64> {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).expect("shape matches generated length")
}

fn audit<F>(
    name: &'static str,
    params: &mut ModelParams<f64>,
    objective: F,
    h: f64,
    tolerance: f64,
) -> Result<GradAudit>
where
    F: FnMut(&mut ModelParams<f64>) -> Result<f64>,
{
    let report = grad_check_sampled(objective, params, h, 32, 0)?;
    Ok(GradAudit { name, max_rel_err: report.max_rel_err, tolerance })
}

fn affine_audit(seed: u64) -> Result<GradAudit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = uniform(&mut rng, vec![4, 3]);
    let mut params = ModelParams::new();
    params.insert("x", uniform(&mut rng, vec![4, 5]))?;
    params.insert("weight", uniform(&mut rng, vec![3, 5]))?;
    params.insert("bias", uniform(&mut rng, vec![3]))?;

    let objective = move |p: &mut ModelParams<f64>| {
        let mut tape = Tape::new();
        let x = tape.leaf(p.require("x")?.clone());
        let w = tape.leaf(p.require("weight")?.clone());
        let b = tape.leaf(p.require("bias")?.clone());
        let y = tape.affine(x, w, Some(b))?;
        let t = tape.constant(target.clone());
        let loss = tape.mse(y, t)?;
        tape.backward(loss)?;
        for (name, var) in [("x", x), ("weight", w), ("bias", b)] {
            p.require_mut(name)?.accumulate_grad(tape.grad(var).unwrap())?;
        }
        tape.value(loss).scalar_value()
    };
    audit("affine", &mut params, objective, 1e-4, LAYER_TOLERANCE)
}

fn conv1d_audit(seed: u64) -> Result<GradAudit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // out_len = (16 + 2*2 - 5)/2 + 1 = 8.
    let target = uniform(&mut rng, vec![2, 4, 8]);
    let mut params = ModelParams::new();
    params.insert("x", uniform(&mut rng, vec![2, 3, 16]))?;
    params.insert("weight", uniform(&mut rng, vec![4, 3, 5]))?;
    params.insert("bias", uniform(&mut rng, vec![4]))?;

    let objective = move |p: &mut ModelParams<f64>| {
        let mut tape = Tape::new();
        let x = tape.leaf(p.require("x")?.clone());
        let w = tape.leaf(p.require("weight")?.clone());
        let b = tape.leaf(p.require("bias")?.clone());
        let y = tape.conv1d(x, w, Some(b), 2, 2)?;
        let t = tape.constant(target.clone());
        let loss = tape.mse(y, t)?;
        tape.backward(loss)?;
        for (name, var) in [("x", x), ("weight", w), ("bias", b)] {
            p.require_mut(name)?.accumulate_grad(tape.grad(var).unwrap())?;
        }
        tape.value(loss).scalar_value()
    };
    audit("conv1d", &mut params, objective, 1e-4, LAYER_TOLERANCE)
}

fn conv_transpose1d_audit(seed: u64) -> Result<GradAudit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // out_len = (8-1)*2 - 2*2 + 5 + 1 = 16; weight is [in_ch, out_ch, k].
    let target = uniform(&mut rng, vec![2, 3, 16]);
    let mut params = ModelParams::new();
    params.insert("x", uniform(&mut rng, vec![2, 4, 8]))?;
    params.insert("weight", uniform(&mut rng, vec![4, 3, 5]))?;
    params.insert("bias", uniform(&mut rng, vec![3]))?;

    let objective = move |p: &mut ModelParams<f64>| {
        let mut tape = Tape::new();
        let x = tape.leaf(p.require("x")?.clone());
        let w = tape.leaf(p.require("weight")?.clone());
        let b = tape.leaf(p.require("bias")?.clone());
        let y = tape.conv_transpose1d(x, w, Some(b), 2, 2, 1)?;
        let t = tape.constant(target.clone());
        let loss = tape.mse(y, t)?;
        tape.backward(loss)?;
        for (name, var) in [("x", x), ("weight", w), ("bias", b)] {
            p.require_mut(name)?.accumulate_grad(tape.grad(var).unwrap())?;
        }
        tape.value(loss).scalar_value()
    };
    audit("conv_transpose1d", &mut params, objective, 1e-4, LAYER_TOLERANCE)
}

fn relu_audit(seed: u64) -> Result<GradAudit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = uniform(&mut rng, vec![6, 8]);
    // Keep every input at least 0.25 from zero so no finite-difference
    // probe can cross the kink.
    let data: Vec<f64> = (0..48)
        .map(|_| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * rng.random_range(0.25..1.0)
        })
        .collect();
    let mut params = ModelParams::new();
    params.insert("x", Tensor::new(vec![6, 8], data)?)?;

    let objective = move |p: &mut ModelParams<f64>| {
        let mut tape = Tape::new();
        let x = tape.leaf(p.require("x")?.clone());
        let y = tape.relu(x);
        let t = tape.constant(target.clone());
        let loss = tape.mse(y, t)?;
        tape.backward(loss)?;
        p.require_mut("x")?.accumulate_grad(tape.grad(x).unwrap())?;
        tape.value(loss).scalar_value()
    };
    audit("relu", &mut params, objective, 1e-4, LAYER_TOLERANCE)
}

fn mse_audit(seed: u64) -> Result<GradAudit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = uniform(&mut rng, vec![5, 7]);
    let mut params = ModelParams::new();
    params.insert("pred", uniform(&mut rng, vec![5, 7]))?;

    let objective = move |p: &mut ModelParams<f64>| {
        let mut tape = Tape::new();
        let pred = tape.leaf(p.require("pred")?.clone());
        let t = tape.constant(target.clone());
        let loss = tape.mse(pred, t)?;
        tape.backward(loss)?;
        p.require_mut("pred")?.accumulate_grad(tape.grad(pred).unwrap())?;
        tape.value(loss).scalar_value()
    };
    audit("mse", &mut params, objective, 1e-4, LAYER_TOLERANCE)
}

/// Smallest legal architecture: one conv stack step per stage on length-16
/// windows, four latent units.
fn tiny_config() -> ModelConfig {
    ModelConfig {
        input_len: 16,
        latent_dim: 4,
        head: HeadKind::TwoLayer,
        predictor: PredictorKind::Linear { init: LinearInit::Identity },
    }
}

fn jepa_audit(seed: u64) -> Result<GradAudit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = tiny_config();
    let model = Model::init(&config, TrainMode::Jepa, &mut rng)?;
    let mut model = model.cast::<f64>();
    lift_activation_margins(&mut model.online);
    let ema = model.ema.take().expect("jepa mode carries an ema copy");
    let context = uniform(&mut rng, vec![3, 1, 16]);
    let target = uniform(&mut rng, vec![3, 1, 16]);

    let objective = move |p: &mut ModelParams<f64>| {
        net::jepa_loss_and_grads(p, &ema, &config, &context, &target)
    };
    // The lifted margins keep pre-activations ~0.5 away from the ReLU
    // kinks, so a 1e-3 step stays on the smooth path while remaining
    // large enough to beat cancellation in the difference quotient.
    audit("jepa_composite", &mut model.online, objective, 1e-3, COMPOSITE_TOLERANCE)
}

fn ae_audit(seed: u64) -> Result<GradAudit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = tiny_config();
    let model = Model::init(&config, TrainMode::Ae, &mut rng)?;
    let mut model = model.cast::<f64>();
    lift_activation_margins(&mut model.online);
    let context = uniform(&mut rng, vec![3, 1, 16]);

    let objective = move |p: &mut ModelParams<f64>| {
        net::ae_loss_and_grads(p, &config, &context)
    };
    audit("ae_composite", &mut model.online, objective, 1e-3, COMPOSITE_TOLERANCE)
}
