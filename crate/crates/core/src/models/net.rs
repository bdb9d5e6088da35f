//! Parameter initialization, forward passes and losses for the JEPA model and
//! the autoencoder baseline.
//!
//! Every forward exists in two forms that share the same layer kernels: a
//! plain form over bare tensors (evaluation, analysis, the EMA target branch)
//! and a taped form used when gradients are needed. The EMA branch of the
//! JEPA loss always runs in plain form and enters the tape as a constant,
//! which is what makes the stop-gradient structural rather than a masking
//! convention.

use rand::Rng;

use crate::error::{Error, Result};
use crate::models::config::{
    config_digest, param_inventory, HeadKind, InitRule, ModelConfig, PredictorKind, TrainMode,
    DECODER_DECONV, DECONV_OUTPUT_PADDING, ENCODER_CONV,
};
use crate::numerics::{ema_update, ops, ModelParams, Real, Tape, Tensor, Var};

/// Draws one parameter set in inventory order. Uniform entries consume one
/// draw per element in index order; identity entries consume none, so the
/// stream stays aligned across predictor-init choices.
pub fn init_params(
    config: &ModelConfig,
    mode: TrainMode,
    rng: &mut impl Rng,
) -> Result<ModelParams<f32>> {
    let mut params = ModelParams::new();
    for spec in param_inventory(config, mode)? {
        let len: usize = spec.shape.iter().product();
        let tensor = match spec.init {
            InitRule::Uniform { fan_in } => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let data: Vec<f32> =
                    (0..len).map(|_| rng.random_range(-bound..bound) as f32).collect();
                Tensor::new(spec.shape.clone(), data)?
            }
            InitRule::Identity => {
                let n = spec.shape[0];
                let mut data = vec![0.0f32; len];
                for i in 0..n {
                    data[i * n + i] = 1.0;
                }
                Tensor::new(spec.shape.clone(), data)?
            }
        };
        params.insert(spec.name, tensor)?;
    }
    Ok(params)
}

/// A full model: the trainable online parameters plus, in JEPA mode, the EMA
/// shadow of the encoder.
///
/// The EMA map reuses the online `encoder.*` names so the blending kernel can
/// match them positionally; the `ema.` prefix only appears in checkpoints.
#[derive(Clone, Debug)]
pub struct Model<E> {
    pub config: ModelConfig,
    pub mode: TrainMode,
    /// `encoder.*` plus `predictor.*` (JEPA) or `decoder.*` (autoencoder).
    pub online: ModelParams<E>,
    /// Shadow copy of `encoder.*`; present exactly in JEPA mode.
    pub ema: Option<ModelParams<E>>,
}

impl Model<f32> {
    pub fn init(config: &ModelConfig, mode: TrainMode, rng: &mut impl Rng) -> Result<Self> {
        let online = init_params(config, mode, rng)?;
        let ema = match mode {
            TrainMode::Jepa => Some(online.subset("encoder.")),
            TrainMode::Ae => None,
        };
        Ok(Model { config: config.clone(), mode, online, ema })
    }
}

impl<E: Real> Model<E> {
    /// Checks that the parameter sets are exactly the configured inventory:
    /// same names, same shapes, same order, EMA present iff JEPA mode.
    pub fn validate(&self) -> Result<()> {
        let specs = param_inventory(&self.config, self.mode)?;
        if self.online.len() != specs.len() {
            return Err(Error::contract(format!(
                "model has {} online parameters but the architecture lists {}",
                self.online.len(),
                specs.len()
            )));
        }
        for (spec, (name, tensor)) in specs.iter().zip(self.online.iter()) {
            if name != spec.name {
                return Err(Error::contract(format!(
                    "online parameter order differs from the inventory: {name:?} where {:?} \
                     was expected",
                    spec.name
                )));
            }
            if tensor.shape() != spec.shape.as_slice() {
                return Err(Error::contract(format!(
                    "parameter {name:?} has shape {:?}, expected {:?}",
                    tensor.shape(),
                    spec.shape
                )));
            }
        }
        match (self.mode, &self.ema) {
            (TrainMode::Jepa, Some(ema)) => {
                let online_names: Vec<&str> =
                    self.online.names().filter(|n| n.starts_with("encoder.")).collect();
                let ema_names: Vec<&str> = ema.names().collect();
                if online_names != ema_names {
                    return Err(Error::contract(format!(
                        "ema encoder names {ema_names:?} do not match online encoder names \
                         {online_names:?}"
                    )));
                }
                for (name, tensor) in ema.iter() {
                    let online = self.online.require(name)?;
                    if tensor.shape() != online.shape() {
                        return Err(Error::contract(format!(
                            "ema parameter {name:?} has shape {:?}, online has {:?}",
                            tensor.shape(),
                            online.shape()
                        )));
                    }
                }
            }
            (TrainMode::Jepa, None) => {
                return Err(Error::contract("jepa model is missing its ema encoder".to_string()));
            }
            (TrainMode::Ae, Some(_)) => {
                return Err(Error::contract(
                    "autoencoder model must not carry an ema encoder".to_string(),
                ));
            }
            (TrainMode::Ae, None) => {}
        }
        Ok(())
    }

    pub fn digest(&self) -> u64 {
        config_digest(&self.config, self.mode)
    }

    /// Converts between training precision and gradient-check precision.
    pub fn cast<T: Real>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            mode: self.mode,
            online: self.online.cast(),
            ema: self.ema.as_ref().map(|p| p.cast()),
        }
    }

    fn require_ema(&self) -> Result<&ModelParams<E>> {
        self.ema
            .as_ref()
            .ok_or_else(|| Error::contract("model has no ema encoder (autoencoder mode)".to_string()))
    }

    pub fn encode(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        encode(&self.online, &self.config, x)
    }

    pub fn encode_ema(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        encode(self.require_ema()?, &self.config, x)
    }

    pub fn predict(&self, z: &Tensor<E>) -> Result<Tensor<E>> {
        predict(&self.online, &self.config, z)
    }

    pub fn decode(&self, z: &Tensor<E>) -> Result<Tensor<E>> {
        decode(&self.online, &self.config, z)
    }

    pub fn jepa_loss_value(&self, context: &Tensor<E>, target: &Tensor<E>) -> Result<E> {
        jepa_loss_value(&self.online, self.require_ema()?, &self.config, context, target)
    }

    pub fn jepa_loss_and_grads(&mut self, context: &Tensor<E>, target: &Tensor<E>) -> Result<E> {
        let ema = self
            .ema
            .as_ref()
            .ok_or_else(|| Error::contract("model has no ema encoder (autoencoder mode)".to_string()))?;
        jepa_loss_and_grads(&mut self.online, ema, &self.config, context, target)
    }

    pub fn ae_loss_value(&self, context: &Tensor<E>) -> Result<E> {
        ae_loss_value(&self.online, &self.config, context)
    }

    pub fn ae_loss_and_grads(&mut self, context: &Tensor<E>) -> Result<E> {
        ae_loss_and_grads(&mut self.online, &self.config, context)
    }

    /// Moves the EMA encoder one step toward the online encoder:
    /// `ema <- alpha * ema + (1 - alpha) * online`.
    pub fn update_ema(&mut self, alpha: E) -> Result<()> {
        let online_encoder = self.online.subset("encoder.");
        let ema = self
            .ema
            .as_mut()
            .ok_or_else(|| Error::contract("model has no ema encoder (autoencoder mode)".to_string()))?;
        ema_update(ema, &online_encoder, alpha)
    }
}

fn check_window_batch<E: Real>(config: &ModelConfig, x: &Tensor<E>, what: &str) -> Result<()> {
    let s = x.shape();
    if s.len() != 3 || s[0] == 0 || s[1] != 1 || s[2] != config.input_len {
        return Err(Error::dim(format!(
            "{what} must have shape [batch, 1, {}], got {s:?}",
            config.input_len
        )));
    }
    Ok(())
}

fn check_latent_batch<E: Real>(config: &ModelConfig, z: &Tensor<E>) -> Result<()> {
    let s = z.shape();
    if s.len() != 2 || s[0] == 0 || s[1] != config.latent_dim {
        return Err(Error::dim(format!(
            "latent batch must have shape [batch, {}], got {s:?}",
            config.latent_dim
        )));
    }
    Ok(())
}

/// Window batch `[batch, 1, input_len]` -> latent batch `[batch, k]`.
pub fn encode<E: Real>(
    params: &ModelParams<E>,
    config: &ModelConfig,
    x: &Tensor<E>,
) -> Result<Tensor<E>> {
    check_window_batch(config, x, "encoder input")?;
    let mut h = x.clone();
    for (i, conv) in ENCODER_CONV.iter().enumerate() {
        let w = params.require(&format!("encoder.conv{}.weight", i + 1))?;
        let b = params.require(&format!("encoder.conv{}.bias", i + 1))?;
        h = ops::conv1d_forward(&h, w, Some(b), conv.stride, conv.padding)?;
        h = ops::relu_forward(&h);
    }
    let batch = h.shape()[0];
    let width = h.shape()[1] * h.shape()[2];
    let mut h = h.reshaped(vec![batch, width])?;
    h = ops::affine_forward(
        &h,
        params.require("encoder.head.fc1.weight")?,
        Some(params.require("encoder.head.fc1.bias")?),
    )?;
    if config.head == HeadKind::TwoLayer {
        h = ops::relu_forward(&h);
        h = ops::affine_forward(
            &h,
            params.require("encoder.head.fc2.weight")?,
            Some(params.require("encoder.head.fc2.bias")?),
        )?;
    }
    Ok(h)
}

/// Latent batch `[batch, k]` -> predicted latent batch `[batch, k]`.
pub fn predict<E: Real>(
    params: &ModelParams<E>,
    config: &ModelConfig,
    z: &Tensor<E>,
) -> Result<Tensor<E>> {
    check_latent_batch(config, z)?;
    match config.predictor {
        PredictorKind::Linear { .. } => {
            ops::affine_forward(z, params.require("predictor.linear.weight")?, None)
        }
        PredictorKind::Mlp => {
            let mut h = ops::affine_forward(
                z,
                params.require("predictor.mlp.fc1.weight")?,
                Some(params.require("predictor.mlp.fc1.bias")?),
            )?;
            h = ops::relu_forward(&h);
            h = ops::affine_forward(
                &h,
                params.require("predictor.mlp.fc2.weight")?,
                Some(params.require("predictor.mlp.fc2.bias")?),
            )?;
            h = ops::relu_forward(&h);
            ops::affine_forward(
                &h,
                params.require("predictor.mlp.fc3.weight")?,
                Some(params.require("predictor.mlp.fc3.bias")?),
            )
        }
    }
}

/// Latent batch `[batch, k]` -> reconstructed window batch
/// `[batch, 1, input_len]`. Head and deconv rows mirror the encoder; the
/// final row is linear so reconstructions are not clipped at zero.
pub fn decode<E: Real>(
    params: &ModelParams<E>,
    config: &ModelConfig,
    z: &Tensor<E>,
) -> Result<Tensor<E>> {
    check_latent_batch(config, z)?;
    let mut h = ops::affine_forward(
        z,
        params.require("decoder.head.fc1.weight")?,
        Some(params.require("decoder.head.fc1.bias")?),
    )?;
    if config.head == HeadKind::TwoLayer {
        h = ops::relu_forward(&h);
        h = ops::affine_forward(
            &h,
            params.require("decoder.head.fc2.weight")?,
            Some(params.require("decoder.head.fc2.bias")?),
        )?;
    }
    let batch = h.shape()[0];
    let mut h = h.reshaped(vec![batch, DECODER_DECONV[0].in_ch, config.conv_out_len()?])?;
    for (i, conv) in DECODER_DECONV.iter().enumerate() {
        let w = params.require(&format!("decoder.deconv{}.weight", i + 1))?;
        let b = params.require(&format!("decoder.deconv{}.bias", i + 1))?;
        h = ops::conv_transpose1d_forward(&h, w, Some(b), conv.stride, conv.padding, DECONV_OUTPUT_PADDING)?;
        if i + 1 < DECODER_DECONV.len() {
            h = ops::relu_forward(&h);
        }
    }
    Ok(h)
}

/// Parameters registered as tape leaves, so gradients computed on the tape
/// can be copied back to the owning collection by name.
struct Bound {
    vars: Vec<(String, Var)>,
}

impl Bound {
    fn bind<E: Real>(tape: &mut Tape<E>, params: &ModelParams<E>) -> Self {
        Bound {
            vars: params.iter().map(|(name, t)| (name.to_owned(), tape.leaf(t.clone()))).collect(),
        }
    }

    fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, v)| v)
            .ok_or_else(|| Error::contract(format!("parameter {name:?} is not bound on the tape")))
    }

    fn harvest<E: Real>(&self, tape: &Tape<E>, params: &mut ModelParams<E>) -> Result<()> {
        for (name, var) in &self.vars {
            let grad = tape
                .grad(*var)
                .ok_or_else(|| Error::contract(format!("backward left no gradient for {name:?}")))?;
            params.require_mut(name)?.accumulate_grad(grad)?;
        }
        Ok(())
    }
}

fn encode_on_tape<E: Real>(
    tape: &mut Tape<E>,
    bound: &Bound,
    config: &ModelConfig,
    x: Var,
) -> Result<Var> {
    let mut h = x;
    for (i, conv) in ENCODER_CONV.iter().enumerate() {
        let w = bound.var(&format!("encoder.conv{}.weight", i + 1))?;
        let b = bound.var(&format!("encoder.conv{}.bias", i + 1))?;
        h = tape.conv1d(h, w, Some(b), conv.stride, conv.padding)?;
        h = tape.relu(h);
    }
    h = tape.flatten(h)?;
    h = tape.affine(
        h,
        bound.var("encoder.head.fc1.weight")?,
        Some(bound.var("encoder.head.fc1.bias")?),
    )?;
    if config.head == HeadKind::TwoLayer {
        h = tape.relu(h);
        h = tape.affine(
            h,
            bound.var("encoder.head.fc2.weight")?,
            Some(bound.var("encoder.head.fc2.bias")?),
        )?;
    }
    Ok(h)
}

fn predict_on_tape<E: Real>(
    tape: &mut Tape<E>,
    bound: &Bound,
    config: &ModelConfig,
    z: Var,
) -> Result<Var> {
    match config.predictor {
        PredictorKind::Linear { .. } => tape.affine(z, bound.var("predictor.linear.weight")?, None),
        PredictorKind::Mlp => {
            let mut h = tape.affine(
                z,
                bound.var("predictor.mlp.fc1.weight")?,
                Some(bound.var("predictor.mlp.fc1.bias")?),
            )?;
            h = tape.relu(h);
            h = tape.affine(
                h,
                bound.var("predictor.mlp.fc2.weight")?,
                Some(bound.var("predictor.mlp.fc2.bias")?),
            )?;
            h = tape.relu(h);
            tape.affine(
                h,
                bound.var("predictor.mlp.fc3.weight")?,
                Some(bound.var("predictor.mlp.fc3.bias")?),
            )
        }
    }
}

fn decode_on_tape<E: Real>(
    tape: &mut Tape<E>,
    bound: &Bound,
    config: &ModelConfig,
    z: Var,
) -> Result<Var> {
    let mut h = tape.affine(
        z,
        bound.var("decoder.head.fc1.weight")?,
        Some(bound.var("decoder.head.fc1.bias")?),
    )?;
    if config.head == HeadKind::TwoLayer {
        h = tape.relu(h);
        h = tape.affine(
            h,
            bound.var("decoder.head.fc2.weight")?,
            Some(bound.var("decoder.head.fc2.bias")?),
        )?;
    }
    let batch = tape.value(h).shape()[0];
    h = tape.reshape(h, vec![batch, DECODER_DECONV[0].in_ch, config.conv_out_len()?])?;
    for (i, conv) in DECODER_DECONV.iter().enumerate() {
        let w = bound.var(&format!("decoder.deconv{}.weight", i + 1))?;
        let b = bound.var(&format!("decoder.deconv{}.bias", i + 1))?;
        h = tape.conv_transpose1d(h, w, Some(b), conv.stride, conv.padding, DECONV_OUTPUT_PADDING)?;
        if i + 1 < DECODER_DECONV.len() {
            h = tape.relu(h);
        }
    }
    Ok(h)
}

fn check_finite_loss<E: Real>(value: E, what: &str) -> Result<E> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::numeric(format!("{what} is not finite: {value}")))
    }
}

/// Raises every bias and shrinks every weight so ReLU pre-activations sit
/// well away from zero.
///
/// Finite-difference gradient probes step each parameter by `h`; at a
/// freshly initialized model some pre-activation always lies within that
/// step of a ReLU kink, and the probe then disagrees with the (correct)
/// one-sided tape gradient. Conditioning the check point this way keeps the
/// comparison on the smooth path. Identity predictor matrices are left
/// untouched.
pub fn lift_activation_margins<E: Real>(params: &mut ModelParams<E>) {
    let shift = E::from_f64(0.5);
    let scale = E::from_f64(0.5);
    for (name, tensor) in params.iter_mut() {
        if name.ends_with(".bias") {
            for v in tensor.data_mut() {
                *v = *v + shift;
            }
        } else if name != "predictor.linear.weight" {
            for v in tensor.data_mut() {
                *v = *v * scale;
            }
        }
    }
}

/// Prediction loss without gradients: mean over batch and latent dimensions
/// of the squared error between the predicted online latent of the context
/// and the EMA latent of the target.
pub fn jepa_loss_value<E: Real>(
    online: &ModelParams<E>,
    ema: &ModelParams<E>,
    config: &ModelConfig,
    context: &Tensor<E>,
    target: &Tensor<E>,
) -> Result<E> {
    check_window_batch(config, target, "target batch")?;
    let z = encode(online, config, context)?;
    let p = predict(online, config, &z)?;
    let t = encode(ema, config, target)?;
    check_finite_loss(ops::mse_value(&p, &t)?, "jepa loss")
}

/// Prediction loss with gradients accumulated onto every online parameter.
///
/// The EMA branch runs outside the tape and enters it as a constant, so no
/// gradient can reach the EMA parameters regardless of downstream use.
pub fn jepa_loss_and_grads<E: Real>(
    online: &mut ModelParams<E>,
    ema: &ModelParams<E>,
    config: &ModelConfig,
    context: &Tensor<E>,
    target: &Tensor<E>,
) -> Result<E> {
    check_window_batch(config, target, "target batch")?;
    let ema_z = encode(ema, config, target)?;
    let mut tape = Tape::new();
    let bound = Bound::bind(&mut tape, online);
    let x = tape.constant(context.clone());
    let z = encode_on_tape(&mut tape, &bound, config, x)?;
    let p = predict_on_tape(&mut tape, &bound, config, z)?;
    let t = tape.constant(ema_z);
    let loss = tape.mse(p, t)?;
    let value = check_finite_loss(tape.value(loss).scalar_value()?, "jepa loss")?;
    tape.backward(loss)?;
    bound.harvest(&tape, online)?;
    Ok(value)
}

/// Reconstruction loss without gradients: mean squared error between the
/// context window and its encode-decode round trip.
pub fn ae_loss_value<E: Real>(
    online: &ModelParams<E>,
    config: &ModelConfig,
    context: &Tensor<E>,
) -> Result<E> {
    let z = encode(online, config, context)?;
    let r = decode(online, config, &z)?;
    check_finite_loss(ops::mse_value(&r, context)?, "reconstruction loss")
}

/// Reconstruction loss with gradients accumulated onto every online
/// parameter.
pub fn ae_loss_and_grads<E: Real>(
    online: &mut ModelParams<E>,
    config: &ModelConfig,
    context: &Tensor<E>,
) -> Result<E> {
    check_window_batch(config, context, "encoder input")?;
    let mut tape = Tape::new();
    let bound = Bound::bind(&mut tape, online);
    let x = tape.constant(context.clone());
    let z = encode_on_tape(&mut tape, &bound, config, x)?;
    let r = decode_on_tape(&mut tape, &bound, config, z)?;
    let loss = tape.mse(r, x)?;
    let value = check_finite_loss(tape.value(loss).scalar_value()?, "reconstruction loss")?;
    tape.backward(loss)?;
    bound.harvest(&tape, online)?;
    Ok(value)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::models::config::LinearInit;
    use crate::numerics::grad_check_sampled;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn tiny_config(latent_dim: usize, predictor: PredictorKind) -> ModelConfig {
        ModelConfig { input_len: 16, latent_dim, head: HeadKind::TwoLayer, predictor }
    }

    fn identity_predictor() -> PredictorKind {
        PredictorKind::Linear { init: LinearInit::Identity }
    }

    fn window<E: Real>(config: &ModelConfig, seed: u64, batch: usize) -> Tensor<E> {
        let mut r = rng(seed);
        let data: Vec<E> = (0..batch * config.input_len)
            .map(|_| E::from_f64(r.random_range(-1.5..1.5)))
            .collect();
        Tensor::new(vec![batch, 1, config.input_len], data).unwrap()
    }

    #[test]
    fn init_is_deterministic_in_the_seed() {
        let cfg = tiny_config(4, PredictorKind::Mlp);
        let a = Model::init(&cfg, TrainMode::Jepa, &mut rng(9)).unwrap();
        let b = Model::init(&cfg, TrainMode::Jepa, &mut rng(9)).unwrap();
        let c = Model::init(&cfg, TrainMode::Jepa, &mut rng(10)).unwrap();
        for ((na, ta), (nb, tb)) in a.online.iter().zip(b.online.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data(), "parameter {na} differs across same-seed inits");
        }
        let differs = a
            .online
            .iter()
            .zip(c.online.iter())
            .any(|((_, ta), (_, tc))| ta.data() != tc.data());
        assert!(differs, "different seeds produced identical parameters");
        a.validate().unwrap();
    }

    #[test]
    fn init_counts_match_closed_forms_at_full_size() {
        let cfg = ModelConfig::default();
        let jepa = Model::init(&cfg, TrainMode::Jepa, &mut rng(0)).unwrap();
        assert_eq!(jepa.online.subset("encoder.conv").num_values(), 33_632);
        assert_eq!(jepa.online.subset("encoder.").num_values(), 428_992);
        assert_eq!(jepa.online.subset("predictor.").num_values(), 1_024);
        assert_eq!(jepa.ema.as_ref().unwrap().num_values(), 428_992);

        let ae = Model::init(&cfg, TrainMode::Ae, &mut rng(0)).unwrap();
        assert_eq!(ae.online.subset("decoder.").num_values(), 434_977);
        assert!(ae.ema.is_none());
        ae.validate().unwrap();
    }

    #[test]
    fn ema_starts_equal_to_online_encoder() {
        let cfg = tiny_config(3, identity_predictor());
        let model = Model::init(&cfg, TrainMode::Jepa, &mut rng(4)).unwrap();
        let ema = model.ema.as_ref().unwrap();
        for (name, tensor) in ema.iter() {
            assert_eq!(tensor.data(), model.online.require(name).unwrap().data());
        }
    }

    #[test]
    fn identity_predictor_is_the_identity_map() {
        let cfg = tiny_config(5, identity_predictor());
        let model = Model::init(&cfg, TrainMode::Jepa, &mut rng(1)).unwrap();
        let m = model.online.require("predictor.linear.weight").unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(m.data()[i * 5 + j], if i == j { 1.0 } else { 0.0 });
            }
        }
        let mut r = rng(2);
        let z_data: Vec<f32> = (0..15).map(|_| r.random_range(-2.0..2.0)).collect();
        let z = Tensor::new(vec![3, 5], z_data).unwrap();
        let p = model.predict(&z).unwrap();
        assert_eq!(p.data(), z.data());
    }

    #[test]
    fn doubled_identity_doubles_the_latent() {
        let cfg = tiny_config(4, identity_predictor());
        let mut model = Model::init(&cfg, TrainMode::Jepa, &mut rng(1)).unwrap();
        let m = model.online.require_mut("predictor.linear.weight").unwrap();
        for v in m.data_mut() {
            *v *= 2.0;
        }
        let z = Tensor::new(vec![1, 4], vec![0.25f32, -3.0, 1.5, 8.0]).unwrap();
        let p = model.predict(&z).unwrap();
        let want: Vec<f32> = z.data().iter().map(|v| 2.0 * v).collect();
        assert_eq!(p.data(), want.as_slice());
    }

    #[test]
    fn zero_weight_mlp_returns_its_final_bias() {
        let cfg = tiny_config(3, PredictorKind::Mlp);
        let mut model = Model::init(&cfg, TrainMode::Jepa, &mut rng(6)).unwrap();
        for name in ["predictor.mlp.fc1.weight", "predictor.mlp.fc2.weight", "predictor.mlp.fc3.weight"] {
            for v in model.online.require_mut(name).unwrap().data_mut() {
                *v = 0.0;
            }
        }
        let bias = vec![0.5f32, -1.25, 2.0];
        model
            .online
            .require_mut("predictor.mlp.fc3.bias")
            .unwrap()
            .data_mut()
            .copy_from_slice(&bias);
        let z = Tensor::new(vec![2, 3], vec![1.0f32, -7.0, 3.0, 0.0, 0.0, 9.0]).unwrap();
        let p = model.predict(&z).unwrap();
        assert_eq!(&p.data()[0..3], bias.as_slice());
        assert_eq!(&p.data()[3..6], bias.as_slice());
    }

    #[test]
    fn encoder_rows_are_independent_per_sample() {
        let cfg = tiny_config(4, identity_predictor());
        let model = Model::init(&cfg, TrainMode::Jepa, &mut rng(3)).unwrap();
        let batch: Tensor<f32> = window(&cfg, 11, 3);
        let z = model.encode(&batch).unwrap();
        assert_eq!(z.shape(), &[3, 4]);
        for row in 0..3 {
            let start = row * cfg.input_len;
            let single = Tensor::new(
                vec![1, 1, cfg.input_len],
                batch.data()[start..start + cfg.input_len].to_vec(),
            )
            .unwrap();
            let zi = model.encode(&single).unwrap();
            assert_eq!(zi.data(), &z.data()[row * 4..(row + 1) * 4], "row {row}");
        }

        // Zero input: every row is the same bias-only constant.
        let zeros = Tensor::zeros(vec![2, 1, cfg.input_len]);
        let z0 = model.encode(&zeros).unwrap();
        assert_eq!(&z0.data()[0..4], &z0.data()[4..8]);
    }

    #[test]
    fn encode_is_deterministic_and_checks_shapes() {
        let cfg = tiny_config(2, identity_predictor());
        let model = Model::init(&cfg, TrainMode::Jepa, &mut rng(5)).unwrap();
        let x: Tensor<f32> = window(&cfg, 7, 2);
        let a = model.encode(&x).unwrap();
        let b = model.encode(&x).unwrap();
        assert_eq!(a.data(), b.data());

        let wrong_len = Tensor::<f32>::zeros(vec![1, 1, 24]);
        assert!(model.encode(&wrong_len).is_err());
        let wrong_rank = Tensor::<f32>::zeros(vec![1, 16]);
        assert!(model.encode(&wrong_rank).is_err());
        let wrong_width = Tensor::<f32>::zeros(vec![1, 3]);
        assert!(model.predict(&wrong_width).is_err());
    }

    #[test]
    fn linear_predictor_is_linear() {
        let cfg = tiny_config(6, PredictorKind::Linear { init: LinearInit::Random });
        let model = Model::init(&cfg, TrainMode::Jepa, &mut rng(8)).unwrap();
        let mut r = rng(21);
        let mut draw = |n: usize| -> Vec<f32> { (0..n).map(|_| r.random_range(-2.0..2.0)).collect() };
        let z1 = Tensor::new(vec![2, 6], draw(12)).unwrap();
        let z2 = Tensor::new(vec![2, 6], draw(12)).unwrap();
        let (a, b) = (0.7f32, -1.3f32);
        let mix_data: Vec<f32> =
            z1.data().iter().zip(z2.data()).map(|(&u, &v)| a * u + b * v).collect();
        let mix = Tensor::new(vec![2, 6], mix_data).unwrap();
        let p_mix = model.predict(&mix).unwrap();
        let p1 = model.predict(&z1).unwrap();
        let p2 = model.predict(&z2).unwrap();
        for ((&pm, &u), &v) in p_mix.data().iter().zip(p1.data()).zip(p2.data()) {
            let want = a * u + b * v;
            let scale = want.abs().max(1.0);
            assert!((pm - want).abs() / scale < 1e-5, "{pm} vs {want}");
        }
    }

    #[test]
    fn taped_forwards_match_plain_forwards_bitwise() {
        let cfg = tiny_config(4, PredictorKind::Mlp);
        let model = Model::init(&cfg, TrainMode::Jepa, &mut rng(13)).unwrap();
        let x: Tensor<f32> = window(&cfg, 14, 2);

        let z_plain = model.encode(&x).unwrap();
        let p_plain = model.predict(&z_plain).unwrap();
        let mut tape = Tape::new();
        let bound = Bound::bind(&mut tape, &model.online);
        let xv = tape.constant(x.clone());
        let zv = encode_on_tape(&mut tape, &bound, &cfg, xv).unwrap();
        let pv = predict_on_tape(&mut tape, &bound, &cfg, zv).unwrap();
        assert_eq!(tape.value(zv).data(), z_plain.data());
        assert_eq!(tape.value(pv).data(), p_plain.data());

        let ae = Model::init(&cfg, TrainMode::Ae, &mut rng(13)).unwrap();
        let r_plain = ae.decode(&ae.encode(&x).unwrap()).unwrap();
        assert_eq!(r_plain.shape(), x.shape());
        let mut tape = Tape::new();
        let bound = Bound::bind(&mut tape, &ae.online);
        let xv = tape.constant(x.clone());
        let zv = encode_on_tape(&mut tape, &bound, &cfg, xv).unwrap();
        let rv = decode_on_tape(&mut tape, &bound, &cfg, zv).unwrap();
        assert_eq!(tape.value(rv).data(), r_plain.data());

        // The two loss entry points therefore agree bitwise as well.
        let mut jepa = Model::init(&cfg, TrainMode::Jepa, &mut rng(13)).unwrap();
        let tgt: Tensor<f32> = window(&cfg, 15, 2);
        let value = jepa.jepa_loss_value(&x, &tgt).unwrap();
        let with_grads = jepa.jepa_loss_and_grads(&x, &tgt).unwrap();
        assert_eq!(value, with_grads);
        let mut ae = ae;
        assert_eq!(ae.ae_loss_value(&x).unwrap(), ae.ae_loss_and_grads(&x).unwrap());
    }

    #[test]
    fn self_prediction_at_init_has_zero_loss() {
        // Identity predictor, EMA equal to the online encoder, identical
        // context and target: the two branches compute the same latent, so
        // the loss is exactly zero.
        let cfg = tiny_config(4, identity_predictor());
        let model = Model::init(&cfg, TrainMode::Jepa, &mut rng(17)).unwrap();
        let x: Tensor<f32> = window(&cfg, 18, 3);
        assert_eq!(model.jepa_loss_value(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn loss_averages_over_batch_and_latent_dimensions() {
        // Zero every weight, then pin the online head bias to (3, 4) and the
        // EMA head bias to (0, 0): prediction minus target is (3, 4) for any
        // input, so the mean-over-dimensions loss is (9 + 16) / 2 = 12.5.
        let cfg = tiny_config(2, identity_predictor());
        let mut model = Model::init(&cfg, TrainMode::Jepa, &mut rng(19)).unwrap();
        let names: Vec<String> = model.online.names().map(str::to_owned).collect();
        for name in &names {
            if name != "predictor.linear.weight" {
                for v in model.online.require_mut(name).unwrap().data_mut() {
                    *v = 0.0;
                }
            }
        }
        let ema = model.ema.as_mut().unwrap();
        let ema_names: Vec<String> = ema.names().map(str::to_owned).collect();
        for name in &ema_names {
            for v in ema.require_mut(name).unwrap().data_mut() {
                *v = 0.0;
            }
        }
        model
            .online
            .require_mut("encoder.head.fc2.bias")
            .unwrap()
            .data_mut()
            .copy_from_slice(&[3.0, 4.0]);

        let x: Tensor<f32> = window(&cfg, 20, 1);
        assert_eq!(model.jepa_loss_value(&x, &x).unwrap(), 12.5);
        assert_eq!(model.jepa_loss_and_grads(&x, &x).unwrap(), 12.5);
    }

    #[test]
    fn backward_never_touches_ema_parameters() {
        let cfg = tiny_config(3, PredictorKind::Mlp);
        let mut model = Model::init(&cfg, TrainMode::Jepa, &mut rng(23)).unwrap();
        let ctx: Tensor<f32> = window(&cfg, 24, 2);
        let tgt: Tensor<f32> = window(&cfg, 25, 2);
        let loss = model.jepa_loss_and_grads(&ctx, &tgt).unwrap();
        assert!(loss.is_finite());
        for (name, tensor) in model.online.iter() {
            let grad = tensor.grad().unwrap_or_else(|| panic!("missing gradient on {name}"));
            assert!(grad.iter().all(|g| g.is_finite()), "non-finite gradient on {name}");
        }
        for (name, tensor) in model.ema.as_ref().unwrap().iter() {
            assert!(tensor.grad().is_none(), "gradient leaked into ema parameter {name}");
        }
    }

    #[test]
    fn jepa_gradients_match_finite_differences() {
        let cfg = tiny_config(2, PredictorKind::Mlp);
        let model = Model::init(&cfg, TrainMode::Jepa, &mut rng(29)).unwrap().cast::<f64>();
        let ctx: Tensor<f64> = window(&cfg, 30, 2);
        let tgt: Tensor<f64> = window(&cfg, 31, 2);
        let ema = model.ema.clone().unwrap();
        let mut online = model.online.clone();
        lift_activation_margins(&mut online);
        let report = grad_check_sampled(
            |p: &mut ModelParams<f64>| jepa_loss_and_grads(p, &ema, &cfg, &ctx, &tgt),
            &mut online,
            1e-3,
            6,
            0,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "jepa gradient relative error {}", report.max_rel_err);
    }

    #[test]
    fn ae_gradients_match_finite_differences() {
        let cfg = tiny_config(2, identity_predictor());
        let model = Model::init(&cfg, TrainMode::Ae, &mut rng(37)).unwrap().cast::<f64>();
        let ctx: Tensor<f64> = window(&cfg, 38, 2);
        let mut online = model.online.clone();
        lift_activation_margins(&mut online);
        let report = grad_check_sampled(
            |p: &mut ModelParams<f64>| ae_loss_and_grads(p, &cfg, &ctx),
            &mut online,
            1e-3,
            6,
            0,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "ae gradient relative error {}", report.max_rel_err);
    }

    #[test]
    fn zeroed_final_deconv_reconstructs_zero() {
        // With the last deconv silenced the reconstruction is identically
        // zero, so the loss equals the mean of the squared inputs. A full
        // standardized sequence has unit population variance, so on a real
        // window that mean lands near 1.
        let cfg = ModelConfig {
            input_len: 768,
            latent_dim: 4,
            head: HeadKind::TwoLayer,
            predictor: identity_predictor(),
        };
        let mut model = Model::init(&cfg, TrainMode::Ae, &mut rng(41)).unwrap();
        for name in ["decoder.deconv4.weight", "decoder.deconv4.bias"] {
            for v in model.online.require_mut(name).unwrap().data_mut() {
                *v = 0.0;
            }
        }

        let spec = &crate::synthgen::regime_table()[1]; // a plain sine
        let master = crate::synthgen::generate_master(spec, 7, 0, 1024).unwrap();
        let standardized = crate::synthgen::standardize(&master.values);
        let data: Vec<f32> = standardized[..768].iter().map(|&v| v as f32).collect();
        let x = Tensor::new(vec![1, 1, 768], data).unwrap();

        let loss = model.ae_loss_value(&x).unwrap();
        let zeros = Tensor::<f32>::zeros(vec![1, 1, 768]);
        let mean_sq = ops::mse_value(&zeros, &x).unwrap();
        assert_eq!(loss, mean_sq);
        assert!((loss - 1.0).abs() < 0.05, "mean square of a standardized window was {loss}");
    }

    #[test]
    fn reconstruction_loss_ignores_batch_order() {
        let cfg = tiny_config(3, identity_predictor());
        let model = Model::init(&cfg, TrainMode::Ae, &mut rng(43)).unwrap();
        let x: Tensor<f32> = window(&cfg, 44, 2);
        let mut swapped_data = x.data()[cfg.input_len..].to_vec();
        swapped_data.extend_from_slice(&x.data()[..cfg.input_len]);
        let swapped = Tensor::new(vec![2, 1, cfg.input_len], swapped_data).unwrap();
        let a = model.ae_loss_value(&x).unwrap();
        let b = model.ae_loss_value(&swapped).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn update_ema_blends_toward_online() {
        let cfg = tiny_config(2, identity_predictor());
        let mut model = Model::init(&cfg, TrainMode::Jepa, &mut rng(47)).unwrap();
        let before = model.ema.as_ref().unwrap().require("encoder.conv1.weight").unwrap().data().to_vec();
        for v in model.online.require_mut("encoder.conv1.weight").unwrap().data_mut() {
            *v += 1.0;
        }
        let online_now =
            model.online.require("encoder.conv1.weight").unwrap().data().to_vec();
        model.update_ema(0.996).unwrap();
        let after = model.ema.as_ref().unwrap().require("encoder.conv1.weight").unwrap();
        for ((&a, &b), &o) in after.data().iter().zip(&before).zip(&online_now) {
            let want = 0.996 * b + 0.004 * o;
            assert!((a - want).abs() < 1e-6, "{a} vs {want}");
        }

        let mut ae = Model::init(&cfg, TrainMode::Ae, &mut rng(47)).unwrap();
        assert!(ae.update_ema(0.996).is_err());
        assert!(ae.encode_ema(&window(&cfg, 48, 1)).is_err());
    }

    #[test]
    fn validate_rejects_mode_mismatches() {
        let cfg = tiny_config(2, identity_predictor());
        let mut jepa = Model::init(&cfg, TrainMode::Jepa, &mut rng(51)).unwrap();
        jepa.validate().unwrap();
        let ema = jepa.ema.take();
        assert!(jepa.validate().is_err());

        let mut ae = Model::init(&cfg, TrainMode::Ae, &mut rng(51)).unwrap();
        ae.validate().unwrap();
        ae.ema = ema;
        assert!(ae.validate().is_err());
    }
}
