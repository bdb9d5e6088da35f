//! Architecture description: the fixed conv stack, the configurable head and
//! predictor, the parameter inventory they imply, and a digest that ties a
//! checkpoint to the architecture that produced it.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::hash::fnv1a64;
use crate::numerics::ops;

/// One convolution row: channel counts plus the length-arithmetic inputs.
///
/// For a regular convolution `in_ch` is the input side; for a transposed
/// convolution the same struct is read with `in_ch` as the layer input
/// (weight shape `[in_ch, out_ch, ksize]`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub ksize: usize,
    pub stride: usize,
    pub padding: usize,
}

/// The fixed four-row encoder conv stack. Every row halves the sequence
/// length, so an input of length `L` flattens to `128 * L / 16` features.
pub const ENCODER_CONV: [ConvSpec; 4] = [
    ConvSpec { in_ch: 1, out_ch: 16, ksize: 7, stride: 2, padding: 3 },
    ConvSpec { in_ch: 16, out_ch: 32, ksize: 5, stride: 2, padding: 2 },
    ConvSpec { in_ch: 32, out_ch: 64, ksize: 3, stride: 2, padding: 1 },
    ConvSpec { in_ch: 64, out_ch: 128, ksize: 3, stride: 2, padding: 1 },
];

/// Transposed-conv rows of the reconstruction decoder: the encoder rows in
/// reverse order with input/output channels swapped.
pub const DECODER_DECONV: [ConvSpec; 4] = [
    ConvSpec { in_ch: 128, out_ch: 64, ksize: 3, stride: 2, padding: 1 },
    ConvSpec { in_ch: 64, out_ch: 32, ksize: 3, stride: 2, padding: 1 },
    ConvSpec { in_ch: 32, out_ch: 16, ksize: 5, stride: 2, padding: 2 },
    ConvSpec { in_ch: 16, out_ch: 1, ksize: 7, stride: 2, padding: 3 },
];

/// Output padding applied to every decoder row. With the kernel/stride/pad
/// combinations above this makes each transposed conv exactly double the
/// length, inverting the encoder's stride-2 halving.
pub const DECONV_OUTPUT_PADDING: usize = 1;

/// Depth of the affine head that maps flattened conv features to the latent
/// vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    /// flatten -> affine(k)
    SingleLayer,
    /// flatten -> affine(2k) -> ReLU -> affine(k)
    TwoLayer,
}

/// Initialization of the linear predictor matrix M.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinearInit {
    /// M = I, so the predictor starts as the identity map.
    Identity,
    /// Fan-in-scaled uniform, like every other weight.
    Random,
}

/// Predictor between the online latent and the EMA target latent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictorKind {
    /// z -> M z with no bias; exactly k*k parameters.
    Linear { init: LinearInit },
    /// affine(k -> 2k) -> ReLU -> affine(2k -> 2k) -> ReLU -> affine(2k -> k)
    Mlp,
}

/// Which objective the model is built for. The mode decides which parameter
/// groups exist: a predictor plus EMA encoder for JEPA, a decoder for the
/// autoencoder baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    Jepa,
    Ae,
}

impl HeadKind {
    pub fn label(self) -> &'static str {
        match self {
            HeadKind::SingleLayer => "single_layer",
            HeadKind::TwoLayer => "two_layer",
        }
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_layer" => Ok(HeadKind::SingleLayer),
            "two_layer" => Ok(HeadKind::TwoLayer),
            other => Err(Error::config(format!(
                "unknown head kind {other:?} (expected single_layer or two_layer)"
            ))),
        }
    }
}

impl PredictorKind {
    pub fn label(self) -> &'static str {
        match self {
            PredictorKind::Linear { init: LinearInit::Identity } => "linear_identity",
            PredictorKind::Linear { init: LinearInit::Random } => "linear_random",
            PredictorKind::Mlp => "mlp",
        }
    }
}

impl FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear_identity" => Ok(PredictorKind::Linear { init: LinearInit::Identity }),
            "linear_random" => Ok(PredictorKind::Linear { init: LinearInit::Random }),
            "mlp" => Ok(PredictorKind::Mlp),
            other => Err(Error::config(format!(
                "unknown predictor kind {other:?} (expected linear_identity, linear_random or mlp)"
            ))),
        }
    }
}

impl TrainMode {
    pub fn label(self) -> &'static str {
        match self {
            TrainMode::Jepa => "jepa",
            TrainMode::Ae => "ae",
        }
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jepa" => Ok(TrainMode::Jepa),
            "ae" => Ok(TrainMode::Ae),
            other => Err(Error::config(format!("unknown mode {other:?} (expected jepa or ae)"))),
        }
    }
}

/// Everything that determines parameter shapes, along with the window length
/// the encoder accepts.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Input window length. Must be a positive multiple of 16 so the four
    /// stride-2 conv rows halve it exactly and the decoder can invert them.
    pub input_len: usize,
    /// Latent width k. Analyses that look for one indicator direction per
    /// regime need at least as many latent dimensions as regimes; smaller
    /// values are fine for unit tests.
    pub latent_dim: usize,
    pub head: HeadKind,
    pub predictor: PredictorKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_len: 768,
            latent_dim: 32,
            head: HeadKind::TwoLayer,
            predictor: PredictorKind::Linear { init: LinearInit::Identity },
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::config("latent_dim must be at least 1".to_string()));
        }
        if self.input_len == 0 || self.input_len % 16 != 0 {
            return Err(Error::config(format!(
                "input_len must be a positive multiple of 16 so the four stride-2 conv rows \
                 halve it exactly, got {}",
                self.input_len
            )));
        }
        Ok(())
    }

    /// Sequence length after the conv stack (`input_len / 16`), computed by
    /// chaining the actual length arithmetic of the rows.
    pub fn conv_out_len(&self) -> Result<usize> {
        self.validate()?;
        let mut len = self.input_len;
        for conv in &ENCODER_CONV {
            len = ops::conv1d_out_len(len, conv.ksize, conv.stride, conv.padding)?;
        }
        Ok(len)
    }

    /// Feature width seen by the head: channels times length after the conv
    /// stack.
    pub fn flatten_width(&self) -> Result<usize> {
        Ok(ENCODER_CONV[ENCODER_CONV.len() - 1].out_ch * self.conv_out_len()?)
    }
}

/// How a parameter is filled at initialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitRule {
    /// Uniform on `(-1/sqrt(fan_in), 1/sqrt(fan_in))`, where `fan_in` counts
    /// the input values feeding one output element (`in_features` for affine
    /// layers, `in_ch * ksize` for both conv kinds). Biases reuse the fan-in
    /// of their layer's weight.
    Uniform { fan_in: usize },
    /// Square identity matrix; consumes no random draws.
    Identity,
}

/// Name, shape and init rule of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: InitRule,
}

impl ParamSpec {
    fn uniform(name: String, shape: Vec<usize>, fan_in: usize) -> Self {
        ParamSpec { name, shape, init: InitRule::Uniform { fan_in } }
    }
}

fn push_affine(specs: &mut Vec<ParamSpec>, name: &str, in_f: usize, out_f: usize) {
    specs.push(ParamSpec::uniform(format!("{name}.weight"), vec![out_f, in_f], in_f));
    specs.push(ParamSpec::uniform(format!("{name}.bias"), vec![out_f], in_f));
}

/// The ordered list of online parameters for a config and mode. The order is
/// the initialization draw order and the checkpoint serialization order.
pub fn param_inventory(config: &ModelConfig, mode: TrainMode) -> Result<Vec<ParamSpec>> {
    config.validate()?;
    let k = config.latent_dim;
    let flat = config.flatten_width()?;
    let mut specs = Vec::new();

    for (i, conv) in ENCODER_CONV.iter().enumerate() {
        let fan_in = conv.in_ch * conv.ksize;
        specs.push(ParamSpec::uniform(
            format!("encoder.conv{}.weight", i + 1),
            vec![conv.out_ch, conv.in_ch, conv.ksize],
            fan_in,
        ));
        specs.push(ParamSpec::uniform(format!("encoder.conv{}.bias", i + 1), vec![conv.out_ch], fan_in));
    }
    match config.head {
        HeadKind::TwoLayer => {
            push_affine(&mut specs, "encoder.head.fc1", flat, 2 * k);
            push_affine(&mut specs, "encoder.head.fc2", 2 * k, k);
        }
        HeadKind::SingleLayer => push_affine(&mut specs, "encoder.head.fc1", flat, k),
    }

    match mode {
        TrainMode::Jepa => match config.predictor {
            PredictorKind::Linear { init } => {
                let init = match init {
                    LinearInit::Identity => InitRule::Identity,
                    LinearInit::Random => InitRule::Uniform { fan_in: k },
                };
                specs.push(ParamSpec {
                    name: "predictor.linear.weight".to_string(),
                    shape: vec![k, k],
                    init,
                });
            }
            PredictorKind::Mlp => {
                push_affine(&mut specs, "predictor.mlp.fc1", k, 2 * k);
                push_affine(&mut specs, "predictor.mlp.fc2", 2 * k, 2 * k);
                push_affine(&mut specs, "predictor.mlp.fc3", 2 * k, k);
            }
        },
        TrainMode::Ae => {
            match config.head {
                HeadKind::TwoLayer => {
                    push_affine(&mut specs, "decoder.head.fc1", k, 2 * k);
                    push_affine(&mut specs, "decoder.head.fc2", 2 * k, flat);
                }
                HeadKind::SingleLayer => push_affine(&mut specs, "decoder.head.fc1", k, flat),
            }
            for (i, conv) in DECODER_DECONV.iter().enumerate() {
                let fan_in = conv.in_ch * conv.ksize;
                specs.push(ParamSpec::uniform(
                    format!("decoder.deconv{}.weight", i + 1),
                    vec![conv.in_ch, conv.out_ch, conv.ksize],
                    fan_in,
                ));
                specs.push(ParamSpec::uniform(
                    format!("decoder.deconv{}.bias", i + 1),
                    vec![conv.out_ch],
                    fan_in,
                ));
            }
        }
    }
    Ok(specs)
}

/// 64-bit digest of the full architecture description. Checkpoints embed it
/// so a file trained under one architecture cannot be loaded under another.
pub fn config_digest(config: &ModelConfig, mode: TrainMode) -> u64 {
    let mut s = String::new();
    let _ = write!(
        s,
        "arch-v1 mode={} input_len={} latent_dim={} head={} predictor={}",
        mode.label(),
        config.input_len,
        config.latent_dim,
        config.head.label(),
        config.predictor.label()
    );
    for conv in &ENCODER_CONV {
        let _ = write!(
            s,
            " conv=({},{},{},{},{})",
            conv.in_ch, conv.out_ch, conv.ksize, conv.stride, conv.padding
        );
    }
    let _ = write!(s, " deconv_output_padding={DECONV_OUTPUT_PADDING}");
    fnv1a64(s.as_bytes())
}
