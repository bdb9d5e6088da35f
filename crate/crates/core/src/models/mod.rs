//! JEPA model and autoencoder baseline: architecture description, parameter
//! initialization, plain and taped forward passes, losses with a structural
//! stop-gradient, and checkpoint serialization.

pub mod checkpoint;
pub mod checks;
pub mod config;
pub mod net;

pub use checkpoint::{load_checkpoint, save_checkpoint, KJC1_MAGIC, KJC1_VERSION};
pub use checks::{GradAudit, COMPOSITE_TOLERANCE, LAYER_TOLERANCE};
pub use config::{
    config_digest, param_inventory, ConvSpec, HeadKind, InitRule, LinearInit, ModelConfig,
    ParamSpec, PredictorKind, TrainMode, DECODER_DECONV, DECONV_OUTPUT_PADDING, ENCODER_CONV,
};
pub use net::{
    ae_loss_and_grads, ae_loss_value, decode, encode, init_params, jepa_loss_and_grads,
    jepa_loss_value, lift_activation_margins, predict, Model,
};
