//! Encoders (random projection, deterministic EBR, variational VEE), the
//! classifier head, the variational rehearsal loss and encoder pretraining.

mod checkpoint;
mod classifier;
mod encoder;
mod pretrain;
mod ver;

pub use checkpoint::{ModelCheckpoint, MODEL_FORMAT_VERSION};
pub use classifier::{Classifier, ClassifierCache, ClassifierSpec};
pub use encoder::{
    Encoder, EncoderArch, EncoderCache, EncoderHead, EncoderKind, EncoderSpec, GaussianStats, ImageShape,
    LOG_SIGMA_MAX, LOG_SIGMA_MIN,
};
pub use pretrain::{pretrain_encoder, EpochLog, PretrainConfig, PretrainOutcome};
pub use ver::{ver_loss, VerBatch, VerLossConfig, VerLossOutput};
