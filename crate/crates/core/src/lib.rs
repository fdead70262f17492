//! Multi-modal, multi-granular document understanding: document model,
//! encoders, attention with hierarchy and layout biases, pre-training and
//! fine-tuning.

pub mod attention;
pub mod autodiff;
pub mod config;
pub mod docmodel;
pub mod encoder;
pub mod error;
pub mod finetune;
pub mod ingestion;
pub mod model;
pub mod params;
pub mod pretraining;
pub mod vocab;

pub use config::{AttentionConfig, EncoderConfig, ModelConfig, PretrainTasks, TrainConfig};
pub use docmodel::{BoundingBox, Document, Granularities, Granularity, GranularUnit, Region, Word};
pub use error::{Error, Result};
pub use model::{Model, PreparedDoc};
pub use vocab::Vocab;
