//! Training: the weighted four-term objective, the AdamW optimizer with a
//! halving learning-rate schedule, the bit-exact checkpoint format, and the
//! end-to-end training step.

pub mod adamw;
pub mod checkpoint;
pub mod loss;
pub mod trainer;

pub use adamw::AdamW;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use loss::{FeatureExtractor, FrozenRandomFeatures, LossParts, LossWeights};
pub use trainer::{pretrain_codec, TrainRecord, Trainer};
