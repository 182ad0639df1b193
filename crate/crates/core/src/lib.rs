//! Video Swin Transformer inference, frozen-backbone linear probing and
//! post-hoc error analysis for video classification.

pub mod analysis;
pub mod backbone;
pub mod clip;
pub mod config;
pub mod error;
pub mod patch_embed;
pub mod pipeline;
pub mod probe;
pub mod report;
pub mod synthetic;
pub mod tensor;
pub mod weights_io;
pub mod window;

pub use error::{ModelError, ModelResult};
pub use tensor::Tensor;
pub use weights_io::NamedWeights;
