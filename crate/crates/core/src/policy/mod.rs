//! Observation encoder and the reference imitative policy.

pub mod encoder;
pub mod model;

pub use encoder::{encode, pool_channels, EncoderConfig};
pub use model::{fit_policy, PolicyError, PolicyModel, PolicyParams, Sample};
