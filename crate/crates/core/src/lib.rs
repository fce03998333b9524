//! Test-time adaptation of imitative policies through expert-guided
//! functional correspondences, exercised in a small deterministic
//! manipulation simulator.
//!
//! The pipeline: [`ood`] flags unfamiliar observations, [`correspondence`]
//! retrieves familiar observations that an expert's description says are
//! functionally equivalent, [`modes`] checks whether the retrieved behaviors
//! agree and asks for more detail when they do not, and [`runtime`] feeds
//! the averaged embedding of the best retrievals to the policy in place of
//! the unfamiliar one.

pub mod bench;
pub mod correspondence;
pub mod model;
pub mod modes;
pub mod ood;
pub mod policy;
pub mod rng;
pub mod runtime;
pub mod sim;
