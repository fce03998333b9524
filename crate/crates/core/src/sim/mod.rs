//! Deterministic 2D manipulation simulator: task configuration, kinematics,
//! rendering, segmentation and scripted demonstrators.

pub mod config;
pub mod demo;
pub mod world;

use thiserror::Error;

pub use config::{Behavior, GraspSide, ObjectSpec, OodKind, Scenario, Task, TaskConfig};
pub use demo::{
    demonstrate, demonstrator_actions, generate_dataset, held_out_trajectories, sample_placement,
    scripted_demonstrator,
};
pub use world::{
    evaluate, ground_truth_segment, observe, render, step, GraspEvent, Outcome, Scene, WorldState,
    GRASP_RADIUS,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid task configuration: {0}")]
    Config(String),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("scenario {scenario:?} has no object {object:?}")]
    UnknownObject { scenario: String, object: String },
    #[error("object out of bounds: {0}")]
    OutOfBounds(String),
    #[error("unreachable placement: {0}")]
    Unreachable(String),
}
