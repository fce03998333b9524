//! Functional correspondences between an OOD observation and ID data:
//! expert feature grammar, mask pairing with IoU alignment, and ranked
//! retrieval.

pub mod grammar;
pub mod mask;
pub mod retrieval;

use thiserror::Error;

pub use grammar::{
    decode_description, CorrespondenceDescription, CorrespondenceFeature, EdgeSide, Label,
    VerticalAnchor,
};
pub use mask::{
    alignment, functional_map, functional_map_from_masks, BoundingBox, FunctionalMap, MaskPair,
    SegmentMask, Segmenter, Transform,
};
pub use retrieval::{filter_by_proprio, rank_retrieval, RankedRetrieval, RetrievalEntry};

#[derive(Debug, Error, PartialEq)]
pub enum CorrespondenceError {
    #[error("parse error at {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("unknown label {name:?} at {position}")]
    Resolve { position: usize, name: String },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("proprioception radius must be positive, got {0}")]
    InvalidRadius(f64),
}
