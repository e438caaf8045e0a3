//! Non-neural machinery for a single-shot object detector: grid decoding,
//! non-maximum suppression, the composite detection loss and a small
//! gradient-descent trainer, box-aware augmentation, and the evaluation
//! metric stack (precision/recall/F1, PR curves, AP/mAP, confusion counts).

pub mod augment;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod ingest;
pub mod loss;
pub mod metrics;
pub mod pipeline;
pub mod postprocess;
pub mod report;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::{BoundingBox, Corners, Detection, GridShape, GridTensor, GroundTruthBox};
