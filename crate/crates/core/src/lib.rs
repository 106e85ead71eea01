//! Spatial lifting for dense prediction.
//!
//! A 2-D sample is replicated `m` times along a new z axis, processed by a
//! channel-constant 3-D network, and the lowest-loss output slices are fused
//! into the final prediction. Agreement between selected and unselected
//! slices gives a quality score without ground truth.

pub mod costmodel;
pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod lifting;
pub mod model;
pub mod training;

pub use error::{Result, SlError};
pub use lifting::{decode_segmentation, fuse_slices, lift, lift_batch, replicate_target, select_slices, Fusion, SliceStats};
pub use model::{ActivationKind, ArchSpec, Blueprint, Head, LayerKind, LayerPlan, Network, ZPadding};
pub use costmodel::{compare, conv_cost, model_cost, Comparison, CostReport, CostRow, Geometry};
pub use training::{train, train_with, Checkpoint, Dataset, EpochRecord, LossKind, Sample, TrainConfig};
pub use eval::{binarize_slice, correlations, depth_metrics, dice, pqa_score, predict, CorrelationReport, PqaReport, Prediction};
