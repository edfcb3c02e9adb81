//! Calibration of output embeddings for few-shot classification.
//!
//! A rotation/scaling head re-projects anisotropic features onto `K`
//! balanced directions, a hyperbolic anchor loss organizes fine classes
//! under their coarse parents, and a diagnostics suite measures how
//! concentrated the resulting representations are.

pub mod calib;
pub mod checkpoint;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod hyperbolic;
pub mod matrix;
pub mod objective;
pub mod optim;
pub mod report;
pub mod store;
pub mod train;

pub use calib::{CalibrationHead, HeadGrad, HeadMode, InitScheme};
pub use checkpoint::Checkpoint;
pub use diagnostics::SpectrumReport;
pub use error::{Error, Result};
pub use hyperbolic::{AnchorSet, DistanceKind};
pub use matrix::{EmbeddingMatrix, Matrix};
pub use objective::{grad_all, LossBreakdown, ModelGrad, Objective, Sample, Term};
pub use store::{LabeledDataset, SyntheticConfig};
pub use train::{TrainConfig, TrainReport, Variant};
