//! Histogram Loss for regression.
//!
//! A scalar label is turned into a distribution over the bins of a padded
//! uniform grid ([`grid`], [`targets`]); a network with a softmax head
//! ([`net`]) is trained with cross-entropy against it ([`loss`],
//! [`trainer`]) and predicts the mean of its histogram. [`analysis`] checks
//! the bias and error bounds numerically and [`experiment`] drives complete
//! runs from a config file.

pub mod analysis;
pub mod data;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod loss;
pub mod net;
pub mod optim;
pub mod targets;
pub mod trainer;

pub use error::{Error, Result};
pub use grid::{BinGrid, PaddingSpec};
pub use loss::PredictionHistogram;
pub use net::{HeadKind, MlpModel, MlpSpec};
pub use targets::{SupportPolicy, TargetSpec, WeightVector};
pub use trainer::{fit, FitOutput, LossKind, MetricsRecord, TrainConfig};
