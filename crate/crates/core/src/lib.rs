//! Classification of heterogeneous univariate IoT sensor sequences with an
//! ensemble of causal convolution blocks (local features) fused with a
//! stacked bidirectional GRU (global features) and a bottleneck MLP head.
//!
//! The crate is self-contained: [`autodiff`] provides the tensor and
//! reverse-mode machinery, [`nn`] the layer vocabulary, [`model`] the
//! network and its ablation variants, [`data`] ingestion and preprocessing,
//! and [`train`] the training loop, metrics and ablation runner.

pub mod autodiff;
pub mod data;
pub mod gradsuite;
mod error;
pub mod model;
pub mod nn;
pub mod train;

pub use autodiff::{Graph, ParamStore, Tensor, Var};
pub use data::Dataset;
pub use error::{Error, Result};
pub use model::{DeepHeteroIoT, ModelConfig, Variant};
pub use train::{EvalReport, TrainConfig};
