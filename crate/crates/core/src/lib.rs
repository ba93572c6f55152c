//! Out-of-distribution robust softmax classifiers trained with adaptive,
//! traffic-driven confidence regularization.
//!
//! A deployed classifier sees unlabeled traffic that mixes in-distribution and
//! out-of-distribution inputs. Training adds a penalty pulling the predictive
//! distribution on each traffic sample toward uniform, weighted by
//! `β(x) = φ_γ(max_k p(k|x))`, so low-confidence traffic is regularized and
//! confident traffic is left alone.
//!
//! * [`nn`]: feedforward classifier, backpropagation, gradient checking.
//! * [`regularizers`]: confidence score, squashing, β modes, losses.
//! * [`metrics`]: threshold detector, detection accuracy, micro AUPR.
//! * [`data`]: synthetic generators, traffic mixing, dataset files.
//! * [`trainer`]: SGD training, online fine-tuning, frozen-β ablation, γ tuning.
//! * [`experiments`]: scenario harness behind the `oodlab` binary.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod regularizers;
pub mod rng;
pub mod trainer;

pub use data::{LabeledDataset, MixSpec, OutKind, Provenance, TrafficSet};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use metrics::{EvalSets, MetricsReport};
pub use nn::{Activation, Batch, Gradients, Model, ModelSpec};
pub use regularizers::{BetaMode, LossBreakdown, RegularizerConfig, SquashForm};
pub use trainer::{TrainConfig, TrainHistory};
