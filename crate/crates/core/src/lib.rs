//! Core library of the `evotrain` benchmark suite.
//!
//! The crate bundles everything needed to train small convolutional networks
//! two ways and to compare the results:
//!
//! * a deterministic f64 neural engine ([`net`], [`params`], [`forward`]),
//! * reverse-mode gradients and the six classic first-order optimizers
//!   ([`grad`], [`optim`], [`train`]),
//! * SHADE and SHADE-ILS for large-scale black-box optimization
//!   ([`shade`], [`lbfgs`], [`mts`], [`ils`]),
//! * layer-wise optimization schedules that make metaheuristic epochs
//!   comparable to gradient epochs ([`schedule`]),
//! * a (lambda+mu) evolutionary search over network topologies constrained by
//!   a layer-transition state machine ([`topo`]),
//! * dataset ingestion and synthetic data ([`data`]).
//!
//! All seeded entry points are reproducible: the same seed yields bit-identical
//! results regardless of worker count, because every parallel reduction is
//! applied in a fixed order.

pub mod data;
pub mod error;
pub mod forward;
pub mod grad;
pub mod ils;
pub mod lbfgs;
pub mod mts;
pub mod net;
pub mod optim;
pub mod params;
pub mod records;
pub mod rng;
pub mod schedule;
pub mod shade;
pub mod tensor;
pub mod topo;
pub mod train;

pub use data::Dataset;
pub use error::{Error, Result};
pub use forward::{accuracy, aggregate_loss, forward, Mode};
pub use net::{LayerSpec, LossKind, NetworkSpec, Shape};
pub use params::{glorot_init, LayerLayout, ParameterVector, Segment};
pub use records::RunRecord;
pub use tensor::Tensor;
pub use train::{train_gradient, TrainingConfig};
