//! Shared fixtures for the criterion benches.

use evotrain_core::data::{synthetic_blobs, Dataset};
use evotrain_core::net::{zoo, NetworkSpec};
use evotrain_core::params::{glorot_init, ParameterVector};

/// The 19k-parameter reference model with a synthetic stand-in dataset.
pub fn mnist_model_fixture(examples_per_class: usize) -> (NetworkSpec, ParameterVector, Dataset) {
    let net = zoo::mnist();
    let params = glorot_init(&net, 7).expect("valid model");
    let data = synthetic_blobs(10, examples_per_class, 28, 11).expect("valid data");
    (net, params, data)
}
