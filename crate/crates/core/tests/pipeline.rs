//! End-to-end composition of the public API on synthetic data: gradient
//! training, scheduled metaheuristic training and a miniature topology
//! search all run against the same dataset.

use evotrain_core::data::{split_train_val, synthetic_blobs};
use evotrain_core::net::{LayerSpec, LossKind, NetworkSpec};
use evotrain_core::optim::OptimizerKind;
use evotrain_core::schedule::{scheduled_training_run, ScheduleConfig, ScheduleKind};
use evotrain_core::topo::{mu_plus_lambda_run, EaConfig, EvalOptions, TopoLattice};
use evotrain_core::train::{train_gradient, TrainingConfig};
use evotrain_core::{accuracy, aggregate_loss};

fn small_net() -> NetworkSpec {
    NetworkSpec::new(
        [10, 10, 1],
        vec![
            LayerSpec::Conv2D { filters: 4, kh: 3, kw: 3 },
            LayerSpec::MaxPool2x2,
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 12 },
            LayerSpec::Dense { units: 3 },
        ],
        LossKind::CategoricalCe,
    )
}

#[test]
fn gradient_training_learns_blobs() {
    let data = synthetic_blobs(3, 80, 10, 1).unwrap();
    let (train, test) = split_train_val(&data, 0.8, 2).unwrap();
    let cfg = TrainingConfig {
        optimizer: OptimizerKind::Adam,
        learning_rate: 0.005,
        batch_size: 48,
        epochs: 12,
        seed: 3,
    };
    let net = small_net();
    let (params, records) = train_gradient(&net, &train, &test, &cfg).unwrap();
    let last = records.last().unwrap();
    assert!(last.test_acc >= 0.9, "test accuracy {}", last.test_acc);
    // the returned parameters reproduce the recorded metrics
    let acc = accuracy(&net, &params, &test).unwrap();
    assert_eq!(acc, last.test_acc);
    let loss = aggregate_loss(&net, &params, &test).unwrap();
    assert!((loss - last.test_loss).abs() < 1e-12);
}

#[test]
fn scheduled_training_improves_over_init_and_respects_budget() {
    let data = synthetic_blobs(3, 40, 10, 4).unwrap();
    let (train, test) = split_train_val(&data, 0.8, 5).unwrap();
    let net = small_net();
    let cfg = ScheduleConfig {
        kind: ScheduleKind::AUp,
        n_eval: 30,
        epochs: 3,
        np: 6,
        seed: 8,
        ..Default::default()
    };
    let (params, records) = scheduled_training_run(&net, &train, &test, &cfg).unwrap();
    assert_eq!(records.len(), 3);
    // L = 3 parameterized layers
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r.evals_cumulative, (i as u64 + 1) * 3 * 30);
    }
    let init_loss = {
        let p = evotrain_core::glorot_init(
            &net,
            evotrain_core::rng::derive(8, 0x01),
        )
        .unwrap();
        aggregate_loss(&net, &p, &train).unwrap()
    };
    let final_loss = aggregate_loss(&net, &params, &train).unwrap();
    assert!(
        final_loss <= init_loss,
        "scheduled run regressed: {final_loss} > {init_loss}"
    );
    assert!((final_loss - records.last().unwrap().train_loss).abs() < 1e-12);
}

#[test]
fn topology_search_beats_chance_on_blobs() {
    let data = synthetic_blobs(3, 50, 8, 6).unwrap();
    let ea = EaConfig {
        lambda: 4,
        mu: 2,
        ngen: 2,
        seed: 5,
        ..Default::default()
    };
    let lat = TopoLattice {
        filters: vec![4],
        kernels: vec![2, 3],
        units: vec![10, 20],
        dropout: vec![0.1],
        epochs: vec![4],
        batch_sizes: vec![100],
        reshape_weight: 0.05,
    };
    let out = mu_plus_lambda_run(
        &data,
        &ea,
        &lat,
        &EvalOptions {
            fast: true,
            seed: 5,
        },
    )
    .unwrap();
    assert!(out.best.fitness > 0.34, "fitness {}", out.best.fitness);
    assert!(out.evaluations <= 2 + 4 * 2);
    // retrained parameters classify the training data at least as well as
    // chance
    let net = out.best.genome.to_network(data.example_shape());
    let acc = accuracy(&net, &out.retrained, &data).unwrap();
    assert!(acc > 0.34, "retrained accuracy {acc}");
}
