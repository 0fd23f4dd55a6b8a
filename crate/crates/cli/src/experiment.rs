//! Multi-seed experiment execution and artifact emission.
//!
//! A single experiment executes `runs` independent repetitions with seeds
//! `base_seed + i` and writes, atomically (temp file + rename):
//!
//! * `records.csv` — one row per epoch (or generation) per run,
//! * `summary.txt` — the resolved config and the aggregate table,
//! * `config.resolved` — the canonical config text,
//! * `best.net` — topology runs only: the best genome in the network text
//!   format with its training block as comments.
//!
//! Reruns with the same config and a single worker thread produce a
//! byte-identical `records.csv` up to the wall-clock column.

use crate::config::{DataSource, ExperimentConfig, ExperimentKind};
use crate::error::{CliError, CliResult};
use crate::report::{aggregate, render_table, write_records};
use evotrain_core::data::{
    load_evt1_images, load_idx, normalize, subsample, synthetic_blobs, to_grayscale, Dataset,
};
use evotrain_core::rng::derive;
use evotrain_core::schedule::scheduled_training_run;
use evotrain_core::topo::{
    mu_plus_lambda_run, random_search_baseline, EvalOptions, TopoLattice, TopoRunOutcome,
};
use evotrain_core::train::train_gradient;
use evotrain_core::{accuracy, aggregate_loss, RunRecord};
use rayon::prelude::*;
use std::path::Path;
use std::time::Instant;

const ROLE_SYNTH_TRAIN: u64 = 0xDA7A;
const ROLE_SYNTH_TEST: u64 = 0xDA7B;
const ROLE_SUB_TRAIN: u64 = 0x5AB0;
const ROLE_SUB_TEST: u64 = 0x5AB1;

/// Per-run result of a topology experiment.
#[derive(Debug, Clone)]
pub struct TopoRunSummary {
    pub run_id: u32,
    pub seed: u64,
    /// Validation accuracy of the best genome during the search.
    pub best_fitness: f64,
    pub model_params: u64,
    /// Metrics of the best genome after the full-training-set retrain.
    pub test_acc: f64,
    pub test_loss: f64,
    pub retrain_train_acc: f64,
    pub retrain_train_loss: f64,
    /// The genome in network text format plus its training block.
    pub genome_text: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub records: Vec<RunRecord>,
    /// One entry per run for topology experiments, empty otherwise.
    pub topo: Vec<TopoRunSummary>,
}

/// Loads, converts and subsamples the train/test datasets.
pub fn load_datasets(cfg: &ExperimentConfig) -> CliResult<(Dataset, Dataset)> {
    let d = &cfg.data;
    let (mut train, mut test) = match d.source {
        DataSource::Synthetic => (
            synthetic_blobs(
                d.classes,
                d.per_class,
                d.image_hw,
                derive(cfg.base_seed, ROLE_SYNTH_TRAIN),
            )
            .map_err(CliError::data)?,
            synthetic_blobs(
                d.classes,
                d.test_per_class,
                d.image_hw,
                derive(cfg.base_seed, ROLE_SYNTH_TEST),
            )
            .map_err(CliError::data)?,
        ),
        DataSource::Idx | DataSource::Evt1 => {
            let load = |imgs: &Path, labs: &Path| -> CliResult<_> {
                let raw = match d.source {
                    DataSource::Idx => load_idx(imgs, labs).map_err(CliError::data)?,
                    _ => load_evt1_images(imgs, labs).map_err(CliError::data)?,
                };
                let raw = if d.grayscale && raw.dims[3] == 3 {
                    to_grayscale(&raw).map_err(CliError::data)?
                } else {
                    raw
                };
                Ok(raw)
            };
            let raw_train = load(&d.train_images, &d.train_labels)?;
            let raw_test = load(&d.test_images, &d.test_labels)?;
            let classes = if d.num_classes > 0 {
                d.num_classes
            } else {
                let m = |r: &evotrain_core::data::RawImageSet| {
                    r.labels.iter().copied().max().unwrap_or(0) as usize
                };
                m(&raw_train).max(m(&raw_test)) + 1
            };
            (
                normalize(&raw_train, Some(classes)).map_err(CliError::data)?,
                normalize(&raw_test, Some(classes)).map_err(CliError::data)?,
            )
        }
    };
    if d.subsample_train > 0 && d.subsample_train < train.len() {
        train = subsample(
            &train,
            d.subsample_train,
            derive(cfg.base_seed, ROLE_SUB_TRAIN),
            d.stratified,
        )
        .map_err(CliError::data)?;
    }
    if d.subsample_test > 0 && d.subsample_test < test.len() {
        test = subsample(
            &test,
            d.subsample_test,
            derive(cfg.base_seed, ROLE_SUB_TEST),
            d.stratified,
        )
        .map_err(CliError::data)?;
    }
    Ok((train, test))
}

fn run_one(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    run_id: u32,
) -> CliResult<(Vec<RunRecord>, Option<TopoRunSummary>)> {
    let seed = cfg.base_seed + run_id as u64;
    match cfg.kind {
        ExperimentKind::GradientTrain => {
            let net = cfg.network.as_ref().expect("checked at load");
            let mut tc = cfg.train.clone();
            tc.seed = seed;
            let (_, mut records) =
                train_gradient(net, train, test, &tc).map_err(CliError::solver)?;
            for r in &mut records {
                r.run_id = run_id;
            }
            Ok((records, None))
        }
        ExperimentKind::ShadeIlsTrain => {
            let net = cfg.network.as_ref().expect("checked at load");
            let mut sc = cfg.shade.clone();
            sc.seed = seed;
            let (_, mut records) =
                scheduled_training_run(net, train, test, &sc).map_err(CliError::solver)?;
            for r in &mut records {
                r.run_id = run_id;
            }
            Ok((records, None))
        }
        ExperimentKind::TopoEvolve | ExperimentKind::RandomTopo => {
            let mut ea = cfg.topo.clone();
            ea.seed = seed;
            let opts = EvalOptions {
                fast: cfg.topo_fast,
                seed,
            };
            let lattice = TopoLattice::default();
            let started = Instant::now();
            let (outcome, solver) = match cfg.kind {
                ExperimentKind::TopoEvolve => (
                    mu_plus_lambda_run(train, &ea, &lattice, &opts).map_err(CliError::solver)?,
                    "topo-ea",
                ),
                _ => (
                    random_search_baseline(train, &ea, &lattice, &opts)
                        .map_err(CliError::solver)?,
                    "topo-random",
                ),
            };
            let records = topo_records(&outcome, &ea, solver, run_id, seed, started);
            let summary = topo_summary(&outcome, train, test, run_id, seed)?;
            Ok((records, Some(summary)))
        }
    }
}

/// One row per generation. The `train_*` columns carry the run-best
/// genome's final training metrics on its 80% subset; the `test_*` columns
/// carry its held-out validation metrics (the search never touches the test
/// set).
fn topo_records(
    outcome: &TopoRunOutcome,
    ea: &evotrain_core::topo::EaConfig,
    solver: &str,
    run_id: u32,
    seed: u64,
    started: Instant,
) -> Vec<RunRecord> {
    outcome
        .trace
        .iter()
        .map(|stat| RunRecord {
            run_id,
            seed,
            solver: solver.to_string(),
            schedule: "-".to_string(),
            epoch: stat.generation + 1,
            train_loss: stat.best.metrics.train_loss,
            train_acc: stat.best.metrics.train_acc,
            test_loss: stat.best.metrics.val_loss,
            test_acc: stat.best_fitness,
            evals_cumulative: ea.mu as u64 + stat.generation as u64 * ea.lambda as u64,
            wall_ms: started.elapsed().as_millis() as u64,
        })
        .collect()
}

fn topo_summary(
    outcome: &TopoRunOutcome,
    train: &Dataset,
    test: &Dataset,
    run_id: u32,
    seed: u64,
) -> CliResult<TopoRunSummary> {
    let net = outcome.best.genome.to_network(train.example_shape());
    let test_acc = accuracy(&net, &outcome.retrained, test).map_err(CliError::solver)?;
    let test_loss = aggregate_loss(&net, &outcome.retrained, test).map_err(CliError::solver)?;
    let t = &outcome.best.genome.training;
    let mut genome_text = format!(
        "# training: optimizer={} epochs={} batch_size={}\n",
        t.optimizer.name(),
        t.epochs,
        t.batch_size
    );
    genome_text.push_str(&format!(
        "# search fitness (validation accuracy): {:.6}\n",
        outcome.best.fitness
    ));
    genome_text.push_str(&format!("# retrained test accuracy: {test_acc:.6}\n"));
    genome_text.push_str(&net.to_text());
    Ok(TopoRunSummary {
        run_id,
        seed,
        best_fitness: outcome.best.fitness,
        model_params: outcome.best.model_params,
        test_acc,
        test_loss,
        retrain_train_loss: outcome.retrained_train.0,
        retrain_train_acc: outcome.retrained_train.1,
        genome_text,
    })
}

/// Writes `content` to `path` via a temp file in the same directory.
pub fn atomic_write(path: &Path, content: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, content)
        .and_then(|_| std::fs::rename(&tmp, path))
        .map_err(|e| {
            let _ = std::fs::remove_file(&tmp);
            CliError::Data(format!("writing {}: {e}", path.display()))
        })
}

/// Runs the whole experiment and writes all artifacts under
/// `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> CliResult<ExperimentOutcome> {
    let (train, test) = load_datasets(cfg)?;
    let results: Vec<CliResult<(Vec<RunRecord>, Option<TopoRunSummary>)>> = (0..cfg.runs)
        .into_par_iter()
        .map(|run_id| run_one(cfg, &train, &test, run_id))
        .collect();
    let mut records = Vec::new();
    let mut topo = Vec::new();
    for res in results {
        let (recs, summary) = res?;
        records.extend(recs);
        if let Some(s) = summary {
            topo.push(s);
        }
    }

    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::Data(format!("creating {}: {e}", cfg.out_dir.display())))?;
    write_records(&records, &cfg.out_dir.join("records.csv"))?;
    atomic_write(
        &cfg.out_dir.join("config.resolved"),
        cfg.resolved_text().as_bytes(),
    )?;

    let mut summary = String::new();
    summary.push_str("== resolved config ==\n");
    summary.push_str(&cfg.resolved_text());
    summary.push_str("\n== results ==\n");
    summary.push_str(&render_table(&aggregate(&records)?));
    if !topo.is_empty() {
        summary.push_str("\n== best genomes per run ==\n");
        for s in &topo {
            summary.push_str(&format!(
                "run {} (seed {}): fitness {:.4}, params {}, retrained test acc {:.4}, test loss {:.4}\n",
                s.run_id, s.seed, s.best_fitness, s.model_params, s.test_acc, s.test_loss
            ));
        }
        // the run whose best genome scored highest in validation
        let best = topo
            .iter()
            .max_by(|a, b| {
                a.best_fitness
                    .total_cmp(&b.best_fitness)
                    .then(b.run_id.cmp(&a.run_id))
            })
            .expect("non-empty");
        atomic_write(&cfg.out_dir.join("best.net"), best.genome_text.as_bytes())?;
    }
    atomic_write(&cfg.out_dir.join("summary.txt"), summary.as_bytes())?;

    Ok(ExperimentOutcome { records, topo })
}
