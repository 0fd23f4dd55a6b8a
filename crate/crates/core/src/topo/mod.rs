//! Evolutionary search over network topologies and training hyper-parameters.
//!
//! Genomes are layer chains constrained by a two-state machine over tensor
//! ranks (spatial vs flat) plus a training-hyper-parameter block, evolved by
//! a (lambda+mu) strategy with an evaluation-budget-matched random-search
//! baseline.

mod evolve;
mod genome;

pub use evolve::{
    evaluate_genome, mu_plus_lambda_run, random_search_baseline, EaConfig, EvalMetrics,
    EvalOptions, EvaluatedGenome, GenerationStat, TopoRunOutcome,
};
pub use genome::{
    crossover, mutate, sample_genome, validate_genome, validate_genome_with, Genome,
    GenomeTraining, TopoLattice,
};
