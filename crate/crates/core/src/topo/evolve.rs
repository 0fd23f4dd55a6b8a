//! (lambda+mu) evolution over genomes, and the budget-matched random-search
//! baseline.

use super::genome::{
    crossover, mutate, sample_genome, validate_genome_with, Genome, TopoLattice,
};
use crate::data::{split_train_val, Dataset};
use crate::error::{Error, Result};
use crate::forward::{accuracy, aggregate_loss};
use crate::params::ParameterVector;
use crate::rng;
use crate::train::{train_gradient_inner, TrainingConfig};
use rand::Rng;
use rayon::prelude::*;
use std::collections::HashMap;
use std::time::Instant;

/// Evolution strategy parameters; defaults follow the reference
/// configuration (10 offspring, 5 parents, all operator probabilities 0.5,
/// 20 generations, stop after 5 without improvement).
#[derive(Debug, Clone)]
pub struct EaConfig {
    pub lambda: usize,
    pub mu: usize,
    pub cxpb: f64,
    pub mutpb: f64,
    pub newpb: f64,
    pub ngen: u32,
    pub stagnation_limit: u32,
    pub seed: u64,
}

impl Default for EaConfig {
    fn default() -> Self {
        Self {
            lambda: 10,
            mu: 5,
            cxpb: 0.5,
            mutpb: 0.5,
            newpb: 0.5,
            ngen: 20,
            stagnation_limit: 5,
            seed: 0,
        }
    }
}

impl EaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mu == 0 || self.lambda < self.mu {
            return Err(Error::config(format!(
                "need lambda >= mu >= 1, got lambda={} mu={}",
                self.lambda, self.mu
            )));
        }
        for (name, p) in [("cxpb", self.cxpb), ("mutpb", self.mutpb), ("newpb", self.newpb)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} {p} outside [0, 1]")));
            }
        }
        if self.cxpb + self.mutpb > 1.0 {
            return Err(Error::config(format!(
                "cxpb + mutpb = {} exceeds 1",
                self.cxpb + self.mutpb
            )));
        }
        if self.ngen == 0 {
            return Err(Error::config("ngen must be >= 1".to_string()));
        }
        Ok(())
    }

    /// The evaluation budget a full run would consume; the random baseline
    /// always evaluates exactly this many genomes.
    pub fn evaluation_budget(&self) -> u64 {
        self.mu as u64 + self.lambda as u64 * self.ngen as u64
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Cap search-time training at 10 epochs.
    pub fast: bool,
    /// Run-level seed: fixes the 80/20 split and derives per-genome
    /// training seeds.
    pub seed: u64,
}

/// Loss/accuracy of the trained candidate on its own train subset and the
/// held-out validation subset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct EvaluatedGenome {
    pub genome: Genome,
    /// Validation accuracy (the selection fitness).
    pub fitness: f64,
    pub model_params: u64,
    pub wall_ms: u64,
    pub metrics: EvalMetrics,
}

/// Trains the genome on an internal seeded 80/20 split of `data` and scores
/// it by validation accuracy. Divergent training (non-finite values)
/// surfaces as fitness 0. In fast mode search-time training is capped at 10
/// epochs. Deterministic: the split and the training seed derive from
/// `opts.seed` and the genome fingerprint.
pub fn evaluate_genome(genome: &Genome, data: &Dataset, opts: &EvalOptions) -> Result<EvaluatedGenome> {
    let input_shape = data.example_shape();
    let net = genome.to_network(input_shape);
    let model_params = net.count_params()?;
    let started = Instant::now();
    let (train, val) = split_train_val(data, 0.8, rng::derive(opts.seed, 0xEA5))?;
    let epochs = if opts.fast {
        genome.training.epochs.min(10)
    } else {
        genome.training.epochs
    };
    let cfg = TrainingConfig {
        optimizer: genome.training.optimizer,
        learning_rate: genome.training.optimizer.default_learning_rate(),
        batch_size: genome.training.batch_size.min(train.len()),
        epochs,
        seed: rng::derive(opts.seed, genome.fingerprint(input_shape)),
    };
    match train_gradient_inner(&net, &train, &val, &cfg, usize::MAX) {
        Ok((params, records)) => {
            let last = records.last().expect("final epoch is measured");
            let _ = params;
            Ok(EvaluatedGenome {
                genome: genome.clone(),
                fitness: last.test_acc,
                model_params,
                wall_ms: started.elapsed().as_millis() as u64,
                metrics: EvalMetrics {
                    train_loss: last.train_loss,
                    train_acc: last.train_acc,
                    val_loss: last.test_loss,
                },
            })
        }
        // divergence is a property of the candidate, not a run failure
        Err(Error::Training(_)) => Ok(EvaluatedGenome {
            genome: genome.clone(),
            fitness: 0.0,
            model_params,
            wall_ms: started.elapsed().as_millis() as u64,
            metrics: EvalMetrics {
                train_loss: f64::MAX,
                train_acc: 0.0,
                val_loss: f64::MAX,
            },
        }),
        Err(e) => Err(e),
    }
}

/// Best-so-far and pool statistics after one generation (or one
/// budget-equivalent block of random search).
#[derive(Debug, Clone)]
pub struct GenerationStat {
    pub generation: u32,
    /// Best fitness seen so far in the run.
    pub best_fitness: f64,
    /// Mean fitness of the ranked pool of this generation.
    pub mean_fitness: f64,
    /// Snapshot of the run-best candidate.
    pub best: EvaluatedGenome,
}

#[derive(Debug, Clone)]
pub struct TopoRunOutcome {
    pub best: EvaluatedGenome,
    /// Parameters of the best genome retrained on the full training data.
    pub retrained: ParameterVector,
    /// Full-training-data metrics of the retrained model (loss, accuracy).
    pub retrained_train: (f64, f64),
    pub trace: Vec<GenerationStat>,
    /// Genomes evaluated (cache hits included).
    pub evaluations: u64,
}

struct EvalCache {
    map: HashMap<u64, EvaluatedGenome>,
}

impl EvalCache {
    fn new() -> Self {
        Self { map: HashMap::new() }
    }

    /// Evaluates all genomes, reusing cached fitnesses; misses run in
    /// parallel and are merged in index order.
    fn evaluate_all(
        &mut self,
        genomes: &[Genome],
        data: &Dataset,
        opts: &EvalOptions,
    ) -> Result<Vec<EvaluatedGenome>> {
        let shape = data.example_shape();
        let mut misses: Vec<(u64, Genome)> = Vec::new();
        for g in genomes {
            let fp = g.fingerprint(shape);
            if !self.map.contains_key(&fp) && !misses.iter().any(|(h, _)| *h == fp) {
                misses.push((fp, g.clone()));
            }
        }
        let fresh: Vec<Result<EvaluatedGenome>> = misses
            .par_iter()
            .map(|(_, g)| evaluate_genome(g, data, opts))
            .collect();
        for ((fp, _), res) in misses.into_iter().zip(fresh) {
            self.map.insert(fp, res?);
        }
        Ok(genomes
            .iter()
            .map(|g| self.map[&g.fingerprint(shape)].clone())
            .collect())
    }
}

fn rank_key(e: &EvaluatedGenome, shape: [usize; 3]) -> (f64, u64) {
    (e.fitness, e.genome.fingerprint(shape))
}

/// Runs the (lambda+mu) strategy: `mu` random parents, then per generation
/// `lambda` offspring (crossover with probability `cxpb`, else mutation,
/// else clone-and-mutate), selection of the best `mu` from parents plus
/// offspring. Stops at `ngen` or after `stagnation_limit` generations
/// without best-fitness improvement. The returned best genome is retrained
/// on the whole of `data`.
pub fn mu_plus_lambda_run(
    data: &Dataset,
    ea: &EaConfig,
    lat: &TopoLattice,
    opts: &EvalOptions,
) -> Result<TopoRunOutcome> {
    ea.validate()?;
    let shape = data.example_shape();
    let classes = data.num_classes;
    let mut gen_rng = rng::rng_for(ea.seed, crate::params::roles::TOPO);
    let mut cache = EvalCache::new();

    let parents_g: Vec<Genome> = (0..ea.mu)
        .map(|_| sample_genome(&mut gen_rng, shape, classes, lat))
        .collect();
    let mut parents = cache.evaluate_all(&parents_g, data, opts)?;
    parents.sort_by(|a, b| {
        rank_key(b, shape)
            .0
            .total_cmp(&rank_key(a, shape).0)
            .then(rank_key(a, shape).1.cmp(&rank_key(b, shape).1))
    });
    let mut evaluations = ea.mu as u64;
    let mut best = parents[0].clone();
    let mut trace = vec![GenerationStat {
        generation: 0,
        best_fitness: best.fitness,
        mean_fitness: parents.iter().map(|p| p.fitness).sum::<f64>() / parents.len() as f64,
        best: best.clone(),
    }];
    let mut stagnation = 0u32;

    for generation in 1..=ea.ngen {
        let mut offspring = Vec::with_capacity(ea.lambda);
        for _ in 0..ea.lambda {
            let u: f64 = gen_rng.random();
            let child = if u < ea.cxpb {
                let i = gen_rng.random_range(0..parents.len());
                let j = if parents.len() > 1 {
                    loop {
                        let j = gen_rng.random_range(0..parents.len());
                        if j != i {
                            break j;
                        }
                    }
                } else {
                    i
                };
                crossover(
                    &parents[i].genome,
                    &parents[j].genome,
                    shape,
                    classes,
                    lat,
                    &mut gen_rng,
                )
            } else {
                // mutation, and the clone branch also mutates so no offspring
                // is a verbatim copy
                let i = gen_rng.random_range(0..parents.len());
                mutate(&parents[i].genome, ea.newpb, shape, classes, lat, &mut gen_rng)
            };
            debug_assert!(validate_genome_with(&child, shape, classes, lat).is_empty());
            offspring.push(child);
        }
        let offspring = cache.evaluate_all(&offspring, data, opts)?;
        evaluations += ea.lambda as u64;

        let mut pool: Vec<EvaluatedGenome> = parents.into_iter().chain(offspring).collect();
        pool.sort_by(|a, b| {
            b.fitness
                .total_cmp(&a.fitness)
                .then(rank_key(a, shape).1.cmp(&rank_key(b, shape).1))
        });
        let mean_fitness = pool.iter().map(|p| p.fitness).sum::<f64>() / pool.len() as f64;
        parents = pool.into_iter().take(ea.mu).collect();

        if parents[0].fitness > best.fitness {
            best = parents[0].clone();
            stagnation = 0;
        } else {
            stagnation += 1;
        }
        trace.push(GenerationStat {
            generation,
            best_fitness: best.fitness,
            mean_fitness,
            best: best.clone(),
        });
        if stagnation >= ea.stagnation_limit {
            break;
        }
    }

    let (retrained, retrained_train) = retrain_on_full(&best.genome, data, opts)?;
    Ok(TopoRunOutcome {
        best,
        retrained,
        retrained_train,
        trace,
        evaluations,
    })
}

/// Evaluates `mu + lambda * ngen` independently sampled genomes (the budget
/// the evolutionary run would consume) and returns the best, retrained on
/// the whole of `data`. Trace entries mirror the evolutionary run: one for
/// the first `mu` draws, then one per `lambda`-sized block.
pub fn random_search_baseline(
    data: &Dataset,
    ea: &EaConfig,
    lat: &TopoLattice,
    opts: &EvalOptions,
) -> Result<TopoRunOutcome> {
    ea.validate()?;
    let shape = data.example_shape();
    let classes = data.num_classes;
    let mut gen_rng = rng::rng_for(ea.seed, crate::params::roles::TOPO);
    let mut cache = EvalCache::new();
    let mut evaluations = 0u64;
    let mut best: Option<EvaluatedGenome> = None;
    let mut trace = Vec::with_capacity(ea.ngen as usize + 1);

    for generation in 0..=ea.ngen {
        let block = if generation == 0 { ea.mu } else { ea.lambda };
        let genomes: Vec<Genome> = (0..block)
            .map(|_| sample_genome(&mut gen_rng, shape, classes, lat))
            .collect();
        let evaluated = cache.evaluate_all(&genomes, data, opts)?;
        evaluations += block as u64;
        let mean_fitness =
            evaluated.iter().map(|e| e.fitness).sum::<f64>() / evaluated.len() as f64;
        for e in evaluated {
            let better = best
                .as_ref()
                .map(|b| e.fitness > b.fitness)
                .unwrap_or(true);
            if better {
                best = Some(e);
            }
        }
        let best_now = best.clone().expect("non-empty block");
        trace.push(GenerationStat {
            generation,
            best_fitness: best_now.fitness,
            mean_fitness,
            best: best_now,
        });
    }
    let best = best.expect("non-empty run");
    debug_assert_eq!(evaluations, ea.evaluation_budget());
    let (retrained, retrained_train) = retrain_on_full(&best.genome, data, opts)?;
    Ok(TopoRunOutcome {
        best,
        retrained,
        retrained_train,
        trace,
        evaluations,
    })
}

/// The final protocol step: the winning genome is retrained on the whole
/// training data (no fast-mode cap).
fn retrain_on_full(
    genome: &Genome,
    data: &Dataset,
    opts: &EvalOptions,
) -> Result<(ParameterVector, (f64, f64))> {
    let shape = data.example_shape();
    let net = genome.to_network(shape);
    let cfg = TrainingConfig {
        optimizer: genome.training.optimizer,
        learning_rate: genome.training.optimizer.default_learning_rate(),
        batch_size: genome.training.batch_size.min(data.len()),
        epochs: genome.training.epochs,
        seed: rng::derive(opts.seed, 0xF1AA ^ genome.fingerprint(shape)),
    };
    match train_gradient_inner(&net, data, data, &cfg, usize::MAX) {
        Ok((params, records)) => {
            let last = records.last().expect("final epoch is measured");
            Ok((params, (last.train_loss, last.train_acc)))
        }
        Err(Error::Training(_)) => {
            // fall back to the untrained initialization; the candidate is
            // already known to diverge
            let params = crate::params::glorot_init(&net, cfg.seed)?;
            let loss = aggregate_loss(&net, &params, data)?;
            let acc = accuracy(&net, &params, data)?;
            Ok((params, (loss, acc)))
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_blobs;
    use super::super::genome::minimal_genome;

    fn tiny_lattice() -> TopoLattice {
        // small nets and few epochs keep these tests quick
        TopoLattice {
            filters: vec![4],
            kernels: vec![2, 3],
            units: vec![10, 20],
            dropout: vec![0.1, 0.2],
            epochs: vec![2, 4],
            batch_sizes: vec![100],
            reshape_weight: 0.05,
        }
    }

    fn tiny_ea(seed: u64) -> EaConfig {
        EaConfig {
            lambda: 4,
            mu: 2,
            ngen: 3,
            stagnation_limit: 5,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn constant_predictor_scores_base_rate() {
        // a genome whose net collapses to one class on a balanced set
        // scores about 1/num_classes
        let data = synthetic_blobs(10, 12, 8, 3).unwrap();
        let g = minimal_genome(10, &tiny_lattice(), &mut rng::rng_for(0, 0));
        let e = evaluate_genome(
            &g,
            &data,
            &EvalOptions {
                fast: true,
                seed: 1,
            },
        )
        .unwrap();
        assert!((0.0..=1.0).contains(&e.fitness));
        assert_eq!(
            e.model_params,
            g.to_network(data.example_shape()).count_params().unwrap()
        );
    }

    #[test]
    fn evaluation_is_deterministic() {
        let data = synthetic_blobs(3, 20, 8, 4).unwrap();
        let lat = tiny_lattice();
        let g = sample_genome(&mut rng::rng_for(5, 1), [8, 8, 1], 3, &lat);
        let opts = EvalOptions {
            fast: true,
            seed: 9,
        };
        let a = evaluate_genome(&g, &data, &opts).unwrap();
        let b = evaluate_genome(&g, &data, &opts).unwrap();
        assert_eq!(a.fitness, b.fitness);
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn ea_trace_is_monotone_and_budget_counted() {
        let data = synthetic_blobs(2, 30, 6, 5).unwrap();
        let out = mu_plus_lambda_run(
            &data,
            &tiny_ea(2),
            &tiny_lattice(),
            &EvalOptions {
                fast: true,
                seed: 2,
            },
        )
        .unwrap();
        let mut prev = 0.0;
        for stat in &out.trace {
            assert!(stat.best_fitness >= prev);
            prev = stat.best_fitness;
        }
        assert!(out.evaluations <= 2 + 4 * 3);
        assert!(out.best.fitness >= 0.5, "blobs are separable");
    }

    #[test]
    fn random_baseline_budget_parity() {
        let data = synthetic_blobs(2, 20, 6, 6).unwrap();
        let ea = tiny_ea(3);
        let out = random_search_baseline(
            &data,
            &ea,
            &tiny_lattice(),
            &EvalOptions {
                fast: true,
                seed: 3,
            },
        )
        .unwrap();
        assert_eq!(out.evaluations, ea.evaluation_budget());
        assert_eq!(out.evaluations, 2 + 4 * 3);
        // the reported best is the max over everything evaluated
        let max_trace = out
            .trace
            .iter()
            .map(|s| s.best_fitness)
            .fold(0.0f64, f64::max);
        assert_eq!(out.best.fitness, max_trace);
    }

    #[test]
    fn stagnation_stops_early() {
        let data = synthetic_blobs(2, 16, 6, 7).unwrap();
        let ea = EaConfig {
            lambda: 2,
            mu: 2,
            ngen: 30,
            stagnation_limit: 2,
            seed: 11,
            ..Default::default()
        };
        let out = mu_plus_lambda_run(
            &data,
            &ea,
            &tiny_lattice(),
            &EvalOptions {
                fast: true,
                seed: 4,
            },
        )
        .unwrap();
        // must stop well before 30 generations on such a tiny problem
        assert!((out.trace.len() as u32) < 31);
        let gens = out.trace.last().unwrap().generation;
        assert!(gens < 30, "ran all {gens} generations without stopping");
    }
}
