//! Success-history based adaptive differential evolution over flat real
//! vectors (minimization).
//!
//! Per generation, each member samples F from a Cauchy around a random
//! success-history slot (resampled while non-positive, clamped at 1) and CR
//! from a normal with sigma 0.1 (clamped to [0,1]), builds a
//! current-to-pbest/1 mutant with r2 drawn from population plus archive,
//! applies binomial crossover with one forced dimension, and repairs bound
//! violations by reflecting to the midpoint between parent and bound.
//! Greedy replacement pushes displaced parents to a bounded archive; the
//! success history is updated with a weighted Lehmer mean for F and a
//! weighted arithmetic mean for CR.
//!
//! Trial vectors are generated sequentially from the state's generator, then
//! evaluated (possibly in parallel); replacement and memory updates apply in
//! member-index order, so results are independent of the worker count.

use crate::error::{Error, Result};
use crate::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, Normal};
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct Individual {
    pub position: Vec<f64>,
    pub fitness: f64,
}

/// Optional seeding of the initial population around an incumbent.
#[derive(Debug, Clone)]
pub struct SeededInit {
    pub center: Vec<f64>,
    pub noise_width: f64,
}

#[derive(Debug)]
pub struct Shade {
    population: Vec<Individual>,
    archive: Vec<Vec<f64>>,
    memory_f: Vec<f64>,
    memory_cr: Vec<f64>,
    memory_index: usize,
    eval_count: u64,
    bounds: Vec<(f64, f64)>,
    rng: ChaCha8Rng,
    np: usize,
}

impl Shade {
    /// Initializes and evaluates the population: uniform in bounds, or the
    /// incumbent plus uniform perturbations when `seeded` is given (member 0
    /// is the exact incumbent). Costs `np` evaluations.
    pub fn init<F>(
        objective: &F,
        dims: usize,
        np: usize,
        bounds: &[(f64, f64)],
        seed: u64,
        seeded: Option<&SeededInit>,
        max_evals: u64,
    ) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        if np < 4 {
            return Err(Error::config(format!("population size {np} below minimum 4")));
        }
        if bounds.len() != dims {
            return Err(Error::config(format!(
                "{} bounds for {dims} dimensions",
                bounds.len()
            )));
        }
        if bounds.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
            return Err(Error::config("bounds must be finite with lo < hi".to_string()));
        }
        if (np as u64) > max_evals {
            return Err(Error::budget(format!(
                "population of {np} exceeds evaluation budget {max_evals}"
            )));
        }
        let mut gen = rng::rng_for(seed, crate::params::roles::SOLVER);
        let mut positions = Vec::with_capacity(np);
        for member in 0..np {
            let pos: Vec<f64> = match seeded {
                Some(s) if member == 0 => s.center.clone(),
                Some(s) => s
                    .center
                    .iter()
                    .zip(bounds)
                    .map(|(&c, &(lo, hi))| {
                        (c + gen.random_range(-s.noise_width..s.noise_width)).clamp(lo, hi)
                    })
                    .collect(),
                None => bounds
                    .iter()
                    .map(|&(lo, hi)| gen.random_range(lo..hi))
                    .collect(),
            };
            positions.push(pos);
        }
        let fitnesses: Vec<f64> = positions.par_iter().map(|p| objective(p)).collect();
        let population = positions
            .into_iter()
            .zip(fitnesses)
            .map(|(position, fitness)| Individual { position, fitness })
            .collect();
        Ok(Self {
            population,
            archive: Vec::new(),
            memory_f: vec![0.5; np],
            memory_cr: vec![0.5; np],
            memory_index: 0,
            eval_count: np as u64,
            bounds: bounds.to_vec(),
            rng: gen,
            np,
        })
    }

    pub fn eval_count(&self) -> u64 {
        self.eval_count
    }

    pub fn population(&self) -> &[Individual] {
        &self.population
    }

    pub fn memories(&self) -> (&[f64], &[f64]) {
        (&self.memory_f, &self.memory_cr)
    }

    /// Best member; ties break to the lowest index.
    pub fn best(&self) -> &Individual {
        let mut best = &self.population[0];
        for ind in &self.population[1..] {
            if ind.fitness < best.fitness {
                best = ind;
            }
        }
        best
    }

    /// Runs one generation, evaluating at most `max_evals - eval_count`
    /// trials (a generation cut short mid-way leaves later members
    /// untouched). Returns the number of evaluations spent.
    pub fn generation<F>(&mut self, objective: &F, max_evals: u64) -> u64
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let budget = max_evals.saturating_sub(self.eval_count);
        if budget == 0 {
            return 0;
        }
        let n_trials = (self.np as u64).min(budget) as usize;
        let dims = self.bounds.len();

        // fitness-sorted member indices; stable sort keeps index order on ties
        let mut order: Vec<usize> = (0..self.np).collect();
        order.sort_by(|&a, &b| {
            self.population[a]
                .fitness
                .total_cmp(&self.population[b].fitness)
        });
        let p_count = std::cmp::max(2, (0.1 * self.np as f64).ceil() as usize).min(self.np);

        struct TrialPlan {
            vector: Vec<f64>,
            f: f64,
            cr: f64,
        }

        let mut plans = Vec::with_capacity(n_trials);
        for i in 0..n_trials {
            let f_i = self.sample_f();
            let cr_i = self.sample_cr();
            let pbest = &self.population[order[self.rng.random_range(0..p_count)]];
            let r1 = loop {
                let r = self.rng.random_range(0..self.np);
                if r != i {
                    break r;
                }
            };
            let pool = self.np + self.archive.len();
            let r2 = loop {
                let r = self.rng.random_range(0..pool);
                if r != i && r != r1 {
                    break r;
                }
            };
            let x = &self.population[i].position;
            let x_r1 = &self.population[r1].position;
            let x_r2: &[f64] = if r2 < self.np {
                &self.population[r2].position
            } else {
                &self.archive[r2 - self.np]
            };
            let jrand = self.rng.random_range(0..dims);
            let mut v = x.clone();
            for d in 0..dims {
                if d == jrand || self.rng.random::<f64>() < cr_i {
                    let mut val =
                        x[d] + f_i * (pbest.position[d] - x[d]) + f_i * (x_r1[d] - x_r2[d]);
                    let (lo, hi) = self.bounds[d];
                    if val < lo {
                        val = (x[d] + lo) / 2.0;
                    } else if val > hi {
                        val = (x[d] + hi) / 2.0;
                    }
                    v[d] = val;
                }
            }
            plans.push(TrialPlan {
                vector: v,
                f: f_i,
                cr: cr_i,
            });
        }

        let fitnesses: Vec<f64> = plans
            .par_iter()
            .map(|p| objective(&p.vector))
            .collect();
        self.eval_count += n_trials as u64;

        let mut success_f = Vec::new();
        let mut success_cr = Vec::new();
        let mut success_delta = Vec::new();
        for (i, (plan, fit)) in plans.into_iter().zip(fitnesses).enumerate() {
            let parent_fit = self.population[i].fitness;
            if fit <= parent_fit {
                if fit < parent_fit {
                    // strict improvements feed the archive and the memories
                    if self.archive.len() < self.np {
                        self.archive.push(self.population[i].position.clone());
                    } else {
                        let evict = self.rng.random_range(0..self.np);
                        self.archive[evict] = self.population[i].position.clone();
                    }
                    success_f.push(plan.f);
                    success_cr.push(plan.cr);
                    success_delta.push(parent_fit - fit);
                }
                self.population[i] = Individual {
                    position: plan.vector,
                    fitness: fit,
                };
            }
        }

        if !success_f.is_empty() {
            let total: f64 = success_delta.iter().sum();
            let mut lehmer_num = 0.0;
            let mut lehmer_den = 0.0;
            let mut cr_mean = 0.0;
            for ((f, cr), d) in success_f.iter().zip(&success_cr).zip(&success_delta) {
                let w = d / total;
                lehmer_num += w * f * f;
                lehmer_den += w * f;
                cr_mean += w * cr;
            }
            self.memory_f[self.memory_index] = if lehmer_den > 0.0 {
                lehmer_num / lehmer_den
            } else {
                0.5
            };
            self.memory_cr[self.memory_index] = cr_mean;
            self.memory_index = (self.memory_index + 1) % self.memory_f.len();
        }
        n_trials as u64
    }

    fn sample_f(&mut self) -> f64 {
        let slot = self.rng.random_range(0..self.memory_f.len());
        let cauchy = Cauchy::new(self.memory_f[slot], 0.1).expect("valid scale");
        loop {
            let f = cauchy.sample(&mut self.rng);
            if f > 0.0 {
                return f.min(1.0);
            }
        }
    }

    fn sample_cr(&mut self) -> f64 {
        let slot = self.rng.random_range(0..self.memory_cr.len());
        let normal = Normal::new(self.memory_cr[slot], 0.1).expect("valid sigma");
        normal.sample(&mut self.rng).clamp(0.0, 1.0)
    }
}

/// Convenience driver: SHADE alone for a fixed evaluation budget.
pub fn shade_minimize<F>(
    objective: &F,
    dims: usize,
    np: usize,
    bounds: &[(f64, f64)],
    seed: u64,
    max_evals: u64,
) -> Result<Individual>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut state = Shade::init(objective, dims, np, bounds, seed, None, max_evals)?;
    while state.eval_count() < max_evals {
        if state.generation(objective, max_evals) == 0 {
            break;
        }
    }
    Ok(state.best().clone())
}
