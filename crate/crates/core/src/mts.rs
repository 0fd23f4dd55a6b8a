//! Coordinate-wise local search (the LS1 move of multiple trajectory search).
//!
//! Dimensions are swept in order. Each dimension first probes `x_d - SR_d`;
//! if that is worse, it probes `x_d + 0.5 * SR_d`. Any strict improvement is
//! kept. A dimension that yields no improvement has its step halved, and a
//! step below 1e-15 resets to 40% of that dimension's range. Sweeping
//! continues until the budget is spent exactly; the result is never worse
//! than the start.
//!
//! The state carries both the per-dimension steps and the sweep cursor so
//! that successive short calls cover fresh dimensions instead of re-probing
//! the first few.

use crate::shade::Individual;

#[derive(Debug, Clone)]
pub struct MtsState {
    pub step_sizes: Vec<f64>,
    pub next_dim: usize,
}

impl MtsState {
    pub fn new(dims: usize, step_init: f64) -> Self {
        Self {
            step_sizes: vec![step_init; dims],
            next_dim: 0,
        }
    }
}

pub struct MtsOutcome {
    pub best: Individual,
    pub evals: u64,
}

/// Runs LS1 from `start`, spending exactly `budget` evaluations (each probe
/// is one evaluation; probes are clamped to bounds).
pub fn mts_ls1<F>(
    objective: &F,
    start: &Individual,
    budget: u64,
    bounds: &[(f64, f64)],
    state: &mut MtsState,
) -> MtsOutcome
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dims = start.position.len();
    debug_assert_eq!(state.step_sizes.len(), dims);
    let mut current = start.clone();
    let mut spent = 0u64;
    while spent < budget {
        let d = state.next_dim;
        state.next_dim = (state.next_dim + 1) % dims;
        let (lo, hi) = bounds[d];
        let sr = state.step_sizes[d];
        let original = current.position[d];

        let mut improved = false;
        let probe_down = (original - sr).clamp(lo, hi);
        current.position[d] = probe_down;
        let f_down = objective(&current.position);
        spent += 1;
        if f_down < current.fitness {
            current.fitness = f_down;
            improved = true;
        } else {
            current.position[d] = original;
            if spent < budget {
                let probe_up = (original + 0.5 * sr).clamp(lo, hi);
                current.position[d] = probe_up;
                let f_up = objective(&current.position);
                spent += 1;
                if f_up < current.fitness {
                    current.fitness = f_up;
                    improved = true;
                } else {
                    current.position[d] = original;
                }
            }
        }
        if !improved {
            state.step_sizes[d] *= 0.5;
            if state.step_sizes[d] < 1e-15 {
                state.step_sizes[d] = 0.4 * (hi - lo);
            }
        }
    }
    MtsOutcome {
        best: current,
        evals: spent,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn accepts_first_improving_probe() {
        // f(x) = x^2 from 1.0 with SR 0.5: probe 0.5 gives 0.25 < 1.0
        let start = Individual {
            position: vec![1.0],
            fitness: 1.0,
        };
        let mut st = MtsState::new(1, 0.5);
        let out = mts_ls1(&sphere, &start, 1, &[(-5.0, 5.0)], &mut st);
        assert_eq!(out.evals, 1);
        assert_eq!(out.best.position[0], 0.5);
        assert_eq!(out.best.fitness, 0.25);
        // step stays unhalved on success
        assert_eq!(st.step_sizes[0], 0.5);
    }

    #[test]
    fn at_optimum_every_dim_halves_once_per_sweep() {
        let start = Individual {
            position: vec![0.0; 4],
            fitness: 0.0,
        };
        let mut st = MtsState::new(4, 1.0);
        // 8 evals = one full sweep (2 probes per dim, all failing)
        let out = mts_ls1(&sphere, &start, 8, &[(-5.0, 5.0); 4], &mut st);
        assert_eq!(out.best.position, vec![0.0; 4]);
        assert!(st.step_sizes.iter().all(|&s| s == 0.5));
        assert_eq!(st.next_dim, 0);
    }

    #[test]
    fn budget_single_eval_is_exact() {
        let start = Individual {
            position: vec![2.0, 2.0],
            fitness: 8.0,
        };
        let mut st = MtsState::new(2, 0.1);
        let out = mts_ls1(&sphere, &start, 1, &[(-5.0, 5.0); 2], &mut st);
        assert_eq!(out.evals, 1);
        // cursor advanced to the second dimension for the next call
        assert_eq!(st.next_dim, 1);
    }

    #[test]
    fn never_worse_than_start_and_respects_bounds() {
        let start = Individual {
            position: vec![0.9, -0.9, 0.2],
            fitness: sphere(&[0.9, -0.9, 0.2]),
        };
        let bounds = [(-1.0, 1.0); 3];
        let mut st = MtsState::new(3, 4.0);
        let out = mts_ls1(&sphere, &start, 57, &bounds, &mut st);
        assert!(out.best.fitness <= start.fitness);
        for (v, (lo, hi)) in out.best.position.iter().zip(&bounds) {
            assert!(v >= lo && v <= hi);
        }
        assert_eq!(out.evals, 57);
    }

    #[test]
    fn step_underflow_resets_to_fraction_of_range() {
        let start = Individual {
            position: vec![0.0],
            fitness: 0.0,
        };
        let mut st = MtsState::new(1, 1e-15);
        // first failed dim halves 1e-15 below the floor and resets to 0.4*10
        let _ = mts_ls1(&sphere, &start, 2, &[(-5.0, 5.0)], &mut st);
        assert_eq!(st.step_sizes[0], 4.0);
    }
}
