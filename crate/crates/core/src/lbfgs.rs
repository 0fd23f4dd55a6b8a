//! Limited-memory BFGS on a black-box objective, with central-difference
//! gradients and a backtracking line search.
//!
//! Each gradient estimate costs `2 * dims` evaluations (step
//! `h = 1e-6 * max(1, |x_d|)` per coordinate), all charged against the
//! budget. The two-loop recursion keeps a history of 10 pairs; the line
//! search backtracks by halving under the Armijo condition with c = 1e-4.
//! Candidate points are clipped to the bounds before evaluation, and the
//! best point ever evaluated is returned, so the result is never worse than
//! the start.

use crate::error::{Error, Result};
use crate::shade::Individual;
use rayon::prelude::*;
use std::collections::VecDeque;

const HISTORY: usize = 10;
const ARMIJO_C: f64 = 1e-4;

pub struct LbfgsOutcome {
    pub best: Individual,
    pub evals: u64,
}

fn clip(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

/// Central-difference gradient; 2*dims evaluations, assembled in coordinate
/// order regardless of worker count.
fn fd_gradient<F>(objective: &F, x: &[f64], bounds: &[(f64, f64)]) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dims = x.len();
    (0..dims)
        .into_par_iter()
        .map(|d| {
            let h = 1e-6 * f64::max(1.0, x[d].abs());
            let mut plus = x.to_vec();
            plus[d] += h;
            let mut minus = x.to_vec();
            minus[d] -= h;
            // probes may step outside the box; the objective is still defined
            // there, and clipping would bias the estimate, so evaluate as-is
            let _ = bounds;
            (objective(&plus) - objective(&minus)) / (2.0 * h)
        })
        .collect()
}

/// Minimizes from `start.position` within `budget_evals` objective calls.
pub fn lbfgs_fd<F>(
    objective: &F,
    start: &Individual,
    budget_evals: u64,
    bounds: &[(f64, f64)],
) -> Result<LbfgsOutcome>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dims = start.position.len();
    let grad_cost = 2 * dims as u64;
    if budget_evals < grad_cost + 1 {
        return Err(Error::budget(format!(
            "budget {budget_evals} below one gradient estimate ({} evals)",
            grad_cost + 1
        )));
    }
    let mut x = start.position.clone();
    let mut fx = start.fitness;
    let mut best = start.clone();
    let mut spent = 0u64;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();

    let mut grad = {
        spent += grad_cost;
        fd_gradient(objective, &x, bounds)
    };

    loop {
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < 1e-12 {
            break;
        }

        // two-loop recursion
        let mut dir: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &dir);
            for (d, yv) in dir.iter_mut().zip(y) {
                *d -= a * yv;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            if gamma.is_finite() && gamma > 0.0 {
                for d in dir.iter_mut() {
                    *d *= gamma;
                }
            }
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &dir);
            for (d, sv) in dir.iter_mut().zip(s) {
                *d += (a - b) * sv;
            }
        }

        let slope = dot(&grad, &dir);
        if slope >= 0.0 {
            // not a descent direction; restart from steepest descent
            history.clear();
            dir = grad.iter().map(|g| -g).collect();
        }
        let slope = dot(&grad, &dir);

        // backtracking line search
        let mut t = 1.0f64;
        let mut accepted: Option<(Vec<f64>, f64)> = None;
        while spent < budget_evals {
            let mut cand: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + t * di).collect();
            clip(&mut cand, bounds);
            let fc = objective(&cand);
            spent += 1;
            if fc < best.fitness {
                best = Individual {
                    position: cand.clone(),
                    fitness: fc,
                };
            }
            if fc <= fx + ARMIJO_C * t * slope {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
            if t < 1e-14 {
                break;
            }
        }
        let Some((x_new, f_new)) = accepted else {
            break;
        };
        if spent + grad_cost > budget_evals {
            // cannot afford another gradient; stop with what we have
            break;
        }
        let grad_new = {
            spent += grad_cost;
            fd_gradient(objective, &x_new, bounds)
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = grad_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 {
            if history.len() == HISTORY {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        fx = f_new;
        grad = grad_new;
    }

    // the incumbent position itself may be the best seen
    if fx < best.fitness {
        best = Individual {
            position: x,
            fitness: fx,
        };
    }
    Ok(LbfgsOutcome { best, evals: spent })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn rosenbrock(x: &[f64]) -> f64 {
        (0..x.len() - 1)
            .map(|i| 100.0 * (x[i + 1] - x[i] * x[i]).powi(2) + (1.0 - x[i]).powi(2))
            .sum()
    }

    #[test]
    fn fd_gradient_of_square_is_two() {
        let g = fd_gradient(&sphere, &[1.0], &[(-5.0, 5.0)]);
        assert!((g[0] - 2.0).abs() <= 1e-6, "gradient {}", g[0]);
    }

    #[test]
    fn sphere_from_ones_converges_within_200_evals() {
        let start = Individual {
            position: vec![1.0, 1.0],
            fitness: 2.0,
        };
        let out = lbfgs_fd(&sphere, &start, 200, &[(-5.0, 5.0); 2]).unwrap();
        assert!(out.best.fitness <= 1e-8, "fitness {}", out.best.fitness);
        assert!(out.evals <= 200);
    }

    #[test]
    fn rosenbrock_classic_start() {
        let start_pos = vec![-1.2, 1.0];
        let start = Individual {
            fitness: rosenbrock(&start_pos),
            position: start_pos,
        };
        let out = lbfgs_fd(&rosenbrock, &start, 4_000, &[(-5.0, 5.0); 2]).unwrap();
        assert!(out.best.fitness < 1e-6, "fitness {}", out.best.fitness);
    }

    #[test]
    fn budget_below_one_gradient_errors() {
        let start = Individual {
            position: vec![1.0; 10],
            fitness: 10.0,
        };
        assert!(matches!(
            lbfgs_fd(&sphere, &start, 20, &[(-5.0, 5.0); 10]),
            Err(Error::Budget(_))
        ));
    }

    #[test]
    fn never_worse_than_start_and_within_budget() {
        // a rugged function where line searches can fail
        let rugged = |x: &[f64]| x.iter().map(|v| (v * 13.0).sin().abs() + v * v).sum::<f64>();
        let start_pos = vec![0.7, -0.3, 0.1];
        let start = Individual {
            fitness: rugged(&start_pos),
            position: start_pos,
        };
        let out = lbfgs_fd(&rugged, &start, 100, &[(-1.0, 1.0); 3]).unwrap();
        assert!(out.best.fitness <= start.fitness);
        assert!(out.evals <= 100);
    }
}
