//! SHADE alternated with local search, plus a stagnation-triggered restart.
//!
//! Each iteration spends a chunk of the evaluation budget: a `frac_global`
//! share on SHADE generations, the rest on one local search applied to the
//! incumbent. The local search is picked by warm-up first (L-BFGS before
//! LS1), then by the larger last relative improvement, with exact ties going
//! to L-BFGS; when the remaining share cannot buy a single finite-difference
//! gradient, LS1 runs instead. If the relative improvement stays below the
//! restart threshold for `restart_patience` consecutive iterations, the
//! population is re-seeded around the incumbent with uniform noise and the
//! LS1 steps reset; the incumbent itself is never discarded.
//!
//! The run spends its budget exactly: SHADE generations stop mid-way at the
//! cap, LS1 consumes whatever the chosen search leaves unused.

use crate::error::{Error, Result};
use crate::lbfgs::lbfgs_fd;
use crate::mts::{mts_ls1, MtsState};
use crate::shade::{Individual, SeededInit, Shade};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalSearchKind {
    LbfgsFd,
    MtsLs1,
}

#[derive(Debug, Clone)]
pub struct IlsConfig {
    pub np: usize,
    /// Share of each chunk spent on SHADE.
    pub frac_global: f64,
    /// Evaluations per iteration; 0 means one iteration covering the whole
    /// budget.
    pub chunk_evals: u64,
    /// Restart when relative improvement stays below this...
    pub restart_threshold: f64,
    /// ...for this many consecutive iterations.
    pub restart_patience: u32,
    /// Width of the restart noise as a fraction of each dimension's range.
    pub restart_noise_frac: f64,
    /// Initial LS1 step size; defaults to 0.4 of each dimension's range.
    pub mts_step_init: Option<f64>,
    /// Noise width when an initial incumbent seeds the first population.
    pub init_noise: f64,
    pub seed: u64,
}

impl Default for IlsConfig {
    fn default() -> Self {
        Self {
            np: 100,
            frac_global: 0.5,
            chunk_evals: 0,
            restart_threshold: 0.05,
            restart_patience: 3,
            restart_noise_frac: 0.1,
            mts_step_init: None,
            init_noise: 0.1,
            seed: 0,
        }
    }
}

/// Last relative improvement per local search; `None` until first use.
#[derive(Debug, Clone, Copy, Default)]
pub struct LsImprovements {
    pub lbfgs: Option<f64>,
    pub mts: Option<f64>,
}

/// Warm-up first (L-BFGS before LS1), then the larger last improvement;
/// exact ties go to L-BFGS. `lbfgs_feasible` reflects whether the current
/// budget can buy one finite-difference gradient.
pub fn choose_local_search(imp: &LsImprovements, lbfgs_feasible: bool) -> LocalSearchKind {
    if !lbfgs_feasible {
        return LocalSearchKind::MtsLs1;
    }
    match (imp.lbfgs, imp.mts) {
        (None, _) => LocalSearchKind::LbfgsFd,
        (Some(_), None) => LocalSearchKind::MtsLs1,
        (Some(a), Some(b)) => {
            if a >= b {
                LocalSearchKind::LbfgsFd
            } else {
                LocalSearchKind::MtsLs1
            }
        }
    }
}

pub struct IlsOutcome {
    pub best: Individual,
    /// `(evaluations so far, best fitness)` after init and each iteration.
    pub trace: Vec<(u64, f64)>,
    pub evals: u64,
    pub restarts: u32,
    /// Final LS1 state (step sizes and sweep cursor); callers that re-enter
    /// the same coordinate subspace pass it back in to resume coverage.
    pub mts_state: MtsState,
}

/// Runs SHADE-ILS for exactly `total_evals` objective evaluations.
///
/// When `init` is given, the first population is the incumbent plus uniform
/// perturbations of width `cfg.init_noise` and all later progress is measured
/// against it.
pub fn shade_ils_run<F>(
    objective: &F,
    dims: usize,
    bounds: &[(f64, f64)],
    total_evals: u64,
    cfg: &IlsConfig,
    init: Option<&[f64]>,
) -> Result<IlsOutcome>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    shade_ils_resume(objective, dims, bounds, total_evals, cfg, init, None)
}

/// [`shade_ils_run`] continuing from a previous LS1 state.
pub fn shade_ils_resume<F>(
    objective: &F,
    dims: usize,
    bounds: &[(f64, f64)],
    total_evals: u64,
    cfg: &IlsConfig,
    init: Option<&[f64]>,
    mts_resume: Option<MtsState>,
) -> Result<IlsOutcome>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let np = cfg.np as u64;
    if total_evals < np + 2 {
        return Err(Error::budget(format!(
            "budget {total_evals} below population {np} plus one search step"
        )));
    }
    if bounds.len() != dims {
        return Err(Error::config(format!("{} bounds for {dims} dims", bounds.len())));
    }
    let chunk = if cfg.chunk_evals == 0 {
        total_evals
    } else {
        cfg.chunk_evals.max(np + 2)
    };

    let seeded = init.map(|center| SeededInit {
        center: center.to_vec(),
        noise_width: cfg.init_noise,
    });
    let mut shade = Shade::init(
        objective,
        dims,
        cfg.np,
        bounds,
        cfg.seed,
        seeded.as_ref(),
        total_evals,
    )?;
    let mut spent = np;
    let mut incumbent = shade.best().clone();
    let mut trace = vec![(spent, incumbent.fitness)];
    let mut improvements = LsImprovements::default();
    let mut mts_state = match mts_resume {
        Some(st) if st.step_sizes.len() == dims => st,
        _ => new_mts_state(dims, bounds, cfg),
    };
    let mut stagnation = 0u32;
    let mut restarts = 0u32;
    // the initialization evaluations are credited against the first
    // iteration's global share
    let mut init_credit = np;

    while spent < total_evals {
        let iter_budget = chunk.min(total_evals - spent + init_credit);
        let global_target = (cfg.frac_global * iter_budget as f64).round() as u64;

        let mut g_spent = init_credit;
        let g_cap = global_target.max(g_spent).min(iter_budget);
        while g_spent < g_cap {
            let done = shade.generation(objective, shade.eval_count() + (g_cap - g_spent));
            if done == 0 {
                break;
            }
            g_spent += done;
        }
        spent += g_spent - init_credit;
        init_credit = 0;
        if shade.best().fitness < incumbent.fitness {
            incumbent = shade.best().clone();
        }

        // local phase
        let ls_budget = iter_budget.saturating_sub(g_spent);
        if ls_budget > 0 {
            let f_before = incumbent.fitness;
            let lbfgs_feasible = ls_budget >= 2 * dims as u64 + 1;
            let kind = choose_local_search(&improvements, lbfgs_feasible);
            let mut used = 0u64;
            let mut result = incumbent.clone();
            match kind {
                LocalSearchKind::LbfgsFd => {
                    let out = lbfgs_fd(objective, &incumbent, ls_budget, bounds)?;
                    used = out.evals;
                    result = out.best;
                }
                LocalSearchKind::MtsLs1 => {}
            }
            if used < ls_budget {
                let out = mts_ls1(objective, &result, ls_budget - used, bounds, &mut mts_state);
                used += out.evals;
                result = out.best;
            }
            debug_assert_eq!(used, ls_budget);
            spent += used;
            let r = (f_before - result.fitness) / f64::max(f_before.abs(), 1e-12);
            match kind {
                LocalSearchKind::LbfgsFd => improvements.lbfgs = Some(r),
                LocalSearchKind::MtsLs1 => improvements.mts = Some(r),
            }
            if result.fitness < incumbent.fitness {
                incumbent = result;
            }

            if r < cfg.restart_threshold {
                stagnation += 1;
            } else {
                stagnation = 0;
            }
            if stagnation >= cfg.restart_patience && total_evals - spent >= np {
                let noise: f64 = bounds
                    .iter()
                    .map(|(lo, hi)| cfg.restart_noise_frac * (hi - lo))
                    .fold(0.0, f64::max);
                shade = Shade::init(
                    objective,
                    dims,
                    cfg.np,
                    bounds,
                    crate::rng::derive(cfg.seed, 1000 + restarts as u64),
                    Some(&SeededInit {
                        center: incumbent.position.clone(),
                        noise_width: noise,
                    }),
                    u64::MAX,
                )?;
                spent += np;
                mts_state = new_mts_state(dims, bounds, cfg);
                stagnation = 0;
                restarts += 1;
                if shade.best().fitness < incumbent.fitness {
                    incumbent = shade.best().clone();
                }
            }
        }
        trace.push((spent, incumbent.fitness));
    }

    debug_assert_eq!(spent, total_evals);
    Ok(IlsOutcome {
        best: incumbent,
        trace,
        evals: spent,
        restarts,
        mts_state,
    })
}

fn new_mts_state(dims: usize, bounds: &[(f64, f64)], cfg: &IlsConfig) -> MtsState {
    let mut st = MtsState::new(dims, 0.0);
    for (s, (lo, hi)) in st.step_sizes.iter_mut().zip(bounds) {
        *s = cfg.mts_step_init.unwrap_or(0.4 * (hi - lo));
    }
    st
}
