//! Layer-wise optimization schedules for metaheuristic training.
//!
//! A metaheuristic epoch is `L * N_eval` full-training-set objective
//! evaluations, `L` being the number of parameterized layers. The five
//! schedules decide how that budget is split:
//!
//! * `full`  — one step over all coordinates with the whole epoch budget;
//! * `down`  — one step of `N_eval` per layer, first to last;
//! * `up`    — the same, last to first;
//! * `a-down` — first epoch as `down`, later epochs draw `L` layers with
//!   replacement, proportionally to smoothed per-layer improvement ratios;
//! * `a-up`  — first epoch as `up`, later epochs as `a-down`.
//!
//! The improvement ratio of a step is the relative gain in full-training-set
//! accuracy; the optimized objective itself is the training loss. Those two
//! roles are deliberately distinct. Accuracy measurements ride along with
//! the pass that freezes the prefix activations for the next step, so they
//! stay outside the `N_eval` budget.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::forward::Evaluator;
use crate::ils::{shade_ils_resume, IlsConfig};
use crate::mts::MtsState;
use crate::net::NetworkSpec;
use crate::params::{glorot_init, glorot_limit, roles, LayerLayout, ParameterVector};
use crate::records::RunRecord;
use crate::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

pub const RATIO_SMOOTHING: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Full,
    Down,
    Up,
    ADown,
    AUp,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 5] = [
        ScheduleKind::Full,
        ScheduleKind::Down,
        ScheduleKind::Up,
        ScheduleKind::ADown,
        ScheduleKind::AUp,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScheduleKind::Full => "full",
            ScheduleKind::Down => "down",
            ScheduleKind::Up => "up",
            ScheduleKind::ADown => "a-down",
            ScheduleKind::AUp => "a-up",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name.to_ascii_lowercase().as_str() {
            "full" => ScheduleKind::Full,
            "down" => ScheduleKind::Down,
            "up" => ScheduleKind::Up,
            "a-down" | "adown" => ScheduleKind::ADown,
            "a-up" | "aup" => ScheduleKind::AUp,
            other => return Err(Error::config(format!("unknown schedule `{other}`"))),
        })
    }
}

/// Indices of layers with trainable parameters, in network order.
pub fn parameterized_layers(net: &NetworkSpec) -> Result<Vec<usize>> {
    Ok(LayerLayout::of(net)?
        .segments
        .iter()
        .map(|s| s.layer_index)
        .collect())
}

/// Selection state of one scheduled run.
#[derive(Debug, Clone)]
pub struct ScheduleState {
    /// Parameterized layer indices (length `L`).
    pub layer_ids: Vec<usize>,
    /// Last relative accuracy improvement per layer position.
    pub ratios: Vec<f64>,
    /// Selection probabilities (always a full-support distribution).
    pub probs: Vec<f64>,
    /// Completed epochs.
    pub epoch: u32,
    /// Objective evaluations spent in the current epoch.
    pub evals_this_epoch: u64,
}

impl ScheduleState {
    pub fn new(layer_ids: Vec<usize>) -> Result<Self> {
        if layer_ids.is_empty() {
            return Err(Error::config(
                "network has no parameterized layers to schedule".to_string(),
            ));
        }
        let l = layer_ids.len();
        Ok(Self {
            layer_ids,
            ratios: vec![0.0; l],
            probs: vec![1.0 / l as f64; l],
            epoch: 0,
            evals_this_epoch: 0,
        })
    }
}

/// One optimization step of an epoch plan: either every coordinate at once
/// or the segment of one layer (identified by its position in `layer_ids`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanStep {
    All,
    Layer(usize),
}

/// The ordered steps of the next epoch.
pub fn epoch_plan(
    kind: ScheduleKind,
    state: &ScheduleState,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PlanStep>> {
    let l = state.layer_ids.len();
    if l == 0 {
        return Err(Error::config("empty layer schedule".to_string()));
    }
    let down: Vec<PlanStep> = (0..l).map(PlanStep::Layer).collect();
    let up: Vec<PlanStep> = (0..l).rev().map(PlanStep::Layer).collect();
    Ok(match kind {
        ScheduleKind::Full => vec![PlanStep::All],
        ScheduleKind::Down => down,
        ScheduleKind::Up => up,
        ScheduleKind::ADown | ScheduleKind::AUp => {
            if state.epoch == 0 {
                if kind == ScheduleKind::ADown {
                    down
                } else {
                    up
                }
            } else {
                (0..l)
                    .map(|_| PlanStep::Layer(sample_index(&state.probs, rng)))
                    .collect()
            }
        }
    })
}

fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Records a step's accuracy improvement and refreshes the selection
/// distribution: `ratio = max(0, (after-before)/max(before, 1e-6))`,
/// `prob_i = (ratio_i + 0.01) / sum`.
pub fn update_ratios(state: &mut ScheduleState, layer_pos: usize, acc_before: f64, acc_after: f64) {
    state.ratios[layer_pos] = f64::max(0.0, (acc_after - acc_before) / f64::max(acc_before, 1e-6));
    let total: f64 = state.ratios.iter().map(|r| r + RATIO_SMOOTHING).sum();
    for (p, r) in state.probs.iter_mut().zip(&state.ratios) {
        *p = (r + RATIO_SMOOTHING) / total;
    }
}

#[derive(Debug, Clone)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    /// Objective evaluations per layer step.
    pub n_eval: u64,
    pub epochs: u32,
    /// SHADE population size within each step.
    pub np: usize,
    /// Box bounds `[-weight_bound, weight_bound]` per coordinate.
    pub weight_bound: f64,
    pub frac_global: f64,
    pub seed: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::AUp,
            n_eval: 200,
            epochs: 20,
            np: 10,
            weight_bound: 5.0,
            frac_global: 0.5,
            seed: 0,
        }
    }
}

/// Trains a fixed network by scheduled SHADE-ILS.
///
/// Starts from Glorot initialization; every epoch executes the schedule's
/// plan, running SHADE-ILS restricted to each step's coordinates with
/// exactly `N_eval` evaluations of the full-training-set loss (eval mode,
/// dropout off). Coordinates outside the active segment are untouched.
/// The per-epoch evaluation counter must equal `L * N_eval` exactly, which
/// is asserted at runtime.
pub fn scheduled_training_run(
    net: &NetworkSpec,
    train: &Dataset,
    test: &Dataset,
    cfg: &ScheduleConfig,
) -> Result<(ParameterVector, Vec<RunRecord>)> {
    let layer_ids = parameterized_layers(net)?;
    let mut state = ScheduleState::new(layer_ids)?;
    let l = state.layer_ids.len() as u64;
    if cfg.n_eval < cfg.np as u64 + 2 {
        return Err(Error::config(format!(
            "n_eval {} cannot cover population {} plus one search step",
            cfg.n_eval, cfg.np
        )));
    }
    if cfg.epochs == 0 {
        return Err(Error::config("epochs must be >= 1".to_string()));
    }
    let layout = LayerLayout::of(net)?;
    let mut params = glorot_init(net, rng::derive(cfg.seed, roles::GLOROT))?;
    let train_eval = Evaluator::new(net, train)?;
    let test_eval = Evaluator::new(net, test)?;
    let mut plan_rng = rng::rng_for(cfg.seed, roles::PLAN);

    let limits: Vec<f64> = state
        .layer_ids
        .iter()
        .map(|&li| glorot_limit(net, li))
        .collect::<Result<_>>()?;
    let mean_limit = limits.iter().sum::<f64>() / limits.len() as f64;

    let mut records = Vec::with_capacity(cfg.epochs as usize);
    let started = Instant::now();
    let mut evals_total = 0u64;
    // ratio update deferred until the next accuracy measurement
    let mut pending: Option<(usize, f64)> = None;
    // LS1 step sizes and sweep cursors persist per layer across steps
    let mut mts_slots: Vec<Option<MtsState>> = vec![None; state.layer_ids.len()];
    let mut mts_full: Option<MtsState> = None;

    for epoch in 1..=cfg.epochs {
        state.evals_this_epoch = 0;
        let plan = epoch_plan(cfg.kind, &state, &mut plan_rng)?;
        for (step_idx, step) in plan.iter().enumerate() {
            let step_seed = rng::derive(cfg.seed, roles::SOLVER + 37 * (u64::from(epoch) * 1_000 + step_idx as u64));
            match *step {
                PlanStep::All => {
                    let dims = layout.total;
                    let bounds = vec![(-cfg.weight_bound, cfg.weight_bound); dims];
                    let ils = IlsConfig {
                        np: cfg.np,
                        frac_global: cfg.frac_global,
                        chunk_evals: cfg.n_eval,
                        mts_step_init: Some(mean_limit),
                        init_noise: mean_limit,
                        seed: step_seed,
                        ..Default::default()
                    };
                    let objective = |x: &[f64]| train_eval.loss(x);
                    let out = shade_ils_resume(
                        &objective,
                        dims,
                        &bounds,
                        l * cfg.n_eval,
                        &ils,
                        Some(&params.values),
                        mts_full.take(),
                    )?;
                    params.values = out.best.position;
                    mts_full = Some(out.mts_state);
                    state.evals_this_epoch += out.evals;
                }
                PlanStep::Layer(pos) => {
                    let li = state.layer_ids[pos];
                    let (evals, acc_now) = layer_step(
                        &train_eval,
                        &layout,
                        &mut params.values,
                        li,
                        limits[pos],
                        cfg,
                        step_seed,
                        &mut mts_slots[pos],
                    )?;
                    if let Some((prev_pos, acc_before)) = pending.take() {
                        update_ratios(&mut state, prev_pos, acc_before, acc_now);
                    }
                    state.evals_this_epoch += evals;
                    pending = Some((pos, acc_now));
                }
            }
        }

        // epoch budget contract: exactly L * N_eval objective evaluations
        assert_eq!(
            state.evals_this_epoch,
            l * cfg.n_eval,
            "epoch {epoch} spent {} evaluations, contract is {}",
            state.evals_this_epoch,
            l * cfg.n_eval
        );
        evals_total += state.evals_this_epoch;
        state.epoch = epoch;

        let (train_loss, train_acc) = train_eval.loss_and_acc(&params.values);
        if let Some((prev_pos, acc_before)) = pending.take() {
            update_ratios(&mut state, prev_pos, acc_before, train_acc);
        }
        let (test_loss, test_acc) = test_eval.loss_and_acc(&params.values);
        records.push(RunRecord {
            run_id: 0,
            seed: cfg.seed,
            solver: "shade-ils".to_string(),
            schedule: cfg.kind.name().to_string(),
            epoch,
            train_loss,
            train_acc,
            test_loss,
            test_acc,
            evals_cumulative: evals_total,
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }
    Ok((params, records))
}

/// One scheduled step restricted to the segment of layer `li`: measures
/// accuracy and freezes the prefix in a single pass, runs SHADE-ILS on the
/// segment with exactly `cfg.n_eval` suffix evaluations, and writes the
/// improved segment back. All other coordinates are untouched.
pub(crate) fn layer_step(
    train_eval: &Evaluator<'_>,
    layout: &LayerLayout,
    params: &mut [f64],
    li: usize,
    limit: f64,
    cfg: &ScheduleConfig,
    step_seed: u64,
    mts_slot: &mut Option<MtsState>,
) -> Result<(u64, f64)> {
    let seg = layout.segment_of_layer(li).expect("parameterized layer");
    let (_, acc_now, cache) = train_eval.loss_acc_capture(params, li);
    let bounds = vec![(-cfg.weight_bound, cfg.weight_bound); seg.len];
    let ils = IlsConfig {
        np: cfg.np,
        frac_global: cfg.frac_global,
        chunk_evals: cfg.n_eval,
        mts_step_init: Some(limit),
        init_noise: limit,
        seed: step_seed,
        ..Default::default()
    };
    let template = params.to_vec();
    let objective = |segvals: &[f64]| {
        let mut full = template.clone();
        full[seg.offset..seg.offset + seg.len].copy_from_slice(segvals);
        train_eval.suffix_loss(&full, li, &cache)
    };
    let start = params[seg.offset..seg.offset + seg.len].to_vec();
    let out = shade_ils_resume(
        &objective,
        seg.len,
        &bounds,
        cfg.n_eval,
        &ils,
        Some(&start),
        mts_slot.take(),
    )?;
    params[seg.offset..seg.offset + seg.len].copy_from_slice(&out.best.position);
    *mts_slot = Some(out.mts_state);
    Ok((out.evals, acc_now))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_blobs;
    use crate::net::{zoo, LayerSpec, LossKind};

    #[test]
    fn mnist_model_has_six_parameterized_layers() {
        let ids = parameterized_layers(&zoo::mnist()).unwrap();
        assert_eq!(ids.len(), 6);
        assert_eq!(ids, vec![0, 2, 4, 7, 9, 11]);
    }

    #[test]
    fn pool_only_network_yields_config_error_downstream() {
        let net = NetworkSpec::new(
            [8, 8, 1],
            vec![LayerSpec::MaxPool2x2, LayerSpec::Flatten],
            LossKind::CategoricalCe,
        );
        let ids = parameterized_layers(&net).unwrap();
        assert!(ids.is_empty());
        assert!(matches!(ScheduleState::new(ids), Err(Error::Config(_))));
    }

    #[test]
    fn single_dense_layer_list() {
        let net = NetworkSpec::new(
            [1, 1, 4],
            vec![LayerSpec::Flatten, LayerSpec::Dense { units: 2 }],
            LossKind::CategoricalCe,
        );
        assert_eq!(parameterized_layers(&net).unwrap(), vec![1]);
    }

    #[test]
    fn plans_match_definitions() {
        let state = ScheduleState::new(vec![0, 2, 4]).unwrap();
        let mut rng = rng::rng_for(0, 0);
        assert_eq!(
            epoch_plan(ScheduleKind::Down, &state, &mut rng).unwrap(),
            vec![PlanStep::Layer(0), PlanStep::Layer(1), PlanStep::Layer(2)]
        );
        assert_eq!(
            epoch_plan(ScheduleKind::Up, &state, &mut rng).unwrap(),
            vec![PlanStep::Layer(2), PlanStep::Layer(1), PlanStep::Layer(0)]
        );
        assert_eq!(
            epoch_plan(ScheduleKind::Full, &state, &mut rng).unwrap(),
            vec![PlanStep::All]
        );
        // first adaptive epoch follows the deterministic order
        assert_eq!(
            epoch_plan(ScheduleKind::AUp, &state, &mut rng).unwrap(),
            vec![PlanStep::Layer(2), PlanStep::Layer(1), PlanStep::Layer(0)]
        );
        assert_eq!(
            epoch_plan(ScheduleKind::ADown, &state, &mut rng).unwrap(),
            vec![PlanStep::Layer(0), PlanStep::Layer(1), PlanStep::Layer(2)]
        );
    }

    #[test]
    fn adaptive_plans_sample_l_layers_from_probs() {
        let mut state = ScheduleState::new(vec![0, 2, 4, 6]).unwrap();
        state.epoch = 3;
        state.probs = vec![0.97, 0.01, 0.01, 0.01];
        let mut rng = rng::rng_for(1, 0);
        let plan = epoch_plan(ScheduleKind::ADown, &state, &mut rng).unwrap();
        assert_eq!(plan.len(), 4);
        let zeros = plan.iter().filter(|s| **s == PlanStep::Layer(0)).count();
        assert!(zeros >= 3, "expected concentration on layer 0, got {plan:?}");
    }

    #[test]
    fn ratio_updates_follow_the_formula() {
        let mut state = ScheduleState::new(vec![0, 1]).unwrap();
        // all ratios zero: probs uniform from the smoothing floor
        assert_eq!(state.probs, vec![0.5, 0.5]);
        update_ratios(&mut state, 0, 0.5, 0.8);
        assert!((state.ratios[0] - 0.6).abs() < 1e-12);
        // accuracy drop clamps to zero and falls to the smoothing floor
        update_ratios(&mut state, 1, 0.8, 0.4);
        assert_eq!(state.ratios[1], 0.0);
        let expect0 = 0.61 / 0.62;
        assert!((state.probs[0] - expect0).abs() < 1e-12);
        assert!((state.probs[1] - 0.01 / 0.62).abs() < 1e-12);
        let sum: f64 = state.probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(state.probs.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn normalization_without_smoothing_reference() {
        // ratios (0.3, 0.1) normalize to (0.75, 0.25) when smoothing is off
        let r = [0.3, 0.1];
        let sum: f64 = r.iter().sum();
        assert!((r[0] / sum - 0.75).abs() < 1e-12);
        assert!((r[1] / sum - 0.25).abs() < 1e-12);
    }

    fn tiny_net() -> NetworkSpec {
        NetworkSpec::new(
            [6, 6, 1],
            vec![
                LayerSpec::Conv2D { filters: 2, kh: 3, kw: 3 },
                LayerSpec::MaxPool2x2,
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 3 },
            ],
            LossKind::CategoricalCe,
        )
    }

    #[test]
    fn scheduled_run_budget_and_frozen_coordinates() {
        let train = synthetic_blobs(3, 10, 6, 1).unwrap();
        let test = synthetic_blobs(3, 4, 6, 2).unwrap();
        let cfg = ScheduleConfig {
            kind: ScheduleKind::Down,
            n_eval: 20,
            epochs: 2,
            np: 5,
            seed: 7,
            ..Default::default()
        };
        let (params, recs) = scheduled_training_run(&tiny_net(), &train, &test, &cfg).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].evals_cumulative, 2 * 20);
        assert_eq!(recs[1].evals_cumulative, 2 * 2 * 20);
        assert!(params.values.iter().all(|v| v.abs() <= 5.0));
        // training loss under the incumbent-preserving solver cannot rise
        assert!(recs[1].train_loss <= recs[0].train_loss + 1e-12);
    }

    #[test]
    fn full_equals_down_and_up_on_single_layer_network() {
        let net = NetworkSpec::new(
            [2, 2, 1],
            vec![LayerSpec::Flatten, LayerSpec::Dense { units: 2 }],
            LossKind::CategoricalCe,
        );
        let train = synthetic_blobs(2, 8, 2, 3).unwrap();
        let test = synthetic_blobs(2, 2, 2, 4).unwrap();
        let mk = |kind| ScheduleConfig {
            kind,
            n_eval: 25,
            epochs: 2,
            np: 5,
            seed: 13,
            ..Default::default()
        };
        let (pf, _) = scheduled_training_run(&net, &train, &test, &mk(ScheduleKind::Full)).unwrap();
        let (pd, _) = scheduled_training_run(&net, &train, &test, &mk(ScheduleKind::Down)).unwrap();
        let (pu, _) = scheduled_training_run(&net, &train, &test, &mk(ScheduleKind::Up)).unwrap();
        assert_eq!(pf.values, pd.values);
        assert_eq!(pd.values, pu.values);
    }

    #[test]
    fn inactive_segments_stay_bit_identical_within_a_step() {
        let net = tiny_net();
        let train = synthetic_blobs(3, 6, 6, 5).unwrap();
        let layout = LayerLayout::of(&net).unwrap();
        let mut params = glorot_init(&net, 1).unwrap();
        let before = params.values.clone();
        let ev = Evaluator::new(&net, &train).unwrap();
        let cfg = ScheduleConfig {
            n_eval: 12,
            np: 4,
            ..Default::default()
        };
        // optimize only the conv segment (layer 0)
        let mut slot = None;
        let (evals, _) =
            layer_step(&ev, &layout, &mut params.values, 0, 0.5, &cfg, 99, &mut slot).unwrap();
        assert!(slot.is_some());
        assert_eq!(evals, 12);
        let conv = layout.segment_of_layer(0).unwrap();
        let dense = layout.segment_of_layer(3).unwrap();
        assert_ne!(
            &params.values[conv.offset..conv.offset + conv.len],
            &before[conv.offset..conv.offset + conv.len]
        );
        assert_eq!(
            &params.values[dense.offset..dense.offset + dense.len],
            &before[dense.offset..dense.offset + dense.len]
        );
    }
}
