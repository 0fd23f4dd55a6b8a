//! Genome representation, the layer-transition state machine, and the three
//! variation operators.
//!
//! The FSM has two states keyed by tensor rank. SPATIAL (rank 3) admits
//! Conv2D, MaxPool2x2, Dropout and Flatten (which moves to FLAT); FLAT
//! (rank 1) admits Dense, Dropout and Reshape (which moves back to SPATIAL
//! and must preserve the element count). A valid genome ends with
//! `Dense(num_classes)` reached in FLAT state, has depth within [3, 20],
//! and all hyper-parameters on their lattices. Every operator repairs its
//! output: layers illegal for the state reached so far are deleted, the
//! terminal pair is enforced, and the depth is clamped.

use crate::net::{LayerSpec, LossKind, NetworkSpec};
use crate::optim::OptimizerKind;
use crate::rng::fnv1a64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const MIN_DEPTH: usize = 3;
pub const MAX_DEPTH: usize = 20;

/// Sampling lattices for every evolved hyper-parameter. The paper-fixed
/// ranges (depth, epochs, batch size, optimizer set) are not configurable;
/// the per-layer lattices are.
#[derive(Debug, Clone)]
pub struct TopoLattice {
    pub filters: Vec<usize>,
    pub kernels: Vec<usize>,
    pub units: Vec<usize>,
    pub dropout: Vec<f64>,
    pub epochs: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    /// Relative weight of Reshape among FLAT-state choices.
    pub reshape_weight: f64,
}

impl Default for TopoLattice {
    fn default() -> Self {
        Self {
            filters: (1..=16).map(|i| 4 * i).collect(),           // 4, 8, ..., 64
            kernels: vec![2, 3, 4, 5],
            units: (1..=50).map(|i| 10 * i).collect(),            // 10, 20, ..., 500
            dropout: (1..=7).map(|i| 0.1 * i as f64).collect(),   // 0.1 .. 0.7
            epochs: (1..=10).map(|i| 2 * i).collect(),            // 2, 4, ..., 20
            batch_sizes: (1..=50).map(|i| 100 * i).collect(),     // 100 .. 5000
            reshape_weight: 0.05,
        }
    }
}

/// Evolved training hyper-parameters. The learning rate is not evolved; it
/// follows the optimizer's conventional default at evaluation time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenomeTraining {
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Genome {
    pub layers: Vec<LayerSpec>,
    pub training: GenomeTraining,
}

impl Genome {
    /// Builds the runnable network (categorical head; the final layer's units
    /// carry the class count).
    pub fn to_network(&self, input_shape: [usize; 3]) -> NetworkSpec {
        NetworkSpec::new(input_shape, self.layers.clone(), LossKind::CategoricalCe)
    }

    /// Canonical text used for hashing and caching.
    pub fn canonical_text(&self, input_shape: [usize; 3]) -> String {
        let mut s = self.to_network(input_shape).to_text();
        s.push_str(&format!(
            "train {} epochs={} batch={}\n",
            self.training.optimizer.name(),
            self.training.epochs,
            self.training.batch_size
        ));
        s
    }

    /// Stable content fingerprint.
    pub fn fingerprint(&self, input_shape: [usize; 3]) -> u64 {
        fnv1a64(self.canonical_text(input_shape).as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FsmState {
    Spatial(usize, usize, usize),
    Flat(usize),
}

impl FsmState {
    fn category(&self) -> u8 {
        match self {
            FsmState::Spatial(..) => 0,
            FsmState::Flat(_) => 1,
        }
    }
}

/// Advances the FSM by one layer, or explains why the layer is illegal.
fn advance(state: FsmState, layer: &LayerSpec) -> std::result::Result<FsmState, String> {
    match (state, layer) {
        (FsmState::Spatial(h, w, c), LayerSpec::Conv2D { filters, kh, kw }) => {
            let _ = c;
            if *filters == 0 {
                return Err("conv2d with zero filters".to_string());
            }
            if *kh > h || *kw > w {
                return Err(format!("kernel {kh}x{kw} exceeds {h}x{w} map"));
            }
            Ok(FsmState::Spatial(h - kh + 1, w - kw + 1, *filters))
        }
        (FsmState::Spatial(h, w, c), LayerSpec::MaxPool2x2) => {
            if h < 2 || w < 2 {
                return Err(format!("2x2 pool on {h}x{w} map"));
            }
            Ok(FsmState::Spatial(h / 2, w / 2, c))
        }
        (FsmState::Spatial(..), LayerSpec::AvgPool2x2) => {
            Err("avgpool2x2 is not in the genome alphabet".to_string())
        }
        (FsmState::Spatial(h, w, c), LayerSpec::Flatten) => Ok(FsmState::Flat(h * w * c)),
        (FsmState::Spatial(..), LayerSpec::Dense { .. }) => {
            Err("dense in spatial state".to_string())
        }
        (FsmState::Spatial(..), LayerSpec::Reshape { .. }) => {
            Err("reshape in spatial state".to_string())
        }
        (FsmState::Flat(_), LayerSpec::Flatten) => Err("flatten while already flat".to_string()),
        (FsmState::Flat(n), LayerSpec::Dense { units }) => {
            if *units == 0 {
                return Err("dense with zero units".to_string());
            }
            let _ = n;
            Ok(FsmState::Flat(*units))
        }
        (FsmState::Flat(n), LayerSpec::Reshape { target }) => {
            let prod = target[0] * target[1] * target[2];
            if prod != n {
                return Err(format!("reshape to {target:?} from {n} elements"));
            }
            Ok(FsmState::Spatial(target[0], target[1], target[2]))
        }
        (s, LayerSpec::Dropout { rate }) => {
            if !(0.0..1.0).contains(rate) {
                return Err(format!("dropout rate {rate} outside [0, 1)"));
            }
            Ok(s)
        }
        (FsmState::Flat(_), LayerSpec::Conv2D { .. }) => {
            Err("conv2d in flat state".to_string())
        }
        (FsmState::Flat(_), LayerSpec::MaxPool2x2 | LayerSpec::AvgPool2x2) => {
            Err("pool in flat state".to_string())
        }
    }
}

fn on_lattice_f64(v: f64, lattice: &[f64]) -> bool {
    lattice.iter().any(|&x| (x - v).abs() < 1e-9)
}

/// Checks the FSM, the terminal pair, the depth range and membership of
/// every hyper-parameter on the default lattices. Returns the list of
/// violations; an empty list means valid.
pub fn validate_genome(
    genome: &Genome,
    input_shape: [usize; 3],
    num_classes: usize,
) -> Vec<String> {
    validate_genome_with(genome, input_shape, num_classes, &TopoLattice::default())
}

/// [`validate_genome`] against a custom lattice.
pub fn validate_genome_with(
    genome: &Genome,
    input_shape: [usize; 3],
    num_classes: usize,
    lat: &TopoLattice,
) -> Vec<String> {
    let mut violations = Vec::new();
    let depth = genome.layers.len();
    if !(MIN_DEPTH..=MAX_DEPTH).contains(&depth) {
        violations.push(format!("depth {depth} outside [{MIN_DEPTH}, {MAX_DEPTH}]"));
    }
    let [h, w, c] = input_shape;
    let mut state = FsmState::Spatial(h, w, c);
    for (i, layer) in genome.layers.iter().enumerate() {
        match advance(state, layer) {
            Ok(next) => state = next,
            Err(msg) => {
                violations.push(format!("layer {i}: {msg}"));
                // keep walking from the unchanged state to report more
                continue;
            }
        }
        match layer {
            LayerSpec::Conv2D { filters, kh, kw } => {
                if !lat.filters.contains(filters) {
                    violations.push(format!("layer {i}: filters {filters} off lattice"));
                }
                if !lat.kernels.contains(kh) || !lat.kernels.contains(kw) {
                    violations.push(format!("layer {i}: kernel {kh}x{kw} off lattice"));
                }
            }
            LayerSpec::Dense { units } if i + 1 != depth => {
                if !lat.units.contains(units) {
                    violations.push(format!("layer {i}: units {units} off lattice"));
                }
            }
            LayerSpec::Dropout { rate } => {
                if !on_lattice_f64(*rate, &lat.dropout) {
                    violations.push(format!("layer {i}: dropout rate {rate} off lattice"));
                }
            }
            _ => {}
        }
    }
    match genome.layers.last() {
        Some(LayerSpec::Dense { units }) if *units == num_classes => {}
        Some(other) => violations.push(format!(
            "final layer is {}, must be dense with {num_classes} units",
            other.kind_name()
        )),
        None => violations.push("empty genome".to_string()),
    }
    if let FsmState::Spatial(..) = state {
        violations.push("network output is spatial".to_string());
    }
    if !lat.epochs.contains(&genome.training.epochs) {
        violations.push(format!("epochs {} off lattice", genome.training.epochs));
    }
    if !lat.batch_sizes.contains(&genome.training.batch_size) {
        violations.push(format!("batch size {} off lattice", genome.training.batch_size));
    }
    violations
}

/// Factorizations `n = h*w*c` with `h, w >= 2`, small channel counts first.
fn reshape_targets(n: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for c in 1..=8usize {
        if c > n || n % c != 0 {
            continue;
        }
        let hw = n / c;
        let mut h = 2;
        while h * h <= hw {
            if hw % h == 0 && hw / h >= 2 {
                out.push([h, hw / h, c]);
                if h != hw / h {
                    out.push([hw / h, h, c]);
                }
            }
            h += 1;
        }
    }
    out
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    &items[rng.random_range(0..items.len())]
}

/// Samples one FSM-legal layer for the given state, or None when the state
/// admits nothing useful (never happens in practice: Dropout is always
/// legal).
fn sample_layer(
    rng: &mut ChaCha8Rng,
    state: FsmState,
    lat: &TopoLattice,
    allow_state_change: bool,
) -> Option<LayerSpec> {
    match state {
        FsmState::Spatial(h, w, _) => {
            let kernels: Vec<usize> = lat
                .kernels
                .iter()
                .copied()
                .filter(|&k| k <= h.min(w))
                .collect();
            let mut kinds = Vec::new();
            if !kernels.is_empty() {
                kinds.push(0); // conv
            }
            if h >= 2 && w >= 2 {
                kinds.push(1); // pool
            }
            kinds.push(2); // dropout
            if allow_state_change {
                kinds.push(3); // flatten
            }
            Some(match *pick(rng, &kinds) {
                0 => LayerSpec::Conv2D {
                    filters: *pick(rng, &lat.filters),
                    kh: *pick(rng, &kernels),
                    kw: *pick(rng, &kernels),
                },
                1 => LayerSpec::MaxPool2x2,
                2 => LayerSpec::Dropout {
                    rate: *pick(rng, &lat.dropout),
                },
                _ => LayerSpec::Flatten,
            })
        }
        FsmState::Flat(n) => {
            let targets = reshape_targets(n);
            let reshape_ok = allow_state_change && !targets.is_empty();
            let total = 2.0 + if reshape_ok { lat.reshape_weight } else { 0.0 };
            let u: f64 = rng.random_range(0.0..total);
            Some(if u < 1.0 {
                LayerSpec::Dense {
                    units: *pick(rng, &lat.units),
                }
            } else if u < 2.0 {
                LayerSpec::Dropout {
                    rate: *pick(rng, &lat.dropout),
                }
            } else {
                LayerSpec::Reshape {
                    target: *pick(rng, &targets),
                }
            })
        }
    }
}

/// Draws a uniformly deep, FSM-valid genome. The walk chooses uniformly
/// among the layer kinds legal in the current state (Reshape carries a small
/// configurable weight), forces Flatten in time for the terminal pair, and
/// always returns a valid genome.
pub fn sample_genome(
    rng: &mut ChaCha8Rng,
    input_shape: [usize; 3],
    num_classes: usize,
    lat: &TopoLattice,
) -> Genome {
    let depth = rng.random_range(MIN_DEPTH..=MAX_DEPTH);
    let [h, w, c] = input_shape;
    let mut layers = Vec::with_capacity(depth);
    let mut state = FsmState::Spatial(h, w, c);
    while layers.len() < depth - 1 {
        let last_body_slot = layers.len() == depth - 2;
        if last_body_slot {
            if let FsmState::Spatial(..) = state {
                state = advance(state, &LayerSpec::Flatten).expect("flatten legal in spatial");
                layers.push(LayerSpec::Flatten);
                continue;
            }
        }
        // near the end, only draws that leave room for the terminal pair
        let allow_state_change = !last_body_slot;
        let layer = sample_layer(rng, state, lat, allow_state_change)
            .expect("dropout is always available");
        state = advance(state, &layer).expect("sampled layer is legal");
        layers.push(layer);
    }
    layers.push(LayerSpec::Dense {
        units: num_classes,
    });
    let genome = Genome {
        layers,
        training: GenomeTraining {
            optimizer: *pick(rng, &OptimizerKind::ALL),
            epochs: *pick(rng, &lat.epochs),
            batch_size: *pick(rng, &lat.batch_sizes),
        },
    };
    debug_assert!(validate_genome_with(&genome, input_shape, num_classes, lat).is_empty());
    genome
}

/// Deletes layers illegal for the state reached so far, enforces the
/// terminal `[..., Flatten?] Dense(num_classes)` pair, and clamps the depth
/// into range.
fn repair(
    mut layers: Vec<LayerSpec>,
    input_shape: [usize; 3],
    num_classes: usize,
    lat: &TopoLattice,
    rng: &mut ChaCha8Rng,
) -> Vec<LayerSpec> {
    let [h, w, c] = input_shape;
    loop {
        // filter pass
        let mut kept = Vec::with_capacity(layers.len());
        let mut state = FsmState::Spatial(h, w, c);
        for layer in layers.drain(..) {
            if let Ok(next) = advance(state, &layer) {
                state = next;
                kept.push(layer);
            }
        }
        // terminal pair
        if let FsmState::Spatial(..) = state {
            kept.push(LayerSpec::Flatten);
        }
        match kept.last_mut() {
            Some(LayerSpec::Dense { units }) => *units = num_classes,
            _ => kept.push(LayerSpec::Dense {
                units: num_classes,
            }),
        }
        if kept.len() > MAX_DEPTH {
            // drop a random non-terminal layer and re-filter
            let idx = rng.random_range(0..kept.len() - 1);
            kept.remove(idx);
            layers = kept;
            continue;
        }
        while kept.len() < MIN_DEPTH {
            let units = *pick(rng, &lat.units);
            kept.insert(kept.len() - 1, LayerSpec::Dense { units });
        }
        return kept;
    }
}

/// Mutation: with probability `newpb` inserts a random FSM-legal layer at a
/// random position; otherwise removes a non-terminal layer, re-samples one
/// layer hyper-parameter on its lattice, or re-samples one training
/// hyper-parameter. The result is repaired to validity and the depth
/// clamped (an insertion that would exceed the maximum depth falls through
/// to the other operators).
pub fn mutate(
    genome: &Genome,
    newpb: f64,
    input_shape: [usize; 3],
    num_classes: usize,
    lat: &TopoLattice,
    rng: &mut ChaCha8Rng,
) -> Genome {
    let mut layers = genome.layers.clone();
    let mut training = genome.training.clone();
    let insert = rng.random::<f64>() < newpb && layers.len() < MAX_DEPTH;
    if insert {
        let pos = rng.random_range(0..layers.len()); // before the final dense at most
        let state = state_at(&layers, input_shape, pos);
        if let Some(layer) = sample_layer(rng, state, lat, true) {
            layers.insert(pos, layer);
        }
    } else {
        match rng.random_range(0..3) {
            0 => {
                // remove a non-terminal layer
                if layers.len() > 1 {
                    let pos = rng.random_range(0..layers.len() - 1);
                    layers.remove(pos);
                }
            }
            1 => {
                // re-sample one structural hyper-parameter
                let tunable: Vec<usize> = layers
                    .iter()
                    .enumerate()
                    .filter(|(i, l)| {
                        matches!(
                            l,
                            LayerSpec::Conv2D { .. } | LayerSpec::Dropout { .. }
                        ) || (matches!(l, LayerSpec::Dense { .. }) && i + 1 != layers.len())
                    })
                    .map(|(i, _)| i)
                    .collect();
                if tunable.is_empty() {
                    training = resample_training(&training, lat, rng);
                } else {
                    let pos = *pick(rng, &tunable);
                    match &mut layers[pos] {
                        LayerSpec::Conv2D { filters, kh, kw } => {
                            if rng.random::<f64>() < 0.5 {
                                *filters = *pick(rng, &lat.filters);
                            } else {
                                *kh = *pick(rng, &lat.kernels);
                                *kw = *pick(rng, &lat.kernels);
                            }
                        }
                        LayerSpec::Dense { units } => *units = *pick(rng, &lat.units),
                        LayerSpec::Dropout { rate } => *rate = *pick(rng, &lat.dropout),
                        _ => {}
                    }
                }
            }
            _ => {
                training = resample_training(&training, lat, rng);
            }
        }
    }
    let layers = repair(layers, input_shape, num_classes, lat, rng);
    let out = Genome { layers, training };
    debug_assert!(validate_genome_with(&out, input_shape, num_classes, lat).is_empty());
    out
}

fn resample_training(
    training: &GenomeTraining,
    lat: &TopoLattice,
    rng: &mut ChaCha8Rng,
) -> GenomeTraining {
    let mut t = training.clone();
    match rng.random_range(0..3) {
        0 => t.optimizer = *pick(rng, &OptimizerKind::ALL),
        1 => t.epochs = *pick(rng, &lat.epochs),
        _ => t.batch_size = *pick(rng, &lat.batch_sizes),
    }
    t
}

fn state_at(layers: &[LayerSpec], input_shape: [usize; 3], pos: usize) -> FsmState {
    let [h, w, c] = input_shape;
    let mut state = FsmState::Spatial(h, w, c);
    for layer in &layers[..pos] {
        match advance(state, layer) {
            Ok(next) => state = next,
            Err(_) => break,
        }
    }
    state
}

/// One-point crossover at an index where both parents' FSM states match
/// (category-wise): the child is `a[..cut] + b[cut..]`, training fields
/// inherited field-wise uniformly, then repaired. Identical parents yield
/// an identical child.
pub fn crossover(
    a: &Genome,
    b: &Genome,
    input_shape: [usize; 3],
    num_classes: usize,
    lat: &TopoLattice,
    rng: &mut ChaCha8Rng,
) -> Genome {
    let [h, w, c] = input_shape;
    let states = |layers: &[LayerSpec]| -> Vec<u8> {
        let mut out = Vec::with_capacity(layers.len() + 1);
        let mut st = FsmState::Spatial(h, w, c);
        out.push(st.category());
        for l in layers {
            match advance(st, l) {
                Ok(next) => st = next,
                Err(_) => {}
            }
            out.push(st.category());
        }
        out
    };
    let sa = states(&a.layers);
    let sb = states(&b.layers);
    let max_cut = a.layers.len().min(b.layers.len());
    let candidates: Vec<usize> = (1..max_cut).filter(|&i| sa[i] == sb[i]).collect();
    let mut layers: Vec<LayerSpec> = if candidates.is_empty() {
        a.layers.clone()
    } else {
        let cut = *pick(rng, &candidates);
        let mut v = a.layers[..cut].to_vec();
        v.extend_from_slice(&b.layers[cut..]);
        v
    };
    let training = GenomeTraining {
        optimizer: if rng.random::<bool>() {
            a.training.optimizer
        } else {
            b.training.optimizer
        },
        epochs: if rng.random::<bool>() {
            a.training.epochs
        } else {
            b.training.epochs
        },
        batch_size: if rng.random::<bool>() {
            a.training.batch_size
        } else {
            b.training.batch_size
        },
    };
    layers = repair(layers, input_shape, num_classes, lat, rng);
    let child = Genome { layers, training };
    debug_assert!(validate_genome_with(&child, input_shape, num_classes, lat).is_empty());
    child
}

/// Smallest valid genome; a fixture for evaluation tests.
#[cfg(test)]
pub(crate) fn minimal_genome(num_classes: usize, lat: &TopoLattice, rng: &mut ChaCha8Rng) -> Genome {
    Genome {
        layers: vec![
            LayerSpec::Flatten,
            LayerSpec::Dense {
                units: *pick(rng, &lat.units),
            },
            LayerSpec::Dense {
                units: num_classes,
            },
        ],
        training: GenomeTraining {
            optimizer: *pick(rng, &OptimizerKind::ALL),
            epochs: *pick(rng, &lat.epochs),
            batch_size: *pick(rng, &lat.batch_sizes),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    const SHAPE: [usize; 3] = [28, 28, 1];

    #[test]
    fn canonical_chain_is_valid() {
        let g = Genome {
            layers: vec![
                LayerSpec::Conv2D { filters: 8, kh: 3, kw: 3 },
                LayerSpec::MaxPool2x2,
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 10 },
            ],
            training: GenomeTraining {
                optimizer: OptimizerKind::Adam,
                epochs: 4,
                batch_size: 100,
            },
        };
        assert!(validate_genome(&g, SHAPE, 10).is_empty());
    }

    #[test]
    fn dense_in_spatial_state_is_reported() {
        let g = Genome {
            layers: vec![
                LayerSpec::Conv2D { filters: 8, kh: 3, kw: 3 },
                LayerSpec::Dense { units: 10 },
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 10 },
            ],
            training: GenomeTraining {
                optimizer: OptimizerKind::Sgd,
                epochs: 2,
                batch_size: 100,
            },
        };
        let v = validate_genome(&g, SHAPE, 10);
        assert!(v.iter().any(|m| m.contains("dense in spatial state")), "{v:?}");
    }

    #[test]
    fn double_flatten_is_reported() {
        let g = Genome {
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 10 },
            ],
            training: GenomeTraining {
                optimizer: OptimizerKind::Sgd,
                epochs: 2,
                batch_size: 100,
            },
        };
        let v = validate_genome(&g, SHAPE, 10);
        assert!(v.iter().any(|m| m.contains("already flat")), "{v:?}");
    }

    #[test]
    fn sampled_genomes_are_valid_and_on_lattice() {
        let lat = TopoLattice::default();
        let mut rng = rng_for(1, 0);
        for _ in 0..500 {
            let g = sample_genome(&mut rng, SHAPE, 10, &lat);
            let v = validate_genome(&g, SHAPE, 10);
            assert!(v.is_empty(), "{v:?}\n{g:?}");
            assert!(g.layers.len() >= MIN_DEPTH && g.layers.len() <= MAX_DEPTH);
            assert_eq!(g.training.batch_size % 100, 0);
            assert!(g.training.batch_size >= 100 && g.training.batch_size <= 5000);
            assert_eq!(g.training.epochs % 2, 0);
            assert!(g.training.epochs >= 2 && g.training.epochs <= 20);
            // shape inference must succeed end to end
            g.to_network(SHAPE).validate().unwrap();
        }
    }

    #[test]
    fn mutations_preserve_validity() {
        let lat = TopoLattice::default();
        let mut rng = rng_for(2, 0);
        let mut g = sample_genome(&mut rng, SHAPE, 10, &lat);
        for _ in 0..500 {
            g = mutate(&g, 0.5, SHAPE, 10, &lat, &mut rng);
            let v = validate_genome(&g, SHAPE, 10);
            assert!(v.is_empty(), "{v:?}\n{g:?}");
        }
    }

    #[test]
    fn max_depth_insertion_falls_through() {
        let lat = TopoLattice::default();
        let mut rng = rng_for(3, 0);
        // grow a genome to depth 20 by repeated insertion-only mutation
        let mut g = sample_genome(&mut rng, SHAPE, 10, &lat);
        for _ in 0..200 {
            g = mutate(&g, 1.0, SHAPE, 10, &lat, &mut rng);
            assert!(g.layers.len() <= MAX_DEPTH);
        }
    }

    #[test]
    fn crossover_of_identical_parents_is_identity() {
        let lat = TopoLattice::default();
        let mut rng = rng_for(4, 0);
        for _ in 0..50 {
            let g = sample_genome(&mut rng, SHAPE, 10, &lat);
            let child = crossover(&g, &g, SHAPE, 10, &lat, &mut rng);
            assert_eq!(child.layers, g.layers);
            assert_eq!(child.training, g.training);
        }
    }

    #[test]
    fn crossovers_preserve_validity() {
        let lat = TopoLattice::default();
        let mut rng = rng_for(5, 0);
        for _ in 0..500 {
            let a = sample_genome(&mut rng, SHAPE, 10, &lat);
            let b = sample_genome(&mut rng, SHAPE, 10, &lat);
            let child = crossover(&a, &b, SHAPE, 10, &lat, &mut rng);
            let v = validate_genome(&child, SHAPE, 10);
            assert!(v.is_empty(), "{v:?}\n{child:?}");
        }
    }

    #[test]
    fn fingerprint_distinguishes_genomes() {
        let lat = TopoLattice::default();
        let mut rng = rng_for(6, 0);
        let a = sample_genome(&mut rng, SHAPE, 10, &lat);
        let b = sample_genome(&mut rng, SHAPE, 10, &lat);
        assert_eq!(a.fingerprint(SHAPE), a.clone().fingerprint(SHAPE));
        if a != b {
            assert_ne!(a.fingerprint(SHAPE), b.fingerprint(SHAPE));
        }
    }
}
