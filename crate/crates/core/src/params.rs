//! Flat parameter storage with per-layer segments, and Glorot initialization.
//!
//! Within a segment the order is: all weights, then all biases. Conv weights
//! are laid out `[filter][kh][kw][c_in]`, dense weights `[out][in]`, both
//! row-major.

use crate::error::{Error, Result};
use crate::net::{LayerSpec, NetworkSpec, Shape};
use crate::rng;
use rand::Rng;

/// Contiguous slice of the flat vector belonging to one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub layer_index: usize,
    pub offset: usize,
    pub len: usize,
}

/// Ordered, non-overlapping segments covering every parameterized layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    pub segments: Vec<Segment>,
    pub total: usize,
}

impl LayerLayout {
    pub fn of(net: &NetworkSpec) -> Result<Self> {
        let shapes = net.infer_shapes()?;
        let mut segments = Vec::new();
        let mut offset = 0usize;
        let mut prev = Shape::Spatial(net.input_shape);
        for (idx, layer) in net.layers.iter().enumerate() {
            let len = match layer {
                LayerSpec::Conv2D { filters, kh, kw } => {
                    let c_in = match prev {
                        Shape::Spatial([_, _, c]) => c,
                        Shape::Flat(_) => unreachable!(),
                    };
                    filters * (kh * kw * c_in + 1)
                }
                LayerSpec::Dense { units } => prev.num_elements() * units + units,
                _ => 0,
            };
            if len > 0 {
                segments.push(Segment {
                    layer_index: idx,
                    offset,
                    len,
                });
                offset += len;
            }
            prev = shapes[idx];
        }
        Ok(Self {
            segments,
            total: offset,
        })
    }

    /// Segment of the given layer, if it has parameters.
    pub fn segment_of_layer(&self, layer_index: usize) -> Option<Segment> {
        self.segments
            .iter()
            .copied()
            .find(|s| s.layer_index == layer_index)
    }
}

/// Flat vector of all trainable parameters with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub values: Vec<f64>,
    pub layout: LayerLayout,
}

impl ParameterVector {
    pub fn new(values: Vec<f64>, layout: LayerLayout) -> Result<Self> {
        if values.len() != layout.total {
            return Err(Error::shape(format!(
                "parameter vector has {} values, layout expects {}",
                values.len(),
                layout.total
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::shape("non-finite parameter value".to_string()));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: LayerLayout) -> Self {
        let values = vec![0.0; layout.total];
        Self { values, layout }
    }

    /// Borrows each layer's slice, in layout order.
    pub fn split_layers(&self) -> Vec<(usize, &[f64])> {
        self.layout
            .segments
            .iter()
            .map(|s| (s.layer_index, &self.values[s.offset..s.offset + s.len]))
            .collect()
    }

    /// Rebuilds the flat vector from per-layer arrays in layout order.
    pub fn from_layer_arrays(layout: LayerLayout, arrays: &[(usize, Vec<f64>)]) -> Result<Self> {
        if arrays.len() != layout.segments.len() {
            return Err(Error::shape(format!(
                "expected {} layer arrays, got {}",
                layout.segments.len(),
                arrays.len()
            )));
        }
        let mut values = vec![0.0; layout.total];
        for (seg, (layer_index, arr)) in layout.segments.iter().zip(arrays) {
            if seg.layer_index != *layer_index || seg.len != arr.len() {
                return Err(Error::shape(format!(
                    "layer array for layer {layer_index} does not match layout segment {seg:?}"
                )));
            }
            values[seg.offset..seg.offset + seg.len].copy_from_slice(arr);
        }
        Ok(Self { values, layout })
    }
}

/// Glorot fan pair of one layer: conv fans include the receptive field.
fn fans(layer: &LayerSpec, input: Shape) -> (usize, usize) {
    match layer {
        LayerSpec::Conv2D { filters, kh, kw } => {
            let c_in = match input {
                Shape::Spatial([_, _, c]) => c,
                Shape::Flat(_) => unreachable!(),
            };
            (kh * kw * c_in, kh * kw * filters)
        }
        LayerSpec::Dense { units } => (input.num_elements(), *units),
        _ => (0, 0),
    }
}

/// Glorot-uniform initialization: weights drawn from
/// `U(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out)))`, biases zero.
/// Deterministic for a given `(network, seed)`.
pub fn glorot_init(net: &NetworkSpec, seed: u64) -> Result<ParameterVector> {
    let layout = LayerLayout::of(net)?;
    let shapes = net.infer_shapes()?;
    let mut values = vec![0.0; layout.total];
    let mut gen = rng::rng_for(seed, roles::GLOROT);
    for seg in &layout.segments {
        let layer = &net.layers[seg.layer_index];
        let input = if seg.layer_index == 0 {
            Shape::Spatial(net.input_shape)
        } else {
            shapes[seg.layer_index - 1]
        };
        let (fan_in, fan_out) = fans(layer, input);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let bias_count = match layer {
            LayerSpec::Conv2D { filters, .. } => *filters,
            LayerSpec::Dense { units } => *units,
            _ => 0,
        };
        let weight_count = seg.len - bias_count;
        for v in &mut values[seg.offset..seg.offset + weight_count] {
            *v = gen.random_range(-limit..limit);
        }
        // biases stay zero
    }
    ParameterVector::new(values, layout)
}

/// Glorot-uniform bound of one layer, used when seeding per-segment searches.
pub fn glorot_limit(net: &NetworkSpec, layer_index: usize) -> Result<f64> {
    let shapes = net.infer_shapes()?;
    let input = if layer_index == 0 {
        Shape::Spatial(net.input_shape)
    } else {
        shapes[layer_index - 1]
    };
    let (fan_in, fan_out) = fans(&net.layers[layer_index], input);
    if fan_in + fan_out == 0 {
        return Err(Error::config(format!(
            "layer {layer_index} has no trainable parameters"
        )));
    }
    Ok((6.0 / (fan_in + fan_out) as f64).sqrt())
}

pub(crate) mod roles {
    pub const GLOROT: u64 = 0x01;
    pub const SHUFFLE: u64 = 0x02;
    pub const DROPOUT: u64 = 0x03;
    pub const SOLVER: u64 = 0x04;
    pub const PLAN: u64 = 0x05;
    pub const SPLIT: u64 = 0x06;
    pub const SUBSAMPLE: u64 = 0x07;
    pub const SYNTH: u64 = 0x08;
    pub const TOPO: u64 = 0x09;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{zoo, LossKind};

    #[test]
    fn layout_is_contiguous_and_matches_count() {
        let net = zoo::mnist();
        let layout = LayerLayout::of(&net).unwrap();
        assert_eq!(layout.total as u64, net.count_params().unwrap());
        let mut offset = 0;
        for seg in &layout.segments {
            assert_eq!(seg.offset, offset);
            offset += seg.len;
        }
        assert_eq!(offset, layout.total);
        let indices: Vec<usize> = layout.segments.iter().map(|s| s.layer_index).collect();
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        assert_eq!(indices, sorted);
    }

    #[test]
    fn glorot_biases_zero_and_weights_bounded() {
        let net = NetworkSpec::new(
            [1, 1, 63],
            vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 128 },
                LayerSpec::Dense { units: 1 },
            ],
            LossKind::BinaryCe,
        );
        let p = glorot_init(&net, 7).unwrap();
        let seg = p.layout.segments[0];
        let bound = 0.17723885738021736; // sqrt(6/191)
        let weights = &p.values[seg.offset..seg.offset + 63 * 128];
        assert!(weights.iter().all(|w| w.abs() <= bound));
        let biases = &p.values[seg.offset + 63 * 128..seg.offset + seg.len];
        assert!(biases.iter().all(|b| *b == 0.0));
        // not degenerate
        assert!(weights.iter().any(|w| w.abs() > bound / 10.0));
    }

    #[test]
    fn glorot_is_deterministic() {
        let net = zoo::hands();
        let a = glorot_init(&net, 42).unwrap();
        let b = glorot_init(&net, 42).unwrap();
        assert_eq!(a.values, b.values);
        let c = glorot_init(&net, 43).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn scatter_gather_round_trip() {
        let net = zoo::hands();
        let p = glorot_init(&net, 5).unwrap();
        let arrays: Vec<(usize, Vec<f64>)> = p
            .split_layers()
            .into_iter()
            .map(|(i, s)| (i, s.to_vec()))
            .collect();
        let back = ParameterVector::from_layer_arrays(p.layout.clone(), &arrays).unwrap();
        assert_eq!(p.values, back.values);
    }
}
