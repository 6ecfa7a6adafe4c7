use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    /// `(1/beta) * ln(1 + exp(beta * z))`
    Softplus { beta: f64 },
    Linear,
}

impl Default for Activation {
    fn default() -> Self {
        Activation::Softplus { beta: 1.0 }
    }
}

/// Architecture of one dense network: Fourier-encoded input, `depth` linear
/// layers, activation on every layer but the last, and an optional skip that
/// concatenates the encoded input onto the input of layer `skip_layer`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub num_freqs: usize,
    pub hidden: usize,
    pub depth: usize,
    pub output_dim: usize,
    pub skip_layer: Option<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn encoded_dim(&self) -> usize {
        self.input_dim * (2 * self.num_freqs + 1)
    }

    /// `(inputs, outputs)` of every linear layer in order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let enc = self.encoded_dim();
        (0..self.depth)
            .map(|k| {
                let mut inputs = if k == 0 { enc } else { self.hidden };
                if self.skip_layer == Some(k) {
                    inputs += enc;
                }
                let outputs = if k + 1 == self.depth { self.output_dim } else { self.hidden };
                (inputs, outputs)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.depth == 0 {
            return Err(Error::Shape(format!("empty network dimensions: {self:?}")));
        }
        if self.depth > 1 && self.hidden == 0 {
            return Err(Error::Shape("hidden width must be positive".into()));
        }
        if let Some(s) = self.skip_layer {
            if s == 0 || s >= self.depth {
                return Err(Error::Shape(format!(
                    "skip layer {s} outside 1..{}",
                    self.depth
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub inputs: usize,
    pub outputs: usize,
    /// Offset of the row-major `outputs x inputs` weight; the bias follows it.
    pub offset: usize,
}

impl LayerSlot {
    fn weight_len(&self) -> usize {
        self.inputs * self.outputs
    }

    fn len(&self) -> usize {
        self.weight_len() + self.outputs
    }
}

/// Flat parameter storage for one or more dense networks.
///
/// Layer shapes are fixed at construction; only values change afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBlock {
    nets: Vec<MlpSpec>,
    first_layer: Vec<usize>,
    layers: Vec<LayerSlot>,
    data: Vec<f64>,
}

impl ParameterBlock {
    /// Zero-valued parameters for the given networks.
    pub fn new(nets: Vec<MlpSpec>) -> Result<Self> {
        let mut layers = Vec::new();
        let mut first_layer = Vec::with_capacity(nets.len());
        let mut offset = 0;
        for spec in &nets {
            spec.validate()?;
            first_layer.push(layers.len());
            for (inputs, outputs) in spec.layer_shapes() {
                let slot = LayerSlot {
                    inputs,
                    outputs,
                    offset,
                };
                offset += slot.len();
                layers.push(slot);
            }
        }
        Ok(Self {
            nets,
            first_layer,
            layers,
            data: vec![0.0; offset],
        })
    }

    pub fn with_values(nets: Vec<MlpSpec>, data: Vec<f64>) -> Result<Self> {
        let mut block = Self::new(nets)?;
        if data.len() != block.data.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                block.data.len(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("parameter {i} is not finite")));
        }
        block.data = data;
        Ok(block)
    }

    /// PyTorch-style default init: weights and biases `U(-1/sqrt(in), 1/sqrt(in))`.
    pub fn init_uniform(&mut self, rng: &mut Rng) {
        for slot in &self.layers {
            let bound = 1.0 / (slot.inputs as f64).sqrt();
            for v in &mut self.data[slot.offset..slot.offset + slot.len()] {
                *v = rng.random_range(-bound..bound);
            }
        }
    }

    /// Zero the weights and bias of the last layer of `net`.
    pub fn zero_output_layer(&mut self, net: usize) {
        let slot = self.layers[self.layer_index(net, self.nets[net].depth - 1)];
        self.data[slot.offset..slot.offset + slot.len()].fill(0.0);
    }

    pub fn nets(&self) -> &[MlpSpec] {
        &self.nets
    }

    pub fn spec(&self, net: usize) -> &MlpSpec {
        &self.nets[net]
    }

    pub fn layers(&self) -> &[LayerSlot] {
        &self.layers
    }

    pub fn layer_index(&self, net: usize, k: usize) -> usize {
        debug_assert!(k < self.nets[net].depth);
        self.first_layer[net] + k
    }

    pub fn slot(&self, layer: usize) -> LayerSlot {
        self.layers[layer]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn weight(&self, layer: usize) -> ArrayView2<'_, f64> {
        let s = self.layers[layer];
        ArrayView2::from_shape((s.outputs, s.inputs), &self.data[s.offset..s.offset + s.weight_len()])
            .expect("layer slot shape")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let s = self.layers[layer];
        let start = s.offset + s.weight_len();
        ArrayView1::from(&self.data[start..start + s.outputs])
    }

    pub fn weight_mut(&mut self, layer: usize) -> ArrayViewMut2<'_, f64> {
        let s = self.layers[layer];
        ArrayViewMut2::from_shape(
            (s.outputs, s.inputs),
            &mut self.data[s.offset..s.offset + s.weight_len()],
        )
        .expect("layer slot shape")
    }

    pub fn bias_mut(&mut self, layer: usize) -> ArrayViewMut1<'_, f64> {
        let s = self.layers[layer];
        let start = s.offset + s.weight_len();
        ArrayViewMut1::from(&mut self.data[start..start + s.outputs])
    }
}
