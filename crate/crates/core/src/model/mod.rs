//! Two-layer LSTM with a sigmoid classifier head.
//!
//! Parameters live in one flat vector so that deltas, SGD steps and
//! federated averaging are plain element-wise operations. [`Layout`] maps
//! named parameter groups to ranges of that vector.

mod lstm;
mod train;

use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;

use crate::seed::rng;
use crate::{Error, Result};

pub use lstm::{backward, backward_scaled, batch_loss, lstm_forward, sigmoid, ForwardTrace, HiddenState};
pub use train::{classify_at, predict, sgd_step, train_local, LocalOutcome, TrainStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub input_size: usize,
    pub hidden_size: usize,
    /// Always 2: the head reads the final hidden state of the second layer.
    pub num_layers: usize,
}

impl ModelDims {
    pub fn new(input_size: usize, hidden_size: usize) -> Self {
        ModelDims {
            input_size,
            hidden_size,
            num_layers: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 {
            return Err(Error::validation("dims.input_size", "must be at least 1"));
        }
        if self.hidden_size == 0 {
            return Err(Error::validation("dims.hidden_size", "must be at least 1"));
        }
        if self.num_layers != 2 {
            return Err(Error::validation("dims.num_layers", "must be 2"));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout { dims: *self }
    }

    pub fn param_count(&self) -> usize {
        self.layout().len()
    }
}

/// LSTM gates in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input,
    Forget,
    Cell,
    Output,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Cell, Gate::Output];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Input-to-hidden matrix, `hidden × layer_input`.
    Input,
    /// Hidden-to-hidden matrix, `hidden × hidden`.
    Recurrent,
    Bias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Lstm { layer: usize, gate: Gate, kind: ParamKind },
    HeadWeights,
    HeadBias,
}

/// Offsets of every parameter group inside the flat vector.
///
/// Per layer: the four input matrices stacked gate-major (`4H × in`), then
/// the four recurrent matrices (`4H × H`), then the four bias vectors
/// (`4H`). The head follows: `H` weights and one bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub dims: ModelDims,
}

impl Layout {
    pub fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.dims.input_size
        } else {
            self.dims.hidden_size
        }
    }

    fn layer_len(&self, layer: usize) -> usize {
        let h = self.dims.hidden_size;
        4 * h * (self.layer_input(layer) + h + 1)
    }

    fn layer_start(&self, layer: usize) -> usize {
        (0..layer).map(|l| self.layer_len(l)).sum()
    }

    /// Stacked `4H × in` input weights of a layer.
    pub fn input_weights(&self, layer: usize) -> Range<usize> {
        let start = self.layer_start(layer);
        start..start + 4 * self.dims.hidden_size * self.layer_input(layer)
    }

    /// Stacked `4H × H` recurrent weights of a layer.
    pub fn recurrent_weights(&self, layer: usize) -> Range<usize> {
        let start = self.input_weights(layer).end;
        let h = self.dims.hidden_size;
        start..start + 4 * h * h
    }

    /// Stacked `4H` biases of a layer.
    pub fn biases(&self, layer: usize) -> Range<usize> {
        let start = self.recurrent_weights(layer).end;
        start..start + 4 * self.dims.hidden_size
    }

    pub fn head_weights(&self) -> Range<usize> {
        let start = self.layer_start(self.dims.num_layers);
        start..start + self.dims.hidden_size
    }

    pub fn head_bias(&self) -> usize {
        self.head_weights().end
    }

    pub fn len(&self) -> usize {
        self.head_bias() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn range(&self, group: ParamGroup) -> Range<usize> {
        match group {
            ParamGroup::Lstm { layer, gate, kind } => {
                let block = match kind {
                    ParamKind::Input => self.input_weights(layer),
                    ParamKind::Recurrent => self.recurrent_weights(layer),
                    ParamKind::Bias => self.biases(layer),
                };
                let size = block.len() / 4;
                let start = block.start + gate.index() * size;
                start..start + size
            }
            ParamGroup::HeadWeights => self.head_weights(),
            ParamGroup::HeadBias => self.head_bias()..self.head_bias() + 1,
        }
    }

    /// Every group, in storage order.
    pub fn groups(&self) -> Vec<ParamGroup> {
        let mut out = Vec::new();
        for layer in 0..self.dims.num_layers {
            for kind in [ParamKind::Input, ParamKind::Recurrent, ParamKind::Bias] {
                for gate in Gate::ALL {
                    out.push(ParamGroup::Lstm { layer, gate, kind });
                }
            }
        }
        out.push(ParamGroup::HeadWeights);
        out.push(ParamGroup::HeadBias);
        out
    }
}

/// A full copy of the model weights (`w^n` on a client, `w_z` globally).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    dims: ModelDims,
    values: Vec<f64>,
}

/// `u^n = w^n - w_z`, or any other vector shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightDelta {
    dims: ModelDims,
    values: Vec<f64>,
}

/// Gradients share the delta's shape.
pub type Gradient = WeightDelta;

fn check_len(dims: &ModelDims, len: usize) -> Result<()> {
    dims.validate()?;
    let expected = dims.param_count();
    if len != expected {
        return Err(Error::Shape {
            expected,
            found: len,
            what: "parameter vector",
        });
    }
    Ok(())
}

impl ModelParameters {
    pub fn from_values(dims: ModelDims, values: Vec<f64>) -> Result<Self> {
        check_len(&dims, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameters"));
        }
        Ok(ModelParameters { dims, values })
    }

    pub fn zeros(dims: ModelDims) -> Result<Self> {
        Self::from_values(dims, alloc::vec![0.0; dims.param_count()])
    }

    /// Uniform weights in `±1/√fan_in`, where `fan_in` is the number of
    /// columns of the matrix; forget-gate biases start at 1, all others at 0.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(dims)?;
        let layout = dims.layout();
        let mut rng = rng(seed);
        let mut fill = |values: &mut [f64], fan_in: usize| {
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            for v in values {
                *v = rng.random_range(-bound..=bound);
            }
        };
        for layer in 0..dims.num_layers {
            fill(&mut p.values[layout.input_weights(layer)], layout.layer_input(layer));
            fill(&mut p.values[layout.recurrent_weights(layer)], dims.hidden_size);
            let forget = layout.range(ParamGroup::Lstm {
                layer,
                gate: Gate::Forget,
                kind: ParamKind::Bias,
            });
            p.values[forget].fill(1.0);
        }
        fill(&mut p.values[layout.head_weights()], dims.hidden_size);
        Ok(p)
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn layout(&self) -> Layout {
        self.dims.layout()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn group(&self, group: ParamGroup) -> &[f64] {
        &self.values[self.layout().range(group)]
    }

    pub fn group_mut(&mut self, group: ParamGroup) -> &mut [f64] {
        let range = self.layout().range(group);
        &mut self.values[range]
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self - base`.
    pub fn delta_from(&self, base: &ModelParameters) -> Result<WeightDelta> {
        self.check_compatible(base.dims)?;
        Ok(WeightDelta {
            dims: self.dims,
            values: self.values.iter().zip(&base.values).map(|(a, b)| a - b).collect(),
        })
    }

    /// `self + delta`.
    pub fn apply(&self, delta: &WeightDelta) -> Result<ModelParameters> {
        self.check_compatible(delta.dims)?;
        Ok(ModelParameters {
            dims: self.dims,
            values: self.values.iter().zip(&delta.values).map(|(a, b)| a + b).collect(),
        })
    }

    pub(crate) fn check_compatible(&self, other: ModelDims) -> Result<()> {
        if self.dims != other {
            return Err(Error::Shape {
                expected: self.dims.param_count(),
                found: other.param_count(),
                what: "parameter dims",
            });
        }
        Ok(())
    }
}

impl WeightDelta {
    pub fn zeros(dims: ModelDims) -> Self {
        WeightDelta {
            dims,
            values: alloc::vec![0.0; dims.param_count()],
        }
    }

    pub fn from_values(dims: ModelDims, values: Vec<f64>) -> Result<Self> {
        check_len(&dims, values.len())?;
        Ok(WeightDelta { dims, values })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn group(&self, group: ParamGroup) -> &[f64] {
        &self.values[self.dims.layout().range(group)]
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.values.iter().map(|v| v * v).sum())
    }

    pub fn scaled(&self, factor: f64) -> WeightDelta {
        WeightDelta {
            dims: self.dims,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Convenience wrapper for [`ModelParameters::init`].
pub fn init_params(dims: ModelDims, seed: u64) -> Result<ModelParameters> {
    ModelParameters::init(dims, seed)
}
