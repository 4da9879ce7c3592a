//! Feed-forward ReLU networks: representation, evaluation and input gradients.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("layer {layer}: {msg}")]
    Shape { layer: usize, msg: String },
    #[error("layer {layer}: non-finite parameter")]
    NonFinite { layer: usize },
    #[error("network has no layers")]
    Empty,
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("truncated file at line {line}")]
    Truncated { line: usize },
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NetworkError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(NetworkError::Dimension {
                    expected: cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub relu: bool,
}

impl Layer {
    pub fn width(&self) -> usize {
        self.weights.rows()
    }

    /// Affine map `W x + b`.
    pub fn affine(&self, x: &[f64]) -> Vec<f64> {
        (0..self.weights.rows())
            .map(|r| {
                let row = self.weights.row(r);
                row.iter()
                    .zip(x)
                    .fold(self.bias[r], |acc, (w, v)| acc + w * v)
            })
            .collect()
    }
}

/// Input/output normalization block of an NNet file. Retained but only
/// applied when explicitly requested.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mins: Vec<f64>,
    pub maxes: Vec<f64>,
    /// `input_dim + 1` entries; the last one is the output mean.
    pub means: Vec<f64>,
    /// `input_dim + 1` entries; the last one is the output range.
    pub ranges: Vec<f64>,
}

impl Normalization {
    pub fn normalize_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - self.means[i]) / self.ranges[i])
            .collect()
    }

    pub fn output_mean(&self) -> f64 {
        self.means.last().copied().unwrap_or(0.0)
    }

    pub fn output_range(&self) -> f64 {
        self.ranges.last().copied().unwrap_or(1.0)
    }
}

/// A hidden ReLU unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: usize,
    pub index: usize,
}

impl NeuronId {
    pub fn new(layer: usize, index: usize) -> Self {
        Self { layer, index }
    }
}

impl fmt::Display for NeuronId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}_{}", self.layer, self.index)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ReluPhase {
    Active,
    Inactive,
}

impl ReluPhase {
    pub fn of(pre_activation: f64) -> Self {
        // ReLU(0) = 0 lies on the inactive piece.
        if pre_activation > 0.0 {
            ReluPhase::Active
        } else {
            ReluPhase::Inactive
        }
    }

    pub fn flip(self) -> Self {
        match self {
            ReluPhase::Active => ReluPhase::Inactive,
            ReluPhase::Inactive => ReluPhase::Active,
        }
    }
}

/// Phase of every hidden neuron for one concrete input.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ActivationPattern {
    phases: Vec<Vec<ReluPhase>>,
}

impl ActivationPattern {
    pub fn get(&self, id: NeuronId) -> ReluPhase {
        self.phases[id.layer][id.index]
    }

    pub fn layers(&self) -> &[Vec<ReluPhase>] {
        &self.phases
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<Layer>,
    input_dim: usize,
    normalization: Option<Normalization>,
}

impl Network {
    /// Builds a network; every layer but the last is a ReLU layer.
    pub fn new(layers: Vec<Layer>) -> Result<Self, NetworkError> {
        let first = layers.first().ok_or(NetworkError::Empty)?;
        let input_dim = first.weights.cols();
        let mut prev = input_dim;
        let last = layers.len() - 1;
        for (k, layer) in layers.iter().enumerate() {
            if layer.weights.cols() != prev {
                return Err(NetworkError::Shape {
                    layer: k,
                    msg: format!("expected {prev} columns, found {}", layer.weights.cols()),
                });
            }
            if layer.bias.len() != layer.weights.rows() {
                return Err(NetworkError::Shape {
                    layer: k,
                    msg: format!(
                        "bias length {} differs from row count {}",
                        layer.bias.len(),
                        layer.weights.rows()
                    ),
                });
            }
            if layer.relu != (k != last) {
                return Err(NetworkError::Shape {
                    layer: k,
                    msg: "only hidden layers carry a ReLU".into(),
                });
            }
            if !layer
                .weights
                .data
                .iter()
                .chain(&layer.bias)
                .all(|v| v.is_finite())
            {
                return Err(NetworkError::NonFinite { layer: k });
            }
            prev = layer.weights.rows();
        }
        Ok(Self {
            layers,
            input_dim,
            normalization: None,
        })
    }

    /// Convenience constructor from nested weight rows and biases.
    pub fn from_parts(parts: Vec<(Vec<Vec<f64>>, Vec<f64>)>) -> Result<Self, NetworkError> {
        let n = parts.len();
        let layers = parts
            .into_iter()
            .enumerate()
            .map(|(k, (w, b))| {
                Ok(Layer {
                    weights: Matrix::from_rows(&w)?,
                    bias: b,
                    relu: k + 1 != n,
                })
            })
            .collect::<Result<Vec<_>, NetworkError>>()?;
        Self::new(layers)
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = Some(normalization);
        self
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::width)
    }

    pub fn num_hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.num_hidden_layers()]
            .iter()
            .map(Layer::width)
            .collect()
    }

    pub fn num_hidden_neurons(&self) -> usize {
        self.hidden_widths().iter().sum()
    }

    /// All hidden neurons in layer-major order.
    pub fn hidden_neurons(&self) -> impl Iterator<Item = NeuronId> + '_ {
        self.layers[..self.num_hidden_layers()]
            .iter()
            .enumerate()
            .flat_map(|(l, layer)| (0..layer.width()).map(move |i| NeuronId::new(l, i)))
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NetworkError> {
        if x.len() != self.input_dim {
            return Err(NetworkError::Dimension {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn forward(&self, x: &[f64], mut pattern: Option<&mut Vec<Vec<ReluPhase>>>) -> Vec<f64> {
        let mut act = x.to_vec();
        for layer in &self.layers {
            let mut z = layer.affine(&act);
            if layer.relu {
                if let Some(p) = pattern.as_deref_mut() {
                    p.push(z.iter().map(|&v| ReluPhase::of(v)).collect());
                }
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            act = z;
        }
        act
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>, NetworkError> {
        self.check_input(x)?;
        Ok(self.forward(x, None))
    }

    pub fn evaluate_with_pattern(
        &self,
        x: &[f64],
    ) -> Result<(Vec<f64>, ActivationPattern), NetworkError> {
        self.check_input(x)?;
        let mut phases = Vec::with_capacity(self.num_hidden_layers());
        let y = self.forward(x, Some(&mut phases));
        Ok((y, ActivationPattern { phases }))
    }

    /// Gradient of `objective · f(x)` with respect to `x`, under the
    /// activation pattern of `x` (subgradient 0 at a kink).
    pub fn input_gradient(&self, x: &[f64], objective: &[f64]) -> Result<Vec<f64>, NetworkError> {
        self.check_input(x)?;
        if objective.len() != self.output_dim() {
            return Err(NetworkError::Dimension {
                expected: self.output_dim(),
                got: objective.len(),
            });
        }
        let (_, pattern) = self.evaluate_with_pattern(x)?;
        let mut grad = objective.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            if layer.relu {
                for (g, phase) in grad.iter_mut().zip(&pattern.phases[k]) {
                    if *phase == ReluPhase::Inactive {
                        *g = 0.0;
                    }
                }
            }
            let w = &layer.weights;
            let mut prev = vec![0.0; w.cols()];
            for (r, g) in grad.iter().enumerate() {
                if *g == 0.0 {
                    continue;
                }
                for (p, wv) in prev.iter_mut().zip(w.row(r)) {
                    *p += g * wv;
                }
            }
            grad = prev;
        }
        Ok(grad)
    }
}
