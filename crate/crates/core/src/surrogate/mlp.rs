use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// A fully connected layer; `weights` is `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.ncols()
    }
}

/// Shape of a surrogate network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub hidden_width: usize,
    /// Number of dense layers, including the classification head.
    pub layers: usize,
    pub dropout_rate: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hidden_width: 128,
            layers: 4,
            dropout_rate: 0.2,
        }
    }
}

impl ModelSpec {
    /// A single linear layer followed by softmax.
    pub fn linear() -> Self {
        Self {
            hidden_width: 0,
            layers: 1,
            dropout_rate: 0.0,
        }
    }

    pub fn sizes(&self, input: usize, classes: usize) -> Vec<usize> {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(self.hidden_width, self.layers.saturating_sub(1)));
        sizes.push(classes);
        sizes
    }

    pub fn build(&self, input: usize, classes: usize, rng: &mut Stream) -> Result<MlpModel> {
        MlpModel::new(&self.sizes(input, classes), self.dropout_rate, rng)
    }
}

/// Dense ReLU network with a softmax head and inverted dropout after every
/// hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Checkpoint", try_from = "Checkpoint")]
pub struct MlpModel {
    layers: Vec<Dense>,
    dropout_rate: f64,
}

/// Gradients with the same shapes as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weights.dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.scaled_add(scale, ow);
            b.scaled_add(scale, ob);
        }
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input to each layer (post-dropout activations for hidden layers).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of hidden layers.
    hidden: Vec<Array2<f64>>,
    /// Scaled keep-masks of hidden layers, if dropout was applied.
    masks: Vec<Option<Array2<f64>>>,
    pub probs: Array2<f64>,
}

impl MlpModel {
    /// He-uniform weights, zero biases.
    pub fn new(sizes: &[usize], dropout_rate: f64, rng: &mut Stream) -> Result<Self> {
        Self::check_sizes(sizes, dropout_rate)?;
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = (6.0 / w[0] as f64).sqrt();
                Dense {
                    weights: Array2::from_shape_simple_fn((w[0], w[1]), || {
                        rng.random_range(-bound..bound)
                    }),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Ok(Self {
            layers,
            dropout_rate,
        })
    }

    pub fn zeros(sizes: &[usize], dropout_rate: f64) -> Result<Self> {
        Self::check_sizes(sizes, dropout_rate)?;
        let layers = sizes
            .windows(2)
            .map(|w| Dense {
                weights: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Self {
            layers,
            dropout_rate,
        })
    }

    pub fn from_layers(layers: Vec<Dense>, dropout_rate: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a model needs at least one layer"));
        }
        let mut sizes = vec![layers[0].in_dim()];
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim() != *sizes.last().unwrap() || l.bias.len() != l.out_dim() {
                return Err(Error::Shape(format!("layer {i} does not chain")));
            }
            sizes.push(l.out_dim());
        }
        Self::check_sizes(&sizes, dropout_rate)?;
        Ok(Self {
            layers,
            dropout_rate,
        })
    }

    fn check_sizes(sizes: &[usize], dropout_rate: f64) -> Result<()> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("bad layer sizes {sizes:?}")));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::invalid("dropout rate must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<()> {
        Self::check_sizes(&[1, 1], rate)?;
        self.dropout_rate = rate;
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Eval-mode class probabilities, one row per input row.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.trace(x, None)?.probs)
    }

    /// Train-mode probabilities: dropout masks are drawn from `rng`.
    pub fn predict_train(&self, x: ArrayView2<'_, f64>, rng: &mut Stream) -> Result<Array2<f64>> {
        Ok(self.trace(x, Some(rng))?.probs)
    }

    /// Forward pass keeping intermediates. Dropout is applied iff `rng` is given.
    pub fn trace(&self, x: ArrayView2<'_, f64>, mut rng: Option<&mut Stream>) -> Result<Trace> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} columns, model expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut hidden = Vec::with_capacity(last);
        let mut masks = Vec::with_capacity(last);
        let mut current = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = current.dot(&layer.weights);
            z += &layer.bias;
            inputs.push(current);
            if i == last {
                softmax_in_place(&mut z);
                return Ok(Trace {
                    inputs,
                    hidden,
                    masks,
                    probs: z,
                });
            }
            let mut a = z.mapv(|v| v.max(0.0));
            let mask = match rng.as_deref_mut() {
                Some(r) if self.dropout_rate > 0.0 => {
                    let keep = 1.0 - self.dropout_rate;
                    let m = Array2::from_shape_simple_fn(a.dim(), || {
                        if r.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    a *= &m;
                    Some(m)
                }
                _ => None,
            };
            hidden.push(z);
            masks.push(mask);
            current = a;
        }
        unreachable!("loop returns at the head layer")
    }

    /// Backpropagate the gradient of the loss w.r.t. the head logits.
    pub fn backward(&self, trace: &Trace, dlogits: ArrayView2<'_, f64>) -> Gradients {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut dz = dlogits.to_owned();
        for i in (0..self.layers.len()).rev() {
            let input = &trace.inputs[i];
            let dw = input.t().dot(&dz);
            let db = dz.sum_axis(Axis(0));
            grads.push((dw, db));
            if i > 0 {
                let mut da = dz.dot(&self.layers[i].weights.t());
                let pre = &trace.hidden[i - 1];
                match &trace.masks[i - 1] {
                    Some(m) => Zip::from(&mut da).and(pre).and(m).for_each(|g, &z, &m| {
                        *g = if z > 0.0 { *g * m } else { 0.0 };
                    }),
                    None => Zip::from(&mut da).and(pre).for_each(|g, &z| {
                        if z <= 0.0 {
                            *g = 0.0;
                        }
                    }),
                }
                dz = da;
            }
        }
        grads.reverse();
        Gradients { layers: grads }
    }
}

/// Row-wise numerically stable softmax.
pub fn softmax_in_place(z: &mut Array2<f64>) {
    for mut row in z.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Mean cross-entropy of `probs` against integer targets, and its gradient
/// w.r.t. the logits that produced `probs`.
pub fn cross_entropy(probs: &Array2<f64>, targets: &[usize]) -> (f64, Array2<f64>) {
    let b = probs.nrows() as f64;
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for (i, &t) in targets.iter().enumerate() {
        loss -= probs[[i, t]].max(PROB_FLOOR).ln();
        grad[[i, t]] -= 1.0;
    }
    grad /= b;
    (loss / b, grad)
}

/// Flat checkpoint format: layer shapes plus row-major weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub dropout_rate: f64,
    pub layers: Vec<LayerCheckpoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerCheckpoint {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl From<MlpModel> for Checkpoint {
    fn from(m: MlpModel) -> Self {
        Checkpoint {
            dropout_rate: m.dropout_rate,
            layers: m
                .layers
                .into_iter()
                .map(|l| LayerCheckpoint {
                    in_dim: l.in_dim(),
                    out_dim: l.out_dim(),
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<Checkpoint> for MlpModel {
    type Error = Error;

    fn try_from(c: Checkpoint) -> Result<Self> {
        let layers = c
            .layers
            .into_iter()
            .map(|l| {
                Ok(Dense {
                    weights: Array2::from_shape_vec((l.in_dim, l.out_dim), l.weights)
                        .map_err(|e| Error::Shape(e.to_string()))?,
                    bias: Array1::from_vec(l.bias),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MlpModel::from_layers(layers, c.dropout_rate)
    }
}
