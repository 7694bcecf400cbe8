//! Fully connected softmax classifier with exact backpropagation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// `[inputs, hidden.., classes]`
    pub layers: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(layers: Vec<usize>, activation: Activation, seed: u64) -> Result<Self> {
        let spec = Self {
            layers,
            activation,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() < 3 {
            return Err(Error::Config(format!(
                "model needs at least one hidden layer (layers = {:?})",
                self.layers
            )));
        }
        if self.layers.contains(&0) {
            return Err(Error::Config(format!(
                "layer widths must be positive (layers = {:?})",
                self.layers
            )));
        }
        Ok(())
    }

    pub fn inputs(&self) -> usize {
        self.layers[0]
    }

    pub fn classes(&self) -> usize {
        *self.layers.last().unwrap()
    }

    /// He-style fan-in scaled uniform weights, zero biases.
    pub fn init(&self) -> Result<ModelParams> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut tensors = Vec::with_capacity(2 * (self.layers.len() - 1));
        for pair in self.layers.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            tensors.push(Tensor::new(w, vec![fan_out, fan_in])?);
            tensors.push(Tensor::zeros(&[fan_out]));
        }
        Ok(ModelParams {
            activation: self.activation,
            tensors,
        })
    }
}

/// Weights `[out, in]` and biases `[out]`, interleaved per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub activation: Activation,
    pub tensors: Vec<Tensor>,
}

/// Per-layer post-activation outputs (the input batch first).
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Tensor,
    pub probs: Tensor,
    pub cache: ForwardCache,
}

impl ModelParams {
    pub fn layer_count(&self) -> usize {
        self.tensors.len() / 2
    }

    pub fn inputs(&self) -> usize {
        self.tensors[0].shape()[1]
    }

    pub fn classes(&self) -> usize {
        self.tensors[self.tensors.len() - 2].shape()[0]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// `batch` is `[n, inputs]`.
    pub fn forward(&self, batch: &Tensor) -> Result<ForwardOutput> {
        match batch.shape() {
            [_, w] if *w == self.inputs() => {}
            _ => {
                return Err(Error::ShapeMismatch {
                    left: batch.shape().to_vec(),
                    right: vec![0, self.inputs()],
                })
            }
        }
        let layers = self.layer_count();
        let mut activations = Vec::with_capacity(layers);
        let mut current = batch.clone();
        let mut logits = None;
        for l in 0..layers {
            let (w, b) = (&self.tensors[2 * l], &self.tensors[2 * l + 1]);
            let mut z = current.matmul_nt(w)?;
            let width = b.len();
            for row in z.data_mut().chunks_mut(width) {
                for (v, bias) in row.iter_mut().zip(b.data()) {
                    *v += bias;
                }
            }
            activations.push(current);
            if l + 1 == layers {
                logits = Some(z);
                break;
            }
            z.map_inplace(|v| self.activation.apply(v));
            current = z;
        }
        let logits = logits.expect("at least one layer");
        let probs = softmax_rows(&logits);
        Ok(ForwardOutput {
            logits,
            probs,
            cache: ForwardCache { activations },
        })
    }

    /// Mean cross-entropy over the batch and its exact gradient with
    /// respect to every parameter tensor.
    pub fn loss_and_grads(&self, batch: &Tensor, labels: &[usize]) -> Result<(f64, Vec<Tensor>)> {
        let out = self.forward(batch)?;
        let n = batch.shape()[0];
        if labels.len() != n {
            return Err(Error::ShapeMismatch {
                left: vec![labels.len()],
                right: vec![n],
            });
        }
        let classes = self.classes();
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Config(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let loss = cross_entropy(&out.logits, labels);

        // dL/dz for the output layer: (p − onehot) / n
        let mut delta = out.probs.clone();
        for (i, &y) in labels.iter().enumerate() {
            delta.data_mut()[i * classes + y] -= 1.0;
        }
        delta.map_inplace(|v| v / n as f64);

        let layers = self.layer_count();
        let mut grads = vec![Tensor::zeros(&[1]); self.tensors.len()];
        for l in (0..layers).rev() {
            let input = &out.cache.activations[l];
            grads[2 * l] = delta.matmul_tn(input)?;
            let width = delta.shape()[1];
            let mut gb = vec![0.0; width];
            for row in delta.data().chunks(width) {
                for (acc, v) in gb.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            grads[2 * l + 1] = Tensor::from_vec(gb);
            if l == 0 {
                break;
            }
            let mut back = delta.matmul(&self.tensors[2 * l])?;
            for (d, &y) in back.data_mut().iter_mut().zip(input.data()) {
                *d *= self.activation.grad_from_output(y);
            }
            delta = back;
        }
        Ok((loss, grads))
    }
}

pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let width = *logits.shape().last().unwrap_or(&1);
    let mut probs = logits.clone();
    for row in probs.data_mut().chunks_mut(width) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    probs
}

/// Mean of `logsumexp(z) − z[y]` over rows.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> f64 {
    let width = *logits.shape().last().unwrap_or(&1);
    let total: f64 = logits
        .data()
        .chunks(width)
        .zip(labels)
        .map(|(row, &y)| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[y]
        })
        .sum();
    total / labels.len() as f64
}
