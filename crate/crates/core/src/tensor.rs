//! Dense row-major tensors and a small feed-forward network evaluator with
//! reverse-mode gradients taken with respect to the network input.
//!
//! Weights are constants here: nothing in this module differentiates with
//! respect to them.

use crate::error::{Error, Result};

/// Row-major tensor of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} has a zero extent"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} needs {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// One-dimensional tensor over `data`.
    pub fn from_vec(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "tensor must hold at least one element");
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let numel = shape.iter().product();
        Self::new(shape, vec![0.0; numel])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::InvalidTensor(format!(
                "element {i} is not finite ({})",
                self.data[i]
            ))),
        }
    }

    pub(crate) fn require_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }
}

/// Pointwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    /// Derivative given the pre-activation `x` and the activation output `y`.
    /// The kink of relu/leaky relu at exactly 0 takes the left slope.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu { .. } => "leaky_relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }
}

/// Affine map `y = W x + b` with `W` stored row-major as `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::Invariant(
                "dense layer widths must be positive".into(),
            ));
        }
        if weights.len() != inputs * outputs {
            return Err(Error::Invariant(format!(
                "dense weight matrix must hold {outputs}x{inputs} = {} values, got {}",
                inputs * outputs,
                weights.len()
            )));
        }
        if bias.len() != outputs {
            return Err(Error::Invariant(format!(
                "dense weight row count {outputs} must equal bias length {}",
                bias.len()
            )));
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            bias,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.inputs..(r + 1) * self.inputs]
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(x)
                    .fold(self.bias[r], |acc, (w, v)| acc + w * v)
            })
            .collect()
    }

    fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.inputs];
        for (r, &gr) in g.iter().enumerate() {
            if gr == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += w * gr;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Dense(DenseLayer),
    Activation(Activation),
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        DenseLayer::new(inputs, outputs, weights, bias).map(LayerSpec::Dense)
    }

    pub fn activation(act: Activation) -> Result<Self> {
        if let Activation::LeakyRelu { slope } = act {
            if !(slope > 0.0 && slope < 1.0) {
                return Err(Error::Invariant(format!(
                    "leaky_relu slope must lie in (0, 1), got {slope}"
                )));
            }
        }
        Ok(LayerSpec::Activation(act))
    }
}

/// Checks that the layer widths chain from `input_width` and returns the
/// output width.
pub fn output_width(layers: &[LayerSpec], input_width: usize) -> Result<usize> {
    let mut width = input_width;
    for (i, layer) in layers.iter().enumerate() {
        if let LayerSpec::Dense(d) = layer {
            if d.inputs != width {
                return Err(Error::LayerMismatch {
                    layer: i,
                    expected: d.inputs,
                    actual: width,
                });
            }
            width = d.outputs;
        }
    }
    Ok(width)
}

/// Input width implied by the first dense layer, if any.
pub fn input_width(layers: &[LayerSpec]) -> Option<usize> {
    layers.iter().find_map(|l| match l {
        LayerSpec::Dense(d) => Some(d.inputs),
        LayerSpec::Activation(_) => None,
    })
}

/// Values entering each layer, plus the final output as the last entry.
fn trace(layers: &[LayerSpec], z: &[f64]) -> Result<Vec<Vec<f64>>> {
    output_width(layers, z.len())?;
    let mut values = Vec::with_capacity(layers.len() + 1);
    values.push(z.to_vec());
    for layer in layers {
        let x = values.last().expect("trace starts non-empty");
        let y = match layer {
            LayerSpec::Dense(d) => d.apply(x),
            LayerSpec::Activation(a) => x.iter().map(|&v| a.apply(v)).collect(),
        };
        values.push(y);
    }
    Ok(values)
}

fn backward(layers: &[LayerSpec], values: &[Vec<f64>], cotangent: Vec<f64>) -> Vec<f64> {
    let mut g = cotangent;
    for (i, layer) in layers.iter().enumerate().rev() {
        g = match layer {
            LayerSpec::Dense(d) => d.apply_transpose(&g),
            LayerSpec::Activation(a) => {
                let (x, y) = (&values[i], &values[i + 1]);
                g.iter()
                    .zip(x.iter().zip(y))
                    .map(|(gi, (&xi, &yi))| gi * a.derivative(xi, yi))
                    .collect()
            }
        };
    }
    g
}

/// Evaluates the network on a flat input vector.
pub fn forward(layers: &[LayerSpec], z: &Tensor) -> Result<Tensor> {
    let mut values = trace(layers, z.data())?;
    Ok(Tensor::from_vec(values.pop().expect("trace is non-empty")))
}

/// Vector-Jacobian product `Jᵀ c` of the network at `z`.
pub fn grad_input(layers: &[LayerSpec], z: &Tensor, cotangent: &Tensor) -> Result<Tensor> {
    let values = trace(layers, z.data())?;
    let out = values.last().expect("trace is non-empty");
    if cotangent.len() != out.len() {
        return Err(Error::ShapeMismatch {
            left: vec![out.len()],
            right: cotangent.shape().to_vec(),
        });
    }
    Ok(Tensor::from_vec(backward(
        layers,
        &values,
        cotangent.data().to_vec(),
    )))
}

/// Mean squared error between `G(z)` and `target` together with its gradient
/// with respect to `z`.
pub fn objective_and_grad(layers: &[LayerSpec], z: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    let values = trace(layers, z.data())?;
    let out = values.last().expect("trace is non-empty");
    if target.len() != out.len() {
        return Err(Error::ShapeMismatch {
            left: vec![out.len()],
            right: target.shape().to_vec(),
        });
    }
    let n = out.len() as f64;
    let residual: Vec<f64> = out.iter().zip(target.data()).map(|(o, t)| o - t).collect();
    let mse = residual.iter().map(|r| r * r).sum::<f64>() / n;
    let scale = 2.0 / n;
    let cotangent = residual.into_iter().map(|r| r * scale).collect();
    let grad = backward(layers, &values, cotangent);
    Ok((mse, Tensor::from_vec(grad)))
}
