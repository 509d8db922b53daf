//! Generator descriptions, their on-disk format, and the latent noise
//! distributions `p(z)` they are driven by.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tensor::{self, Activation, DenseLayer, LayerSpec, Tensor};

/// Format tag written into every generator file.
pub const GENERATOR_FORMAT: &str = "latent-eval/generator-v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    StandardGaussian,
    UniformBox { lo: f64, hi: f64 },
}

/// Latent prior `p(z)` over vectors of length `dim`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseDistribution {
    pub kind: NoiseKind,
    pub dim: usize,
}

impl NoiseDistribution {
    pub fn gaussian(dim: usize) -> Self {
        Self {
            kind: NoiseKind::StandardGaussian,
            dim,
        }
    }

    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Self {
        Self {
            kind: NoiseKind::UniformBox { lo, hi },
            dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Invariant("noise dimension must be positive".into()));
        }
        if let NoiseKind::UniformBox { lo, hi } = self.kind {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::Invariant(format!(
                    "uniform_box needs finite hi > lo, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }

    /// Draws one latent vector.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Tensor {
        let data = match self.kind {
            NoiseKind::StandardGaussian => (0..self.dim).map(|_| rng.sample(StandardNormal)).collect(),
            NoiseKind::UniformBox { lo, hi } => (0..self.dim)
                .map(|_| lo + (hi - lo) * rng.random::<f64>())
                .collect(),
        };
        Tensor::from_vec(data)
    }

    /// `count` draws from a stream seeded by `seed`.
    pub fn sample(&self, seed: u64, count: usize) -> Vec<Tensor> {
        let mut rng = rng_from_seed(seed);
        (0..count).map(|_| self.draw(&mut rng)).collect()
    }

    /// Natural-log density; `-inf` outside a uniform box.
    pub fn log_density(&self, z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.dim);
        let d = self.dim as f64;
        match self.kind {
            NoiseKind::StandardGaussian => {
                let norm_sq: f64 = z.iter().map(|v| v * v).sum();
                -0.5 * d * (2.0 * PI).ln() - 0.5 * norm_sq
            }
            NoiseKind::UniformBox { lo, hi } => {
                if z.iter().all(|&v| v >= lo && v <= hi) {
                    0.0 - d * (hi - lo).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Feasibility for the constrained inversion: `‖z‖² ≤ dim + delta` for
    /// the Gaussian, box membership for the uniform (delta unused).
    pub fn in_typical_set(&self, z: &[f64], delta: f64) -> bool {
        debug_assert_eq!(z.len(), self.dim);
        match self.kind {
            NoiseKind::StandardGaussian => {
                z.iter().map(|v| v * v).sum::<f64>() <= self.dim as f64 + delta
            }
            NoiseKind::UniformBox { lo, hi } => z.iter().all(|&v| v >= lo && v <= hi),
        }
    }

    /// Euclidean projection onto the feasible set: radial rescaling onto the
    /// sphere of radius `sqrt(dim + delta)` when outside it, or clamping into
    /// the box.
    pub fn project(&self, z: &mut [f64], delta: f64) {
        match self.kind {
            NoiseKind::StandardGaussian => {
                let limit = self.dim as f64 + delta;
                let norm_sq: f64 = z.iter().map(|v| v * v).sum();
                if norm_sq > limit {
                    let mut scale = (limit / norm_sq).sqrt();
                    z.iter_mut().for_each(|v| *v *= scale);
                    // Rounding can leave the result an ulp outside; step
                    // inward until the membership test agrees.
                    scale = 1.0f64.next_down();
                    while z.iter().map(|v| v * v).sum::<f64>() > limit {
                        z.iter_mut().for_each(|v| *v *= scale);
                        scale = scale.next_down();
                    }
                }
            }
            NoiseKind::UniformBox { lo, hi } => {
                z.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
            }
        }
    }
}

/// A loadable generator `G: z -> x`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub latent_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub output_shape: Vec<usize>,
    /// `(M_lo, M_hi)` of the sample space.
    pub output_range: (f64, f64),
    pub noise: NoiseDistribution,
}

impl GeneratorSpec {
    pub fn new(
        layers: Vec<LayerSpec>,
        output_shape: Vec<usize>,
        output_range: (f64, f64),
        noise: NoiseDistribution,
    ) -> Result<Self> {
        let spec = Self {
            latent_dim: noise.dim,
            layers,
            output_shape,
            output_range,
            noise,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Invariant("latent_dim must be positive".into()));
        }
        if self.noise.dim != self.latent_dim {
            return Err(Error::Invariant(format!(
                "noise dim {} differs from latent_dim {}",
                self.noise.dim, self.latent_dim
            )));
        }
        self.noise.validate()?;
        if let Some(first) = tensor::input_width(&self.layers) {
            if first != self.latent_dim {
                return Err(Error::Invariant(format!(
                    "first dense input width {first} != latent_dim {}",
                    self.latent_dim
                )));
            }
        }
        let out = tensor::output_width(&self.layers, self.latent_dim)
            .map_err(|e| Error::Invariant(format!("layer widths do not chain: {e}")))?;
        let expected: usize = self.output_shape.iter().product();
        if self.output_shape.is_empty() || self.output_shape.contains(&0) || out != expected {
            return Err(Error::Invariant(format!(
                "final output length {out} != product of output_shape {:?}",
                self.output_shape
            )));
        }
        let (lo, hi) = self.output_range;
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::Invariant(format!(
                "output_range needs M_hi > M_lo, got ({lo}, {hi})"
            )));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerSpec::Dense(d) => {
                    if !d.weights().iter().chain(d.bias()).all(|v| v.is_finite()) {
                        return Err(Error::Invariant(format!(
                            "layer {i} holds non-finite weights"
                        )));
                    }
                }
                LayerSpec::Activation(Activation::LeakyRelu { slope }) => {
                    if !(*slope > 0.0 && *slope < 1.0) {
                        return Err(Error::Invariant(format!(
                            "layer {i}: leaky_relu slope {slope} outside (0, 1)"
                        )));
                    }
                }
                LayerSpec::Activation(_) => {}
            }
        }
        Ok(())
    }

    pub fn output_len(&self) -> usize {
        self.output_shape.iter().product()
    }

    /// Peak value `M = M_hi - M_lo` used by PSNR.
    pub fn peak(&self) -> f64 {
        self.output_range.1 - self.output_range.0
    }

    /// `G(z)` shaped as `output_shape`.
    pub fn generate(&self, z: &Tensor) -> Result<Tensor> {
        if z.len() != self.latent_dim {
            return Err(Error::ShapeMismatch {
                left: vec![self.latent_dim],
                right: z.shape().to_vec(),
            });
        }
        tensor::forward(&self.layers, z)?.reshape(self.output_shape.clone())
    }

    /// Flat `G(z)` from a latent slice, skipping shape bookkeeping.
    pub(crate) fn generate_flat(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(tensor::forward(&self.layers, &Tensor::from_vec(z.to_vec()))?.into_data())
    }

    /// MSE between `G(z)` and `target` plus its gradient in `z`.
    pub fn objective_and_grad(&self, z: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
        if target.len() != self.output_len() {
            return Err(Error::ShapeMismatch {
                left: self.output_shape.clone(),
                right: target.shape().to_vec(),
            });
        }
        let flat = Tensor::from_vec(target.data().to_vec());
        tensor::objective_and_grad(&self.layers, z, &flat)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GeneratorFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<memory>".into(),
            message: e.to_string(),
        })?;
        file.into_spec()
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(&GeneratorFile::from_spec(self))
            .expect("generator file serializes");
        text.push('\n');
        text
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorFile {
    format: String,
    latent_dim: usize,
    noise: NoiseKind,
    output_shape: Vec<usize>,
    output_range: [f64; 2],
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum LayerFile {
    Dense {
        inputs: usize,
        outputs: usize,
        /// One row per output unit.
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
    },
    Activation {
        function: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        slope: Option<f64>,
    },
}

impl GeneratorFile {
    fn from_spec(spec: &GeneratorSpec) -> Self {
        let layers = spec
            .layers
            .iter()
            .map(|layer| match layer {
                LayerSpec::Dense(d) => LayerFile::Dense {
                    inputs: d.inputs(),
                    outputs: d.outputs(),
                    weights: (0..d.outputs()).map(|r| d.row(r).to_vec()).collect(),
                    bias: d.bias().to_vec(),
                },
                LayerSpec::Activation(a) => LayerFile::Activation {
                    function: a.name().to_string(),
                    slope: match a {
                        Activation::LeakyRelu { slope } => Some(*slope),
                        _ => None,
                    },
                },
            })
            .collect();
        Self {
            format: GENERATOR_FORMAT.to_string(),
            latent_dim: spec.latent_dim,
            noise: spec.noise.kind,
            output_shape: spec.output_shape.clone(),
            output_range: [spec.output_range.0, spec.output_range.1],
            layers,
        }
    }

    fn into_spec(self) -> Result<GeneratorSpec> {
        if self.format != GENERATOR_FORMAT {
            return Err(Error::Parse {
                path: "<memory>".into(),
                message: format!(
                    "field `format`: expected \"{GENERATOR_FORMAT}\", got \"{}\"",
                    self.format
                ),
            });
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.into_iter().enumerate() {
            let spec = match layer {
                LayerFile::Dense {
                    inputs,
                    outputs,
                    weights,
                    bias,
                } => {
                    if weights.len() != outputs || weights.iter().any(|r| r.len() != inputs) {
                        return Err(Error::Invariant(format!(
                            "layer {i}: weights must be {outputs} rows of {inputs} values"
                        )));
                    }
                    let flat = weights.into_iter().flatten().collect();
                    DenseLayer::new(inputs, outputs, flat, bias)
                        .map(LayerSpec::Dense)
                        .map_err(|e| Error::Invariant(format!("layer {i}: {e}")))?
                }
                LayerFile::Activation { function, slope } => {
                    let act = match (function.as_str(), slope) {
                        ("relu", None) => Activation::Relu,
                        ("leaky_relu", Some(slope)) => Activation::LeakyRelu { slope },
                        ("tanh", None) => Activation::Tanh,
                        ("sigmoid", None) => Activation::Sigmoid,
                        ("identity", None) => Activation::Identity,
                        (other, _) => {
                            return Err(Error::Parse {
                                path: "<memory>".into(),
                                message: format!(
                                    "layer {i}, field `function`: unsupported activation \"{other}\" \
                                     (leaky_relu needs `slope`; others take none)"
                                ),
                            })
                        }
                    };
                    LayerSpec::Activation(act)
                }
            };
            layers.push(spec);
        }
        let noise = NoiseDistribution {
            kind: self.noise,
            dim: self.latent_dim,
        };
        let spec = GeneratorSpec {
            latent_dim: self.latent_dim,
            layers,
            output_shape: self.output_shape,
            output_range: (self.output_range[0], self.output_range[1]),
            noise,
        };
        spec.validate()?;
        Ok(spec)
    }
}
