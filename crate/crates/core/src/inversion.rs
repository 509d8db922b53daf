//! Latent inversion: find `z` minimizing `MSE(G(z), target)`, optionally
//! restricted to the typical set of the prior, with Adam plus a projection
//! after every step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::{emit_histogram, equal_width_edges, Bins, HistogramBin};
use crate::metrics::{psnr_from_mse, PSNR_CAP_DB};
use crate::model::{GeneratorSpec, NoiseDistribution};
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    NoiseDraw,
    Zeros,
    Provided(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub max_iterations: usize,
    /// Minimum PSNR gain (dB) of the running best over `stop_window`
    /// iterations; below it the run stops.
    pub stop_tolerance: f64,
    pub stop_window: usize,
    pub constrained: bool,
    pub delta: f64,
    pub restarts: usize,
    pub init: InitScheme,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            max_iterations: 3000,
            stop_tolerance: 0.1,
            stop_window: 50,
            constrained: false,
            delta: 0.0,
            restarts: 1,
            init: InitScheme::NoiseDraw,
        }
    }
}

impl InversionConfig {
    pub fn constrained() -> Self {
        Self {
            constrained: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be > 0");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be >= 1");
        }
        if self.restarts == 0 {
            return bad("restarts must be >= 1");
        }
        if self.stop_window == 0 || !(self.stop_tolerance >= 0.0) {
            return bad("stop_window must be >= 1 and stop_tolerance >= 0");
        }
        if !self.delta.is_finite() {
            return bad("delta must be finite");
        }
        Ok(())
    }
}

/// Adam state for one parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(dim: usize, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionResult {
    pub z_star: Vec<f64>,
    pub x_star: Vec<f64>,
    pub final_mse: f64,
    pub final_psnr_db: f64,
    pub z_norm_sq: f64,
    pub log_p_z: f64,
    pub iterations_used: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
}

impl InversionResult {
    fn at(
        spec: &GeneratorSpec,
        target: &[f64],
        z: Vec<f64>,
        iterations_used: usize,
        converged: bool,
        objective_trace: Vec<f64>,
    ) -> Result<Self> {
        let x = spec.generate_flat(&z)?;
        let final_mse = crate::metrics::mse_slices(&x, target);
        Ok(Self {
            final_psnr_db: psnr_from_mse(final_mse, spec.peak()),
            z_norm_sq: z.iter().map(|v| v * v).sum(),
            log_p_z: spec.noise.log_density(&z),
            z_star: z,
            x_star: x,
            final_mse,
            iterations_used,
            converged,
            objective_trace,
        })
    }
}

fn initial_latent(spec: &GeneratorSpec, config: &InversionConfig, seed: u64) -> Result<Vec<f64>> {
    match &config.init {
        InitScheme::NoiseDraw => {
            let mut rng = rng_from_seed(seed);
            Ok(spec.noise.draw(&mut rng).into_data())
        }
        InitScheme::Zeros => Ok(vec![0.0; spec.latent_dim]),
        InitScheme::Provided(z) => {
            if z.len() != spec.latent_dim {
                return Err(Error::Config(format!(
                    "provided initial latent has length {}, latent_dim is {}",
                    z.len(),
                    spec.latent_dim
                )));
            }
            Ok(z.clone())
        }
    }
}

/// Runs one inversion from the initial point selected by `config.init`
/// (drawn with `seed` when it is a noise draw).
///
/// The returned point is the best iterate seen. The run stops once the
/// running-best PSNR has improved by less than `stop_tolerance` dB over the
/// last `stop_window` iterations, once PSNR reaches the reporting cap, or
/// after `max_iterations` objective evaluations.
pub fn invert(
    spec: &GeneratorSpec,
    target: &Tensor,
    config: &InversionConfig,
    seed: u64,
) -> Result<InversionResult> {
    config.validate()?;
    if target.len() != spec.output_len() {
        return Err(Error::ShapeMismatch {
            left: spec.output_shape.clone(),
            right: target.shape().to_vec(),
        });
    }
    let peak = spec.peak();
    let mut z = initial_latent(spec, config, seed)?;
    if config.constrained {
        spec.noise.project(&mut z, config.delta);
    }
    let mut adam = Adam::new(
        z.len(),
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.adam_epsilon,
    );

    let mut trace = Vec::new();
    let mut best_psnr_history = Vec::new();
    let mut best = (f64::INFINITY, z.clone());
    let mut converged = false;

    for iteration in 0..config.max_iterations {
        let zt = Tensor::from_vec(z.clone());
        let (f, grad) = spec.objective_and_grad(&zt, target)?;
        if !f.is_finite() || !grad.is_finite() {
            return Err(Error::Diverged { iteration });
        }
        trace.push(f);
        if f < best.0 {
            best = (f, z.clone());
        }
        let best_psnr = psnr_from_mse(best.0, peak);
        best_psnr_history.push(best_psnr);
        if best_psnr >= PSNR_CAP_DB {
            converged = true;
            break;
        }
        if iteration >= config.stop_window {
            let gain = best_psnr - best_psnr_history[iteration - config.stop_window];
            if gain < config.stop_tolerance {
                converged = true;
                break;
            }
        }
        adam.step(&mut z, grad.data());
        if config.constrained {
            spec.noise.project(&mut z, config.delta);
        }
    }

    if !converged {
        // the final step's landing point has not been scored yet
        let zt = Tensor::from_vec(z.clone());
        let (f, _) = spec.objective_and_grad(&zt, target)?;
        if !f.is_finite() {
            return Err(Error::Diverged {
                iteration: config.max_iterations,
            });
        }
        if f < best.0 {
            best = (f, z);
        }
    }
    let iterations = trace.len();
    InversionResult::at(spec, target.data(), best.1, iterations, converged, trace)
}

/// Runs `config.restarts` inversions with seeds derived from `seed` and keeps
/// the lowest-MSE one (first wins ties). A single restart uses `seed` as is.
pub fn invert_best(
    spec: &GeneratorSpec,
    target: &Tensor,
    config: &InversionConfig,
    seed: u64,
) -> Result<InversionResult> {
    config.validate()?;
    if config.restarts == 1 {
        return invert(spec, target, config, seed);
    }
    let mut best: Option<InversionResult> = None;
    for r in 0..config.restarts {
        let result = invert(spec, target, config, derive_seed(seed, &[r as u64]))?;
        if best.as_ref().is_none_or(|b| result.final_mse < b.final_mse) {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// One inversion per seed plus the reconstruction at the arithmetic mean of
/// the solutions (projected when constrained).
pub fn invert_restarts(
    spec: &GeneratorSpec,
    target: &Tensor,
    config: &InversionConfig,
    seeds: &[u64],
) -> Result<(Vec<InversionResult>, InversionResult)> {
    if seeds.len() < 2 {
        return Err(Error::Config("restart experiments need at least two seeds".into()));
    }
    let results = seeds
        .iter()
        .map(|&s| invert(spec, target, config, s))
        .collect::<Result<Vec<_>>>()?;
    let n = results.len() as f64;
    let mut mean = vec![0.0; spec.latent_dim];
    for r in &results {
        for (m, v) in mean.iter_mut().zip(&r.z_star) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    if config.constrained {
        spec.noise.project(&mut mean, config.delta);
    }
    let converged = results.iter().all(|r| r.converged);
    let mean_result = InversionResult::at(spec, target.data(), mean, 0, converged, Vec::new())?;
    Ok((results, mean_result))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpolationMode {
    Linear,
    Polar,
}

/// `steps` evenly spaced points from `z_a` to `z_b` with their generated
/// samples. Polar mode moves along the great circle through the two
/// directions while the norm changes linearly.
pub fn interpolate_latents(
    spec: &GeneratorSpec,
    z_a: &[f64],
    z_b: &[f64],
    steps: usize,
    mode: InterpolationMode,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    if z_a.len() != z_b.len() || z_a.len() != spec.latent_dim {
        return Err(Error::ShapeMismatch {
            left: vec![z_a.len()],
            right: vec![z_b.len()],
        });
    }
    if steps < 2 {
        return Err(Error::Config("interpolation needs at least 2 steps".into()));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(z_a), norm(z_b));
    let polar = if mode == InterpolationMode::Polar {
        if na == 0.0 || nb == 0.0 {
            return Err(Error::DegenerateInterpolation("zero-length endpoint".into()));
        }
        let cos = (z_a.iter().zip(z_b).map(|(a, b)| a * b).sum::<f64>() / (na * nb)).clamp(-1.0, 1.0);
        if cos <= -1.0 + 1e-12 {
            return Err(Error::DegenerateInterpolation("antipodal endpoints".into()));
        }
        Some(cos.acos())
    } else {
        None
    };

    (0..steps)
        .map(|k| {
            let z = if k == 0 {
                z_a.to_vec()
            } else if k == steps - 1 {
                z_b.to_vec()
            } else {
                let t = k as f64 / (steps - 1) as f64;
                match polar {
                    None => z_a.iter().zip(z_b).map(|(a, b)| (1.0 - t) * a + t * b).collect(),
                    Some(theta) => {
                        let (wa, wb) = if theta.sin() < 1e-12 {
                            (1.0 - t, t)
                        } else {
                            (
                                ((1.0 - t) * theta).sin() / theta.sin(),
                                (t * theta).sin() / theta.sin(),
                            )
                        };
                        let dir: Vec<f64> = z_a
                            .iter()
                            .zip(z_b)
                            .map(|(a, b)| wa * a / na + wb * b / nb)
                            .collect();
                        let dn = norm(&dir);
                        let radius = (1.0 - t) * na + t * nb;
                        dir.iter().map(|d| d / dn * radius).collect()
                    }
                }
            };
            let x = spec.generate_flat(&z)?;
            Ok((z, x))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypicalSetReport {
    pub count: usize,
    pub mean_log_p_z: f64,
    pub median_log_p_z: f64,
    pub reference_mean_log_p_z: f64,
    pub mean_z_norm_sq: f64,
    pub reference_mean_z_norm_sq: f64,
    /// Fraction of results outside the feasible set (`‖z‖² > dim + delta`, or
    /// outside the box).
    pub outside_fraction: f64,
    /// Fraction within 1e-9 of the sphere (Gaussian only).
    pub boundary_fraction: f64,
    pub z_norm_sq_histogram: Vec<HistogramBin>,
    pub reference_histogram: Vec<HistogramBin>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// `‖z*‖²` and `log p(z*)` diagnostics of a set of solutions next to fresh
/// draws from the prior, histogrammed on shared edges.
pub fn typical_set_report(
    results: &[InversionResult],
    dist: &NoiseDistribution,
    delta: f64,
    reference_draws: usize,
    bins: usize,
    seed: u64,
) -> Result<TypicalSetReport> {
    if results.is_empty() {
        return Err(Error::Config("typical-set report needs at least one result".into()));
    }
    let n = results.len() as f64;
    let norms: Vec<f64> = results.iter().map(|r| r.z_norm_sq).collect();
    let mut logs: Vec<f64> = results.iter().map(|r| r.log_p_z).collect();
    let reference = dist.sample(seed, reference_draws.max(1));
    let ref_norms: Vec<f64> = reference.iter().map(Tensor::norm_sq).collect();
    let ref_logs = reference.iter().map(|z| dist.log_density(z.data()));

    let (min, max) = norms
        .iter()
        .chain(&ref_norms)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let edges = Bins::Edges(equal_width_edges(min, max, bins.max(1)));

    let limit = dist.dim as f64 + delta;
    let outside = results
        .iter()
        .filter(|r| !dist.in_typical_set(&r.z_star, delta))
        .count();
    let on_boundary = match dist.kind {
        crate::model::NoiseKind::StandardGaussian => {
            norms.iter().filter(|&&v| (v - limit).abs() <= 1e-9).count()
        }
        crate::model::NoiseKind::UniformBox { .. } => 0,
    };
    Ok(TypicalSetReport {
        count: results.len(),
        mean_log_p_z: logs.iter().sum::<f64>() / n,
        median_log_p_z: median(&mut logs),
        reference_mean_log_p_z: ref_logs.sum::<f64>() / ref_norms.len() as f64,
        mean_z_norm_sq: norms.iter().sum::<f64>() / n,
        reference_mean_z_norm_sq: ref_norms.iter().sum::<f64>() / ref_norms.len() as f64,
        outside_fraction: outside as f64 / n,
        boundary_fraction: on_boundary as f64 / n,
        z_norm_sq_histogram: emit_histogram(&norms, &edges),
        reference_histogram: emit_histogram(&ref_norms, &edges),
    })
}
