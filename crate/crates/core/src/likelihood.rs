//! Unnormalized marginal likelihood of a reconstruction, estimated by Monte
//! Carlo in latent space.
//!
//! All logs are natural. The perturbation estimators (isotropic, counting,
//! combined) drop the generator-independent constant `ln Z`; adding
//! [`omitted_log_constant`] puts them on the same scale as the direct
//! prior-mass estimate.
//!
//! Perturbation draw `i` is `σ·n_i` where `n_i` is a standard normal vector
//! from a stream keyed by `(seed, i)`. The same `n_i` are reused at every σ,
//! so counts at different σ are paired (common random numbers) and results
//! do not depend on evaluation order.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{mse_slices, psnr_from_mse, DistanceThreshold};
use crate::model::{GeneratorSpec, NoiseDistribution};
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Direct,
    Isotropic,
    Counting,
    Combined,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LikelihoodEstimate {
    /// `-inf` when no draw landed within the threshold.
    pub log_unnormalized: f64,
    pub sigma_used: f64,
    pub n_used: usize,
    pub hits: usize,
    pub dim: usize,
    pub estimator: Estimator,
    pub saturated: bool,
}

impl LikelihoodEstimate {
    fn build(estimator: Estimator, hits: usize, n_used: usize, sigma_used: f64, dim: usize, saturated: bool) -> Self {
        let mut e = Self {
            log_unnormalized: 0.0,
            sigma_used,
            n_used,
            hits,
            dim,
            estimator,
            saturated,
        };
        e.log_unnormalized = e.recompute();
        e
    }

    /// The log value implied by the evidence fields.
    pub fn recompute(&self) -> f64 {
        let frac = (self.hits as f64 / self.n_used as f64).ln();
        let volume = self.dim as f64 * self.sigma_used.ln();
        match self.estimator {
            Estimator::Direct => frac,
            Estimator::Isotropic => volume,
            Estimator::Counting | Estimator::Combined => frac + volume,
        }
    }

    pub fn log10_unnormalized(&self) -> f64 {
        self.log_unnormalized / std::f64::consts::LN_10
    }
}

/// `ln p(z_center) + (dim/2)·ln 2π`: what the perturbation estimators leave
/// out relative to the prior mass of the acceptance region (small-ball limit).
pub fn omitted_log_constant(dist: &NoiseDistribution, z_center: &[f64]) -> f64 {
    dist.log_density(z_center) + 0.5 * dist.dim as f64 * (2.0 * PI).ln()
}

/// Geometric σ grid from `start` up to at most `stop`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SigmaGrid {
    pub start: f64,
    pub stop: f64,
    pub ratio: f64,
}

impl Default for SigmaGrid {
    fn default() -> Self {
        Self {
            start: 1e-4,
            stop: 1.0,
            ratio: 1.25,
        }
    }
}

impl SigmaGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.start > 0.0 && self.stop >= self.start && self.ratio > 1.0) {
            return Err(Error::Config(
                "sigma grid needs 0 < start <= stop and ratio > 1".into(),
            ));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut k = 0;
        loop {
            let v = self.start * self.ratio.powi(k);
            if v > self.stop * (1.0 + 1e-12) {
                break;
            }
            out.push(v);
            k += 1;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LikelihoodConfig {
    pub psnr_threshold_db: f64,
    pub n_max: usize,
    pub n_min_hits: usize,
    pub sigma_grid: SigmaGrid,
    pub seed: u64,
}

impl Default for LikelihoodConfig {
    fn default() -> Self {
        Self {
            psnr_threshold_db: 40.0,
            n_max: 10_000,
            n_min_hits: 100,
            sigma_grid: SigmaGrid::default(),
            seed: 0,
        }
    }
}

impl LikelihoodConfig {
    pub fn validate(&self) -> Result<()> {
        self.sigma_grid.validate()?;
        if self.n_min_hits == 0 || self.n_min_hits >= self.n_max {
            return Err(Error::Config("need 0 < n_min_hits < n_max".into()));
        }
        if !self.psnr_threshold_db.is_finite() {
            return Err(Error::Config("psnr_threshold_db must be finite".into()));
        }
        Ok(())
    }

    pub fn threshold(&self, spec: &GeneratorSpec) -> DistanceThreshold {
        DistanceThreshold::from_psnr(self.psnr_threshold_db, spec.peak())
    }
}

fn check_center(spec: &GeneratorSpec, z_center: &[f64]) -> Result<Vec<f64>> {
    if z_center.len() != spec.latent_dim {
        return Err(Error::ShapeMismatch {
            left: vec![spec.latent_dim],
            right: vec![z_center.len()],
        });
    }
    spec.generate_flat(z_center)
}

/// Shared perturbation source around one center.
struct Perturber<'a> {
    spec: &'a GeneratorSpec,
    z_center: &'a [f64],
    x_center: Vec<f64>,
    seed: u64,
}

impl<'a> Perturber<'a> {
    fn new(spec: &'a GeneratorSpec, z_center: &'a [f64], seed: u64) -> Result<Self> {
        let x_center = check_center(spec, z_center)?;
        Ok(Self {
            spec,
            z_center,
            x_center,
            seed,
        })
    }

    fn distance(&self, i: usize, sigma: f64) -> Result<f64> {
        let mut rng = rng_from_seed(derive_seed(self.seed, &[i as u64]));
        let z: Vec<f64> = self
            .z_center
            .iter()
            .map(|&c| c + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let x = self.spec.generate_flat(&z)?;
        Ok(mse_slices(&x, &self.x_center))
    }

    fn count(&self, sigma: f64, n: usize, ceiling: f64) -> Result<usize> {
        let mut hits = 0;
        for i in 0..n {
            if self.distance(i, sigma)? < ceiling {
                hits += 1;
            }
        }
        Ok(hits)
    }

    /// Whether at least `floor` of the first `n` draws hit, stopping as soon
    /// as the answer is certain.
    fn reaches(&self, sigma: f64, n: usize, ceiling: f64, floor: usize) -> Result<bool> {
        let mut hits = 0;
        for i in 0..n {
            if self.distance(i, sigma)? < ceiling {
                hits += 1;
                if hits >= floor {
                    return Ok(true);
                }
            }
            if hits + (n - i - 1) < floor {
                return Ok(false);
            }
        }
        Ok(hits >= floor)
    }

    fn mean_distance(&self, sigma: f64, n: usize) -> Result<f64> {
        let mut sum = 0.0;
        for i in 0..n {
            sum += self.distance(i, sigma)?;
        }
        Ok(sum / n as f64)
    }
}

/// Fraction of `n` prior draws whose samples land within the threshold of
/// `x_ref`. Practical only for very small latent dimensions.
pub fn estimate_direct(
    spec: &GeneratorSpec,
    x_ref: &Tensor,
    threshold: DistanceThreshold,
    n: usize,
    seed: u64,
) -> Result<LikelihoodEstimate> {
    if n == 0 {
        return Err(Error::Config("N must be >= 1".into()));
    }
    if x_ref.len() != spec.output_len() {
        return Err(Error::ShapeMismatch {
            left: spec.output_shape.clone(),
            right: x_ref.shape().to_vec(),
        });
    }
    let mut rng = rng_from_seed(seed);
    let mut hits = 0;
    for _ in 0..n {
        let z = spec.noise.draw(&mut rng);
        let x = spec.generate_flat(z.data())?;
        if threshold.accepts(mse_slices(&x, x_ref.data())) {
            hits += 1;
        }
    }
    Ok(LikelihoodEstimate::build(Estimator::Direct, hits, n, 1.0, spec.latent_dim, false))
}

/// Largest σ on `[bounds.0, bounds.1]` (1% relative bisection tolerance)
/// whose mean perturbation distance stays within the threshold; the log
/// estimate is `dim·ln σ`. `saturated` marks a result pinned to either bound.
pub fn estimate_isotropic(
    spec: &GeneratorSpec,
    z_center: &[f64],
    threshold: DistanceThreshold,
    bounds: (f64, f64),
    n: usize,
    seed: u64,
) -> Result<LikelihoodEstimate> {
    let (lo_bound, hi_bound) = bounds;
    if !(lo_bound > 0.0 && hi_bound > lo_bound) || n == 0 {
        return Err(Error::Config("isotropic search needs 0 < lo < hi and N >= 1".into()));
    }
    let p = Perturber::new(spec, z_center, seed)?;
    let within = |s: f64| -> Result<bool> { Ok(p.mean_distance(s, n)? <= threshold.mse_ceiling) };
    let dim = spec.latent_dim;
    let finish = |sigma: f64, saturated: bool| -> Result<LikelihoodEstimate> {
        let hits = p.count(sigma, n, threshold.mse_ceiling)?;
        Ok(LikelihoodEstimate::build(Estimator::Isotropic, hits, n, sigma, dim, saturated))
    };
    if within(hi_bound)? {
        return finish(hi_bound, true);
    }
    if !within(lo_bound)? {
        return finish(lo_bound, true);
    }
    let (mut lo, mut hi) = (lo_bound, hi_bound);
    while hi / lo > 1.01 {
        let mid = (lo * hi).sqrt();
        if within(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    finish(lo, false)
}

/// Counts hits at a fixed σ: `ln(hits/N) + dim·ln σ`.
pub fn estimate_counting(
    spec: &GeneratorSpec,
    z_center: &[f64],
    threshold: DistanceThreshold,
    sigma: f64,
    n: usize,
    seed: u64,
) -> Result<LikelihoodEstimate> {
    if !(sigma > 0.0) || n == 0 {
        return Err(Error::Config("counting needs sigma > 0 and N >= 1".into()));
    }
    let p = Perturber::new(spec, z_center, seed)?;
    let hits = p.count(sigma, n, threshold.mse_ceiling)?;
    Ok(LikelihoodEstimate::build(Estimator::Counting, hits, n, sigma, spec.latent_dim, false))
}

/// Walks the σ grid upward until fewer than `n_min_hits` of `n_max` draws
/// land within the threshold, then reports `ln(hits/N) + dim·ln σ` at the
/// last σ that still met the floor, from a full `n_max`-draw count.
pub fn estimate_combined(spec: &GeneratorSpec, z_center: &[f64], config: &LikelihoodConfig) -> Result<LikelihoodEstimate> {
    config.validate()?;
    let threshold = config.threshold(spec);
    let p = Perturber::new(spec, z_center, config.seed)?;
    let grid = config.sigma_grid.values();
    let mut selected = None;
    for (k, &sigma) in grid.iter().enumerate() {
        if p.reaches(sigma, config.n_max, threshold.mse_ceiling, config.n_min_hits)? {
            selected = Some(k);
        } else {
            break;
        }
    }
    let Some(k) = selected else {
        let hits = p.count(grid[0], config.n_max, threshold.mse_ceiling)?;
        return Err(Error::GridStartTooHigh {
            sigma: grid[0],
            hits,
            floor: config.n_min_hits,
        });
    };
    let hits = p.count(grid[k], config.n_max, threshold.mse_ceiling)?;
    Ok(LikelihoodEstimate::build(
        Estimator::Combined,
        hits,
        config.n_max,
        grid[k],
        spec.latent_dim,
        k + 1 == grid.len(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub sigma: f64,
    pub mean_mse: f64,
    pub mean_psnr_db: f64,
}

/// Mean perturbation distance at each σ, reported as PSNR against the
/// generator's peak value.
pub fn sigma_sweep(spec: &GeneratorSpec, z_center: &[f64], sigmas: &[f64], n: usize, seed: u64) -> Result<Vec<SweepPoint>> {
    if sigmas.is_empty() || n == 0 {
        return Err(Error::Config("sweep needs at least one sigma and N >= 1".into()));
    }
    let p = Perturber::new(spec, z_center, seed)?;
    sigmas
        .iter()
        .map(|&sigma| {
            let mean_mse = p.mean_distance(sigma, n)?;
            Ok(SweepPoint {
                sigma,
                mean_mse,
                mean_psnr_db: psnr_from_mse(mean_mse, spec.peak()),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{constant_fixture, identity_fixture, scaling_fixture};
    use crate::metrics::PSNR_CAP_DB;

    fn th(c: f64) -> DistanceThreshold {
        DistanceThreshold::from_mse_ceiling(c, 20.0)
    }

    #[test]
    fn grid_is_geometric_and_bounded() {
        let g = SigmaGrid::default().values();
        assert_eq!(g.len(), 42);
        assert_eq!(g[0], 1e-4);
        assert!(*g.last().unwrap() <= 1.0);
        assert!(g.windows(2).all(|w| (w[1] / w[0] - 1.25).abs() < 1e-12));
    }

    #[test]
    fn constant_generator_hits_everything() {
        let spec = constant_fixture(3, &[1.0, 2.0]).unwrap();
        let x = Tensor::from_vec(vec![1.0, 2.0]);
        let e = estimate_direct(&spec, &x, th(1e-6), 500, 1).unwrap();
        assert_eq!((e.hits, e.log_unnormalized), (500, 0.0));
    }

    #[test]
    fn unreachable_reference_gives_sentinel() {
        let spec = identity_fixture(2).unwrap();
        let x = Tensor::from_vec(vec![100.0, 100.0]);
        let e = estimate_direct(&spec, &x, th(1e-2), 1000, 1).unwrap();
        assert_eq!(e.hits, 0);
        assert_eq!(e.log_unnormalized, f64::NEG_INFINITY);
        assert!(!e.saturated);
    }

    #[test]
    fn isotropic_on_constant_generator_saturates() {
        let spec = constant_fixture(2, &[0.0]).unwrap();
        let e = estimate_isotropic(&spec, &[0.0, 0.0], th(1e-4), (1e-4, 1.0), 100, 3).unwrap();
        assert!(e.saturated);
        assert_eq!(e.sigma_used, 1.0);
    }

    #[test]
    fn isotropic_scaling_generator() {
        // mean MSE over perturbations of a·z is a²σ², so σ̄ ≈ sqrt(c)/a
        let c = 1e-3;
        let a = scaling_fixture(4, 2.0).unwrap();
        let b = scaling_fixture(4, 1.0).unwrap();
        let ea = estimate_isotropic(&a, &[0.1; 4], th(c), (1e-4, 1.0), 4000, 5).unwrap();
        let eb = estimate_isotropic(&b, &[0.1; 4], th(c), (1e-4, 1.0), 4000, 5).unwrap();
        let expect = c.sqrt() / 2.0;
        assert!((ea.sigma_used / expect - 1.0).abs() < 0.05, "{}", ea.sigma_used);
        let gain = eb.log_unnormalized - ea.log_unnormalized;
        assert!((gain - 4.0 * 2f64.ln()).abs() < 4.0 * 0.03, "{gain}");
        let again = estimate_isotropic(&a, &[0.1; 4], th(c), (1e-4, 1.0), 4000, 5).unwrap();
        assert_eq!(again, ea);
    }

    #[test]
    fn tiny_sigma_hits_everything() {
        let spec = identity_fixture(3).unwrap();
        let e = estimate_counting(&spec, &[0.2, 0.1, 0.0], th(1e-6), 1e-8, 300, 2).unwrap();
        assert_eq!(e.hits, 300);
    }

    #[test]
    fn evidence_fields_reproduce_the_log() {
        let spec = identity_fixture(4).unwrap();
        let config = LikelihoodConfig {
            psnr_threshold_db: 40.0,
            n_max: 2000,
            n_min_hits: 50,
            ..Default::default()
        };
        let e = estimate_combined(&spec, &[0.0; 4], &config).unwrap();
        let manual = (e.hits as f64 / e.n_used as f64).ln() + 4.0 * e.sigma_used.ln();
        assert_eq!(e.log_unnormalized, manual);
        assert_eq!(e.log_unnormalized, e.recompute());
    }

    #[test]
    fn grid_starting_too_high_is_an_error() {
        let spec = identity_fixture(2).unwrap();
        let config = LikelihoodConfig {
            n_max: 1000,
            n_min_hits: 100,
            sigma_grid: SigmaGrid { start: 10.0, stop: 100.0, ratio: 2.0 },
            ..Default::default()
        };
        assert!(matches!(
            estimate_combined(&spec, &[0.0; 2], &config),
            Err(Error::GridStartTooHigh { .. })
        ));
    }

    #[test]
    fn sweep_of_constant_generator_is_capped() {
        let spec = constant_fixture(2, &[0.5, 0.5]).unwrap();
        let pts = sigma_sweep(&spec, &[0.0, 0.0], &[1e-3, 1e-1, 1.0], 50, 1).unwrap();
        assert!(pts.iter().all(|p| p.mean_psnr_db == PSNR_CAP_DB));
        assert_eq!(sigma_sweep(&spec, &[0.0, 0.0], &[0.1], 10, 1).unwrap().len(), 1);
    }

    #[test]
    fn sweep_of_linear_generator_falls_20db_per_decade() {
        let a = 2.0;
        let spec = scaling_fixture(8, a).unwrap();
        let sig = [1e-3, 1e-2, 1e-1];
        let pts = sigma_sweep(&spec, &[0.0; 8], &sig, 4000, 7).unwrap();
        for p in &pts {
            let expect = 10.0 * (400.0 / (a * a * p.sigma * p.sigma)).log10();
            assert!((p.mean_psnr_db - expect).abs() < 0.15, "{p:?} vs {expect}");
        }
        // common random numbers make the decade slope exact for a linear map
        assert!((pts[0].mean_psnr_db - pts[1].mean_psnr_db - 20.0).abs() < 1e-9);
    }
}
