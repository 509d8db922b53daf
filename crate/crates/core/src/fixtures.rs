//! Generators with known ground truth.
//!
//! Every fixture is an ordinary [`GeneratorSpec`] so it can be saved and
//! loaded like any other generator; the extra structs here carry the data
//! needed to compute exact answers.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{GeneratorSpec, NoiseDistribution};
use crate::report::EvalConfig;
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::{Activation, LayerSpec};

/// Polyline driven by a scalar `z ∈ [0, 1]`: segment `i` maps
/// `[breakpoints[i], breakpoints[i+1]]` affinely onto the chord from
/// `vertices[i]` to `vertices[i+1]`. Repeated vertices make point masses.
/// Outside `[0, 1]` the end segments extend linearly.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearManifold {
    pub breakpoints: Vec<f64>,
    pub vertices: Vec<[f64; 2]>,
    pub output_range: (f64, f64),
}

impl PiecewiseLinearManifold {
    pub fn new(breakpoints: Vec<f64>, vertices: Vec<[f64; 2]>, output_range: (f64, f64)) -> Result<Self> {
        let m = Self {
            breakpoints,
            vertices,
            output_range,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.breakpoints;
        if b.len() < 2 || b[0] != 0.0 || b[b.len() - 1] != 1.0 {
            return Err(Error::Invariant("breakpoints must start at 0 and end at 1".into()));
        }
        if b.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invariant("breakpoints must be strictly increasing".into()));
        }
        if self.vertices.len() != b.len() {
            return Err(Error::Invariant("one vertex per breakpoint required".into()));
        }
        if !(self.output_range.1 > self.output_range.0) {
            return Err(Error::Invariant("output_range needs hi > lo".into()));
        }
        Ok(())
    }

    pub fn segments(&self) -> usize {
        self.breakpoints.len() - 1
    }

    fn slope(&self, k: usize) -> [f64; 2] {
        let dz = self.breakpoints[k + 1] - self.breakpoints[k];
        let (a, b) = (self.vertices[k], self.vertices[k + 1]);
        [(b[0] - a[0]) / dz, (b[1] - a[1]) / dz]
    }

    /// Direct piecewise evaluation, extrapolating the end segments.
    pub fn evaluate(&self, z: f64) -> [f64; 2] {
        let last = self.segments() - 1;
        let k = if z <= 0.0 {
            0
        } else if z >= 1.0 {
            last
        } else {
            (self.breakpoints.partition_point(|&b| b <= z) - 1).min(last)
        };
        let s = self.slope(k);
        let t = z - self.breakpoints[k];
        let v = self.vertices[k];
        [v[0] + s[0] * t, v[1] + s[1] * t]
    }

    /// Point at fraction `t ∈ [0, 1]` along segment `k`.
    pub fn point_on_segment(&self, k: usize, t: f64) -> [f64; 2] {
        let (a, b) = (self.vertices[k], self.vertices[k + 1]);
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }

    /// Latent at fraction `t` along segment `k`.
    pub fn latent_on_segment(&self, k: usize, t: f64) -> f64 {
        self.breakpoints[k] + t * (self.breakpoints[k + 1] - self.breakpoints[k])
    }
}

/// Realizes the polyline as a one-hidden-layer relu network:
/// `G(z) = v0 + s0·(relu(z) − relu(−z)) + Σ_k (s_k − s_{k−1})·relu(z − z_k)`.
pub fn manifold_to_spec(m: &PiecewiseLinearManifold) -> Result<GeneratorSpec> {
    m.validate()?;
    let segs = m.segments();
    let hidden = segs + 1;
    let mut w1 = vec![1.0, -1.0];
    let mut b1 = vec![0.0, 0.0];
    for k in 1..segs {
        w1.push(1.0);
        b1.push(-m.breakpoints[k]);
    }
    let s0 = m.slope(0);
    let mut cols: Vec<[f64; 2]> = vec![s0, [-s0[0], -s0[1]]];
    for k in 1..segs {
        let (cur, prev) = (m.slope(k), m.slope(k - 1));
        cols.push([cur[0] - prev[0], cur[1] - prev[1]]);
    }
    // row-major 2 x hidden
    let w2: Vec<f64> = (0..2).flat_map(|r| cols.iter().map(move |c| c[r])).collect();
    let layers = vec![
        LayerSpec::dense(1, hidden, w1, b1)?,
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::dense(hidden, 2, w2, m.vertices[0].to_vec())?,
    ];
    GeneratorSpec::new(layers, vec![2], m.output_range, NoiseDistribution::uniform(1, 0.0, 1.0))
}

/// Exact prior mass (uniform z on [0, 1]) of
/// `{z : ‖G(z) − x‖² / 2 < mse_ceiling}`, solved segment by segment.
pub fn exact_ball_probability(m: &PiecewiseLinearManifold, center: [f64; 2], mse_ceiling: f64) -> f64 {
    let r2 = 2.0 * mse_ceiling;
    (0..m.segments())
        .map(|k| {
            let width = m.breakpoints[k + 1] - m.breakpoints[k];
            let (a, b) = (m.vertices[k], m.vertices[k + 1]);
            let d = [b[0] - a[0], b[1] - a[1]];
            let o = [a[0] - center[0], a[1] - center[1]];
            let qa = d[0] * d[0] + d[1] * d[1];
            let qb = 2.0 * (d[0] * o[0] + d[1] * o[1]);
            let qc = o[0] * o[0] + o[1] * o[1] - r2;
            if qa == 0.0 {
                return if qc < 0.0 { width } else { 0.0 };
            }
            let disc = qb * qb - 4.0 * qa * qc;
            if disc <= 0.0 {
                return 0.0;
            }
            let sq = disc.sqrt();
            let t0 = ((-qb - sq) / (2.0 * qa)).max(0.0);
            let t1 = ((-qb + sq) / (2.0 * qa)).min(1.0);
            (t1 - t0).max(0.0) * width
        })
        .sum()
}

/// The five-target cartoon: ten segments of equal prior mass, one of them a
/// point mass, with short and long chords.
pub fn cartoon_manifold() -> PiecewiseLinearManifold {
    let breakpoints = (0..=10).map(|i| i as f64 / 10.0).collect();
    let vertices = vec![
        [0.0, 0.0],
        [0.2, 0.0],
        [0.4, 0.2],
        [1.4, 0.2],
        [1.6, 0.4],
        [1.8, 0.4],
        [1.8, 0.4],
        [2.0, 1.4],
        [2.0, 1.6],
        [2.0, 2.6],
        [2.3, 2.6],
    ];
    PiecewiseLinearManifold::new(breakpoints, vertices, (-1.0, 4.0)).expect("valid cartoon")
}

/// Test targets placed around [`cartoon_manifold`].
#[derive(Debug, Clone, Copy)]
pub struct CartoonTargets {
    /// Midpoint of a short (slow) segment.
    pub short_segment: [f64; 2],
    /// Midpoint of a long (fast) segment.
    pub long_segment: [f64; 2],
    /// Off the manifold, nearest to the point mass.
    pub near_point_mass: [f64; 2],
    /// Far from everything.
    pub far: [f64; 2],
    /// On the extension past `z = 1`.
    pub out_of_range: [f64; 2],
}

pub fn cartoon_targets() -> CartoonTargets {
    CartoonTargets {
        short_segment: [2.0, 1.5],
        long_segment: [0.9, 0.2],
        near_point_mass: [1.95, 0.25],
        far: [0.9, 0.7],
        out_of_range: [2.9, 2.6],
    }
}

/// Two segments of equal prior mass: slow (speed 1) then fast (speed `fast`).
pub fn two_speed_manifold(fast: f64) -> PiecewiseLinearManifold {
    PiecewiseLinearManifold::new(
        vec![0.0, 0.5, 1.0],
        vec![[0.0, 0.0], [0.5, 0.0], [0.5, 0.5 * fast]],
        (-1.0, 0.5 * fast + 1.0),
    )
    .expect("valid two-speed manifold")
}

/// Column scaling of an affine fixture.
#[derive(Debug, Clone, PartialEq)]
pub enum Conditioning {
    Isotropic(f64),
    PerAxis(Vec<f64>),
}

/// `G(z) = A z + b` with `A = Q·diag(scales)`, `Q` having orthonormal columns.
#[derive(Debug, Clone)]
pub struct AffineFixture {
    pub spec: GeneratorSpec,
    /// Row-major `dim_out × dim_in`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub scales: Vec<f64>,
    pub dim_in: usize,
    pub dim_out: usize,
}

impl AffineFixture {
    /// Closed-form least-squares inverse `diag(1/s²)·Aᵀ(x − b)`.
    pub fn least_squares(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim_in)
            .map(|j| {
                let dot: f64 = (0..self.dim_out)
                    .map(|i| self.a[i * self.dim_in + j] * (x[i] - self.b[i]))
                    .sum();
                dot / (self.scales[j] * self.scales[j])
            })
            .collect()
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        (0..self.dim_out)
            .map(|i| {
                self.b[i]
                    + (0..self.dim_in)
                        .map(|j| self.a[i * self.dim_in + j] * z[j])
                        .sum::<f64>()
            })
            .collect()
    }
}

pub fn affine_fixture(dim_in: usize, dim_out: usize, seed: u64, conditioning: Conditioning) -> Result<AffineFixture> {
    if dim_in == 0 || dim_out < dim_in {
        return Err(Error::Config("affine fixture needs 0 < dim_in <= dim_out".into()));
    }
    let scales = match conditioning {
        Conditioning::Isotropic(s) => vec![s; dim_in],
        Conditioning::PerAxis(s) => {
            if s.len() != dim_in {
                return Err(Error::Config("one scale per latent axis required".into()));
            }
            s
        }
    };
    if scales.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Config("scales must be positive".into()));
    }
    let mut rng = rng_from_seed(seed);
    // modified Gram-Schmidt over Gaussian columns
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dim_in);
    while cols.len() < dim_in {
        let mut c: Vec<f64> = (0..dim_out).map(|_| rng.sample(StandardNormal)).collect();
        for q in &cols {
            let p: f64 = q.iter().zip(&c).map(|(a, b)| a * b).sum();
            c.iter_mut().zip(q).for_each(|(ci, qi)| *ci -= p * qi);
        }
        let n = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n < 1e-6 {
            continue;
        }
        c.iter_mut().for_each(|v| *v /= n);
        cols.push(c);
    }
    let a: Vec<f64> = (0..dim_out)
        .flat_map(|i| (0..dim_in).map(|j| cols[j][i] * scales[j]).collect::<Vec<_>>())
        .collect();
    let b: Vec<f64> = (0..dim_out).map(|_| rng.random_range(-0.5..0.5)).collect();
    let spec = GeneratorSpec::new(
        vec![LayerSpec::dense(dim_in, dim_out, a.clone(), b.clone())?],
        vec![dim_out],
        (-10.0, 10.0),
        NoiseDistribution::gaussian(dim_in),
    )?;
    Ok(AffineFixture {
        spec,
        a,
        b,
        scales,
        dim_in,
        dim_out,
    })
}

/// He-initialized relu MLP whose tanh output is rescaled into `output_range`.
/// `widths` lists the hidden widths followed by the output width.
pub fn random_mlp_fixture(dim_in: usize, widths: &[usize], seed: u64, output_range: (f64, f64)) -> Result<GeneratorSpec> {
    if widths.is_empty() || widths.contains(&0) || dim_in == 0 {
        return Err(Error::Config("random MLP needs positive widths".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut layers = Vec::new();
    let mut fan_in = dim_in;
    for (i, &w) in widths.iter().enumerate() {
        let std = (2.0 / fan_in as f64).sqrt();
        let weights = (0..w * fan_in)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let bias = (0..w).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        layers.push(LayerSpec::dense(fan_in, w, weights, bias)?);
        let last = i + 1 == widths.len();
        layers.push(LayerSpec::Activation(if last { Activation::Tanh } else { Activation::Relu }));
        fan_in = w;
    }
    let (lo, hi) = output_range;
    let half = 0.5 * (hi - lo);
    let out = fan_in;
    let mut diag = vec![0.0; out * out];
    (0..out).for_each(|i| diag[i * out + i] = half);
    layers.push(LayerSpec::dense(out, out, diag, vec![lo + half; out])?);
    GeneratorSpec::new(layers, vec![out], output_range, NoiseDistribution::gaussian(dim_in))
}

/// `G(z) = a·z` with a Gaussian prior.
pub fn scaling_fixture(dim: usize, a: f64) -> Result<GeneratorSpec> {
    let mut w = vec![0.0; dim * dim];
    (0..dim).for_each(|i| w[i * dim + i] = a);
    GeneratorSpec::new(
        vec![LayerSpec::dense(dim, dim, w, vec![0.0; dim])?],
        vec![dim],
        (-10.0, 10.0),
        NoiseDistribution::gaussian(dim),
    )
}

pub fn identity_fixture(dim: usize) -> Result<GeneratorSpec> {
    scaling_fixture(dim, 1.0)
}

/// Ignores its input and always returns `value`.
pub fn constant_fixture(dim_in: usize, value: &[f64]) -> Result<GeneratorSpec> {
    GeneratorSpec::new(
        vec![LayerSpec::dense(dim_in, value.len(), vec![0.0; dim_in * value.len()], value.to_vec())?],
        vec![value.len()],
        (-10.0, 10.0),
        NoiseDistribution::gaussian(dim_in),
    )
}

/// Componentwise `g(t) = t` for `t ≥ 0` and `g(t) = scale·t` for `t < 0`:
/// the negative orthant is a copy of the positive one stretched by `scale`.
pub fn two_branch_fixture(dim: usize, scale: f64) -> Result<GeneratorSpec> {
    let mut w1 = vec![0.0; 2 * dim * dim];
    for i in 0..dim {
        w1[i * dim + i] = 1.0;
        w1[(dim + i) * dim + i] = -1.0;
    }
    let mut w2 = vec![0.0; dim * 2 * dim];
    for i in 0..dim {
        w2[i * 2 * dim + i] = 1.0;
        w2[i * 2 * dim + dim + i] = -scale;
    }
    GeneratorSpec::new(
        vec![
            LayerSpec::dense(dim, 2 * dim, w1, vec![0.0; 2 * dim])?,
            LayerSpec::Activation(Activation::Relu),
            LayerSpec::dense(2 * dim, dim, w2, vec![0.0; dim])?,
        ],
        vec![dim],
        (-10.0, 10.0),
        NoiseDistribution::gaussian(dim),
    )
}

pub const AFFINE_FIXTURE_SEED: u64 = 1;
pub const MLP_FIXTURE_SEED: u64 = 2;

/// On-manifold targets for an affine fixture: prior draws pulled inside the
/// typical set, pushed through the generator.
pub fn affine_targets(fixture: &AffineFixture, count: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let dist = fixture.spec.noise;
    dist.sample(seed, count)
        .into_iter()
        .map(|z| {
            let mut z = z.into_data();
            dist.project(&mut z, 0.0);
            let x = fixture.apply(&z);
            (z, x)
        })
        .collect()
}

/// Writes the standard fixture generators, matching target datasets and a
/// default config into `dir`; returns the written paths.
pub fn write_bundle(dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut spec_file = |name: &str, spec: &GeneratorSpec| -> Result<()> {
        let path = dir.join(name);
        spec.save(&path)?;
        written.push(path);
        Ok(())
    };

    let affine = affine_fixture(4, 8, AFFINE_FIXTURE_SEED, Conditioning::Isotropic(1.0))?;
    spec_file("affine4.json", &affine.spec)?;
    let cartoon = manifold_to_spec(&cartoon_manifold())?;
    spec_file("cartoon.json", &cartoon)?;
    spec_file("two_speed.json", &manifold_to_spec(&two_speed_manifold(4.0))?)?;
    let mlp = random_mlp_fixture(8, &[32, 32, 16], MLP_FIXTURE_SEED, (-1.0, 1.0))?;
    spec_file("mlp8.json", &mlp)?;
    spec_file("identity4.json", &identity_fixture(4)?)?;

    let mut data_file = |name: &str, data: Dataset| -> Result<()> {
        let path = dir.join(name);
        data.save(&path)?;
        written.push(path);
        Ok(())
    };
    let affine_x = affine_targets(&affine, 20, derive_seed(AFFINE_FIXTURE_SEED, &[1])).into_iter().map(|p| p.1).collect();
    data_file("affine4_targets.evgs", Dataset::new(affine_x)?)?;
    let t = cartoon_targets();
    let triangles = [t.short_segment, t.long_segment, t.near_point_mass, t.far, t.out_of_range];
    data_file("cartoon_targets.csv", Dataset::new(triangles.iter().map(|p| p.to_vec()).collect())?)?;
    let mlp_x = mlp
        .noise
        .sample(derive_seed(MLP_FIXTURE_SEED, &[1]), 12)
        .iter()
        .map(|z| mlp.generate_flat(z.data()))
        .collect::<Result<Vec<_>>>()?;
    let splits = (0..mlp_x.len()).map(|i| if i % 2 == 0 { Split::Train } else { Split::Test }).collect();
    data_file("mlp8_targets.evgs", Dataset::with_splits(mlp_x, splits)?)?;

    let config = dir.join("config.toml");
    fs::write(&config, EvalConfig::default().to_toml()).map_err(|e| Error::io(&config, e))?;
    written.push(config);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn gen(spec: &GeneratorSpec, z: f64) -> Vec<f64> {
        spec.generate(&Tensor::from_vec(vec![z])).unwrap().into_data()
    }

    #[test]
    fn single_segment_is_affine() {
        let m = PiecewiseLinearManifold::new(vec![0.0, 1.0], vec![[0.0, 0.0], [1.0, 0.0]], (-1.0, 2.0)).unwrap();
        let spec = manifold_to_spec(&m).unwrap();
        assert_eq!(gen(&spec, 0.5), vec![0.5, 0.0]);
    }

    #[test]
    fn network_matches_direct_evaluation() {
        for m in [cartoon_manifold(), two_speed_manifold(4.0)] {
            let spec = manifold_to_spec(&m).unwrap();
            for i in 0..1000 {
                let z = -0.5 + 2.0 * i as f64 / 999.0;
                let (net, direct) = (gen(&spec, z), m.evaluate(z));
                assert!((net[0] - direct[0]).abs() <= 1e-12 && (net[1] - direct[1]).abs() <= 1e-12, "z={z}");
            }
        }
    }

    #[test]
    fn continuous_at_breakpoints() {
        let m = two_speed_manifold(4.0);
        let spec = manifold_to_spec(&m).unwrap();
        let (a, b) = (gen(&spec, 0.5 - 1e-13), gen(&spec, 0.5 + 1e-13));
        assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
    }

    #[test]
    fn manifold_invariants() {
        assert!(PiecewiseLinearManifold::new(vec![0.0, 0.5], vec![[0.0; 2]; 2], (0.0, 1.0)).is_err());
        assert!(PiecewiseLinearManifold::new(vec![0.0, 0.5, 0.5, 1.0], vec![[0.0; 2]; 4], (0.0, 1.0)).is_err());
        assert!(PiecewiseLinearManifold::new(vec![0.0, 1.0], vec![[0.0; 2]; 3], (0.0, 1.0)).is_err());
    }

    #[test]
    fn ball_probability_mid_segment() {
        // unit-speed segment: half-width in z equals the output radius
        let m = two_speed_manifold(4.0);
        let c: f64 = 1e-4;
        let r = (2.0 * c).sqrt();
        let p = exact_ball_probability(&m, [0.25, 0.0], c);
        assert!((p - 2.0 * r).abs() < 1e-12);
        let p_fast = exact_ball_probability(&m, [0.5, 1.0], c);
        assert!((p_fast - 2.0 * r / 4.0).abs() < 1e-12);
        assert_eq!(exact_ball_probability(&m, [5.0, 5.0], c), 0.0);
    }

    #[test]
    fn point_mass_carries_its_measure() {
        let m = cartoon_manifold();
        let p = exact_ball_probability(&m, [1.8, 0.4], 1e-4);
        assert!(p >= 0.1);
    }

    #[test]
    fn affine_columns_are_orthonormal() {
        let f = affine_fixture(4, 8, 3, Conditioning::Isotropic(1.0)).unwrap();
        for j in 0..4 {
            for k in 0..4 {
                let dot: f64 = (0..8).map(|i| f.a[i * 4 + j] * f.a[i * 4 + k]).sum();
                let want = if j == k { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn affine_least_squares_is_exact_on_manifold() {
        let f = affine_fixture(16, 32, 8, Conditioning::Isotropic(1.0)).unwrap();
        let z0: Vec<f64> = (0..16).map(|i| (i as f64 - 7.5) / 4.0).collect();
        let x = f.spec.generate(&Tensor::from_vec(z0.clone())).unwrap().into_data();
        let zls = f.least_squares(&x);
        let back = f.apply(&zls);
        let mse = crate::metrics::mse_slices(&back, &x);
        assert!(mse <= 1e-20, "{mse}");
    }

    #[test]
    fn per_axis_scales_shape_perturbation_error() {
        let f = affine_fixture(2, 6, 1, Conditioning::PerAxis(vec![1.0, 4.0])).unwrap();
        let base = f.apply(&[0.0, 0.0]);
        let e1 = crate::metrics::mse_slices(&f.apply(&[0.1, 0.0]), &base);
        let e2 = crate::metrics::mse_slices(&f.apply(&[0.0, 0.1]), &base);
        assert!((e2 / e1 - 16.0).abs() < 1e-9);
    }

    #[test]
    fn random_mlp_is_deterministic_bounded_and_finite() {
        let a = random_mlp_fixture(8, &[16, 16, 12], 4, (0.0, 255.0)).unwrap();
        assert_eq!(a, random_mlp_fixture(8, &[16, 16, 12], 4, (0.0, 255.0)).unwrap());
        for z in a.noise.sample(2, 1000) {
            let x = a.generate(&z).unwrap();
            assert!(x.is_finite());
            assert!(x.data().iter().all(|&v| (0.0..=255.0).contains(&v)));
        }
    }

    #[test]
    fn two_branch_scales_negative_orthant() {
        let spec = two_branch_fixture(2, 4.0).unwrap();
        let out = spec.generate(&Tensor::from_vec(vec![1.5, -0.5])).unwrap();
        assert_eq!(out.data(), &[1.5, -2.0]);
    }
}
