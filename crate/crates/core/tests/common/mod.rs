#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};

use latent_eval::fixtures::PiecewiseLinearManifold;
use latent_eval::inversion::{invert_best, InversionConfig, InversionResult};
use latent_eval::model::{GeneratorSpec, NoiseKind};
use latent_eval::tensor::{Activation, LayerSpec};
use latent_eval::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Random MLP with 1 to 4 dense layers of width at most 32, each followed by
/// a randomly chosen activation. Returns the layers and the input width.
pub fn random_network(rng: &mut ChaCha8Rng) -> (Vec<LayerSpec>, usize) {
    let depth = rng.random_range(1..=4);
    let input = rng.random_range(1..=12);
    let mut width = input;
    let mut layers = Vec::new();
    for _ in 0..depth {
        let out = rng.random_range(1..=32);
        let scale = (1.0 / width as f64).sqrt();
        let w = normal_vec(rng, out * width).into_iter().map(|v| v * scale).collect();
        let b = normal_vec(rng, out).into_iter().map(|v| 0.1 * v).collect();
        layers.push(LayerSpec::dense(width, out, w, b).unwrap());
        let act = match rng.random_range(0..5) {
            0 => Activation::Relu,
            1 => Activation::LeakyRelu {
                slope: rng.random_range(0.01..0.5),
            },
            2 => Activation::Tanh,
            3 => Activation::Sigmoid,
            _ => Activation::Identity,
        };
        layers.push(LayerSpec::activation(act).unwrap());
        width = out;
    }
    (layers, input)
}

/// Smallest |pre-activation| feeding a relu-type unit at `z`, computed
/// independently of the library's forward pass.
pub fn min_kink_distance(layers: &[LayerSpec], z: &[f64]) -> f64 {
    let mut x = z.to_vec();
    let mut pre = Vec::new();
    let mut closest = f64::INFINITY;
    for layer in layers {
        match layer {
            LayerSpec::Dense(d) => {
                x = (0..d.outputs())
                    .map(|r| d.row(r).iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + d.bias()[r])
                    .collect();
                pre = x.clone();
            }
            LayerSpec::Activation(a) => {
                if matches!(a, Activation::Relu | Activation::LeakyRelu { .. }) {
                    closest = pre.iter().fold(closest, |m, v| m.min(v.abs()));
                }
                x = x
                    .iter()
                    .map(|&v| match *a {
                        Activation::Relu => v.max(0.0),
                        Activation::LeakyRelu { slope } => {
                            if v > 0.0 {
                                v
                            } else {
                                slope * v
                            }
                        }
                        Activation::Tanh => v.tanh(),
                        Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
                        Activation::Identity => v,
                    })
                    .collect();
            }
        }
    }
    closest
}

/// Polyline evaluation written out independently of the library.
pub fn polyline_point(m: &PiecewiseLinearManifold, z: f64) -> [f64; 2] {
    let b = &m.breakpoints;
    let v = &m.vertices;
    let n = b.len() - 1;
    let k = (0..n).find(|&k| z < b[k + 1]).unwrap_or(n - 1);
    let t = (z - b[k]) / (b[k + 1] - b[k]);
    [
        v[k][0] + t * (v[k + 1][0] - v[k][0]),
        v[k][1] + t * (v[k + 1][1] - v[k][1]),
    ]
}

/// Prior mass of `{z ∈ [0,1] : mse(G(z), center) < c}` by a midpoint grid.
pub fn grid_ball_probability(m: &PiecewiseLinearManifold, center: [f64; 2], mse_ceiling: f64, points: usize) -> f64 {
    let h = 1.0 / points as f64;
    let hits = (0..points)
        .filter(|&i| {
            let p = polyline_point(m, (i as f64 + 0.5) * h);
            let d = ((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2)) / 2.0;
            d < mse_ceiling
        })
        .count();
    hits as f64 * h
}

static CONSTRAINED_RUNS: AtomicUsize = AtomicUsize::new(0);
static CONSTRAINT_VIOLATIONS: AtomicUsize = AtomicUsize::new(0);

/// Whether `z` lies in the feasible set: `‖z‖² ≤ dim + delta + 1e-9` for the
/// Gaussian prior, exact box membership for the uniform one.
pub fn feasible(spec: &GeneratorSpec, z: &[f64], delta: f64) -> bool {
    match spec.noise.kind {
        NoiseKind::StandardGaussian => {
            z.iter().map(|v| v * v).sum::<f64>() <= spec.latent_dim as f64 + delta + 1e-9
        }
        NoiseKind::UniformBox { lo, hi } => z.iter().all(|&v| lo <= v && v <= hi),
    }
}

/// Records one constrained result in the process-wide tally.
pub fn track(spec: &GeneratorSpec, result: &InversionResult, delta: f64) {
    CONSTRAINED_RUNS.fetch_add(1, Ordering::SeqCst);
    if !feasible(spec, &result.z_star, delta) {
        CONSTRAINT_VIOLATIONS.fetch_add(1, Ordering::SeqCst);
    }
}

/// Constrained inversion that is always checked against the feasible set.
pub fn invert_constrained(spec: &GeneratorSpec, target: &Tensor, config: &InversionConfig, seed: u64) -> InversionResult {
    let cfg = InversionConfig {
        constrained: true,
        ..config.clone()
    };
    let r = invert_best(spec, target, &cfg, seed).unwrap();
    track(spec, &r, cfg.delta);
    r
}

/// `(constrained runs, violations)` recorded so far in this process.
pub fn constraint_tally() -> (usize, usize) {
    (
        CONSTRAINED_RUNS.load(Ordering::SeqCst),
        CONSTRAINT_VIOLATIONS.load(Ordering::SeqCst),
    )
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Least-squares solution of `A z = y` (row-major `A`, `rows × cols`) via
/// the normal equations and Gaussian elimination with partial pivoting.
pub fn solve_least_squares(a: &[f64], rows: usize, cols: usize, y: &[f64]) -> Vec<f64> {
    let mut m = vec![vec![0.0; cols + 1]; cols];
    for i in 0..cols {
        for j in 0..cols {
            m[i][j] = (0..rows).map(|r| a[r * cols + i] * a[r * cols + j]).sum();
        }
        m[i][cols] = (0..rows).map(|r| a[r * cols + i] * y[r]).sum();
    }
    for p in 0..cols {
        let best = (p..cols)
            .max_by(|&x, &y| m[x][p].abs().total_cmp(&m[y][p].abs()))
            .unwrap();
        m.swap(p, best);
        for r in p + 1..cols {
            let f = m[r][p] / m[p][p];
            for c in p..=cols {
                m[r][c] -= f * m[p][c];
            }
        }
    }
    let mut z = vec![0.0; cols];
    for p in (0..cols).rev() {
        let s: f64 = (p + 1..cols).map(|c| m[p][c] * z[c]).sum();
        z[p] = (m[p][cols] - s) / m[p][p];
    }
    z
}

/// A third test polyline: uneven breakpoints, a sharp fold, and a point mass.
pub fn zigzag_manifold() -> PiecewiseLinearManifold {
    PiecewiseLinearManifold::new(
        vec![0.0, 0.15, 0.45, 0.5, 0.8, 1.0],
        vec![[0.0, 0.0], [0.6, 0.3], [0.0, 0.6], [0.0, 0.6], [1.2, 0.6], [1.2, 1.4]],
        (-1.0, 2.0),
    )
    .unwrap()
}
