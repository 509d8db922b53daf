mod common;

use common::*;
use latent_eval::fixtures::{
    cartoon_manifold, cartoon_targets, exact_ball_probability, identity_fixture, manifold_to_spec,
    random_mlp_fixture, scaling_fixture, two_speed_manifold, PiecewiseLinearManifold,
};
use latent_eval::likelihood::{
    estimate_combined, estimate_counting, estimate_direct, estimate_isotropic, omitted_log_constant,
    LikelihoodConfig, SigmaGrid,
};
use latent_eval::metrics::DistanceThreshold;
use latent_eval::Tensor;
use proptest::prelude::*;

fn manifolds() -> Vec<(&'static str, PiecewiseLinearManifold, Vec<[f64; 2]>)> {
    let cartoon = cartoon_manifold();
    let t = cartoon_targets();
    let speed = two_speed_manifold(4.0);
    let zig = zigzag_manifold();
    vec![
        (
            "cartoon",
            cartoon.clone(),
            vec![t.short_segment, t.long_segment, t.near_point_mass, [1.8, 0.4], cartoon.point_on_segment(4, 0.3)],
        ),
        ("two-speed", speed.clone(), vec![speed.evaluate(0.25), speed.evaluate(0.5), speed.evaluate(0.9), [0.45, 0.05]]),
        ("zigzag", zig.clone(), vec![[0.0, 0.6], [0.3, 0.3], zig.point_on_segment(1, 0.5), [1.2, 0.6], [0.61, 0.31]]),
    ]
}

#[test]
fn exact_ball_probability_matches_dense_grid() {
    for c in [0.005, 0.02] {
        for (name, m, probes) in manifolds() {
            for p in probes {
                let exact = exact_ball_probability(&m, p, c);
                let grid = grid_ball_probability(&m, p, c, 10_000_000);
                assert!((exact - grid).abs() <= 1e-4, "{name} {p:?} c={c}: {exact} vs {grid}");
            }
        }
    }
}

#[test]
fn manifold_network_reproduces_polyline() {
    for (name, m, _) in manifolds() {
        let spec = manifold_to_spec(&m).unwrap();
        for i in 0..=2000 {
            let z = i as f64 / 2000.0;
            let x = spec.generate(&Tensor::from_vec(vec![z])).unwrap();
            let p = polyline_point(&m, z);
            assert!(
                (x.data()[0] - p[0]).abs() < 1e-12 && (x.data()[1] - p[1]).abs() < 1e-12,
                "{name} at z={z}"
            );
        }
    }
}

#[test]
fn direct_estimate_converges_to_exact_mass() {
    let c = 0.005;
    for (name, m, probes) in manifolds() {
        let spec = manifold_to_spec(&m).unwrap();
        let th = DistanceThreshold::from_mse_ceiling(c, spec.peak());
        for (k, p) in probes.iter().enumerate() {
            let exact = exact_ball_probability(&m, *p, c);
            for n in [1_000, 10_000, 100_000] {
                let e = estimate_direct(&spec, &Tensor::from_vec(p.to_vec()), th, n, 31 + k as u64).unwrap();
                let phat = e.hits as f64 / n as f64;
                let se = (exact * (1.0 - exact) / n as f64).sqrt();
                assert!((phat - exact).abs() <= 3.0 * se, "{name}#{k} N={n}: {phat} vs {exact} (se {se})");
            }
        }
    }
}

#[test]
fn isotropic_estimate_on_identity_is_root_ceiling() {
    // MSE of σ·n over d outputs has mean σ², so the largest admissible σ is √c.
    let spec = identity_fixture(3).unwrap();
    let c = 1e-3;
    let th = DistanceThreshold::from_mse_ceiling(c, spec.peak());
    let e = estimate_isotropic(&spec, &[0.1, 0.2, -0.4], th, (1e-4, 1.0), 20_000, 5).unwrap();
    assert!(!e.saturated);
    assert!((e.sigma_used / c.sqrt() - 1.0).abs() < 0.03, "{}", e.sigma_used);
    assert!((e.log_unnormalized - 3.0 * e.sigma_used.ln()).abs() < 1e-12);
}

#[test]
fn perturbation_estimators_agree_with_direct_mass() {
    // Identity and a small random MLP in two latent dimensions, where direct
    // prior sampling is still accurate.
    let identity = identity_fixture(2).unwrap();
    let mlp = random_mlp_fixture(2, &[16, 3], 12, (-1.0, 1.0)).unwrap();
    for (name, spec, zc, c) in [
        ("identity", identity, vec![0.3, -0.2], 5e-3),
        ("mlp", mlp, vec![-0.4, 0.7], 1e-3),
    ] {
        let x = spec.generate(&Tensor::from_vec(zc.clone())).unwrap();
        let th = DistanceThreshold::from_mse_ceiling(c, spec.peak());
        let direct = estimate_direct(&spec, &x, th, 200_000, 3).unwrap();
        assert!(direct.hits >= 200, "{name}: only {} direct hits", direct.hits);
        let cfg = LikelihoodConfig {
            psnr_threshold_db: th.psnr_floor_db,
            seed: 4,
            ..LikelihoodConfig::default()
        };
        let combined = estimate_combined(&spec, &zc, &cfg).unwrap();
        let counting = estimate_counting(&spec, &zc, th, combined.sigma_used, 10_000, 9).unwrap();
        let shift = omitted_log_constant(&spec.noise, &zc);
        for e in [&combined, &counting] {
            let diff = e.log_unnormalized + shift - direct.log_unnormalized;
            assert!(diff.abs() <= 1.0, "{name} {:?}: off by {diff} nats", e.estimator);
        }
    }
}

#[test]
fn counting_uses_common_random_numbers() {
    let spec = scaling_fixture(3, 2.0).unwrap();
    let th = DistanceThreshold::from_mse_ceiling(1e-3, spec.peak());
    let a = estimate_counting(&spec, &[0.1, 0.0, 0.5], th, 0.01, 5_000, 42).unwrap();
    let b = estimate_counting(&spec, &[0.1, 0.0, 0.5], th, 0.01, 5_000, 42).unwrap();
    assert_eq!(a, b);
    // The first 2000 draws are shared with a longer run.
    let short = estimate_counting(&spec, &[0.1, 0.0, 0.5], th, 0.01, 2_000, 42).unwrap();
    assert!(short.hits <= a.hits);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hits_never_increase_with_sigma_on_linear_fixtures(
        seed in any::<u64>(),
        dim in 1usize..6,
        scale in 0.2f64..5.0,
        c in 1e-5f64..1e-2,
    ) {
        let spec = scaling_fixture(dim, scale).unwrap();
        let zc: Vec<f64> = (0..dim).map(|i| 0.1 * i as f64).collect();
        let th = DistanceThreshold::from_mse_ceiling(c, spec.peak());
        let grid = SigmaGrid::default().values();
        let hits: Vec<usize> = grid
            .iter()
            .step_by(3)
            .map(|&s| estimate_counting(&spec, &zc, th, s, 400, seed).unwrap().hits)
            .collect();
        prop_assert!(hits.windows(2).all(|w| w[1] <= w[0]), "{hits:?}");
    }

    #[test]
    fn combined_estimate_is_recomputable(seed in any::<u64>(), db in 40.0f64..70.0) {
        let spec = identity_fixture(3).unwrap();
        let cfg = LikelihoodConfig { psnr_threshold_db: db, n_max: 2_000, n_min_hits: 50, seed, ..LikelihoodConfig::default() };
        let e = estimate_combined(&spec, &[0.2, -0.1, 0.3], &cfg).unwrap();
        prop_assert_eq!(e.log_unnormalized, e.recompute());
        prop_assert!(e.hits >= 50);
        let expected = (e.hits as f64 / e.n_used as f64).ln() + 3.0 * e.sigma_used.ln();
        prop_assert!((e.log_unnormalized - expected).abs() < 1e-12);
    }
}

#[test]
fn counting_matches_chi_square_cdf() {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    // For G(z) = z in d dimensions a perturbation σn hits when
    // ‖σn‖²/d < c, i.e. χ²_d < d·c/σ².
    let d = 4;
    let spec = identity_fixture(d).unwrap();
    let c = 1e-3;
    let th = DistanceThreshold::from_mse_ceiling(c, spec.peak());
    let chi = ChiSquared::new(d as f64).unwrap();
    let n = 20_000;
    for sigma in [0.02, 0.05, 0.1] {
        let p = chi.cdf(d as f64 * c / (sigma * sigma));
        let e = estimate_counting(&spec, &[0.3, -0.1, 0.0, 0.7], th, sigma, n, 17).unwrap();
        let phat = e.hits as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((phat - p).abs() <= 3.0 * se, "σ={sigma}: {phat} vs {p}");
    }
}

#[test]
fn huge_sigma_on_affine_fixture_misses_everything() {
    use latent_eval::fixtures::{affine_fixture, Conditioning};
    // With unit singular values, a hit needs ‖σn‖² < dim_out·c, which for
    // σ = 1e3 requires ‖n‖² < 8e-9: probability far below 1/N.
    let fx = affine_fixture(4, 8, 5, Conditioning::Isotropic(1.0)).unwrap();
    let th = DistanceThreshold::from_mse_ceiling(1e-3, fx.spec.peak());
    let e = estimate_counting(&fx.spec, &[0.0; 4], th, 1e3, 5_000, 1).unwrap();
    assert_eq!(e.hits, 0);
    assert_eq!(e.log_unnormalized, f64::NEG_INFINITY);
}

#[test]
fn two_speed_combined_difference_is_ln_4() {
    let m = two_speed_manifold(4.0);
    let spec = manifold_to_spec(&m).unwrap();
    let cfg = LikelihoodConfig {
        psnr_threshold_db: 60.0,
        seed: 8,
        ..LikelihoodConfig::default()
    };
    let slow = estimate_combined(&spec, &[0.25], &cfg).unwrap();
    let fast = estimate_combined(&spec, &[0.75], &cfg).unwrap();
    let diff = slow.log_unnormalized - fast.log_unnormalized;
    assert!((diff - 4f64.ln()).abs() <= 0.5, "{diff}");

    let th = cfg.threshold(&spec);
    let n = 100_000;
    let ds = estimate_direct(&spec, &Tensor::from_vec(m.evaluate(0.25).to_vec()), th, n, 1).unwrap();
    let df = estimate_direct(&spec, &Tensor::from_vec(m.evaluate(0.75).to_vec()), th, n, 2).unwrap();
    let direct_diff = ds.log_unnormalized - df.log_unnormalized;
    assert!((diff - direct_diff).abs() <= 0.5, "{diff} vs {direct_diff}");
}

#[test]
fn single_sigma_sweep_has_one_point() {
    use latent_eval::likelihood::sigma_sweep;
    let spec = identity_fixture(2).unwrap();
    let s = sigma_sweep(&spec, &[0.0, 0.0], &[0.1], 10, 0).unwrap();
    assert_eq!(s.len(), 1);
}

#[test]
fn isotropic_is_deterministic_per_seed() {
    let spec = scaling_fixture(3, 1.5).unwrap();
    let th = DistanceThreshold::from_mse_ceiling(1e-3, spec.peak());
    let a = estimate_isotropic(&spec, &[0.0, 0.1, 0.2], th, (1e-4, 1.0), 1_000, 6).unwrap();
    let b = estimate_isotropic(&spec, &[0.0, 0.1, 0.2], th, (1e-4, 1.0), 1_000, 6).unwrap();
    assert_eq!(a.sigma_used, b.sigma_used);
}
