use super::*;
use crate::densities::{gaussian_1d, make_1d_example, EXAMPLE_1D_DOMAIN};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn example_grid(m: usize) -> GridSpec {
    GridSpec::new(EXAMPLE_1D_DOMAIN.0, EXAMPLE_1D_DOMAIN.1, m).unwrap()
}

#[test]
fn grid_validation() {
    assert!(GridSpec::new(1.0, 0.0, 10).is_err());
    assert!(GridSpec::new(0.0, 1.0, 2).is_err());
    let g = GridSpec::new(-1.0, 1.0, 5).unwrap();
    assert_eq!(g.nodes(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
    assert!((g.delta() - 0.5).abs() < 1e-15);
}

#[test]
fn zero_penalty_returns_nodes_exactly() {
    let p = make_1d_example();
    let g = example_grid(1000);
    let r = solve_rcae_grid(&p, &g, 0.0).unwrap();
    assert_eq!(r.values, g.nodes());
}

#[test]
fn reference_grid_runs() {
    let p = make_1d_example();
    let g = example_grid(1000);
    for s in [1.0f64, 0.31, 0.16, 0.06] {
        let r = solve_rcae_grid(&p, &g, s * s).unwrap();
        assert!(r.values.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn rejects_degenerate_densities() {
    let g = GridSpec::new(0.0, 1.0, 10).unwrap();
    assert_eq!(solve_rcae_tabulated(&[0.0; 10], &g, 0.1), Err(NonparamError::ZeroDensity));
    let mut bad = vec![1.0; 10];
    bad[3] = f64::NAN;
    assert!(matches!(solve_rcae_tabulated(&bad, &g, 0.1), Err(NonparamError::BadDensity { index: 3, .. })));
    assert!(solve_rcae_tabulated(&[1.0; 10], &g, -1.0).is_err());
}

#[test]
fn isolated_zero_density_nodes_are_pinned() {
    let g = GridSpec::new(0.0, 1.0, 11).unwrap();
    let mut p = vec![1.0; 11];
    p[4] = 0.0;
    p[5] = 0.0;
    let r = solve_rcae_tabulated(&p, &g, 0.01).unwrap();
    assert_eq!(r.values[5], g.node(5));
    assert!(r.values.iter().all(|v| v.is_finite()));
}

#[test]
fn gaussian_score_from_regularized_grid() {
    let p = gaussian_1d(0.0, 0.25).unwrap();
    let g = GridSpec::new(-3.0, 3.0, 2001).unwrap();
    let sigma2 = 1e-3;
    let s = score_from_grid(&solve_rcae_grid(&p, &g, sigma2).unwrap(), sigma2).unwrap();
    // relative sup-norm error over |x| ≤ 1 (the pointwise ratio is undefined at 0)
    let mut err = 0.0f64;
    let mut scale = 0.0f64;
    for (i, x) in g.nodes().into_iter().enumerate() {
        if x.abs() <= 1.0 {
            let t = -x / 0.25;
            err = err.max((s.values[i] - t).abs());
            scale = scale.max(t.abs());
        }
    }
    assert!(err / scale < 0.02, "relative error {}", err / scale);
}

#[test]
fn residual_and_local_optimality() {
    let p = make_1d_example();
    let g = example_grid(1000);
    let pv: Vec<f64> = g.nodes().iter().map(|x| p.density(&[*x])).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for sigma in [1.0f64, 0.1, 0.06] {
        let s2 = sigma * sigma;
        let r = solve_rcae_tabulated(&pv, &g, s2).unwrap();
        assert!(rcae_relative_residual(&pv, &g, s2, &r.values) < 1e-10);
        let base = rcae_grid_loss(&pv, &g, s2, &r.values);
        for _ in 0..50 {
            let i = rng.random_range(0..g.m);
            for d in [1e-3, -1e-3] {
                let mut rr = r.values.clone();
                rr[i] += d;
                assert!(rcae_grid_loss(&pv, &g, s2, &rr) > base);
            }
        }
    }
}

#[test]
fn residual_holds_on_very_fine_grids() {
    let p = make_1d_example();
    let g = example_grid((1 << 17) + 1);
    assert!(solve_rcae_grid(&p, &g, 0.01).is_ok());
}

#[test]
fn gaussian_dae_closed_form() {
    let p = gaussian_1d(0.0, 1.0).unwrap();
    let g = GridSpec::new(-3.0, 3.0, 601).unwrap();
    for sigma in [0.1, 0.5] {
        let sol = solve_dae_exact(&p, &g, sigma, &Quadrature::default()).unwrap();
        for (i, x) in g.nodes().into_iter().enumerate() {
            assert!((sol.r.values[i] - x / (1.0 + sigma * sigma)).abs() < 1e-6);
        }
    }
    let g1 = GridSpec::new(0.0, 1.0, 3).unwrap();
    let sol = solve_dae_exact(&p, &g1, 0.5, &Quadrature::default()).unwrap();
    assert!((sol.r.values[2] - 0.8).abs() < 1e-6);
    let sol = solve_dae_exact(&p, &GridSpec::new(0.0, 1.0, 3).unwrap(), 0.1, &Quadrature::default()).unwrap();
    let s = score_from_grid(&sol.r, 0.01).unwrap();
    assert!((s.values[1] + 0.5 / 1.01).abs() < 1e-6);
    assert!((s.values[1] + 0.495).abs() < 1e-3);
}

#[test]
fn hermite_and_trapezoid_agree_on_the_example() {
    let p = make_1d_example();
    let g = example_grid(301);
    let trap = Quadrature::Trapezoid { width: 8.0, points: 8001 };
    // At σ = 1 the noise is four times wider than the mixture components
    // and 101 Hermite nodes under-resolve them slightly.
    for (sigma, tol) in [(1.0, 1e-4), (0.31, 1e-11), (0.16, 1e-11), (0.06, 1e-11)] {
        let a = solve_dae_exact(&p, &g, sigma, &Quadrature::default()).unwrap();
        let b = solve_dae_exact(&p, &g, sigma, &trap).unwrap();
        let diff = a.r.values.iter().zip(&b.r.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < tol, "sigma {sigma}: {diff}");
    }
}

#[test]
fn dae_reconstruction_approaches_identity() {
    let p = make_1d_example();
    let g = example_grid(500);
    let mask = bulk_mask(&p, &g, 0.05);
    let dev = |s: f64| {
        let sol = solve_dae_exact(&p, &g, s, &Quadrature::default()).unwrap();
        sol.r
            .values
            .iter()
            .zip(g.nodes())
            .zip(&mask)
            .filter(|(_, m)| **m)
            .map(|((r, x), _)| (r - x).abs())
            .fold(0.0, f64::max)
    };
    assert!(dev(1e-3) < 1e-2 * dev(1e-1));
}

#[test]
fn batch_matches_individual_solves() {
    let p = make_1d_example();
    let g = example_grid(200);
    let sig = [1.0, 0.31, 0.16, 0.06];
    let batch = solve_dae_batch(&p, &g, &sig, &Quadrature::default()).unwrap();
    for (s, b) in sig.iter().zip(&batch) {
        assert_eq!(*b, solve_dae_exact(&p, &g, *s, &Quadrature::default()).unwrap());
    }
}

#[test]
fn underflowing_nodes_are_masked() {
    let p = gaussian_1d(0.0, 1e-4).unwrap();
    let g = GridSpec::new(-5.0, 5.0, 11).unwrap();
    let sol = solve_dae_exact(&p, &g, 0.01, &Quadrature::default()).unwrap();
    assert!(!sol.valid[0]);
    assert_eq!(sol.r.values[0], -5.0);
    assert!(sol.valid[5]);
}

#[test]
fn score_direction_relations() {
    let g = example_grid(50);
    let id = GridFunction::identity(g);
    assert!(score_direction(&id).values.iter().all(|v| *v == 0.0));
    assert!(score_from_grid(&id, 0.1).unwrap().values.iter().all(|v| *v == 0.0));
    assert!(score_from_grid(&id, 0.0).is_err());

    let p = make_1d_example();
    let r = solve_dae_exact(&p, &g, 0.2, &Quadrature::default()).unwrap().r;
    let a = score_direction(&r);
    let b = score_from_grid(&r, 0.04).unwrap();
    for (x, y) in a.values.iter().zip(&b.values) {
        assert_eq!(x / 0.04, *y);
    }
}

#[test]
fn score_direction_sign_matches_truth_on_bulk() {
    let p = make_1d_example();
    let g = example_grid(1000);
    let mask = bulk_mask(&p, &g, 0.05);
    let sigma = 0.06;
    let dir_r = score_direction(&solve_rcae_grid(&p, &g, sigma * sigma).unwrap());
    let dir_d = score_direction(&solve_dae_exact(&p, &g, sigma, &Quadrature::default()).unwrap().r);
    let truth = true_score(&p, &g);
    for i in 0..g.m {
        // skip nodes where the truth itself is within estimator noise of zero
        if mask[i] && truth.values[i].abs() > 0.5 {
            assert_eq!(dir_r.values[i].signum(), truth.values[i].signum(), "node {i}");
            assert_eq!(dir_d.values[i].signum(), truth.values[i].signum(), "node {i}");
        }
    }
}

#[test]
fn gap_is_small_at_small_noise() {
    let p = make_1d_example();
    let g = example_grid(1000);
    let g006 = dae_rcae_gap(&p, &g, 0.06).unwrap();
    let g031 = dae_rcae_gap(&p, &g, 0.31).unwrap();
    assert!(g006 < 0.05, "gap {g006}");
    assert!(g006 < g031);

    let gauss = gaussian_1d(0.0, 0.25).unwrap();
    // The natural boundary forces r' → 0 in a layer of width σ at the ends,
    // so the grid must extend to where p is negligible; the forward
    // difference is first order in Δ, so Δ must also be small.
    let gg = GridSpec::new(-4.0, 4.0, 32_001).unwrap();
    let gap = dae_rcae_gap(&gauss, &gg, 1e-3).unwrap();
    assert!(gap < 1e-3, "gaussian gap {gap}");
}

#[test]
fn refinement_changes_little() {
    let p = make_1d_example();
    let coarse = example_grid((1 << 16) + 1);
    let fine = coarse.refined();
    let mask = bulk_mask(&p, &coarse, 0.05);
    let s2 = 0.01;
    let a = score_from_grid(&solve_rcae_grid(&p, &coarse, s2).unwrap(), s2).unwrap();
    let b = score_from_grid(&solve_rcae_grid(&p, &fine, s2).unwrap(), s2).unwrap();
    let mut worst = 0.0f64;
    for i in 0..coarse.m {
        if mask[i] {
            worst = worst.max((a.values[i] - b.values[2 * i]).abs());
        }
    }
    assert!(worst < 1e-3, "sup change {worst}");
}

#[test]
fn csv_exports() {
    let g = GridSpec::new(0.0, 1.0, 3).unwrap();
    let f = GridFunction::new(g, vec![1.0, 2.0, 3.0]).unwrap();
    assert_eq!(f.to_csv(), "0.0,1.0\n0.5,2.0\n1.0,3.0\n");
    let csv = fig3_csv(&f, &f, &f);
    assert_eq!(csv.lines().count(), 4);
    assert_eq!(csv.lines().nth(1), Some("0.0,1.0,1.0,1.0"));
    assert!(GridFunction::new(g, vec![1.0, f64::INFINITY, 0.0]).is_err());
}

#[test]
fn derivative_of_linear_function() {
    let g = GridSpec::new(-1.0, 1.0, 21).unwrap();
    let f = GridFunction::new(g, g.nodes().iter().map(|x| 3.0 * x + 1.0).collect()).unwrap();
    assert!(f.derivative().values.iter().all(|v| (v - 3.0).abs() < 1e-12));
    assert!((f.interpolate(0.05) - 1.15).abs() < 1e-12);
}
