//! Quantitative checks against independent oracles (closed forms,
//! quadrature, finite differences, Monte Carlo), grouped into suites.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::autoencoder::{
    dae_loss, dae_loss_grad, hessian_estimate, rcae_loss, rcae_loss_grad, score_field, symmetry_defect,
    MlpAutoEncoder, NoiseTable, VectorField,
};
use crate::densities::{
    gaussian_1d, isotropic_gaussian, make_1d_example, make_gaussian_mixture, spiral_normal, spiral_point, uniform_box,
    AnalyticDensity, SPIRAL_T_RANGE,
};
use crate::energy_sampler::{energy_diff, run_chains, MhConfig, PathIntegralConfig};
use crate::local_moments::{
    ball_monomial_integral, ball_quadratic_form_integral, ball_vector_integral, local_covariance_mc, local_mean,
    mc_ball_integrals, reconstruction_local_mean, z_delta, BallSpec, Mode,
};
use crate::nonparametric::{
    bulk_mask, masked_rmse, score_from_grid, solve_dae_exact, solve_rcae_grid, true_score, GridFunction, GridSpec,
    Quadrature, BULK_FRACTION,
};
use crate::numerics::{central_jacobian, ks_statistic, loglog_slope, median, TabulatedCdf};

use super::config::{derive_seed, ExperimentConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub relation: Relation,
    pub bound: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, relation: Relation, bound: f64) -> Self {
        let passed = match relation {
            Relation::Lt => value < bound,
            Relation::Le => value <= bound,
            Relation::Ge => value >= bound,
            Relation::Gt => value > bound,
        };
        Self { name: name.into(), value, relation, bound, passed, detail: None }
    }

    pub fn with_detail(mut self, d: impl Into<String>) -> Self {
        self.detail = Some(d.into());
        self
    }

    /// One line: `PASS name: value rel bound (detail)`.
    pub fn line(&self) -> String {
        let rel = match self.relation {
            Relation::Lt => "<",
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Gt => ">",
        };
        let tag = if self.passed { "PASS" } else { "FAIL" };
        match &self.detail {
            Some(d) => format!("{tag} {}: {:.6e} {rel} {:e} ({d})", self.name, self.value, self.bound),
            None => format!("{tag} {}: {:.6e} {rel} {:e}", self.name, self.value, self.bound),
        }
    }
}

pub const SUITES: [&str; 7] = ["scores", "proposition1", "hessian", "ball", "local-mean", "sampler", "all"];

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    /// Supporting numbers (e.g. error-vs-σ tables).
    pub tables: BTreeMap<String, serde_json::Value>,
}

impl SuiteReport {
    fn new(suite: &str) -> Self {
        Self { suite: suite.into(), passed: true, checks: Vec::new(), tables: BTreeMap::new() }
    }

    fn extend(&mut self, checks: Vec<Check>) {
        self.checks.extend(checks);
        self.passed = self.checks.iter().all(|c| c.passed);
    }

    fn merge(&mut self, other: SuiteReport) {
        for (k, v) in other.tables {
            self.tables.insert(format!("{}.{k}", other.suite), v);
        }
        self.extend(other.checks);
    }
}

fn example_grid(m: usize) -> GridSpec {
    GridSpec::new(-1.5, 1.5, m).expect("valid grid")
}

/// Bulk-region RMSE of `(r − x)/σ²` against the analytic score, for both
/// solvers, at each σ.
pub fn score_errors(p: &AnalyticDensity, grid: &GridSpec, sigmas: &[f64], bulk: f64, quad: &Quadrature) -> (Vec<f64>, Vec<f64>) {
    let truth = true_score(p, grid);
    let mask = bulk_mask(p, grid, bulk);
    let mut rc = Vec::new();
    let mut dae = Vec::new();
    for &s in sigmas {
        let s2 = s * s;
        let r = solve_rcae_grid(p, grid, s2).expect("rcae solve");
        rc.push(masked_rmse(&score_from_grid(&r, s2).expect("σ > 0"), &truth, &mask));
        let d = solve_dae_exact(p, grid, s, quad).expect("dae solve");
        dae.push(masked_rmse(&score_from_grid(&d.r, s2).expect("σ > 0"), &truth, &mask));
    }
    (rc, dae)
}

fn max_ratio(xs: &[f64]) -> f64 {
    xs.windows(2).map(|w| w[1] / w[0]).fold(f64::NEG_INFINITY, f64::max)
}

/// Error decreases along the figure σ list and has slope ≥ 1.5 over
/// σ ∈ {0.4, 0.2, 0.1, 0.05}.
pub fn score_convergence() -> SuiteReport {
    let mut rep = SuiteReport::new("score_convergence");
    let p = make_1d_example();
    let g = example_grid(1000);
    let quad = Quadrature::default();
    let fig = [1.0, 0.31, 0.16, 0.06];
    let (rc, dae) = score_errors(&p, &g, &fig, BULK_FRACTION, &quad);
    let sl = [0.4, 0.2, 0.1, 0.05];
    let (rc2, dae2) = score_errors(&p, &g, &sl, BULK_FRACTION, &quad);
    let table = |s: &[f64], a: &[f64], b: &[f64]| {
        serde_json::json!(s.iter().zip(a).zip(b).map(|((s, a), b)| serde_json::json!({"sigma": s, "rmse_rcae": a, "rmse_dae": b})).collect::<Vec<_>>())
    };
    rep.tables.insert("figure_sigmas".into(), table(&fig, &rc, &dae));
    rep.tables.insert("slope_sigmas".into(), table(&sl, &rc2, &dae2));
    let (s_rc, s_dae) = (loglog_slope(&sl, &rc2), loglog_slope(&sl, &dae2));
    rep.tables.insert("slopes".into(), serde_json::json!({"rcae": s_rc, "dae": s_dae}));
    rep.extend(vec![
        Check::new("rcae bulk RMSE decreasing over {1, .31, .16, .06} (max successive ratio)", max_ratio(&rc), Relation::Lt, 1.0),
        Check::new("dae bulk RMSE decreasing over {1, .31, .16, .06} (max successive ratio)", max_ratio(&dae), Relation::Lt, 1.0),
        Check::new("rcae log-log slope over {.4, .2, .1, .05}", s_rc, Relation::Ge, 1.5),
        Check::new("dae log-log slope over {.4, .2, .1, .05}", s_dae, Relation::Ge, 1.5),
    ]);
    rep
}

/// Optimal denoising reconstruction of N(0,1) equals `x/(1+σ²)`.
pub fn dae_closed_form() -> SuiteReport {
    let mut rep = SuiteReport::new("dae_closed_form");
    let p = gaussian_1d(0.0, 1.0).expect("valid gaussian");
    let g = GridSpec::new(-3.0, 3.0, 601).expect("valid grid");
    for s in [0.1, 0.5] {
        let sol = solve_dae_exact(&p, &g, s, &Quadrature::default()).expect("dae solve");
        let err = g.nodes().iter().zip(&sol.r.values).map(|(x, r)| (r - x / (1.0 + s * s)).abs()).fold(0.0, f64::max);
        rep.extend(vec![Check::new(format!("N(0,1) DAE sup error vs x/(1+σ²), σ={s}"), err, Relation::Lt, 1e-6)]);
    }
    rep
}

/// `r_σ(x) = x + σ²ψ(x)`: an almost-exact identity block plus a fixed random
/// tanh network `ψ`, so that `r_σ = x + o(1)`.
pub fn loss_gap_model(d: usize, sigma: f64, seed: u64) -> MlpAutoEncoder {
    const EPS: f64 = 1e-4;
    const UNITS: usize = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = d + UNITS;
    let mut w = DMatrix::zeros(h, d);
    let mut v = DMatrix::zeros(d, h);
    let mut b = vec![0.0; h];
    for i in 0..d {
        w[(i, i)] = EPS;
        v[(i, i)] = 1.0 / EPS;
    }
    for j in d..h {
        for l in 0..d {
            w[(j, l)] = rng.sample::<f64, _>(StandardNormal);
        }
        b[j] = 0.5 * rng.sample::<f64, _>(StandardNormal);
        for k in 0..d {
            v[(k, j)] = sigma * sigma * rng.sample::<f64, _>(StandardNormal) / (UNITS as f64).sqrt();
        }
    }
    MlpAutoEncoder::from_parts(&w, &b, Some(&v), &vec![0.0; d]).expect("finite parameters")
}

/// `|L_DAE − L_RCAE(σ²)|/σ²` on the `r_σ` family at σ ∈ {0.1, 0.05, 0.025},
/// and the regularized-vs-denoising score gap at σ = 0.06.
pub fn loss_gap(seed: u64) -> SuiteReport {
    let mut rep = SuiteReport::new("loss_gap");
    let d = 2;
    let n = 1000;
    let p = make_gaussian_mixture(
        &[0.5, 0.5],
        &[vec![-0.5, 0.3], vec![0.6, -0.2]],
        &[DMatrix::from_row_slice(2, 2, &[0.1, 0.03, 0.03, 0.2]), DMatrix::identity(2, 2) * 0.15],
    )
    .expect("valid mixture");
    let data: Vec<f64> = p.sample_n(n, derive_seed(seed, 1)).into_iter().flatten().collect();
    let sigmas = [0.1, 0.05, 0.025];
    let gaps: Vec<f64> = sigmas
        .iter()
        .map(|&s| {
            let m = loss_gap_model(d, s, derive_seed(seed, 2));
            let tab = NoiseTable::moment_matched(100, n, d, s, derive_seed(seed, 3)).expect("even replica count");
            let l_dae = dae_loss(&m, &data, &tab).expect("shapes match");
            let l_rc = rcae_loss(&m, &data, s * s).expect("shapes match");
            (l_dae - l_rc).abs() / (s * s)
        })
        .collect();
    rep.tables.insert("gap_over_sigma2".into(), serde_json::json!(sigmas.iter().zip(&gaps).map(|(s, g)| serde_json::json!({"sigma": s, "gap": g})).collect::<Vec<_>>()));
    for k in 0..2 {
        rep.extend(vec![Check::new(
            format!("gap/σ² shrink factor σ={} → σ={}", sigmas[k], sigmas[k + 1]),
            gaps[k] / gaps[k + 1],
            Relation::Ge,
            2.0,
        )]);
    }
    let ex = make_1d_example();
    let g = example_grid(1000);
    let s = 0.06;
    let r = solve_rcae_grid(&ex, &g, s * s).expect("rcae solve");
    let dae = solve_dae_exact(&ex, &g, s, &Quadrature::default()).expect("dae solve");
    let sr = score_from_grid(&r, s * s).expect("σ > 0");
    let sd = score_from_grid(&dae.r, s * s).expect("σ > 0");
    let mask = bulk_mask(&ex, &g, BULK_FRACTION);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..g.m {
        if mask[i] {
            num += (sr.values[i] - sd.values[i]).powi(2);
            den += sd.values[i].powi(2);
        }
    }
    rep.extend(vec![Check::new("RCAE vs DAE score relative L² on the bulk, σ=0.06", (num / den).sqrt(), Relation::Lt, 0.05)]);
    rep
}

fn random_points(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.7).collect()
}

fn jittered(m: &MlpAutoEncoder, rng: &mut ChaCha8Rng) -> MlpAutoEncoder {
    let p: Vec<f64> = m.params().iter().map(|v| v + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
    m.with_params(&p)
}

fn directional_error<F: Fn(&MlpAutoEncoder) -> (f64, Vec<f64>)>(m: &MlpAutoEncoder, f: F, rng: &mut ChaCha8Rng) -> f64 {
    let p0 = m.params();
    let (_, g) = f(m);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let dir: Vec<f64> = (0..p0.len()).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let h = 1e-5;
        let at = |s: f64| {
            let p: Vec<f64> = p0.iter().zip(&dir).map(|(a, b)| a + s * b / n).collect();
            f(&m.with_params(&p)).0
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let an: f64 = g.iter().zip(&dir).map(|(a, b)| a * b / n).sum();
        worst = worst.max((fd - an).abs() / an.abs().max(1e-8));
    }
    worst
}

/// Loss gradients (10 random directions at 5 random parameter points per
/// objective) and reconstruction Jacobians (20 random model/input pairs)
/// against central differences.
pub fn gradient_checks(seed: u64) -> SuiteReport {
    let mut rep = SuiteReport::new("gradients");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut e_dae, mut e_rc) = (0.0f64, 0.0f64);
    for k in 0..5 {
        let d = 2 + k % 3;
        let tied = k % 2 == 1;
        let m = jittered(&MlpAutoEncoder::random_init(d, 7, tied, rng.random()), &mut rng);
        let data = random_points(17, d, &mut rng);
        let noise = NoiseTable::gaussian(3, 17, d, 0.2, rng.random());
        e_dae = e_dae.max(directional_error(&m, |mm| dae_loss_grad(mm, &data, &noise).expect("shapes"), &mut rng));
        e_rc = e_rc.max(directional_error(&m, |mm| rcae_loss_grad(mm, &data, 0.25).expect("shapes"), &mut rng));
    }
    let mut e_jac = 0.0f64;
    for k in 0..20 {
        let d = 1 + k % 4;
        let m = jittered(&MlpAutoEncoder::random_init(d, 9, k % 3 == 0, rng.random()), &mut rng);
        let x = random_points(1, d, &mut rng);
        let fd = central_jacobian(|y| m.reconstruct(y), &x, 1e-6);
        let an = m.jacobian(&x);
        let an_rows: Vec<f64> = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| an[(i, j)]).collect();
        e_jac = e_jac.max(crate::numerics::relative_error(&fd, &an_rows, 1e-12));
    }
    rep.extend(vec![
        Check::new("DAE loss directional gradient, max relative error", e_dae, Relation::Lt, 1e-4),
        Check::new("RCAE loss directional gradient, max relative error", e_rc, Relation::Lt, 1e-4),
        Check::new("reconstruction Jacobian, max relative Frobenius error", e_jac, Relation::Lt, 1e-5),
    ]);
    rep
}

/// `(r′ − 1)/σ²` of the optimal denoiser for N(0, 1) at σ = 0.05 against the
/// true curvature −1 on |x| ≤ 2.
pub fn hessian_1d() -> Check {
    let p = gaussian_1d(0.0, 1.0).expect("valid gaussian");
    let g = GridSpec::new(-3.0, 3.0, 601).expect("valid grid");
    let s = 0.05;
    let sol = solve_dae_exact(&p, &g, s, &Quadrature::default()).expect("dae solve");
    let dr = sol.r.derivative();
    let err = g
        .nodes()
        .iter()
        .zip(&dr.values)
        .filter(|(x, _)| x.abs() <= 2.0)
        .map(|(_, d)| ((d - 1.0) / (s * s) + 1.0).abs())
        .fold(0.0, f64::max);
    Check::new("1-D Gaussian Hessian estimate, max relative error (σ=0.05)", err, Relation::Lt, 0.05)
}

/// Share of on-manifold probes whose symmetrized Hessian estimate has
/// eigenvalue magnitude ratio `|small|/|large| < 0.2`.
pub fn hessian_spiral(model: &MlpAutoEncoder, points: &[f64], sigma2: f64, probes: usize) -> Check {
    let n = points.len() / 2;
    let stride = (n / probes.max(1)).max(1);
    let mut good = 0;
    let mut total = 0;
    for i in (0..n).step_by(stride).take(probes) {
        let h = hessian_estimate(model, &points[2 * i..2 * i + 2], sigma2);
        let e = ((&h + h.transpose()) * 0.5).symmetric_eigen().eigenvalues;
        let (a, b) = (e[0].abs().min(e[1].abs()), e[0].abs().max(e[1].abs()));
        good += (a < 0.2 * b) as usize;
        total += 1;
    }
    Check::new("spiral on-manifold probes with curvature ratio < 0.2 (fraction)", good as f64 / total as f64, Relation::Ge, 0.7)
        .with_detail(format!("{good}/{total} probes"))
}

/// Tied models are conservative; untied ones are not.
pub fn conservativeness(seed: u64) -> SuiteReport {
    let mut rep = SuiteReport::new("conservativeness");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tied = jittered(&MlpAutoEncoder::random_init(4, 12, true, rng.random()), &mut rng);
    let untied = jittered(&MlpAutoEncoder::random_init(4, 12, false, rng.random()), &mut rng);
    let (mut tmax, mut umin) = (0.0f64, f64::INFINITY);
    for _ in 0..100 {
        let x = random_points(1, 4, &mut rng);
        tmax = tmax.max(symmetry_defect(&tied, &x));
        umin = umin.min(symmetry_defect(&untied, &x));
    }
    rep.extend(vec![
        Check::new("tied model symmetry defect, max over 100 points", tmax, Relation::Le, 1e-12),
        Check::new("untied model symmetry defect, min over 100 points", umin, Relation::Gt, 0.0),
    ]);
    rep
}

/// Field magnitude on the data vs a far-field ring, and the share of
/// normal-offset probes (offset `2σ_train` on either side of the analytic
/// spiral) whose field has a positive cosine with the inward direction.
pub fn spiral_field(model: &MlpAutoEncoder, points: &[f64], sigma_train: f64, seed: u64) -> SuiteReport {
    let mut rep = SuiteReport::new("spiral_field");
    let f = score_field(model, None);
    let mags = |pts: &mut dyn Iterator<Item = Vec<f64>>| -> Vec<f64> { pts.map(|p| { let v = f.eval(&p); v[0].hypot(v[1]) }).collect() };
    let on = mags(&mut points.chunks_exact(2).map(|p| p.to_vec()));
    let rmax = points.chunks_exact(2).map(|p| p[0].hypot(p[1])).fold(0.0, f64::max);
    let ring_r = 1.5 * rmax;
    let ring = mags(&mut (0..400).map(|k| {
        let a = k as f64 * std::f64::consts::TAU / 400.0;
        vec![ring_r * a.cos(), ring_r * a.sin()]
    }));
    let (m_on, m_ring) = (median(&on), median(&ring));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t0, t1) = SPIRAL_T_RANGE;
    let n = 2000;
    let delta = 2.0 * sigma_train;
    let mut inward = 0;
    for _ in 0..n {
        let t = rng.random_range(t0..t1);
        let c = spiral_point(t);
        let nn = spiral_normal(t);
        let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let q = [c[0] + side * delta * nn[0], c[1] + side * delta * nn[1]];
        let v = f.eval(&q);
        inward += (-(v[0] * nn[0] + v[1] * nn[1]) * side > 0.0) as usize;
    }
    rep.extend(vec![
        Check::new("median ‖r−x‖ on data / median on far ring", m_on / m_ring, Relation::Lt, 0.1)
            .with_detail(format!("{m_on:.3e} vs {m_ring:.3e}, ring radius {ring_r:.3}")),
        Check::new("offset probes with positive inward cosine (fraction)", inward as f64 / n as f64, Relation::Ge, 0.8)
            .with_detail(format!("offset {delta}")),
    ]);
    rep
}

pub fn two_mode_mixture() -> AnalyticDensity {
    let v = 0.35f64 * 0.35;
    make_gaussian_mixture(&[0.3, 0.7], &[vec![-1.5], vec![1.5]], &[DMatrix::from_element(1, 1, v), DMatrix::from_element(1, 1, v)])
        .expect("valid mixture")
}

/// Exact-score MH on a two-mode mixture, plus path-integral exactness.
pub fn sampler(seed: u64) -> SuiteReport {
    let mut rep = SuiteReport::new("sampler");
    let p = two_mode_mixture();
    let starts: Vec<Vec<f64>> = (0..4).map(|k| vec![if k % 2 == 0 { -1.5 } else { 1.5 }]).collect();
    let cfg = MhConfig { sigma_mh: 2.0, n_samples: 25_000, burn_in: 1000, thinning: 20, seed: derive_seed(seed, 1), ..Default::default() };
    let xs: Vec<f64> = run_chains(&p, &starts, &cfg).into_iter().flat_map(|r| r.expect("chain runs").flat_samples()).collect();
    let left = xs.iter().filter(|&&x| x < 0.0).count() as f64 / xs.len() as f64;
    let cdf = TabulatedCdf::from_pdf(|x| p.density(&[x]), -5.0, 5.0, 40_001);
    let ks = ks_statistic(&xs, |x| cdf.eval(x));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    let q = isotropic_gaussian(vec![0.0; 3], 1.0).expect("valid gaussian");
    let mut exact_err = 0.0f64;
    for _ in 0..50 {
        let x = random_points(1, 3, &mut rng);
        let y = random_points(1, 3, &mut rng);
        let truth = 0.5 * (y.iter().map(|v| v * v).sum::<f64>() - x.iter().map(|v| v * v).sum::<f64>());
        for n in [1, 3, 32] {
            exact_err = exact_err.max((energy_diff(&q, &x, &y, &PathIntegralConfig { n_steps: n }) - truth).abs());
        }
    }
    let mlp = jittered(&MlpAutoEncoder::random_init(2, 8, false, rng.random()), &mut rng);
    let sf = score_field(&mlp, Some(0.01));
    let ex = make_1d_example();
    let mut anti = 0.0f64;
    for _ in 0..50 {
        let cfg = PathIntegralConfig { n_steps: rng.random_range(1..50) };
        let (a, b) = (random_points(1, 1, &mut rng), random_points(1, 1, &mut rng));
        anti = anti.max((energy_diff(&ex, &a, &b, &cfg) + energy_diff(&ex, &b, &a, &cfg)).abs());
        let (a, b) = (random_points(1, 2, &mut rng), random_points(1, 2, &mut rng));
        anti = anti.max((energy_diff(&sf, &a, &b, &cfg) + energy_diff(&sf, &b, &a, &cfg)).abs());
    }
    rep.extend(vec![
        Check::new("two-mode weight error |P(x<0) − 0.3|", (left - 0.3).abs(), Relation::Le, 0.05)
            .with_detail(format!("{} samples", xs.len())),
        Check::new("KS statistic vs quadrature CDF", ks, Relation::Lt, 0.01),
        Check::new("path integral on quadratic energy, max abs error", exact_err, Relation::Le, 1e-12),
        Check::new("path integral antisymmetry, max |ΔE(a,b) + ΔE(b,a)|", anti, Relation::Le, 1e-12),
    ]);
    rep
}

fn exponents(d: usize, max_sum: i64) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for _ in 0..d {
        let mut next = Vec::new();
        for v in out {
            let used: i64 = v.iter().sum();
            for k in 0..=max_sum - used {
                let mut w = v.clone();
                w.push(k);
                next.push(w);
            }
        }
        out = next;
    }
    out
}

/// Two-sided `P(|Z| > 3)` for a standard normal.
const P_BEYOND_3SE: f64 = 0.002_699_796;

fn z_score(est: f64, se: f64, exact: f64) -> f64 {
    let diff = (est - exact).abs();
    if diff <= 1e-13 * exact.abs().max(1e-300) {
        0.0
    } else {
        diff / se
    }
}

/// Closed-form ball integrals against one shared uniform-in-ball sample per
/// dimension.
pub fn ball(mc_samples: usize, seed: u64) -> SuiteReport {
    let mut rep = SuiteReport::new("ball");
    let delta = 0.8;
    let mut rows = Vec::new();
    for (k, d) in [1usize, 2, 3, 5].into_iter().enumerate() {
        let exps = exponents(d, 6);
        let b = BallSpec::new(vec![0.0; d], delta).expect("radius > 0");
        let est = mc_ball_integrals(
            |x, out| {
                for (o, a) in out.iter_mut().zip(&exps) {
                    *o = x.iter().zip(a).map(|(v, &e)| v.powi(e as i32)).product();
                }
            },
            exps.len(),
            &b,
            mc_samples,
            derive_seed(seed, 10 + k as u64),
        )
        .expect("enough samples");
        let mut worst = 0.0f64;
        let mut over = 0;
        let mut random = 0;
        for (a, e) in exps.iter().zip(&est) {
            let exact = ball_monomial_integral(a, delta, d).expect("valid exponents");
            let z = z_score(e.value, e.std_error, exact);
            over += (z > 3.0) as usize;
            // odd total degree cancels exactly under antithetic pairs
            random += (e.std_error > 0.0) as usize;
            worst = worst.max(z);
            rows.push(serde_json::json!({"d": d, "a": a, "exact": exact, "mc": e.value, "se": e.std_error}));
        }
        rep.extend(vec![Check::new(format!("d={d} monomials (exponent sum ≤ 6), max |MC − exact|/SE"), worst, Relation::Le, 3.0)
            .with_detail(format!(
                "{over} of {} beyond 3 SE; {random} are random, {:.2} expected beyond 3 SE by chance",
                exps.len(),
                random as f64 * P_BEYOND_3SE
            ))]);
    }
    rep.tables.insert("monomials".into(), serde_json::json!(rows));

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 20));
    let a = DMatrix::from_fn(3, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
    let hq = (&a + a.transpose()) * 0.5;
    let bq = BallSpec::new(vec![0.3, -0.2, 0.1], 0.7).expect("radius > 0");
    let exact = ball_quadratic_form_integral(&hq, &bq).expect("shape");
    let c = bq.center.clone();
    let est = mc_ball_integrals(
        |x, out| {
            let y: Vec<f64> = x.iter().zip(&c).map(|(a, b)| a - b).collect();
            out[0] = (0..3).map(|i| (0..3).map(|j| y[i] * hq[(i, j)] * y[j]).sum::<f64>()).sum();
        },
        1,
        &bq,
        mc_samples,
        derive_seed(seed, 21),
    )
    .expect("enough samples");
    rep.extend(vec![Check::new("random symmetric quadratic form, d=3, |MC − exact|/SE", z_score(est[0].value, est[0].std_error, exact), Relation::Le, 3.0)]);

    let v: Vec<f64> = (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let bv = BallSpec::new(vec![0.1, 0.0, -0.3, 0.2], 0.9).expect("radius > 0");
    let exact = ball_vector_integral(&v, &bv).expect("shape");
    let c = bv.center.clone();
    let est = mc_ball_integrals(
        |x, out| {
            let y: Vec<f64> = x.iter().zip(&c).map(|(a, b)| a - b).collect();
            let dot: f64 = y.iter().zip(&v).map(|(a, b)| a * b).sum();
            for k in 0..4 {
                out[k] = y[k] * dot;
            }
        },
        4,
        &bv,
        mc_samples,
        derive_seed(seed, 22),
    )
    .expect("enough samples");
    let zv = est.iter().zip(&exact).map(|(e, x)| z_score(e.value, e.std_error, *x)).fold(0.0, f64::max);
    rep.extend(vec![Check::new("random vector integral, d=4, max |MC − exact|/SE", zv, Relation::Le, 3.0)]);

    let mut scale = 0.0f64;
    for (a, d) in [(vec![2, 4], 2usize), (vec![0, 2, 2], 3), (vec![6], 1), (vec![2, 0, 0, 2, 2], 5)] {
        let one = ball_monomial_integral(&a, 1.0, d).expect("valid");
        for dl in [0.1f64, 0.37, 2.5] {
            let s: i64 = a.iter().sum();
            let expect = dl.powi(d as i32 + s as i32) * one;
            scale = scale.max((ball_monomial_integral(&a, dl, d).expect("valid") - expect).abs() / expect);
        }
    }
    rep.extend(vec![Check::new("scaling law δ^{d+Σa}, max relative deviation", scale, Relation::Le, 1e-12)]);
    rep
}

/// Remainders of the `Z_δ` and `m_δ` expansions against closed forms for
/// N(0, 1) and uniform-density local covariances.
pub fn local_mean_suite(mc_samples: usize, seed: u64) -> SuiteReport {
    let mut rep = SuiteReport::new("local_mean");
    let p = gaussian_1d(0.0, 1.0).expect("valid gaussian");
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let cdf = |x: f64| 0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2);
    let x0 = 0.5;
    let deltas = [0.4, 0.2, 0.1];
    let (mut ez, mut em) = (Vec::new(), Vec::new());
    for &dl in &deltas {
        let b = BallSpec::new(vec![x0], dl).expect("radius > 0");
        let z = cdf(x0 + dl) - cdf(x0 - dl);
        let m = (phi(x0 - dl) - phi(x0 + dl)) / z;
        ez.push((z_delta(&p, &b, Mode::Expansion).expect("dims").value - z).abs() / b.volume());
        em.push((local_mean(&p, &b, Mode::Expansion).expect("dims").mean[0] - m).abs());
    }
    rep.tables.insert("remainders".into(), serde_json::json!({"delta": deltas, "z_delta": ez, "m_delta": em}));
    rep.extend(vec![
        Check::new("Z_δ expansion remainder log-log slope", loglog_slope(&deltas, &ez), Relation::Ge, 2.5),
        Check::new("m_δ expansion remainder log-log slope", loglog_slope(&deltas, &em), Relation::Ge, 2.5),
    ]);

    let u1 = uniform_box(vec![-1.0], vec![1.0]).expect("valid box");
    let b1 = BallSpec::new(vec![0.2], 0.3).expect("radius > 0");
    let c1 = local_covariance_mc(&u1, &b1, mc_samples, derive_seed(seed, 1)).expect("enough samples");
    let z1 = z_score(c1.covariance[(0, 0)], c1.std_error[(0, 0)], 0.09 / 3.0);
    let u2 = uniform_box(vec![-1.0, -1.0], vec![1.0, 1.0]).expect("valid box");
    let b2 = BallSpec::new(vec![0.1, -0.3], 0.4).expect("radius > 0");
    let c2 = local_covariance_mc(&u2, &b2, mc_samples, derive_seed(seed, 2)).expect("enough samples");
    let mut z2 = 0.0f64;
    for i in 0..2 {
        for j in 0..2 {
            let expect = if i == j { 0.16 / 4.0 } else { 0.0 };
            z2 = z2.max(z_score(c2.covariance[(i, j)], c2.std_error[(i, j)], expect));
        }
    }
    rep.extend(vec![
        Check::new("uniform d=1 local covariance vs δ²/3, |MC − exact|/SE", z1, Relation::Le, 3.0),
        Check::new("uniform d=2 local covariance vs (δ²/4)I, max |MC − exact|/SE", z2, Relation::Le, 3.0),
    ]);
    rep
}

/// Denoising-solution score on a grid, linearly interpolated.
struct GridScore {
    score: GridFunction,
}

impl VectorField for GridScore {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        vec![self.score.interpolate(x[0])]
    }
}

/// Local-mean prediction `x + δ²/3·(r(x) − x)/σ²` from the optimal denoiser
/// at σ = 0.05 against the Monte-Carlo local mean (δ = 0.1) on bulk nodes:
/// relative L² error of the displacement `m_δ − x`.
pub fn local_mean_link(seed: u64) -> Check {
    let p = make_1d_example();
    let g = example_grid(1000);
    let s = 0.05;
    let dl = 0.1;
    let sol = solve_dae_exact(&p, &g, s, &Quadrature::default()).expect("dae solve");
    let field = GridScore { score: score_from_grid(&sol.r, s * s).expect("σ > 0") };
    let mask = bulk_mask(&p, &g, BULK_FRACTION);
    let (mut num, mut den) = (0.0, 0.0);
    let mut probes = 0;
    for (i, x) in g.nodes().into_iter().enumerate() {
        if !mask[i] || i % 10 != 0 {
            continue;
        }
        let pred = reconstruction_local_mean(&field, &[x], dl).expect("calibrated field")[0];
        let b = BallSpec::new(vec![x], dl).expect("radius > 0");
        let mc = local_mean(&p, &b, Mode::MonteCarlo { samples: 200_000, seed: derive_seed(seed, 100 + i as u64) })
            .expect("enough samples")
            .mean[0];
        num += (pred - mc).powi(2);
        den += (mc - x).powi(2);
        probes += 1;
    }
    Check::new("auto-encoder local mean vs MC (δ=0.1, σ=0.05), relative L² of displacement", (num / den).sqrt(), Relation::Le, 0.1)
        .with_detail(format!("{probes} bulk probes"))
}

/// Runs one named suite.
pub fn run_suite(name: &str, cfg: &ExperimentConfig) -> anyhow::Result<SuiteReport> {
    let seed = cfg.seed;
    let mut rep = SuiteReport::new(name);
    match name {
        "scores" => {
            rep.merge(score_convergence());
            rep.merge(dae_closed_form());
        }
        "proposition1" => rep.merge(loss_gap(derive_seed(seed, 3))),
        "hessian" => {
            rep.merge(gradient_checks(derive_seed(seed, 4)));
            rep.merge(conservativeness(derive_seed(seed, 9)));
            rep.extend(vec![hessian_1d()]);
            let h = &cfg.validate.hessian_train;
            let (ds, res) = super::commands::train_spiral(cfg.validate.hessian_points, h, derive_seed(seed, 5))?;
            rep.extend(vec![hessian_spiral(&res.model, &ds.points, h.sigma_train * h.sigma_train, 1000)]);
        }
        "ball" => rep.merge(ball(cfg.validate.mc_samples, derive_seed(seed, 6))),
        "local-mean" => {
            rep.merge(local_mean_suite(cfg.validate.mc_samples, derive_seed(seed, 7)));
            rep.extend(vec![local_mean_link(derive_seed(seed, 7))]);
        }
        "sampler" => rep.merge(sampler(derive_seed(seed, 8))),
        "all" => {
            for s in SUITES.iter().filter(|s| **s != "all") {
                rep.merge(run_suite(s, cfg)?);
            }
        }
        other => anyhow::bail!(super::UsageError(format!("unknown suite '{other}' (expected one of {})", SUITES.join(", ")))),
    }
    rep.passed = rep.checks.iter().all(|c| c.passed);
    Ok(rep)
}
