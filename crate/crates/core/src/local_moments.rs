//! Moments of a density restricted to a Euclidean ball `B_δ(x₀)`: closed-form
//! ball integrals of monomials, the small-δ expansions of the local mass
//! `Z_δ` and local mean `m_δ`, and self-normalized Monte-Carlo oracles.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::autoencoder::VectorField;
use crate::densities::AnalyticDensity;
use crate::numerics::{pairwise_sum, pairwise_sum_vecs};

/// Smallest Monte-Carlo budget accepted by the estimators.
pub const MIN_MC_SAMPLES: usize = 1000;
/// Effective sample sizes below this are flagged in reports.
pub const MIN_EFFECTIVE_SAMPLES: f64 = 100.0;
/// Antithetic pairs per independent random stream.
const PAIRS_PER_STREAM: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalMomentsError {
    #[error("ball radius must be finite and > 0, got {0}")]
    Radius(f64),
    #[error("negative exponent {0}")]
    NegativeExponent(i64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("need at least {MIN_MC_SAMPLES} Monte-Carlo samples, got {0}")]
    TooFewSamples(usize),
    #[error("score field has no noise scale")]
    Uncalibrated,
    #[error("density vanishes on every sample in the ball")]
    ZeroMass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallSpec {
    pub center: Vec<f64>,
    pub delta: f64,
}

impl BallSpec {
    pub fn new(center: Vec<f64>, delta: f64) -> Result<Self, LocalMomentsError> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(LocalMomentsError::Radius(delta));
        }
        Ok(Self { center, delta })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn volume(&self) -> f64 {
        ball_volume(self.dim(), self.delta)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() <= self.delta
    }
}

/// `π^{d/2} δ^d / Γ(1 + d/2)`.
pub fn ball_volume(d: usize, delta: f64) -> f64 {
    let df = d as f64;
    (0.5 * df * std::f64::consts::PI.ln() + df * delta.ln() - ln_gamma(1.0 + 0.5 * df)).exp()
}

/// `∫_{B_δ(0)} ∏ xⱼ^{aⱼ} dx = δ^{d+Σa} ∏Γ((aⱼ+1)/2) / Γ(1 + (d + Σa)/2)`,
/// and exactly 0 when any exponent is odd.
pub fn ball_monomial_integral(a: &[i64], delta: f64, d: usize) -> Result<f64, LocalMomentsError> {
    if a.len() != d {
        return Err(LocalMomentsError::Dimension { expected: d, got: a.len() });
    }
    if let Some(&neg) = a.iter().find(|&&v| v < 0) {
        return Err(LocalMomentsError::NegativeExponent(neg));
    }
    if !(delta.is_finite() && delta > 0.0) {
        return Err(LocalMomentsError::Radius(delta));
    }
    if a.iter().any(|v| v % 2 == 1) {
        return Ok(0.0);
    }
    let sum: i64 = a.iter().sum();
    let order = d as f64 + sum as f64;
    let log_num: f64 = a.iter().map(|&v| ln_gamma((v as f64 + 1.0) / 2.0)).sum();
    Ok((order * delta.ln() + log_num - ln_gamma(1.0 + 0.5 * order)).exp())
}

/// `δ^{d+2} π^{d/2} / (2Γ(2 + d/2))`, the common factor of the quadratic integrals.
fn quadratic_factor(d: usize, delta: f64) -> f64 {
    let df = d as f64;
    ((df + 2.0) * delta.ln() + 0.5 * df * std::f64::consts::PI.ln() - ln_gamma(2.0 + 0.5 * df)).exp() / 2.0
}

/// `∫_B (x−x₀)ᵀH(x−x₀) dx = δ^{d+2} π^{d/2}/(2Γ(2+d/2))·tr H`.
pub fn ball_quadratic_form_integral(h: &DMatrix<f64>, ball: &BallSpec) -> Result<f64, LocalMomentsError> {
    let d = ball.dim();
    if h.shape() != (d, d) {
        return Err(LocalMomentsError::Dimension { expected: d, got: h.nrows() });
    }
    Ok(quadratic_factor(d, ball.delta) * h.trace())
}

/// `∫_B (x−x₀)⟨v, x−x₀⟩ dx = δ^{d+2} π^{d/2}/(2Γ(2+d/2))·v`.
pub fn ball_vector_integral(v: &[f64], ball: &BallSpec) -> Result<Vec<f64>, LocalMomentsError> {
    let d = ball.dim();
    if v.len() != d {
        return Err(LocalMomentsError::Dimension { expected: d, got: v.len() });
    }
    let k = quadratic_factor(d, ball.delta);
    Ok(v.iter().map(|x| k * x).collect())
}

/// Uniform offset in the ball of radius `delta` around the origin: Gaussian
/// direction times radius `δ·U^{1/d}`.
pub fn sample_ball_offset<R: Rng + ?Sized>(rng: &mut R, d: usize, delta: f64) -> Vec<f64> {
    loop {
        let z: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            let r = delta * rng.random::<f64>().powf(1.0 / d as f64);
            return z.into_iter().map(|v| v * r / norm).collect();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

fn stream_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Runs `f` on antithetic pairs `(x₀ + y, x₀ − y)` drawn uniformly in the ball.
/// Pairs are split into fixed-size streams with their own seeds, so results
/// do not depend on the thread count.
fn for_pairs<T, F>(ball: &BallSpec, n: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&[f64], &[f64]) -> T + Sync,
{
    let pairs = n.div_ceil(2);
    let streams = pairs.div_ceil(PAIRS_PER_STREAM);
    let d = ball.dim();
    (0..streams)
        .into_par_iter()
        .flat_map_iter(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, k));
            let count = PAIRS_PER_STREAM.min(pairs - k * PAIRS_PER_STREAM);
            let mut out = Vec::with_capacity(count);
            let (mut xp, mut xm) = (vec![0.0; d], vec![0.0; d]);
            for _ in 0..count {
                let y = sample_ball_offset(&mut rng, d, ball.delta);
                for i in 0..d {
                    xp[i] = ball.center[i] + y[i];
                    xm[i] = ball.center[i] - y[i];
                }
                out.push(f(&xp, &xm));
            }
            out
        })
        .collect()
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = pairwise_sum(values) / n;
    let dev: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    let var = if values.len() > 1 { pairwise_sum(&dev) / (n - 1.0) } else { 0.0 };
    (m, (var / n).sqrt())
}

/// `∫_B f` by antithetic uniform-in-ball sampling (`n` evaluations).
pub fn mc_ball_integral<F>(f: F, ball: &BallSpec, n: usize, seed: u64) -> Result<McEstimate, LocalMomentsError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if n < MIN_MC_SAMPLES {
        return Err(LocalMomentsError::TooFewSamples(n));
    }
    let vals = for_pairs(ball, n, seed, |a, b| 0.5 * (f(a) + f(b)));
    let (m, se) = mean_and_se(&vals);
    let vol = ball.volume();
    Ok(McEstimate { value: vol * m, std_error: vol * se, samples: 2 * vals.len() })
}

/// Running mean and sum of squared deviations (Welford), mergeable.
#[derive(Debug, Clone, Copy)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    const EMPTY: Moments = Moments { n: 0.0, mean: 0.0, m2: 0.0 };

    fn push(&mut self, v: f64) {
        self.n += 1.0;
        let d = v - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (v - self.mean);
    }

    fn merge(a: Moments, b: Moments) -> Moments {
        if a.n == 0.0 {
            return b;
        }
        if b.n == 0.0 {
            return a;
        }
        let n = a.n + b.n;
        let d = b.mean - a.mean;
        Moments { n, mean: a.mean + d * b.n / n, m2: a.m2 + b.m2 + d * d * a.n * b.n / n }
    }
}

fn merge_pairwise(parts: &[Vec<Moments>]) -> Vec<Moments> {
    match parts.len() {
        0 => Vec::new(),
        1 => parts[0].clone(),
        n => {
            let (l, r) = parts.split_at(n / 2);
            merge_pairwise(l).into_iter().zip(merge_pairwise(r)).map(|(a, b)| Moments::merge(a, b)).collect()
        }
    }
}

/// `k` ball integrals from one shared antithetic sample; `f(x, out)` writes
/// the `k` integrand values at `x`. Memory is independent of `n`.
pub fn mc_ball_integrals<F>(f: F, k: usize, ball: &BallSpec, n: usize, seed: u64) -> Result<Vec<McEstimate>, LocalMomentsError>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    if n < MIN_MC_SAMPLES {
        return Err(LocalMomentsError::TooFewSamples(n));
    }
    let pairs = n.div_ceil(2);
    let streams = pairs.div_ceil(PAIRS_PER_STREAM);
    let d = ball.dim();
    let parts: Vec<Vec<Moments>> = (0..streams)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, s));
            let count = PAIRS_PER_STREAM.min(pairs - s * PAIRS_PER_STREAM);
            let mut acc = vec![Moments::EMPTY; k];
            let (mut xp, mut xm) = (vec![0.0; d], vec![0.0; d]);
            let (mut fp, mut fm) = (vec![0.0; k], vec![0.0; k]);
            for _ in 0..count {
                let y = sample_ball_offset(&mut rng, d, ball.delta);
                for i in 0..d {
                    xp[i] = ball.center[i] + y[i];
                    xm[i] = ball.center[i] - y[i];
                }
                f(&xp, &mut fp);
                f(&xm, &mut fm);
                for j in 0..k {
                    acc[j].push(0.5 * (fp[j] + fm[j]));
                }
            }
            acc
        })
        .collect();
    let vol = ball.volume();
    Ok(merge_pairwise(&parts)
        .into_iter()
        .map(|m| {
            let var = if m.n > 1.0 { m.m2 / (m.n - 1.0) } else { 0.0 };
            McEstimate { value: vol * m.mean, std_error: vol * (var / m.n).sqrt(), samples: 2 * m.n as usize }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Mode {
    /// Second-order small-δ expansion.
    Expansion,
    MonteCarlo { samples: usize, seed: u64 },
}

fn check_dim(p: &AnalyticDensity, ball: &BallSpec) -> Result<(), LocalMomentsError> {
    if p.dim() != ball.dim() {
        return Err(LocalMomentsError::Dimension { expected: p.dim(), got: ball.dim() });
    }
    Ok(())
}

/// Probability mass of the ball. The expansion is
/// `vol·[p(x₀) + δ² tr ∇²p(x₀) / (2(d+2))]`; its standard error is reported as 0.
pub fn z_delta(p: &AnalyticDensity, ball: &BallSpec, mode: Mode) -> Result<McEstimate, LocalMomentsError> {
    check_dim(p, ball)?;
    match mode {
        Mode::Expansion => {
            let d = ball.dim() as f64;
            let hp = p.density_hessian(&ball.center);
            let bracket = p.density(&ball.center) + ball.delta * ball.delta * hp.trace() / (2.0 * (d + 2.0));
            Ok(McEstimate { value: ball.volume() * bracket, std_error: 0.0, samples: 0 })
        }
        Mode::MonteCarlo { samples, seed } => mc_ball_integral(|x| p.density(x), ball, samples, seed),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalMean {
    pub mean: Vec<f64>,
    /// Per-coordinate standard errors (zero in expansion mode).
    pub std_error: Vec<f64>,
    /// Kish effective sample size of the importance weights (infinite in
    /// expansion mode).
    pub effective_samples: f64,
    pub low_effective_samples: bool,
}

/// `x₀ + δ²/(d+2)·∇log p(x₀)`.
pub fn asymptotic_local_mean(score_at_center: &[f64], ball: &BallSpec) -> Vec<f64> {
    let k = ball.delta * ball.delta / (ball.dim() as f64 + 2.0);
    ball.center.iter().zip(score_at_center).map(|(x, s)| x + k * s).collect()
}

/// Per antithetic pair: summed weights, weighted positions, squared weights.
struct WeightedPair {
    w: f64,
    wx: Vec<f64>,
    w2: f64,
}

fn weighted_pairs(p: &AnalyticDensity, ball: &BallSpec, n: usize, seed: u64) -> Vec<(WeightedPair, [Vec<f64>; 2], [f64; 2])> {
    for_pairs(ball, n, seed, |a, b| {
        let (wa, wb) = (p.density(a), p.density(b));
        let wx = a.iter().zip(b).map(|(x, y)| wa * x + wb * y).collect();
        (WeightedPair { w: wa + wb, wx, w2: wa * wa + wb * wb }, [a.to_vec(), b.to_vec()], [wa, wb])
    })
}

fn weighted_mean(pairs: &[(WeightedPair, [Vec<f64>; 2], [f64; 2])], d: usize) -> Result<LocalMean, LocalMomentsError> {
    let ws: Vec<f64> = pairs.iter().map(|p| p.0.w).collect();
    let total = pairwise_sum(&ws);
    if !(total > 0.0) {
        return Err(LocalMomentsError::ZeroMass);
    }
    let wxs: Vec<Vec<f64>> = pairs.iter().map(|p| p.0.wx.clone()).collect();
    let mean: Vec<f64> = pairwise_sum_vecs(&wxs).into_iter().map(|v| v / total).collect();
    // delta-method standard error of the ratio estimator, pairs as the unit
    let std_error = (0..d)
        .map(|k| {
            let r: Vec<f64> = pairs.iter().map(|p| (p.0.wx[k] - mean[k] * p.0.w).powi(2)).collect();
            pairwise_sum(&r).sqrt() / total
        })
        .collect();
    let w2: Vec<f64> = pairs.iter().map(|p| p.0.w2).collect();
    let ess = total * total / pairwise_sum(&w2);
    Ok(LocalMean { mean, std_error, effective_samples: ess, low_effective_samples: ess < MIN_EFFECTIVE_SAMPLES })
}

/// Mean of `p` restricted to the ball.
pub fn local_mean(p: &AnalyticDensity, ball: &BallSpec, mode: Mode) -> Result<LocalMean, LocalMomentsError> {
    check_dim(p, ball)?;
    let d = ball.dim();
    match mode {
        Mode::Expansion => Ok(LocalMean {
            mean: asymptotic_local_mean(&p.score(&ball.center), ball),
            std_error: vec![0.0; d],
            effective_samples: f64::INFINITY,
            low_effective_samples: false,
        }),
        Mode::MonteCarlo { samples, seed } => {
            if samples < MIN_MC_SAMPLES {
                return Err(LocalMomentsError::TooFewSamples(samples));
            }
            weighted_mean(&weighted_pairs(p, ball, samples, seed), d)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalCovariance {
    pub covariance: DMatrix<f64>,
    pub std_error: DMatrix<f64>,
    pub mean: LocalMean,
}

fn covariance_from_pairs(
    pairs: &[(WeightedPair, [Vec<f64>; 2], [f64; 2])],
    d: usize,
) -> Result<LocalCovariance, LocalMomentsError> {
    let mean = weighted_mean(pairs, d)?;
    let total = pairwise_sum(&pairs.iter().map(|p| p.0.w).collect::<Vec<_>>());
    let mut cov = DMatrix::zeros(d, d);
    let mut se = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in a..d {
            let ys: Vec<f64> = pairs
                .iter()
                .map(|(_, xs, ws)| (0..2).map(|k| ws[k] * (xs[k][a] - mean.mean[a]) * (xs[k][b] - mean.mean[b])).sum())
                .collect();
            let c = pairwise_sum(&ys) / total;
            let r: Vec<f64> = ys.iter().zip(pairs).map(|(y, p)| (y - c * p.0.w).powi(2)).collect();
            let s = pairwise_sum(&r).sqrt() / total;
            cov[(a, b)] = c;
            cov[(b, a)] = c;
            se[(a, b)] = s;
            se[(b, a)] = s;
        }
    }
    Ok(LocalCovariance { covariance: cov, std_error: se, mean })
}

/// Self-normalized Monte-Carlo estimate of the covariance of `p` restricted
/// to the ball; exactly symmetric by construction.
pub fn local_covariance_mc(
    p: &AnalyticDensity,
    ball: &BallSpec,
    samples: usize,
    seed: u64,
) -> Result<LocalCovariance, LocalMomentsError> {
    check_dim(p, ball)?;
    if samples < MIN_MC_SAMPLES {
        return Err(LocalMomentsError::TooFewSamples(samples));
    }
    covariance_from_pairs(&weighted_pairs(p, ball, samples, seed), ball.dim())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalMomentReport {
    pub ball: BallSpec,
    pub z_delta: f64,
    pub z_delta_std_error: f64,
    pub mean: Vec<f64>,
    pub mean_std_error: Vec<f64>,
    /// Row-major `d × d`.
    pub covariance: Vec<Vec<f64>>,
    pub covariance_std_error: Vec<Vec<f64>>,
    pub mc_samples_used: usize,
    pub effective_samples: f64,
    pub low_effective_samples: bool,
}

impl LocalMomentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Monte-Carlo `Z_δ`, `m_δ` and `C_δ` from one shared sample.
pub fn local_moment_report(
    p: &AnalyticDensity,
    ball: &BallSpec,
    samples: usize,
    seed: u64,
) -> Result<LocalMomentReport, LocalMomentsError> {
    check_dim(p, ball)?;
    if samples < MIN_MC_SAMPLES {
        return Err(LocalMomentsError::TooFewSamples(samples));
    }
    let pairs = weighted_pairs(p, ball, samples, seed);
    let cov = covariance_from_pairs(&pairs, ball.dim())?;
    let avg: Vec<f64> = pairs.iter().map(|p| 0.5 * p.0.w).collect();
    let (m, se) = mean_and_se(&avg);
    let vol = ball.volume();
    Ok(LocalMomentReport {
        ball: ball.clone(),
        z_delta: vol * m,
        z_delta_std_error: vol * se,
        mean: cov.mean.mean.clone(),
        mean_std_error: cov.mean.std_error.clone(),
        covariance: rows(&cov.covariance),
        covariance_std_error: rows(&cov.std_error),
        mc_samples_used: 2 * pairs.len(),
        effective_samples: cov.mean.effective_samples,
        low_effective_samples: cov.mean.low_effective_samples,
    })
}

/// Local-mean prediction `x + δ²/(d+2)·score(x)` from a calibrated score
/// estimate, e.g. `(r(x) − x)/σ²` of an auto-encoder.
pub fn reconstruction_local_mean(field: &dyn VectorField, x: &[f64], delta: f64) -> Result<Vec<f64>, LocalMomentsError> {
    if !field.calibrated() {
        return Err(LocalMomentsError::Uncalibrated);
    }
    if x.len() != field.dim() {
        return Err(LocalMomentsError::Dimension { expected: field.dim(), got: x.len() });
    }
    let ball = BallSpec::new(x.to_vec(), delta)?;
    Ok(asymptotic_local_mean(&field.eval(x), &ball))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::{score_field, MlpAutoEncoder};
    use crate::densities::{gaussian_1d, isotropic_gaussian, make_1d_example, make_gaussian_mixture, uniform_box};
    use crate::numerics::loglog_slope;
    use std::f64::consts::PI;

    fn phi(x: f64) -> f64 {
        (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
    }

    fn big_phi(x: f64) -> f64 {
        0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
    }

    fn ball(c: &[f64], delta: f64) -> BallSpec {
        BallSpec::new(c.to_vec(), delta).unwrap()
    }

    #[test]
    fn log_gamma_is_accurate_on_half_integers() {
        // arguments reached by d ≤ 12 and exponent sums ≤ 12
        let mut exact = PI.sqrt();
        for k in 0..13 {
            let x = 0.5 + k as f64;
            let want = exact.ln();
            if want != 0.0 {
                assert!((ln_gamma(x) - want).abs() < 1e-13 * want.abs(), "lnΓ({x})");
            }
            exact *= x;
        }
        let mut fact: f64 = 1.0;
        for k in 1..14 {
            if k > 2 {
                assert!((ln_gamma(k as f64) - fact.ln()).abs() < 1e-13 * fact.ln(), "lnΓ({k})");
            }
            fact *= k as f64;
        }
    }

    #[test]
    fn monomial_integrals_match_known_values() {
        assert!((ball_monomial_integral(&[0, 0], 1.0, 2).unwrap() - PI).abs() < 1e-13);
        assert_eq!(ball_monomial_integral(&[1, 0], 0.7, 2).unwrap(), 0.0);
        assert_eq!(ball_monomial_integral(&[2, 3, 0], 0.7, 3).unwrap(), 0.0);
        assert!((ball_monomial_integral(&[2, 0], 1.0, 2).unwrap() - PI / 4.0).abs() < 1e-13);
        assert!((ball_monomial_integral(&[0, 0, 0], 1.0, 3).unwrap() - 4.0 * PI / 3.0).abs() < 1e-13);
        assert!((ball_monomial_integral(&[0], 0.3, 1).unwrap() - 0.6).abs() < 1e-14);
        assert!(ball_monomial_integral(&[-2, 0], 1.0, 2).is_err());
        assert!(ball_monomial_integral(&[2], 1.0, 2).is_err());
        assert!(ball_monomial_integral(&[2], 0.0, 1).is_err());
    }

    #[test]
    fn monomial_scaling_law() {
        for (a, d) in [(vec![2, 4], 2), (vec![0, 2, 2], 3), (vec![6], 1), (vec![2, 0, 0, 2, 2], 5)] {
            let one = ball_monomial_integral(&a, 1.0, d).unwrap();
            for delta in [0.1f64, 0.37, 2.5] {
                let s: i64 = a.iter().sum();
                let expect = delta.powi(d as i32 + s as i32) * one;
                let got = ball_monomial_integral(&a, delta, d).unwrap();
                assert!((got - expect).abs() <= 1e-12 * expect.abs(), "{a:?} δ={delta}");
            }
        }
    }

    fn all_exponents(d: usize, max_sum: i64) -> Vec<Vec<i64>> {
        let mut out = vec![vec![]];
        for _ in 0..d {
            out = out
                .into_iter()
                .flat_map(|v: Vec<i64>| {
                    let used: i64 = v.iter().sum();
                    (0..=max_sum - used).map(move |k| {
                        let mut w = v.clone();
                        w.push(k);
                        w
                    })
                })
                .collect();
        }
        out
    }

    #[test]
    fn monomials_agree_with_monte_carlo() {
        for d in [1, 2, 3] {
            let b = ball(&vec![0.0; d], 0.8);
            for a in all_exponents(d, 4) {
                let exact = ball_monomial_integral(&a, b.delta, d).unwrap();
                let est = mc_ball_integral(
                    |x| x.iter().zip(&a).map(|(v, &e)| v.powi(e as i32)).product(),
                    &b,
                    200_000,
                    17,
                )
                .unwrap();
                if a.iter().sum::<i64>() % 2 == 1 {
                    // antithetic pairs cancel odd-degree monomials identically
                    assert!(est.value.abs() < 1e-12, "{a:?}");
                } else {
                    assert!((est.value - exact).abs() <= 3.0 * est.std_error + 1e-13 * exact.abs(), "{a:?}: {est:?} vs {exact}");
                }
            }
        }
    }

    #[test]
    fn shared_sample_estimates_match_single_ones() {
        let b = ball(&[0.1, -0.2], 0.5);
        let multi = mc_ball_integrals(
            |x, out| {
                out[0] = x[0] * x[0];
                out[1] = (x[0] * x[1]).exp();
            },
            2,
            &b,
            50_000,
            3,
        )
        .unwrap();
        let single = mc_ball_integral(|x| x[0] * x[0], &b, 50_000, 3).unwrap();
        assert!((multi[0].value - single.value).abs() < 1e-12 * single.value);
        assert!((multi[0].std_error - single.std_error).abs() < 1e-9 * single.std_error);
        assert_eq!(multi[1].samples, 50_000);
    }

    #[test]
    fn quadratic_and_vector_integrals() {
        let b = ball(&[0.3, -0.1], 1.0);
        assert_eq!(ball_quadratic_form_integral(&DMatrix::zeros(2, 2), &b).unwrap(), 0.0);
        let q = ball_quadratic_form_integral(&DMatrix::identity(2, 2), &b).unwrap();
        assert!((q - PI / 2.0).abs() < 1e-14);
        let v = ball_vector_integral(&[1.0, 0.0], &b).unwrap();
        assert!((v[0] - PI / 4.0).abs() < 1e-14 && v[1] == 0.0);
        assert_eq!(ball_vector_integral(&[0.0, 0.0], &b).unwrap(), vec![0.0, 0.0]);
        assert!(ball_vector_integral(&[1.0], &b).is_err());
    }

    #[test]
    fn quadratic_form_matches_monte_carlo() {
        let h = DMatrix::from_row_slice(3, 3, &[1.0, 0.4, -0.2, 0.4, -2.0, 0.7, -0.2, 0.7, 0.5]);
        let b = ball(&[0.2, 0.1, -0.4], 0.6);
        let exact = ball_quadratic_form_integral(&h, &b).unwrap();
        let c = b.center.clone();
        let est = mc_ball_integral(
            |x| {
                let y: Vec<f64> = x.iter().zip(&c).map(|(a, b)| a - b).collect();
                (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| y[i] * h[(i, j)] * y[j]).sum()
            },
            &b,
            1_000_000,
            5,
        )
        .unwrap();
        assert!((est.value - exact).abs() < 3.0 * est.std_error, "{est:?} vs {exact}");
    }

    #[test]
    fn vector_integral_matches_monte_carlo() {
        let v = [0.3, -1.2, 0.8, 0.1];
        let b = ball(&[0.0, 0.5, 0.0, -0.5], 0.9);
        let exact = ball_vector_integral(&v, &b).unwrap();
        for k in 0..4 {
            let c = b.center.clone();
            let est = mc_ball_integral(
                |x| {
                    let y: Vec<f64> = x.iter().zip(&c).map(|(a, b)| a - b).collect();
                    y[k] * y.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>()
                },
                &b,
                400_000,
                9 + k as u64,
            )
            .unwrap();
            assert!((est.value - exact[k]).abs() < 3.0 * est.std_error, "k={k}");
        }
    }

    #[test]
    fn ball_samples_are_uniform_and_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mut inner = 0;
        for _ in 0..n {
            let y = sample_ball_offset(&mut rng, 3, 2.0);
            let r = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(r <= 2.0);
            inner += (r < 1.0) as usize;
        }
        // P(r < δ/2) = 1/8
        let f = inner as f64 / n as f64;
        assert!((f - 0.125).abs() < 4.0 * (0.125f64 * 0.875 / n as f64).sqrt());
    }

    #[test]
    fn uniform_density_mass_is_exact() {
        let p = uniform_box(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
        let b = ball(&[0.3, -0.2], 0.25);
        let exact = b.volume() / 16.0;
        let e = z_delta(&p, &b, Mode::Expansion).unwrap();
        let m = z_delta(&p, &b, Mode::MonteCarlo { samples: 10_000, seed: 1 }).unwrap();
        assert!((e.value - exact).abs() < 1e-15);
        assert!((m.value - exact).abs() < 1e-3 * exact);
        assert!(z_delta(&p, &b, Mode::MonteCarlo { samples: 999, seed: 1 }).is_err());
    }

    #[test]
    fn gaussian_mass_expansion_agrees_with_monte_carlo() {
        let p = gaussian_1d(0.0, 1.0).unwrap();
        let b = ball(&[0.0], 0.1);
        let e = z_delta(&p, &b, Mode::Expansion).unwrap();
        let m = z_delta(&p, &b, Mode::MonteCarlo { samples: 1_000_000, seed: 3 }).unwrap();
        assert!((e.value - m.value).abs() < 3.0 * m.std_error, "{e:?} {m:?}");
        assert!((m.value - (big_phi(0.1) - big_phi(-0.1))).abs() < 3.0 * m.std_error);
    }

    #[test]
    fn expansion_remainders_are_higher_order() {
        let p = gaussian_1d(0.0, 1.0).unwrap();
        let x0 = 0.5;
        let deltas = [0.4, 0.2, 0.1];
        let (mut ez, mut em) = (vec![], vec![]);
        for &dl in &deltas {
            let b = ball(&[x0], dl);
            let z = big_phi(x0 + dl) - big_phi(x0 - dl);
            let m = (phi(x0 - dl) - phi(x0 + dl)) / z;
            ez.push((z_delta(&p, &b, Mode::Expansion).unwrap().value - z).abs() / b.volume());
            em.push((local_mean(&p, &b, Mode::Expansion).unwrap().mean[0] - m).abs());
        }
        assert!(loglog_slope(&deltas, &ez) >= 2.5, "{ez:?}");
        assert!(loglog_slope(&deltas, &em) >= 2.5, "{em:?}");
    }

    #[test]
    fn local_mean_at_the_gaussian_example() {
        let p = gaussian_1d(0.0, 1.0).unwrap();
        let b = ball(&[0.5], 0.2);
        let a = local_mean(&p, &b, Mode::Expansion).unwrap();
        assert!((a.mean[0] - (0.5 - 0.04 / 3.0 * 0.5)).abs() < 1e-15);
        let m = local_mean(&p, &b, Mode::MonteCarlo { samples: 100_000, seed: 8 }).unwrap();
        assert!((m.mean[0] - a.mean[0]).abs() < 3.0 * m.std_error[0], "{m:?} vs {a:?}");
        assert!(!m.low_effective_samples);
        assert!(b.contains(&m.mean));
    }

    #[test]
    fn uniform_local_moments() {
        let p1 = uniform_box(vec![-1.0], vec![1.0]).unwrap();
        let b1 = ball(&[0.2], 0.3);
        assert_eq!(local_mean(&p1, &b1, Mode::Expansion).unwrap().mean, vec![0.2]);
        let c1 = local_covariance_mc(&p1, &b1, 200_000, 2).unwrap();
        assert!((c1.covariance[(0, 0)] - 0.09 / 3.0).abs() < 3.0 * c1.std_error[(0, 0)]);

        let p2 = uniform_box(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let b2 = ball(&[0.1, -0.3], 0.4);
        let c2 = local_covariance_mc(&p2, &b2, 200_000, 4).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 0.16 / 4.0 } else { 0.0 };
                assert!((c2.covariance[(i, j)] - expect).abs() < 3.0 * c2.std_error[(i, j)] + 1e-15, "({i},{j})");
            }
        }
    }

    #[test]
    fn covariance_is_symmetric_psd_and_mean_stays_in_ball() {
        let p = make_gaussian_mixture(
            &[0.5, 0.5],
            &[vec![0.0, 0.0, 0.0], vec![0.3, 0.2, -0.1]],
            &[DMatrix::identity(3, 3) * 0.05, DMatrix::identity(3, 3) * 0.02],
        )
        .unwrap();
        for (k, dl) in [0.05, 0.2, 0.5].into_iter().enumerate() {
            let b = ball(&[0.25, 0.0, 0.1], dl);
            let c = local_covariance_mc(&p, &b, 20_000, k as u64).unwrap();
            assert_eq!(c.covariance, c.covariance.transpose());
            assert!(c.covariance.clone().symmetric_eigen().eigenvalues.iter().all(|&e| e >= -1e-10));
            assert!(b.contains(&c.mean.mean));
        }
    }

    #[test]
    fn report_serializes_with_counts() {
        let p = isotropic_gaussian(vec![0.0, 0.0], 1.0).unwrap();
        let b = ball(&[0.2, 0.1], 0.3);
        let r = local_moment_report(&p, &b, 10_000, 1).unwrap();
        assert_eq!(r.mc_samples_used, 10_000);
        let back: LocalMomentReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        let z = z_delta(&p, &b, Mode::MonteCarlo { samples: 10_000, seed: 1 }).unwrap();
        assert!((r.z_delta - z.value).abs() < 1e-15 * z.value.abs().max(1.0) * 10.0);
    }

    #[test]
    fn reconstruction_local_mean_follows_the_score() {
        let zero = MlpAutoEncoder::zeros(2, 3, false);
        // r = 0 for x = 0 gives a zero score there
        assert_eq!(reconstruction_local_mean(&score_field(&zero, Some(0.01)), &[0.0, 0.0], 0.1).unwrap(), vec![0.0, 0.0]);
        assert!(reconstruction_local_mean(&score_field(&zero, None), &[0.0, 0.0], 0.1).is_err());
        let g = gaussian_1d(0.2, 0.3).unwrap();
        let b = ball(&[0.7], 0.1);
        assert_eq!(
            reconstruction_local_mean(&g, &[0.7], 0.1).unwrap(),
            local_mean(&g, &b, Mode::Expansion).unwrap().mean
        );
        let p = make_1d_example();
        assert!(local_mean(&p, &ball(&[0.0, 0.0], 0.1), Mode::Expansion).is_err());
    }
}
