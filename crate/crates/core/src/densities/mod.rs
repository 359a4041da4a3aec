//! Analytic test densities with exact scores and Hessians of the log-density,
//! plus the dataset generators used by the experiments.
//!
//! Everything else in the crate is validated against these objects: they
//! know `log p`, `∂ log p/∂x` and `∂² log p/∂x²` in closed form and can draw
//! exact samples.

mod datasets;
mod mixture;

pub use datasets::{
    make_curve_dataset, make_embedded_curve_dataset, make_spiral_dataset, spiral_normal, spiral_point, write_csv_row, BoundingBox, Dataset, DatasetMeta,
    EmbeddedCurve, CURVE_EXTENT, DEFAULT_CURVE_SEED, SPIRAL_T_RANGE,
};
pub use mixture::GaussianMixture;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DensityError {
    #[error("mixture needs at least one component")]
    Empty,
    #[error("mixture weights sum to {sum}, expected 1 within 1e-12")]
    WeightsNotNormalized { sum: f64 },
    #[error("mixture weight {index} is negative or not finite: {value}")]
    InvalidWeight { index: usize, value: f64 },
    #[error("component {component}: {reason}")]
    NotSpd { component: usize, reason: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid box: lower bound {lo} is not below upper bound {hi} on axis {axis}")]
    InvalidBox { axis: usize, lo: f64, hi: f64 },
}

/// Uniform density on an axis-aligned box. Score and Hessian vanish in the
/// interior; the log-density is −∞ outside.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
    log_volume: f64,
}

impl UniformBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, DensityError> {
        if lo.len() != hi.len() {
            return Err(DensityError::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        for (axis, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if !(l < h) {
                return Err(DensityError::InvalidBox { axis, lo: l, hi: h });
            }
        }
        let log_volume = lo.iter().zip(&hi).map(|(l, h)| (h - l).ln()).sum();
        Ok(Self { lo, hi, log_volume })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lo, &self.hi)
    }
}

/// A known test density: the ground-truth oracle for every estimator.
#[derive(Debug, Clone)]
pub enum AnalyticDensity {
    Mixture(GaussianMixture),
    Uniform(UniformBox),
}

impl AnalyticDensity {
    pub fn dim(&self) -> usize {
        match self {
            Self::Mixture(m) => m.dim(),
            Self::Uniform(u) => u.lo.len(),
        }
    }

    /// Normalized log-density.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        match self {
            Self::Mixture(m) => m.log_density(x),
            Self::Uniform(u) => {
                if u.contains(x) {
                    -u.log_volume
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }

    /// `∂ log p / ∂x`.
    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Mixture(m) => m.score(x),
            Self::Uniform(u) => vec![0.0; u.lo.len()],
        }
    }

    /// `∂² log p / ∂x²`.
    pub fn hessian_log(&self, x: &[f64]) -> DMatrix<f64> {
        match self {
            Self::Mixture(m) => m.hessian_log(x),
            Self::Uniform(u) => DMatrix::zeros(u.lo.len(), u.lo.len()),
        }
    }

    /// Hessian of `p` itself: `p · (H_log + s sᵀ)`.
    pub fn density_hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let p = self.density(x);
        let s = DVector::from_vec(self.score(x));
        (self.hessian_log(x) + &s * s.transpose()) * p
    }

    /// Axis-aligned box holding at least `1 − 1e-6` of the mass.
    pub fn support_box(&self) -> BoundingBox {
        match self {
            Self::Mixture(m) => m.support_box(),
            Self::Uniform(u) => BoundingBox {
                lo: u.lo.clone(),
                hi: u.hi.clone(),
            },
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            Self::Mixture(m) => m.mean(),
            Self::Uniform(u) => u.lo.iter().zip(&u.hi).map(|(l, h)| 0.5 * (l + h)).collect(),
        }
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        match self {
            Self::Mixture(m) => m.covariance(),
            Self::Uniform(u) => {
                let d: Vec<f64> = u.lo.iter().zip(&u.hi).map(|(l, h)| (h - l).powi(2) / 12.0).collect();
                DMatrix::from_diagonal(&DVector::from_vec(d))
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Self::Mixture(m) => m.sample(rng),
            Self::Uniform(u) => u
                .lo
                .iter()
                .zip(&u.hi)
                .map(|(l, h)| l + (h - l) * rng.random::<f64>())
                .collect(),
        }
    }

    /// `n` i.i.d. draws from a ChaCha8 stream seeded with `seed`.
    pub fn sample_n(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sample(&mut rng)).collect()
    }
}

/// Builds a Gaussian mixture after validating weights and covariances.
pub fn make_gaussian_mixture(
    weights: &[f64],
    means: &[Vec<f64>],
    covariances: &[DMatrix<f64>],
) -> Result<AnalyticDensity, DensityError> {
    GaussianMixture::new(weights, means, covariances).map(AnalyticDensity::Mixture)
}

/// One-dimensional Gaussian `N(mean, var)`.
pub fn gaussian_1d(mean: f64, var: f64) -> Result<AnalyticDensity, DensityError> {
    make_gaussian_mixture(&[1.0], &[vec![mean]], &[DMatrix::from_element(1, 1, var)])
}

/// Isotropic Gaussian `N(mean, var·I)`.
pub fn isotropic_gaussian(mean: Vec<f64>, var: f64) -> Result<AnalyticDensity, DensityError> {
    let d = mean.len();
    make_gaussian_mixture(&[1.0], &[mean], &[DMatrix::identity(d, d) * var])
}

pub fn uniform_box(lo: Vec<f64>, hi: Vec<f64>) -> Result<AnalyticDensity, DensityError> {
    UniformBox::new(lo, hi).map(AnalyticDensity::Uniform)
}

/// Interval on which the 1-D solvers run for the example density.
pub const EXAMPLE_1D_DOMAIN: (f64, f64) = (-1.5, 1.5);

/// The one-dimensional example: a bimodal three-component mixture whose bulk
/// lives inside [−1.5, 1.5].
pub fn make_1d_example() -> AnalyticDensity {
    let weights = [0.3, 0.25, 0.45];
    let means = [-0.55, -0.1, 0.5];
    let stds: [f64; 3] = [0.25, 0.28, 0.25];
    let covs: Vec<DMatrix<f64>> = stds.iter().map(|s| DMatrix::from_element(1, 1, s * s)).collect();
    let means: Vec<Vec<f64>> = means.iter().map(|m| vec![*m]).collect();
    make_gaussian_mixture(&weights, &means, &covs).expect("example mixture is valid")
}

/// Local maxima of a 1-D density on `[lo, hi]`, located as the `+ → −` sign
/// changes of the score and refined by bisection.
pub fn local_modes_1d(p: &AnalyticDensity, lo: f64, hi: f64) -> Vec<f64> {
    assert_eq!(p.dim(), 1, "local_modes_1d needs a one-dimensional density");
    let n = 10_000;
    let h = (hi - lo) / n as f64;
    let s = |x: f64| p.score(&[x])[0];
    let mut modes = Vec::new();
    let mut prev = s(lo);
    for i in 1..=n {
        let x = lo + i as f64 * h;
        let cur = s(x);
        if prev > 0.0 && cur <= 0.0 {
            let (mut a, mut b) = (x - h, x);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if s(m) > 0.0 {
                    a = m;
                } else {
                    b = m;
                }
                if b - a < 1e-15 {
                    break;
                }
            }
            modes.push(0.5 * (a + b));
        }
        prev = cur;
    }
    modes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{central_gradient, central_jacobian};
    use rand::Rng;

    fn two_bumps() -> AnalyticDensity {
        make_gaussian_mixture(
            &[0.5, 0.5],
            &[vec![-1.0], vec![1.0]],
            &[DMatrix::from_element(1, 1, 0.25), DMatrix::from_element(1, 1, 0.25)],
        )
        .unwrap()
    }

    fn random_2d_mixture() -> AnalyticDensity {
        let c1 = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, 0.3]);
        let c2 = DMatrix::from_row_slice(2, 2, &[0.2, -0.05, -0.05, 0.4]);
        make_gaussian_mixture(&[0.4, 0.6], &[vec![-0.5, 0.3], vec![0.7, -0.2]], &[c1, c2]).unwrap()
    }

    #[test]
    fn standard_normal_score() {
        let p = gaussian_1d(0.0, 1.0).unwrap();
        assert_eq!(p.score(&[0.0])[0], 0.0);
        assert!((p.score(&[1.3])[0] + 1.3).abs() < 1e-15);
    }

    #[test]
    fn symmetric_mixture_score_at_center() {
        let p = two_bumps();
        assert!(p.score(&[0.0])[0].abs() < 1e-15);
    }

    #[test]
    fn mixture_score_matches_finite_difference_at_half() {
        let p = two_bumps();
        let h = 1e-5;
        let fd = central_gradient(|x| p.log_density(x), &[0.5], h)[0];
        let s = p.score(&[0.5])[0];
        assert!(((fd - s) / s).abs() < 1e-5, "fd {fd} analytic {s}");
    }

    #[test]
    fn rejects_bad_weights_and_covariances() {
        let c = DMatrix::from_element(1, 1, 1.0);
        let err = make_gaussian_mixture(&[0.5, 0.6], &[vec![0.0], vec![1.0]], &[c.clone(), c.clone()]);
        assert!(matches!(err, Err(DensityError::WeightsNotNormalized { .. })));
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = make_gaussian_mixture(&[1.0], &[vec![0.0, 0.0]], &[bad]);
        assert!(matches!(err, Err(DensityError::NotSpd { .. })));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let err = make_gaussian_mixture(&[1.0], &[vec![0.0, 0.0]], &[asym]);
        assert!(matches!(err, Err(DensityError::NotSpd { .. })));
    }

    #[test]
    fn score_and_hessian_match_finite_differences_on_random_points() {
        let dens = [random_2d_mixture(), make_1d_example(), two_bumps()];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for p in &dens {
            let d = p.dim();
            let bx = p.support_box();
            for _ in 0..100 {
                // probe inside the bulk, where log p is well conditioned
                let x: Vec<f64> = (0..d)
                    .map(|i| {
                        let c = 0.5 * (bx.lo[i] + bx.hi[i]);
                        let w = 0.25 * (bx.hi[i] - bx.lo[i]);
                        c + w * (2.0 * rng.random::<f64>() - 1.0)
                    })
                    .collect();
                let scale = 1.0;
                let h = 1e-5 * scale;
                let s = p.score(&x);
                let fd = central_gradient(|y| p.log_density(y), &x, h);
                let err = crate::numerics::relative_error(&fd, &s, 1.0);
                assert!(err < 1e-5, "score fd error {err} at {x:?}");

                let hess = p.hessian_log(&x);
                for i in 0..d {
                    for j in 0..d {
                        assert!((hess[(i, j)] - hess[(j, i)]).abs() < 1e-10);
                    }
                }
                let jac = central_jacobian(|y| p.score(y), &x, h);
                let an: Vec<f64> = (0..d * d).map(|k| hess[(k / d, k % d)]).collect();
                let err = crate::numerics::relative_error(&jac, &an, 1.0);
                assert!(err < 1e-4, "hessian fd error {err} at {x:?}");
            }
        }
    }

    #[test]
    fn score_via_density_gradient_agrees() {
        let p = random_2d_mixture();
        let AnalyticDensity::Mixture(m) = &p else { unreachable!() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x = vec![rng.random::<f64>() * 3.0 - 1.5, rng.random::<f64>() * 3.0 - 1.5];
            let a = m.score(&x);
            let b = m.score_via_density_gradient(&x);
            assert!(crate::numerics::relative_error(&a, &b, 1e-300) < 1e-10);
        }
    }

    #[test]
    fn sample_moments_match_analytic() {
        let p = random_2d_mixture();
        let n = 100_000;
        let xs = p.sample_n(n, 3);
        let mean = p.mean();
        let cov = p.covariance();
        for i in 0..2 {
            let col: Vec<f64> = xs.iter().map(|x| x[i]).collect();
            let m = crate::numerics::mean(&col);
            let se = (cov[(i, i)] / n as f64).sqrt();
            assert!((m - mean[i]).abs() < 5.0 * se, "axis {i}: {m} vs {}", mean[i]);
            let v = crate::numerics::variance(&col);
            // var of the sample variance ≈ (μ4 − σ⁴)/n; bound μ4 by 3σ⁴ + slack
            let se_v = (3.0f64.sqrt() * cov[(i, i)]) * (2.0 / n as f64).sqrt();
            assert!((v - cov[(i, i)]).abs() < 5.0 * se_v, "axis {i}: var {v} vs {}", cov[(i, i)]);
        }
    }

    #[test]
    fn example_1d_is_normalized_on_its_domain_and_modes_are_stationary() {
        let p = make_1d_example();
        let (lo, hi) = EXAMPLE_1D_DOMAIN;
        assert_eq!((lo, hi), (-1.5, 1.5));
        let m = 10_000;
        let dx = (hi - lo) / (m - 1) as f64;
        let vals: Vec<f64> = (0..m).map(|i| p.density(&[lo + i as f64 * dx])).collect();
        let integral = dx * (vals.iter().sum::<f64>() - 0.5 * (vals[0] + vals[m - 1]));
        assert!((integral - 1.0).abs() < 1e-4, "integral {integral}");
        let modes = local_modes_1d(&p, lo, hi);
        assert!(modes.len() >= 2, "expected a multimodal density, modes {modes:?}");
        for x in modes {
            assert!(p.score(&[x])[0].abs() < 1e-6);
        }
    }

    #[test]
    fn support_box_holds_the_mass() {
        let p = make_1d_example();
        let bx = p.support_box();
        let (lo, hi) = (bx.lo[0], bx.hi[0]);
        let m = 200_001;
        let dx = (hi - lo) / (m - 1) as f64;
        let vals: Vec<f64> = (0..m).map(|i| p.density(&[lo + i as f64 * dx])).collect();
        let integral = dx * (vals.iter().sum::<f64>() - 0.5 * (vals[0] + vals[m - 1]));
        assert!(integral > 1.0 - 1e-6);
    }

    #[test]
    fn uniform_box_is_flat() {
        let u = uniform_box(vec![-1.0, -2.0], vec![1.0, 2.0]).unwrap();
        assert!((u.density(&[0.3, 0.1]) - 1.0 / 8.0).abs() < 1e-15);
        assert_eq!(u.density(&[3.0, 0.0]), 0.0);
        assert_eq!(u.score(&[0.1, 0.1]), vec![0.0, 0.0]);
        assert!(uniform_box(vec![1.0], vec![0.0]).is_err());
    }
}
