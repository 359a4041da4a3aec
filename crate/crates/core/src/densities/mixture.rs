use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{BoundingBox, DensityError};

#[derive(Debug, Clone)]
struct Component {
    weight: f64,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    precision: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
    /// `ln w − ½ ln det(2πΣ)`
    log_coef: f64,
}

/// Finite mixture of full-covariance Gaussians.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<Component>,
}

const SYMMETRY_TOL: f64 = 1e-12;

impl GaussianMixture {
    pub fn new(
        weights: &[f64],
        means: &[Vec<f64>],
        covariances: &[DMatrix<f64>],
    ) -> Result<Self, DensityError> {
        if weights.is_empty() {
            return Err(DensityError::Empty);
        }
        if means.len() != weights.len() {
            return Err(DensityError::DimensionMismatch {
                expected: weights.len(),
                got: means.len(),
            });
        }
        if covariances.len() != weights.len() {
            return Err(DensityError::DimensionMismatch {
                expected: weights.len(),
                got: covariances.len(),
            });
        }
        for (index, &w) in weights.iter().enumerate() {
            if !(w.is_finite() && w >= 0.0) {
                return Err(DensityError::InvalidWeight { index, value: w });
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(DensityError::WeightsNotNormalized { sum });
        }
        let dim = means[0].len();
        let mut components = Vec::with_capacity(weights.len());
        for (k, ((&w, mu), cov)) in weights.iter().zip(means).zip(covariances).enumerate() {
            if mu.len() != dim {
                return Err(DensityError::DimensionMismatch { expected: dim, got: mu.len() });
            }
            if cov.nrows() != dim || cov.ncols() != dim {
                return Err(DensityError::NotSpd {
                    component: k,
                    reason: format!("covariance is {}x{}, expected {dim}x{dim}", cov.nrows(), cov.ncols()),
                });
            }
            let scale = cov.amax().max(f64::MIN_POSITIVE);
            for i in 0..dim {
                for j in 0..i {
                    if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL * scale {
                        return Err(DensityError::NotSpd {
                            component: k,
                            reason: "covariance is not symmetric".into(),
                        });
                    }
                }
            }
            if cov.iter().any(|v| !v.is_finite()) {
                return Err(DensityError::NotSpd {
                    component: k,
                    reason: "covariance has non-finite entries".into(),
                });
            }
            let chol: Cholesky<f64, Dyn> = Cholesky::new(cov.clone()).ok_or_else(|| DensityError::NotSpd {
                component: k,
                reason: "covariance is not positive definite".into(),
            })?;
            let l = chol.l();
            let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let precision = chol.inverse();
            let log_coef = w.ln() - 0.5 * (dim as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
            components.push(Component {
                weight: w,
                mean: DVector::from_column_slice(mu),
                cov: cov.clone(),
                precision,
                chol_lower: l,
                log_coef,
            });
        }
        Ok(Self { dim, components })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn component_means(&self) -> Vec<Vec<f64>> {
        self.components.iter().map(|c| c.mean.as_slice().to_vec()).collect()
    }

    /// Per-component log-terms `ln w_k N(x; μ_k, Σ_k)` and gradients
    /// `−P_k (x − μ_k)`.
    fn terms(&self, x: &[f64]) -> (Vec<f64>, Vec<DVector<f64>>) {
        assert_eq!(x.len(), self.dim, "point has the wrong dimension");
        let xv = DVector::from_column_slice(x);
        let mut logs = Vec::with_capacity(self.components.len());
        let mut grads = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let diff = &xv - &c.mean;
            let pd = &c.precision * &diff;
            logs.push(c.log_coef - 0.5 * diff.dot(&pd));
            grads.push(-pd);
        }
        (logs, grads)
    }

    fn responsibilities(logs: &[f64]) -> (f64, Vec<f64>) {
        let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - mx).exp()).collect();
        let s: f64 = w.iter().sum();
        let lse = mx + s.ln();
        (lse, w.into_iter().map(|v| v / s).collect())
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let (logs, _) = self.terms(x);
        Self::responsibilities(&logs).0
    }

    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        let (logs, grads) = self.terms(x);
        let (_, gamma) = Self::responsibilities(&logs);
        let mut s = DVector::zeros(self.dim);
        for (g, gk) in gamma.iter().zip(&grads) {
            s += gk * *g;
        }
        s.as_slice().to_vec()
    }

    /// Score computed as `∇p / p` directly from the unnormalized sums, without
    /// responsibilities. Used as an independent cross-check of [`Self::score`].
    pub fn score_via_density_gradient(&self, x: &[f64]) -> Vec<f64> {
        let (logs, grads) = self.terms(x);
        let mut p = 0.0;
        let mut dp = DVector::zeros(self.dim);
        for (l, g) in logs.iter().zip(&grads) {
            let e = l.exp();
            p += e;
            dp += g * e;
        }
        (dp / p).as_slice().to_vec()
    }

    pub fn hessian_log(&self, x: &[f64]) -> DMatrix<f64> {
        let (logs, grads) = self.terms(x);
        let (_, gamma) = Self::responsibilities(&logs);
        let d = self.dim;
        let mut s = DVector::zeros(d);
        let mut h = DMatrix::zeros(d, d);
        for ((g, gk), c) in gamma.iter().zip(&grads).zip(&self.components) {
            s += gk * *g;
            h += (gk * gk.transpose() - &c.precision) * *g;
        }
        h - &s * s.transpose()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = DVector::zeros(self.dim);
        for c in &self.components {
            m += &c.mean * c.weight;
        }
        m.as_slice().to_vec()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let m = DVector::from_vec(self.mean());
        let mut cov = DMatrix::zeros(self.dim, self.dim);
        for c in &self.components {
            let dm = &c.mean - &m;
            cov += (&c.cov + &dm * dm.transpose()) * c.weight;
        }
        cov
    }

    /// Box covering `±6.5` marginal standard deviations around every
    /// component mean. Each Gaussian leaves at most `d · 8e-11` of its mass
    /// outside, far below `1e-6`.
    pub fn support_box(&self) -> BoundingBox {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for c in &self.components {
            for i in 0..self.dim {
                let r = 6.5 * c.cov[(i, i)].sqrt();
                lo[i] = lo[i].min(c.mean[i] - r);
                hi[i] = hi[i].max(c.mean[i] + r);
            }
        }
        BoundingBox { lo, hi }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.components.len() - 1;
        for (k, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                pick = k;
                break;
            }
        }
        let c = &self.components[pick];
        let z = DVector::from_fn(self.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        (&c.mean + &c.chol_lower * z).as_slice().to_vec()
    }
}
