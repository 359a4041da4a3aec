use nalgebra::DMatrix;

use super::MlpAutoEncoder;
use crate::densities::AnalyticDensity;

/// Anything that maps `ℝ^d → ℝ^d`; the sampler and diagnostics consume
/// score estimates through this trait.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Vec<f64>;
    /// Whether `eval` is on the scale of `∂log p/∂x` (not just its direction).
    fn calibrated(&self) -> bool {
        true
    }
}

impl VectorField for AnalyticDensity {
    fn dim(&self) -> usize {
        AnalyticDensity::dim(self)
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.score(x)
    }
}

/// `(r(x) − x)/σ²`, or the unscaled `r(x) − x` when σ² is unknown.
#[derive(Debug, Clone)]
pub struct ScoreField<'a> {
    pub model: &'a MlpAutoEncoder,
    pub sigma2: Option<f64>,
}

pub fn score_field(model: &MlpAutoEncoder, sigma2: Option<f64>) -> ScoreField<'_> {
    ScoreField { model, sigma2 }
}

impl VectorField for ScoreField<'_> {
    fn dim(&self) -> usize {
        self.model.input_dim()
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let r = self.model.reconstruct(x);
        let scale = self.sigma2.map_or(1.0, |s| 1.0 / s);
        r.iter().zip(x).map(|(a, b)| (a - b) * scale).collect()
    }

    fn calibrated(&self) -> bool {
        self.sigma2.is_some()
    }
}

/// `(∂r/∂x − I)/σ²`, an estimate of the Hessian of `log p`.
pub fn hessian_estimate(model: &MlpAutoEncoder, x: &[f64], sigma2: f64) -> DMatrix<f64> {
    assert!(sigma2 > 0.0, "sigma2 must be positive");
    let d = model.input_dim();
    (model.jacobian(x) - DMatrix::identity(d, d)) / sigma2
}

/// `max_{i<j} |J_ij − J_ji|`: zero for a conservative (gradient) field.
pub fn symmetry_defect(model: &MlpAutoEncoder, x: &[f64]) -> f64 {
    let j = model.jacobian(x);
    let d = model.input_dim();
    let mut m = 0.0f64;
    for a in 0..d {
        for b in a + 1..d {
            m = m.max((j[(a, b)] - j[(b, a)]).abs());
        }
    }
    m
}

/// CSV with columns `x0..x{d−1}, v0..v{d−1}` at the given probes.
pub fn field_csv(field: &dyn VectorField, probes: &[Vec<f64>]) -> String {
    let d = field.dim();
    let mut s = String::new();
    let names: Vec<String> = (0..d).map(|i| format!("x{i}")).chain((0..d).map(|i| format!("v{i}"))).collect();
    s.push_str(&names.join(","));
    s.push('\n');
    for p in probes {
        let mut row = p.clone();
        row.extend(field.eval(p));
        crate::densities::write_csv_row(&mut s, &row);
    }
    s
}

/// `n × n` probe grid over the box `[lo, hi]²`.
pub fn probe_grid_2d(lo: [f64; 2], hi: [f64; 2], n: usize) -> Vec<Vec<f64>> {
    let step = |i: usize, a: f64, b: f64| if n == 1 { 0.5 * (a + b) } else { a + (b - a) * i as f64 / (n - 1) as f64 };
    let mut pts = Vec::with_capacity(n * n);
    for iy in 0..n {
        for ix in 0..n {
            pts.push(vec![step(ix, lo[0], hi[0]), step(iy, lo[1], hi[1])]);
        }
    }
    pts
}
