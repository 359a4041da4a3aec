use serde::{Deserialize, Serialize};

/// Rule used for Gaussian expectations `E[g(ε)]`, `ε ~ N(0, σ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Quadrature {
    /// Gauss–Hermite with the given number of nodes.
    GaussHermite { nodes: usize },
    /// Trapezoid on `[−width·σ, width·σ]` with `points` nodes.
    Trapezoid { width: f64, points: usize },
}

impl Default for Quadrature {
    fn default() -> Self {
        Self::GaussHermite { nodes: 101 }
    }
}

impl Quadrature {
    /// Offsets `ε_k` and normalized weights `w_k` (summing to one) for
    /// `N(0, σ²)`.
    pub fn gaussian_rule(&self, sigma: f64) -> (Vec<f64>, Vec<f64>) {
        match *self {
            Self::GaussHermite { nodes } => {
                let (t, w) = gauss_hermite(nodes);
                let s = std::f64::consts::SQRT_2 * sigma;
                let norm = std::f64::consts::PI.sqrt();
                (t.iter().map(|v| s * v).collect(), w.iter().map(|v| v / norm).collect())
            }
            Self::Trapezoid { width, points } => {
                let n = points.max(3);
                let h = 2.0 * width * sigma / (n - 1) as f64;
                let eps: Vec<f64> = (0..n).map(|i| -width * sigma + i as f64 * h).collect();
                let mut w: Vec<f64> = eps
                    .iter()
                    .map(|e| (-0.5 * (e / sigma) * (e / sigma)).exp())
                    .collect();
                w[0] *= 0.5;
                w[n - 1] *= 0.5;
                let total: f64 = w.iter().sum();
                for v in &mut w {
                    *v /= total;
                }
                (eps, w)
            }
        }
    }
}

/// Nodes and weights of the `n`-point Gauss–Hermite rule for `∫ e^{−t²} f(t) dt`,
/// found by Newton iteration on the orthonormal Hermite recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 3e-14 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}
