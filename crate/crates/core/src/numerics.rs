//! Small numerical helpers shared across modules: deterministic reductions,
//! finite differences, regression slopes and empirical distribution tests.

/// Pairwise (tree) summation. The reduction order depends only on the slice
/// length, so results are reproducible regardless of how the terms were
/// produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Elementwise pairwise reduction of equally sized vectors.
pub fn pairwise_sum_vecs(parts: &[Vec<f64>]) -> Vec<f64> {
    match parts.len() {
        0 => Vec::new(),
        1 => parts[0].clone(),
        n => {
            let (l, r) = parts.split_at(n / 2);
            let mut a = pairwise_sum_vecs(l);
            let b = pairwise_sum_vecs(r);
            for (x, y) in a.iter_mut().zip(&b) {
                *x += y;
            }
            a
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&sq) / (n - 1) as f64
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares slope of `log(err)` against `log(h)`.
pub fn loglog_slope(h: &[f64], err: &[f64]) -> f64 {
    assert_eq!(h.len(), err.len());
    let lx: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    let mx = mean(&lx);
    let my = mean(&ly);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in lx.iter().zip(&ly) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}

/// Central-difference gradient of a scalar function. `step` is the absolute
/// perturbation applied to each coordinate.
pub fn central_gradient<F>(f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + step;
            let fp = f(&xp);
            xp[i] = x[i] - step;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * step)
        })
        .collect()
}

/// Central-difference Jacobian of a vector function, returned row-major
/// (`jac[i * n + j] = ∂f_i/∂x_j`).
pub fn central_jacobian<F>(f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = x.len();
    let mut xp = x.to_vec();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        xp[j] = x[j] + step;
        let fp = f(&xp);
        xp[j] = x[j] - step;
        let fm = f(&xp);
        xp[j] = x[j];
        cols.push(
            fp.iter()
                .zip(&fm)
                .map(|(a, b)| (a - b) / (2.0 * step))
                .collect::<Vec<_>>(),
        );
    }
    let m = cols.first().map_or(0, |c| c.len());
    let mut jac = vec![0.0; m * n];
    for (j, col) in cols.iter().enumerate() {
        for i in 0..m {
            jac[i * n + j] = col[i];
        }
    }
    jac
}

/// Relative error `‖a − b‖ / max(‖b‖, floor)` in the Euclidean norm.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    num.sqrt() / den.sqrt().max(floor)
}

/// Cumulative trapezoid integral on a uniform grid, starting at zero.
pub fn cumulative_trapezoid(values: &[f64], dx: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        acc += 0.5 * dx * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

/// Two-sided Kolmogorov–Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let lo = f - i as f64 / n;
            let hi = (i + 1) as f64 / n - f;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

/// Piecewise-linear tabulated CDF on a uniform grid, clamped to [0, 1].
#[derive(Debug, Clone)]
pub struct TabulatedCdf {
    lo: f64,
    dx: f64,
    values: Vec<f64>,
}

impl TabulatedCdf {
    /// Integrates `pdf` over `[lo, hi]` with `m` trapezoid nodes and
    /// normalizes the result to end at one.
    pub fn from_pdf<F: Fn(f64) -> f64>(pdf: F, lo: f64, hi: f64, m: usize) -> Self {
        let dx = (hi - lo) / (m - 1) as f64;
        let dens: Vec<f64> = (0..m).map(|i| pdf(lo + i as f64 * dx)).collect();
        let mut values = cumulative_trapezoid(&dens, dx);
        let total = *values.last().unwrap();
        for v in &mut values {
            *v /= total;
        }
        Self { lo, dx, values }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let u = (x - self.lo) / self.dx;
        if u <= 0.0 {
            return 0.0;
        }
        let i = u.floor() as usize;
        if i + 1 >= self.values.len() {
            return 1.0;
        }
        let t = u - i as f64;
        self.values[i] * (1.0 - t) + self.values[i + 1] * t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
    }

    #[test]
    fn slope_of_power_law() {
        let h = [0.4, 0.2, 0.1, 0.05];
        let e: Vec<f64> = h.iter().map(|v: &f64| 3.0 * v.powi(2)).collect();
        assert!((loglog_slope(&h, &e) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ks_of_uniform_grid_is_small() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
        assert!(d <= 0.5e-3 + 1e-12);
    }

    #[test]
    fn tabulated_cdf_of_uniform() {
        let cdf = TabulatedCdf::from_pdf(|_| 1.0, 0.0, 2.0, 201);
        assert!((cdf.eval(0.5) - 0.25).abs() < 1e-12);
        assert_eq!(cdf.eval(-1.0), 0.0);
        assert_eq!(cdf.eval(3.0), 1.0);
    }
}
