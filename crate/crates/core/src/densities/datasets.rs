use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Axis-aligned box `[lo_i, hi_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoundingBox {
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    /// Tight box around a set of points.
    pub fn of_points<'a, I: IntoIterator<Item = &'a [f64]>>(dim: usize, pts: I) -> Self {
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for p in pts {
            for i in 0..dim {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        Self { lo, hi }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: String,
    pub params: BTreeMap<String, f64>,
}

/// A reproducible sample: points stored row-major in one flat buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub dim: usize,
    pub points: Vec<f64>,
    pub seed: u64,
    pub meta: DatasetMeta,
    /// Declared generator box; every point lies inside it.
    pub bounds: BoundingBox,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    generator: &'a str,
    params: &'a BTreeMap<String, f64>,
    seed: u64,
    dim: usize,
    n: usize,
    bounds: &'a BoundingBox,
}

impl Dataset {
    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.points.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.points.chunks_exact(self.dim)
    }

    /// One point per row, `dim` columns; optional `x0,…` header.
    pub fn to_csv(&self, header: bool) -> String {
        let mut s = String::new();
        if header {
            let names: Vec<String> = (0..self.dim).map(|i| format!("x{i}")).collect();
            s.push_str(&names.join(","));
            s.push('\n');
        }
        for p in self.iter() {
            write_csv_row(&mut s, p);
        }
        s
    }

    /// JSON sidecar with generator metadata and seed.
    pub fn sidecar_json(&self) -> String {
        let sc = Sidecar {
            generator: &self.meta.generator,
            params: &self.meta.params,
            seed: self.seed,
            dim: self.dim,
            n: self.len(),
            bounds: &self.bounds,
        };
        serde_json::to_string_pretty(&sc).expect("sidecar serializes")
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str, header: bool) -> std::io::Result<()> {
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv(header))?;
        std::fs::write(dir.join(format!("{stem}.json")), self.sidecar_json())
    }

    /// CSV of the `(x_i, x_j)` projection.
    pub fn projection_csv(&self, i: usize, j: usize) -> String {
        let mut s = String::new();
        for p in self.iter() {
            write_csv_row(&mut s, &[p[i], p[j]]);
        }
        s
    }
}

pub fn write_csv_row(s: &mut String, vals: &[f64]) {
    for (k, v) in vals.iter().enumerate() {
        if k > 0 {
            s.push(',');
        }
        // Debug formatting of f64 round-trips exactly and always uses '.'
        let _ = write!(s, "{v:?}");
    }
    s.push('\n');
}

pub const SPIRAL_T_RANGE: (f64, f64) = (3.0, 12.0);
const SPIRAL_SCALE: f64 = 0.04;

/// The spiral `0.04·t·(sin t, cos t)`.
pub fn spiral_point(t: f64) -> [f64; 2] {
    [SPIRAL_SCALE * t * t.sin(), SPIRAL_SCALE * t * t.cos()]
}

/// Unit normal of the spiral at parameter `t`.
pub fn spiral_normal(t: f64) -> [f64; 2] {
    let (dx, dy) = (t.sin() + t * t.cos(), t.cos() - t * t.sin());
    let n = dx.hypot(dy);
    [dy / n, -dx / n]
}

/// Points `0.04·t·(sin t, cos t)` with `t ~ U(3, 12)`.
pub fn make_spiral_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t0, t1) = SPIRAL_T_RANGE;
    let mut points = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let t = t0 + (t1 - t0) * rng.random::<f64>();
        points.extend(spiral_point(t));
    }
    let r = SPIRAL_SCALE * t1;
    let mut params = BTreeMap::new();
    params.insert("n".into(), n as f64);
    params.insert("t_min".into(), t0);
    params.insert("t_max".into(), t1);
    params.insert("scale".into(), SPIRAL_SCALE);
    Dataset {
        dim: 2,
        points,
        seed,
        meta: DatasetMeta {
            generator: "spiral".into(),
            params,
        },
        bounds: BoundingBox {
            lo: vec![-r, -r],
            hi: vec![r, r],
        },
    }
}

/// Seed of the default embedded curve; the data seed only drives sampling.
pub const DEFAULT_CURVE_SEED: u64 = 0x5eed_c0de;
/// Largest absolute coordinate of the curve itself.
pub const CURVE_EXTENT: f64 = 1.2;
const HARMONICS: usize = 3;
const SCAN_POINTS: usize = 4096;
/// Jitter is truncated at this many standard deviations per coordinate.
const JITTER_TRUNCATION: f64 = 4.0;

/// Closed curve `c(θ) = Σ_h a_h cos(hθ) + b_h sin(hθ)`, θ ∈ [0, 2π), with
/// each coordinate rescaled so its maximum magnitude is [`CURVE_EXTENT`].
#[derive(Debug, Clone)]
pub struct EmbeddedCurve {
    dim: usize,
    /// `cos_coef[i*H + h]`, harmonic `h+1` of coordinate `i`.
    cos_coef: Vec<f64>,
    sin_coef: Vec<f64>,
    /// Dense table of curve points used for nearest-point search.
    scan: Vec<f64>,
}

impl EmbeddedCurve {
    pub fn random(dim: usize, curve_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(curve_seed);
        let mut cos_coef = vec![0.0; dim * HARMONICS];
        let mut sin_coef = vec![0.0; dim * HARMONICS];
        for i in 0..dim {
            for h in 0..HARMONICS {
                // decaying spectrum keeps the curve smooth
                let amp = 1.0 / (h + 1) as f64;
                cos_coef[i * HARMONICS + h] = amp * rng.sample::<f64, _>(StandardNormal);
                sin_coef[i * HARMONICS + h] = amp * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let mut curve = Self {
            dim,
            cos_coef,
            sin_coef,
            scan: Vec::new(),
        };
        let mut maxabs = vec![0.0f64; dim];
        for k in 0..SCAN_POINTS * 4 {
            let th = 2.0 * std::f64::consts::PI * k as f64 / (SCAN_POINTS * 4) as f64;
            for (m, v) in maxabs.iter_mut().zip(curve.eval(th)) {
                *m = m.max(v.abs());
            }
        }
        for i in 0..dim {
            // refine the sampled maximum so the bound holds between samples
            let s = CURVE_EXTENT / (maxabs[i] * (1.0 + 1e-3));
            for h in 0..HARMONICS {
                curve.cos_coef[i * HARMONICS + h] *= s;
                curve.sin_coef[i * HARMONICS + h] *= s;
            }
        }
        curve.scan = (0..SCAN_POINTS)
            .flat_map(|k| curve.eval(Self::scan_theta(k)))
            .collect();
        curve
    }

    pub fn default_for(dim: usize) -> Self {
        Self::random(dim, DEFAULT_CURVE_SEED)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn scan_theta(k: usize) -> f64 {
        2.0 * std::f64::consts::PI * k as f64 / SCAN_POINTS as f64
    }

    fn harmonics(theta: f64) -> ([f64; HARMONICS], [f64; HARMONICS]) {
        let mut c = [0.0; HARMONICS];
        let mut s = [0.0; HARMONICS];
        for h in 0..HARMONICS {
            let a = (h + 1) as f64 * theta;
            c[h] = a.cos();
            s[h] = a.sin();
        }
        (c, s)
    }

    pub fn eval(&self, theta: f64) -> Vec<f64> {
        let (c, s) = Self::harmonics(theta);
        (0..self.dim)
            .map(|i| {
                (0..HARMONICS)
                    .map(|h| self.cos_coef[i * HARMONICS + h] * c[h] + self.sin_coef[i * HARMONICS + h] * s[h])
                    .sum()
            })
            .collect()
    }

    fn dist2(&self, x: &[f64], theta: f64) -> f64 {
        self.eval(theta).iter().zip(x).map(|(c, v)| (v - c) * (v - c)).sum()
    }

    /// Euclidean distance from `x` to the curve: dense parameter scan, then
    /// golden-section refinement around every local minimum of the scan.
    pub fn distance(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim);
        let d2: Vec<f64> = self
            .scan
            .chunks_exact(self.dim)
            .map(|c| c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect();
        let n = d2.len();
        let global = d2.iter().cloned().fold(f64::INFINITY, f64::min);
        let h = 2.0 * std::f64::consts::PI / n as f64;
        let mut best = global;
        for k in 0..n {
            let prev = d2[(k + n - 1) % n];
            let next = d2[(k + 1) % n];
            // only refine basins that could beat the current best
            if d2[k] <= prev && d2[k] <= next && d2[k] <= 4.0 * global + 1e-12 {
                let th = Self::scan_theta(k);
                let v = self.golden(x, th - h, th + h);
                best = best.min(v);
            }
        }
        best.max(0.0).sqrt()
    }

    fn golden(&self, x: &[f64], mut a: f64, mut b: f64) -> f64 {
        let g = 0.5 * (5.0f64.sqrt() - 1.0);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let mut fc = self.dist2(x, c);
        let mut fd = self.dist2(x, d);
        for _ in 0..80 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = self.dist2(x, c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = self.dist2(x, d);
            }
        }
        fc.min(fd)
    }
}

/// `n` points on the default closed curve in `ℝ^d`, parameters uniform on
/// `[0, 2π)`, optionally jittered with isotropic Gaussian noise truncated at
/// four standard deviations per coordinate.
pub fn make_embedded_curve_dataset(n: usize, d: usize, seed: u64, jitter: f64) -> Dataset {
    make_curve_dataset(n, d, DEFAULT_CURVE_SEED, seed, jitter)
}

/// As [`make_embedded_curve_dataset`], on the curve drawn from `curve_seed`.
pub fn make_curve_dataset(n: usize, d: usize, curve_seed: u64, seed: u64, jitter: f64) -> Dataset {
    let curve = EmbeddedCurve::random(d, curve_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n * d);
    for _ in 0..n {
        let th = 2.0 * std::f64::consts::PI * rng.random::<f64>();
        let mut p = curve.eval(th);
        if jitter > 0.0 {
            let z = loop {
                let z: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                if z.iter().all(|v| v.abs() <= JITTER_TRUNCATION) {
                    break z;
                }
            };
            for (pi, zi) in p.iter_mut().zip(z) {
                *pi += jitter * zi;
            }
        }
        points.extend(p);
    }
    let r = CURVE_EXTENT + JITTER_TRUNCATION * jitter.max(0.0);
    let mut params = BTreeMap::new();
    params.insert("n".into(), n as f64);
    params.insert("d".into(), d as f64);
    params.insert("jitter".into(), jitter);
    params.insert("curve_seed".into(), curve_seed as f64);
    params.insert("harmonics".into(), HARMONICS as f64);
    Dataset {
        dim: d,
        points,
        seed,
        meta: DatasetMeta {
            generator: "embedded_curve".into(),
            params,
        },
        bounds: BoundingBox {
            lo: vec![-r; d],
            hi: vec![r; d],
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spiral_counts_radii_and_determinism() {
        let a = make_spiral_dataset(10_000, 7);
        assert_eq!(a.len(), 10_000);
        for p in a.iter() {
            let r = p[0].hypot(p[1]);
            assert!((0.12 - 1e-12..=0.48 + 1e-12).contains(&r), "radius {r}");
            assert!(a.bounds.contains(p));
        }
        let b = make_spiral_dataset(10_000, 7);
        assert_eq!(a.points, b.points);
        assert_eq!(make_spiral_dataset(0, 1).len(), 0);
    }

    #[test]
    fn spiral_radius_varies() {
        let a = make_spiral_dataset(2000, 1);
        let r: Vec<f64> = a.iter().map(|p| p[0].hypot(p[1])).collect();
        let lo = r.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = r.iter().cloned().fold(0.0, f64::max);
        assert!(hi - lo > 0.3);
    }

    #[test]
    fn curve_points_are_in_range_and_on_curve() {
        let ds = make_embedded_curve_dataset(500, 10, 3, 0.0);
        let curve = EmbeddedCurve::default_for(10);
        for p in ds.iter() {
            assert!(p.iter().all(|v| v.abs() <= 1.5));
            assert!(ds.bounds.contains(p));
            let dist = curve.distance(p);
            assert!(dist < 1e-8, "distance {dist}");
        }
        for i in 0..10 {
            let j = (i + 1) % 10;
            let csv = ds.projection_csv(i, j);
            assert_eq!(csv.lines().count(), 500);
        }
    }

    #[test]
    fn jittered_curve_stays_in_declared_box_and_off_curve() {
        let ds = make_embedded_curve_dataset(300, 10, 4, 0.05);
        let curve = EmbeddedCurve::default_for(10);
        let mut far = 0;
        for p in ds.iter() {
            assert!(ds.bounds.contains(p));
            assert!(p.iter().all(|v| v.abs() <= 1.5));
            if curve.distance(p) > 0.05 {
                far += 1;
            }
        }
        assert!(far > 100);
    }

    #[test]
    fn distance_of_offset_point() {
        let curve = EmbeddedCurve::default_for(3);
        let th = 1.234;
        let c = curve.eval(th);
        let eps = 1e-4;
        let tan: Vec<f64> = curve
            .eval(th + eps)
            .iter()
            .zip(curve.eval(th - eps))
            .map(|(a, b)| (a - b) / (2.0 * eps))
            .collect();
        // a unit normal: Gram–Schmidt of e0 against the tangent
        let tn: f64 = tan.iter().map(|v| v * v).sum::<f64>().sqrt();
        let t: Vec<f64> = tan.iter().map(|v| v / tn).collect();
        let mut nrm = vec![1.0, 0.0, 0.0];
        let dot = t[0];
        for i in 0..3 {
            nrm[i] -= dot * t[i];
        }
        let nn: f64 = nrm.iter().map(|v| v * v).sum::<f64>().sqrt();
        let off = 1e-3;
        let x: Vec<f64> = c.iter().zip(&nrm).map(|(a, b)| a + off * b / nn).collect();
        let d = curve.distance(&x);
        assert!((d - off).abs() < 1e-6, "distance {d}");
    }

    #[test]
    fn csv_and_sidecar() {
        let ds = make_spiral_dataset(3, 9);
        let csv = ds.to_csv(true);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("x0,x1"));
        let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row, ds.point(0));
        assert_eq!(ds.to_csv(false).lines().count(), 3);
        let v: serde_json::Value = serde_json::from_str(&ds.sidecar_json()).unwrap();
        assert_eq!(v["generator"], "spiral");
        assert_eq!(v["seed"], 9);
    }
}
