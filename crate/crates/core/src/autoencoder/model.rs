use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::fastmath::tanh_slice;
use super::AutoencoderError;

/// `r(x) = c + V·tanh(b + W x)` with `W ∈ ℝ^{h×d}`, `V ∈ ℝ^{d×h}`.
///
/// Both matrices are stored input-major so the hot loops run contiguously over
/// hidden units: `wt[l*h + j] = W[j][l]` and `v[k*h + j] = V[k][j]`. With tied
/// weights `V = Wᵀ` the two buffers coincide element for element, and only
/// `wt` is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpAutoEncoder {
    d: usize,
    h: usize,
    tied: bool,
    wt: Vec<f64>,
    b: Vec<f64>,
    v: Vec<f64>,
    c: Vec<f64>,
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    d: usize,
    h: usize,
    tied: bool,
    /// `h × d`
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
    /// `d × h`
    v: Vec<Vec<f64>>,
    c: Vec<f64>,
}

/// Per-point forward quantities reused by the Jacobian and the losses.
pub(crate) struct Forward {
    /// `tanh(b + W x)`
    pub t: Vec<f64>,
    pub r: Vec<f64>,
}

impl MlpAutoEncoder {
    /// All-zero parameters.
    pub fn zeros(d: usize, h: usize, tied: bool) -> Self {
        Self {
            d,
            h,
            tied,
            wt: vec![0.0; d * h],
            b: vec![0.0; h],
            v: if tied { Vec::new() } else { vec![0.0; d * h] },
            c: vec![0.0; d],
        }
    }

    /// Builds a model from dense row-major matrices `W (h×d)` and `V (d×h)`.
    /// With `tied`, `v` must be `None` and `V = Wᵀ`.
    pub fn from_parts(
        w: &DMatrix<f64>,
        b: &[f64],
        v: Option<&DMatrix<f64>>,
        c: &[f64],
    ) -> Result<Self, AutoencoderError> {
        let (h, d) = w.shape();
        if b.len() != h || c.len() != d {
            return Err(AutoencoderError::Shape(format!(
                "b has {} entries and c has {}, expected {h} and {d}",
                b.len(),
                c.len()
            )));
        }
        let tied = v.is_none();
        let mut m = Self::zeros(d, h, tied);
        for j in 0..h {
            for l in 0..d {
                m.wt[l * h + j] = w[(j, l)];
            }
        }
        if let Some(v) = v {
            if v.shape() != (d, h) {
                return Err(AutoencoderError::Shape(format!("V is {:?}, expected ({d}, {h})", v.shape())));
            }
            for k in 0..d {
                for j in 0..h {
                    m.v[k * h + j] = v[(k, j)];
                }
            }
        }
        m.b.copy_from_slice(b);
        m.c.copy_from_slice(c);
        m.check_finite()?;
        Ok(m)
    }

    /// Uniform `±1/√fan_in` weights, zero biases.
    pub fn random_init(d: usize, h: usize, tied: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::zeros(d, h, tied);
        let sw = 1.0 / (d as f64).sqrt();
        for v in &mut m.wt {
            *v = sw * (2.0 * rng.random::<f64>() - 1.0);
        }
        if !tied {
            let sv = 1.0 / (h as f64).sqrt();
            for v in &mut m.v {
                *v = sv * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
        m
    }

    /// Hidden units with random directions of norm `gain/extent` (extent =
    /// RMS distance of the data from its mean, or 1 for degenerate data) whose hyperplanes pass through
    /// randomly chosen training points; `c` starts at the data mean. This
    /// spreads the tanh transitions over the data instead of leaving every
    /// unit in its linear range.
    pub fn data_spread_init(data: &[f64], d: usize, h: usize, tied: bool, gain: f64, seed: u64) -> Self {
        let n = data.len() / d;
        assert!(n > 0 && data.len() == n * d, "data must hold at least one d-vector");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::zeros(d, h, tied);
        let mut mean = vec![0.0; d];
        for p in data.chunks_exact(d) {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v / n as f64;
            }
        }
        let extent = (data.chunks_exact(d).map(|p| p.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).sum::<f64>()
            / n as f64)
            .sqrt();
        // a single point (or identical points) has no spread to match
        let extent = if extent > 1e-12 { extent } else { 1.0 };
        let mut dir = vec![0.0; d];
        for j in 0..h {
            for v in &mut dir {
                *v = rng.sample::<f64, _>(StandardNormal);
            }
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            let anchor = &data[rng.random_range(0..n) * d..][..d];
            let mut b = 0.0;
            for l in 0..d {
                let w = gain / extent * dir[l] / norm;
                m.wt[l * h + j] = w;
                b -= w * anchor[l];
            }
            m.b[j] = b;
        }
        if !tied {
            let sv = 1.0 / (h as f64).sqrt();
            for v in &mut m.v {
                *v = sv * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
        m.c.copy_from_slice(&mean);
        m
    }

    /// `W = εI`, `V = I/ε`, zero biases: reproduces `x` up to `O(ε²|x|³)`.
    pub fn near_identity(d: usize, eps: f64) -> Self {
        let mut m = Self::zeros(d, d, false);
        for i in 0..d {
            m.wt[i * d + i] = eps;
            m.v[i * d + i] = 1.0 / eps;
        }
        m
    }

    /// Constant map `r(x) = c`.
    pub fn constant(d: usize, h: usize, c: &[f64]) -> Self {
        let mut m = Self::zeros(d, h, false);
        m.c.copy_from_slice(c);
        m
    }

    pub fn input_dim(&self) -> usize {
        self.d
    }

    pub fn hidden(&self) -> usize {
        self.h
    }

    pub fn tied(&self) -> bool {
        self.tied
    }

    pub fn n_params(&self) -> usize {
        let core = self.d * self.h + self.h + self.d;
        if self.tied {
            core
        } else {
            core + self.d * self.h
        }
    }

    /// `W[j][l]`.
    pub fn w(&self, j: usize, l: usize) -> f64 {
        self.wt[l * self.h + j]
    }

    /// `V[k][j]`.
    pub fn v(&self, k: usize, j: usize) -> f64 {
        self.vt()[k * self.h + j]
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    /// Decoder buffer in `v[k*h + j]` layout (the encoder buffer when tied).
    pub(crate) fn vt(&self) -> &[f64] {
        if self.tied {
            &self.wt
        } else {
            &self.v
        }
    }

    pub(crate) fn wt(&self) -> &[f64] {
        &self.wt
    }

    /// Flat parameter vector `[W, b, V, c]`, or `[W, b, c]` when tied.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.extend_from_slice(&self.wt);
        p.extend_from_slice(&self.b);
        if !self.tied {
            p.extend_from_slice(&self.v);
        }
        p.extend_from_slice(&self.c);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params(), "parameter vector has the wrong length");
        let dh = self.d * self.h;
        let mut o = 0;
        self.wt.copy_from_slice(&p[o..o + dh]);
        o += dh;
        self.b.copy_from_slice(&p[o..o + self.h]);
        o += self.h;
        if !self.tied {
            self.v.copy_from_slice(&p[o..o + dh]);
            o += dh;
        }
        self.c.copy_from_slice(&p[o..o + self.d]);
    }

    pub fn with_params(&self, p: &[f64]) -> Self {
        let mut m = self.clone();
        m.set_params(p);
        m
    }

    fn check_finite(&self) -> Result<(), AutoencoderError> {
        if self.params().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(AutoencoderError::NonFinite("model parameters".into()))
        }
    }

    pub(crate) fn forward(&self, x: &[f64]) -> Forward {
        let (d, h) = (self.d, self.h);
        let mut a = self.b.clone();
        for l in 0..d {
            let xl = x[l];
            let row = &self.wt[l * h..(l + 1) * h];
            for (aj, wj) in a.iter_mut().zip(row) {
                *aj += wj * xl;
            }
        }
        tanh_slice(&mut a);
        let vt = self.vt();
        let r = (0..d)
            .map(|k| {
                let row = &vt[k * h..(k + 1) * h];
                self.c[k] + row.iter().zip(&a).map(|(v, t)| v * t).sum::<f64>()
            })
            .collect();
        Forward { t: a, r }
    }

    pub fn reconstruct(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.d, "input has the wrong dimension");
        self.forward(x).r
    }

    /// `J = V·diag(1 − tanh²)·W`, row-major `d×d`.
    pub(crate) fn jacobian_from(&self, t: &[f64]) -> Vec<f64> {
        let (d, h) = (self.d, self.h);
        let s: Vec<f64> = t.iter().map(|v| 1.0 - v * v).collect();
        let vt = self.vt();
        let mut jac = vec![0.0; d * d];
        for k in 0..d {
            let vk = &vt[k * h..(k + 1) * h];
            let vs: Vec<f64> = vk.iter().zip(&s).map(|(a, b)| a * b).collect();
            for l in 0..d {
                let wl = &self.wt[l * h..(l + 1) * h];
                jac[k * d + l] = vs.iter().zip(wl).map(|(a, b)| a * b).sum();
            }
        }
        jac
    }

    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        assert_eq!(x.len(), self.d, "input has the wrong dimension");
        let f = self.forward(x);
        DMatrix::from_row_slice(self.d, self.d, &self.jacobian_from(&f.t))
    }

    pub fn to_json(&self) -> String {
        let (d, h) = (self.d, self.h);
        let ck = Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            d,
            h,
            tied: self.tied,
            w: (0..h).map(|j| (0..d).map(|l| self.w(j, l)).collect()).collect(),
            b: self.b.clone(),
            v: (0..d).map(|k| (0..h).map(|j| self.v(k, j)).collect()).collect(),
            c: self.c.clone(),
        };
        serde_json::to_string(&ck).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, AutoencoderError> {
        let ck: Checkpoint = serde_json::from_str(s).map_err(|e| AutoencoderError::Checkpoint(e.to_string()))?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(AutoencoderError::Checkpoint(format!(
                "unsupported format version {}",
                ck.format_version
            )));
        }
        let (d, h) = (ck.d, ck.h);
        let bad_rows = |m: &Vec<Vec<f64>>, r: usize, c: usize| m.len() != r || m.iter().any(|row| row.len() != c);
        if bad_rows(&ck.w, h, d) || bad_rows(&ck.v, d, h) {
            return Err(AutoencoderError::Checkpoint("matrix shapes do not match dims".into()));
        }
        let w = DMatrix::from_fn(h, d, |j, l| ck.w[j][l]);
        let v = DMatrix::from_fn(d, h, |k, j| ck.v[k][j]);
        if ck.tied && (0..d).any(|k| (0..h).any(|j| v[(k, j)] != w[(j, k)])) {
            return Err(AutoencoderError::Checkpoint("tied checkpoint has V ≠ Wᵀ".into()));
        }
        Self::from_parts(&w, &ck.b, if ck.tied { None } else { Some(&v) }, &ck.c)
            .map_err(|e| AutoencoderError::Checkpoint(e.to_string()))
    }
}
