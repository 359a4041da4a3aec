//! Denoising and regularized-reconstruction objectives with analytic
//! gradients. Evaluation is split into fixed-size chunks that run in parallel
//! and are combined by pairwise summation, so results do not depend on the
//! thread count.

use nalgebra::{Cholesky, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::fastmath::tanh_slice;
use super::{AutoencoderError, MlpAutoEncoder};
use crate::numerics::{pairwise_sum, pairwise_sum_vecs};

const CHUNK: usize = 128;

/// Corruption noise drawn once: `eps[(rep*n + i)*d + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTable {
    pub replicas: usize,
    pub n: usize,
    pub d: usize,
    pub eps: Vec<f64>,
}

impl NoiseTable {
    pub fn zeros(replicas: usize, n: usize, d: usize) -> Self {
        Self { replicas, n, d, eps: vec![0.0; replicas * n * d] }
    }

    /// I.i.d. `N(0, σ² I)` draws.
    pub fn gaussian(replicas: usize, n: usize, d: usize, sigma: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = (0..replicas * n * d)
            .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self { replicas, n, d, eps }
    }

    /// Per point, the replicas come in antithetic pairs `±z` and are then
    /// whitened so that their empirical mean is exactly 0 and their empirical
    /// second moment exactly `σ² I`. Removes the first- and second-order Monte
    /// Carlo noise from averages over replicas. Needs an even replica count of
    /// at least `2d`.
    pub fn moment_matched(replicas: usize, n: usize, d: usize, sigma: f64, seed: u64) -> Result<Self, AutoencoderError> {
        if replicas % 2 != 0 || replicas < 2 * d {
            return Err(AutoencoderError::Shape(format!(
                "moment matching needs an even replica count ≥ 2d = {}, got {replicas}",
                2 * d
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut eps = vec![0.0; replicas * n * d];
        let half = replicas / 2;
        for i in 0..n {
            let z = DMatrix::from_fn(d, half, |_, _| rng.sample::<f64, _>(StandardNormal));
            // second moment of {±z}: (1/R)·Σ 2 z zᵀ = z zᵀ / half
            let s = (&z * z.transpose()) / half as f64;
            let chol = Cholesky::new(s).ok_or_else(|| AutoencoderError::Shape("degenerate noise draw".into()))?;
            let white = chol
                .l()
                .solve_lower_triangular(&z)
                .expect("Cholesky factor is invertible");
            for r in 0..half {
                for k in 0..d {
                    let v = sigma * white[(k, r)];
                    eps[((2 * r) * n + i) * d + k] = v;
                    eps[((2 * r + 1) * n + i) * d + k] = -v;
                }
            }
        }
        Ok(Self { replicas, n, d, eps })
    }

    fn get(&self, rep: usize, i: usize) -> &[f64] {
        let o = (rep * self.n + i) * self.d;
        &self.eps[o..o + self.d]
    }
}

fn check_data(model: &MlpAutoEncoder, data: &[f64]) -> Result<usize, AutoencoderError> {
    let d = model.input_dim();
    if data.len() % d != 0 {
        return Err(AutoencoderError::Shape(format!(
            "data buffer of length {} is not a multiple of d = {d}",
            data.len()
        )));
    }
    let n = data.len() / d;
    if n == 0 {
        return Err(AutoencoderError::EmptyData);
    }
    Ok(n)
}

/// Scratch buffers for one chunk.
struct Work {
    a: Vec<f64>,
    ga: Vec<f64>,
    r: Vec<f64>,
    xin: Vec<f64>,
}

impl Work {
    fn new(d: usize, h: usize) -> Self {
        Self { a: vec![0.0; h], ga: vec![0.0; h], r: vec![0.0; d], xin: vec![0.0; d] }
    }
}

/// Offsets of the blocks inside a gradient buffer.
struct Layout {
    w: usize,
    b: usize,
    v: usize,
    c: usize,
}

fn layout(m: &MlpAutoEncoder) -> Layout {
    let dh = m.input_dim() * m.hidden();
    let h = m.hidden();
    // tied: decoder gradients are added straight into the W block
    if m.tied() {
        Layout { w: 0, b: dh, v: 0, c: dh + h }
    } else {
        Layout { w: 0, b: dh, v: dh + h, c: 2 * dh + h }
    }
}

/// Forward pass for input `xin` into `work.a` (activations) and `work.r`.
fn forward(m: &MlpAutoEncoder, w: &mut Work) {
    let (d, h) = (m.input_dim(), m.hidden());
    let wt = m.wt();
    w.a.copy_from_slice(m.b());
    for l in 0..d {
        let xl = w.xin[l];
        for (aj, wj) in w.a.iter_mut().zip(&wt[l * h..(l + 1) * h]) {
            *aj += wj * xl;
        }
    }
    tanh_slice(&mut w.a);
    let vt = m.vt();
    for k in 0..d {
        w.r[k] = m.c()[k] + vt[k * h..(k + 1) * h].iter().zip(&w.a).map(|(v, t)| v * t).sum::<f64>();
    }
}

/// Accumulates the reconstruction part for residual `gr = ∂ℓ/∂r` into `g`,
/// leaving `∂ℓ/∂a` from the decoder path in `work.ga`.
fn backward_recon(m: &MlpAutoEncoder, w: &mut Work, gr: &[f64], g: &mut [f64], lay: &Layout) {
    let (d, h) = (m.input_dim(), m.hidden());
    let vt = m.vt();
    for k in 0..d {
        g[lay.c + k] += gr[k];
        let gv = &mut g[lay.v + k * h..lay.v + (k + 1) * h];
        for (gj, tj) in gv.iter_mut().zip(&w.a) {
            *gj += gr[k] * tj;
        }
    }
    for j in 0..h {
        let mut gt = 0.0;
        for k in 0..d {
            gt += gr[k] * vt[k * h + j];
        }
        let t = w.a[j];
        w.ga[j] = gt * (1.0 - t * t);
    }
}

/// Adds `work.ga` into the `b` and `W` gradient blocks for input `xin`.
fn backward_encoder(m: &MlpAutoEncoder, w: &Work, g: &mut [f64], lay: &Layout) {
    let (d, h) = (m.input_dim(), m.hidden());
    for (gb, ga) in g[lay.b..lay.b + h].iter_mut().zip(&w.ga) {
        *gb += ga;
    }
    for l in 0..d {
        let xl = w.xin[l];
        let gw = &mut g[lay.w + l * h..lay.w + (l + 1) * h];
        for (gj, ga) in gw.iter_mut().zip(&w.ga) {
            *gj += ga * xl;
        }
    }
}

fn reduce(parts: Vec<(f64, Vec<f64>)>) -> (f64, Vec<f64>) {
    let losses: Vec<f64> = parts.iter().map(|p| p.0).collect();
    let grads: Vec<Vec<f64>> = parts.into_iter().map(|p| p.1).collect();
    (pairwise_sum(&losses), pairwise_sum_vecs(&grads))
}

fn dae_eval(
    model: &MlpAutoEncoder,
    data: &[f64],
    noise: &NoiseTable,
    want_grad: bool,
) -> Result<(f64, Vec<f64>), AutoencoderError> {
    let n = check_data(model, data)?;
    let d = model.input_dim();
    if noise.n != n || noise.d != d || noise.replicas == 0 || noise.eps.len() != noise.replicas * n * d {
        return Err(AutoencoderError::Shape(format!(
            "noise table is {}×{}×{}, expected R×{n}×{d} with R ≥ 1",
            noise.replicas, noise.n, noise.d
        )));
    }
    let total = noise.replicas * n;
    let scale = 1.0 / total as f64;
    let lay = layout(model);
    let np = if want_grad { model.n_params() } else { 0 };
    let parts: Vec<(f64, Vec<f64>)> = (0..total.div_ceil(CHUNK))
        .into_par_iter()
        .map(|ci| {
            let mut w = Work::new(d, model.hidden());
            let mut g = vec![0.0; np];
            let mut gr = vec![0.0; d];
            let mut loss = 0.0;
            for s in ci * CHUNK..((ci + 1) * CHUNK).min(total) {
                let (rep, i) = (s / n, s % n);
                let x = &data[i * d..(i + 1) * d];
                for ((xi, xv), e) in w.xin.iter_mut().zip(x).zip(noise.get(rep, i)) {
                    *xi = xv + e;
                }
                forward(model, &mut w);
                let mut l = 0.0;
                for k in 0..d {
                    let e = w.r[k] - x[k];
                    l += e * e;
                    gr[k] = 2.0 * e * scale;
                }
                loss += l;
                if want_grad {
                    backward_recon(model, &mut w, &gr, &mut g, &lay);
                    backward_encoder(model, &w, &mut g, &lay);
                }
            }
            (loss * scale, g)
        })
        .collect();
    Ok(reduce(parts))
}

/// Mean over replicas and points of `‖r(x + ε) − x‖²`.
pub fn dae_loss(model: &MlpAutoEncoder, data: &[f64], noise: &NoiseTable) -> Result<f64, AutoencoderError> {
    dae_eval(model, data, noise, false).map(|r| r.0)
}

/// [`dae_loss`] and its gradient in the [`MlpAutoEncoder::params`] layout.
pub fn dae_loss_grad(
    model: &MlpAutoEncoder,
    data: &[f64],
    noise: &NoiseTable,
) -> Result<(f64, Vec<f64>), AutoencoderError> {
    dae_eval(model, data, noise, true)
}

fn rcae_eval(
    model: &MlpAutoEncoder,
    data: &[f64],
    sigma2: f64,
    want_grad: bool,
) -> Result<(f64, Vec<f64>), AutoencoderError> {
    if !(sigma2.is_finite() && sigma2 >= 0.0) {
        return Err(AutoencoderError::Config(format!("penalty σ² must be ≥ 0, got {sigma2}")));
    }
    let n = check_data(model, data)?;
    let (d, h) = (model.input_dim(), model.hidden());
    let scale = 1.0 / n as f64;
    let lay = layout(model);
    let np = if want_grad { model.n_params() } else { 0 };
    let wt = model.wt();
    let vt = model.vt();
    let parts: Vec<(f64, Vec<f64>)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|ci| {
            let mut w = Work::new(d, h);
            let mut g = vec![0.0; np];
            let mut gr = vec![0.0; d];
            let mut jac = vec![0.0; d * d];
            let mut vs = vec![0.0; h];
            let mut mkj = vec![0.0; d * h];
            let mut loss = 0.0;
            for i in ci * CHUNK..((ci + 1) * CHUNK).min(n) {
                let x = &data[i * d..(i + 1) * d];
                w.xin.copy_from_slice(x);
                forward(model, &mut w);
                let mut l = 0.0;
                for k in 0..d {
                    let e = w.r[k] - x[k];
                    l += e * e;
                    gr[k] = 2.0 * e * scale;
                }
                // J = V diag(s) W
                for k in 0..d {
                    for j in 0..h {
                        let t = w.a[j];
                        vs[j] = vt[k * h + j] * (1.0 - t * t);
                    }
                    for l2 in 0..d {
                        jac[k * d + l2] = vs.iter().zip(&wt[l2 * h..(l2 + 1) * h]).map(|(a, b)| a * b).sum();
                    }
                }
                l += sigma2 * jac.iter().map(|v| v * v).sum::<f64>();
                loss += l;
                if !want_grad {
                    continue;
                }
                backward_recon(model, &mut w, &gr, &mut g, &lay);
                if sigma2 > 0.0 {
                    let lam = 2.0 * sigma2 * scale;
                    // M = J Wᵀ (d×h)
                    for k in 0..d {
                        let row = &mut mkj[k * h..(k + 1) * h];
                        row.iter_mut().for_each(|v| *v = 0.0);
                        for l2 in 0..d {
                            let jkl = jac[k * d + l2];
                            for (mv, wv) in row.iter_mut().zip(&wt[l2 * h..(l2 + 1) * h]) {
                                *mv += jkl * wv;
                            }
                        }
                    }
                    for j in 0..h {
                        let t = w.a[j];
                        let s = 1.0 - t * t;
                        let mut dps = 0.0;
                        for k in 0..d {
                            let m = mkj[k * h + j];
                            g[lay.v + k * h + j] += lam * s * m;
                            dps += vt[k * h + j] * m;
                        }
                        for l2 in 0..d {
                            // (Vᵀ J)_{j l}
                            let mut nj = 0.0;
                            for k in 0..d {
                                nj += vt[k * h + j] * jac[k * d + l2];
                            }
                            g[lay.w + l2 * h + j] += lam * s * nj;
                        }
                        // ∂s/∂a = −2 t s
                        w.ga[j] += lam * dps * (-2.0 * t * s);
                    }
                }
                backward_encoder(model, &w, &mut g, &lay);
            }
            (loss * scale, g)
        })
        .collect();
    Ok(reduce(parts))
}

/// Mean over points of `‖r(x) − x‖² + σ² ‖∂r/∂x‖²_F`.
pub fn rcae_loss(model: &MlpAutoEncoder, data: &[f64], sigma2: f64) -> Result<f64, AutoencoderError> {
    rcae_eval(model, data, sigma2, false).map(|r| r.0)
}

pub fn rcae_loss_grad(model: &MlpAutoEncoder, data: &[f64], sigma2: f64) -> Result<(f64, Vec<f64>), AutoencoderError> {
    rcae_eval(model, data, sigma2, true)
}

/// Mean `‖r(x) − x‖²` without corruption or penalty.
pub fn reconstruction_error(model: &MlpAutoEncoder, data: &[f64]) -> Result<f64, AutoencoderError> {
    rcae_loss(model, data, 0.0)
}

/// Per-replica DAE losses, for standard errors over replicas.
pub fn dae_loss_per_replica(
    model: &MlpAutoEncoder,
    data: &[f64],
    noise: &NoiseTable,
) -> Result<Vec<f64>, AutoencoderError> {
    (0..noise.replicas)
        .map(|rep| {
            let o = rep * noise.n * noise.d;
            let single = NoiseTable {
                replicas: 1,
                n: noise.n,
                d: noise.d,
                eps: noise.eps[o..o + noise.n * noise.d].to_vec(),
            };
            dae_loss(model, data, &single)
        })
        .collect()
}
