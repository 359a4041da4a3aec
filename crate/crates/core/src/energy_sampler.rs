//! Metropolis–Hastings sampling from an energy known only through its
//! gradient. Energy differences come from a midpoint-rule path integral of
//! `∂E/∂x = −score` along the segment between the current and proposed state.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autoencoder::VectorField;
use crate::numerics::pairwise_sum;

/// Consecutive rejections after which a chain is declared stuck.
pub const STUCK_AFTER: u64 = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("score field has no noise scale; energy differences need sigma^2")]
    Uncalibrated,
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: field is {expected}-d, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("starting point is not finite")]
    NonFiniteStart,
    #[error("chain stuck: {consecutive} consecutive rejections at step {step}")]
    ChainStuck { step: u64, consecutive: u64, diagnostics: Box<ChainDiagnostics> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathIntegralConfig {
    pub n_steps: usize,
}

impl Default for PathIntegralConfig {
    fn default() -> Self {
        Self { n_steps: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MhConfig {
    pub sigma_mh: f64,
    pub n_samples: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    pub path: PathIntegralConfig,
}

impl Default for MhConfig {
    fn default() -> Self {
        Self { sigma_mh: 0.1, n_samples: 1000, burn_in: 1000, thinning: 10, seed: 0, path: PathIntegralConfig::default() }
    }
}

impl MhConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if !(self.sigma_mh.is_finite() && self.sigma_mh > 0.0) {
            return Err(SamplerError::Config("sigma_mh must be finite and > 0".into()));
        }
        if self.thinning == 0 {
            return Err(SamplerError::Config("thinning must be ≥ 1".into()));
        }
        if self.path.n_steps == 0 {
            return Err(SamplerError::Config("path.n_steps must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// `E(x*) − E(x) ≈ (1/n)·Σᵢ (−score(xᵢ))ᵀ(x* − x)` at the midpoints
/// `xᵢ = x + (i − ½)/n·(x* − x)`.
///
/// Points are formed as `((n−i+½)·x + (i−½)·x*)/n` and mirrored terms are
/// summed in pairs, so swapping the endpoints negates the result bit for bit.
pub fn energy_diff(field: &dyn VectorField, x: &[f64], x_star: &[f64], cfg: &PathIntegralConfig) -> f64 {
    let n = cfg.n_steps.max(1);
    let nf = n as f64;
    let dx: Vec<f64> = x_star.iter().zip(x).map(|(b, a)| b - a).collect();
    let term = |i: usize| {
        let (wa, wb) = ((n - i) as f64 + 0.5, (i as f64) - 0.5);
        let xi: Vec<f64> = x.iter().zip(x_star).map(|(a, b)| (wa * a + wb * b) / nf).collect();
        -field.eval(&xi).iter().zip(&dx).map(|(s, d)| s * d).sum::<f64>()
    };
    let mut total = 0.0;
    for i in 1..=n / 2 {
        total += term(i) + term(n + 1 - i);
    }
    if n % 2 == 1 {
        total += term(n / 2 + 1);
    }
    total / nf
}

#[derive(Debug, Clone)]
pub struct ChainState {
    pub current: Vec<f64>,
    pub rng: ChaCha8Rng,
    pub accepted: u64,
    pub proposed: u64,
    /// Proposals rejected because the energy difference was not finite.
    pub anomalies: u64,
    pub consecutive_rejections: u64,
    trace: VecDeque<Vec<f64>>,
    capacity: usize,
}

impl ChainState {
    pub fn new(x0: Vec<f64>, seed: u64, capacity: usize) -> Self {
        Self {
            current: x0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            accepted: 0,
            proposed: 0,
            anomalies: 0,
            consecutive_rejections: 0,
            trace: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// Retains the current state, evicting the oldest one when full.
    pub fn record(&mut self) {
        if self.capacity == 0 {
            return;
        }
        if self.trace.len() == self.capacity {
            self.trace.pop_front();
        }
        self.trace.push_back(self.current.clone());
    }

    pub fn trace(&self) -> impl ExactSizeIterator<Item = &Vec<f64>> {
        self.trace.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub accepted: bool,
    pub delta: f64,
    /// `min(1, exp(−Δ))`, or 0 for a non-finite Δ.
    pub acceptance_probability: f64,
}

/// One random-walk step with proposal `x + σ_MH·z`, `z ~ N(0, I)`.
pub fn mh_step(field: &dyn VectorField, state: &mut ChainState, cfg: &MhConfig) -> StepOutcome {
    let proposal: Vec<f64> = state
        .current
        .iter()
        .map(|x| x + cfg.sigma_mh * state.rng.sample::<f64, _>(StandardNormal))
        .collect();
    mh_step_with_proposal(field, state, &proposal, &cfg.path)
}

/// Accept/reject step for a given proposal. The uniform variate is always
/// drawn, so the random stream does not depend on the outcome.
pub fn mh_step_with_proposal(
    field: &dyn VectorField,
    state: &mut ChainState,
    proposal: &[f64],
    path: &PathIntegralConfig,
) -> StepOutcome {
    let u: f64 = state.rng.random();
    let delta = energy_diff(field, &state.current, proposal, path);
    state.proposed += 1;
    let (accepted, prob) = if delta.is_finite() && proposal.iter().all(|v| v.is_finite()) {
        let prob = (-delta).exp().min(1.0);
        (u < prob, prob)
    } else {
        state.anomalies += 1;
        (false, 0.0)
    };
    if accepted {
        state.accepted += 1;
        state.consecutive_rejections = 0;
        state.current.copy_from_slice(proposal);
    } else {
        state.consecutive_rejections += 1;
    }
    StepOutcome { accepted, delta, acceptance_probability: prob }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub step: u64,
    pub x: Vec<f64>,
    pub accepted_rate_so_far: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub steps: u64,
    pub accepted: u64,
    pub acceptance_rate: f64,
    pub anomalies: u64,
    pub retained: usize,
    /// Per-coordinate mean of the retained samples.
    pub trace_means: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ChainRun {
    pub records: Vec<SampleRecord>,
    pub diagnostics: ChainDiagnostics,
}

impl ChainRun {
    pub fn samples(&self) -> impl Iterator<Item = &[f64]> {
        self.records.iter().map(|r| r.x.as_slice())
    }

    /// Samples flattened row-major.
    pub fn flat_samples(&self) -> Vec<f64> {
        self.records.iter().flat_map(|r| r.x.iter().copied()).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("records serialize"));
            s.push('\n');
        }
        s
    }
}

fn diagnostics(state: &ChainState, seed: u64) -> ChainDiagnostics {
    let d = state.current.len();
    let retained = state.trace.len();
    let trace_means = (0..d)
        .map(|k| {
            let col: Vec<f64> = state.trace.iter().map(|x| x[k]).collect();
            if retained == 0 {
                f64::NAN
            } else {
                pairwise_sum(&col) / retained as f64
            }
        })
        .collect();
    ChainDiagnostics {
        steps: state.proposed,
        accepted: state.accepted,
        acceptance_rate: state.acceptance_rate(),
        anomalies: state.anomalies,
        retained,
        trace_means,
        seed,
    }
}

/// Runs `burn_in` steps, then keeps every `thinning`-th state until
/// `n_samples` are retained.
pub fn run_chain(field: &dyn VectorField, x0: &[f64], cfg: &MhConfig) -> Result<ChainRun, SamplerError> {
    cfg.validate()?;
    if !field.calibrated() {
        return Err(SamplerError::Uncalibrated);
    }
    if x0.len() != field.dim() {
        return Err(SamplerError::Dimension { expected: field.dim(), got: x0.len() });
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(SamplerError::NonFiniteStart);
    }
    let mut state = ChainState::new(x0.to_vec(), cfg.seed, cfg.n_samples);
    let mut records = Vec::with_capacity(cfg.n_samples);
    let total = cfg.burn_in as u64 + (cfg.n_samples * cfg.thinning) as u64;
    for step in 1..=total {
        mh_step(field, &mut state, cfg);
        if state.consecutive_rejections >= STUCK_AFTER {
            return Err(SamplerError::ChainStuck {
                step,
                consecutive: state.consecutive_rejections,
                diagnostics: Box::new(diagnostics(&state, cfg.seed)),
            });
        }
        if step > cfg.burn_in as u64 && (step - cfg.burn_in as u64) % cfg.thinning as u64 == 0 {
            state.record();
            records.push(SampleRecord { step, x: state.current.clone(), accepted_rate_so_far: state.acceptance_rate() });
        }
    }
    Ok(ChainRun { records, diagnostics: diagnostics(&state, cfg.seed) })
}

/// Seed of chain `k` in a multi-chain run.
pub fn chain_seed(base: u64, k: usize) -> u64 {
    base.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Independent chains in parallel, chain `k` seeded with `chain_seed(cfg.seed, k)`.
pub fn run_chains(
    field: &dyn VectorField,
    starts: &[Vec<f64>],
    cfg: &MhConfig,
) -> Vec<Result<ChainRun, SamplerError>> {
    starts
        .par_iter()
        .enumerate()
        .map(|(k, x0)| run_chain(field, x0, &MhConfig { seed: chain_seed(cfg.seed, k), ..cfg.clone() }))
        .collect()
}

/// CSV of data and samples projected on coordinates `(i, j)`, with a
/// `source` column (`data` / `sample`).
pub fn pair_projection_csv(data: &[f64], samples: &[f64], d: usize, i: usize, j: usize) -> String {
    let mut s = format!("source,x{i},x{j}\n");
    for (tag, pts) in [("data", data), ("sample", samples)] {
        for p in pts.chunks_exact(d) {
            s.push_str(&format!("{tag},{:?},{:?}\n", p[i], p[j]));
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub horizon: usize,
    /// Step multiplier on the score; σ² for a calibrated auto-encoder field,
    /// which makes each step `x ← r(x)`.
    pub step: f64,
    /// Distance to the nearest training point below which an endpoint is on-manifold.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub distance_to_data: f64,
    pub spurious: bool,
    /// Trajectory including start and end (`horizon + 1` points).
    pub path: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttractorReport {
    pub outcomes: Vec<ProbeOutcome>,
    pub spurious_fraction: f64,
    /// Spurious endpoints grouped greedily: endpoints within `tolerance` of a
    /// cluster's first member share that cluster.
    pub spurious_clusters: Vec<Vec<f64>>,
}

fn nearest_distance(x: &[f64], data: &[f64], d: usize) -> f64 {
    data.chunks_exact(d)
        .map(|p| p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Follows `x ← x + step·field(x)` from each probe for `horizon` steps and
/// classifies where it ends relative to the training data. Diagnostic only.
pub fn spurious_attractor_probe(
    field: &dyn VectorField,
    probes: &[Vec<f64>],
    data: &[f64],
    cfg: &ProbeConfig,
) -> AttractorReport {
    let d = field.dim();
    let outcomes: Vec<ProbeOutcome> = probes
        .par_iter()
        .map(|start| {
            let mut x = start.clone();
            let mut path = Vec::with_capacity(cfg.horizon + 1);
            path.push(x.clone());
            for _ in 0..cfg.horizon {
                let v = field.eval(&x);
                for (xi, vi) in x.iter_mut().zip(&v) {
                    *xi += cfg.step * vi;
                }
                path.push(x.clone());
            }
            let dist = nearest_distance(&x, data, d);
            ProbeOutcome { start: start.clone(), end: x, distance_to_data: dist, spurious: !(dist <= cfg.tolerance), path }
        })
        .collect();
    let mut clusters: Vec<Vec<f64>> = Vec::new();
    for o in outcomes.iter().filter(|o| o.spurious) {
        let near = |c: &Vec<f64>| c.iter().zip(&o.end).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() <= cfg.tolerance;
        if !clusters.iter().any(near) {
            clusters.push(o.end.clone());
        }
    }
    let n_sp = outcomes.iter().filter(|o| o.spurious).count();
    let spurious_fraction = if outcomes.is_empty() { 0.0 } else { n_sp as f64 / outcomes.len() as f64 };
    AttractorReport { outcomes, spurious_fraction, spurious_clusters: clusters }
}
