use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lbfgs::{minimize, LbfgsOptions, Status};
use super::loss::{dae_loss_grad, rcae_loss_grad, NoiseTable};
use super::{AutoencoderError, MlpAutoEncoder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Dae,
    Rcae,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    MomentMatched,
}

/// Starting point of each restart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Init {
    /// Uniform `±1/√fan_in` weights, zero biases.
    Uniform,
    /// See [`MlpAutoEncoder::data_spread_init`].
    DataSpread { gain: f64 },
}

impl Init {
    fn build(&self, data: &[f64], d: usize, h: usize, tied: bool, seed: u64) -> MlpAutoEncoder {
        match *self {
            Init::Uniform => MlpAutoEncoder::random_init(d, h, tied, seed),
            Init::DataSpread { gain } => MlpAutoEncoder::data_spread_init(data, d, h, tied, gain, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub sigma_train: f64,
    pub n_hidden: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Fixed corruption replicas per training point.
    pub corruption: usize,
    pub noise: NoiseKind,
    pub tolerance: f64,
    pub objective: Objective,
    /// Penalty weight for the regularized objective.
    pub sigma2_penalty: f64,
    pub tied: bool,
    pub restarts: usize,
    pub memory: usize,
    pub init: Init,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sigma_train: 0.01,
            n_hidden: 1000,
            max_iters: 1000,
            seed: 0,
            corruption: 1,
            noise: NoiseKind::Gaussian,
            tolerance: 1e-10,
            objective: Objective::Dae,
            sigma2_penalty: 0.0,
            tied: false,
            restarts: 5,
            memory: 20,
            init: Init::DataSpread { gain: 5.0 },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AutoencoderError> {
        let bad = |m: &str| Err(AutoencoderError::Config(m.into()));
        if !(self.sigma_train.is_finite() && self.sigma_train >= 0.0) {
            return bad("sigma_train must be finite and ≥ 0");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be ≥ 1");
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be > 0");
        }
        if self.n_hidden == 0 || self.corruption == 0 || self.restarts == 0 || self.memory == 0 {
            return bad("n_hidden, corruption, restarts and memory must be ≥ 1");
        }
        if let Init::DataSpread { gain } = self.init {
            if !(gain.is_finite() && gain > 0.0) {
                return bad("init gain must be finite and > 0");
            }
        }
        if !(self.sigma2_penalty.is_finite() && self.sigma2_penalty >= 0.0) {
            return bad("sigma2_penalty must be finite and ≥ 0");
        }
        Ok(())
    }

    /// Seed of restart `k`; restart 0 uses the base seed.
    pub fn restart_seed(&self, k: usize) -> u64 {
        self.seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    fn noise_seed(&self) -> u64 {
        self.seed ^ 0xA5A5_5A5A_0F0F_F0F0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RestartSummary {
    pub seed: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iters: usize,
    pub status: Status,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: MlpAutoEncoder,
    pub loss: f64,
    pub initial_loss: f64,
    /// Best-so-far loss per iteration of the winning restart.
    pub history: Vec<f64>,
    pub status: Status,
    pub restarts: Vec<RestartSummary>,
}

/// Builds the fixed corruption table for `config` and `n` points in `ℝ^d`.
pub fn corruption_table(config: &TrainConfig, n: usize, d: usize) -> Result<NoiseTable, AutoencoderError> {
    let (r, s, seed) = (config.corruption, config.sigma_train, config.noise_seed());
    match config.noise {
        NoiseKind::Gaussian => Ok(NoiseTable::gaussian(r, n, d, s, seed)),
        NoiseKind::MomentMatched => NoiseTable::moment_matched(r, n, d, s, seed),
    }
}

/// Full-batch L-BFGS training from `restarts` seeded initializations run in
/// parallel; the restart with the lowest final loss wins. One corruption
/// table, drawn once from the base seed, is shared by all restarts.
pub fn train(data: &[f64], d: usize, config: &TrainConfig) -> Result<TrainResult, AutoencoderError> {
    config.validate()?;
    if d == 0 || data.len() % d != 0 {
        return Err(AutoencoderError::Shape(format!("data length {} is not a multiple of d = {d}", data.len())));
    }
    let n = data.len() / d;
    if n == 0 {
        return Err(AutoencoderError::EmptyData);
    }
    let noise = match config.objective {
        Objective::Dae => Some(corruption_table(config, n, d)?),
        Objective::Rcae => None,
    };
    let opts = LbfgsOptions {
        memory: config.memory,
        max_iters: config.max_iters,
        tolerance: config.tolerance,
        ..Default::default()
    };
    let runs: Vec<Result<(MlpAutoEncoder, f64, crate::autoencoder::lbfgs::LbfgsResult, u64), AutoencoderError>> = (0
        ..config.restarts)
        .into_par_iter()
        .map(|k| {
            let seed = config.restart_seed(k);
            let init = config.init.build(data, d, config.n_hidden, config.tied, seed);
            let mut probe = init.clone();
            let eval = |p: &[f64], probe: &mut MlpAutoEncoder| -> (f64, Vec<f64>) {
                probe.set_params(p);
                let r = match &noise {
                    Some(tab) => dae_loss_grad(probe, data, tab),
                    None => rcae_loss_grad(probe, data, config.sigma2_penalty),
                };
                r.unwrap_or_else(|_| (f64::NAN, vec![f64::NAN; p.len()]))
            };
            let initial = eval(&init.params(), &mut probe).0;
            let res = minimize(|p| eval(p, &mut probe), &init.params(), &opts);
            if !res.f.is_finite() {
                return Err(AutoencoderError::Diverged { restart: k, last_loss: res.f });
            }
            Ok((init.with_params(&res.x), initial, res, seed))
        })
        .collect();
    let mut summaries = Vec::new();
    let mut best: Option<(MlpAutoEncoder, f64, crate::autoencoder::lbfgs::LbfgsResult)> = None;
    let mut first_err = None;
    for r in runs {
        match r {
            Ok((model, initial, res, seed)) => {
                summaries.push(RestartSummary {
                    seed,
                    initial_loss: initial,
                    final_loss: res.f,
                    iters: res.iters,
                    status: res.status,
                });
                if best.as_ref().is_none_or(|b| res.f < b.2.f) {
                    best = Some((model, initial, res));
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let Some((model, initial_loss, res)) = best else {
        return Err(first_err.expect("at least one restart ran"));
    };
    Ok(TrainResult {
        model,
        loss: res.f,
        initial_loss,
        history: res.history,
        status: res.status,
        restarts: summaries,
    })
}
