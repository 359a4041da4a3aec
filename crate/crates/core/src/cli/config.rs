use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::autoencoder::{Init, NoiseKind, Objective, TrainConfig};
use crate::densities::{make_1d_example, make_gaussian_mixture, AnalyticDensity, DensityError, DEFAULT_CURVE_SEED};
use crate::energy_sampler::{MhConfig, PathIntegralConfig};
use crate::nonparametric::Quadrature;

/// Experiment names accepted on the command line and in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Fig3,
    Fig4,
    Fig5,
    Fig6,
    Validate,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Fig3 => "fig3",
            Experiment::Fig4 => "fig4",
            Experiment::Fig5 => "fig5",
            Experiment::Fig6 => "fig6",
            Experiment::Validate => "validate",
        }
    }
}

/// One TOML document configures every command; each command reads its own
/// section. All random streams derive from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// When set, the config may only drive this command.
    pub experiment: Option<Experiment>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub format: FormatFlags,
    pub fig3: Fig3Config,
    pub fig4: Fig4Config,
    pub fig5: Fig5Config,
    pub fig6: Fig6Config,
    pub validate: ValidateConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            seed: 0,
            out_dir: PathBuf::from("out"),
            format: FormatFlags::default(),
            fig3: Fig3Config::default(),
            fig4: Fig4Config::default(),
            fig5: Fig5Config::default(),
            fig6: Fig6Config::default(),
            validate: ValidateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FormatFlags {
    /// Also write minimal SVG renderings next to the data files.
    pub svg: bool,
    /// Header rows on dataset CSVs.
    pub csv_header: bool,
}

impl Default for FormatFlags {
    fn default() -> Self {
        Self { svg: false, csv_header: true }
    }
}

/// A one-dimensional density for the nonparametric experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    Example1d,
    Mixture1d { weights: Vec<f64>, means: Vec<f64>, stds: Vec<f64> },
}

impl DensitySpec {
    pub fn build(&self) -> Result<AnalyticDensity, DensityError> {
        match self {
            DensitySpec::Example1d => Ok(make_1d_example()),
            DensitySpec::Mixture1d { weights, means, stds } => {
                for v in [means, stds] {
                    if v.len() != weights.len() {
                        return Err(DensityError::DimensionMismatch { expected: weights.len(), got: v.len() });
                    }
                }
                let mu: Vec<Vec<f64>> = means.iter().map(|m| vec![*m]).collect();
                let cov: Vec<nalgebra::DMatrix<f64>> =
                    stds.iter().map(|s| nalgebra::DMatrix::from_element(1, 1, s * s)).collect();
                make_gaussian_mixture(weights, &mu, &cov)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig3Config {
    pub density: DensitySpec,
    pub sigmas: Vec<f64>,
    pub grid_points: usize,
    pub domain: [f64; 2],
    /// Bulk region: nodes where `p > bulk_fraction · max p`.
    pub bulk_fraction: f64,
    pub quadrature: Quadrature,
}

impl Default for Fig3Config {
    fn default() -> Self {
        Self {
            density: DensitySpec::Example1d,
            sigmas: vec![1.0, 0.31, 0.16, 0.06],
            grid_points: 1000,
            domain: [-1.5, 1.5],
            bulk_fraction: crate::nonparametric::BULK_FRACTION,
            quadrature: Quadrature::default(),
        }
    }
}

/// Training hyperparameters; the seed comes from the experiment seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub sigma_train: f64,
    pub n_hidden: usize,
    pub max_iters: usize,
    pub corruption: usize,
    pub noise: NoiseKind,
    pub tolerance: f64,
    pub objective: Objective,
    pub sigma2_penalty: f64,
    pub tied: bool,
    pub restarts: usize,
    pub memory: usize,
    pub init: Init,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self::from_train(&TrainConfig::default())
    }
}

impl TrainSection {
    pub fn from_train(t: &TrainConfig) -> Self {
        Self {
            sigma_train: t.sigma_train,
            n_hidden: t.n_hidden,
            max_iters: t.max_iters,
            corruption: t.corruption,
            noise: t.noise,
            tolerance: t.tolerance,
            objective: t.objective,
            sigma2_penalty: t.sigma2_penalty,
            tied: t.tied,
            restarts: t.restarts,
            memory: t.memory,
            init: t.init,
        }
    }

    pub fn to_train(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            sigma_train: self.sigma_train,
            n_hidden: self.n_hidden,
            max_iters: self.max_iters,
            seed,
            corruption: self.corruption,
            noise: self.noise,
            tolerance: self.tolerance,
            objective: self.objective,
            sigma2_penalty: self.sigma2_penalty,
            tied: self.tied,
            restarts: self.restarts,
            memory: self.memory,
            init: self.init,
        }
    }
}

/// Spiral hyperparameters: σ = 0.01, 1000 hidden units, 1000 iterations.
fn spiral_train() -> TrainSection {
    TrainSection { sigma_train: 0.01, n_hidden: 1000, max_iters: 1000, restarts: 1, ..TrainSection::default() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig4Config {
    pub n_points: usize,
    pub train: TrainSection,
    /// Probe grid is `probe_grid × probe_grid` per view.
    pub probe_grid: usize,
    /// Half-width of the zoomed view relative to the full view.
    pub zoom: f64,
}

impl Default for Fig4Config {
    fn default() -> Self {
        Self { n_points: 10_000, train: spiral_train(), probe_grid: 50, zoom: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub sigma_mh: f64,
    pub n_samples: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub path_steps: usize,
    /// Independent chains, each retaining `n_samples`.
    pub chains: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let m = MhConfig::default();
        Self {
            sigma_mh: 0.1,
            n_samples: m.n_samples,
            burn_in: m.burn_in,
            thinning: m.thinning,
            path_steps: m.path.n_steps,
            chains: 4,
        }
    }
}

impl SamplerSection {
    pub fn to_mh(&self, seed: u64) -> MhConfig {
        MhConfig {
            sigma_mh: self.sigma_mh,
            n_samples: self.n_samples,
            burn_in: self.burn_in,
            thinning: self.thinning,
            seed,
            path: PathIntegralConfig { n_steps: self.path_steps },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig5Config {
    pub dim: usize,
    pub n_points: usize,
    /// Isotropic jitter of the training points around the curve.
    pub jitter: f64,
    pub curve_seed: u64,
    pub train: TrainSection,
    pub sampler: SamplerSection,
    /// Samples closer than this to the curve count as on-manifold.
    pub proximity_tolerance: f64,
}

impl Default for Fig5Config {
    fn default() -> Self {
        Self {
            dim: 10,
            n_points: 5000,
            jitter: 0.0,
            curve_seed: DEFAULT_CURVE_SEED,
            train: TrainSection { sigma_train: 0.1, n_hidden: 200, max_iters: 1000, restarts: 1, ..TrainSection::default() },
            sampler: SamplerSection::default(),
            proximity_tolerance: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig6Config {
    pub n_points: usize,
    pub undertrained: TrainSection,
    pub well_trained: TrainSection,
    pub probe_grid: usize,
    pub horizon: usize,
    /// Endpoints farther than this from every training point are spurious.
    pub tolerance: f64,
}

impl Default for Fig6Config {
    fn default() -> Self {
        Self {
            n_points: 10_000,
            undertrained: TrainSection { sigma_train: 1e-4, max_iters: 50, ..spiral_train() },
            well_trained: spiral_train(),
            probe_grid: 12,
            horizon: 500,
            tolerance: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    /// Monte-Carlo budget of the ball-integral oracles.
    pub mc_samples: usize,
    /// Spiral model used by the Hessian suite.
    pub hessian_train: TrainSection,
    pub hessian_points: usize,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            mc_samples: 1_000_000,
            hessian_train: TrainSection { max_iters: 400, ..spiral_train() },
            hessian_points: 10_000,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every section; messages name the offending key.
    pub fn validate(&self) -> Result<(), String> {
        let pos = |v: f64, key: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(format!("{key} must be finite and > 0, got {v}"))
            }
        };
        if self.seed > i64::MAX as u64 {
            return Err(format!("seed must be ≤ {}", i64::MAX));
        }
        let f3 = &self.fig3;
        if f3.sigmas.is_empty() {
            return Err("fig3.sigmas must not be empty".into());
        }
        for s in &f3.sigmas {
            pos(*s, "fig3.sigmas")?;
        }
        if f3.grid_points < 3 {
            return Err("fig3.grid_points must be ≥ 3".into());
        }
        if !(f3.domain[0].is_finite() && f3.domain[1].is_finite() && f3.domain[0] < f3.domain[1]) {
            return Err("fig3.domain must be a finite increasing pair".into());
        }
        if !(f3.bulk_fraction > 0.0 && f3.bulk_fraction < 1.0) {
            return Err("fig3.bulk_fraction must lie in (0, 1)".into());
        }
        f3.density.build().map_err(|e| format!("fig3.density: {e}"))?;
        let train = |t: &TrainSection, key: &str| t.to_train(0).validate().map_err(|e| format!("{key}: {e}"));
        train(&self.fig4.train, "fig4.train")?;
        train(&self.fig5.train, "fig5.train")?;
        train(&self.fig6.undertrained, "fig6.undertrained")?;
        train(&self.fig6.well_trained, "fig6.well_trained")?;
        train(&self.validate.hessian_train, "validate.hessian_train")?;
        if self.fig4.n_points == 0 || self.fig4.probe_grid == 0 {
            return Err("fig4.n_points and fig4.probe_grid must be ≥ 1".into());
        }
        pos(self.fig4.zoom, "fig4.zoom")?;
        let f5 = &self.fig5;
        if f5.dim < 2 || f5.n_points == 0 {
            return Err("fig5.dim must be ≥ 2 and fig5.n_points ≥ 1".into());
        }
        if !(f5.jitter.is_finite() && f5.jitter >= 0.0) {
            return Err("fig5.jitter must be finite and ≥ 0".into());
        }
        pos(f5.proximity_tolerance, "fig5.proximity_tolerance")?;
        if f5.sampler.chains == 0 || f5.sampler.n_samples == 0 {
            return Err("fig5.sampler.chains and n_samples must be ≥ 1".into());
        }
        f5.sampler.to_mh(0).validate().map_err(|e| format!("fig5.sampler: {e}"))?;
        let f6 = &self.fig6;
        if f6.n_points == 0 || f6.probe_grid == 0 {
            return Err("fig6.n_points and fig6.probe_grid must be ≥ 1".into());
        }
        pos(f6.tolerance, "fig6.tolerance")?;
        if self.validate.mc_samples < crate::local_moments::MIN_MC_SAMPLES || self.validate.hessian_points == 0 {
            return Err("validate.mc_samples must be ≥ 1000 and hessian_points ≥ 1".into());
        }
        Ok(())
    }
}

/// Independent sub-stream seed for component `tag` of an experiment.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    seed.wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}
