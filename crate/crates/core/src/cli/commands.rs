//! The figure commands. Each is a pure function of (config, seed) to files
//! under the output directory.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::autoencoder::{
    field_csv, probe_grid_2d, score_field, train, MlpAutoEncoder, RestartSummary, TrainResult, VectorField,
};
use crate::densities::{make_curve_dataset, make_spiral_dataset, BoundingBox, Dataset, EmbeddedCurve};
use crate::energy_sampler::{
    chain_seed, run_chains, spurious_attractor_probe, AttractorReport, ChainDiagnostics,
    ProbeConfig, SamplerError,
};
use crate::nonparametric::{
    bulk_mask, fig3_csv, masked_rmse, score_from_grid, solve_dae_exact, solve_rcae_grid, true_score, GridSpec,
};

use super::config::{derive_seed, ExperimentConfig, TrainSection};
use super::svg;
use super::validate::spiral_field;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn strip_header(csv: String, keep: bool) -> String {
    if keep {
        csv
    } else {
        csv.split_once('\n').map(|(_, rest)| rest.to_string()).unwrap_or_default()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Fig3Row {
    pub sigma: f64,
    pub file: String,
    pub rmse_rcae: f64,
    pub rmse_dae: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Fig3Summary {
    pub grid_points: usize,
    pub domain: [f64; 2],
    pub bulk_fraction: f64,
    pub bulk_nodes: usize,
    pub rows: Vec<Fig3Row>,
}

pub fn fig3(cfg: &ExperimentConfig, out: &Path) -> Result<Fig3Summary> {
    let c = &cfg.fig3;
    let p = c.density.build()?;
    let grid = GridSpec::new(c.domain[0], c.domain[1], c.grid_points)?;
    let truth = true_score(&p, &grid);
    let mask = bulk_mask(&p, &grid, c.bulk_fraction);
    let mut rows = Vec::new();
    for &s in &c.sigmas {
        let s2 = s * s;
        let rc = score_from_grid(&solve_rcae_grid(&p, &grid, s2)?, s2)?;
        let dae = score_from_grid(&solve_dae_exact(&p, &grid, s, &c.quadrature)?.r, s2)?;
        let file = format!("fig3_sigma_{s}.csv");
        write(&out.join(&file), strip_header(fig3_csv(&truth, &rc, &dae), cfg.format.csv_header))?;
        if cfg.format.svg {
            let xs = grid.nodes();
            let line = |v: &[f64]| xs.iter().zip(v).map(|(a, b)| [*a, *b]).collect::<Vec<_>>();
            let doc = svg::scatter(&[
                ("black", &line(&truth.values)),
                ("tomato", &line(&rc.values)),
                ("steelblue", &line(&dae.values)),
            ]);
            write(&out.join(format!("fig3_sigma_{s}.svg")), doc)?;
        }
        rows.push(Fig3Row { sigma: s, file, rmse_rcae: masked_rmse(&rc, &truth, &mask), rmse_dae: masked_rmse(&dae, &truth, &mask) });
    }
    let summary = Fig3Summary {
        grid_points: c.grid_points,
        domain: c.domain,
        bulk_fraction: c.bulk_fraction,
        bulk_nodes: mask.iter().filter(|m| **m).count(),
        rows,
    };
    write(&out.join("fig3_summary.json"), json(&summary))?;
    Ok(summary)
}

/// Samples the spiral and trains on it; data and training seeds derive from `seed`.
pub fn train_spiral(n: usize, section: &TrainSection, seed: u64) -> Result<(Dataset, TrainResult)> {
    let ds = make_spiral_dataset(n, derive_seed(seed, 1));
    let res = train(&ds.points, 2, &section.to_train(derive_seed(seed, 2))).context("training the spiral model")?;
    Ok((ds, res))
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainingSummary {
    pub loss: f64,
    pub initial_loss: f64,
    pub restarts: Vec<RestartSummary>,
}

impl TrainingSummary {
    fn of(r: &TrainResult) -> Self {
        Self { loss: r.loss, initial_loss: r.initial_loss, restarts: r.restarts.clone() }
    }
}

fn history_csv(h: &[f64]) -> String {
    let mut s = String::from("iter,loss\n");
    for (i, v) in h.iter().enumerate() {
        s.push_str(&format!("{i},{v:?}\n"));
    }
    s
}

fn padded(b: &BoundingBox, frac: f64) -> ([f64; 2], [f64; 2]) {
    let pad = |k: usize| frac * (b.hi[k] - b.lo[k]);
    ([b.lo[0] - pad(0), b.lo[1] - pad(1)], [b.hi[0] + pad(0), b.hi[1] + pad(1)])
}

fn quiver_file(out: &Path, name: &str, field: &dyn VectorField, probes: &[Vec<f64>], data: &[f64]) -> Result<()> {
    let pts: Vec<[f64; 2]> = data.chunks_exact(2).map(|p| [p[0], p[1]]).collect();
    let arrows: Vec<([f64; 2], [f64; 2])> = probes
        .iter()
        .map(|p| {
            let v = field.eval(p);
            ([p[0], p[1]], [v[0], v[1]])
        })
        .collect();
    write(&out.join(name), svg::quiver(&pts, &arrows))
}

#[derive(Debug, Clone, Serialize)]
pub struct Fig4Summary {
    pub n_points: usize,
    pub loaded: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSummary>,
    pub full_view: [[f64; 2]; 2],
    pub zoom_view: [[f64; 2]; 2],
    pub checks: Vec<super::validate::Check>,
}

/// Trains (or loads) the spiral model and writes its `r(x) − x` field on a
/// full and a zoomed probe grid.
pub fn fig4(cfg: &ExperimentConfig, out: &Path, load: Option<&Path>) -> Result<Fig4Summary> {
    let c = &cfg.fig4;
    let (ds, model, training) = match load {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
            let model = MlpAutoEncoder::from_json(&text)?;
            if model.input_dim() != 2 {
                bail!("checkpoint has input dimension {}, expected 2", model.input_dim());
            }
            (make_spiral_dataset(c.n_points, derive_seed(cfg.seed, 1)), model, None)
        }
        None => {
            let (ds, res) = train_spiral(c.n_points, &c.train, cfg.seed)?;
            write(&out.join("fig4_model.json"), res.model.to_json())?;
            write(&out.join("fig4_training.csv"), history_csv(&res.history))?;
            let t = TrainingSummary::of(&res);
            (ds, res.model, Some(t))
        }
    };
    ds.write(out, "fig4_data", cfg.format.csv_header)?;
    let field = score_field(&model, None);
    let (lo, hi) = padded(&ds.bounds, 0.1);
    let half = [c.zoom * 0.5 * (hi[0] - lo[0]), c.zoom * 0.5 * (hi[1] - lo[1])];
    // zoom onto the middle arm of the spiral
    let anchor = crate::densities::spiral_point(7.5);
    let (zlo, zhi) = ([anchor[0] - half[0], anchor[1] - half[1]], [anchor[0] + half[0], anchor[1] + half[1]]);
    let full = probe_grid_2d(lo, hi, c.probe_grid);
    let zoom = probe_grid_2d(zlo, zhi, c.probe_grid);
    write(&out.join("fig4_field.csv"), strip_header(field_csv(&field, &full), cfg.format.csv_header))?;
    write(&out.join("fig4_field_zoom.csv"), strip_header(field_csv(&field, &zoom), cfg.format.csv_header))?;
    if cfg.format.svg {
        quiver_file(out, "fig4_field.svg", &field, &full, &ds.points)?;
        quiver_file(out, "fig4_field_zoom.svg", &field, &zoom, &ds.points)?;
    }
    let checks = spiral_field(&model, &ds.points, c.train.sigma_train, derive_seed(cfg.seed, 3)).checks;
    let summary = Fig4Summary {
        n_points: c.n_points,
        loaded: load.is_some(),
        training,
        full_view: [lo, hi],
        zoom_view: [zlo, zhi],
        checks,
    };
    write(&out.join("fig4_summary.json"), json(&summary))?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct Fig5Diagnostics {
    pub dim: usize,
    pub sigma_train: f64,
    pub sigma_mh: f64,
    pub training: TrainingSummary,
    pub chains: Vec<ChainDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub acceptance_rate: f64,
    pub retained: usize,
    pub proximity_tolerance: f64,
    /// Share of retained samples within `proximity_tolerance` of the curve.
    pub proximity_fraction: f64,
}

/// Trains on the embedded curve, samples with path-integral MH, and writes
/// per-pair projections of data and samples. A stuck chain writes the
/// diagnostics and then fails.
pub fn fig5(cfg: &ExperimentConfig, out: &Path) -> Result<Fig5Diagnostics> {
    let c = &cfg.fig5;
    let d = c.dim;
    let ds = make_curve_dataset(c.n_points, d, c.curve_seed, derive_seed(cfg.seed, 1), c.jitter);
    let curve = EmbeddedCurve::random(d, c.curve_seed);
    let res = train(&ds.points, d, &c.train.to_train(derive_seed(cfg.seed, 2))).context("training the curve model")?;
    let s2 = c.train.sigma_train * c.train.sigma_train;
    if s2 == 0.0 {
        bail!(super::UsageError("fig5.train.sigma_train must be > 0 to calibrate the score".into()));
    }
    let field = score_field(&res.model, Some(s2));
    let starts: Vec<Vec<f64>> = (0..c.sampler.chains).map(|k| ds.point(k * ds.len() / c.sampler.chains).to_vec()).collect();
    let mh = c.sampler.to_mh(derive_seed(cfg.seed, 3));
    let mut diag = Fig5Diagnostics {
        dim: d,
        sigma_train: c.train.sigma_train,
        sigma_mh: c.sampler.sigma_mh,
        training: TrainingSummary::of(&res),
        chains: Vec::new(),
        error: None,
        acceptance_rate: 0.0,
        retained: 0,
        proximity_tolerance: c.proximity_tolerance,
        proximity_fraction: 0.0,
    };
    let mut samples = Vec::new();
    let mut failure = None;
    for (k, run) in run_chains(&field, &starts, &mh).into_iter().enumerate() {
        match run {
            Ok(run) => {
                write(&out.join(format!("fig5_chain{k}.jsonl")), run.to_jsonl())?;
                samples.extend(run.flat_samples());
                diag.chains.push(run.diagnostics);
            }
            Err(SamplerError::ChainStuck { step, consecutive, diagnostics }) => {
                failure.get_or_insert(format!(
                    "chain {k} (seed {}) stuck at step {step} after {consecutive} rejections",
                    chain_seed(mh.seed, k)
                ));
                diag.chains.push(*diagnostics);
            }
            Err(e) => {
                failure.get_or_insert(format!("chain {k}: {e}"));
            }
        }
    }
    let steps: u64 = diag.chains.iter().map(|c| c.steps).sum();
    let accepted: u64 = diag.chains.iter().map(|c| c.accepted).sum();
    diag.acceptance_rate = if steps == 0 { 0.0 } else { accepted as f64 / steps as f64 };
    diag.retained = samples.len() / d;
    let near = samples.chunks_exact(d).filter(|x| curve.distance(x) < c.proximity_tolerance).count();
    diag.proximity_fraction = if diag.retained == 0 { 0.0 } else { near as f64 / diag.retained as f64 };
    diag.error = failure.clone();
    write(&out.join("fig5_diagnostics.json"), json(&diag))?;
    if let Some(msg) = failure {
        bail!(msg);
    }
    for i in 0..d {
        let j = (i + 1) % d;
        write(&out.join(format!("fig5_data_x{i}_x{j}.csv")), strip_header(pair_csv(&ds.points, d, i, j), cfg.format.csv_header))?;
        write(&out.join(format!("fig5_samples_x{i}_x{j}.csv")), strip_header(pair_csv(&samples, d, i, j), cfg.format.csv_header))?;
        if cfg.format.svg {
            let proj = |v: &[f64]| v.chunks_exact(d).map(|p| [p[i], p[j]]).collect::<Vec<_>>();
            write(
                &out.join(format!("fig5_x{i}_x{j}.svg")),
                svg::scatter(&[("lightgray", &proj(&ds.points)), ("steelblue", &proj(&samples))]),
            )?;
        }
    }
    Ok(diag)
}

fn pair_csv(points: &[f64], d: usize, i: usize, j: usize) -> String {
    let mut s = format!("x{i},x{j}\n");
    for p in points.chunks_exact(d) {
        crate::densities::write_csv_row(&mut s, &[p[i], p[j]]);
    }
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct AttractorSummary {
    pub sigma_train: f64,
    pub max_iters: usize,
    pub loss: f64,
    pub spurious_fraction: f64,
    pub spurious_clusters: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Fig6Summary {
    pub undertrained: AttractorSummary,
    pub well_trained: AttractorSummary,
}

/// Iterates `x ← r(x)` from a probe grid over the padded data box.
pub fn attractor_report(model: &MlpAutoEncoder, sigma_train: f64, data: &Dataset, cfg: &ExperimentConfig) -> AttractorReport {
    let c = &cfg.fig6;
    let s2 = sigma_train * sigma_train;
    let (lo, hi) = padded(&data.bounds, 0.1);
    let probes = probe_grid_2d(lo, hi, c.probe_grid);
    // with step σ² each move of the calibrated field is exactly x ← r(x)
    let field = score_field(model, Some(s2));
    spurious_attractor_probe(&field, &probes, &data.points, &ProbeConfig { horizon: c.horizon, step: s2, tolerance: c.tolerance })
}

/// An undertrained and a well-trained spiral model, their fields and where
/// their reconstruction iterations settle.
pub fn fig6(cfg: &ExperimentConfig, out: &Path) -> Result<Fig6Summary> {
    let c = &cfg.fig6;
    let run = |name: &str, section: &TrainSection, tag: u64| -> Result<AttractorSummary> {
        let (ds, res) = train_spiral(c.n_points, section, derive_seed(cfg.seed, tag))?;
        let report = attractor_report(&res.model, section.sigma_train, &ds, cfg);
        let (lo, hi) = padded(&ds.bounds, 0.1);
        let probes = probe_grid_2d(lo, hi, c.probe_grid.max(20));
        let field = score_field(&res.model, None);
        write(&out.join(format!("fig6_{name}_field.csv")), strip_header(field_csv(&field, &probes), cfg.format.csv_header))?;
        write(&out.join(format!("fig6_{name}_attractors.json")), json(&report))?;
        write(&out.join(format!("fig6_{name}_model.json")), res.model.to_json())?;
        if cfg.format.svg {
            quiver_file(out, &format!("fig6_{name}_field.svg"), &field, &probes, &ds.points)?;
        }
        Ok(AttractorSummary {
            sigma_train: section.sigma_train,
            max_iters: section.max_iters,
            loss: res.loss,
            spurious_fraction: report.spurious_fraction,
            spurious_clusters: report.spurious_clusters.len(),
        })
    };
    let undertrained = run("undertrained", &c.undertrained, 1)?;
    let well_trained = run("well_trained", &c.well_trained, 2)?;
    let summary = Fig6Summary { undertrained, well_trained };
    write(&out.join("fig6_summary.json"), json(&summary))?;
    Ok(summary)
}
