use super::config::*;
use super::*;
use crate::autoencoder::{Init, NoiseKind, Objective};
use crate::nonparametric::Quadrature;
use proptest::prelude::*;

fn run_args(args: &[&str]) -> i32 {
    run(std::iter::once("regae").chain(args.iter().copied()))
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, body).unwrap();
    p
}

const TINY: &str = r#"
[fig4]
n_points = 300
probe_grid = 6
[fig4.train]
sigma_train = 0.05
n_hidden = 12
max_iters = 15

[fig5]
dim = 3
n_points = 200
[fig5.train]
sigma_train = 0.1
n_hidden = 10
max_iters = 15
[fig5.sampler]
n_samples = 40
burn_in = 20
thinning = 2
chains = 2

[fig6]
n_points = 200
probe_grid = 4
horizon = 20
[fig6.undertrained]
sigma_train = 0.0001
n_hidden = 10
max_iters = 5
[fig6.well_trained]
sigma_train = 0.05
n_hidden = 10
max_iters = 20
"#;

#[test]
fn default_config_is_valid_and_round_trips() {
    let c = ExperimentConfig::default();
    c.validate().unwrap();
    assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    assert_eq!(c.fig3.sigmas, vec![1.0, 0.31, 0.16, 0.06]);
    assert_eq!((c.fig4.n_points, c.fig4.train.n_hidden, c.fig4.train.max_iters), (10_000, 1000, 1000));
    assert_eq!(c.fig4.train.sigma_train, 0.01);
    assert_eq!((c.fig5.train.sigma_train, c.fig5.sampler.sigma_mh), (0.1, 0.1));
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(ExperimentConfig::from_toml("sead = 3").is_err());
    assert!(ExperimentConfig::from_toml("[fig3]\nsigma = [0.1]").is_err());
    let c = ExperimentConfig::from_toml("seed = 7\n[fig3]\nsigmas = [0.5]").unwrap();
    assert_eq!((c.seed, c.fig3.sigmas.clone()), (7, vec![0.5]));
}

#[test]
fn invalid_values_name_their_key() {
    let mut c = ExperimentConfig::default();
    c.fig3.sigmas = vec![0.1, 0.0];
    assert!(c.validate().unwrap_err().contains("fig3.sigmas"));
    let mut c = ExperimentConfig::default();
    c.fig5.train.max_iters = 0;
    assert!(c.validate().unwrap_err().contains("fig5.train"));
    let mut c = ExperimentConfig::default();
    c.seed = u64::MAX;
    assert!(c.validate().is_err());
}

#[test]
fn derived_seeds_differ_by_tag() {
    let s: std::collections::BTreeSet<u64> = (0..100).map(|t| derive_seed(42, t)).collect();
    assert_eq!(s.len(), 100);
    assert_eq!(derive_seed(42, 0), 42);
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![1e-6f64..10.0, any::<f64>().prop_filter("finite positive", |v| v.is_finite() && *v > 0.0)]
}

fn train_section() -> impl Strategy<Value = TrainSection> {
    (finite(), 1usize..2000, 1usize..5000, 1usize..8, any::<bool>(), any::<bool>(), any::<bool>(), prop::option::of(finite()))
        .prop_map(|(s, h, it, r, mm, rc, tied, gain)| TrainSection {
            sigma_train: s,
            n_hidden: h,
            max_iters: it,
            corruption: r,
            noise: if mm { NoiseKind::MomentMatched } else { NoiseKind::Gaussian },
            objective: if rc { Objective::Rcae } else { Objective::Dae },
            sigma2_penalty: s * s,
            tied,
            restarts: r,
            init: gain.map_or(Init::Uniform, |g| Init::DataSpread { gain: g }),
            ..TrainSection::default()
        })
}

fn experiment_config() -> impl Strategy<Value = ExperimentConfig> {
    (
        0u64..=i64::MAX as u64,
        prop::collection::vec(finite(), 1..6),
        3usize..5000,
        prop::option::of(prop_oneof![
            Just(Experiment::Fig3),
            Just(Experiment::Fig4),
            Just(Experiment::Fig5),
            Just(Experiment::Fig6),
            Just(Experiment::Validate)
        ]),
        train_section(),
        train_section(),
        (any::<bool>(), any::<bool>(), 1usize..400, 0.0f64..0.5),
        prop::option::of((0.1f64..1.0, -1.0f64..1.0, 0.05f64..1.0)),
    )
        .prop_map(|(seed, sigmas, m, exp, t4, t5, (svg, hdr, nodes, jitter), mix)| {
            let mut c = ExperimentConfig { seed, experiment: exp, ..ExperimentConfig::default() };
            c.format = FormatFlags { svg, csv_header: hdr };
            c.fig3.sigmas = sigmas;
            c.fig3.grid_points = m;
            c.fig3.quadrature =
                if nodes % 2 == 0 { Quadrature::GaussHermite { nodes } } else { Quadrature::Trapezoid { width: 8.0, points: nodes } };
            if let Some((w, mu, s)) = mix {
                c.fig3.density = DensitySpec::Mixture1d { weights: vec![w, 1.0 - w + 0.01], means: vec![mu, -mu], stds: vec![s, s * 0.5] };
            }
            c.fig4.train = t4;
            c.fig5.train = t5;
            c.fig5.jitter = jitter;
            c.out_dir = PathBuf::from(format!("out/{seed}"));
            c
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trips(c in experiment_config()) {
        prop_assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}

#[test]
fn fig3_defaults_write_four_csvs_and_a_decreasing_summary() {
    let dir = tmp();
    let out = dir.path().join("f3");
    assert_eq!(run_args(&["fig3", "--out", out.to_str().unwrap()]), 0);
    let csvs: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    assert_eq!(csvs.len(), 4);
    let text = fs::read_to_string(out.join("fig3_sigma_0.31.csv")).unwrap();
    assert!(text.starts_with("x,score_true,score_rcae,score_dae\n"));
    assert_eq!(text.lines().count(), 1001);
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("fig3_summary.json")).unwrap()).unwrap();
    let rows = s["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    for key in ["rmse_rcae", "rmse_dae"] {
        let v: Vec<f64> = rows.iter().map(|r| r[key].as_f64().unwrap()).collect();
        assert!(v.windows(2).all(|w| w[1] < w[0]), "{key}: {v:?}");
    }
}

#[test]
fn fig3_rejects_non_positive_sigma() {
    let dir = tmp();
    let out = dir.path().to_str().unwrap().to_string();
    assert_eq!(run_args(&["fig3", "--sigma", "0", "--out", &out]), 2);
    assert_eq!(run_args(&["fig3", "--sigma", "0.3,-1", "--out", &out]), 2);
    assert_eq!(run_args(&["fig3", "--sigma", "0.3,0.1", "--svg", "--out", &out]), 0);
    assert!(fs::read_to_string(dir.path().join("fig3_sigma_0.1.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn usage_errors_exit_2_and_help_exits_0() {
    assert_eq!(run_args(&["--help"]), 0);
    assert_eq!(run_args(&["fig9"]), 2);
    assert_eq!(run_args(&["fig3", "--no-such-flag"]), 2);
    assert_eq!(run_args(&["validate", "nonsense"]), 2);
    assert_eq!(run_args(&["fig3", "--config", "/definitely/missing.toml"]), 2);
    let dir = tmp();
    let cfg = write_config(dir.path(), "experiment = \"fig4\"\n");
    assert_eq!(run_args(&["fig3", "--config", cfg.to_str().unwrap()]), 2);
    let cfg = write_config(dir.path(), "[fig3]\ngrid_points = 2\n");
    assert_eq!(run_args(&["fig3", "--config", cfg.to_str().unwrap()]), 2);
}

#[test]
fn thread_count_must_be_positive() {
    assert_eq!(parse_threads(" 3 ").unwrap(), 3);
    for bad in ["0", "-1", "many", ""] {
        assert!(parse_threads(bad).unwrap_err().downcast_ref::<UsageError>().is_some());
    }
}

#[test]
fn fig4_checkpoint_reproduces_the_field_bytes() {
    let dir = tmp();
    let cfg = write_config(dir.path(), TINY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let c = cfg.to_str().unwrap();
    assert_eq!(run_args(&["fig4", "--config", c, "--out", a.to_str().unwrap()]), 0);
    let ck = a.join("fig4_model.json");
    assert_eq!(run_args(&["fig4", "--config", c, "--out", b.to_str().unwrap(), "--load", ck.to_str().unwrap()]), 0);
    let field = fs::read(a.join("fig4_field.csv")).unwrap();
    assert_eq!(field, fs::read(b.join("fig4_field.csv")).unwrap());
    assert_eq!(fs::read(a.join("fig4_field_zoom.csv")).unwrap(), fs::read(b.join("fig4_field_zoom.csv")).unwrap());
    let text = String::from_utf8(field).unwrap();
    assert_eq!(text.lines().next().unwrap(), "x0,x1,v0,v1");
    assert_eq!(text.lines().count(), 1 + 36);
    assert!(!b.join("fig4_model.json").exists());
    fs::write(dir.path().join("bad.json"), "{}").unwrap();
    let bad = dir.path().join("bad.json");
    assert_eq!(run_args(&["fig4", "--config", c, "--out", b.to_str().unwrap(), "--load", bad.to_str().unwrap()]), 1);
}

#[test]
fn fig5_writes_pair_projections_and_diagnostics() {
    let dir = tmp();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("f5");
    assert_eq!(run_args(&["fig5", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
    for (i, j) in [(0, 1), (1, 2), (2, 0)] {
        for kind in ["data", "samples"] {
            let t = fs::read_to_string(out.join(format!("fig5_{kind}_x{i}_x{j}.csv"))).unwrap();
            assert_eq!(t.lines().next().unwrap(), format!("x{i},x{j}"));
        }
    }
    let d: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("fig5_diagnostics.json")).unwrap()).unwrap();
    let a = d["acceptance_rate"].as_f64().unwrap();
    assert!(a > 0.0 && a < 1.0, "{a}");
    assert_eq!(d["retained"].as_u64().unwrap(), 80);
    assert_eq!(d["chains"].as_array().unwrap().len(), 2);
    let f = d["proximity_fraction"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f));
    assert_eq!(fs::read_to_string(out.join("fig5_chain1.jsonl")).unwrap().lines().count(), 40);
}

#[test]
fn fig6_is_seed_reproducible() {
    let dir = tmp();
    let cfg = write_config(dir.path(), TINY);
    let c = cfg.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run_args(&["fig6", "--config", c, "--seed", "5", "--out", a.to_str().unwrap()]), 0);
    assert_eq!(run_args(&["fig6", "--config", c, "--seed", "5", "--out", b.to_str().unwrap()]), 0);
    for f in ["fig6_summary.json", "fig6_undertrained_attractors.json", "fig6_well_trained_field.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("fig6_undertrained_attractors.json")).unwrap()).unwrap();
    assert_eq!(r["outcomes"].as_array().unwrap().len(), 16);
}

#[test]
fn validate_writes_a_report_matching_its_exit_code() {
    let dir = tmp();
    let cfg = write_config(dir.path(), "[validate]\nmc_samples = 20000\n");
    let out = dir.path().join("v");
    let code = run_args(&["validate", "ball", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("validate_ball.json")).unwrap()).unwrap();
    assert_eq!(code, if r["passed"].as_bool().unwrap() { 0 } else { 1 });
    let checks = r["checks"].as_array().unwrap();
    assert!(checks.len() >= 7);
    assert_eq!(r["tables"]["ball.monomials"].as_array().unwrap().len(), 7 + 28 + 84 + 462);
}

#[test]
fn check_relations_and_lines() {
    assert!(validate::Check::new("a", 1.0, validate::Relation::Lt, 2.0).passed);
    assert!(!validate::Check::new("a", 2.0, validate::Relation::Lt, 2.0).passed);
    assert!(validate::Check::new("a", 2.0, validate::Relation::Le, 2.0).passed);
    assert!(!validate::Check::new("a", f64::NAN, validate::Relation::Ge, 0.0).passed);
    let c = validate::Check::new("x", 0.5, validate::Relation::Gt, 0.0).with_detail("d");
    assert_eq!(c.line(), "PASS x: 5.000000e-1 > 0e0 (d)");
}

#[test]
fn loss_gap_model_is_identity_plus_scaled_network() {
    let a = validate::loss_gap_model(2, 0.1, 3);
    let b = validate::loss_gap_model(2, 0.05, 3);
    let x = [0.3, -0.2];
    let (ra, rb) = (a.reconstruct(&x), b.reconstruct(&x));
    for k in 0..2 {
        // ψ is the same network, so (r − x)/σ² agrees across σ
        let (pa, pb) = ((ra[k] - x[k]) / 0.01, (rb[k] - x[k]) / 0.0025);
        assert!((pa - pb).abs() < 1e-4 * pa.abs().max(1e-3) + 1e-6, "{pa} vs {pb}");
    }
}

#[test]
fn svg_emitters_handle_empty_and_degenerate_input() {
    assert!(svg::scatter(&[]).starts_with("<svg"));
    let q = svg::quiver(&[[0.0, 0.0]], &[([0.0, 0.0], [0.0, 0.0]), ([1.0, 1.0], [f64::NAN, 1.0])]);
    assert!(q.ends_with("</svg>\n"));
    assert!(!q.contains("NaN"));
}
