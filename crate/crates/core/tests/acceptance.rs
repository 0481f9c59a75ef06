//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vgpmil::data::{gen_synth, load_csv, save_csv, stratified_split, MilDataset, SynthConfig};
use vgpmil::gsm::{log_phi, sigmoid, GsmDensity};
use vgpmil::hyperopt::{log_z_estimate, rff_sample_prior_f, HyperoptWorkspace};
use vgpmil::inference::{
    elbo_augmented, init_state, train, update_pi, update_qu, update_theta, ModelConfig,
};
use vgpmil::kernel::{KernelParams, NormMode};
use vgpmil::metrics::{evaluate, predict_dataset};
use vgpmil::model::TrainedModel;
use vgpmil::predict::BagPrediction;
use vgpmil::quadrature::integrate;
use vgpmil::verification::{
    check_elbo_equality, check_gamma_posterior, check_optimal_xi, check_sg_gsm_pointwise, check_theta_monotone,
    gamma_ratio_spread, pg_draws, pg_logistic_estimate, update_deviation,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn synthetic_split(seed: u64) -> (MilDataset, MilDataset) {
    let data = gen_synth(&SynthConfig {
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    stratified_split(&data, 0.2, seed).unwrap()
}

fn trained_model(train_set: &MilDataset, seed: u64) -> TrainedModel {
    let config = ModelConfig {
        inducing: 50,
        seed,
        ..ModelConfig::default()
    };
    // Unit-scale features with separation 3 need a prior wider than v = 0.5 to
    // push negative instances far enough below zero for the noisy-OR bag score.
    let kernel = KernelParams::squared(2.0, train_set.dim() as f64).unwrap();
    train(train_set, None, &config, kernel, &GsmDensity::HyperbolicSecant).unwrap()
}

fn update_equivalence() -> Outcome {
    let d = update_deviation(11, (5, 6, 5, 3), NormMode::Squared, 20).unwrap();
    outcome(d < 1e-8, format!("max per-sweep deviation of m, S, pi {d:e} (< 1e-8)"))
}

fn elbo_equality() -> Outcome {
    let r = check_elbo_equality(100);
    outcome(r.passed && r.discrepancy <= 1e-9, format!("max |ELBO_SG - ELBO_GSM| {:e} over 10 states (<= 1e-9)", r.discrepancy))
}

fn pointwise_identity() -> Outcome {
    let r = check_sg_gsm_pointwise(7);
    outcome(r.passed, format!("max pointwise gap {:e} over 1000 triples (<= 1e-10)", r.discrepancy))
}

fn theta_limits() -> Outcome {
    let mono = check_theta_monotone();
    let hs = GsmDensity::HyperbolicSecant;
    let at_zero = hs.theta(1e-9).unwrap();
    let at_one = hs.theta(1.0).unwrap();
    let exact_one = 0.5f64.tanh() / 2.0;
    let ok = mono.passed && (at_zero - 0.25).abs() <= 1e-6 && (at_one - exact_one).abs() <= 1e-12;
    outcome(
        ok,
        format!(
            "monotone violations {}, theta(0+) = {at_zero}, |theta(1) - tanh(0.5)/2| = {:e}",
            mono.discrepancy,
            (at_one - exact_one).abs()
        ),
    )
}

fn pg_identity() -> Outcome {
    let draws = pg_draws(100_000, 5);
    let mut worst: f64 = 0.0;
    for x in [0.5, 1.0, 2.0] {
        let (est, se) = pg_logistic_estimate(&draws, x);
        worst = worst.max((est - sigmoid(x)).abs() / se);
    }
    outcome(worst <= 3.0, format!("worst |z| {worst:.3} over x in {{0.5, 1, 2}} (<= 3)"))
}

fn gamma_gsm() -> Outcome {
    let mut spread: f64 = 0.0;
    for a in [1.0, 2.0] {
        for b in [1.0, 4.0] {
            spread = spread.max(gamma_ratio_spread(a, b).unwrap());
        }
    }
    let post = check_gamma_posterior();
    let theta = GsmDensity::gamma_mix(1.0, 2.5).unwrap().theta(1.3).unwrap();
    let ok = spread <= 1e-6 && post.passed && (theta - 0.298_954).abs() <= 1e-6;
    outcome(
        ok,
        format!(
            "ratio spread {spread:e}, posterior-mean gap {:e}, theta_G(1.3; 1, 2.5) = {theta:.7}",
            post.discrepancy
        ),
    )
}

fn elbo_monotone() -> Outcome {
    let data = gen_synth(&SynthConfig {
        num_bags: 20,
        bag_size: 5,
        dim: 3,
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    let config = ModelConfig {
        inducing: 10,
        ..ModelConfig::default()
    };
    let mut worst_drop: f64 = 0.0;
    for psi in [GsmDensity::HyperbolicSecant, GsmDensity::gamma_mix(1.0, 2.5).unwrap()] {
        let kernel = KernelParams::squared(0.5, 3.0).unwrap();
        let mut state = init_state(&data, &config, kernel, &psi, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let mut prev = elbo_augmented(&state, &data, &psi, config.h).unwrap();
        for _ in 0..50 {
            for step in 0..3 {
                match step {
                    0 => update_theta(&mut state, &psi),
                    1 => update_qu(&mut state).unwrap(),
                    _ => update_pi(&mut state, &data, config.h),
                }
                let e = elbo_augmented(&state, &data, &psi, config.h).unwrap();
                worst_drop = worst_drop.max(prev - e);
                prev = e;
            }
        }
    }
    outcome(worst_drop <= 1e-9, format!("largest single-update decrease {worst_drop:e} over 50 sweeps, both psi (<= 1e-9)"))
}

fn log_z_sanity() -> Outcome {
    let x = DMatrix::from_element(1, 1, 0.3);
    let kernel = KernelParams::squared(0.7, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ws_hs = HyperoptWorkspace::with_rng(1, 100, 64, &mut rng).unwrap();
    let hs_value = log_z_estimate(&ws_hs, &x, &kernel, &GsmDensity::HyperbolicSecant, &mut rng).unwrap();

    let psi = GsmDensity::gamma_mix(1.0, 2.5).unwrap();
    let n = 20_000;
    let ws = HyperoptWorkspace::with_rng(1, 200, n, &mut rng).unwrap();
    let est = log_z_estimate(&ws, &x, &kernel, &psi, &mut ChaCha8Rng::seed_from_u64(2)).unwrap().exp();
    let ratio = |f: f64| (psi.log_psi(f).unwrap() - log_phi(f)).exp();
    let draws = rff_sample_prior_f(&ws, &x, &kernel, &mut ChaCha8Rng::seed_from_u64(2), n).unwrap();
    let vals: Vec<f64> = draws.iter().map(|&f| ratio(f)).collect();
    let mean = vals.iter().sum::<f64>() / n as f64;
    let se = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt() / (n as f64).sqrt();
    let v = kernel.variance();
    let exact = integrate(
        |f| (-0.5 * f * f / v).exp() / (2.0 * std::f64::consts::PI * v).sqrt() * ratio(f),
        -40.0,
        40.0,
        1e-13,
        0.0,
    )
    .unwrap()
    .value;
    let z = (est - exact).abs() / se;
    outcome(hs_value == 0.0 && z <= 3.0, format!("HS log Z = {hs_value}, GammaMix |z| = {z:.3} (<= 3)"))
}

fn optimal_xi() -> Outcome {
    let r = check_optimal_xi(21);
    outcome(r.passed, format!("worst argmax offset {:.3} grid steps (<= 1)", r.discrepancy))
}

fn end_to_end() -> Outcome {
    let (train_set, test_set) = synthetic_split(0);
    let start = Instant::now();
    let model = trained_model(&train_set, 0);
    let elapsed = start.elapsed();
    let report = evaluate(&model, &test_set, 1000, 0.5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let bag_auc = report.bag.auc.unwrap_or(0.0);
    let inst_auc = report.instance.as_ref().and_then(|i| i.auc).unwrap_or(0.0);
    outcome(
        bag_auc >= 0.95 && inst_auc >= 0.90 && elapsed < Duration::from_secs(60),
        format!(
            "test bag AUC {bag_auc:.4} (>= 0.95), instance AUC {inst_auc:.4} (>= 0.90), training {:.1}s (< 60s), {} epochs",
            elapsed.as_secs_f64(),
            model.metadata().epochs_run
        ),
    )
}

fn predictions_csv(data: &MilDataset, preds: &[BagPrediction]) -> String {
    let mut s = String::new();
    for (b, p) in preds.iter().enumerate() {
        s.push_str(&format!("{},{:?},{:?}\n", data.bag_ids()[b], p.mean, p.std));
        for ip in &p.instances {
            s.push_str(&format!("{:?},{:?}\n", ip.mean, ip.std));
        }
    }
    s
}

fn prediction_invariants() -> Outcome {
    let (train_set, test_set) = synthetic_split(4);
    let config = ModelConfig {
        inducing: 20,
        max_epochs: 20,
        seed: 4,
        ..ModelConfig::default()
    };
    let kernel = KernelParams::squared(2.0, train_set.dim() as f64).unwrap();
    let model = train(&train_set, None, &config, kernel, &GsmDensity::HyperbolicSecant).unwrap();
    let a = predict_dataset(&model, &test_set, 1000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let b = predict_dataset(&model, &test_set, 1000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let mut in_range = true;
    let mut worst_gap = f64::NEG_INFINITY;
    for p in &a {
        in_range &= (0.0..=1.0).contains(&p.mean);
        for ip in &p.instances {
            in_range &= (0.0..=1.0).contains(&ip.mean);
            worst_gap = worst_gap.max(ip.mean - p.mean);
        }
    }
    let identical = predictions_csv(&test_set, &a) == predictions_csv(&test_set, &b);
    outcome(
        in_range && worst_gap <= 1e-12 && identical,
        format!("probabilities in [0,1]: {in_range}, max(instance - bag) {worst_gap:e}, reproducible: {identical}"),
    )
}

fn round_trip() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_synth(&SynthConfig {
        num_bags: 30,
        seed: 8,
        ..SynthConfig::default()
    })
    .unwrap();
    let csv = dir.path().join("data.csv");
    save_csv(&data, &csv).unwrap();
    let loaded = load_csv(&csv).unwrap();
    let same_data = loaded == data;

    let config = ModelConfig {
        inducing: 20,
        max_epochs: 20,
        seed: 8,
        ..ModelConfig::default()
    };
    let kernel = KernelParams::squared(0.5, 5.0).unwrap();
    let model = train(&loaded, None, &config, kernel, &GsmDensity::gamma_mix(1.0, 4.0).unwrap()).unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let back = TrainedModel::load(&path).unwrap();
    let p1 = predict_dataset(&model, &loaded, 200, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let p2 = predict_dataset(&back, &loaded, 200, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let same_preds = predictions_csv(&loaded, &p1) == predictions_csv(&loaded, &p2);
    outcome(same_data && same_preds, format!("dataset identical: {same_data}, predictions identical: {same_preds}"))
}

type Criterion = (&'static str, fn() -> Outcome, u64);

fn main() {
    let criteria: [Criterion; 12] = [
        ("update-equation equivalence", update_equivalence, 5),
        ("ELBO equality", elbo_equality, 5),
        ("pointwise bound identity", pointwise_identity, 1),
        ("theta monotonicity and limits", theta_limits, 1),
        ("Polya-Gamma logistic identity", pg_identity, 10),
        ("Gamma mixture representation", gamma_gsm, 5),
        ("coordinate-ascent monotonicity", elbo_monotone, 30),
        ("log-normalizer sanity", log_z_sanity, 5),
        ("optimal anchor lemma", optimal_xi, 2),
        ("end-to-end synthetic", end_to_end, 120),
        ("prediction invariants", prediction_invariants, 5),
        ("CSV and model round trip", round_trip, 5),
    ];
    let mut failures = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = run();
        let secs = start.elapsed().as_secs_f64();
        let in_time = secs < *budget as f64;
        let passed = out.passed && in_time;
        if !passed {
            failures += 1;
        }
        println!(
            "{} {:>2} {name}: {} [{secs:.2}s, budget {budget}s]",
            if passed { "PASS" } else { "FAIL" },
            i + 1,
            out.detail
        );
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
