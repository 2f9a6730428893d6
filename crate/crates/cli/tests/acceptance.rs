//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! with its wall time against the allowed budget, and exits non-zero if any
//! criterion fails.
//!
//! Oracles here are written independently of the library code they check.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use bctrust::access::AccessLevel;
use bctrust::canonical;
use bctrust::certgen::{invariance_check, Transform, TransformSpec};
use bctrust::certificate::{
    AppliedTransform, BehaviorCertificate, CertificateKind, Claim, Conclusion, Evidence, GenerationMethod, Grades,
    Outcome, Polarity, Scope,
};
use bctrust::contract::{Clause, Comparator, Contract, SuccessPredicate};
use bctrust::data::{DataSource, Dataset, Value};
use bctrust::metrics::{evaluate_task, MetricRegistry, Task};
use bctrust::rng::{derive_seed, unit_from_bits};
use bctrust::runner::{spawn_model, ModelHandle, Transport};
use bctrust::scoring::{clopper_pearson, estimate_trust, infer_trust, EstimateOptions};
use bctrust::search::{evolve, evolve_with, GaussianMutator, HyperValue, Scored, SearchConfig, Trainable};
use bctrust::selection::posterior;
use bctrust::trust::PriorSpec;
use bctrust::Error;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

type Check = Result<(), String>;

/// Name, time limit in seconds, check.
type Criterion = (&'static str, u64, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let held: bool = $cond;
        if !held {
            return Err(format!($($fmt)+));
        }
    };
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_bctrust")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

// ---------------------------------------------------------------------------
// 1. determinism replay

fn builtins() -> Vec<(&'static str, serde_json::Value)> {
    use serde_json::json;
    vec![
        ("mean_aggregator", json!({})),
        ("linear", json!({"weights": [0.5, -1.5], "bias": 0.25})),
        ("weighted_sum", json!({"weights": [2.0, 3.0]})),
        ("bernoulli_success", json!({"p": 0.9})),
        ("gaussian_likelihood", json!({"mu": 0.1, "sigma": 1.3})),
        ("spurious_feature_classifier", json!({"feature": "spurious", "threshold": 0.5})),
        ("seeded_noise", json!({"scale": 0.7})),
    ]
}

fn replay_twice(h: &mut ModelHandle, probe: &Dataset, label: &str) -> Check {
    let a = canonical::to_string(&h.eval(&probe.points, 99).map_err(e)?).map_err(e)?;
    let b = canonical::to_string(&h.eval(&probe.points, 99).map_err(e)?).map_err(e)?;
    ensure!(a == b, "{label}: two passes differ");
    let bc = h.audit_determinism(probe, 99, 2).map_err(e)?;
    ensure!(bc.outcome == Outcome::Positive, "{label}: audit not positive");
    Ok(())
}

fn determinism_replay() -> Check {
    let probe = DataSource::generator("spurious_shortcut", serde_json::json!({}), 100, 1).sample(None).map_err(e)?;
    ensure!(probe.len() == 100, "probe has {} points", probe.len());
    for (name, params) in builtins() {
        let mut local = spawn_model(Transport::builtin(name, params.clone()), AccessLevel::black_box()).map_err(e)?;
        replay_twice(&mut local, &probe, name)?;
        // the same model behind the subprocess transport
        let args = vec!["serve".into(), "--builtin".into(), name.into(), "--builtin-params".into(), params.to_string()];
        let mut remote =
            spawn_model(Transport::Subprocess { program: bin().into(), args }, AccessLevel::black_box()).map_err(e)?;
        replay_twice(&mut remote, &probe, name)?;
        let l = canonical::to_string(&local.eval(&probe.points, 5).map_err(e)?).map_err(e)?;
        let r = canonical::to_string(&remote.eval(&probe.points, 5).map_err(e)?).map_err(e)?;
        ensure!(l == r, "{name}: subprocess and in-process outputs differ");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// 2. access gating

fn access_gating() -> Check {
    let probe = DataSource::generator("gaussian", serde_json::json!({"dim": 3}), 4, 2).sample(None).map_err(e)?;
    let serve = || Transport::Subprocess {
        program: bin().into(),
        args: vec!["serve".into(), "--builtin".into(), "mean_aggregator".into()],
    };
    for transport in [Transport::builtin("mean_aggregator", serde_json::json!({})), serve()] {
        for level in 1u8..=3 {
            let budget = (level == 1).then_some(5);
            let mut h = spawn_model(transport.clone(), AccessLevel::new(level, budget).map_err(e)?).map_err(e)?;
            let meta = h.handshake().map_err(e)?;
            let visible = !meta.design_declarations.is_empty();
            ensure!(visible == (level == 3), "level {level}: declarations visible = {visible}");
            let mut admitted = 0;
            for _ in 0..6 {
                match h.eval(&probe.points, 0) {
                    Ok(_) => admitted += 1,
                    Err(Error::BudgetExhausted { budget: 5 }) if level == 1 => {}
                    Err(other) => return Err(format!("level {level}: unexpected {other}")),
                }
            }
            let expected = if level == 1 { 5 } else { 6 };
            ensure!(admitted == expected, "level {level}: admitted {admitted} of 6 calls");
            if level == 1 {
                ensure!(h.runs_consumed() == 5, "rejected call consumed budget");
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// 3. invariance detection

fn invariance_detection() -> Check {
    let data = DataSource::generator("gaussian", serde_json::json!({"dim": 5}), 200, 3).sample(None).map_err(e)?;
    let spec = TransformSpec::new(Transform::Permutation, 11);
    let mut mean = spawn_model(Transport::builtin("mean_aggregator", serde_json::json!({})), AccessLevel::black_box())
        .map_err(e)?;
    let bc = invariance_check(&mut mean, &data, &spec, 1000, 0.0).map_err(e)?;
    ensure!(bc.outcome == Outcome::Positive, "mean_aggregator flagged");
    ensure!(bc.evidence.measured.get("max_gap") == Some(&0.0), "gap {:?}", bc.evidence.measured.get("max_gap"));
    ensure!(bc.evidence.measured.get("n_samples") == Some(&1000.0), "not 1000 samples");

    let params = serde_json::json!({"weights": [1.0, 2.0, 3.0, 4.0, 5.0]});
    let mut ws = spawn_model(Transport::builtin("weighted_sum", params), AccessLevel::black_box()).map_err(e)?;
    let bc = invariance_check(&mut ws, &data, &spec, 1000, 0.0).map_err(e)?;
    ensure!(bc.outcome == Outcome::Negative, "weighted_sum passed");
    let cx = bc.evidence.counterexamples.first().ok_or("no counterexample")?;
    // replay: re-apply the recorded permutation by hand and re-evaluate
    let Some(AppliedTransform::Permutation { order }) = &cx.transform else {
        return Err("counterexample lacks its permutation".into());
    };
    let x = cx.input.flat_numeric();
    let permuted: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let variant = cx.input.with_flat_numeric(&permuted).map_err(e)?;
    ensure!(cx.variant.as_ref() == Some(&variant), "recorded variant differs from replayed one");
    let out = ws.eval(&[cx.input.clone(), variant], cx.seed).map_err(e)?;
    ensure!(out == cx.outputs, "replayed outputs {out:?} != recorded {:?}", cx.outputs);
    let (Some(a), Some(b)) = (out[0].as_f64(), out[1].as_f64()) else { return Err("non-numeric".into()) };
    ensure!((a - b).abs() == cx.gap && cx.gap > 0.0, "gap {} vs {}", (a - b).abs(), cx.gap);
    Ok(())
}

// ---------------------------------------------------------------------------
// 4. spurious shortcut

fn shortcut_contract(id: &str, correlation: f64, seed: u64) -> Contract {
    Contract {
        id: id.into(),
        data: DataSource::generator("spurious_shortcut", serde_json::json!({"correlation": correlation}), 100, seed),
        tasks: vec![Task::new("acc", "accuracy_loss")],
        success: SuccessPredicate::all(vec![Clause { task: "acc".into(), comparator: Comparator::Le, threshold: 0.1 }]),
        description: String::new(),
    }
}

fn spurious_shortcut() -> Check {
    let registry = MetricRegistry::builtin();
    let params = serde_json::json!({"feature": "spurious", "threshold": 0.5});
    let mut h = spawn_model(Transport::builtin("spurious_feature_classifier", params), AccessLevel::black_box())
        .map_err(e)?;
    let task = Task::new("acc", "accuracy_loss");
    let mut loss_at = |correlation: f64| -> Result<f64, String> {
        let data = DataSource::generator("spurious_shortcut", serde_json::json!({"correlation": correlation}), 10_000, 77)
            .sample(None)
            .map_err(e)?;
        let outputs = h.eval(&data.points, 0).map_err(e)?;
        // independent count: the label is the target, the model's answer is its output
        let wrong = data
            .points
            .iter()
            .zip(&outputs)
            .filter(|(p, o)| p.target.as_ref().and_then(Value::as_f64) != o.as_f64())
            .count() as f64
            / data.len() as f64;
        let metric = evaluate_task(&registry, &task, &outputs, &data).map_err(e)?;
        ensure!(wrong == metric, "metric {metric} disagrees with direct count {wrong}");
        Ok(metric)
    };
    let correlated = loss_at(0.98)?;
    let shifted = loss_at(0.5)?;
    ensure!(correlated <= 0.05, "correlated loss {correlated}");
    ensure!((shifted - 0.5).abs() <= 0.05, "decorrelated loss {shifted}");
    // Monte-Carlo oracle: loss equals the disagreement rate 1 - correlation
    ensure!((correlated - 0.02).abs() < 0.01, "correlated loss {correlated} far from 0.02");

    let opts = EstimateOptions { n_trials: 100, seed: 5, prior: PriorSpec::default(), confidence: 0.95 };
    let train = estimate_trust(&mut h, &registry, &shortcut_contract("train", 0.98, 1), &opts).map_err(e)?;
    let ood = estimate_trust(&mut h, &registry, &shortcut_contract("shifted", 0.5, 1), &opts).map_err(e)?;
    ensure!(ood.value < train.value, "shifted {} not below training {}", ood.value, train.value);
    Ok(())
}

// ---------------------------------------------------------------------------
// 5. Clopper-Pearson

fn ln_choose(n: u64, k: u64) -> f64 {
    (1..=k).map(|i| ((n - k + i) as f64).ln() - (i as f64).ln()).sum()
}

/// P(X >= k) for X ~ Bin(n, p), summed term by term.
fn upper_tail(k: u64, n: u64, p: f64) -> f64 {
    (k..=n)
        .map(|i| {
            let log_p = if i == 0 { 0.0 } else { i as f64 * p.ln() };
            let log_q = if i == n { 0.0 } else { (n - i) as f64 * (1.0 - p).ln() };
            (ln_choose(n, i) + log_p + log_q).exp()
        })
        .sum()
}

/// Root of an increasing function on [0, 1] by bisection.
fn bisect(f: impl Fn(f64) -> f64, target: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn oracle_interval(k: u64, n: u64, conf: f64) -> (f64, f64) {
    let a = (1.0 - conf) / 2.0;
    let lower = if k == 0 { 0.0 } else { bisect(|p| upper_tail(k, n, p), a) };
    // P(X <= k) = 1 - P(X >= k + 1) decreases in p
    let upper = if k == n { 1.0 } else { bisect(|p| upper_tail(k + 1, n, p), 1.0 - a) };
    (lower, upper)
}

fn clopper_pearson_oracle() -> Check {
    for conf in [0.9, 0.95, 0.99] {
        for n in 1..=30u64 {
            for k in 0..=n {
                let got = clopper_pearson(k, n, conf).map_err(e)?;
                let (lo, hi) = oracle_interval(k, n, conf);
                ensure!(
                    (got.lower - lo).abs() <= 1e-6 && (got.upper - hi).abs() <= 1e-6,
                    "k={k} n={n} conf={conf}: [{}, {}] vs oracle [{lo}, {hi}]",
                    got.lower,
                    got.upper
                );
            }
        }
    }
    for (pi, p) in [0.1, 0.5, 0.9].into_iter().enumerate() {
        let mut covered = 0;
        for rep in 0..500u64 {
            let base = derive_seed(1234 + pi as u64, rep);
            let k = (0..100u64).filter(|i| unit_from_bits(derive_seed(base, *i)) < p).count() as u64;
            let ci = clopper_pearson(k, 100, 0.95).map_err(e)?;
            if ci.lower <= p && p <= ci.upper {
                covered += 1;
            }
        }
        let rate = covered as f64 / 500.0;
        ensure!(rate >= 0.94, "coverage {rate} at p = {p}");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// 6. posterior

fn posterior_properties() -> Check {
    // normalization over random candidate sets
    for set in 0..2000u64 {
        let u = |i: u64| unit_from_bits(derive_seed(set, i));
        let size = 1 + (u(0) * 10.0) as usize;
        let raw: Vec<f64> = (0..size).map(|i| 0.05 + u(1 + i as u64)).collect();
        let total: f64 = raw.iter().sum();
        let priors: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let lls: Vec<f64> = (0..size).map(|i| -1000.0 * u(100 + i as u64)).collect();
        let ids: Vec<String> = (0..size).map(|i| format!("m{i}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let post = posterior(&refs, &priors, &lls).map_err(e)?;
        let sum: f64 = post.values().sum();
        ensure!((sum - 1.0).abs() <= 1e-12, "set {set}: posterior sums to {sum}");
        ensure!(post.values().all(|v| v.is_finite() && *v >= 0.0), "set {set}: bad mass");
    }
    // symmetry: relabeling swaps masses exactly; tied candidates get equal mass
    let a = posterior(&["a", "b"], &[0.3, 0.7], &[-4.0, -9.5]).map_err(e)?;
    let b = posterior(&["a", "b"], &[0.7, 0.3], &[-9.5, -4.0]).map_err(e)?;
    ensure!(a["a"] == b["b"] && a["b"] == b["a"], "relabeling is not exact");
    let tied = posterior(&["x", "y", "z"], &[0.25, 0.25, 0.5], &[-3.0, -3.0, -7.0]).map_err(e)?;
    ensure!(tied["x"] == tied["y"], "tied candidates differ");
    // prior dominance: equal likelihoods return the prior exactly
    let priors = [0.1, 0.2, 0.3, 0.4];
    let post = posterior(&["p", "q", "r", "s"], &priors, &[-42.0; 4]).map_err(e)?;
    ensure!(post.values().copied().eq(priors.iter().copied()), "prior not returned verbatim: {post:?}");
    // hand oracle: uniform prior, log-likelihoods -10 and -12
    let post = posterior(&["a", "b"], &[0.5, 0.5], &[-10.0, -12.0]).map_err(e)?;
    let oracle = 1.0 / (1.0 + (-2.0f64).exp());
    ensure!((post["a"] - oracle).abs() <= 1e-9, "{} vs {oracle}", post["a"]);
    ensure!((post["b"] - (1.0 - oracle)).abs() <= 1e-9, "{} vs {}", post["b"], 1.0 - oracle);
    // a gap of 800 nats underflows naive exponentiation but not the posterior
    let post = posterior(&["a", "b"], &[0.5, 0.5], &[-100.0, -900.0]).map_err(e)?;
    ensure!(post.values().all(|v| v.is_finite()), "non-finite posterior {post:?}");
    ensure!(post["a"] == 1.0 && (post.values().sum::<f64>() - 1.0).abs() <= 1e-12, "{post:?}");
    Ok(())
}

// ---------------------------------------------------------------------------
// 7. search

const GOLDEN: &str = include_str!("../../core/tests/golden/quadratic_search.jsonl");

fn search_properties() -> Check {
    let params = serde_json::json!({"weights": [1.0, -2.0, 0.0, 0.0], "bias": 0.5, "noise": 0.5});
    let train = DataSource::generator("linear_regression", params.clone(), 15, 1).sample(None).map_err(e)?;
    let contract = Contract {
        id: "ridge".into(),
        data: DataSource::generator("linear_regression", params, 25, 2),
        tasks: vec![Task::new("mse", "mse")],
        success: SuccessPredicate::all(vec![Clause { task: "mse".into(), comparator: Comparator::Le, threshold: 0.45 }]),
        description: String::new(),
    };
    let mut config = SearchConfig::new(Trainable::RidgeRegression.default_hyperparameters(), 4, 20, 31);
    config.n_trials = 10;
    ensure!(config.elitism, "elitism off by default");
    let out = evolve(Trainable::RidgeRegression, &train, &contract, &MetricRegistry::builtin(), &config).map_err(e)?;
    let best = out.round_best();
    ensure!(best.len() == 20, "{} rounds", best.len());
    ensure!(best.windows(2).all(|w| w[1] >= w[0]), "round-best decreased: {best:?}");

    let initial = BTreeMap::from([("lambda".to_owned(), HyperValue::Real(0.0))]);
    let quad = SearchConfig::new(initial, 8, 20, 2024);
    let out = evolve_with(&quad, &GaussianMutator, &mut |l, _, _| {
        let x = l["lambda"].as_f64().unwrap_or(f64::NAN);
        Ok(Scored { score: -(x - 3.0) * (x - 3.0), eval_calls: 0 })
    })
    .map_err(e)?;
    let lambda = out.best["lambda"].as_f64().ok_or("no lambda")?;
    ensure!((lambda - 3.0).abs() < 0.5, "best lambda {lambda}");
    ensure!(out.history_jsonl().map_err(e)? == GOLDEN, "history differs from the golden file");
    Ok(())
}

// ---------------------------------------------------------------------------
// 8. pooling

fn pooled_bc(polarity: Polarity, relevance: u8, correctness: u8, tag: u64) -> BehaviorCertificate {
    let mut bc = BehaviorCertificate::new(
        CertificateKind::Interactive,
        GenerationMethod::InvarianceCheck,
        if polarity == Polarity::Refutes { Outcome::Negative } else { Outcome::Positive },
        Evidence {
            generator: "fixture".into(),
            model_id: "m".into(),
            source_id: None,
            inputs: Vec::new(),
            seeds: vec![tag],
            parameters: serde_json::Value::Null,
            measured: BTreeMap::new(),
            counterexamples: Vec::new(),
        },
        Conclusion {
            claim: Claim::Deterministic { holds: polarity != Polarity::Refutes },
            subject_task: None,
            subject_source: None,
            scope: Scope::Universal,
        },
        String::new(),
        String::new(),
    );
    bc.grades = Some(Grades::new(correctness, relevance, 3).expect("grades in range"));
    bc.polarity = Some(polarity);
    bc.graded_against = Some("pool".into());
    bc
}

fn pool_contract() -> Contract {
    Contract {
        id: "pool".into(),
        data: DataSource::inline(Vec::new()),
        tasks: vec![Task::new("acc", "accuracy_loss")],
        success: SuccessPredicate::all(vec![Clause { task: "acc".into(), comparator: Comparator::Le, threshold: 0.1 }]),
        description: String::new(),
    }
}

fn polarity_of(i: u8) -> Polarity {
    match i {
        0 => Polarity::Supports,
        1 => Polarity::Refutes,
        _ => Polarity::Neutral,
    }
}

fn pooling_properties() -> Check {
    let contract = pool_contract();
    let grade = || (1u8..=5, 1u8..=5);
    let strategy = (
        prop::collection::vec((0u8..3, grade()), 0..12),
        grade(),
        0.5f64..4.0,
        0.2f64..5.0,
        0.2f64..5.0,
    );
    let mut runner = TestRunner::new(Config { cases: 200, failure_persistence: None, ..Config::default() });
    let checked = std::cell::Cell::new(0u32);
    runner
        .run(&strategy, |(set, (r, c), kappa, alpha, beta)| {
            checked.set(checked.get() + 1);
            let prior = PriorSpec::new(alpha, beta).unwrap();
            let bcs: Vec<_> = set
                .iter()
                .enumerate()
                .map(|(i, (p, (r, c)))| pooled_bc(polarity_of(*p), *r, *c, i as u64))
                .collect();
            let base = infer_trust(&bcs, &contract, prior, kappa).unwrap().value;
            let mut plus = bcs.clone();
            plus.push(pooled_bc(Polarity::Supports, r, c, 1000));
            let mut minus = bcs.clone();
            minus.push(pooled_bc(Polarity::Refutes, r, c, 1001));
            let up = infer_trust(&plus, &contract, prior, kappa).unwrap().value;
            let down = infer_trust(&minus, &contract, prior, kappa).unwrap().value;
            prop_assert!(up >= base, "support lowered trust: {} -> {}", base, up);
            prop_assert!(down <= base, "refutation raised trust: {} -> {}", base, down);
            Ok(())
        })
        .map_err(|f| f.to_string())?;
    ensure!(checked.get() >= 200, "only {} sets checked", checked.get());

    // symmetric cancellation: mirrored support and refutation give the prior mean
    let prior = PriorSpec::new(2.0, 5.0).map_err(e)?;
    let mut mirrored = Vec::new();
    for (i, (r, c)) in [(5, 5), (3, 4), (1, 2), (4, 4)].into_iter().enumerate() {
        mirrored.push(pooled_bc(Polarity::Supports, r, c, 2 * i as u64));
        mirrored.push(pooled_bc(Polarity::Refutes, c, r, 2 * i as u64 + 1));
    }
    let s = infer_trust(&mirrored, &contract, prior, 3.0).map_err(e)?;
    ensure!(s.value == prior.mean(), "cancellation gave {} not {}", s.value, prior.mean());

    // one fully graded supporting certificate on an even prior lands on sigmoid(1)
    let even = PriorSpec::new(1.0, 1.0).map_err(e)?;
    let s = infer_trust(&[pooled_bc(Polarity::Supports, 5, 5, 0)], &contract, even, 1.0).map_err(e)?;
    let sigma1 = 1.0 / (1.0 + (-1.0f64).exp());
    ensure!((s.value - sigma1).abs() <= 1e-9, "{} vs sigmoid(1) = {sigma1}", s.value);
    Ok(())
}

// ---------------------------------------------------------------------------
// 9. end-to-end replay

fn run_cli(args: &[&str]) -> Check {
    let out = Command::new(bin()).args(args).output().map_err(e)?;
    ensure!(out.status.success(), "`{}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr));
    Ok(())
}

fn pipeline(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let config = fixture("e2e.json");
    let (c, d) = (config.to_str().ok_or("path")?, dir.to_str().ok_or("path")?);
    run_cli(&["certify", "--config", c, "--out", d])?;
    run_cli(&["score", "--config", c, "--out", d, "--mode", "estimate"])?;
    run_cli(&["score", "--config", c, "--out", d, "--mode", "infer"])?;
    run_cli(&["card", "--config", c, "--out", d])?;
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(e)? {
        let entry = entry.map_err(e)?;
        files.insert(entry.file_name().to_string_lossy().into_owned(), fs::read(entry.path()).map_err(e)?);
    }
    Ok(files)
}

fn end_to_end_replay() -> Check {
    let (a, b) = (tempfile::tempdir().map_err(e)?, tempfile::tempdir().map_err(e)?);
    let first = pipeline(a.path())?;
    let second = pipeline(b.path())?;
    for name in ["bundle.json", "card.md", "card.json", "manifest.json", "score.json"] {
        ensure!(first.contains_key(name), "{name} not written");
    }
    ensure!(first == second, "reruns differ");

    let bundle: serde_json::Value = serde_json::from_slice(&first["bundle.json"]).map_err(e)?;
    let refuting: BTreeSet<String> = bundle["certificates"]
        .as_array()
        .ok_or("no certificates")?
        .iter()
        .filter(|c| c["polarity"] == "refutes")
        .map(|c| c["id"].as_str().unwrap_or_default().to_owned())
        .collect();
    ensure!(!refuting.is_empty(), "fixture has no refuting certificate");
    let card: serde_json::Value = serde_json::from_slice(&first["card.json"]).map_err(e)?;
    let listed: Vec<String> = card["limitations"]
        .as_array()
        .ok_or("no limitations")?
        .iter()
        .map(|c| c["id"].as_str().unwrap_or_default().to_owned())
        .collect();
    ensure!(listed.len() == refuting.len(), "limitations list {} entries, {} refuting", listed.len(), refuting.len());
    ensure!(listed.iter().cloned().collect::<BTreeSet<_>>() == refuting, "limitations {listed:?} != {refuting:?}");

    let md = String::from_utf8(first["card.md"].clone()).map_err(e)?;
    let section = md.split("## Limitations").nth(1).ok_or("markdown has no limitations section")?;
    let section = section.split("\n## ").next().unwrap_or_default();
    let in_md: BTreeSet<String> = section
        .lines()
        .filter_map(|l| l.strip_prefix("- `"))
        .filter_map(|l| l.split('`').next())
        .map(str::to_owned)
        .collect();
    ensure!(in_md == refuting, "markdown limitations {in_md:?} != {refuting:?}");
    Ok(())
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 9] = [
        ("determinism replay", 5, determinism_replay),
        ("access gating", 1, access_gating),
        ("invariance detection", 5, invariance_detection),
        ("spurious shortcut", 30, spurious_shortcut),
        ("clopper-pearson oracle and coverage", 60, clopper_pearson_oracle),
        ("posterior properties", 10, posterior_properties),
        ("mutation search", 60, search_properties),
        ("pooling properties", 10, pooling_properties),
        ("end-to-end replay", 30, end_to_end_replay),
    ];
    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let result = result.and_then(|()| {
            if took <= Duration::from_secs(limit) {
                Ok(())
            } else {
                Err(format!("took {took:.2?}, limit {limit} s"))
            }
        });
        match result {
            Ok(()) => println!("PASS {}. {name} ({took:.2?} of {limit} s)", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {}. {name} ({took:.2?} of {limit} s): {msg}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
