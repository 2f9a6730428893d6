//! Certificates produced by running the model.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::transform::{Transform, TransformSpec};
use crate::certificate::{
    AppliedTransform, BehaviorCertificate, CertificateKind, Claim, Conclusion, Counterexample, Evidence,
    GenerationMethod, Outcome, Scope,
};
use crate::data::{DataPoint, Dataset, Value};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_task, MetricRegistry, Task};
use crate::rng::{derive_seed, rng_from_seed};
use crate::runner::ModelHandle;

fn check_input_schema(handle: &mut ModelHandle, data: &Dataset) -> Result<()> {
    if handle.metadata().is_none() {
        handle.handshake()?;
    }
    if let Some(schema) = handle.metadata().and_then(|m| m.input_schema.as_ref()) {
        if !data.is_empty() && &data.schema != schema {
            return Err(Error::SchemaMismatch(format!(
                "data `{}` does not match the input schema of `{}`",
                data.source_id,
                handle.model_id()
            )));
        }
    }
    Ok(())
}

struct LossMeasurement {
    loss: f64,
    evaluated: Dataset,
}

fn measure(
    handle: &mut ModelHandle,
    registry: &MetricRegistry,
    task: &Task,
    data: Dataset,
    seed: u64,
) -> Result<LossMeasurement> {
    data.ensure_non_empty()?;
    let outputs = handle.eval(&data.points, seed)?;
    let loss = evaluate_task(registry, task, &outputs, &data)?;
    Ok(LossMeasurement { loss, evaluated: data })
}

#[allow(clippy::too_many_arguments)]
fn loss_certificate(
    handle: &ModelHandle,
    kind: CertificateKind,
    method: GenerationMethod,
    outcome: Outcome,
    task: &Task,
    m: LossMeasurement,
    seed: u64,
    parameters: serde_json::Value,
    plain_text: String,
    technical_text: String,
) -> BehaviorCertificate {
    let mut measured = BTreeMap::new();
    measured.insert("loss".to_owned(), m.loss);
    measured.insert("n_points".to_owned(), m.evaluated.len() as f64);
    let source = m.evaluated.source_id.clone();
    BehaviorCertificate::new(
        kind,
        method,
        outcome,
        Evidence {
            generator: method.as_str().to_owned(),
            model_id: handle.model_id().to_owned(),
            source_id: Some(source.clone()),
            inputs: m.evaluated.points,
            seeds: vec![seed],
            parameters,
            measured,
            counterexamples: Vec::new(),
        },
        Conclusion {
            claim: Claim::ExpectedLoss { value: m.loss },
            subject_task: Some(task.clone()),
            subject_source: Some(source),
            scope: Scope::MeasuredSource,
        },
        plain_text,
        technical_text,
    )
}

/// Held-out validation. After a seeded shuffle the first
/// `floor(split_fraction * n)` points form the training side and the rest
/// are held out; the held-out side must be non-empty.
pub fn holdout_validation(
    handle: &mut ModelHandle,
    registry: &MetricRegistry,
    dataset: &Dataset,
    task: &Task,
    split_fraction: f64,
    seed: u64,
) -> Result<BehaviorCertificate> {
    if !(0.0..=1.0).contains(&split_fraction) {
        return Err(Error::Precondition(format!("split fraction must be in [0, 1], got {split_fraction}")));
    }
    dataset.ensure_non_empty()?;
    let n_train = (split_fraction * dataset.len() as f64).floor() as usize;
    if n_train >= dataset.len() {
        return Err(Error::Precondition("held-out side of the split is empty".into()));
    }
    check_input_schema(handle, dataset)?;
    let idx = dataset.shuffled_indices(seed);
    let held_out = dataset.subset(&idx[n_train..]);
    let m = measure(handle, registry, task, held_out, seed)?;
    let plain = format!(
        "On {} examples the model had not been checked against before, its average {} was {}. \
         Expect about the same on new data of the same kind.",
        m.evaluated.len(),
        task.name,
        short(m.loss)
    );
    let technical = format!(
        "Held-out {} ({}) over {} points of `{}` (split {split_fraction}, seed {seed}) is {}; \
         expected loss on `{}` is {}.",
        task.name,
        task.metric_id,
        m.evaluated.len(),
        m.evaluated.source_id,
        m.loss,
        m.evaluated.source_id,
        m.loss
    );
    Ok(loss_certificate(
        handle,
        CertificateKind::NonInteractive,
        GenerationMethod::HoldoutValidation,
        Outcome::Positive,
        task,
        m,
        seed,
        serde_json::json!({ "split_fraction": split_fraction, "n_total": dataset.len() }),
        plain,
        technical,
    ))
}

/// Out-of-distribution evaluation of `task` on surrogate data. The conclusion
/// is scoped to the surrogate's own source.
pub fn ood_evaluate(
    handle: &mut ModelHandle,
    registry: &MetricRegistry,
    surrogate: &Dataset,
    task: &Task,
    seed: u64,
) -> Result<BehaviorCertificate> {
    check_input_schema(handle, surrogate)?;
    let m = measure(handle, registry, task, surrogate.clone(), seed)?;
    let plain = format!(
        "On {} examples from a different data collection, the model's average {} was {}. \
         This says how it does on that collection only.",
        m.evaluated.len(),
        task.name,
        short(m.loss)
    );
    let technical = format!(
        "{} ({}) on {} surrogate points is {}; expected loss {} over `{}` only.",
        task.name,
        task.metric_id,
        m.evaluated.len(),
        m.loss,
        m.loss,
        m.evaluated.source_id
    );
    Ok(loss_certificate(
        handle,
        CertificateKind::Interactive,
        GenerationMethod::OodEvaluation,
        Outcome::Positive,
        task,
        m,
        seed,
        serde_json::json!({}),
        plain,
        technical,
    ))
}

/// Out-of-task evaluation: score the model on a task it was not built for.
/// The certificate is negative when the loss exceeds `acceptable_loss`.
pub fn oot_evaluate(
    handle: &mut ModelHandle,
    registry: &MetricRegistry,
    dataset: &Dataset,
    new_task: &Task,
    seed: u64,
    acceptable_loss: f64,
) -> Result<BehaviorCertificate> {
    check_input_schema(handle, dataset)?;
    let m = measure(handle, registry, new_task, dataset.clone(), seed)?;
    let passed = m.loss <= acceptable_loss;
    let outcome = if passed { Outcome::Positive } else { Outcome::Negative };
    let plain = if passed {
        format!("Checked on a new criterion, `{}`, the model stayed within the accepted limit.", new_task.name)
    } else {
        format!(
            "Checked on a new criterion, `{}`, the model does poorly (score {} where at most {} is acceptable).",
            new_task.name,
            short(m.loss),
            short(acceptable_loss)
        )
    };
    let technical = format!(
        "Out-of-task {} ({}) on {} points of `{}` is {} against acceptable {}; conclusion restricted to ({}, `{}`).",
        new_task.name,
        new_task.metric_id,
        m.evaluated.len(),
        m.evaluated.source_id,
        m.loss,
        acceptable_loss,
        new_task.name,
        m.evaluated.source_id
    );
    Ok(loss_certificate(
        handle,
        CertificateKind::Interactive,
        GenerationMethod::OotEvaluation,
        outcome,
        new_task,
        m,
        seed,
        serde_json::json!({ "acceptable_loss": acceptable_loss }),
        plain,
        technical,
    ))
}

fn output_gap(a: &Value, b: &Value) -> f64 {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => (x - y).abs(),
        (Value::Vector(x), Value::Vector(y)) if x.len() == y.len() => {
            x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
        }
        (a, b) => {
            if a == b {
                0.0
            } else {
                1.0
            }
        }
    }
}

/// Empirical invariance check: draw `n_samples` (point, transform) pairs
/// from the spec's seeded stream and compare outputs. Samples for `n` are a
/// prefix of samples for any larger `n`.
pub fn invariance_check(
    handle: &mut ModelHandle,
    dataset: &Dataset,
    spec: &TransformSpec,
    n_samples: usize,
    tolerance: f64,
) -> Result<BehaviorCertificate> {
    if n_samples == 0 {
        return Err(Error::Precondition("invariance check needs at least one sample".into()));
    }
    if tolerance.is_nan() || tolerance < 0.0 {
        return Err(Error::Precondition(format!("tolerance must be non-negative, got {tolerance}")));
    }
    dataset.ensure_non_empty()?;
    check_input_schema(handle, dataset)?;
    let width = dataset.schema.numeric_width();
    spec.transform.check_width(width)?;

    let mut rng = rng_from_seed(spec.seed);
    let mut originals = Vec::with_capacity(n_samples);
    let mut variants = Vec::with_capacity(n_samples);
    let mut applied = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let i = rng.random_range(0..dataset.len());
        let t = spec.transform.sample(&mut rng, width)?;
        variants.push(t.apply(&dataset.points[i])?);
        originals.push(dataset.points[i].clone());
        applied.push(t);
    }
    let eval_seed = spec.seed;
    let base = handle.eval(&originals, eval_seed)?;
    let moved = handle.eval(&variants, eval_seed)?;

    let gaps: Vec<f64> = base.iter().zip(&moved).map(|(a, b)| output_gap(a, b)).collect();
    let max_gap = gaps.iter().copied().fold(0.0, f64::max);
    let violations = gaps.iter().filter(|g| **g > tolerance).count();
    let first = gaps.iter().position(|g| *g > tolerance);
    let label = spec.transform.label();

    let mut measured = BTreeMap::new();
    measured.insert("max_gap".to_owned(), max_gap);
    measured.insert("n_samples".to_owned(), n_samples as f64);
    measured.insert("violations".to_owned(), violations as f64);
    let counterexamples = first
        .map(|k| Counterexample {
            input: originals[k].clone(),
            variant: Some(variants[k].clone()),
            transform: Some(applied[k].clone()),
            seed: eval_seed,
            outputs: vec![base[k].clone(), moved[k].clone()],
            gap: gaps[k],
            losses: None,
        })
        .into_iter()
        .collect::<Vec<_>>();
    let holds = first.is_none();
    let (plain, technical) = if holds {
        (
            format!("Changing the inputs by {label} never changed the model's answer across {n_samples} tries."),
            format!(
                "max |f(x) - f(t(x))| = {max_gap} <= {tolerance} over {n_samples} sampled (x, t) with t ~ {label} \
                 on `{}`.",
                dataset.source_id
            ),
        )
    } else {
        let c = &counterexamples[0];
        (
            format!(
                "Applying {label} to an input changed the model's answer (from {} to {}), so the model does not \
                 treat such inputs the same way.",
                c.outputs[0], c.outputs[1]
            ),
            format!(
                "Counterexample to {label} invariance: |f(x) - f(t(x))| = {} > {tolerance}; {violations} of \
                 {n_samples} samples violate.",
                c.gap
            ),
        )
    };
    Ok(BehaviorCertificate::new(
        CertificateKind::Interactive,
        GenerationMethod::InvarianceCheck,
        if holds { Outcome::Positive } else { Outcome::Negative },
        Evidence {
            generator: GenerationMethod::InvarianceCheck.as_str().to_owned(),
            model_id: handle.model_id().to_owned(),
            source_id: Some(dataset.source_id.clone()),
            inputs: originals,
            seeds: vec![spec.seed],
            parameters: serde_json::json!({ "transform": spec, "n_samples": n_samples, "tolerance": tolerance }),
            measured,
            counterexamples,
        },
        Conclusion {
            claim: Claim::Invariance { transform: label.to_owned(), holds, max_gap, tolerance },
            subject_task: None,
            subject_source: Some(dataset.source_id.clone()),
            scope: if holds { Scope::MeasuredSource } else { Scope::Universal },
        },
        plain,
        technical,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStrategy {
    Random,
    Greedy,
}

/// What counts as turning a success into a failure on one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlipCriterion {
    /// Any output change larger than `tolerance`.
    OutputChange { tolerance: f64 },
    /// Per-point task loss at most `threshold` on the original but above it
    /// on the transformed point.
    TaskLoss { task: Task, threshold: f64 },
}

impl Default for FlipCriterion {
    fn default() -> Self {
        FlipCriterion::OutputChange { tolerance: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialSearch {
    pub family: Vec<Transform>,
    pub eval_budget: u64,
    pub strategy: SearchStrategy,
    pub seed: u64,
    #[serde(default)]
    pub criterion: FlipCriterion,
    /// Transformed candidates per model call.
    #[serde(default = "default_batch")]
    pub batch: usize,
}

fn default_batch() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialOutcome {
    /// A negative certificate when a flip was found. Absence of a finding
    /// produces no certificate.
    pub certificate: Option<BehaviorCertificate>,
    pub evals_used: u64,
    /// The handle's run budget ran out before `eval_budget` was spent.
    pub budget_exhausted: bool,
}

struct Flip {
    point_idx: usize,
    member: usize,
    transform: AppliedTransform,
    variant: DataPoint,
    fx: Value,
    ftx: Value,
    score: f64,
    losses: Option<Vec<f64>>,
}

struct Judge<'a> {
    registry: &'a MetricRegistry,
    criterion: &'a FlipCriterion,
}

impl Judge<'_> {
    fn point_loss(&self, task: &Task, point: &DataPoint, output: &Value) -> Result<f64> {
        let single = Dataset::new("point", vec![point.clone()], None)?;
        evaluate_task(self.registry, task, std::slice::from_ref(output), &single)
    }

    /// Badness score of a candidate (higher is worse) and whether it flips.
    fn judge(&self, x: &DataPoint, fx: &Value, tx: &DataPoint, ftx: &Value) -> Result<(f64, bool, Option<Vec<f64>>)> {
        match self.criterion {
            FlipCriterion::OutputChange { tolerance } => {
                let gap = output_gap(fx, ftx);
                Ok((gap, gap > *tolerance, None))
            }
            FlipCriterion::TaskLoss { task, threshold } => {
                let before = self.point_loss(task, x, fx)?;
                let after = self.point_loss(task, tx, ftx)?;
                Ok((after, before <= *threshold && after > *threshold, Some(vec![before, after])))
            }
        }
    }
}

/// Search a transform family for an input change that turns a success into
/// a failure. Each model call evaluates one point together with `batch`
/// transformed copies and counts as one unit of `eval_budget`.
pub fn adversarial_search(
    handle: &mut ModelHandle,
    registry: &MetricRegistry,
    dataset: &Dataset,
    search: &AdversarialSearch,
) -> Result<AdversarialOutcome> {
    if search.eval_budget == 0 {
        return Err(Error::Precondition("adversarial search needs an eval budget of at least 1".into()));
    }
    if search.family.is_empty() || search.batch == 0 {
        return Err(Error::Precondition("adversarial search needs a non-empty family and batch".into()));
    }
    dataset.ensure_non_empty()?;
    check_input_schema(handle, dataset)?;
    let width = dataset.schema.numeric_width();
    for t in &search.family {
        t.check_width(width)?;
    }
    let judge = Judge { registry, criterion: &search.criterion };
    let mut rng = rng_from_seed(search.seed);
    let eval_seed = derive_seed(search.seed, 1);

    let mut evals_used = 0;
    let mut budget_exhausted = false;
    let mut found: Option<Flip> = None;
    // Greedy state: (point index, family member, incumbent transform, score, stale steps)
    let mut incumbent: Option<(usize, usize, AppliedTransform, f64, u32)> = None;

    while evals_used < search.eval_budget {
        let (point_idx, member, proposals) = match (&incumbent, search.strategy) {
            (Some((i, f, current, _, _)), SearchStrategy::Greedy) => {
                let t = &search.family[*f];
                let props = (0..search.batch).map(|_| t.neighbor(current, &mut rng, width)).collect::<Result<Vec<_>>>()?;
                (*i, *f, props)
            }
            _ => {
                let i = rng.random_range(0..dataset.len());
                let f = rng.random_range(0..search.family.len());
                let t = &search.family[f];
                let props = (0..search.batch).map(|_| t.sample(&mut rng, width)).collect::<Result<Vec<_>>>()?;
                (i, f, props)
            }
        };
        let x = &dataset.points[point_idx];
        let mut batch = vec![x.clone()];
        for p in &proposals {
            batch.push(p.apply(x)?);
        }
        let outputs = match handle.eval(&batch, eval_seed) {
            Ok(o) => o,
            Err(Error::BudgetExhausted { .. }) => {
                budget_exhausted = true;
                break;
            }
            Err(e) => return Err(e),
        };
        evals_used += 1;

        let mut best: Option<(usize, f64)> = None;
        for k in 0..proposals.len() {
            let (score, flips, losses) = judge.judge(x, &outputs[0], &batch[k + 1], &outputs[k + 1])?;
            if flips {
                found = Some(Flip {
                    point_idx,
                    member,
                    transform: proposals[k].clone(),
                    variant: batch[k + 1].clone(),
                    fx: outputs[0].clone(),
                    ftx: outputs[k + 1].clone(),
                    score,
                    losses,
                });
                break;
            }
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((k, score));
            }
        }
        if found.is_some() {
            break;
        }
        if search.strategy == SearchStrategy::Greedy {
            let (k, score) = best.expect("batch is non-empty");
            incumbent = match incumbent.take() {
                Some((i, f, cur, s, stale)) if score <= s => {
                    // restart after three steps without improvement
                    (stale < 2).then_some((i, f, cur, s, stale + 1))
                }
                _ => Some((point_idx, member, proposals[k].clone(), score, 0)),
            };
        }
    }

    let certificate = found.map(|Flip { point_idx, member, transform, variant, fx, ftx, score, losses }| {
        let family_label =
            search.family.iter().map(Transform::label).collect::<Vec<_>>().join("|");
        let gap = output_gap(&fx, &ftx);
        let mut measured = BTreeMap::new();
        measured.insert("evals_used".to_owned(), evals_used as f64);
        measured.insert("gap".to_owned(), gap);
        measured.insert("score".to_owned(), score);
        let subject_task = match &search.criterion {
            FlipCriterion::TaskLoss { task, .. } => Some(task.clone()),
            FlipCriterion::OutputChange { .. } => None,
        };
        let plain = format!(
            "An automated search found an input that the model handles correctly, but a transformed ({}) version of it \
             changes the outcome. Similar inputs are likely to trip it up too.",
            search.family[member].label()
        );
        let technical = format!(
            "{:?} search over {family_label} found a flip after {evals_used} model calls: outputs {} -> {} (gap {gap}).",
            search.strategy, fx, ftx
        );
        BehaviorCertificate::new(
            CertificateKind::Interactive,
            GenerationMethod::AdversarialSearch,
            Outcome::Negative,
            Evidence {
                generator: GenerationMethod::AdversarialSearch.as_str().to_owned(),
                model_id: handle.model_id().to_owned(),
                source_id: Some(dataset.source_id.clone()),
                inputs: vec![dataset.points[point_idx].clone()],
                seeds: vec![search.seed, eval_seed],
                parameters: serde_json::to_value(search).expect("search config serializes"),
                measured,
                counterexamples: vec![Counterexample {
                    input: dataset.points[point_idx].clone(),
                    variant: Some(variant),
                    transform: Some(transform),
                    seed: eval_seed,
                    outputs: vec![fx, ftx],
                    gap,
                    losses,
                }],
            },
            Conclusion {
                claim: Claim::NotRobust { transform_family: family_label },
                subject_task,
                subject_source: Some(dataset.source_id.clone()),
                scope: Scope::Universal,
            },
            plain,
            technical,
        )
    });
    Ok(AdversarialOutcome { certificate, evals_used, budget_exhausted })
}

fn short(x: f64) -> String {
    format!("{:.3}", x).trim_end_matches('0').trim_end_matches('.').to_owned()
}
