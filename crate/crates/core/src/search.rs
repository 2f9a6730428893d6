//! Contract-aware hyperparameter search by mutation and selection.
//!
//! Each round mutates the incumbent hyperparameters `n_mutations` times,
//! trains and scores every candidate against the contract, and keeps the
//! best. With elitism the incumbent competes in every round, so round-best
//! scores never decrease.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::contract::Contract;
use crate::data::{DataPoint, Dataset, Value};
use crate::error::{Error, Result};
use crate::metrics::MetricRegistry;
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::runner::{builtin_model, ModelHandle};
use crate::scoring::{estimate_trust, EstimateOptions};
use crate::trust::PriorSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HyperValue {
    Flag(bool),
    Real(f64),
}

impl HyperValue {
    pub fn as_f64(self) -> Option<f64> {
        match self {
            HyperValue::Real(x) => Some(x),
            HyperValue::Flag(_) => None,
        }
    }

    pub fn as_bool(self) -> Option<bool> {
        match self {
            HyperValue::Flag(b) => Some(b),
            HyperValue::Real(_) => None,
        }
    }
}

pub type Hyperparameters = BTreeMap<String, HyperValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub initial: Hyperparameters,
    pub n_mutations: usize,
    pub rounds: usize,
    /// Gaussian step size per real field; fields not listed use 1.
    #[serde(default)]
    pub mutation_scale: BTreeMap<String, f64>,
    #[serde(default = "yes")]
    pub elitism: bool,
    #[serde(default)]
    pub seed: u64,
    /// Contract trials per candidate score.
    #[serde(default = "default_trials")]
    pub n_trials: u64,
    #[serde(default)]
    pub prior: PriorSpec,
}

fn yes() -> bool {
    true
}

fn default_trials() -> u64 {
    20
}

impl SearchConfig {
    pub fn new(initial: Hyperparameters, n_mutations: usize, rounds: usize, seed: u64) -> Self {
        Self {
            initial,
            n_mutations,
            rounds,
            mutation_scale: BTreeMap::new(),
            elitism: true,
            seed,
            n_trials: default_trials(),
            prior: PriorSpec::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_mutations == 0 || self.rounds == 0 {
            return Err(Error::Precondition("search needs n_mutations >= 1 and rounds >= 1".into()));
        }
        Ok(())
    }

    pub fn scale(&self, field: &str) -> f64 {
        self.mutation_scale.get(field).copied().unwrap_or(1.0)
    }

    /// Seed of the random stream for round `round`.
    pub fn round_seed(&self, round: usize) -> u64 {
        derive_seed(self.seed, round as u64)
    }

    /// Training seed shared by every candidate in every round; a retrained
    /// incumbent reproduces its earlier model exactly.
    pub fn train_seed(&self) -> u64 {
        derive_seed(self.seed, u64::MAX - 1)
    }

    /// Contract seed shared by every candidate in every round, so scores are
    /// comparable across rounds.
    pub fn contract_seed(&self) -> u64 {
        derive_seed(self.seed, u64::MAX)
    }
}

pub trait Mutator {
    fn mutate(&self, current: &Hyperparameters, config: &SearchConfig, rng: &mut Rng) -> Hyperparameters;
}

/// Independent gaussian step per real field, bit flip with probability 0.2
/// per flag. Fields are visited in name order.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianMutator;

pub const FLIP_PROBABILITY: f64 = 0.2;

impl Mutator for GaussianMutator {
    fn mutate(&self, current: &Hyperparameters, config: &SearchConfig, rng: &mut Rng) -> Hyperparameters {
        current
            .iter()
            .map(|(name, v)| {
                let next = match *v {
                    HyperValue::Real(x) => HyperValue::Real(x + config.scale(name) * rng.sample::<f64, _>(StandardNormal)),
                    HyperValue::Flag(b) => HyperValue::Flag(if rng.random::<f64>() < FLIP_PROBABILITY { !b } else { b }),
                };
                (name.clone(), next)
            })
            .collect()
    }
}

/// Returns the incumbent unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityMutator;

impl Mutator for IdentityMutator {
    fn mutate(&self, current: &Hyperparameters, _: &SearchConfig, _: &mut Rng) -> Hyperparameters {
        current.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub round: usize,
    pub candidate: usize,
    /// The candidate is the carried-over incumbent.
    pub incumbent: bool,
    pub lambda: Hyperparameters,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: Hyperparameters,
    pub best_score: f64,
    pub history: Vec<HistoryRecord>,
    /// Model calls spent across every candidate.
    pub eval_calls: u64,
}

impl SearchOutcome {
    /// Highest score seen in each round.
    pub fn round_best(&self) -> Vec<f64> {
        let mut best: BTreeMap<usize, f64> = BTreeMap::new();
        for r in &self.history {
            let e = best.entry(r.round).or_insert(f64::NEG_INFINITY);
            *e = e.max(r.score);
        }
        best.into_values().collect()
    }

    /// One canonical JSON record per candidate.
    pub fn history_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.history {
            out.push_str(&canonical::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Scored candidate: the score and the model calls it cost.
pub struct Scored {
    pub score: f64,
    pub eval_calls: u64,
}

/// The search loop over an arbitrary objective. `objective` receives the
/// candidate, the shared training seed and the shared contract seed.
pub fn evolve_with(
    config: &SearchConfig,
    mutator: &dyn Mutator,
    objective: &mut dyn FnMut(&Hyperparameters, u64, u64) -> Result<Scored>,
) -> Result<SearchOutcome> {
    config.validate()?;
    let contract_seed = config.contract_seed();
    let train_seed = config.train_seed();
    let mut incumbent = config.initial.clone();
    let mut best = (config.initial.clone(), f64::NEG_INFINITY);
    let mut history = Vec::new();
    let mut eval_calls = 0;
    for round in 0..config.rounds {
        let mut rng = rng_from_seed(config.round_seed(round));
        let mut candidates = Vec::with_capacity(config.n_mutations + 1);
        if config.elitism {
            candidates.push((incumbent.clone(), true));
        }
        for _ in 0..config.n_mutations {
            candidates.push((mutator.mutate(&incumbent, config, &mut rng), false));
        }
        let mut round_best: Option<(usize, f64)> = None;
        for (i, (lambda, is_incumbent)) in candidates.iter().enumerate() {
            let s = objective(lambda, train_seed, contract_seed)?;
            eval_calls += s.eval_calls;
            if s.score.is_nan() {
                return Err(Error::Numerical(format!("candidate {i} of round {round} scored NaN")));
            }
            if round_best.is_none_or(|(_, b)| s.score > b) {
                round_best = Some((i, s.score));
            }
            history.push(HistoryRecord {
                round,
                candidate: i,
                incumbent: *is_incumbent,
                lambda: lambda.clone(),
                score: s.score,
            });
        }
        let (i, score) = round_best.expect("at least one candidate");
        incumbent = candidates[i].0.clone();
        if score > best.1 {
            best = (incumbent.clone(), score);
        }
    }
    Ok(SearchOutcome { best: best.0, best_score: best.1, history, eval_calls })
}

/// Contract score used as the search objective: the estimated trust value.
pub fn contract_eval(
    handle: &mut ModelHandle,
    registry: &MetricRegistry,
    contract: &Contract,
    n_trials: u64,
    seed: u64,
    prior: PriorSpec,
) -> Result<f64> {
    let options = EstimateOptions { n_trials, seed, prior, ..EstimateOptions::default() };
    Ok(estimate_trust(handle, registry, contract, &options)?.value)
}

/// Built-in toy model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trainable {
    /// Linear model fitted by ridge regression. Hyperparameters:
    /// `log_lambda` (real), `augment` (flag: add jittered copies of the
    /// training points) and optional `use_<feature>` flags masking features.
    RidgeRegression,
    /// One-feature threshold rule. Hyperparameters: `threshold` (real) and
    /// optional `use_<feature>` flags restricting the features considered.
    ThresholdClassifier,
}

impl Trainable {
    pub fn name(self) -> &'static str {
        match self {
            Trainable::RidgeRegression => "ridge_regression",
            Trainable::ThresholdClassifier => "threshold_classifier",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "ridge_regression" => Ok(Trainable::RidgeRegression),
            "threshold_classifier" => Ok(Trainable::ThresholdClassifier),
            other => Err(Error::TrainFailure(format!("unknown trainable `{other}`"))),
        }
    }

    pub fn default_hyperparameters(self) -> Hyperparameters {
        match self {
            Trainable::RidgeRegression => BTreeMap::from([
                ("augment".to_owned(), HyperValue::Flag(false)),
                ("log_lambda".to_owned(), HyperValue::Real(0.0)),
            ]),
            Trainable::ThresholdClassifier => BTreeMap::from([("threshold".to_owned(), HyperValue::Real(0.5))]),
        }
    }

    /// Fit on `data` and return the fitted model as a builtin handle.
    pub fn train(self, data: &Dataset, lambda: &Hyperparameters, seed: u64) -> Result<ModelHandle> {
        let (name, params) = self.fit(data, lambda, seed)?;
        builtin_model(name, params)
    }

    /// Fitted builtin name and parameters.
    pub fn fit(self, data: &Dataset, lambda: &Hyperparameters, seed: u64) -> Result<(&'static str, serde_json::Value)> {
        if data.is_empty() {
            return Err(Error::TrainFailure("empty training data".into()));
        }
        let numeric: Vec<String> = data
            .schema
            .fields()
            .iter()
            .filter(|f| matches!(f.kind, crate::data::FeatureKind::Number))
            .map(|f| f.name.clone())
            .collect();
        if numeric.len() != data.schema.numeric_width() || numeric.len() != data.schema.fields().len() {
            return Err(Error::TrainFailure("toy trainables need scalar numeric features only".into()));
        }
        let mask: Vec<bool> = numeric
            .iter()
            .map(|name| flag(lambda, &format!("use_{name}")).unwrap_or(true))
            .collect();
        match self {
            Trainable::RidgeRegression => {
                let log_lambda = real(lambda, "log_lambda")?;
                let augment = flag(lambda, "augment").unwrap_or(false);
                let points = if augment { augmented(&data.points, seed) } else { data.points.clone() };
                let (weights, bias) = ridge(&points, &mask, log_lambda.exp())?;
                Ok(("linear", serde_json::json!({ "weights": weights, "bias": bias })))
            }
            Trainable::ThresholdClassifier => {
                let threshold = real(lambda, "threshold")?;
                let mut best: Option<(usize, &str)> = None;
                for (j, name) in numeric.iter().enumerate().filter(|(j, _)| mask[*j]) {
                    let correct = data
                        .points
                        .iter()
                        .filter(|p| {
                            let x = p.flat_numeric()[j];
                            let pred = if x > threshold { 1.0 } else { 0.0 };
                            p.target.as_ref().and_then(Value::as_f64).is_some_and(|y| y.round() == pred)
                        })
                        .count();
                    if best.is_none_or(|(c, _)| correct > c) {
                        best = Some((correct, name));
                    }
                }
                let (_, feature) = best.ok_or_else(|| Error::TrainFailure("every feature is masked out".into()))?;
                Ok(("spurious_feature_classifier", serde_json::json!({ "feature": feature, "threshold": threshold })))
            }
        }
    }
}

fn real(lambda: &Hyperparameters, name: &str) -> Result<f64> {
    lambda
        .get(name)
        .and_then(|v| v.as_f64())
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::TrainFailure(format!("hyperparameter `{name}` must be a finite number")))
}

fn flag(lambda: &Hyperparameters, name: &str) -> Option<bool> {
    lambda.get(name).and_then(|v| v.as_bool())
}

/// Training points plus one jittered copy of each (noise scale 0.1).
fn augmented(points: &[DataPoint], seed: u64) -> Vec<DataPoint> {
    let mut rng = rng_from_seed(seed);
    let mut out = points.to_vec();
    for p in points {
        let x: Vec<f64> = p.flat_numeric().iter().map(|v| v + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        out.push(p.with_flat_numeric(&x).expect("same width"));
    }
    out
}

/// Ridge fit with an unpenalized intercept on centred data. Masked
/// features get weight 0.
fn ridge(points: &[DataPoint], mask: &[bool], penalty: f64) -> Result<(Vec<f64>, f64)> {
    let ys: Vec<f64> = points
        .iter()
        .map(|p| p.target.as_ref().and_then(Value::as_f64))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::TrainFailure("ridge regression needs numeric targets".into()))?;
    let cols: Vec<usize> = (0..mask.len()).filter(|j| mask[*j]).collect();
    let n = points.len();
    let y_mean = ys.iter().sum::<f64>() / n as f64;
    let rows: Vec<Vec<f64>> = points.iter().map(|p| p.flat_numeric()).collect();
    let mut weights = vec![0.0; mask.len()];
    if cols.is_empty() {
        return Ok((weights, y_mean));
    }
    let means: Vec<f64> = cols.iter().map(|&j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, cols.len(), |i, k| rows[i][cols[k]] - means[k]);
    let y = DVector::from_iterator(n, ys.iter().map(|v| v - y_mean));
    let gram = x.transpose() * &x + DMatrix::identity(cols.len(), cols.len()) * penalty;
    let w = gram
        .cholesky()
        .ok_or_else(|| Error::TrainFailure("ridge system is not positive definite".into()))?
        .solve(&(x.transpose() * y));
    let mut bias = y_mean;
    for (k, &j) in cols.iter().enumerate() {
        weights[j] = w[k];
        bias -= w[k] * means[k];
    }
    if weights.iter().chain([&bias]).any(|v| !v.is_finite()) {
        return Err(Error::TrainFailure("ridge fit produced non-finite coefficients".into()));
    }
    Ok((weights, bias))
}

/// Mutation search with a toy trainable: each candidate is trained on
/// `data` and scored by [`contract_eval`].
pub fn evolve(
    trainable: Trainable,
    data: &Dataset,
    contract: &Contract,
    registry: &MetricRegistry,
    config: &SearchConfig,
) -> Result<SearchOutcome> {
    evolve_using(trainable, data, contract, registry, config, &GaussianMutator)
}

pub fn evolve_using(
    trainable: Trainable,
    data: &Dataset,
    contract: &Contract,
    registry: &MetricRegistry,
    config: &SearchConfig,
    mutator: &dyn Mutator,
) -> Result<SearchOutcome> {
    let mut objective = |lambda: &Hyperparameters, train_seed: u64, contract_seed: u64| {
        let mut handle = trainable.train(data, lambda, train_seed)?;
        let score = contract_eval(&mut handle, registry, contract, config.n_trials, contract_seed, config.prior)?;
        Ok(Scored { score, eval_calls: handle.runs_consumed() })
    };
    evolve_with(config, mutator, &mut objective)
}
