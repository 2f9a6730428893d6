//! Trust scores: direct estimation on contract samples, pooled inference
//! from graded certificates, and the automation-level mapping.

use serde::{Deserialize, Serialize};
use statrs::function::beta::inv_beta_reg;

use crate::certificate::{BehaviorCertificate, Polarity};
use crate::contract::Contract;
use crate::data::DataSource;
use crate::error::{Error, Result};
use crate::metrics::MetricRegistry;
use crate::runner::ModelHandle;
use crate::trust::{Interval, PriorSpec, ScoreMethod, ScoreReplay, TrustScore, TRUST_SCHEMA};

pub const DEFAULT_CONFIDENCE: f64 = 0.95;

fn check_confidence(confidence: f64) -> Result<()> {
    if confidence > 0.0 && confidence < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("confidence must lie in (0, 1), got {confidence}")))
    }
}

/// Exact binomial interval for `k` successes in `n` trials.
pub fn clopper_pearson(k: u64, n: u64, confidence: f64) -> Result<Interval> {
    check_confidence(confidence)?;
    if n == 0 || k > n {
        return Err(Error::Domain(format!("need 0 <= k <= n and n >= 1, got k = {k}, n = {n}")));
    }
    let tail = (1.0 - confidence) / 2.0;
    let (k, n) = (k as f64, n as f64);
    let lower = if k == 0.0 { 0.0 } else { inv_beta_reg(k, n - k + 1.0, tail) };
    let upper = if k == n { 1.0 } else { inv_beta_reg(k + 1.0, n - k, 1.0 - tail) };
    Ok(Interval { lower, upper })
}

/// Central interval of the prior itself.
pub fn prior_interval(prior: PriorSpec, confidence: f64) -> Result<Interval> {
    check_confidence(confidence)?;
    let tail = (1.0 - confidence) / 2.0;
    Ok(Interval {
        lower: inv_beta_reg(prior.alpha(), prior.beta(), tail),
        upper: inv_beta_reg(prior.alpha(), prior.beta(), 1.0 - tail),
    })
}

fn containing(interval: Interval, value: f64) -> Interval {
    Interval { lower: interval.lower.min(value).max(0.0), upper: interval.upper.max(value).min(1.0) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    pub n_trials: u64,
    pub seed: u64,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
}

fn default_confidence() -> f64 {
    DEFAULT_CONFIDENCE
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self { n_trials: 100, seed: 0, prior: PriorSpec::default(), confidence: DEFAULT_CONFIDENCE }
    }
}

/// Per-trial outcomes behind an estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub score: TrustScore,
    pub trials: Vec<bool>,
}

/// Run the contract `n_trials` times and count successes. Generator sources
/// draw a fresh dataset per trial; fixed sources are split into disjoint
/// chunks, one per trial.
pub fn estimate_trust_detailed(
    handle: &mut ModelHandle,
    registry: &MetricRegistry,
    contract: &Contract,
    options: &EstimateOptions,
) -> Result<Estimate> {
    check_confidence(options.confidence)?;
    let n = options.n_trials;
    let mut trials = Vec::with_capacity(n as usize);
    if contract.data.is_generator() {
        for t in 0..n {
            let trial_seed = DataSource::trial_seed(options.seed, t);
            let data = contract.data.sample_non_empty(Some(trial_seed))?;
            let outputs = handle.eval(&data.points, trial_seed)?;
            trials.push(contract.evaluate(registry, &outputs, &data)?.success);
        }
    } else if n > 0 {
        let full = contract.data.sample_non_empty(None)?;
        for (t, chunk) in full.disjoint_chunks(n as usize, options.seed)?.iter().enumerate() {
            let outputs = handle.eval(&chunk.points, DataSource::trial_seed(options.seed, t as u64))?;
            trials.push(contract.evaluate(registry, &outputs, chunk)?.success);
        }
    }
    let k = trials.iter().filter(|s| **s).count() as u64;
    let prior = options.prior;
    let value = (prior.alpha() + k as f64) / (prior.alpha() + prior.beta() + n as f64);
    let interval = if n > 0 {
        clopper_pearson(k, n, options.confidence)?
    } else {
        prior_interval(prior, options.confidence)?
    };
    let score = TrustScore {
        schema: TRUST_SCHEMA.to_owned(),
        contract_id: contract.id.clone(),
        value,
        interval: containing(interval, value),
        method: ScoreMethod::Estimation,
        prior,
        evidence_refs: Vec::new(),
        replay: ScoreReplay {
            seed: Some(options.seed),
            n_trials: Some(n),
            successes: Some(k),
            confidence: Some(options.confidence),
            kappa: None,
        },
    };
    score.check()?;
    Ok(Estimate { score, trials })
}

pub fn estimate_trust(
    handle: &mut ModelHandle,
    registry: &MetricRegistry,
    contract: &Contract,
    options: &EstimateOptions,
) -> Result<TrustScore> {
    estimate_trust_detailed(handle, registry, contract, options).map(|e| e.score)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Log-odds pooling of graded certificates around the prior mean.
///
/// Each certificate weighs `relevance * correctness / 25`; supporting ones
/// push the log-odds up and refuting ones down, scaled by `kappa`. Weights
/// are summed as integers before scaling, so equal support and refutation
/// cancel exactly.
pub fn infer_trust(
    bcs: &[BehaviorCertificate],
    contract: &Contract,
    prior: PriorSpec,
    kappa: f64,
) -> Result<TrustScore> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::Domain(format!("pool strength must be positive, got {kappa}")));
    }
    let mut support = 0u64;
    let mut refute = 0u64;
    let mut total = 0u64;
    for bc in bcs {
        let (grades, polarity) = bc.graded()?;
        if bc.graded_against.as_deref().is_some_and(|c| c != contract.id) {
            return Err(Error::Precondition(format!(
                "certificate `{}` was graded against a different contract",
                bc.id
            )));
        }
        let w = u64::from(grades.relevance()) * u64::from(grades.correctness());
        total += w;
        match polarity {
            Polarity::Supports => support += w,
            Polarity::Refutes => refute += w,
            Polarity::Neutral => {}
        }
    }
    let net = (support as f64 - refute as f64) / 25.0;
    let prior_logit = (prior.alpha() / prior.beta()).ln();
    let value = if net == 0.0 { prior.mean() } else { sigmoid(prior_logit + kappa * net) };
    let u = 1.0 / (2.0 * (1.0 + total as f64 / 25.0).sqrt());
    let mut evidence_refs: Vec<String> = bcs.iter().map(|b| b.id.clone()).collect();
    evidence_refs.sort();
    let score = TrustScore {
        schema: TRUST_SCHEMA.to_owned(),
        contract_id: contract.id.clone(),
        value,
        interval: Interval { lower: (value - u).max(0.0), upper: (value + u).min(1.0) },
        method: ScoreMethod::Inference,
        prior,
        evidence_refs,
        replay: ScoreReplay { kappa: Some(kappa), ..ScoreReplay::default() },
    };
    score.check()?;
    Ok(score)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutomationRecommendation {
    /// 1 (human does everything) to 10 (fully autonomous).
    pub level: u8,
    pub trust_input: TrustScore,
    pub risk_weight: f64,
}

/// `1 + floor(9 * lower * (1 - risk_weight))`, clamped to 1..=10. Only the
/// interval's lower bound is used.
pub fn recommend_automation_level(score: &TrustScore, risk_weight: f64) -> Result<AutomationRecommendation> {
    if !(0.0..=1.0).contains(&risk_weight) {
        return Err(Error::Domain(format!("risk weight must lie in [0, 1], got {risk_weight}")));
    }
    let lower = score.interval.lower;
    if !(0.0..=1.0).contains(&lower) {
        return Err(Error::Domain(format!("score lower bound {lower} is not a probability")));
    }
    let level = (1.0 + (9.0 * lower * (1.0 - risk_weight)).floor()).clamp(1.0, 10.0) as u8;
    Ok(AutomationRecommendation { level, trust_input: score.clone(), risk_weight })
}
