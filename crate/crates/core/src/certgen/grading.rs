//! Grading certificates against a contract: correctness, relevance,
//! understandability on a 1 to 5 scale, plus polarity.

use serde::{Deserialize, Serialize};

use super::energy::normalized_distance;
use crate::certificate::{BehaviorCertificate, Claim, GenerationMethod, Grades, Outcome, Polarity, Scope};
use crate::contract::Contract;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::Task;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradingConfig {
    /// Upper edges of the relevance buckets 4, 3 and 2 on normalized energy
    /// distance. Zero distance is relevance 5; above the last edge is 1.
    pub relevance_thresholds: [f64; 3],
    /// Relevance of universally quantified conclusions without data.
    pub universal_relevance: u8,
    /// Cap applied when the certificate concerns a task the contract lacks.
    pub task_mismatch_cap: u8,
    /// Per-side point cap for the distance computation.
    pub max_points: usize,
}

impl Default for GradingConfig {
    fn default() -> Self {
        Self { relevance_thresholds: [0.1, 0.5, 2.0], universal_relevance: 2, task_mismatch_cap: 2, max_points: 500 }
    }
}

impl GradingConfig {
    pub fn relevance_bucket(&self, distance: f64) -> u8 {
        let [a, b, c] = self.relevance_thresholds;
        if distance <= 0.0 {
            5
        } else if distance <= a {
            4
        } else if distance <= b {
            3
        } else if distance <= c {
            2
        } else {
            1
        }
    }
}

fn same_task(a: &Task, b: &Task) -> bool {
    a.metric_id == b.metric_id && a.parameters == b.parameters
}

/// Rule table on provenance.
pub fn correctness_grade(bc: &BehaviorCertificate) -> u8 {
    match (&bc.method, &bc.conclusion.claim) {
        (GenerationMethod::DesignDeclaration, _) => 2,
        (GenerationMethod::AdversarialSearch, _) => 3,
        (GenerationMethod::InvarianceCheck, Claim::Invariance { transform, .. }) if transform == "identity" => 5,
        _ => 4,
    }
}

/// Fixed template score per statement kind.
pub fn understandability_grade(bc: &BehaviorCertificate) -> u8 {
    match (&bc.conclusion.claim, &bc.conclusion.scope) {
        (Claim::LossBound { .. }, Scope::DivergenceBall { .. }) => 2,
        (Claim::ExpectedLoss { .. } | Claim::LossBound { .. }, _) => 4,
        _ => 3,
    }
}

fn polarity(bc: &BehaviorCertificate, contract: &Contract) -> Polarity {
    if bc.outcome == Outcome::Negative {
        return Polarity::Refutes;
    }
    let clauses_for = |subject: &Option<Task>| -> Vec<_> {
        let Some(subject) = subject else { return Vec::new() };
        contract
            .success
            .clauses
            .iter()
            .filter(|c| contract.task(&c.task).is_some_and(|t| same_task(t, subject)))
            .collect()
    };
    match &bc.conclusion.claim {
        Claim::ExpectedLoss { value } => {
            let clauses = clauses_for(&bc.conclusion.subject_task);
            if clauses.is_empty() {
                Polarity::Neutral
            } else if clauses.iter().all(|c| c.comparator.holds(*value, c.threshold)) {
                Polarity::Supports
            } else {
                Polarity::Refutes
            }
        }
        Claim::LossBound { bound } => {
            let clauses = clauses_for(&bc.conclusion.subject_task);
            if !clauses.is_empty() && clauses.iter().all(|c| c.comparator.holds(*bound, c.threshold)) {
                Polarity::Supports
            } else {
                // a loose bound neither confirms nor contradicts
                Polarity::Neutral
            }
        }
        Claim::Invariance { holds, .. } | Claim::Deterministic { holds } => {
            if *holds {
                Polarity::Supports
            } else {
                Polarity::Refutes
            }
        }
        Claim::DeclaredProperty { .. } => Polarity::Supports,
        Claim::NotRobust { .. } => Polarity::Refutes,
        Claim::PosteriorRanking { .. } => Polarity::Neutral,
    }
}

/// Grades certificates against one contract, sampling the contract data at
/// most once.
pub struct Grader<'a> {
    contract: &'a Contract,
    config: GradingConfig,
    contract_source: String,
    sample: Option<Dataset>,
}

impl<'a> Grader<'a> {
    pub fn new(contract: &'a Contract, config: GradingConfig) -> Self {
        Self { contract_source: contract.data.source_id(), contract, config, sample: None }
    }

    fn contract_sample(&mut self) -> Result<&Dataset> {
        if self.sample.is_none() {
            self.sample = Some(self.contract.data.sample(None)?);
        }
        Ok(self.sample.as_ref().expect("just sampled"))
    }

    fn relevance(&mut self, bc: &BehaviorCertificate) -> Result<u8> {
        let ev = &bc.evidence;
        let base = if ev.source_id.as_deref() == Some(self.contract_source.as_str()) {
            5
        } else if !ev.inputs.is_empty() {
            let source = ev.source_id.clone().unwrap_or_else(|| "evidence".into());
            let inputs = Dataset::new(source, ev.inputs.clone(), None)?;
            let max_points = self.config.max_points;
            let sample = self.contract_sample()?;
            if sample.is_empty() {
                1
            } else {
                match normalized_distance(&inputs, sample, max_points) {
                    Ok(d) => self.config.relevance_bucket(d),
                    Err(Error::SchemaMismatch(_)) => 1,
                    Err(e) => return Err(e),
                }
            }
        } else if matches!(bc.conclusion.scope, Scope::Universal | Scope::DivergenceBall { .. }) {
            self.config.universal_relevance
        } else {
            return Err(Error::UngradableEvidence(format!(
                "`{}` has no data source and a non-universal conclusion",
                bc.id
            )));
        };
        let task_mismatch = bc
            .conclusion
            .subject_task
            .as_ref()
            .is_some_and(|t| !self.contract.tasks.iter().any(|c| c.metric_id == t.metric_id));
        Ok(if task_mismatch { base.min(self.config.task_mismatch_cap) } else { base })
    }

    /// A graded copy of `bc`. Pure in (bc, contract, config): any grades the
    /// certificate already carries are ignored and recomputed.
    pub fn grade(&mut self, bc: &BehaviorCertificate) -> Result<BehaviorCertificate> {
        let grades = Grades::new(correctness_grade(bc), self.relevance(bc)?, understandability_grade(bc))?;
        let mut out = bc.clone();
        out.grades = Some(grades);
        out.polarity = Some(polarity(bc, self.contract));
        out.graded_against = Some(self.contract.id.clone());
        Ok(out)
    }
}

pub fn grade_certificate(bc: &BehaviorCertificate, contract: &Contract) -> Result<BehaviorCertificate> {
    Grader::new(contract, GradingConfig::default()).grade(bc)
}

pub fn grade_all(
    bcs: &[BehaviorCertificate],
    contract: &Contract,
    config: GradingConfig,
) -> Result<Vec<BehaviorCertificate>> {
    let mut grader = Grader::new(contract, config);
    bcs.iter().map(|bc| grader.grade(bc)).collect()
}
