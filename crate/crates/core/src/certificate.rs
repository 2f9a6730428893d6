//! Behavior certificates: (evidence, conclusion) records about model behavior.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::data::{DataPoint, Value};
use crate::error::{Error, Result};
use crate::metrics::Task;

pub const BC_SCHEMA: &str = "bc_schema_v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    /// Produced by running the model.
    Interactive,
    /// Produced from design and training metadata alone.
    NonInteractive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMethod {
    HoldoutValidation,
    OodEvaluation,
    OotEvaluation,
    InvarianceCheck,
    AdversarialSearch,
    DeterminismAudit,
    DesignDeclaration,
    ModelComparison,
}

impl GenerationMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            GenerationMethod::HoldoutValidation => "holdout_validation",
            GenerationMethod::OodEvaluation => "ood_evaluation",
            GenerationMethod::OotEvaluation => "oot_evaluation",
            GenerationMethod::InvarianceCheck => "invariance_check",
            GenerationMethod::AdversarialSearch => "adversarial_search",
            GenerationMethod::DeterminismAudit => "determinism_audit",
            GenerationMethod::DesignDeclaration => "design_declaration",
            GenerationMethod::ModelComparison => "model_comparison",
        }
    }
}

/// Whether the certificate's own finding is favorable (a property held, a
/// loss was measured) or unfavorable (a counterexample was found).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Positive,
    Negative,
}

/// Stance of a graded certificate toward one contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Supports,
    Refutes,
    Neutral,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Supports => 1.0,
            Polarity::Refutes => -1.0,
            Polarity::Neutral => 0.0,
        }
    }
}

/// Correctness, relevance and understandability on a 1-5 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGrades")]
pub struct Grades {
    correctness: u8,
    relevance: u8,
    understandability: u8,
}

#[derive(Deserialize)]
struct RawGrades {
    correctness: u8,
    relevance: u8,
    understandability: u8,
}

impl TryFrom<RawGrades> for Grades {
    type Error = Error;

    fn try_from(raw: RawGrades) -> Result<Self> {
        Grades::new(raw.correctness, raw.relevance, raw.understandability)
    }
}

impl Grades {
    pub fn new(correctness: u8, relevance: u8, understandability: u8) -> Result<Self> {
        for (name, g) in [("correctness", correctness), ("relevance", relevance), ("understandability", understandability)] {
            if !(1..=5).contains(&g) {
                return Err(Error::Domain(format!("{name} grade must be in 1..=5, got {g}")));
            }
        }
        Ok(Self { correctness, relevance, understandability })
    }

    pub fn correctness(&self) -> u8 {
        self.correctness
    }

    pub fn relevance(&self) -> u8 {
        self.relevance
    }

    pub fn understandability(&self) -> u8 {
        self.understandability
    }
}

/// A concrete transform as applied to one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum AppliedTransform {
    Identity,
    Permutation { order: Vec<usize> },
    Rotation2d { angle: f64, axes: [usize; 2] },
    AdditiveNoise { noise: Vec<f64> },
    FeatureDrop { index: usize },
}

/// A replayable witness of a violated property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub input: DataPoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<DataPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<AppliedTransform>,
    pub seed: u64,
    /// Output on `input`, then on `variant` (or on the divergent repeat).
    pub outputs: Vec<Value>,
    pub gap: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub losses: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub generator: String,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
    /// Every point fed to the model, in order.
    #[serde(default)]
    pub inputs: Vec<DataPoint>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub parameters: serde_json::Value,
    #[serde(default)]
    pub measured: BTreeMap<String, f64>,
    #[serde(default)]
    pub counterexamples: Vec<Counterexample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Claim {
    /// Expected task loss over the subject source.
    ExpectedLoss { value: f64 },
    /// Task loss is at most `bound` everywhere in scope.
    LossBound { bound: f64 },
    Invariance { transform: String, holds: bool, max_gap: f64, tolerance: f64 },
    Deterministic { holds: bool },
    /// A search found a transform under which the model fails.
    NotRobust { transform_family: String },
    DeclaredProperty { claim_kind: String, statement: String },
    PosteriorRanking { posterior: BTreeMap<String, f64>, best: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Scope {
    /// Only the distribution the evidence was measured on.
    MeasuredSource,
    /// Every input.
    Universal,
    /// Every distribution within `radius` of the subject source.
    DivergenceBall { divergence: String, radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conclusion {
    pub claim: Claim,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_task: Option<Task>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_source: Option<String>,
    pub scope: Scope,
}

impl Conclusion {
    pub fn is_universal(&self) -> bool {
        !matches!(self.scope, Scope::MeasuredSource)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorCertificate {
    pub schema: String,
    pub id: String,
    pub kind: CertificateKind,
    pub method: GenerationMethod,
    pub outcome: Outcome,
    pub evidence: Evidence,
    pub conclusion: Conclusion,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polarity: Option<Polarity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grades: Option<Grades>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graded_against: Option<String>,
    pub plain_text: String,
    pub technical_text: String,
}

impl BehaviorCertificate {
    /// Assemble an ungraded certificate. The id is derived from the content,
    /// so regenerating identical evidence yields an identical id.
    pub fn new(
        kind: CertificateKind,
        method: GenerationMethod,
        outcome: Outcome,
        evidence: Evidence,
        conclusion: Conclusion,
        plain_text: String,
        technical_text: String,
    ) -> Self {
        let digest = canonical::digest(&(method, outcome, &evidence, &conclusion)).expect("certificates serialize");
        Self {
            schema: BC_SCHEMA.to_owned(),
            id: format!("{}-{}", method.as_str(), &digest[..12]),
            kind,
            method,
            outcome,
            evidence,
            conclusion,
            polarity: None,
            grades: None,
            graded_against: None,
            plain_text,
            technical_text,
        }
    }

    pub fn is_graded(&self) -> bool {
        self.grades.is_some() && self.polarity.is_some()
    }

    pub fn is_negative(&self) -> bool {
        self.outcome == Outcome::Negative
    }

    /// Grades and polarity, or `UngradedCertificate`.
    pub fn graded(&self) -> Result<(Grades, Polarity)> {
        match (self.grades, self.polarity) {
            (Some(g), Some(p)) => Ok((g, p)),
            _ => Err(Error::UngradedCertificate(self.id.clone())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> BehaviorCertificate {
        BehaviorCertificate::new(
            CertificateKind::Interactive,
            GenerationMethod::DeterminismAudit,
            Outcome::Positive,
            Evidence {
                generator: "determinism_audit".into(),
                model_id: "m".into(),
                source_id: None,
                inputs: vec![DataPoint::from_numbers(&[1.0])],
                seeds: vec![1],
                parameters: serde_json::json!({"repeats": 2}),
                measured: BTreeMap::new(),
                counterexamples: vec![],
            },
            Conclusion { claim: Claim::Deterministic { holds: true }, subject_task: None, subject_source: None, scope: Scope::Universal },
            "p".into(),
            "t".into(),
        )
    }

    #[test]
    fn ids_are_content_derived() {
        let a = sample();
        let b = sample();
        assert_eq!(a.id, b.id);
        assert!(a.id.starts_with("determinism_audit-"));
        let mut c = sample();
        c.evidence.seeds = vec![2];
        let c = BehaviorCertificate::new(c.kind, c.method, c.outcome, c.evidence, c.conclusion, c.plain_text, c.technical_text);
        assert_ne!(a.id, c.id);
    }

    #[test]
    fn grades_outside_scale_are_rejected() {
        assert!(Grades::new(0, 3, 3).is_err());
        assert!(Grades::new(3, 6, 3).is_err());
        assert!(serde_json::from_str::<Grades>(r#"{"correctness":9,"relevance":1,"understandability":1}"#).is_err());
        let g: Grades = serde_json::from_str(r#"{"correctness":5,"relevance":1,"understandability":2}"#).unwrap();
        assert_eq!(g.correctness(), 5);
    }

    #[test]
    fn ungraded_certificate_reports_its_id() {
        let bc = sample();
        assert!(matches!(bc.graded(), Err(Error::UngradedCertificate(id)) if id == bc.id));
    }
}
