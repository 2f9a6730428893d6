//! Non-interactive certificates built from published design declarations.

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::certificate::{
    BehaviorCertificate, CertificateKind, Claim, Conclusion, Evidence, GenerationMethod, Outcome, Scope,
};
use crate::error::{Error, Result};
use crate::metrics::Task;
use crate::runner::{DeclarationKind, DesignDeclaration, ModelMetadata};

#[derive(Debug, Deserialize)]
struct DroParams {
    bound: f64,
    radius: f64,
    #[serde(default = "chi_squared")]
    divergence: String,
    #[serde(default)]
    metric_id: Option<String>,
    #[serde(default)]
    training_source: Option<String>,
}

fn chi_squared() -> String {
    "chi_squared".into()
}

fn kind_name(kind: DeclarationKind) -> &'static str {
    match kind {
        DeclarationKind::Invariance => "invariance",
        DeclarationKind::AugmentationRobustness => "augmentation_robustness",
        DeclarationKind::DroBound => "dro_bound",
        DeclarationKind::PriorKnowledge => "prior_knowledge",
    }
}

fn evidence(model_id: &str, d: &DesignDeclaration, measured: BTreeMap<String, f64>, source: Option<String>) -> Evidence {
    Evidence {
        generator: GenerationMethod::DesignDeclaration.as_str().to_owned(),
        model_id: model_id.to_owned(),
        source_id: source,
        inputs: Vec::new(),
        seeds: Vec::new(),
        parameters: serde_json::json!({ "claim_id": d.claim_id, "claim_kind": d.claim_kind, "parameters": d.parameters }),
        measured,
        counterexamples: Vec::new(),
    }
}

fn dro_certificate(model_id: &str, d: &DesignDeclaration) -> Result<BehaviorCertificate> {
    let p: DroParams = serde_json::from_value(d.parameters.clone())
        .map_err(|e| Error::InvalidContract(format!("declaration `{}`: {e}", d.claim_id)))?;
    let mut measured = BTreeMap::new();
    measured.insert("bound".to_owned(), p.bound);
    measured.insert("radius".to_owned(), p.radius);
    let plain = format!(
        "The model was trained so that its loss stays at {} or lower on any data that differs from its \
         training data by at most {}, as measured by the {} divergence. The designers state this; it was not \
         checked here.",
        p.bound, p.radius, p.divergence
    );
    let technical = format!(
        "Distributionally robust training: sup over Q with D_{}(Q || P_train) <= {} of E_Q[loss] <= {} \
         (declared by `{}`).",
        p.divergence, p.radius, p.bound, d.claim_id
    );
    Ok(BehaviorCertificate::new(
        CertificateKind::NonInteractive,
        GenerationMethod::DesignDeclaration,
        Outcome::Positive,
        evidence(model_id, d, measured, p.training_source.clone()),
        Conclusion {
            claim: Claim::LossBound { bound: p.bound },
            subject_task: p.metric_id.as_deref().map(|m| Task::new(m, m)),
            subject_source: p.training_source,
            scope: Scope::DivergenceBall { divergence: p.divergence, radius: p.radius },
        },
        plain,
        technical,
    ))
}

fn property_certificate(model_id: &str, d: &DesignDeclaration) -> BehaviorCertificate {
    let kind = kind_name(d.claim_kind);
    let detail = d
        .parameters
        .get("transform")
        .or_else(|| d.parameters.get("statement"))
        .and_then(|v| v.as_str())
        .unwrap_or(d.claim_id.as_str())
        .to_owned();
    let (plain, statement) = match d.claim_kind {
        DeclarationKind::Invariance => (
            format!("The designers state the model gives the same answer when inputs are changed by {detail}."),
            format!("f(x) = f(t(x)) for every x and every t in `{detail}`"),
        ),
        DeclarationKind::AugmentationRobustness => (
            format!("The model was trained with {detail} data augmentation, so it should cope with such changes."),
            format!("trained with `{detail}` augmentation"),
        ),
        _ => (
            format!("The designers built in this prior knowledge: {detail}."),
            format!("prior knowledge `{detail}` encoded in the model design"),
        ),
    };
    BehaviorCertificate::new(
        CertificateKind::NonInteractive,
        GenerationMethod::DesignDeclaration,
        Outcome::Positive,
        evidence(model_id, d, BTreeMap::new(), None),
        Conclusion {
            claim: Claim::DeclaredProperty { claim_kind: kind.to_owned(), statement: statement.clone() },
            subject_task: None,
            subject_source: None,
            scope: Scope::Universal,
        },
        plain,
        format!("Declared {kind} (`{}`): {statement}; unaudited.", d.claim_id),
    )
}

/// One certificate per visible design declaration, in declaration order.
/// Declarations are only present in metadata obtained at the highest access
/// level.
pub fn design_certificates(metadata: &ModelMetadata) -> Result<Vec<BehaviorCertificate>> {
    metadata
        .design_declarations
        .iter()
        .map(|d| match d.claim_kind {
            DeclarationKind::DroBound => dro_certificate(&metadata.model_id, d),
            _ => Ok(property_certificate(&metadata.model_id, d)),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(decls: Vec<DesignDeclaration>) -> ModelMetadata {
        ModelMetadata {
            model_id: "m".into(),
            input_schema: None,
            output_schema: None,
            supports_log_likelihood: false,
            design_declarations: decls,
        }
    }

    #[test]
    fn empty_declarations_give_no_certificates() {
        assert!(design_certificates(&meta(vec![])).unwrap().is_empty());
    }

    #[test]
    fn dro_declaration_carries_its_bound() {
        let d = DesignDeclaration {
            claim_id: "dro".into(),
            claim_kind: DeclarationKind::DroBound,
            parameters: serde_json::json!({ "bound": 1.6, "radius": 0.3 }),
        };
        let bcs = design_certificates(&meta(vec![d])).unwrap();
        assert_eq!(bcs.len(), 1);
        assert_eq!(bcs[0].kind, CertificateKind::NonInteractive);
        assert_eq!(bcs[0].conclusion.claim, Claim::LossBound { bound: 1.6 });
        assert_eq!(
            bcs[0].conclusion.scope,
            Scope::DivergenceBall { divergence: "chi_squared".into(), radius: 0.3 }
        );
        assert!(bcs[0].plain_text.contains("1.6 or lower"));
    }

    #[test]
    fn invariance_declaration_is_universal() {
        let d = DesignDeclaration {
            claim_id: "perm".into(),
            claim_kind: DeclarationKind::Invariance,
            parameters: serde_json::json!({ "transform": "permutation" }),
        };
        let bcs = design_certificates(&meta(vec![d])).unwrap();
        assert!(bcs[0].conclusion.is_universal());
        assert_eq!(bcs[0].method, GenerationMethod::DesignDeclaration);
    }
}
