//! Model cards and certificate bundles.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::certificate::{BehaviorCertificate, CertificateKind, GenerationMethod, Grades, Outcome, Polarity, BC_SCHEMA};
use crate::error::{Error, Result};
use crate::runner::protocol::PROTOCOL_VERSION;
use crate::runner::ModelMetadata;
use crate::trust::{TrustScore, TRUST_SCHEMA};

pub const CARD_SCHEMA: &str = "card_schema_v1";
pub const BUNDLE_SCHEMA: &str = "bundle_v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CardFormat {
    Markdown,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSummary {
    pub model_id: String,
    pub supports_log_likelihood: bool,
    pub declared_claims: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DigestEntry {
    pub id: String,
    pub kind: CertificateKind,
    pub method: GenerationMethod,
    pub outcome: Outcome,
    pub graded_against: Option<String>,
    pub polarity: Polarity,
    pub grades: Grades,
    pub technical_text: String,
    pub plain_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub protocol_version: String,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCard {
    pub schema: String,
    pub model: ModelSummary,
    pub scores: Vec<TrustScore>,
    pub certificates: Vec<DigestEntry>,
    /// Every certificate that refutes a contract, in digest order.
    pub limitations: Vec<DigestEntry>,
    pub provenance: Provenance,
}

impl ModelCard {
    pub fn build(metadata: &ModelMetadata, bcs: &[BehaviorCertificate], scores: &[TrustScore]) -> Result<Self> {
        let mut certificates = Vec::with_capacity(bcs.len());
        let mut seeds = BTreeSet::new();
        for bc in bcs {
            let (grades, polarity) = bc.graded()?;
            seeds.extend(bc.evidence.seeds.iter().copied());
            certificates.push(DigestEntry {
                id: bc.id.clone(),
                kind: bc.kind,
                method: bc.method,
                outcome: bc.outcome,
                graded_against: bc.graded_against.clone(),
                polarity,
                grades,
                technical_text: bc.technical_text.clone(),
                plain_text: bc.plain_text.clone(),
            });
        }
        seeds.extend(scores.iter().filter_map(|s| s.replay.seed));
        let limitations = certificates.iter().filter(|e| e.polarity == Polarity::Refutes).cloned().collect();
        Ok(Self {
            schema: CARD_SCHEMA.to_owned(),
            model: ModelSummary {
                model_id: metadata.model_id.clone(),
                supports_log_likelihood: metadata.supports_log_likelihood,
                declared_claims: metadata.design_declarations.iter().map(|d| d.claim_id.clone()).collect(),
            },
            scores: scores.to_vec(),
            certificates,
            limitations,
            provenance: Provenance { protocol_version: PROTOCOL_VERSION.to_owned(), seeds: seeds.into_iter().collect() },
        })
    }

    /// Parse and check a JSON card.
    pub fn from_json(text: &str) -> Result<Self> {
        let card: ModelCard = serde_json::from_str(text)?;
        if card.schema != CARD_SCHEMA {
            return Err(Error::SchemaVersionMismatch { expected: CARD_SCHEMA.into(), found: card.schema });
        }
        Ok(card)
    }

    pub fn to_json(&self) -> Result<String> {
        canonical::to_string_pretty(self)
    }

    pub fn to_markdown(&self) -> String {
        let mut md = String::new();
        let _ = writeln!(md, "# Model card: {}\n", self.model.model_id);
        let _ = writeln!(md, "## Model\n");
        let _ = writeln!(md, "- Identifier: `{}`", self.model.model_id);
        let _ = writeln!(
            md,
            "- Reports likelihoods: {}",
            if self.model.supports_log_likelihood { "yes" } else { "no" }
        );
        if !self.model.declared_claims.is_empty() {
            let claims: Vec<String> = self.model.declared_claims.iter().map(|c| format!("`{c}`")).collect();
            let _ = writeln!(md, "- Declared design claims: {}", claims.join(", "));
        }
        let _ = writeln!(md, "\n## Trust scores\n");
        if self.scores.is_empty() {
            let _ = writeln!(md, "No contracts were scored.");
        } else {
            let _ = writeln!(md, "| Contract | Method | Score | Interval | Evidence |");
            let _ = writeln!(md, "|---|---|---|---|---|");
            for s in &self.scores {
                let _ = writeln!(
                    md,
                    "| `{}` | {:?} | {:.4} | [{:.4}, {:.4}] | {} |",
                    s.contract_id,
                    s.method,
                    s.value,
                    s.interval.lower,
                    s.interval.upper,
                    s.evidence_refs.len()
                );
            }
        }
        let _ = writeln!(md, "\n## Behavior certificates\n");
        if self.certificates.is_empty() {
            let _ = writeln!(md, "No certificates.");
        }
        for e in &self.certificates {
            let _ = writeln!(md, "### `{}`\n", e.id);
            let _ = writeln!(
                md,
                "- {:?}, {}, outcome {:?}, {:?} contract `{}`",
                e.kind,
                e.method.as_str(),
                e.outcome,
                e.polarity,
                e.graded_against.as_deref().unwrap_or("-")
            );
            let _ = writeln!(
                md,
                "- Grades: correctness {}, relevance {}, understandability {}",
                e.grades.correctness(),
                e.grades.relevance(),
                e.grades.understandability()
            );
            let _ = writeln!(md, "- In plain words: {}", e.plain_text);
            let _ = writeln!(md, "- Technical: {}\n", e.technical_text);
        }
        if !self.limitations.is_empty() {
            let _ = writeln!(md, "## Limitations\n");
            for e in &self.limitations {
                let _ = writeln!(md, "- `{}` ({}): {}", e.id, e.graded_against.as_deref().unwrap_or("-"), e.plain_text);
            }
            md.push('\n');
        }
        let _ = writeln!(md, "## Provenance\n");
        let _ = writeln!(md, "- Protocol: `{}`", self.provenance.protocol_version);
        let seeds: Vec<String> = self.provenance.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(md, "- Seeds: {}", if seeds.is_empty() { "none".to_owned() } else { seeds.join(", ") });
        md
    }
}

/// Render a card. Identical inputs give byte-identical documents.
pub fn render_model_card(
    metadata: &ModelMetadata,
    bcs: &[BehaviorCertificate],
    scores: &[TrustScore],
    format: CardFormat,
) -> Result<String> {
    let card = ModelCard::build(metadata, bcs, scores)?;
    match format {
        CardFormat::Markdown => Ok(card.to_markdown()),
        CardFormat::Json => card.to_json(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub schema: String,
    pub certificates: Vec<BehaviorCertificate>,
    pub scores: Vec<TrustScore>,
}

impl Bundle {
    pub fn new(certificates: Vec<BehaviorCertificate>, scores: Vec<TrustScore>) -> Self {
        Self { schema: BUNDLE_SCHEMA.to_owned(), certificates, scores }
    }

    pub fn to_json(&self) -> Result<String> {
        canonical::to_string_pretty(self)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let corrupt = |e: &dyn std::fmt::Display| Error::CorruptArchive(e.to_string());
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| corrupt(&e))?;
        let version = |v: &serde_json::Value| v.get("schema").and_then(|s| s.as_str()).map(str::to_owned);
        let check = |found: Option<String>, expected: &str| match found {
            Some(f) if f == expected => Ok(()),
            Some(f) => Err(Error::SchemaVersionMismatch { expected: expected.into(), found: f }),
            None => Err(Error::CorruptArchive(format!("record without a `{expected}` schema field"))),
        };
        check(version(&raw), BUNDLE_SCHEMA)?;
        for (key, expected) in [("certificates", BC_SCHEMA), ("scores", TRUST_SCHEMA)] {
            let items = raw
                .get(key)
                .and_then(|v| v.as_array())
                .ok_or_else(|| Error::CorruptArchive(format!("missing `{key}` list")))?;
            for item in items {
                check(version(item), expected)?;
            }
        }
        serde_json::from_value(raw).map_err(|e| corrupt(&e))
    }
}

pub fn export_bundle(bcs: &[BehaviorCertificate], scores: &[TrustScore], path: &Path) -> Result<()> {
    fs::write(path, Bundle::new(bcs.to_vec(), scores.to_vec()).to_json()?)?;
    Ok(())
}

pub fn import_bundle(path: &Path) -> Result<(Vec<BehaviorCertificate>, Vec<TrustScore>)> {
    let bundle = Bundle::parse(&fs::read_to_string(path)?)?;
    Ok((bundle.certificates, bundle.scores))
}
