use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRUST_SCHEMA: &str = "trust_schema_v1";

/// Beta prior over the probability that a model satisfies a contract.
///
/// The default Beta(1, 2) has mean 1/3: before any evidence a model is
/// assumed more likely to fail a contract than to meet it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPrior")]
pub struct PriorSpec {
    alpha: f64,
    beta: f64,
}

#[derive(Deserialize)]
struct RawPrior {
    alpha: f64,
    beta: f64,
}

impl TryFrom<RawPrior> for PriorSpec {
    type Error = Error;

    fn try_from(raw: RawPrior) -> Result<Self> {
        PriorSpec::new(raw.alpha, raw.beta)
    }
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 2.0 }
    }
}

impl PriorSpec {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite() {
            Ok(Self { alpha, beta })
        } else {
            Err(Error::Domain(format!("prior parameters must be positive, got ({alpha}, {beta})")))
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    /// Direct measurement on samples from the contract's own data source.
    Estimation,
    /// Pooled from certificates gathered on other data or tasks.
    Inference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

/// Everything needed to recompute a score.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreReplay {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_trials: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub successes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustScore {
    pub schema: String,
    pub contract_id: String,
    pub value: f64,
    pub interval: Interval,
    pub method: ScoreMethod,
    pub prior: PriorSpec,
    pub evidence_refs: Vec<String>,
    #[serde(default)]
    pub replay: ScoreReplay,
}

impl TrustScore {
    /// Checks `0 <= lower <= value <= upper <= 1`.
    pub fn check(&self) -> Result<()> {
        let Interval { lower, upper } = self.interval;
        if 0.0 <= lower && lower <= self.value && self.value <= upper && upper <= 1.0 {
            Ok(())
        } else {
            Err(Error::Numerical(format!(
                "trust score {} outside its interval [{lower}, {upper}]",
                self.value
            )))
        }
    }
}
