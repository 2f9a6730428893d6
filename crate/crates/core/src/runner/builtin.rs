//! Reference models with closed-form behavior, used as fixtures and as
//! protocol peers via `bctrust serve`.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;

use super::{DeclarationKind, DesignDeclaration, Model, ModelMetadata};
use crate::data::{DataPoint, FeatureKind, Value};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, splitmix64, unit_from_bits};

pub const BUILTIN_NAMES: [&str; 7] = [
    "mean_aggregator",
    "linear",
    "weighted_sum",
    "bernoulli_success",
    "gaussian_likelihood",
    "spurious_feature_classifier",
    "seeded_noise",
];

#[derive(Debug, Clone, PartialEq)]
pub enum Builtin {
    /// Mean of all numeric feature values.
    MeanAggregator,
    /// `bias + weights . x`; empty weights give the constant `bias`.
    Linear { weights: Vec<f64>, bias: f64 },
    /// `weights . x`.
    WeightedSum { weights: Vec<f64> },
    /// Outputs 1 with probability `p`, as a fixed function of (point, seed).
    BernoulliSuccess { p: f64 },
    /// Predicts `mu + weights . x`; densities are normal with scale `sigma`.
    GaussianLikelihood { mu: f64, sigma: f64, weights: Vec<f64> },
    /// Predicts 1 iff the named feature exceeds `threshold`, ignoring all others.
    SpuriousFeatureClassifier { feature: String, threshold: f64 },
    /// Mean of numeric features plus seeded normal noise.
    SeededNoise { scale: f64 },
}

#[derive(Debug, Clone)]
pub struct BuiltinModel {
    name: String,
    builtin: Builtin,
    declarations: Vec<DesignDeclaration>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoParams {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearParams {
    weights: Vec<f64>,
    #[serde(default)]
    bias: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsParams {
    weights: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BernoulliParams {
    p: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GaussianParams {
    #[serde(default)]
    mu: f64,
    #[serde(default = "one")]
    sigma: f64,
    #[serde(default)]
    weights: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpuriousParams {
    #[serde(default = "spurious_name")]
    feature: String,
    #[serde(default = "half")]
    threshold: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseParams {
    #[serde(default = "one")]
    scale: f64,
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

fn spurious_name() -> String {
    "spurious".into()
}

fn typed<T: for<'de> Deserialize<'de>>(name: &str, params: serde_json::Value) -> Result<T> {
    serde_json::from_value(params).map_err(|e| Error::Domain(format!("builtin `{name}`: {e}")))
}

impl BuiltinModel {
    /// Parse a builtin by name. Every builtin also accepts an optional
    /// `declarations` array of extra design declarations.
    pub fn parse(name: &str, params: &serde_json::Value) -> Result<Self> {
        let mut params = match params {
            serde_json::Value::Null => serde_json::Map::new(),
            serde_json::Value::Object(m) => m.clone(),
            other => return Err(Error::Domain(format!("builtin parameters must be an object, got {other}"))),
        };
        let extra: Vec<DesignDeclaration> = match params.remove("declarations") {
            Some(v) => serde_json::from_value(v).map_err(|e| Error::Domain(format!("declarations: {e}")))?,
            None => Vec::new(),
        };
        let params = serde_json::Value::Object(params);
        let builtin = match name {
            "mean_aggregator" => {
                typed::<NoParams>(name, params)?;
                Builtin::MeanAggregator
            }
            "linear" => {
                let p: LinearParams = typed(name, params)?;
                Builtin::Linear { weights: p.weights, bias: p.bias }
            }
            "weighted_sum" => {
                let p: WeightsParams = typed(name, params)?;
                Builtin::WeightedSum { weights: p.weights }
            }
            "bernoulli_success" => {
                let p: BernoulliParams = typed(name, params)?;
                if !(0.0..=1.0).contains(&p.p) {
                    return Err(Error::Domain(format!("bernoulli_success p must be in [0, 1], got {}", p.p)));
                }
                Builtin::BernoulliSuccess { p: p.p }
            }
            "gaussian_likelihood" => {
                let p: GaussianParams = typed(name, params)?;
                if p.sigma.is_nan() || p.sigma <= 0.0 {
                    return Err(Error::Domain(format!("gaussian_likelihood sigma must be positive, got {}", p.sigma)));
                }
                Builtin::GaussianLikelihood { mu: p.mu, sigma: p.sigma, weights: p.weights }
            }
            "spurious_feature_classifier" => {
                let p: SpuriousParams = typed(name, params)?;
                Builtin::SpuriousFeatureClassifier { feature: p.feature, threshold: p.threshold }
            }
            "seeded_noise" => {
                let p: NoiseParams = typed(name, params)?;
                Builtin::SeededNoise { scale: p.scale }
            }
            other => return Err(Error::UnknownBuiltin(other.to_owned())),
        };
        let mut declarations = builtin.shipped_declarations();
        declarations.extend(extra);
        Ok(Self { name: name.to_owned(), builtin, declarations })
    }

    pub fn builtin(&self) -> &Builtin {
        &self.builtin
    }
}

impl Builtin {
    fn shipped_declarations(&self) -> Vec<DesignDeclaration> {
        match self {
            Builtin::MeanAggregator => vec![DesignDeclaration {
                claim_id: "mean-aggregation-permutation".into(),
                claim_kind: DeclarationKind::Invariance,
                parameters: serde_json::json!({
                    "transform": "permutation",
                    "design": "output is a mean over all input features",
                }),
            }],
            _ => Vec::new(),
        }
    }
}

fn dot(weights: &[f64], x: &[f64]) -> Result<f64> {
    if weights.len() != x.len() {
        return Err(Error::ModelFailure(format!(
            "expected {} numeric features, got {}",
            weights.len(),
            x.len()
        )));
    }
    Ok(weights.iter().zip(x).map(|(w, x)| w * x).sum())
}

/// Mean over values summed in sorted order, so the result is bit-identical
/// under any reordering of the inputs.
fn order_free_mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::ModelFailure("no numeric features to aggregate".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted.iter().sum::<f64>() / sorted.len() as f64)
}

fn point_stream(point: &DataPoint, seed: u64) -> u64 {
    splitmix64(point.key() ^ derive_seed(seed, 0x6265_726e))
}

impl Builtin {
    fn predict(&self, point: &DataPoint, seed: u64) -> Result<f64> {
        let x = point.flat_numeric();
        match self {
            Builtin::MeanAggregator => order_free_mean(&x),
            Builtin::Linear { weights, bias } if weights.is_empty() => Ok(*bias),
            Builtin::Linear { weights, bias } => Ok(bias + dot(weights, &x)?),
            Builtin::WeightedSum { weights } => dot(weights, &x),
            Builtin::BernoulliSuccess { p } => {
                Ok(if unit_from_bits(point_stream(point, seed)) < *p { 1.0 } else { 0.0 })
            }
            Builtin::GaussianLikelihood { mu, weights, .. } if weights.is_empty() => Ok(*mu),
            Builtin::GaussianLikelihood { mu, weights, .. } => Ok(mu + dot(weights, &x)?),
            Builtin::SpuriousFeatureClassifier { feature, threshold } => {
                let v = point
                    .feature(feature)
                    .and_then(Value::as_f64)
                    .ok_or_else(|| Error::ModelFailure(format!("missing numeric feature `{feature}`")))?;
                Ok(if v > *threshold { 1.0 } else { 0.0 })
            }
            Builtin::SeededNoise { scale } => {
                let base = order_free_mean(&x)?;
                let z: f64 = StandardNormal.sample(&mut rng_from_seed(point_stream(point, seed)));
                Ok(base + scale * z)
            }
        }
    }

    fn log_density(&self, point: &DataPoint) -> Result<f64> {
        let Builtin::GaussianLikelihood { sigma, weights, .. } = self else {
            return Err(Error::Unsupported("model has no likelihood".into()));
        };
        let observed = match (&point.target, weights.is_empty()) {
            (Some(t), _) => t.as_f64().ok_or_else(|| Error::ModelFailure("target must be numeric".into()))?,
            (None, true) => *point
                .flat_numeric()
                .first()
                .ok_or_else(|| Error::ModelFailure("point has no numeric feature".into()))?,
            (None, false) => return Err(Error::ModelFailure("regression likelihood needs targets".into())),
        };
        let mean = self.predict(point, 0)?;
        let z = (observed - mean) / sigma;
        Ok(-0.5 * (2.0 * PI).ln() - sigma.ln() - 0.5 * z * z)
    }
}

impl Model for BuiltinModel {
    fn metadata(&self) -> ModelMetadata {
        ModelMetadata {
            model_id: self.name.clone(),
            input_schema: None,
            output_schema: Some(FeatureKind::Number),
            supports_log_likelihood: matches!(self.builtin, Builtin::GaussianLikelihood { .. }),
            design_declarations: self.declarations.clone(),
        }
    }

    fn eval(&mut self, inputs: &[DataPoint], seed: u64) -> Result<Vec<Value>> {
        inputs.iter().map(|p| self.builtin.predict(p, seed).map(Value::Number)).collect()
    }

    fn log_likelihood(&mut self, points: &[DataPoint]) -> Result<f64> {
        let mut total = 0.0;
        for p in points {
            total += self.builtin.log_density(p)?;
        }
        Ok(total)
    }
}
