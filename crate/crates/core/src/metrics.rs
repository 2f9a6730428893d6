//! Task metrics. Every metric is a loss: lower is better.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{group_indices, Dataset, Value};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    LowerIsBetter,
}

/// A named computable function of model outputs on a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub name: String,
    pub metric_id: String,
    #[serde(default = "empty_object")]
    pub parameters: serde_json::Value,
    #[serde(default)]
    pub direction: Direction,
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

impl Task {
    pub fn new(name: &str, metric_id: &str) -> Self {
        Self { name: name.into(), metric_id: metric_id.into(), parameters: empty_object(), direction: Direction::default() }
    }

    pub fn with_parameters(mut self, parameters: serde_json::Value) -> Self {
        self.parameters = parameters;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequiredField {
    Targets,
    Groups,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDescriptor {
    pub name: String,
    pub default: f64,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDescriptor {
    pub id: String,
    pub description: String,
    pub requires: Vec<RequiredField>,
    pub parameters: Vec<ParamDescriptor>,
}

pub trait Metric: Send + Sync {
    fn descriptor(&self) -> MetricDescriptor;

    /// Loss of `outputs` against `data`. Callers guarantee equal lengths and
    /// a non-empty dataset; required fields are checked by the metric.
    fn evaluate(&self, params: &MetricParams, outputs: &[Value], data: &Dataset) -> Result<f64>;
}

/// Resolved numeric parameters for one metric evaluation.
#[derive(Debug, Clone, Default)]
pub struct MetricParams(BTreeMap<String, f64>);

impl MetricParams {
    pub fn get(&self, name: &str) -> f64 {
        self.0[name]
    }

    fn resolve(descriptor: &MetricDescriptor, raw: &serde_json::Value) -> Result<Self> {
        let mut out: BTreeMap<String, f64> =
            descriptor.parameters.iter().map(|p| (p.name.clone(), p.default)).collect();
        match raw {
            serde_json::Value::Null => {}
            serde_json::Value::Object(map) => {
                for (k, v) in map {
                    let slot = out.get_mut(k).ok_or_else(|| {
                        Error::Domain(format!("metric `{}` has no parameter `{k}`", descriptor.id))
                    })?;
                    *slot = v.as_f64().ok_or_else(|| {
                        Error::Domain(format!("parameter `{k}` of `{}` must be a number", descriptor.id))
                    })?;
                }
            }
            other => return Err(Error::Domain(format!("metric parameters must be an object, got {other}"))),
        }
        Ok(Self(out))
    }
}

#[derive(Clone)]
pub struct MetricRegistry {
    metrics: BTreeMap<String, Arc<dyn Metric>>,
}

impl Default for MetricRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl MetricRegistry {
    pub fn empty() -> Self {
        Self { metrics: BTreeMap::new() }
    }

    /// Registry preloaded with every built-in metric.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(Mse));
        r.register(Arc::new(LogLoss));
        r.register(Arc::new(AccuracyLoss));
        r.register(Arc::new(DemographicParityGap));
        r.register(Arc::new(GaussianNll));
        r
    }

    pub fn register(&mut self, metric: Arc<dyn Metric>) {
        self.metrics.insert(metric.descriptor().id, metric);
    }

    pub fn get(&self, id: &str) -> Option<&Arc<dyn Metric>> {
        self.metrics.get(id)
    }

    pub fn descriptor(&self, id: &str) -> Option<MetricDescriptor> {
        self.get(id).map(|m| m.descriptor())
    }

    pub fn listing(&self) -> Vec<MetricDescriptor> {
        self.metrics.values().map(|m| m.descriptor()).collect()
    }
}

/// Descriptors of every built-in metric.
pub fn builtin_metrics() -> Vec<MetricDescriptor> {
    MetricRegistry::builtin().listing()
}

/// Evaluate `task` on model `outputs` for `dataset`.
pub fn evaluate_task(registry: &MetricRegistry, task: &Task, outputs: &[Value], dataset: &Dataset) -> Result<f64> {
    let metric = registry.get(&task.metric_id).ok_or_else(|| Error::UnresolvableMetric(task.metric_id.clone()))?;
    dataset.ensure_non_empty()?;
    if outputs.len() != dataset.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} outputs for {} points",
            outputs.len(),
            dataset.len()
        )));
    }
    let params = MetricParams::resolve(&metric.descriptor(), &task.parameters)?;
    metric.evaluate(&params, outputs, dataset)
}

fn numeric_outputs(metric: &str, outputs: &[Value]) -> Result<Vec<f64>> {
    outputs
        .iter()
        .map(|o| o.as_f64().ok_or_else(|| Error::ShapeMismatch(format!("metric `{metric}` needs numeric outputs, got {o}"))))
        .collect()
}

fn numeric_targets(metric: &str, data: &Dataset) -> Result<Vec<f64>> {
    data.points
        .iter()
        .map(|p| match &p.target {
            None => Err(Error::MissingTargets(metric.into())),
            Some(t) => t
                .as_f64()
                .ok_or_else(|| Error::ShapeMismatch(format!("metric `{metric}` needs numeric targets, got {t}"))),
        })
        .collect()
}

fn weighted_mean(metric: &str, data: &Dataset, terms: impl Iterator<Item = f64>) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, t) in data.points.iter().zip(terms) {
        num += p.weight() * t;
        den += p.weight();
    }
    if den > 0.0 {
        Ok(num / den)
    } else {
        Err(Error::Numerical(format!("metric `{metric}`: total weight is zero")))
    }
}

fn no_params() -> Vec<ParamDescriptor> {
    Vec::new()
}

struct Mse;

impl Metric for Mse {
    fn descriptor(&self) -> MetricDescriptor {
        MetricDescriptor {
            id: "mse".into(),
            description: "weighted mean squared error".into(),
            requires: vec![RequiredField::Targets],
            parameters: no_params(),
        }
    }

    fn evaluate(&self, _: &MetricParams, outputs: &[Value], data: &Dataset) -> Result<f64> {
        let y = numeric_targets("mse", data)?;
        let o = numeric_outputs("mse", outputs)?;
        weighted_mean("mse", data, o.iter().zip(&y).map(|(o, y)| (o - y) * (o - y)))
    }
}

struct LogLoss;

impl Metric for LogLoss {
    fn descriptor(&self) -> MetricDescriptor {
        MetricDescriptor {
            id: "log_loss".into(),
            description: "binary cross-entropy of predicted probabilities against 0/1 targets".into(),
            requires: vec![RequiredField::Targets],
            parameters: vec![ParamDescriptor {
                name: "clip".into(),
                default: 1e-15,
                description: "probabilities are clipped to [clip, 1 - clip]".into(),
            }],
        }
    }

    fn evaluate(&self, params: &MetricParams, outputs: &[Value], data: &Dataset) -> Result<f64> {
        let clip = params.get("clip");
        let y = numeric_targets("log_loss", data)?;
        let o = numeric_outputs("log_loss", outputs)?;
        weighted_mean(
            "log_loss",
            data,
            o.iter().zip(&y).map(|(p, y)| {
                let p = p.clamp(clip, 1.0 - clip);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            }),
        )
    }
}

struct AccuracyLoss;

fn labels_match(output: &Value, target: &Value) -> bool {
    match (output, target) {
        (Value::Number(o), Value::Number(t)) => o.round() == t.round(),
        (a, b) => a == b,
    }
}

impl Metric for AccuracyLoss {
    fn descriptor(&self) -> MetricDescriptor {
        MetricDescriptor {
            id: "accuracy_loss".into(),
            description: "weighted fraction of misclassified points (numeric labels compared after rounding)".into(),
            requires: vec![RequiredField::Targets],
            parameters: no_params(),
        }
    }

    fn evaluate(&self, _: &MetricParams, outputs: &[Value], data: &Dataset) -> Result<f64> {
        let targets = data
            .points
            .iter()
            .map(|p| p.target.as_ref().ok_or_else(|| Error::MissingTargets("accuracy_loss".into())))
            .collect::<Result<Vec<_>>>()?;
        weighted_mean(
            "accuracy_loss",
            data,
            outputs.iter().zip(targets).map(|(o, t)| if labels_match(o, t) { 0.0 } else { 1.0 }),
        )
    }
}

struct DemographicParityGap;

impl Metric for DemographicParityGap {
    fn descriptor(&self) -> MetricDescriptor {
        MetricDescriptor {
            id: "demographic_parity_gap".into(),
            description: "max(0, gap - epsilon) where gap is the spread between the highest and lowest \
                          per-group mean output"
                .into(),
            requires: vec![RequiredField::Groups],
            parameters: vec![ParamDescriptor {
                name: "epsilon".into(),
                default: 0.0,
                description: "tolerated parity gap".into(),
            }],
        }
    }

    fn evaluate(&self, params: &MetricParams, outputs: &[Value], data: &Dataset) -> Result<f64> {
        let o = numeric_outputs("demographic_parity_gap", outputs)?;
        let groups = group_indices(&data.points).ok_or_else(|| Error::MissingGroups("demographic_parity_gap".into()))?;
        let means: Vec<f64> = groups
            .values()
            .map(|idx| idx.iter().map(|&i| o[i]).sum::<f64>() / idx.len() as f64)
            .collect();
        let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
        Ok((hi - lo - params.get("epsilon")).max(0.0))
    }
}

struct GaussianNll;

impl Metric for GaussianNll {
    fn descriptor(&self) -> MetricDescriptor {
        MetricDescriptor {
            id: "neg_log_likelihood".into(),
            description: "mean Gaussian negative log-likelihood of targets around the outputs".into(),
            requires: vec![RequiredField::Targets],
            parameters: vec![ParamDescriptor {
                name: "sigma".into(),
                default: 1.0,
                description: "noise standard deviation".into(),
            }],
        }
    }

    fn evaluate(&self, params: &MetricParams, outputs: &[Value], data: &Dataset) -> Result<f64> {
        let sigma = params.get("sigma");
        if sigma.is_nan() || sigma <= 0.0 {
            return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
        }
        let y = numeric_targets("neg_log_likelihood", data)?;
        let o = numeric_outputs("neg_log_likelihood", outputs)?;
        let norm = 0.5 * (2.0 * PI * sigma * sigma).ln();
        weighted_mean(
            "neg_log_likelihood",
            data,
            o.iter().zip(&y).map(|(o, y)| norm + (y - o) * (y - o) / (2.0 * sigma * sigma)),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DataPoint;
    use serde_json::json;

    fn ds(points: Vec<DataPoint>) -> Dataset {
        Dataset::new("test", points, None).unwrap()
    }

    fn nums(xs: &[f64]) -> Vec<Value> {
        xs.iter().map(|x| Value::Number(*x)).collect()
    }

    #[test]
    fn mse_is_zero_when_outputs_equal_targets() {
        let data = ds((0..4).map(|i| DataPoint::from_numbers(&[i as f64]).with_target(i as f64 * 2.0)).collect());
        let loss = evaluate_task(&MetricRegistry::builtin(), &Task::new("m", "mse"), &nums(&[0.0, 2.0, 4.0, 6.0]), &data)
            .unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn accuracy_loss_is_zero_when_all_correct() {
        let data = ds(vec![
            DataPoint::from_numbers(&[0.0]).with_target(1.0),
            DataPoint::from_numbers(&[0.0]).with_target(0.0),
        ]);
        let r = MetricRegistry::builtin();
        assert_eq!(evaluate_task(&r, &Task::new("a", "accuracy_loss"), &nums(&[1.0, 0.0]), &data).unwrap(), 0.0);
        assert_eq!(evaluate_task(&r, &Task::new("a", "accuracy_loss"), &nums(&[0.0, 0.0]), &data).unwrap(), 0.5);
    }

    /// Hand oracle: |mean_A - mean_B| computed directly from the listed outputs.
    fn parity_gap_oracle(outputs: &[f64], groups: &[&str]) -> f64 {
        let mean = |g: &str| {
            let v: Vec<f64> = outputs.iter().zip(groups).filter(|(_, h)| **h == g).map(|(o, _)| *o).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        (mean("A") - mean("B")).abs()
    }

    #[test]
    fn parity_gap_matches_hand_oracle() {
        let groups = ["A", "A", "B", "B"];
        let outs = [1.0, 1.0, 0.0, 0.0];
        let expected = parity_gap_oracle(&outs, &groups);
        assert_eq!(expected, 1.0);
        let data = ds(groups.iter().map(|g| DataPoint::from_numbers(&[0.0]).with_group(*g)).collect());
        let loss = evaluate_task(&MetricRegistry::builtin(), &Task::new("f", "demographic_parity_gap"), &nums(&outs), &data)
            .unwrap();
        assert_eq!(loss, expected);
    }

    #[test]
    fn parity_gap_tolerance_discounts_the_gap() {
        let data = ds(["A", "B"].iter().map(|g| DataPoint::from_numbers(&[0.0]).with_group(*g)).collect());
        let task = Task::new("f", "demographic_parity_gap").with_parameters(json!({"epsilon": 0.25}));
        let loss = evaluate_task(&MetricRegistry::builtin(), &task, &nums(&[1.0, 0.5]), &data).unwrap();
        assert_eq!(loss, 0.25);
    }

    #[test]
    fn missing_fields_and_shapes_are_reported() {
        let r = MetricRegistry::builtin();
        let data = ds(vec![DataPoint::from_numbers(&[0.0])]);
        assert!(matches!(evaluate_task(&r, &Task::new("m", "mse"), &nums(&[0.0]), &data), Err(Error::MissingTargets(_))));
        assert!(matches!(
            evaluate_task(&r, &Task::new("f", "demographic_parity_gap"), &nums(&[0.0]), &data),
            Err(Error::MissingGroups(_))
        ));
        assert!(matches!(
            evaluate_task(&r, &Task::new("m", "mse"), &nums(&[0.0, 1.0]), &data),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            evaluate_task(&r, &Task::new("m", "nope"), &nums(&[0.0]), &data),
            Err(Error::UnresolvableMetric(_))
        ));
    }

    #[test]
    fn registry_lookup() {
        let r = MetricRegistry::builtin();
        assert!(r.descriptor("mse").is_some());
        let dp = r.descriptor("demographic_parity_gap").unwrap();
        assert_eq!(dp.parameters[0].name, "epsilon");
        assert!(r.descriptor("undefined_metric").is_none());
        let ids: Vec<String> = builtin_metrics().into_iter().map(|d| d.id).collect();
        for id in ["mse", "log_loss", "accuracy_loss", "demographic_parity_gap", "neg_log_likelihood"] {
            assert!(ids.iter().any(|i| i == id), "{id}");
        }
    }

    #[test]
    fn gaussian_nll_at_zero_residual_is_normalizer() {
        let data = ds(vec![DataPoint::from_numbers(&[0.0]).with_target(0.0)]);
        let loss = evaluate_task(&MetricRegistry::builtin(), &Task::new("n", "neg_log_likelihood"), &nums(&[0.0]), &data)
            .unwrap();
        assert!((loss - 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn unknown_parameter_is_rejected() {
        let data = ds(vec![DataPoint::from_numbers(&[0.0]).with_target(0.0)]);
        let task = Task::new("m", "mse").with_parameters(json!({"what": 1}));
        assert!(matches!(evaluate_task(&MetricRegistry::builtin(), &task, &nums(&[0.0]), &data), Err(Error::Domain(_))));
    }
}
