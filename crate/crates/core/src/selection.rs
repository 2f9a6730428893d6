//! Bayesian comparison of candidate models by held-out likelihood.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::access::AccessLevel;
use crate::certificate::{
    BehaviorCertificate, CertificateKind, Claim, Conclusion, Evidence, GenerationMethod, Outcome, Scope,
};
use crate::data::{Dataset, Value};
use crate::error::{Error, Result};
use crate::runner::{builtin_model, spawn_model, ModelHandle, Transport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CandidateSpec {
    /// An already trained model; must answer likelihood requests.
    Fixed { transport: Transport },
    /// Gaussian with maximum-likelihood mean and scale. With `regression`
    /// the mean is an ordinary least squares fit on the numeric features.
    Gaussian {
        #[serde(default)]
        regression: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub spec: CandidateSpec,
    pub prior: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSet {
    pub candidates: Vec<Candidate>,
    pub train: Dataset,
    pub test: Dataset,
}

pub const PRIOR_SUM_TOLERANCE: f64 = 1e-12;

fn check_priors(ids: &[&str], priors: &[f64]) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::Precondition("at least one candidate is required".into()));
    }
    if ids.len() != priors.len() {
        return Err(Error::ShapeMismatch(format!("{} candidates but {} priors", ids.len(), priors.len())));
    }
    let unique: BTreeSet<&str> = ids.iter().copied().collect();
    if unique.len() != ids.len() {
        return Err(Error::Precondition("candidate ids must be unique".into()));
    }
    if let Some(p) = priors.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
        return Err(Error::Precondition(format!("prior masses must be positive, got {p}")));
    }
    let total: f64 = priors.iter().sum();
    if (total - 1.0).abs() > PRIOR_SUM_TOLERANCE {
        return Err(Error::Precondition(format!("prior masses sum to {total}, not 1")));
    }
    Ok(())
}

/// Normalized posterior from prior masses and held-out log-likelihoods,
/// computed relative to the largest log-likelihood. When every candidate
/// has the same log-likelihood the prior is returned unchanged.
pub fn posterior(ids: &[&str], priors: &[f64], log_likelihoods: &[f64]) -> Result<BTreeMap<String, f64>> {
    check_priors(ids, priors)?;
    if log_likelihoods.len() != ids.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} candidates but {} log-likelihoods",
            ids.len(),
            log_likelihoods.len()
        )));
    }
    if log_likelihoods.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(Error::Numerical("log-likelihoods must be finite or -inf".into()));
    }
    let max = log_likelihoods.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateLikelihood);
    }
    if log_likelihoods.iter().all(|l| *l == max) {
        return Ok(ids.iter().zip(priors).map(|(id, p)| (id.to_string(), *p)).collect());
    }
    let weights: Vec<f64> = priors.iter().zip(log_likelihoods).map(|(p, l)| p * (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(ids.iter().zip(&weights).map(|(id, w)| (id.to_string(), w / total)).collect())
}

fn numeric_targets(data: &Dataset) -> Result<Vec<f64>> {
    data.points
        .iter()
        .map(|p| p.target.as_ref().and_then(Value::as_f64))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::TrainFailure(format!("`{}` needs numeric targets", data.source_id)))
}

/// Maximum-likelihood Gaussian fit: `(mu, sigma, weights)` as accepted by
/// the `gaussian_likelihood` builtin.
pub fn fit_gaussian(train: &Dataset, regression: bool) -> Result<(f64, f64, Vec<f64>)> {
    if train.is_empty() {
        return Err(Error::TrainFailure("empty training data".into()));
    }
    let ys = numeric_targets(train)?;
    let n = ys.len();
    let (mu, weights) = if regression {
        let rows: Vec<Vec<f64>> = train.points.iter().map(|p| p.flat_numeric()).collect();
        let d = rows[0].len();
        let x = DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
        let beta = x
            .svd(true, true)
            .solve(&DVector::from_vec(ys.clone()), 1e-12)
            .map_err(|e| Error::TrainFailure(format!("least squares failed: {e}")))?;
        (beta[0], beta.iter().skip(1).copied().collect())
    } else {
        (ys.iter().sum::<f64>() / n as f64, Vec::new())
    };
    let residual_sq: f64 = train
        .points
        .iter()
        .zip(&ys)
        .map(|(p, y)| {
            let fit = mu + weights.iter().zip(p.flat_numeric()).map(|(w, x)| w * x).sum::<f64>();
            (y - fit).powi(2)
        })
        .sum();
    let sigma = (residual_sq / n as f64).sqrt();
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::TrainFailure("fitted scale is zero or non-finite".into()));
    }
    Ok((mu, sigma, weights))
}

fn trained_handle(candidate: &Candidate, train: &Dataset) -> Result<ModelHandle> {
    match &candidate.spec {
        CandidateSpec::Fixed { transport } => spawn_model(transport.clone(), AccessLevel::black_box()),
        CandidateSpec::Gaussian { regression } => {
            let (mu, sigma, weights) = fit_gaussian(train, *regression)?;
            builtin_model("gaussian_likelihood", serde_json::json!({ "mu": mu, "sigma": sigma, "weights": weights }))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub posterior: BTreeMap<String, f64>,
    pub log_likelihoods: BTreeMap<String, f64>,
    /// Highest posterior; ties go to the earliest candidate.
    pub best: String,
    pub certificate: BehaviorCertificate,
}

/// Train every candidate on the training split, score the test split, and
/// return the posterior over candidates with a model-comparison certificate.
pub fn select(hypotheses: &HypothesisSet, seed: u64) -> Result<Selection> {
    let ids: Vec<&str> = hypotheses.candidates.iter().map(|c| c.id.as_str()).collect();
    let priors: Vec<f64> = hypotheses.candidates.iter().map(|c| c.prior).collect();
    check_priors(&ids, &priors)?;
    hypotheses.test.ensure_non_empty()?;
    let mut lls = Vec::with_capacity(ids.len());
    for c in &hypotheses.candidates {
        let mut handle = trained_handle(c, &hypotheses.train)?;
        let ll = match handle.log_likelihood(&hypotheses.test) {
            Ok(v) => v,
            // non-finite density reports count as zero likelihood
            Err(Error::Numerical(_)) => f64::NEG_INFINITY,
            Err(e) => return Err(e),
        };
        lls.push(ll);
    }
    let post = posterior(&ids, &priors, &lls)?;
    let mut best = ids[0];
    for id in &ids[1..] {
        if post[*id] > post[best] {
            best = id;
        }
    }
    let log_likelihoods: BTreeMap<String, f64> = ids.iter().zip(&lls).map(|(id, l)| (id.to_string(), *l)).collect();
    let measured = ids
        .iter()
        .zip(&lls)
        .filter(|(_, l)| l.is_finite())
        .map(|(id, l)| (format!("log_likelihood:{id}"), *l))
        .collect();
    let ranking = {
        let mut r: Vec<(&str, f64)> = post.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        r.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
        r.iter().map(|(k, v)| format!("{k} {v:.4}")).collect::<Vec<_>>().join(", ")
    };
    let certificate = BehaviorCertificate::new(
        CertificateKind::Interactive,
        GenerationMethod::ModelComparison,
        Outcome::Positive,
        Evidence {
            generator: GenerationMethod::ModelComparison.as_str().to_owned(),
            model_id: best.to_owned(),
            source_id: Some(hypotheses.test.source_id.clone()),
            inputs: hypotheses.test.points.clone(),
            seeds: vec![seed],
            parameters: serde_json::json!({ "candidates": hypotheses.candidates, "train_source": hypotheses.train.source_id }),
            measured,
            counterexamples: Vec::new(),
        },
        Conclusion {
            claim: Claim::PosteriorRanking { posterior: post.clone(), best: best.to_owned() },
            subject_task: None,
            subject_source: Some(hypotheses.test.source_id.clone()),
            scope: Scope::MeasuredSource,
        },
        format!("Of the {} candidate models, `{best}` explains the held-out data best.", ids.len()),
        format!("Posterior over candidates given held-out `{}`: {ranking}.", hypotheses.test.source_id),
    );
    Ok(Selection { posterior: post, log_likelihoods, best: best.to_owned(), certificate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DataSource;
    use proptest::prelude::*;

    #[test]
    fn hand_oracle_two_candidates() {
        let post = posterior(&["a", "b"], &[0.5, 0.5], &[-10.0, -12.0]).unwrap();
        let e2 = 2f64.exp();
        assert!((post["a"] - e2 / (1.0 + e2)).abs() < 1e-9);
        assert!((post["b"] - 1.0 / (1.0 + e2)).abs() < 1e-9);
    }

    #[test]
    fn single_candidate_and_symmetry() {
        assert_eq!(posterior(&["only"], &[1.0], &[-3.0]).unwrap()["only"], 1.0);
        let post = posterior(&["a", "b"], &[0.5, 0.5], &[-7.25, -7.25]).unwrap();
        assert_eq!((post["a"], post["b"]), (0.5, 0.5));
    }

    #[test]
    fn huge_gaps_stay_finite() {
        let post = posterior(&["a", "b"], &[0.5, 0.5], &[0.0, -800.0]).unwrap();
        assert_eq!(post["a"], 1.0);
        assert_eq!(post["b"], 0.0);
        assert!(matches!(
            posterior(&["a", "b"], &[0.5, 0.5], &[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            Err(Error::DegenerateLikelihood)
        ));
    }

    #[test]
    fn invalid_priors_are_rejected() {
        assert!(posterior(&["a", "b"], &[0.5, 0.6], &[0.0, 0.0]).is_err());
        assert!(posterior(&["a", "b"], &[1.0, 0.0], &[0.0, 0.0]).is_err());
        assert!(posterior(&[], &[], &[]).is_err());
    }

    fn regression_data(seed: u64) -> Dataset {
        let params = serde_json::json!({ "weights": [1.5, -0.5], "bias": 0.2, "noise": 0.3 });
        DataSource::generator("linear_regression", params, 200, seed).sample(None).unwrap()
    }

    #[test]
    fn regression_candidate_wins_on_linear_data() {
        let set = HypothesisSet {
            candidates: vec![
                Candidate { id: "constant".into(), spec: CandidateSpec::Gaussian { regression: false }, prior: 0.5 },
                Candidate { id: "linear".into(), spec: CandidateSpec::Gaussian { regression: true }, prior: 0.5 },
            ],
            train: regression_data(1),
            test: regression_data(2),
        };
        let s = select(&set, 0).unwrap();
        assert_eq!(s.best, "linear");
        assert!(s.posterior["linear"] > 0.99);
        assert_eq!(s.certificate.method, GenerationMethod::ModelComparison);
        assert_eq!(select(&set, 0).unwrap(), s);
    }

    #[test]
    fn ols_recovers_weights_and_scale() {
        let (mu, sigma, w) = fit_gaussian(&regression_data(5), true).unwrap();
        assert!((mu - 0.2).abs() < 0.1 && (w[0] - 1.5).abs() < 0.1 && (w[1] + 0.5).abs() < 0.1);
        assert!((sigma - 0.3).abs() < 0.05);
    }

    #[test]
    fn candidates_without_densities_are_rejected() {
        let set = HypothesisSet {
            candidates: vec![Candidate {
                id: "mean".into(),
                spec: CandidateSpec::Fixed { transport: Transport::builtin("mean_aggregator", serde_json::json!({})) },
                prior: 1.0,
            }],
            train: regression_data(1),
            test: regression_data(2),
        };
        assert!(matches!(select(&set, 0), Err(Error::Unsupported(_))));
    }

    fn candidate_sets() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..=10).prop_flat_map(|n| {
            (proptest::collection::vec(0.01f64..1.0, n), proptest::collection::vec(-1000.0f64..0.0, n))
        })
    }

    fn normalized(raw: &[f64]) -> Vec<f64> {
        let total: f64 = raw.iter().sum();
        raw.iter().map(|p| p / total).collect()
    }

    proptest! {
        #[test]
        fn posteriors_are_normalized((raw, lls) in candidate_sets()) {
            let priors = normalized(&raw);
            let ids: Vec<String> = (0..priors.len()).map(|i| format!("c{i}")).collect();
            let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            if let Ok(post) = posterior(&refs, &priors, &lls) {
                let total: f64 = post.values().sum();
                prop_assert!((total - 1.0).abs() <= 1e-12, "{}", total);
                prop_assert!(post.values().all(|p| p.is_finite() && *p >= 0.0));
            }
        }

        #[test]
        fn equal_likelihoods_return_the_prior((raw, _) in candidate_sets(), ll in -500.0f64..0.0) {
            let priors = normalized(&raw);
            let ids: Vec<String> = (0..priors.len()).map(|i| format!("c{i}")).collect();
            let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            if let Ok(post) = posterior(&refs, &priors, &vec![ll; priors.len()]) {
                for (id, p) in refs.iter().zip(&priors) {
                    prop_assert_eq!(post[*id], *p);
                }
            }
        }
    }
}
