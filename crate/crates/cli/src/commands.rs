use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};

use bctrust::canonical;
use bctrust::certgen::{
    adversarial_search, design_certificates, grade_all, holdout_validation, invariance_check, ood_evaluate,
    oot_evaluate, GradingConfig,
};
use bctrust::certificate::BehaviorCertificate;
use bctrust::contract::Contract;
use bctrust::data::Dataset;
use bctrust::metrics::{MetricRegistry, Task};
use bctrust::reporting::{Bundle, ModelCard};
use bctrust::rng::derive_seed;
use bctrust::runner::builtin::BuiltinModel;
use bctrust::runner::{protocol, spawn_model, ModelHandle, ModelMetadata};
use bctrust::scoring::{estimate_trust, infer_trust, recommend_automation_level, EstimateOptions};
use bctrust::search::{evolve_using, GaussianMutator, IdentityMutator, Mutator};
use bctrust::selection::{select as select_models, HypothesisSet};
use bctrust::trust::{PriorSpec, ScoreMethod, TrustScore};
use serde::Serialize;

use crate::config::{CommonArgs, Mode, Resolved};
use crate::{CliError, ScoreArgs};

const DEFAULT_TRIALS: u64 = 100;
const DEFAULT_KAPPA: f64 = 1.0;

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = canonical::to_string_pretty(value)?;
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn open_model(cfg: &Resolved) -> Result<ModelHandle, CliError> {
    let transport = cfg.model()?;
    let access = cfg.access()?;
    Ok(spawn_model(transport, access)?)
}

fn task_named<'a>(contract: &'a Contract, name: Option<&str>) -> Result<&'a Task, CliError> {
    match name {
        Some(n) => contract
            .task(n)
            .ok_or_else(|| CliError::Config(format!("contract `{}` has no task `{n}`", contract.id))),
        None => contract
            .tasks
            .first()
            .ok_or_else(|| CliError::Config(format!("contract `{}` has no tasks", contract.id))),
    }
}

#[derive(Serialize)]
struct Step {
    step: String,
    status: &'static str,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    certificates: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error_code: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    message: Option<String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    details: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize)]
struct Manifest {
    model_id: String,
    contract_id: String,
    seed: u64,
    access_level: u8,
    runs_consumed: u64,
    steps: Vec<Step>,
}

struct Certifier<'a> {
    handle: &'a mut ModelHandle,
    steps: Vec<Step>,
    certificates: Vec<BehaviorCertificate>,
}

impl Certifier<'_> {
    /// Run one generator step, recording its outcome; failures do not stop
    /// later steps.
    fn step(
        &mut self,
        name: String,
        f: impl FnOnce(&mut ModelHandle) -> bctrust::Result<(Vec<BehaviorCertificate>, BTreeMap<String, serde_json::Value>)>,
    ) {
        let record = match f(self.handle) {
            Ok((bcs, details)) => {
                let ids = bcs.iter().map(|b| b.id.clone()).collect();
                self.certificates.extend(bcs);
                Step { step: name, status: "ok", certificates: ids, error_code: None, message: None, details }
            }
            Err(e) => Step {
                step: name,
                status: "error",
                certificates: Vec::new(),
                error_code: Some(e.code().to_owned()),
                message: Some(e.to_string()),
                details: BTreeMap::new(),
            },
        };
        self.steps.push(record);
    }
}

fn one(bc: BehaviorCertificate) -> bctrust::Result<(Vec<BehaviorCertificate>, BTreeMap<String, serde_json::Value>)> {
    Ok((vec![bc], BTreeMap::new()))
}

fn sample_or(source: Option<&bctrust::data::DataSource>, fallback: &Dataset) -> bctrust::Result<Dataset> {
    match source {
        Some(s) => s.sample(None),
        None => Ok(fallback.clone()),
    }
}

pub fn certify(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = Resolved::load(args)?;
    let registry = MetricRegistry::builtin();
    let contract = cfg.contract(&registry)?;
    let seed = cfg.seed()?;
    let out = cfg.out_dir()?;
    let plan = cfg.file.certify.clone();

    // resolve every task reference up front so config errors exit early
    let holdout_task = plan.holdout.as_ref().map(|h| task_named(&contract, h.task.as_deref())).transpose()?;
    let ood_tasks =
        plan.ood.iter().map(|o| task_named(&contract, o.task.as_deref())).collect::<Result<Vec<_>, _>>()?;

    let mut handle = open_model(&cfg)?;
    let data = contract.data.sample(None)?;
    let mut c = Certifier { handle: &mut handle, steps: Vec::new(), certificates: Vec::new() };

    if let Some(d) = &plan.determinism {
        c.step("determinism".into(), |h| {
            let probe = sample_or(d.source.as_ref(), &data)?;
            one(h.audit_determinism(&probe, derive_seed(seed, 0), d.repeats)?)
        });
    }
    if let (Some(hc), Some(task)) = (&plan.holdout, holdout_task) {
        c.step("holdout".into(), |h| {
            let ds = sample_or(hc.source.as_ref(), &data)?;
            one(holdout_validation(h, &registry, &ds, task, hc.split_fraction, derive_seed(seed, 1))?)
        });
    }
    for (i, (oc, task)) in plan.ood.iter().zip(ood_tasks).enumerate() {
        c.step(format!("ood[{i}]"), |h| {
            let ds = oc.source.sample(None)?;
            one(ood_evaluate(h, &registry, &ds, task, derive_seed(seed, 100 + i as u64))?)
        });
    }
    for (i, oc) in plan.oot.iter().enumerate() {
        c.step(format!("oot[{i}]"), |h| {
            let ds = sample_or(oc.source.as_ref(), &data)?;
            one(oot_evaluate(h, &registry, &ds, &oc.task, derive_seed(seed, 200 + i as u64), oc.acceptable_loss)?)
        });
    }
    for (i, ic) in plan.invariance.iter().enumerate() {
        c.step(format!("invariance[{i}]"), |h| {
            let ds = sample_or(ic.source.as_ref(), &data)?;
            one(invariance_check(h, &ds, &ic.transform, ic.n_samples, ic.tolerance)?)
        });
    }
    for (i, search) in plan.adversarial.iter().enumerate() {
        c.step(format!("adversarial[{i}]"), |h| {
            let outcome = adversarial_search(h, &registry, &data, search)?;
            let mut details = BTreeMap::new();
            details.insert("evals_used".to_owned(), outcome.evals_used.into());
            details.insert("budget_exhausted".to_owned(), outcome.budget_exhausted.into());
            Ok((outcome.certificate.into_iter().collect(), details))
        });
    }
    if plan.design {
        c.step("design".into(), |h| {
            let metadata = match h.metadata() {
                Some(m) => m.clone(),
                None => h.handshake()?,
            };
            Ok((design_certificates(&metadata)?, BTreeMap::new()))
        });
    }

    let Certifier { steps, certificates, .. } = c;
    let failed = steps.iter().filter(|s| s.status == "error").count();
    let graded = grade_all(&certificates, &contract, GradingConfig::default())?;
    let manifest = Manifest {
        model_id: handle.model_id().to_owned(),
        contract_id: contract.id.clone(),
        seed,
        access_level: handle.access().level(),
        runs_consumed: handle.runs_consumed(),
        steps,
    };
    write_text(&out.join("bundle.json"), &Bundle::new(graded, Vec::new()).to_json()?)?;
    write_json(&out.join("manifest.json"), &manifest)?;
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} certificate step(s) failed; see manifest.json")));
    }
    Ok(())
}

fn read_bundle(path: &Path) -> Result<Bundle, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read bundle {}: {e}", path.display())))?;
    Ok(Bundle::parse(&text)?)
}

fn bundle_path(cfg: &Resolved, explicit: Option<&PathBuf>) -> Result<PathBuf, CliError> {
    match explicit {
        Some(p) => Ok(p.clone()),
        None => Ok(cfg.out_dir()?.join("bundle.json")),
    }
}

pub fn score(args: &CommonArgs, flags: &ScoreArgs) -> Result<(), CliError> {
    let cfg = Resolved::load(args)?;
    let registry = MetricRegistry::builtin();
    let contract = cfg.contract(&registry)?;
    let out = cfg.out_dir()?;
    let sc = &cfg.file.score;
    let mode = flags.mode.or(sc.mode).unwrap_or(Mode::Estimate);
    let prior = PriorSpec::new(
        flags.prior_alpha.or(sc.prior_alpha).unwrap_or(PriorSpec::default().alpha()),
        flags.prior_beta.or(sc.prior_beta).unwrap_or(PriorSpec::default().beta()),
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    let bundle_file = bundle_path(&cfg, flags.bundle.as_ref())?;

    let score = match mode {
        Mode::Estimate => {
            let mut options = EstimateOptions {
                n_trials: flags.trials.or(sc.n_trials).unwrap_or(DEFAULT_TRIALS),
                seed: cfg.seed()?,
                prior,
                ..EstimateOptions::default()
            };
            if let Some(conf) = flags.confidence.or(sc.confidence) {
                options.confidence = conf;
            }
            let mut handle = open_model(&cfg)?;
            estimate_trust(&mut handle, &registry, &contract, &options)?
        }
        Mode::Infer => {
            let bundle = read_bundle(&bundle_file)?;
            let kappa = flags.kappa.or(sc.kappa).unwrap_or(DEFAULT_KAPPA);
            infer_trust(&bundle.certificates, &contract, prior, kappa)?
        }
    };
    write_json(&out.join("score.json"), &score)?;

    let mut bundle = if bundle_file.exists() { read_bundle(&bundle_file)? } else { Bundle::new(Vec::new(), Vec::new()) };
    upsert_score(&mut bundle.scores, score.clone());
    write_text(&bundle_file, &bundle.to_json()?)?;

    if let Some(w) = flags.risk_weight.or(sc.risk_weight) {
        let rec = recommend_automation_level(&score, w).map_err(|e| CliError::Config(e.to_string()))?;
        write_json(&out.join("recommendation.json"), &rec)?;
    }
    Ok(())
}

/// One score per (contract, method); a newer one replaces the old.
fn upsert_score(scores: &mut Vec<TrustScore>, score: TrustScore) {
    let same = |s: &TrustScore| s.contract_id == score.contract_id && s.method == score.method;
    match scores.iter().position(same) {
        Some(i) => scores[i] = score,
        None => scores.push(score),
    }
    scores.sort_by(|a, b| {
        a.contract_id.cmp(&b.contract_id).then(method_rank(a.method).cmp(&method_rank(b.method)))
    });
}

fn method_rank(m: ScoreMethod) -> u8 {
    match m {
        ScoreMethod::Estimation => 0,
        ScoreMethod::Inference => 1,
    }
}

pub fn card(args: &CommonArgs, bundle: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = Resolved::load(args)?;
    let out = cfg.out_dir()?;
    let bundle = read_bundle(&bundle_path(&cfg, bundle.as_ref())?)?;
    let metadata = match &cfg.file.model {
        Some(_) => open_model(&cfg)?.handshake()?,
        None => {
            let model_id = bundle
                .certificates
                .first()
                .map(|b| b.evidence.model_id.clone())
                .unwrap_or_else(|| "unknown".to_owned());
            ModelMetadata {
                model_id,
                input_schema: None,
                output_schema: None,
                supports_log_likelihood: false,
                design_declarations: Vec::new(),
            }
        }
    };
    let card = ModelCard::build(&metadata, &bundle.certificates, &bundle.scores)?;
    write_text(&out.join("card.md"), &card.to_markdown())?;
    write_text(&out.join("card.json"), &card.to_json()?)?;
    Ok(())
}

#[derive(Serialize)]
struct SearchBest<'a> {
    trainable: &'static str,
    best: &'a bctrust::search::Hyperparameters,
    best_score: f64,
    eval_calls: u64,
}

pub fn search(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = Resolved::load(args)?;
    let registry = MetricRegistry::builtin();
    let contract = cfg.contract(&registry)?;
    let out = cfg.out_dir()?;
    let section = cfg.file.search.clone().ok_or_else(|| CliError::Config("config has no `search` section".into()))?;
    let mut config = section.config.clone();
    if let Some(seed) = cfg.file.seed {
        config.seed = seed;
    }
    let data = section.data.sample(None)?;
    let mutator: &dyn Mutator = if section.identity_mutation { &IdentityMutator } else { &GaussianMutator };
    let outcome = evolve_using(section.trainable, &data, &contract, &registry, &config, mutator)?;
    write_text(&out.join("search_history.jsonl"), &outcome.history_jsonl()?)?;
    write_json(
        &out.join("search_best.json"),
        &SearchBest {
            trainable: section.trainable.name(),
            best: &outcome.best,
            best_score: outcome.best_score,
            eval_calls: outcome.eval_calls,
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct PosteriorReport {
    best: String,
    posterior: BTreeMap<String, f64>,
    /// `null` for candidates with zero likelihood.
    log_likelihoods: BTreeMap<String, Option<f64>>,
}

pub fn select(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = Resolved::load(args)?;
    let out = cfg.out_dir()?;
    let seed = cfg.seed()?;
    let section = cfg.file.select.clone().ok_or_else(|| CliError::Config("config has no `select` section".into()))?;
    let set = HypothesisSet {
        candidates: section.candidates,
        train: section.train.sample(None)?,
        test: section.test.sample(None)?,
    };
    let selection = select_models(&set, seed)?;
    let report = PosteriorReport {
        best: selection.best.clone(),
        posterior: selection.posterior.clone(),
        log_likelihoods: selection
            .log_likelihoods
            .iter()
            .map(|(k, v)| (k.clone(), v.is_finite().then_some(*v)))
            .collect(),
    };
    write_json(&out.join("posterior.json"), &report)?;
    write_json(&out.join("selection_certificate.json"), &selection.certificate)?;
    Ok(())
}

pub fn serve(name: &str, params: Option<&str>) -> Result<(), CliError> {
    let params: serde_json::Value = match params {
        Some(text) => serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid --builtin-params: {e}")))?,
        None => serde_json::json!({}),
    };
    let mut model = BuiltinModel::parse(name, &params).map_err(|e| CliError::Config(e.to_string()))?;
    protocol::serve(&mut model, BufReader::new(io::stdin().lock()), io::stdout().lock())?;
    Ok(())
}
