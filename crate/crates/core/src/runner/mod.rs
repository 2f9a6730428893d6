//! Black-box model access: handles, the wire protocol, access-level run
//! budgets, and builtin reference models.

pub mod builtin;
pub mod process;
pub mod protocol;

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::access::AccessLevel;
use crate::canonical;
use crate::certificate::{
    BehaviorCertificate, CertificateKind, Claim, Conclusion, Counterexample, Evidence, GenerationMethod, Outcome,
    Scope,
};
use crate::data::{DataPoint, Dataset, FeatureKind, FeatureSchema, Value};
use crate::error::{Error, Result};

use self::builtin::BuiltinModel;
use self::process::ProcessClient;
use self::protocol::{Message, PROTOCOL_VERSION};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeclarationKind {
    Invariance,
    AugmentationRobustness,
    DroBound,
    PriorKnowledge,
}

/// A design or training claim published by the model's authors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignDeclaration {
    pub claim_id: String,
    pub claim_kind: DeclarationKind,
    #[serde(default)]
    pub parameters: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub model_id: String,
    /// `None` accepts any input schema.
    #[serde(default)]
    pub input_schema: Option<FeatureSchema>,
    /// Kind of every output value; `None` accepts any.
    #[serde(default)]
    pub output_schema: Option<FeatureKind>,
    #[serde(default)]
    pub supports_log_likelihood: bool,
    #[serde(default)]
    pub design_declarations: Vec<DesignDeclaration>,
}

/// An in-process black box. Outputs must be a function of (point, seed)
/// alone, independent of batch composition.
pub trait Model: Send {
    fn metadata(&self) -> ModelMetadata;

    fn eval(&mut self, inputs: &[DataPoint], seed: u64) -> Result<Vec<Value>>;

    fn log_likelihood(&mut self, _points: &[DataPoint]) -> Result<f64> {
        Err(Error::Unsupported("model has no likelihood".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transport {
    Subprocess {
        program: String,
        #[serde(default)]
        args: Vec<String>,
    },
    Builtin {
        name: String,
        #[serde(default)]
        parameters: serde_json::Value,
    },
}

impl Transport {
    /// Split a whitespace-separated command line into program and arguments.
    pub fn command_line(line: &str) -> Result<Self> {
        let mut parts = line.split_whitespace().map(str::to_owned);
        let program = parts.next().ok_or_else(|| Error::SpawnFailure("empty command line".into()))?;
        Ok(Transport::Subprocess { program, args: parts.collect() })
    }

    pub fn builtin(name: &str, parameters: serde_json::Value) -> Self {
        Transport::Builtin { name: name.to_owned(), parameters }
    }

    fn default_id(&self) -> String {
        match self {
            Transport::Subprocess { program, .. } => program.clone(),
            Transport::Builtin { name, .. } => name.clone(),
        }
    }
}

enum Backend {
    InProcess(Box<dyn Model>),
    Process(ProcessClient),
}

/// A live, access-leveled connection to one model. Requests are strictly
/// serialized: one in flight at a time.
pub struct ModelHandle {
    model_id: String,
    access: AccessLevel,
    transport: Option<Transport>,
    backend: Backend,
    metadata: Option<ModelMetadata>,
    runs_consumed: u64,
    next_request: u64,
    timeout: Duration,
}

impl fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelHandle")
            .field("model_id", &self.model_id)
            .field("access", &self.access)
            .field("transport", &self.transport)
            .field("runs_consumed", &self.runs_consumed)
            .finish_non_exhaustive()
    }
}

/// Start a model. No handshake is performed yet.
pub fn spawn_model(transport: Transport, access: AccessLevel) -> Result<ModelHandle> {
    if access.level() == 0 {
        return Err(Error::AccessLevelZero);
    }
    let backend = match &transport {
        Transport::Builtin { name, parameters } => Backend::InProcess(Box::new(BuiltinModel::parse(name, parameters)?)),
        Transport::Subprocess { program, args } => Backend::Process(ProcessClient::spawn(program, args)?),
    };
    Ok(ModelHandle {
        model_id: transport.default_id(),
        access,
        transport: Some(transport),
        backend,
        metadata: None,
        runs_consumed: 0,
        next_request: 0,
        timeout: DEFAULT_TIMEOUT,
    })
}

/// A level-2 handle on a builtin reference model.
pub fn builtin_model(name: &str, parameters: serde_json::Value) -> Result<ModelHandle> {
    spawn_model(Transport::builtin(name, parameters), AccessLevel::black_box())
}

impl ModelHandle {
    /// Wrap an arbitrary in-process model.
    pub fn from_model(model: Box<dyn Model>, access: AccessLevel) -> Result<Self> {
        if access.level() == 0 {
            return Err(Error::AccessLevelZero);
        }
        Ok(Self {
            model_id: model.metadata().model_id,
            access,
            transport: None,
            backend: Backend::InProcess(model),
            metadata: None,
            runs_consumed: 0,
            next_request: 0,
            timeout: DEFAULT_TIMEOUT,
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn access(&self) -> AccessLevel {
        self.access
    }

    pub fn transport(&self) -> Option<&Transport> {
        self.transport.as_ref()
    }

    pub fn runs_consumed(&self) -> u64 {
        self.runs_consumed
    }

    /// Remaining runs, or `None` when unbounded.
    pub fn runs_remaining(&self) -> Option<u64> {
        self.access.run_budget().map(|b| b.saturating_sub(self.runs_consumed))
    }

    pub fn metadata(&self) -> Option<&ModelMetadata> {
        self.metadata.as_ref()
    }

    fn request_id(&mut self) -> u64 {
        let id = self.next_request;
        self.next_request += 1;
        id
    }

    fn exchange(&mut self, request: Message) -> Result<Message> {
        let id = request.id();
        let reply = match &mut self.backend {
            Backend::InProcess(model) => protocol::respond(model.as_mut(), request)
                .ok_or_else(|| Error::Protocol("no reply to request".into()))?,
            Backend::Process(client) => {
                client.send(&request)?;
                client.receive(self.timeout)?
            }
        };
        if reply.id() != id {
            return Err(Error::Protocol(format!(
                "reply `{}` carries id {:?}, expected {:?}",
                reply.kind(),
                reply.id(),
                id
            )));
        }
        if let Message::Error { code, message, .. } = &reply {
            return Err(match code.as_str() {
                "Unsupported" => Error::Unsupported(message.clone()),
                _ => Error::ModelFailure(format!("{code}: {message}")),
            });
        }
        Ok(reply)
    }

    /// Exchange metadata with the model. Design declarations are kept only
    /// at access level 3.
    pub fn handshake(&mut self) -> Result<ModelMetadata> {
        let id = self.request_id();
        let reply = self.exchange(Message::Handshake { id, protocol: PROTOCOL_VERSION.into() })?;
        let Message::HandshakeReply { mut metadata, .. } = reply else {
            return Err(Error::Protocol(format!("expected handshake_reply, got `{}`", reply.kind())));
        };
        if !self.access.metadata_visible() {
            metadata.design_declarations.clear();
        }
        self.model_id = metadata.model_id.clone();
        self.metadata = Some(metadata.clone());
        Ok(metadata)
    }

    fn ensure_metadata(&mut self) -> Result<ModelMetadata> {
        match &self.metadata {
            Some(m) => Ok(m.clone()),
            None => self.handshake(),
        }
    }

    fn charge(&mut self) -> Result<()> {
        if let Some(budget) = self.access.run_budget() {
            if self.runs_consumed >= budget {
                return Err(Error::BudgetExhausted { budget });
            }
        }
        self.runs_consumed += 1;
        Ok(())
    }

    fn check_budget_covers(&self, runs: u64) -> Result<()> {
        match self.access.run_budget() {
            Some(budget) if self.runs_consumed + runs > budget => Err(Error::BudgetExhausted { budget }),
            _ => Ok(()),
        }
    }

    /// Run the model on one batch. Consumes one run.
    pub fn eval(&mut self, inputs: &[DataPoint], seed: u64) -> Result<Vec<Value>> {
        let metadata = self.ensure_metadata()?;
        self.check_budget_covers(1)?;
        if let Some(schema) = &metadata.input_schema {
            for (i, p) in inputs.iter().enumerate() {
                if &p.schema() != schema {
                    return Err(Error::SchemaViolation(format!("input {i} does not match the model's input schema")));
                }
            }
        }
        self.charge()?;
        let id = self.request_id();
        let reply = self.exchange(Message::Eval { id, inputs: inputs.to_vec(), seed })?;
        let Message::Result { outputs, .. } = reply else {
            return Err(Error::Protocol(format!("expected result, got `{}`", reply.kind())));
        };
        if outputs.len() != inputs.len() {
            return Err(Error::Protocol(format!("{} outputs for {} inputs", outputs.len(), inputs.len())));
        }
        if let Some(kind) = metadata.output_schema {
            if let Some(bad) = outputs.iter().find(|o| o.kind() != kind) {
                return Err(Error::SchemaViolation(format!("output {bad} is not of kind {kind:?}")));
            }
        }
        Ok(outputs)
    }

    /// Total log-density of the dataset under the model. Consumes one run.
    pub fn log_likelihood(&mut self, dataset: &Dataset) -> Result<f64> {
        let metadata = self.ensure_metadata()?;
        if !metadata.supports_log_likelihood {
            return Err(Error::Unsupported(format!("model `{}` does not report likelihoods", self.model_id)));
        }
        self.charge()?;
        let id = self.request_id();
        let reply = self.exchange(Message::Loglik { id, points: dataset.points.clone() })?;
        match reply {
            Message::LoglikReply { value: Some(v), .. } if v.is_finite() => Ok(v),
            Message::LoglikReply { .. } => Err(Error::Numerical("model reported a non-finite log-density".into())),
            other => Err(Error::Protocol(format!("expected loglik_reply, got `{}`", other.kind()))),
        }
    }

    /// Run `probe` `repeats` times with the same seed and certify whether
    /// every repeat produced byte-identical serialized outputs.
    pub fn audit_determinism(&mut self, probe: &Dataset, seed: u64, repeats: usize) -> Result<BehaviorCertificate> {
        audit_determinism(self, probe, seed, repeats)
    }
}

/// Certify replay determinism. A divergence yields a negative certificate
/// carrying the first divergent (point, output, output) triple.
pub fn audit_determinism(
    handle: &mut ModelHandle,
    probe: &Dataset,
    seed: u64,
    repeats: usize,
) -> Result<BehaviorCertificate> {
    if repeats < 2 {
        return Err(Error::Precondition(format!("determinism audit needs at least 2 repeats, got {repeats}")));
    }
    probe.ensure_non_empty()?;
    handle.ensure_metadata()?;
    handle.check_budget_covers(repeats as u64)?;

    let runs = (0..repeats)
        .map(|_| handle.eval(&probe.points, seed))
        .collect::<Result<Vec<_>>>()?;
    let encode = |v: &Value| canonical::to_string(v).expect("values serialize");
    let mut divergence = None;
    'outer: for (r, run) in runs.iter().enumerate().skip(1) {
        for (i, (a, b)) in runs[0].iter().zip(run).enumerate() {
            if encode(a) != encode(b) {
                divergence = Some((r, i, a.clone(), b.clone()));
                break 'outer;
            }
        }
    }

    let mut measured = BTreeMap::new();
    measured.insert("repeats".to_owned(), repeats as f64);
    let (outcome, counterexamples, claim_scope, plain, technical) = match divergence {
        None => (
            Outcome::Positive,
            Vec::new(),
            Scope::MeasuredSource,
            format!("Running the model again on the same {} inputs gave exactly the same answers every time.", probe.len()),
            format!(
                "{repeats} evaluations of {} probe points with seed {seed} produced byte-identical outputs.",
                probe.len()
            ),
        ),
        Some((repeat, index, first, other)) => {
            measured.insert("divergent_repeat".to_owned(), repeat as f64);
            measured.insert("divergent_index".to_owned(), index as f64);
            let gap = match (first.as_f64(), other.as_f64()) {
                (Some(a), Some(b)) => (a - b).abs(),
                _ => f64::INFINITY,
            };
            (
                Outcome::Negative,
                vec![Counterexample {
                    input: probe.points[index].clone(),
                    variant: None,
                    transform: None,
                    seed,
                    outputs: vec![first, other],
                    gap: if gap.is_finite() { gap } else { 1.0 },
                    losses: None,
                }],
                Scope::Universal,
                "The model gave different answers to the exact same question, so its results cannot be reproduced."
                    .to_owned(),
                format!(
                    "Repeat {repeat} diverged from repeat 0 at probe point {index} under identical seed {seed}; \
                     the model is not a deterministic function of (input, seed)."
                ),
            )
        }
    };
    let evidence = Evidence {
        generator: GenerationMethod::DeterminismAudit.as_str().to_owned(),
        model_id: handle.model_id().to_owned(),
        source_id: Some(probe.source_id.clone()),
        inputs: probe.points.clone(),
        seeds: vec![seed],
        parameters: serde_json::json!({ "repeats": repeats }),
        measured,
        counterexamples,
    };
    let conclusion = Conclusion {
        claim: Claim::Deterministic { holds: outcome == Outcome::Positive },
        subject_task: None,
        subject_source: Some(probe.source_id.clone()),
        scope: claim_scope,
    };
    Ok(BehaviorCertificate::new(
        CertificateKind::Interactive,
        GenerationMethod::DeterminismAudit,
        outcome,
        evidence,
        conclusion,
        plain,
        technical,
    ))
}
