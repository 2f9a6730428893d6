//! Run configuration: a JSON file whose fields may be overridden by flags.

use std::fs;
use std::path::{Path, PathBuf};

use bctrust::access::AccessLevel;
use bctrust::certgen::{AdversarialSearch, TransformSpec};
use bctrust::contract::{validate_contract, Contract};
use bctrust::data::DataSource;
use bctrust::metrics::{MetricRegistry, Task};
use bctrust::runner::Transport;
use bctrust::search::{SearchConfig, Trainable};
use bctrust::selection::Candidate;
use clap::Args;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<Transport>,
    pub access_level: Option<u8>,
    pub run_budget: Option<u64>,
    pub contract: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub certify: CertifyConfig,
    #[serde(default)]
    pub score: ScoreConfig,
    pub search: Option<SearchSection>,
    pub select: Option<SelectSection>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyConfig {
    pub determinism: Option<DeterminismConfig>,
    pub holdout: Option<HoldoutConfig>,
    #[serde(default)]
    pub ood: Vec<OodConfig>,
    #[serde(default)]
    pub oot: Vec<OotConfig>,
    #[serde(default)]
    pub invariance: Vec<InvarianceConfig>,
    #[serde(default)]
    pub adversarial: Vec<AdversarialSearch>,
    #[serde(default)]
    pub design: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeterminismConfig {
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Probe data; the contract source when absent.
    pub source: Option<DataSource>,
}

fn default_repeats() -> usize {
    2
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoldoutConfig {
    /// Contract task name; the first contract task when absent.
    pub task: Option<String>,
    #[serde(default = "half")]
    pub split_fraction: f64,
    pub source: Option<DataSource>,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodConfig {
    pub source: DataSource,
    pub task: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OotConfig {
    pub task: Task,
    pub acceptable_loss: f64,
    pub source: Option<DataSource>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvarianceConfig {
    pub transform: TransformSpec,
    pub n_samples: usize,
    #[serde(default)]
    pub tolerance: f64,
    pub source: Option<DataSource>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    pub mode: Option<Mode>,
    pub n_trials: Option<u64>,
    pub prior_alpha: Option<f64>,
    pub prior_beta: Option<f64>,
    pub kappa: Option<f64>,
    pub confidence: Option<f64>,
    pub risk_weight: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Estimate,
    Infer,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    pub trainable: Trainable,
    pub data: DataSource,
    pub config: SearchConfig,
    /// Replace mutation with the identity (diagnostic).
    #[serde(default)]
    pub identity_mutation: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectSection {
    pub candidates: Vec<Candidate>,
    pub train: DataSource,
    pub test: DataSource,
}

/// Flags shared by every subcommand. Any flag given overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model command line, spoken to over the line protocol.
    #[arg(long, conflicts_with = "builtin")]
    pub model: Option<String>,
    /// Builtin reference model name.
    #[arg(long)]
    pub builtin: Option<String>,
    /// JSON parameters for --builtin.
    #[arg(long, requires = "builtin")]
    pub builtin_params: Option<String>,
    #[arg(long)]
    pub access_level: Option<u8>,
    #[arg(long)]
    pub run_budget: Option<u64>,
    #[arg(long)]
    pub contract: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Configuration after merging file and flags, with paths resolved.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub file: RunConfig,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Resolved {
    pub fn load(args: &CommonArgs) -> Result<Self, CliError> {
        let (mut file, base) = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
                let file: RunConfig = serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?;
                let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
                (file, base)
            }
            None => (RunConfig::default(), PathBuf::new()),
        };
        file.contract = file.contract.map(|p| resolve(&base, &p));
        file.out = file.out.map(|p| resolve(&base, &p));
        // a relative program next to the config wins over a PATH lookup
        if let Some(Transport::Subprocess { program, .. }) = file.model.as_mut() {
            let candidate = base.join(&*program);
            if Path::new(program).is_relative() && candidate.is_file() {
                *program = candidate.to_string_lossy().into_owned();
            }
        }
        for source in file_sources(&mut file) {
            *source = source.resolved(&base);
        }

        if let Some(line) = &args.model {
            file.model = Some(Transport::command_line(line).map_err(|e| CliError::Config(e.to_string()))?);
        }
        if let Some(name) = &args.builtin {
            let params = match &args.builtin_params {
                Some(text) => serde_json::from_str(text)
                    .map_err(|e| CliError::Config(format!("invalid --builtin-params: {e}")))?,
                None => serde_json::json!({}),
            };
            file.model = Some(Transport::builtin(name, params));
        }
        if args.access_level.is_some() {
            file.access_level = args.access_level;
        }
        if args.run_budget.is_some() {
            file.run_budget = args.run_budget;
        }
        if args.contract.is_some() {
            file.contract = args.contract.clone();
        }
        if args.out.is_some() {
            file.out = args.out.clone();
        }
        if args.seed.is_some() {
            file.seed = args.seed;
        }
        if let Some(c) = &file.contract {
            if !c.exists() {
                return Err(CliError::Config(format!("contract file {} does not exist", c.display())));
            }
        }
        Ok(Self { file })
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.file.seed.ok_or_else(|| CliError::Config("a seed is required (--seed or `seed`)".into()))
    }

    pub fn out_dir(&self) -> Result<PathBuf, CliError> {
        let dir = self.file.out.clone().ok_or_else(|| CliError::Config("an output directory is required (--out)".into()))?;
        fs::create_dir_all(&dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
        Ok(dir)
    }

    pub fn contract(&self, registry: &MetricRegistry) -> Result<Contract, CliError> {
        let path = self.file.contract.as_ref().ok_or_else(|| CliError::Config("a contract is required (--contract)".into()))?;
        let contract = Contract::from_json_file(path)
            .map_err(|e| CliError::Config(format!("cannot load contract {}: {e}", path.display())))?;
        validate_contract(contract, registry).map_err(|e| CliError::Config(format!("invalid contract: {e}")))
    }

    pub fn model(&self) -> Result<Transport, CliError> {
        self.file.model.clone().ok_or_else(|| CliError::Config("a model is required (--model or --builtin)".into()))
    }

    pub fn access(&self) -> Result<AccessLevel, CliError> {
        let level = self.file.access_level.unwrap_or(2);
        let budget = if level == 1 { self.file.run_budget } else { None };
        AccessLevel::new(level, budget).map_err(|e| CliError::Config(e.to_string()))
    }
}

fn file_sources(file: &mut RunConfig) -> Vec<&mut DataSource> {
    let c = &mut file.certify;
    let mut out: Vec<&mut DataSource> = Vec::new();
    out.extend(c.determinism.iter_mut().filter_map(|d| d.source.as_mut()));
    out.extend(c.holdout.iter_mut().filter_map(|d| d.source.as_mut()));
    out.extend(c.ood.iter_mut().map(|d| &mut d.source));
    out.extend(c.oot.iter_mut().filter_map(|d| d.source.as_mut()));
    out.extend(c.invariance.iter_mut().filter_map(|d| d.source.as_mut()));
    if let Some(s) = file.search.as_mut() {
        out.push(&mut s.data);
    }
    if let Some(s) = file.select.as_mut() {
        out.push(&mut s.train);
        out.push(&mut s.test);
    }
    out
}
