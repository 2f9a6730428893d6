//! Trust contracts: a data source, a set of tasks, and a success predicate.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DataSource, Dataset, Value};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_task, MetricRegistry, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
}

impl Comparator {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Le => value <= threshold,
            Comparator::Lt => value < threshold,
            Comparator::Ge => value >= threshold,
            Comparator::Gt => value > threshold,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Le => "<=",
            Comparator::Lt => "<",
            Comparator::Ge => ">=",
            Comparator::Gt => ">",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub task: String,
    pub comparator: Comparator,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combinator {
    #[default]
    And,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessPredicate {
    pub clauses: Vec<Clause>,
    #[serde(default)]
    pub combinator: Combinator,
}

impl SuccessPredicate {
    pub fn all(clauses: Vec<Clause>) -> Self {
        Self { clauses, combinator: Combinator::And }
    }

    /// 1 if every clause holds on `losses`, else 0. An empty predicate is vacuously satisfied.
    pub fn evaluate(&self, losses: &BTreeMap<String, f64>) -> Result<u8> {
        for clause in &self.clauses {
            let loss = losses.get(&clause.task).ok_or_else(|| Error::UnknownTask(clause.task.clone()))?;
            if !clause.comparator.holds(*loss, clause.threshold) {
                return Ok(0);
            }
        }
        Ok(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contract {
    pub id: String,
    pub data: DataSource,
    pub tasks: Vec<Task>,
    pub success: SuccessPredicate,
    #[serde(default)]
    pub description: String,
}

/// Per-task losses and the predicate verdict for one contract dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractOutcome {
    pub losses: BTreeMap<String, f64>,
    pub success: bool,
}

impl Contract {
    /// Load a contract from JSON, resolving relative file sources against the
    /// document's directory.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut contract: Contract = serde_json::from_str(&text)?;
        if let Some(dir) = path.parent() {
            contract.data = contract.data.resolved(dir);
        }
        Ok(contract)
    }

    pub fn task(&self, name: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.name == name)
    }

    pub fn evaluate(&self, registry: &MetricRegistry, outputs: &[Value], dataset: &Dataset) -> Result<ContractOutcome> {
        let mut losses = BTreeMap::new();
        for task in &self.tasks {
            losses.insert(task.name.clone(), evaluate_task(registry, task, outputs, dataset)?);
        }
        let success = self.success.evaluate(&losses)? == 1;
        Ok(ContractOutcome { losses, success })
    }
}

/// Check every contract invariant, returning the contract unchanged.
pub fn validate_contract(contract: Contract, registry: &MetricRegistry) -> Result<Contract> {
    let mut names = BTreeSet::new();
    for task in &contract.tasks {
        if !names.insert(task.name.as_str()) {
            return Err(Error::InvalidContract(format!("duplicate task name `{}`", task.name)));
        }
        if registry.get(&task.metric_id).is_none() {
            return Err(Error::UnresolvableMetric(task.metric_id.clone()));
        }
    }
    for clause in &contract.success.clauses {
        if !names.contains(clause.task.as_str()) {
            return Err(Error::UnknownTask(clause.task.clone()));
        }
    }
    match &contract.data {
        DataSource::Generator { name, parameters, sample_budget, .. } => {
            crate::data::Generator::parse(name, parameters)?;
            if *sample_budget == 0 {
                return Err(Error::EmptyDataSource(contract.data.source_id()));
            }
        }
        other => {
            other.sample_non_empty(None)?;
        }
    }
    Ok(contract)
}
