use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rung on the ladder of model insight.
///
/// * 0: no access at all.
/// * 1: may run the model a limited number of times (`run_budget` calls).
/// * 2: may run the model at will.
/// * 3: may run the model and read its declared design metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawAccessLevel")]
pub struct AccessLevel {
    level: u8,
    run_budget: Option<u64>,
    metadata_visible: bool,
}

#[derive(Deserialize)]
struct RawAccessLevel {
    level: u8,
    #[serde(default)]
    run_budget: Option<u64>,
    #[serde(default)]
    metadata_visible: Option<bool>,
}

impl TryFrom<RawAccessLevel> for AccessLevel {
    type Error = Error;

    fn try_from(raw: RawAccessLevel) -> Result<Self> {
        let access = AccessLevel::new(raw.level, raw.run_budget)?;
        if raw.metadata_visible.is_some_and(|v| v != access.metadata_visible) {
            return Err(Error::Domain("metadata_visible must be true exactly at level 3".into()));
        }
        Ok(access)
    }
}

impl AccessLevel {
    pub fn new(level: u8, run_budget: Option<u64>) -> Result<Self> {
        match (level, run_budget) {
            (0, None) | (2, None) | (3, None) | (1, Some(_)) => {
                Ok(Self { level, run_budget, metadata_visible: level == 3 })
            }
            (1, None) => Err(Error::Domain("level 1 access requires a run budget".into())),
            (0 | 2 | 3, Some(_)) => Err(Error::Domain(format!("level {level} access takes no run budget"))),
            _ => Err(Error::Domain(format!("access level must be 0..=3, got {level}"))),
        }
    }

    pub fn none() -> Self {
        Self { level: 0, run_budget: None, metadata_visible: false }
    }

    pub fn limited(run_budget: u64) -> Self {
        Self { level: 1, run_budget: Some(run_budget), metadata_visible: false }
    }

    pub fn black_box() -> Self {
        Self { level: 2, run_budget: None, metadata_visible: false }
    }

    pub fn white_box() -> Self {
        Self { level: 3, run_budget: None, metadata_visible: true }
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    /// `None` means unbounded.
    pub fn run_budget(&self) -> Option<u64> {
        self.run_budget
    }

    pub fn metadata_visible(&self) -> bool {
        self.metadata_visible
    }
}
