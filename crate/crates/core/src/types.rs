use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the two retrieval routes. `T2I` orders before `I2I`, which is
/// the iteration order everywhere results are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pathway {
    /// Edited caption used as a text query.
    #[serde(rename = "T2I")]
    T2I,
    /// Edited image used as an image query.
    #[serde(rename = "I2I")]
    I2I,
}

impl Pathway {
    pub const ALL: [Pathway; 2] = [Pathway::T2I, Pathway::I2I];

    pub fn as_str(self) -> &'static str {
        match self {
            Pathway::T2I => "T2I",
            Pathway::I2I => "I2I",
        }
    }

    pub fn other(self) -> Pathway {
        match self {
            Pathway::T2I => Pathway::I2I,
            Pathway::I2I => Pathway::T2I,
        }
    }
}

impl fmt::Display for Pathway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pathway {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "T2I" => Ok(Pathway::T2I),
            "I2I" => Ok(Pathway::I2I),
            other => Err(Error::range("pathway", format!("unknown pathway {other:?}"))),
        }
    }
}

/// Number of members in a curated evaluation subset.
pub const SUBSET_SIZE: usize = 6;

/// A reference item plus the text describing how the target differs from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposedQuery {
    pub query_id: String,
    pub reference_id: String,
    pub modification_text: String,
    #[serde(default)]
    pub ground_truth_ids: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_ids: Option<Vec<String>>,
    /// Grouping used by per-category reports (Fashion-IQ garment type).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl ComposedQuery {
    pub fn new(
        query_id: impl Into<String>,
        reference_id: impl Into<String>,
        modification_text: impl Into<String>,
    ) -> Self {
        Self {
            query_id: query_id.into(),
            reference_id: reference_id.into(),
            modification_text: modification_text.into(),
            ground_truth_ids: BTreeSet::new(),
            subset_ids: None,
            category: None,
        }
    }

    pub fn with_ground_truth<I, S>(mut self, ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.ground_truth_ids = ids.into_iter().map(Into::into).collect();
        self
    }

    /// Checks the invariants that do not need the database manifest.
    pub fn validate(&self) -> Result<()> {
        if self.query_id.trim().is_empty() {
            return Err(Error::range("query_id", "must be nonempty"));
        }
        if self.reference_id.trim().is_empty() {
            return Err(Error::range("reference_id", "must be nonempty"));
        }
        if let Some(subset) = &self.subset_ids {
            if subset.len() != SUBSET_SIZE {
                return Err(Error::BadSubset(format!(
                    "query {}: expected {SUBSET_SIZE} members, got {}",
                    self.query_id,
                    subset.len()
                )));
            }
            if !subset.iter().any(|id| self.ground_truth_ids.contains(id)) {
                return Err(Error::BadSubset(format!(
                    "query {}: subset contains no ground-truth id",
                    self.query_id
                )));
            }
        }
        Ok(())
    }
}
