use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ComposedQuery, SUBSET_SIZE};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatabaseEntry {
    id: String,
    image: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRecord {
    query_id: String,
    reference_id: String,
    modification_text: String,
    #[serde(default)]
    ground_truth_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subset_ids: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    category: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    queries: Vec<QueryRecord>,
    database: Vec<DatabaseEntry>,
}

/// Queries plus the item id → image locator manifest.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub queries: Vec<ComposedQuery>,
    pub manifest: BTreeMap<String, String>,
}

fn serde_field(msg: &str) -> String {
    msg.split('`').nth(1).unwrap_or("<document>").to_string()
}

/// Line on which `needle` first appears, for locating semantic errors.
fn line_of(text: &str, needle: &str) -> usize {
    text.find(needle).map_or(0, |at| text[..at].lines().count().max(1))
}

impl Dataset {
    pub fn parse(text: &str) -> Result<Self> {
        let file: DatasetFile =
            serde_json::from_str(text).map_err(|e| Error::schema(e.line(), serde_field(&e.to_string()), e.to_string()))?;
        let mut manifest = BTreeMap::new();
        for entry in file.database {
            let line = line_of(text, &format!("\"{}\"", entry.id));
            if entry.id.is_empty() || entry.image.is_empty() {
                return Err(Error::schema(line, "database", "id and image must be nonempty"));
            }
            if manifest.insert(entry.id.clone(), entry.image).is_some() {
                return Err(Error::schema(line, "id", format!("duplicate database id `{}`", entry.id)));
            }
        }
        let mut seen = BTreeSet::new();
        let mut queries = Vec::with_capacity(file.queries.len());
        for r in file.queries {
            let line = line_of(text, &format!("\"{}\"", r.query_id));
            if r.query_id.is_empty() {
                return Err(Error::schema(line, "query_id", "must be nonempty"));
            }
            if !seen.insert(r.query_id.clone()) {
                return Err(Error::schema(line, "query_id", format!("duplicate query id `{}`", r.query_id)));
            }
            if !manifest.contains_key(&r.reference_id) {
                return Err(Error::MissingReference(r.query_id));
            }
            if let Some(s) = &r.subset_ids {
                if s.len() != SUBSET_SIZE {
                    return Err(Error::schema(
                        line,
                        "subset_ids",
                        format!("query `{}` has {} subset members, expected {SUBSET_SIZE}", r.query_id, s.len()),
                    ));
                }
                if !s.iter().any(|id| r.ground_truth_ids.contains(id)) {
                    return Err(Error::schema(
                        line,
                        "subset_ids",
                        format!("query `{}` subset holds no ground-truth id", r.query_id),
                    ));
                }
            }
            let mut q = ComposedQuery::new(r.query_id, r.reference_id, r.modification_text)
                .with_ground_truth(r.ground_truth_ids);
            q.subset_ids = r.subset_ids;
            q.category = r.category;
            queries.push(q);
        }
        Ok(Self { queries, manifest })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        let file = DatasetFile {
            queries: self
                .queries
                .iter()
                .map(|q| QueryRecord {
                    query_id: q.query_id.clone(),
                    reference_id: q.reference_id.clone(),
                    modification_text: q.modification_text.clone(),
                    ground_truth_ids: q.ground_truth_ids.iter().cloned().collect(),
                    subset_ids: q.subset_ids.clone(),
                    category: q.category.clone(),
                })
                .collect(),
            database: self
                .manifest
                .iter()
                .map(|(id, image)| DatabaseEntry {
                    id: id.clone(),
                    image: image.clone(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("dataset serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}
