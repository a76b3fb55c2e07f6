//! Exact cosine search over the database and union-pool construction.

mod io;

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Pathway;

pub use io::{
    read_embeddings, read_embeddings_from, write_binary, write_jsonl, EmbeddingFormat, BINARY_MAGIC,
    BINARY_VERSION,
};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub item_id: String,
    pub vector: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn new(item_id: impl Into<String>, vector: Vec<f32>) -> Self {
        Self {
            item_id: item_id.into(),
            vector,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub item_id: String,
    pub similarity: f64,
}

/// Descending similarity, then ascending id.
pub fn by_similarity_desc(a_sim: f64, a_id: &str, b_sim: f64, b_id: &str) -> Ordering {
    b_sim.total_cmp(&a_sim).then_with(|| a_id.cmp(b_id))
}

/// L2-normalizes `v` in place, computing the norm in f64.
pub fn normalize(item_id: &str, v: &mut [f32]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteVector(item_id.to_string()));
    }
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroNorm(item_id.to_string()));
    }
    for x in v.iter_mut() {
        *x = (f64::from(*x) / norm) as f32;
    }
    Ok(())
}

/// Dot product accumulated in f64.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// Immutable store of unit vectors over the database.
#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<f32>,
    positions: HashMap<String, usize>,
}

/// Builds an index, normalizing every vector on the way in.
pub fn build_index<I>(records: I, dim: usize) -> Result<EmbeddingIndex>
where
    I: IntoIterator<Item = EmbeddingRecord>,
{
    if dim == 0 {
        return Err(Error::range("dim", "must be positive"));
    }
    let records = records.into_iter();
    let (lower, _) = records.size_hint();
    let mut ids = Vec::with_capacity(lower);
    let mut vectors = Vec::with_capacity(lower * dim);
    let mut positions = HashMap::with_capacity(lower);
    for EmbeddingRecord { item_id, mut vector } in records {
        if vector.len() != dim {
            return Err(Error::DimMismatch {
                item_id,
                expected: dim,
                actual: vector.len(),
            });
        }
        normalize(&item_id, &mut vector)?;
        if positions.contains_key(&item_id) {
            return Err(Error::DuplicateId(item_id));
        }
        positions.insert(item_id.clone(), ids.len());
        ids.push(item_id);
        vectors.extend_from_slice(&vector);
    }
    Ok(EmbeddingIndex {
        dim,
        ids,
        vectors,
        positions,
    })
}

impl EmbeddingIndex {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, item_id: &str) -> bool {
        self.positions.contains_key(item_id)
    }

    pub fn position(&self, item_id: &str) -> Option<usize> {
        self.positions.get(item_id).copied()
    }

    pub fn vector(&self, item_id: &str) -> Option<&[f32]> {
        self.position(item_id).map(|i| self.row(i))
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn records(&self) -> impl Iterator<Item = EmbeddingRecord> + '_ {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| EmbeddingRecord::new(id.clone(), self.row(i).to_vec()))
    }

    fn check_query(&self, query: &[f32]) -> Result<()> {
        if query.len() != self.dim {
            return Err(Error::DimMismatch {
                item_id: "<query>".into(),
                expected: self.dim,
                actual: query.len(),
            });
        }
        Ok(())
    }

    /// Similarity of `query` to every item, in index order.
    pub fn similarities(&self, query: &[f32]) -> Result<Vec<f64>> {
        self.check_query(query)?;
        Ok((0..self.len()).map(|i| dot(self.row(i), query)).collect())
    }

    /// Exact top-`k` by cosine similarity; ties go to the smaller id.
    pub fn top_k(&self, query: &[f32], k: usize) -> Result<Vec<RankedCandidate>> {
        let sims = self.similarities(query)?;
        let mut order: Vec<usize> = (0..self.len()).collect();
        let cmp = |&a: &usize, &b: &usize| by_similarity_desc(sims[a], &self.ids[a], sims[b], &self.ids[b]);
        let k = k.min(order.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, cmp);
            order.truncate(k);
        }
        order.sort_unstable_by(cmp);
        Ok(order
            .into_iter()
            .map(|i| RankedCandidate {
                item_id: self.ids[i].clone(),
                similarity: sims[i],
            })
            .collect())
    }
}

/// Free-function form of [`EmbeddingIndex::top_k`].
pub fn top_k(index: &EmbeddingIndex, query: &[f32], k: usize) -> Result<Vec<RankedCandidate>> {
    index.top_k(query, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub item_id: String,
    pub in_t2i: bool,
    pub in_i2i: bool,
    pub sim_t2i: Option<f64>,
    pub sim_i2i: Option<f64>,
}

impl PoolEntry {
    pub fn in_pathway(&self, p: Pathway) -> bool {
        match p {
            Pathway::T2I => self.in_t2i,
            Pathway::I2I => self.in_i2i,
        }
    }

    pub fn sim(&self, p: Pathway) -> Option<f64> {
        match p {
            Pathway::T2I => self.sim_t2i,
            Pathway::I2I => self.sim_i2i,
        }
    }
}

/// Union of both pathways' candidate lists, in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UnionPool {
    pub entries: Vec<PoolEntry>,
}

impl UnionPool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, item_id: &str) -> Option<&PoolEntry> {
        self.entries.iter().find(|e| e.item_id == item_id)
    }

    pub fn members(&self, p: Pathway) -> impl Iterator<Item = &PoolEntry> {
        self.entries.iter().filter(move |e| e.in_pathway(p))
    }

    /// Keeps only the entries retrieved by `p`, dropping the other pathway's flags.
    pub fn restricted_to(&self, p: Pathway) -> UnionPool {
        let entries = self
            .members(p)
            .map(|e| PoolEntry {
                item_id: e.item_id.clone(),
                in_t2i: p == Pathway::T2I,
                in_i2i: p == Pathway::I2I,
                sim_t2i: if p == Pathway::T2I { e.sim_t2i } else { None },
                sim_i2i: if p == Pathway::I2I { e.sim_i2i } else { None },
            })
            .collect();
        UnionPool { entries }
    }
}

pub fn union_candidates(r_t2i: &[RankedCandidate], r_i2i: &[RankedCandidate]) -> UnionPool {
    let mut entries: Vec<PoolEntry> = Vec::with_capacity(r_t2i.len() + r_i2i.len());
    let mut slot: HashMap<&str, usize> = HashMap::with_capacity(entries.capacity());
    for c in r_t2i {
        slot.insert(&c.item_id, entries.len());
        entries.push(PoolEntry {
            item_id: c.item_id.clone(),
            in_t2i: true,
            in_i2i: false,
            sim_t2i: Some(c.similarity),
            sim_i2i: None,
        });
    }
    for c in r_i2i {
        match slot.get(c.item_id.as_str()) {
            Some(&i) => {
                entries[i].in_i2i = true;
                entries[i].sim_i2i = Some(c.similarity);
            }
            None => {
                slot.insert(&c.item_id, entries.len());
                entries.push(PoolEntry {
                    item_id: c.item_id.clone(),
                    in_t2i: false,
                    in_i2i: true,
                    sim_t2i: None,
                    sim_i2i: Some(c.similarity),
                });
            }
        }
    }
    UnionPool { entries }
}
