//! Verifier-confidence fusion of the two pathways, plus the fixed baselines
//! it is compared against.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::backends::VerifierLogits;
use crate::config::FusionMode;
use crate::error::{Error, Result};
use crate::index::{by_similarity_desc, EmbeddingIndex, UnionPool};
use crate::types::Pathway;

/// Probability of "yes" under a two-way softmax over the answer logits.
pub fn confidence_from_logits(logits: VerifierLogits) -> Result<f64> {
    let VerifierLogits { logit_yes, logit_no } = logits;
    if !logit_yes.is_finite() || !logit_no.is_finite() {
        return Err(Error::NonFinite {
            yes: logit_yes,
            no: logit_no,
        });
    }
    let d = logit_no - logit_yes;
    // exp of a non-positive argument only, so nothing overflows
    Ok(if d >= 0.0 {
        let e = (-d).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + d.exp())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifiedCandidate {
    pub item_id: String,
    pub confidence: f64,
    pub in_t2i: bool,
    pub in_i2i: bool,
    pub sim_t2i: Option<f64>,
    pub sim_i2i: Option<f64>,
}

impl VerifiedCandidate {
    /// Confidence credited to pathway `p`: zero when `p` did not retrieve it.
    pub fn projected(&self, p: Pathway) -> f64 {
        let member = match p {
            Pathway::T2I => self.in_t2i,
            Pathway::I2I => self.in_i2i,
        };
        if member {
            self.confidence
        } else {
            0.0
        }
    }

    pub fn fused(&self) -> f64 {
        self.projected(Pathway::T2I) + self.projected(Pathway::I2I)
    }
}

/// Attaches confidences to pool entries. Every entry must have one.
pub fn verified_candidates(pool: &UnionPool, confidences: &HashMap<String, f64>) -> Result<Vec<VerifiedCandidate>> {
    pool.entries
        .iter()
        .map(|e| {
            let confidence = *confidences
                .get(&e.item_id)
                .ok_or_else(|| Error::precondition("fusion", format!("no confidence for `{}`", e.item_id)))?;
            Ok(VerifiedCandidate {
                item_id: e.item_id.clone(),
                confidence,
                in_t2i: e.in_t2i,
                in_i2i: e.in_i2i,
                sim_t2i: e.sim_t2i,
                sim_i2i: e.sim_i2i,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOutcome {
    pub reliability_t2i: f64,
    pub reliability_i2i: f64,
    pub pseudo_target_t2i: String,
    pub pseudo_target_i2i: String,
    pub pathways_to_refine: BTreeSet<Pathway>,
}

impl GateOutcome {
    pub fn reliability(&self, p: Pathway) -> f64 {
        match p {
            Pathway::T2I => self.reliability_t2i,
            Pathway::I2I => self.reliability_i2i,
        }
    }

    pub fn pseudo_target(&self, p: Pathway) -> &str {
        match p {
            Pathway::T2I => &self.pseudo_target_t2i,
            Pathway::I2I => &self.pseudo_target_i2i,
        }
    }
}

/// Highest-confidence member of pathway `p` and that confidence. Ties go
/// to the higher similarity on `p`, then to the smaller id.
pub fn pathway_reliability(
    pool: &UnionPool,
    confidences: &HashMap<String, f64>,
    pathway: Pathway,
) -> Result<(String, f64)> {
    let mut best: Option<(&str, f64, f64)> = None;
    for e in pool.members(pathway) {
        let c = *confidences
            .get(&e.item_id)
            .ok_or_else(|| Error::precondition("reliability", format!("no confidence for `{}`", e.item_id)))?;
        let sim = e.sim(pathway).unwrap_or(f64::NEG_INFINITY);
        let better = match best {
            None => true,
            Some((id, bc, bs)) => c
                .total_cmp(&bc)
                .then(sim.total_cmp(&bs))
                .then_with(|| id.cmp(e.item_id.as_str()))
                == Ordering::Greater,
        };
        if better {
            best = Some((&e.item_id, c, sim));
        }
    }
    best.map(|(id, c, _)| (id.to_string(), c))
        .ok_or(Error::EmptyPathway(pathway))
}

/// Pathways whose reliability is strictly below `tau`.
pub fn gate(r_t2i: f64, r_i2i: f64, tau: f64) -> BTreeSet<Pathway> {
    let mut out = BTreeSet::new();
    if r_t2i < tau {
        out.insert(Pathway::T2I);
    }
    if r_i2i < tau {
        out.insert(Pathway::I2I);
    }
    out
}

pub fn evaluate_gate(pool: &UnionPool, confidences: &HashMap<String, f64>, tau: f64) -> Result<GateOutcome> {
    let (pt_t2i, r_t2i) = pathway_reliability(pool, confidences, Pathway::T2I)?;
    let (pt_i2i, r_i2i) = pathway_reliability(pool, confidences, Pathway::I2I)?;
    Ok(GateOutcome {
        reliability_t2i: r_t2i,
        reliability_i2i: r_i2i,
        pseudo_target_t2i: pt_t2i,
        pseudo_target_i2i: pt_i2i,
        pathways_to_refine: gate(r_t2i, r_i2i, tau),
    })
}

/// Per-path projected confidences of one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionKey {
    pub item_id: String,
    pub c_t2i: f64,
    pub c_i2i: f64,
}

impl From<&VerifiedCandidate> for FusionKey {
    fn from(c: &VerifiedCandidate) -> Self {
        FusionKey {
            item_id: c.item_id.clone(),
            c_t2i: c.projected(Pathway::T2I),
            c_i2i: c.projected(Pathway::I2I),
        }
    }
}

/// The three confidence keys: fused confidence, then the larger single-path
/// confidence, then the T2I confidence, all descending.
pub fn psi_order(a: &FusionKey, b: &FusionKey) -> Ordering {
    let fa = a.c_t2i + a.c_i2i;
    let fb = b.c_t2i + b.c_i2i;
    fb.total_cmp(&fa)
        .then(b.c_t2i.max(b.c_i2i).total_cmp(&a.c_t2i.max(a.c_i2i)))
        .then(b.c_t2i.total_cmp(&a.c_t2i))
}

/// [`psi_order`], then id ascending.
pub fn fusion_order(a: &FusionKey, b: &FusionKey) -> Ordering {
    psi_order(a, b).then_with(|| a.item_id.cmp(&b.item_id))
}

pub fn fuse_rank_keys(keys: &[FusionKey]) -> Vec<String> {
    let mut sorted: Vec<&FusionKey> = keys.iter().collect();
    sorted.sort_by(|a, b| fusion_order(a, b));
    sorted.into_iter().map(|k| k.item_id.clone()).collect()
}

pub fn fuse_rank(candidates: &[VerifiedCandidate]) -> Vec<String> {
    let keys: Vec<FusionKey> = candidates.iter().map(FusionKey::from).collect();
    fuse_rank_keys(&keys)
}

/// Per-pathway similarity to every database item, in index order.
#[derive(Debug, Clone, Default)]
pub struct PathSimilarities {
    pub t2i: Option<Vec<f64>>,
    pub i2i: Option<Vec<f64>>,
}

impl PathSimilarities {
    pub fn get(&self, p: Pathway) -> Option<&[f64]> {
        match p {
            Pathway::T2I => self.t2i.as_deref(),
            Pathway::I2I => self.i2i.as_deref(),
        }
    }

    fn require(&self, p: Pathway) -> Result<&[f64]> {
        self.get(p)
            .ok_or_else(|| Error::precondition("ranking", format!("no {p} similarities available")))
    }

    /// max over the pathways that are present.
    fn max_at(&self, i: usize) -> f64 {
        let t = self.t2i.as_ref().map_or(f64::NEG_INFINITY, |v| v[i]);
        let v = self.i2i.as_ref().map_or(f64::NEG_INFINITY, |v| v[i]);
        t.max(v)
    }
}

fn rank_by_scores(index: &EmbeddingIndex, scores: &[f64]) -> Vec<String> {
    let ids = index.ids();
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| by_similarity_desc(scores[a], &ids[a], scores[b], &ids[b]));
    order.into_iter().map(|i| ids[i].clone()).collect()
}

/// Rankings of the fixed fusion baselines over the whole database.
/// `rak_confidences` holds verifier confidences for the RAK pathway's top-K.
pub fn baseline_rank(
    mode: FusionMode,
    sims: &PathSimilarities,
    index: &EmbeddingIndex,
    top_k: usize,
    rak_confidences: Option<&HashMap<String, f64>>,
) -> Result<Vec<String>> {
    match mode {
        FusionMode::Ada => Err(Error::ModeMismatch("ADA is not a baseline mode".into())),
        FusionMode::T2iOnly => Ok(rank_by_scores(index, sims.require(Pathway::T2I)?)),
        FusionMode::I2iOnly => Ok(rank_by_scores(index, sims.require(Pathway::I2I)?)),
        FusionMode::Avg { lambda } => {
            let t = sims.require(Pathway::T2I)?;
            let v = sims.require(Pathway::I2I)?;
            let blended: Vec<f64> = t.iter().zip(v).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
            Ok(rank_by_scores(index, &blended))
        }
        FusionMode::Rak(p) => {
            let confidences = rak_confidences
                .ok_or_else(|| Error::precondition("rerank", "verifier confidences required for RAK"))?;
            let path_sims = sims.require(p)?;
            let base = rank_by_scores(index, path_sims);
            let k = top_k.min(base.len());
            let mut head: Vec<(f64, f64, String)> = base[..k]
                .iter()
                .map(|id| {
                    let c = *confidences
                        .get(id)
                        .ok_or_else(|| Error::precondition("rerank", format!("no confidence for `{id}`")))?;
                    let pos = index.position(id).expect("ranked id is indexed");
                    Ok((c, path_sims[pos], id.clone()))
                })
                .collect::<Result<_>>()?;
            head.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)).then_with(|| a.2.cmp(&b.2)));
            let mut out: Vec<String> = head.into_iter().map(|(_, _, id)| id).collect();
            out.extend(base.into_iter().skip(k));
            Ok(out)
        }
    }
}

/// `fused` followed by every other database item, ordered by its best
/// pathway similarity.
pub fn full_ranking(fused: &[String], sims: &PathSimilarities, index: &EmbeddingIndex) -> Vec<String> {
    let seen: HashSet<&str> = fused.iter().map(String::as_str).collect();
    let ids = index.ids();
    let mut rest: Vec<(f64, usize)> = (0..ids.len())
        .filter(|&i| !seen.contains(ids[i].as_str()))
        .map(|i| (sims.max_at(i), i))
        .collect();
    rest.sort_by(|a, b| by_similarity_desc(a.0, &ids[a.1], b.0, &ids[b.1]));
    let mut out = fused.to_vec();
    out.extend(rest.into_iter().map(|(_, i)| ids[i].clone()));
    out
}
