//! Per-query orchestration: dual-path retrieval, verification, gating,
//! refinement and final ranking, plus batch execution and traces.

mod trace;

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

pub use trace::{read_traces, write_traces, IterationRecord, LapTimer, QueryTrace, Real9, Scored, StageTimings};

use crate::backends::{Backends, Caption, CallCounts, EditContext, ImageHandle};
use crate::config::{FusionMode, PipelineConfig};
use crate::error::{Error, Result};
use crate::fusion::{
    baseline_rank, confidence_from_logits, evaluate_gate, fuse_rank, full_ranking, psi_order, verified_candidates,
    FusionKey, GateOutcome, PathSimilarities,
};
use crate::index::{by_similarity_desc, EmbeddingIndex, RankedCandidate, UnionPool};
use crate::refine::{run_refinement_loop, RefinementState};
use crate::types::{ComposedQuery, Pathway};

/// The searchable index plus the locator of every known item. The manifest
/// may also list items outside the index, such as reference images.
#[derive(Debug, Clone)]
pub struct Database {
    pub index: EmbeddingIndex,
    manifest: HashMap<String, String>,
}

impl Database {
    pub fn new(index: EmbeddingIndex, manifest: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let manifest: HashMap<String, String> = manifest.into_iter().collect();
        if let Some(id) = index.ids().iter().find(|id| !manifest.contains_key(*id)) {
            return Err(Error::range("manifest", format!("indexed item `{id}` has no manifest entry")));
        }
        Ok(Self { index, manifest })
    }

    /// Every item's locator is its own id.
    pub fn identity(index: EmbeddingIndex) -> Self {
        let manifest = index.ids().iter().map(|id| (id.clone(), id.clone())).collect();
        Self { index, manifest }
    }

    pub fn locator(&self, item_id: &str) -> Option<&str> {
        self.manifest.get(item_id).map(String::as_str)
    }

    pub fn handle(&self, item_id: &str) -> Result<ImageHandle> {
        self.locator(item_id)
            .map(ImageHandle::reference)
            .ok_or_else(|| Error::UnknownItem(item_id.to_string()))
    }
}

/// A pathway's query artifact.
#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Caption(Caption),
    Image(ImageHandle),
}

#[derive(Debug, Clone)]
pub struct PathwayState {
    pub pathway: Pathway,
    pub artifact: Artifact,
    /// Similarity of the query vector to every indexed item, in index order.
    pub similarities: Vec<f64>,
    pub top_k: Vec<RankedCandidate>,
    pub suggestions: Vec<String>,
    pub satisfied: bool,
}

/// Immutable inputs of one query run.
pub struct QueryEnv<'a> {
    pub query: &'a ComposedQuery,
    pub reference: ImageHandle,
    pub c_ref: Option<Caption>,
    pub config: &'a PipelineConfig,
    pub backends: &'a Backends,
    pub database: &'a Database,
}

/// Mutable per-query bookkeeping.
pub struct QueryRun {
    pub counts: CallCounts,
    pub warnings: Vec<String>,
    /// Verifier confidence per candidate; reused across iterations.
    pub confidences: HashMap<String, f64>,
    pub timer: LapTimer,
    pub records: Vec<IterationRecord>,
}

impl Default for QueryRun {
    fn default() -> Self {
        Self::new()
    }
}

impl QueryRun {
    pub fn new() -> Self {
        Self {
            counts: CallCounts::default(),
            warnings: Vec::new(),
            confidences: HashMap::new(),
            timer: LapTimer::start(),
            records: Vec::new(),
        }
    }

    pub fn current_record(&mut self) -> &mut IterationRecord {
        if self.records.is_empty() {
            self.records.push(IterationRecord::default());
        }
        self.records.last_mut().expect("nonempty")
    }

    fn record(
        &mut self,
        iteration: u32,
        paths: [Option<&PathwayState>; 2],
        pool: Option<&UnionPool>,
        gate: Option<&GateOutcome>,
    ) {
        let mut r = IterationRecord {
            iteration,
            ..IterationRecord::default()
        };
        for p in paths.into_iter().flatten() {
            match (&p.artifact, p.pathway) {
                (Artifact::Caption(c), _) => r.edited_caption = Some(c.as_str().to_string()),
                (Artifact::Image(h), _) => r.edited_image = Some(h.locator.clone()),
            }
            let list = trace::scored(&p.top_k);
            match p.pathway {
                Pathway::T2I => r.top_k_t2i = list,
                Pathway::I2I => r.top_k_i2i = list,
            }
        }
        if let Some(pool) = pool {
            r.confidences = pool
                .entries
                .iter()
                .filter_map(|e| self.confidences.get(&e.item_id).map(|&c| (e.item_id.clone(), Real9(c))))
                .collect();
        }
        if let Some(g) = gate {
            r.reliability_t2i = Some(Real9(g.reliability_t2i));
            r.reliability_i2i = Some(Real9(g.reliability_i2i));
            r.pseudo_target_t2i = Some(g.pseudo_target_t2i.clone());
            r.pseudo_target_i2i = Some(g.pseudo_target_i2i.clone());
            r.pathways_to_refine = g.pathways_to_refine.iter().copied().collect();
        }
        self.records.push(r);
    }

    pub fn push_record(&mut self, state: &RefinementState, pool: &UnionPool, gate: &GateOutcome) {
        self.record(state.iteration, [Some(&state.t2i), Some(&state.i2i)], Some(pool), Some(gate));
    }
}

impl QueryEnv<'_> {
    fn t_mod(&self) -> &str {
        &self.query.modification_text
    }

    /// Edits the reference for `pathway`. `round` is 0 for the initial edit.
    pub fn edit(&self, pathway: Pathway, suggestions: Option<&str>, round: u32, run: &mut QueryRun) -> Result<Artifact> {
        let out = match pathway {
            Pathway::T2I => {
                let c_ref = self
                    .c_ref
                    .as_ref()
                    .ok_or_else(|| Error::precondition("edit", "reference caption unavailable"))?;
                Artifact::Caption(self.backends.edit_caption(c_ref, self.t_mod(), suggestions, &mut run.counts)?)
            }
            Pathway::I2I => {
                let ctx = EditContext {
                    query_id: &self.query.query_id,
                    iteration: round + 1,
                };
                Artifact::Image(
                    self.backends
                        .edit_image(&self.reference, self.t_mod(), suggestions, ctx, &mut run.counts)?,
                )
            }
        };
        run.timer.lap("edit");
        Ok(out)
    }

    /// Encodes the artifact and scores it against the whole index.
    pub fn retrieve(&self, pathway: Pathway, artifact: &Artifact, run: &mut QueryRun) -> Result<(Vec<f64>, Vec<RankedCandidate>)> {
        let q = match (pathway, artifact) {
            (Pathway::T2I, Artifact::Caption(c)) => self.backends.encode_text(c, &mut run.counts)?,
            (Pathway::I2I, Artifact::Image(h)) => self.backends.encode_image(h, &mut run.counts)?,
            _ => return Err(Error::precondition("retrieve", format!("artifact does not match {pathway}"))),
        };
        run.timer.lap("encode");
        let index = &self.database.index;
        let sims = index.similarities(&q)?;
        let top = top_k_from(index, &sims, self.config.top_k);
        run.timer.lap("retrieve");
        Ok((sims, top))
    }

    pub fn initial_path(&self, pathway: Pathway, run: &mut QueryRun) -> Result<PathwayState> {
        let artifact = self.edit(pathway, None, 0, run)?;
        let (similarities, top_k) = self.retrieve(pathway, &artifact, run)?;
        Ok(PathwayState {
            pathway,
            artifact,
            similarities,
            top_k,
            suggestions: Vec::new(),
            satisfied: false,
        })
    }

    /// Verifies every id without a cached confidence.
    pub fn verify_ids<'i>(&self, ids: impl IntoIterator<Item = &'i str>, run: &mut QueryRun) -> Result<()> {
        for id in ids {
            if run.confidences.contains_key(id) {
                continue;
            }
            let candidate = self.database.handle(id)?;
            let logits = self
                .backends
                .verify(&self.reference, self.t_mod(), &candidate, &mut run.counts)?;
            run.confidences.insert(id.to_string(), confidence_from_logits(logits)?);
        }
        run.timer.lap("verify");
        Ok(())
    }

    pub fn verify_pool(&self, pool: &UnionPool, run: &mut QueryRun) -> Result<()> {
        self.verify_ids(pool.entries.iter().map(|e| e.item_id.as_str()), run)
    }
}

/// Top-k from precomputed similarities; same order as [`EmbeddingIndex::top_k`].
fn top_k_from(index: &EmbeddingIndex, sims: &[f64], k: usize) -> Vec<RankedCandidate> {
    let ids = index.ids();
    let mut order: Vec<usize> = (0..ids.len()).collect();
    let cmp = |&a: &usize, &b: &usize| by_similarity_desc(sims[a], &ids[a], sims[b], &ids[b]);
    let k = k.min(order.len());
    if k < order.len() {
        order.select_nth_unstable_by(k, cmp);
        order.truncate(k);
    }
    order.sort_by(cmp);
    order
        .into_iter()
        .map(|i| RankedCandidate {
            item_id: ids[i].clone(),
            similarity: sims[i],
        })
        .collect()
}

/// Result of one query. On failure `ranking` is `None` and the trace holds
/// the stages that completed.
#[derive(Debug)]
pub struct QueryOutcome {
    pub ranking: Option<Vec<String>>,
    pub subset_ranking: Option<Vec<String>>,
    pub trace: QueryTrace,
    pub error: Option<Error>,
}

impl QueryOutcome {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

struct Ranked {
    full: Vec<String>,
    subset: Option<Vec<String>>,
}

fn subset_in_order(full: &[String], subset: &[String]) -> Vec<String> {
    full.iter().filter(|id| subset.contains(id)).cloned().collect()
}

/// Subset members ranked by the confidence keys with membership taken from
/// the final top-K sets; members outside both fall back to their best
/// pathway similarity.
fn subset_ranking_ada(
    env: &QueryEnv<'_>,
    subset: &[String],
    pool: &UnionPool,
    sims: &PathSimilarities,
    run: &mut QueryRun,
) -> Result<Vec<String>> {
    env.verify_ids(subset.iter().map(String::as_str), run)?;
    let index = &env.database.index;
    let mut keyed = Vec::with_capacity(subset.len());
    for id in subset {
        let pos = index.position(id).ok_or_else(|| Error::UnknownItem(id.clone()))?;
        let c = run.confidences[id];
        let (in_t, in_i) = pool.get(id).map_or((false, false), |e| (e.in_t2i, e.in_i2i));
        let key = FusionKey {
            item_id: id.clone(),
            c_t2i: if in_t { c } else { 0.0 },
            c_i2i: if in_i { c } else { 0.0 },
        };
        let best_sim = Pathway::ALL
            .iter()
            .filter_map(|&p| sims.get(p).map(|v| v[pos]))
            .fold(f64::NEG_INFINITY, f64::max);
        keyed.push((key, best_sim));
    }
    keyed.sort_by(|(a, sa), (b, sb)| {
        psi_order(a, b)
            .then(sb.total_cmp(sa))
            .then_with(|| a.item_id.cmp(&b.item_id))
    });
    Ok(keyed.into_iter().map(|(k, _)| k.item_id).collect())
}

fn run_adaptive(env: &QueryEnv<'_>, run: &mut QueryRun) -> Result<Ranked> {
    let t2i = env.initial_path(Pathway::T2I, run)?;
    let i2i = env.initial_path(Pathway::I2I, run)?;
    let mut state = RefinementState::new(t2i, i2i);
    let pool = state.pool();
    env.verify_pool(&pool, run)?;
    let gate = evaluate_gate(&pool, &run.confidences, env.config.tau)?;
    run.push_record(&state, &pool, &gate);

    let (pool, gate) = run_refinement_loop(env, gate, &mut state, run)?;

    let fused_pool = if env.config.exclude_uncertain_paths {
        match (gate.reliability_t2i >= env.config.tau, gate.reliability_i2i >= env.config.tau) {
            (true, false) => pool.restricted_to(Pathway::T2I),
            (false, true) => pool.restricted_to(Pathway::I2I),
            _ => pool.clone(),
        }
    } else {
        pool.clone()
    };
    let fused = fuse_rank(&verified_candidates(&fused_pool, &run.confidences)?);
    let sims = PathSimilarities {
        t2i: Some(std::mem::take(&mut state.t2i.similarities)),
        i2i: Some(std::mem::take(&mut state.i2i.similarities)),
    };
    let full = full_ranking(&fused, &sims, &env.database.index);
    run.timer.lap("fuse");
    let subset = match &env.query.subset_ids {
        Some(s) => Some(subset_ranking_ada(env, s, &pool, &sims, run)?),
        None => None,
    };
    Ok(Ranked { full, subset })
}

fn run_baseline(env: &QueryEnv<'_>, run: &mut QueryRun) -> Result<Ranked> {
    let mode = env.config.fusion_mode;
    let mut paths: [Option<PathwayState>; 2] = [None, None];
    for (slot, p) in paths.iter_mut().zip(Pathway::ALL) {
        if mode.uses_pathway(p) {
            *slot = Some(env.initial_path(p, run)?);
        }
    }
    let rak = match mode {
        FusionMode::Rak(p) => {
            let state = paths[p as usize].as_ref().expect("RAK pathway generated");
            env.verify_ids(state.top_k.iter().map(|c| c.item_id.as_str()), run)?;
            Some(&run.confidences)
        }
        _ => None,
    };
    let sims = PathSimilarities {
        t2i: paths[0].as_ref().map(|s| s.similarities.clone()),
        i2i: paths[1].as_ref().map(|s| s.similarities.clone()),
    };
    let full = baseline_rank(mode, &sims, &env.database.index, env.config.top_k, rak)?;
    let pool = match &paths {
        [Some(t), Some(i)] => Some(crate::index::union_candidates(&t.top_k, &i.top_k)),
        [Some(t), None] => Some(crate::index::union_candidates(&t.top_k, &[])),
        [None, Some(i)] => Some(crate::index::union_candidates(&[], &i.top_k)),
        [None, None] => None,
    };
    run.record(0, [paths[0].as_ref(), paths[1].as_ref()], pool.as_ref(), None);
    run.timer.lap("fuse");
    let subset = env.query.subset_ids.as_ref().map(|s| subset_in_order(&full, s));
    Ok(Ranked { full, subset })
}

/// Runs one query end to end. Never panics on backend failure: errors end
/// up in the outcome and its trace.
pub fn run_query(query: &ComposedQuery, config: &PipelineConfig, backends: &Backends, database: &Database) -> QueryOutcome {
    let mut run = QueryRun::new();
    let mut trace = QueryTrace {
        query_id: query.query_id.clone(),
        mode: config.fusion_mode.to_string(),
        ..QueryTrace::default()
    };
    let result = (|| -> Result<Ranked> {
        query.validate()?;
        let reference = database
            .handle(&query.reference_id)
            .map_err(|_| Error::MissingReference(query.query_id.clone()))?;
        let mode = config.fusion_mode;
        let c_ref = if mode == FusionMode::Ada || mode.uses_pathway(Pathway::T2I) {
            Some(backends.caption_image(&reference, &mut run.counts)?)
        } else {
            None
        };
        run.timer.lap("caption");
        trace.reference_caption = c_ref.as_ref().map(|c| c.as_str().to_string());
        let env = QueryEnv {
            query,
            reference,
            c_ref,
            config,
            backends,
            database,
        };
        if mode == FusionMode::Ada {
            run_adaptive(&env, &mut run)
        } else {
            run_baseline(&env, &mut run)
        }
    })();
    trace.iterations = std::mem::take(&mut run.records);
    trace.call_counts = run.counts;
    trace.warnings = std::mem::take(&mut run.warnings);
    match result {
        Ok(ranked) => {
            trace.final_ranking = ranked.full.iter().take(config.trace_ranking_len).cloned().collect();
            trace.subset_ranking = ranked.subset.clone();
            trace.timings = Some(run.timer.finish("finish"));
            QueryOutcome {
                ranking: Some(ranked.full),
                subset_ranking: ranked.subset,
                trace,
                error: None,
            }
        }
        Err(e) => {
            log::warn!("query {} failed: {e}", query.query_id);
            trace.error = Some(e.to_string());
            trace.timings = Some(run.timer.finish("finish"));
            QueryOutcome {
                ranking: None,
                subset_ranking: None,
                trace,
                error: Some(e),
            }
        }
    }
}

/// Runs queries concurrently, `backend_parallelism` at a time. Results are
/// in input order; a failing query does not affect the others.
pub fn run_batch(
    queries: &[ComposedQuery],
    config: &PipelineConfig,
    backends: &Backends,
    database: &Database,
) -> Vec<QueryOutcome> {
    let work = || {
        queries
            .par_iter()
            .map(|q| run_query(q, config, backends, database))
            .collect()
    };
    match rayon::ThreadPoolBuilder::new()
        .num_threads(config.backend_parallelism)
        .build()
    {
        Ok(pool) => pool.install(work),
        Err(e) => {
            log::warn!("could not start worker pool ({e}); running queries serially");
            queries.iter().map(|q| run_query(q, config, backends, database)).collect()
        }
    }
}

/// Per-query error messages of a batch, keyed by query id.
pub fn batch_errors(outcomes: &[QueryOutcome]) -> BTreeMap<String, String> {
    outcomes
        .iter()
        .filter_map(|o| o.error.as_ref().map(|e| (o.trace.query_id.clone(), e.to_string())))
        .collect()
}
