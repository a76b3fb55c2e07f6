//! Per-pathway self-reflection loop for pathways the gate marked uncertain.

use crate::backends::{Reflection, Role};
use crate::error::{Error, Result};
use crate::fusion::{evaluate_gate, GateOutcome};
use crate::index::{union_candidates, UnionPool};
use crate::pipeline::{PathwayState, QueryEnv, QueryRun};
use crate::types::Pathway;

pub const SATISFIED: &str = "SATISFIED";

/// Loop state: the round counter and both pathways' current artifacts.
#[derive(Debug, Clone)]
pub struct RefinementState {
    pub iteration: u32,
    pub t2i: PathwayState,
    pub i2i: PathwayState,
}

impl RefinementState {
    pub fn new(t2i: PathwayState, i2i: PathwayState) -> Self {
        Self { iteration: 0, t2i, i2i }
    }

    pub fn path(&self, p: Pathway) -> &PathwayState {
        match p {
            Pathway::T2I => &self.t2i,
            Pathway::I2I => &self.i2i,
        }
    }

    pub fn path_mut(&mut self, p: Pathway) -> &mut PathwayState {
        match p {
            Pathway::T2I => &mut self.t2i,
            Pathway::I2I => &mut self.i2i,
        }
    }

    pub fn pool(&self) -> UnionPool {
        union_candidates(&self.t2i.top_k, &self.i2i.top_k)
    }
}

/// Captions the pseudo-target and asks the refiner whether the modification
/// is met. Any failure is logged as a warning and read as satisfied.
pub fn reflect_pathway(env: &QueryEnv<'_>, pseudo_target: &str, pathway: Pathway, run: &mut QueryRun) -> Reflection {
    let outcome = (|| {
        let c_ref = env
            .c_ref
            .as_ref()
            .ok_or_else(|| Error::precondition("reflect", "reference caption unavailable"))?;
        let handle = env.database.handle(pseudo_target)?;
        let caption = env.backends.caption_image(&handle, &mut run.counts)?;
        env.backends
            .refine_reflect(c_ref, &env.query.modification_text, &caption, pathway, &mut run.counts)
    })();
    match outcome {
        Ok(r) => r,
        Err(e) => {
            let msg = format!("{pathway} reflection failed, keeping current results: {e}");
            log::warn!("query {}: {msg}", env.query.query_id);
            run.warnings.push(msg);
            Reflection::Satisfied
        }
    }
}

/// Records `suggestion` and regenerates the pathway's artifact from the
/// modification text plus every suggestion so far. Re-retrieval is left to
/// the caller.
pub fn apply_suggestion(
    env: &QueryEnv<'_>,
    state: &mut RefinementState,
    pathway: Pathway,
    suggestion: &str,
    run: &mut QueryRun,
) -> Result<()> {
    let iteration = state.iteration;
    let path = state.path_mut(pathway);
    if path.satisfied {
        return Err(Error::precondition(
            "apply_suggestion",
            format!("{pathway} is already satisfied and must not be re-edited"),
        ));
    }
    path.suggestions.push(suggestion.to_string());
    let joined = path.suggestions.join(crate::backends::prompts::SUGGESTION_SEPARATOR);
    let artifact = env.edit(pathway, Some(&joined), iteration + 1, run)?;
    path.artifact = artifact;
    Ok(())
}

/// Runs up to `max_iterations` rounds of reflect, regenerate, re-retrieve,
/// re-verify and re-gate. Returns the final pool and gate.
pub fn run_refinement_loop(
    env: &QueryEnv<'_>,
    initial: GateOutcome,
    state: &mut RefinementState,
    run: &mut QueryRun,
) -> Result<(UnionPool, GateOutcome)> {
    let mut gate = initial;
    let mut pool = state.pool();
    while state.iteration < env.config.max_iterations && !gate.pathways_to_refine.is_empty() {
        let mut regenerated = Vec::new();
        for &p in &gate.pathways_to_refine {
            if state.path(p).satisfied {
                continue;
            }
            let reflection = reflect_pathway(env, gate.pseudo_target(p), p, run);
            run.timer.lap("refine");
            let note = match &reflection {
                Reflection::Satisfied => SATISFIED.to_string(),
                Reflection::Suggest(s) => s.clone(),
            };
            run.current_record().reflections.insert(p, note);
            match reflection {
                Reflection::Satisfied => state.path_mut(p).satisfied = true,
                Reflection::Suggest(s) => {
                    apply_suggestion(env, state, p, &s, run)?;
                    regenerated.push(p);
                }
            }
        }
        if regenerated.is_empty() {
            break;
        }
        state.iteration += 1;
        for p in regenerated {
            let artifact = state.path(p).artifact.clone();
            let (sims, top) = env.retrieve(p, &artifact, run)?;
            let path = state.path_mut(p);
            path.similarities = sims;
            path.top_k = top;
        }
        pool = state.pool();
        env.verify_pool(&pool, run)?;
        gate = evaluate_gate(&pool, &run.confidences, env.config.tau)?;
        run.push_record(state, &pool, &gate);
        debug_assert!(run.counts.get(Role::Refiner) <= 2 * env.config.max_iterations);
    }
    Ok((pool, gate))
}
