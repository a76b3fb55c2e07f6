#![allow(dead_code)]

use std::sync::Arc;

use cir_core::backends::Backends;
use cir_core::config::FusionMode;
use cir_core::eval::{emit_report, rankings_from_outcomes, MetricReport, Protocol};
use cir_core::synth::{oracle_suite, CorpusSpec, FailureModeConfig, QuerySpec, SynthBenchmark};
use cir_core::{build_index, run_batch, Database, PipelineConfig, QueryOutcome};

pub struct Bench {
    pub bench: SynthBenchmark,
    pub backends: Backends,
    pub database: Database,
}

pub fn bench(seed: u64, items: usize, queries: usize, failure: FailureModeConfig) -> Bench {
    let corpus = CorpusSpec {
        seed,
        n_items: items,
        ..CorpusSpec::default()
    };
    let qs = QuerySpec {
        seed,
        n_queries: queries,
        ..QuerySpec::default()
    };
    let bench = SynthBenchmark::generate(&corpus, &qs, failure).expect("benchmark");
    let backends = oracle_suite(Arc::new(bench.corpus.clone()), failure, seed).expect("oracle");
    let index = build_index(bench.corpus.embeddings().expect("embeddings"), bench.corpus.universe.dim()).expect("index");
    let database = Database::new(index, bench.dataset().manifest).expect("database");
    Bench {
        bench,
        backends,
        database,
    }
}

impl Bench {
    pub fn run(&self, config: &PipelineConfig) -> Vec<QueryOutcome> {
        run_batch(&self.bench.queries, config, &self.backends, &self.database)
    }

    pub fn report(&self, config: &PipelineConfig) -> MetricReport {
        let outcomes = self.run(config);
        emit_report(
            &self.bench.queries,
            &rankings_from_outcomes(&outcomes),
            Protocol::Synthetic,
            config.fusion_mode.name(),
            None,
        )
        .expect("report")
    }
}

pub fn config(mode: FusionMode) -> PipelineConfig {
    PipelineConfig {
        fusion_mode: mode,
        ..PipelineConfig::default()
    }
}

/// Hit at rank 1 for each query, by query id.
pub fn top1_hits(bench: &SynthBenchmark, outcomes: &[QueryOutcome]) -> std::collections::BTreeMap<String, bool> {
    bench
        .queries
        .iter()
        .zip(outcomes)
        .map(|(q, o)| {
            let hit = o
                .ranking
                .as_ref()
                .and_then(|r| r.first())
                .is_some_and(|top| q.ground_truth_ids.contains(top));
            (q.query_id.clone(), hit)
        })
        .collect()
}
