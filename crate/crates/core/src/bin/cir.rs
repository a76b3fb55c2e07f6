use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cir_core::backends::BackendsFile;
use cir_core::config::{ConfigFile, PipelineConfig};
use cir_core::eval::{emit_report, rankings_from_outcomes, rankings_from_traces, Dataset, Protocol};
use cir_core::index::{read_embeddings, write_binary, write_jsonl, EmbeddingFormat};
use cir_core::pipeline::{batch_errors, read_traces, write_traces};
use cir_core::synth::{CorpusSpec, FailureModeConfig, QuerySpec, SynthBenchmark, DATASET_FILE};
use cir_core::{build_index, run_batch, run_query, ComposedQuery, Database, Error};

#[derive(Parser, Debug)]
#[command(name = "cir", version, about = "Composed image retrieval: dual-path search, verifier fusion, refinement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate an embedding file and write it out in canonical or binary form.
    Index(IndexArgs),
    /// Run one composed query and print its ranking.
    Query(QueryArgs),
    /// Run a dataset through the pipeline and print the metric table.
    Eval(EvalArgs),
    /// Generate a seeded synthetic benchmark with oracle backends.
    Synth(SynthArgs),
    /// Recompute the metric table from a trace file.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct IndexArgs {
    /// Input embeddings (JSON Lines or binary).
    #[arg(long)]
    embeddings: PathBuf,
    /// Output path.
    #[arg(long)]
    out: PathBuf,
    /// Write the binary form instead of JSON Lines.
    #[arg(long)]
    binary: bool,
}

#[derive(Args, Debug)]
struct RunFlags {
    /// Database embeddings (JSON Lines or binary).
    #[arg(long)]
    embeddings: PathBuf,
    /// Backend profiles (JSON). HTTP backends are only contacted when listed here.
    #[arg(long)]
    backends: PathBuf,
    /// Pipeline config file (TOML or JSON); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fusion mode: ADA, AVG, RAK_T2I, RAK_I2I, T2I_ONLY or I2I_ONLY [default: ADA]
    #[arg(long)]
    mode: Option<String>,
    /// Weight of the T2I similarity; required with --mode AVG, rejected otherwise
    #[arg(long)]
    lambda: Option<f64>,
    /// Reliability threshold tau [default: 0.7]
    #[arg(long)]
    tau: Option<f64>,
    /// Candidates retrieved per pathway, K [default: 50]
    #[arg(long = "top-k")]
    top_k: Option<usize>,
    /// Refinement rounds N [default: 1]
    #[arg(long = "max-iters")]
    max_iters: Option<u32>,
    /// Queries in flight at once [default: 4]
    #[arg(long)]
    parallelism: Option<usize>,
    /// Seed for backend randomness [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Leave a still-uncertain pathway out of fusion [default: off]
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct QueryArgs {
    /// Dataset file holding the query and the database manifest.
    #[arg(long)]
    dataset: PathBuf,
    /// Id of the query to run; with --reference and --text, the id given to the ad hoc query.
    #[arg(long = "query-id")]
    query_id: Option<String>,
    /// Reference item id for an ad hoc query.
    #[arg(long, requires = "text")]
    reference: Option<String>,
    /// Modification text for an ad hoc query.
    #[arg(long, requires = "reference")]
    text: Option<String>,
    /// Ranked ids to print [default: 10]
    #[arg(long, default_value_t = 10, hide_default_value = true)]
    show: usize,
    /// Also write the query trace (one JSON line) here.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Dataset file (queries plus database manifest).
    #[arg(long)]
    dataset: PathBuf,
    /// Write per-query traces (JSON Lines) here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Metric protocol: circo, cirr, fashion-iq or synthetic [default: synthetic]
    #[arg(long)]
    protocol: Option<String>,
    /// Row label in the table [default: the fusion mode]
    #[arg(long)]
    label: Option<String>,
    /// Also write the report as JSON here.
    #[arg(long = "report-json")]
    report_json: Option<PathBuf>,
    /// Include per-stage timings in the traces [default: off]
    #[arg(long)]
    timings: bool,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Generator seed [default: 0]
    #[arg(long, default_value_t = 0, hide_default_value = true)]
    seed: u64,
    /// Database size [default: 200]
    #[arg(long, default_value_t = 200, hide_default_value = true)]
    items: usize,
    /// Number of queries [default: 50]
    #[arg(long, default_value_t = 50, hide_default_value = true)]
    queries: usize,
    /// Oracle failure modes [default: t2i=visual_drop:1,i2i=semantic_drop:1]
    #[arg(long, default_value = "t2i=visual_drop:1,i2i=semantic_drop:1", hide_default_value = true)]
    failure: String,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Visual attribute tokens [default: 8]
    #[arg(long, default_value_t = 8, hide_default_value = true)]
    visual: usize,
    /// Semantic attribute tokens [default: 8]
    #[arg(long, default_value_t = 8, hide_default_value = true)]
    semantic: usize,
    /// Attributes per item [default: 4]
    #[arg(long, default_value_t = 4, hide_default_value = true)]
    attrs: usize,
    /// Edit operations per query [default: 1]
    #[arg(long, default_value_t = 1, hide_default_value = true)]
    ops: usize,
    /// Probability an item is a one-token variant of an earlier one [default: 0.6]
    #[arg(long = "variant-rate", default_value_t = 0.6, hide_default_value = true)]
    variant_rate: f64,
    /// Probability an item duplicates an earlier one [default: 0.05]
    #[arg(long = "duplicate-rate", default_value_t = 0.05, hide_default_value = true)]
    duplicate_rate: f64,
    /// Attach a six-item evaluation subset to every query [default: off]
    #[arg(long)]
    subsets: bool,
    /// Write binary embeddings instead of JSON Lines [default: off]
    #[arg(long)]
    binary: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Trace file written by `eval --trace`.
    #[arg(long)]
    traces: PathBuf,
    /// Dataset file with the ground truth.
    #[arg(long)]
    dataset: PathBuf,
    /// Metric protocol: circo, cirr, fashion-iq or synthetic [default: synthetic]
    #[arg(long)]
    protocol: Option<String>,
    /// Row label [default: the mode recorded in the traces]
    #[arg(long)]
    label: Option<String>,
    /// Also write the report as JSON here.
    #[arg(long = "report-json")]
    report_json: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

/// Bad or unreadable input exits 1; anything else 2.
impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_validation() || matches!(e, Error::Io { .. } | Error::Unsatisfiable(_)) { 1 } else { 2 };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn runtime(e: Error) -> Failure {
    Failure::runtime(e.to_string())
}

fn cmd_index(a: &IndexArgs) -> CliResult {
    let (records, dim) = read_embeddings(&a.embeddings)?;
    let index = build_index(records.iter().cloned(), dim)?;
    if a.binary {
        write_binary(&a.out, &records, dim).map_err(runtime)?;
    } else {
        write_jsonl(&a.out, &records).map_err(runtime)?;
    }
    println!("indexed {} items, dim {}", index.len(), index.dim());
    Ok(())
}

fn pipeline_config(r: &RunFlags) -> CliResult<PipelineConfig> {
    let file = match &r.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let flags = ConfigFile {
        top_k: r.top_k,
        tau: r.tau,
        max_iterations: r.max_iters,
        fusion_mode: r.mode.clone(),
        lambda: r.lambda,
        backend_parallelism: r.parallelism,
        rng_seed: r.seed,
        exclude_uncertain_paths: r.strict.then_some(true),
        trace_ranking_len: None,
    };
    Ok(PipelineConfig::from_file(&file.merge(flags))?)
}

struct Loaded {
    config: PipelineConfig,
    backends: cir_core::backends::Backends,
    database: Database,
}

fn load_run(r: &RunFlags, dataset: &Dataset) -> CliResult<Loaded> {
    let config = pipeline_config(r)?;
    let (records, dim) = read_embeddings(&r.embeddings)?;
    let index = build_index(records, dim)?;
    let database = Database::new(index, dataset.manifest.clone())?;
    let profiles = BackendsFile::load(&r.backends)?;
    if profiles.has_http() {
        log::info!("backends file lists HTTP profiles; network calls enabled");
    }
    let backends = profiles.build(config.rng_seed)?;
    Ok(Loaded {
        config,
        backends,
        database,
    })
}

fn protocol(name: Option<&str>) -> CliResult<Protocol> {
    Ok(name.unwrap_or("synthetic").parse::<Protocol>()?)
}

fn write_report_json(path: Option<&Path>, json: &str) -> CliResult {
    if let Some(p) = path {
        std::fs::write(p, format!("{json}\n")).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", p.display())))?;
    }
    Ok(())
}

fn cmd_query(a: &QueryArgs) -> CliResult {
    let dataset = Dataset::load(&a.dataset)?;
    let query = match (&a.reference, &a.text, &a.query_id) {
        (Some(r), Some(t), id) => ComposedQuery::new(id.clone().unwrap_or_else(|| "adhoc".into()), r.clone(), t.clone()),
        (None, None, Some(id)) => dataset
            .queries
            .iter()
            .find(|q| &q.query_id == id)
            .cloned()
            .ok_or_else(|| Failure::usage(format!("query `{id}` is not in {}", a.dataset.display())))?,
        _ => return Err(Failure::usage("give --query-id, or --reference with --text")),
    };
    if !dataset.manifest.contains_key(&query.reference_id) {
        return Err(Error::MissingReference(query.query_id).into());
    }
    let l = load_run(&a.run, &dataset)?;
    let outcome = run_query(&query, &l.config, &l.backends, &l.database);
    if let Some(p) = &a.trace {
        write_traces(p, [&outcome.trace], false).map_err(runtime)?;
    }
    match (&outcome.ranking, &outcome.error) {
        (Some(ranking), _) => {
            for (i, id) in ranking.iter().take(a.show).enumerate() {
                println!("{:>3}  {id}", i + 1);
            }
            Ok(())
        }
        (None, Some(e)) => Err(Failure::runtime(format!("query {} failed: {e}", query.query_id))),
        (None, None) => Err(Failure::runtime("query produced no ranking")),
    }
}

fn cmd_eval(a: &EvalArgs) -> CliResult {
    let dataset = Dataset::load(&a.dataset)?;
    let protocol = protocol(a.protocol.as_deref())?;
    let l = load_run(&a.run, &dataset)?;
    let outcomes = run_batch(&dataset.queries, &l.config, &l.backends, &l.database);
    if let Some(p) = &a.trace {
        write_traces(p, outcomes.iter().map(|o| &o.trace), a.timings).map_err(runtime)?;
    }
    let label = a.label.clone().unwrap_or_else(|| l.config.fusion_mode.to_string());
    let report = emit_report(
        &dataset.queries,
        &rankings_from_outcomes(&outcomes),
        protocol,
        &label,
        Some(l.config.fingerprint()),
    )?;
    print!("{}", report.render_table());
    write_report_json(a.report_json.as_deref(), &report.to_json())?;
    let errors = batch_errors(&outcomes);
    if errors.is_empty() {
        return Ok(());
    }
    let mut by_kind = std::collections::BTreeMap::<String, usize>::new();
    for (qid, msg) in &errors {
        log::debug!("{qid}: {msg}");
        let kind = msg.split(':').next().unwrap_or(msg).to_string();
        *by_kind.entry(kind).or_default() += 1;
    }
    let summary: Vec<String> = by_kind.iter().map(|(k, n)| format!("{n} x {k}")).collect();
    Err(Failure::runtime(format!(
        "{} of {} queries failed ({})",
        errors.len(),
        dataset.queries.len(),
        summary.join("; ")
    )))
}

fn cmd_synth(a: &SynthArgs) -> CliResult {
    let failure: FailureModeConfig = a
        .failure
        .parse()
        .map_err(|e: Error| Failure::usage(format!("bad --failure spec {:?}: {e}", a.failure)))?;
    if a.items == 0 {
        return Err(Error::Range {
            field: "items",
            detail: "must be at least 1".into(),
        }
        .into());
    }
    if a.queries == 0 {
        return Err(Error::Range {
            field: "queries",
            detail: "must be at least 1".into(),
        }
        .into());
    }
    let corpus = CorpusSpec {
        seed: a.seed,
        n_items: a.items,
        n_visual: a.visual,
        n_semantic: a.semantic,
        attrs_per_item: a.attrs,
        variant_rate: a.variant_rate,
        duplicate_rate: a.duplicate_rate,
    };
    let queries = QuerySpec {
        seed: a.seed,
        n_queries: a.queries,
        edit_ops_per_query: a.ops,
        with_subsets: a.subsets,
        ..QuerySpec::default()
    };
    let bench = SynthBenchmark::generate(&corpus, &queries, failure)?;
    let format = if a.binary { EmbeddingFormat::Binary } else { EmbeddingFormat::JsonLines };
    let emb = bench.write(&a.out, format).map_err(runtime)?;
    println!(
        "wrote {} items and {} queries to {} ({}, embeddings {})",
        bench.corpus.items.len(),
        bench.queries.len(),
        a.out.display(),
        DATASET_FILE,
        emb.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default()
    );
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> CliResult {
    let dataset = Dataset::load(&a.dataset)?;
    let traces = read_traces(&a.traces)?;
    let protocol = protocol(a.protocol.as_deref())?;
    let label = a
        .label
        .clone()
        .or_else(|| traces.first().map(|t| t.mode.clone()))
        .unwrap_or_else(|| "run".into());
    let report = emit_report(&dataset.queries, &rankings_from_traces(&traces), protocol, &label, None)?;
    print!("{}", report.render_table());
    write_report_json(a.report_json.as_deref(), &report.to_json())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Index(a) => cmd_index(a),
        Command::Query(a) => cmd_query(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
