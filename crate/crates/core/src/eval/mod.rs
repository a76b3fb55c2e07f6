//! Retrieval metrics, the dataset file, and benchmark-shaped reports.

mod dataset;
mod metrics;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use dataset::Dataset;
pub use metrics::{map_at_k, recall_at_k, recall_subset_at_k};

use crate::error::{Error, Result};
use crate::pipeline::{QueryOutcome, QueryTrace};
use crate::types::ComposedQuery;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Circo,
    Cirr,
    FashionIq,
    Synthetic,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Circo => "circo",
            Protocol::Cirr => "cirr",
            Protocol::FashionIq => "fashion-iq",
            Protocol::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "circo" => Ok(Protocol::Circo),
            "cirr" => Ok(Protocol::Cirr),
            "fashion-iq" | "fashioniq" => Ok(Protocol::FashionIq),
            "synthetic" | "synth" => Ok(Protocol::Synthetic),
            other => Err(Error::range(
                "protocol",
                format!("unknown protocol {other:?}; expected circo, cirr, fashion-iq or synthetic"),
            )),
        }
    }
}

/// A ranking produced for one query. `None` when the query failed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordedRanking {
    pub ranking: Option<Vec<String>>,
    pub subset_ranking: Option<Vec<String>>,
}

impl From<&QueryOutcome> for RecordedRanking {
    fn from(o: &QueryOutcome) -> Self {
        Self {
            ranking: o.ranking.clone(),
            subset_ranking: o.subset_ranking.clone(),
        }
    }
}

impl From<&QueryTrace> for RecordedRanking {
    fn from(t: &QueryTrace) -> Self {
        Self {
            ranking: t.error.is_none().then(|| t.final_ranking.clone()),
            subset_ranking: t.subset_ranking.clone(),
        }
    }
}

pub fn rankings_from_outcomes(outcomes: &[QueryOutcome]) -> HashMap<String, RecordedRanking> {
    outcomes
        .iter()
        .map(|o| (o.trace.query_id.clone(), RecordedRanking::from(o)))
        .collect()
}

pub fn rankings_from_traces(traces: &[QueryTrace]) -> HashMap<String, RecordedRanking> {
    traces
        .iter()
        .map(|t| (t.query_id.clone(), RecordedRanking::from(t)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub label: String,
    pub protocol: Protocol,
    pub query_count: usize,
    /// Queries without a ranking; they count as misses.
    pub error_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_fingerprint: Option<String>,
    pub metrics: Vec<Metric>,
}

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.name == name).map(|m| m.value)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table with percentages to two decimals.
    pub fn render_table(&self) -> String {
        let mut header = vec!["Method".to_string()];
        let mut row = vec![self.label.clone()];
        for m in &self.metrics {
            header.push(m.name.clone());
            row.push(format!("{:.2}", m.value * 100.0));
        }
        let widths: Vec<usize> = header.iter().zip(&row).map(|(h, r)| h.len().max(r.len())).collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect::<Vec<_>>()
                .join("  ")
        };
        let mut out = format!("{}\n{}\n", line(&header), line(&row));
        out.push_str(&format!(
            "{} queries ({} protocol), {} failed",
            self.query_count, self.protocol, self.error_count
        ));
        if let Some(fp) = &self.config_fingerprint {
            out.push_str(&format!("; {fp}"));
        }
        out.push('\n');
        out
    }
}

type MetricFn = fn(&ComposedQuery, &RecordedRanking, usize) -> Result<f64>;

fn map_metric(q: &ComposedQuery, r: &RecordedRanking, k: usize) -> Result<f64> {
    match &r.ranking {
        Some(ranking) => map_at_k(ranking, &q.ground_truth_ids, k),
        None => Ok(0.0),
    }
}

fn recall_metric(q: &ComposedQuery, r: &RecordedRanking, k: usize) -> Result<f64> {
    match &r.ranking {
        Some(ranking) => recall_at_k(ranking, &q.ground_truth_ids, k),
        None => Ok(0.0),
    }
}

fn subset_metric(q: &ComposedQuery, r: &RecordedRanking, k: usize) -> Result<f64> {
    let subset = q
        .subset_ids
        .as_ref()
        .ok_or_else(|| Error::BadSubset(format!("query {} has no subset", q.query_id)))?;
    match &r.subset_ranking {
        Some(ranking) => recall_subset_at_k(ranking, subset, &q.ground_truth_ids, k),
        None => Ok(0.0),
    }
}

fn mean_over(queries: &[&ComposedQuery], results: &HashMap<String, RecordedRanking>, f: MetricFn, k: usize) -> Result<f64> {
    let missing = RecordedRanking::default();
    let mut sum = 0.0;
    for q in queries {
        if q.ground_truth_ids.is_empty() {
            return Err(Error::EmptyGt);
        }
        sum += f(q, results.get(&q.query_id).unwrap_or(&missing), k)?;
    }
    Ok(if queries.is_empty() { 0.0 } else { sum / queries.len() as f64 })
}

/// Averages the protocol's metrics over `queries`. Queries absent from
/// `results`, or without a ranking, score zero.
pub fn emit_report(
    queries: &[ComposedQuery],
    results: &HashMap<String, RecordedRanking>,
    protocol: Protocol,
    label: &str,
    config_fingerprint: Option<String>,
) -> Result<MetricReport> {
    let all: Vec<&ComposedQuery> = queries.iter().collect();
    let mut metrics = Vec::new();
    let mut push = |name: String, qs: &[&ComposedQuery], f: MetricFn, k: usize| -> Result<f64> {
        let value = mean_over(qs, results, f, k)?;
        metrics.push(Metric { name, value });
        Ok(value)
    };
    let has_subsets = !all.is_empty() && all.iter().all(|q| q.subset_ids.is_some());
    match protocol {
        Protocol::Circo => {
            for k in [5, 10, 25, 50] {
                push(format!("mAP@{k}"), &all, map_metric, k)?;
            }
        }
        Protocol::Cirr => {
            for k in [1, 5, 10, 50] {
                push(format!("R@{k}"), &all, recall_metric, k)?;
            }
            for k in [1, 2, 3] {
                push(format!("Rsub@{k}"), &all, subset_metric, k)?;
            }
        }
        Protocol::FashionIq => {
            let mut groups: BTreeMap<&str, Vec<&ComposedQuery>> = BTreeMap::new();
            for q in &all {
                groups.entry(q.category.as_deref().unwrap_or("all")).or_default().push(q);
            }
            let mut sums = [0.0; 2];
            for (cat, qs) in &groups {
                for (slot, k) in [10, 50].into_iter().enumerate() {
                    sums[slot] += push(format!("{cat} R@{k}"), qs, recall_metric, k)?;
                }
            }
            let n = groups.len().max(1) as f64;
            for (slot, k) in [10, 50].into_iter().enumerate() {
                metrics.push(Metric {
                    name: format!("avg R@{k}"),
                    value: sums[slot] / n,
                });
            }
        }
        Protocol::Synthetic => {
            for k in [5, 10, 25, 50] {
                push(format!("mAP@{k}"), &all, map_metric, k)?;
            }
            for k in [1, 5, 10, 50] {
                push(format!("R@{k}"), &all, recall_metric, k)?;
            }
            if has_subsets {
                for k in [1, 2, 3] {
                    push(format!("Rsub@{k}"), &all, subset_metric, k)?;
                }
            }
        }
    }
    let error_count = queries
        .iter()
        .filter(|q| results.get(&q.query_id).is_none_or(|r| r.ranking.is_none()))
        .count();
    Ok(MetricReport {
        label: label.to_string(),
        protocol,
        query_count: queries.len(),
        error_count,
        config_fingerprint,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(id: &str, gt: &[&str]) -> ComposedQuery {
        ComposedQuery::new(id, "r", "m").with_ground_truth(gt.iter().copied())
    }

    fn ranked(ids: &[&str]) -> RecordedRanking {
        RecordedRanking {
            ranking: Some(ids.iter().map(|s| s.to_string()).collect()),
            subset_ranking: None,
        }
    }

    #[test]
    fn perfect_run_is_all_hundreds() {
        let qs = vec![q("a", &["x"]), q("b", &["y"])];
        let res = HashMap::from([("a".to_string(), ranked(&["x"])), ("b".to_string(), ranked(&["y", "x"]))]);
        let r = emit_report(&qs, &res, Protocol::Circo, "m", None).unwrap();
        assert!(r.metrics.iter().all(|m| m.value == 1.0));
        let table = r.render_table();
        assert_eq!(table.lines().nth(1).unwrap(), "m       100.00  100.00  100.00  100.00");
    }

    #[test]
    fn half_hits_and_errors() {
        let qs = vec![q("a", &["x"]), q("b", &["y"]), q("c", &["z"])];
        let res = HashMap::from([("a".to_string(), ranked(&["x"])), ("b".to_string(), ranked(&["x", "y"]))]);
        let r = emit_report(&qs[..2], &res, Protocol::Synthetic, "m", None).unwrap();
        assert_eq!(r.get("R@1"), Some(0.5));
        assert!(r.render_table().contains("50.00"));
        let r = emit_report(&qs, &res, Protocol::Synthetic, "m", None).unwrap();
        assert_eq!(r.error_count, 1);
        assert!((r.get("R@1").unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn fashion_iq_groups_by_category() {
        let mut a = q("a", &["x"]);
        a.category = Some("dress".into());
        let mut b = q("b", &["y"]);
        b.category = Some("shirt".into());
        let res = HashMap::from([("a".to_string(), ranked(&["x"])), ("b".to_string(), ranked(&["x"]))]);
        let r = emit_report(&[a, b], &res, Protocol::FashionIq, "m", None).unwrap();
        assert_eq!(r.get("dress R@10"), Some(1.0));
        assert_eq!(r.get("shirt R@10"), Some(0.0));
        assert_eq!(r.get("avg R@50"), Some(0.5));
    }

    #[test]
    fn protocol_names() {
        for p in [Protocol::Circo, Protocol::Cirr, Protocol::FashionIq, Protocol::Synthetic] {
            assert_eq!(p.name().parse::<Protocol>().unwrap(), p);
        }
        assert!("imagenet".parse::<Protocol>().is_err());
    }
}
