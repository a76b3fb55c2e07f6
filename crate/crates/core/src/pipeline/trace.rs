use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::backends::CallCounts;
use crate::error::{Error, Result};
use crate::index::RankedCandidate;
use crate::types::Pathway;

/// A real that serializes with 9 significant digits.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Real9(pub f64);

impl Real9 {
    pub fn rounded(self) -> f64 {
        if !self.0.is_finite() || self.0 == 0.0 {
            return self.0;
        }
        format!("{:.8e}", self.0).parse().expect("formatted float parses")
    }
}

impl From<f64> for Real9 {
    fn from(v: f64) -> Self {
        Real9(v)
    }
}

impl fmt::Display for Real9 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.rounded())
    }
}

impl Serialize for Real9 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.rounded())
    }
}

impl<'de> Deserialize<'de> for Real9 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        f64::deserialize(d).map(Real9)
    }
}

pub type Scored = (String, Real9);

pub(crate) fn scored(list: &[RankedCandidate]) -> Vec<Scored> {
    list.iter().map(|c| (c.item_id.clone(), Real9(c.similarity))).collect()
}

/// State after the retrieval of one iteration (0 = initial).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_image: Option<String>,
    #[serde(default)]
    pub top_k_t2i: Vec<Scored>,
    #[serde(default)]
    pub top_k_i2i: Vec<Scored>,
    /// Pool members with their verifier confidence, in pool order.
    #[serde(default)]
    pub confidences: Vec<Scored>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reliability_t2i: Option<Real9>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reliability_i2i: Option<Real9>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_target_t2i: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_target_i2i: Option<String>,
    #[serde(default)]
    pub pathways_to_refine: Vec<Pathway>,
    /// Per pathway: the suggestion produced after this iteration, or `SATISFIED`.
    #[serde(default)]
    pub reflections: BTreeMap<Pathway, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub stages_ms: BTreeMap<String, Real9>,
    pub total_ms: Real9,
}

impl Default for Real9 {
    fn default() -> Self {
        Real9(0.0)
    }
}

/// Everything recorded about one query. Field order is the serialized order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryTrace {
    pub query_id: String,
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_caption: Option<String>,
    #[serde(default)]
    pub iterations: Vec<IterationRecord>,
    #[serde(default)]
    pub final_ranking: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_ranking: Option<Vec<String>>,
    #[serde(default)]
    pub call_counts: CallCounts,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<StageTimings>,
}

impl QueryTrace {
    pub fn refinement_rounds(&self) -> usize {
        self.iterations.len().saturating_sub(1)
    }

    /// One JSON line. Timings are wall-clock and so left out unless asked for.
    pub fn to_json_line(&self, include_timings: bool) -> String {
        if include_timings || self.timings.is_none() {
            serde_json::to_string(self).expect("trace serializes")
        } else {
            let t = QueryTrace {
                timings: None,
                ..self.clone()
            };
            serde_json::to_string(&t).expect("trace serializes")
        }
    }
}

pub fn write_traces<'a>(path: &Path, traces: impl IntoIterator<Item = &'a QueryTrace>, include_timings: bool) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in traces {
        writeln!(w, "{}", t.to_json_line(include_timings)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_traces(path: &Path) -> Result<Vec<QueryTrace>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: QueryTrace = serde_json::from_str(&line).map_err(|e| Error::schema(i + 1, "trace", e.to_string()))?;
        if t.query_id.is_empty() {
            return Err(Error::schema(i + 1, "query_id", "missing"));
        }
        out.push(t);
    }
    Ok(out)
}

/// Consecutive stage timer: each lap charges the time since the previous
/// lap to one stage, so stages add up to the total.
#[derive(Debug)]
pub struct LapTimer {
    start: Instant,
    last: Instant,
    stages: BTreeMap<&'static str, f64>,
}

impl LapTimer {
    pub fn start() -> Self {
        let now = Instant::now();
        Self {
            start: now,
            last: now,
            stages: BTreeMap::new(),
        }
    }

    pub fn lap(&mut self, stage: &'static str) {
        let now = Instant::now();
        *self.stages.entry(stage).or_default() += (now - self.last).as_secs_f64() * 1e3;
        self.last = now;
    }

    pub fn finish(mut self, stage: &'static str) -> StageTimings {
        self.lap(stage);
        StageTimings {
            stages_ms: self.stages.into_iter().map(|(k, v)| (k.to_string(), Real9(v))).collect(),
            total_ms: Real9((self.last - self.start).as_secs_f64() * 1e3),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(serde_json::to_string(&Real9(0.731_058_578_630_004_9)).unwrap(), "0.731058579");
        assert_eq!(serde_json::to_string(&Real9(1.0)).unwrap(), "1.0");
        assert_eq!(serde_json::to_string(&Real9(-0.123_456_789_9)).unwrap(), "-0.12345679");
        assert_eq!(serde_json::to_string(&Real9(12_345.678_912_3)).unwrap(), "12345.6789");
        assert_eq!(serde_json::to_string(&Real9(0.0)).unwrap(), "0.0");
    }

    #[test]
    fn timings_sum_to_total() {
        let mut t = LapTimer::start();
        std::thread::sleep(std::time::Duration::from_millis(2));
        t.lap("a");
        std::thread::sleep(std::time::Duration::from_millis(1));
        t.lap("b");
        t.lap("a");
        let s = t.finish("tail");
        let sum: f64 = s.stages_ms.values().map(|r| r.0).sum();
        assert!((sum - s.total_ms.0).abs() <= 0.05 * s.total_ms.0);
    }

    #[test]
    fn timings_only_on_request() {
        let t = QueryTrace {
            query_id: "q".into(),
            timings: Some(StageTimings::default()),
            ..QueryTrace::default()
        };
        assert!(!t.to_json_line(false).contains("timings"));
        assert!(t.to_json_line(true).contains("timings"));
        let back: QueryTrace = serde_json::from_str(&t.to_json_line(true)).unwrap();
        assert_eq!(back, t);
    }
}
