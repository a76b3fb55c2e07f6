//! Pipeline configuration and its flat file form.
//!
//! The on-disk form is a flat key/value document (TOML or JSON). Unknown keys
//! are rejected. Values given on the command line are merged on top of the
//! file with [`ConfigFile::merge`] before [`PipelineConfig::from_file`]
//! validates the result.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Pathway;

pub const DEFAULT_TOP_K: usize = 50;
pub const DEFAULT_TAU: f64 = 0.7;
pub const DEFAULT_MAX_ITERATIONS: u32 = 1;
pub const DEFAULT_PARALLELISM: usize = 4;
pub const DEFAULT_TRACE_RANKING_LEN: usize = 100;

/// How the two pathways are turned into a final ranking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FusionMode {
    /// Verifier-confidence fusion with gating and refinement.
    Ada,
    /// Fixed similarity-level blend: `lambda * sim_t2i + (1 - lambda) * sim_i2i`.
    Avg { lambda: f64 },
    /// One pathway's top-K reranked by verifier confidence.
    Rak(Pathway),
    T2iOnly,
    I2iOnly,
}

impl FusionMode {
    /// Name used in config files and on the command line. `Avg` carries its
    /// weight separately under the `lambda` key.
    pub fn name(&self) -> &'static str {
        match self {
            FusionMode::Ada => "ADA",
            FusionMode::Avg { .. } => "AVG",
            FusionMode::Rak(Pathway::T2I) => "RAK_T2I",
            FusionMode::Rak(Pathway::I2I) => "RAK_I2I",
            FusionMode::T2iOnly => "T2I_ONLY",
            FusionMode::I2iOnly => "I2I_ONLY",
        }
    }

    /// Parses a mode name; `lambda` is only consulted (and required) for AVG.
    pub fn parse(name: &str, lambda: Option<f64>) -> Result<Self> {
        let upper = name.trim().to_ascii_uppercase().replace('-', "_");
        let mode = match upper.as_str() {
            "ADA" => FusionMode::Ada,
            "AVG" => FusionMode::Avg {
                lambda: lambda.ok_or_else(|| Error::range("lambda", "required when fusion_mode is AVG"))?,
            },
            "RAK" | "RAK_T2I" => FusionMode::Rak(Pathway::T2I),
            "RAK_I2I" => FusionMode::Rak(Pathway::I2I),
            "T2I_ONLY" | "T2I" => FusionMode::T2iOnly,
            "I2I_ONLY" | "I2I" => FusionMode::I2iOnly,
            _ => {
                return Err(Error::range(
                    "fusion_mode",
                    format!("unknown mode {name:?}; expected ADA, AVG, RAK_T2I, RAK_I2I, T2I_ONLY or I2I_ONLY"),
                ))
            }
        };
        if lambda.is_some() && !matches!(mode, FusionMode::Avg { .. }) {
            return Err(Error::range("lambda", format!("only applies to AVG, not {}", mode.name())));
        }
        Ok(mode)
    }

    pub fn lambda(&self) -> Option<f64> {
        match self {
            FusionMode::Avg { lambda } => Some(*lambda),
            _ => None,
        }
    }

    pub fn uses_pathway(&self, p: Pathway) -> bool {
        match self {
            FusionMode::Ada | FusionMode::Avg { .. } => true,
            FusionMode::Rak(q) => *q == p,
            FusionMode::T2iOnly => p == Pathway::T2I,
            FusionMode::I2iOnly => p == Pathway::I2I,
        }
    }

    pub fn uses_verifier(&self) -> bool {
        matches!(self, FusionMode::Ada | FusionMode::Rak(_))
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionMode::Avg { lambda } => write!(f, "AVG({lambda})"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    /// Accepts the plain names plus `AVG(0.5)` / `AVG:0.5`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let upper = t.to_ascii_uppercase();
        if let Some(rest) = upper.strip_prefix("AVG") {
            let rest = rest.trim_start_matches([':', '(', '=']).trim_end_matches(')');
            if !rest.is_empty() {
                let lambda: f64 = rest
                    .parse()
                    .map_err(|_| Error::range("lambda", format!("cannot parse {rest:?}")))?;
                return FusionMode::parse("AVG", Some(lambda));
            }
        }
        FusionMode::parse(t, None)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Candidates retrieved per pathway (K).
    pub top_k: usize,
    /// Reliability threshold; a pathway is uncertain iff its reliability < tau.
    pub tau: f64,
    /// Refinement rounds after the initial retrieval (N). Zero disables refinement.
    pub max_iterations: u32,
    pub fusion_mode: FusionMode,
    /// Queries in flight at once; also bounds concurrent calls per backend.
    pub backend_parallelism: usize,
    pub rng_seed: u64,
    /// When set, a pathway still uncertain after refinement is left out of
    /// fusion (unless both are uncertain).
    pub exclude_uncertain_paths: bool,
    /// Number of final-ranking ids kept in each trace record.
    pub trace_ranking_len: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            tau: DEFAULT_TAU,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            fusion_mode: FusionMode::Ada,
            backend_parallelism: DEFAULT_PARALLELISM,
            rng_seed: 0,
            exclude_uncertain_paths: false,
            trace_ranking_len: DEFAULT_TRACE_RANKING_LEN,
        }
    }
}

/// Returns `cfg` unchanged when every invariant holds.
pub fn validate_config(cfg: PipelineConfig) -> Result<PipelineConfig> {
    if cfg.top_k == 0 {
        return Err(Error::range("top_k", "must be at least 1"));
    }
    if !(0.0..=1.0).contains(&cfg.tau) {
        return Err(Error::range("tau", format!("{} is outside [0, 1]", cfg.tau)));
    }
    if let FusionMode::Avg { lambda } = cfg.fusion_mode {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::range("lambda", format!("{lambda} is outside [0, 1]")));
        }
    }
    if cfg.backend_parallelism == 0 {
        return Err(Error::range("backend_parallelism", "must be at least 1"));
    }
    if cfg.trace_ranking_len == 0 {
        return Err(Error::range("trace_ranking_len", "must be at least 1"));
    }
    Ok(cfg)
}

/// Flat file form. Every key is optional; missing keys take the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fusion_mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend_parallelism: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exclude_uncertain_paths: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_ranking_len: Option<usize>,
}

impl ConfigFile {
    /// Parses TOML or JSON; JSON is detected by a leading `{`.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::schema(e.line(), "config", e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| {
                let unknown = e.message().strip_prefix("unknown field `").and_then(|m| m.split('`').next());
                let line = match unknown.and_then(|key| text.lines().position(|l| l.trim_start().starts_with(key))) {
                    Some(i) => i + 1,
                    None => e
                        .span()
                        .map(|s| text[..s.start.min(text.len())].lines().count().max(1))
                        .unwrap_or(0),
                };
                Error::schema(line, "config", e.message().to_string())
            })
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Values present in `overrides` win.
    pub fn merge(self, overrides: ConfigFile) -> ConfigFile {
        let mode_overridden = overrides.fusion_mode.is_some();
        ConfigFile {
            top_k: overrides.top_k.or(self.top_k),
            tau: overrides.tau.or(self.tau),
            max_iterations: overrides.max_iterations.or(self.max_iterations),
            fusion_mode: overrides.fusion_mode.or(self.fusion_mode),
            // A mode switch on the command line drops a file-level lambda that
            // belonged to the old mode.
            lambda: if mode_overridden {
                overrides.lambda
            } else {
                overrides.lambda.or(self.lambda)
            },
            backend_parallelism: overrides.backend_parallelism.or(self.backend_parallelism),
            rng_seed: overrides.rng_seed.or(self.rng_seed),
            exclude_uncertain_paths: overrides.exclude_uncertain_paths.or(self.exclude_uncertain_paths),
            trace_ranking_len: overrides.trace_ranking_len.or(self.trace_ranking_len),
        }
    }
}

impl PipelineConfig {
    pub fn from_file(file: &ConfigFile) -> Result<Self> {
        let d = PipelineConfig::default();
        let fusion_mode = match &file.fusion_mode {
            Some(name) => FusionMode::parse(name, file.lambda)?,
            None if file.lambda.is_some() => {
                return Err(Error::range("lambda", "only applies to AVG, not ADA"));
            }
            None => d.fusion_mode,
        };
        validate_config(PipelineConfig {
            top_k: file.top_k.unwrap_or(d.top_k),
            tau: file.tau.unwrap_or(d.tau),
            max_iterations: file.max_iterations.unwrap_or(d.max_iterations),
            fusion_mode,
            backend_parallelism: file.backend_parallelism.unwrap_or(d.backend_parallelism),
            rng_seed: file.rng_seed.unwrap_or(d.rng_seed),
            exclude_uncertain_paths: file.exclude_uncertain_paths.unwrap_or(d.exclude_uncertain_paths),
            trace_ranking_len: file.trace_ranking_len.unwrap_or(d.trace_ranking_len),
        })
    }

    pub fn to_file(&self) -> ConfigFile {
        ConfigFile {
            top_k: Some(self.top_k),
            tau: Some(self.tau),
            max_iterations: Some(self.max_iterations),
            fusion_mode: Some(self.fusion_mode.name().to_string()),
            lambda: self.fusion_mode.lambda(),
            backend_parallelism: Some(self.backend_parallelism),
            rng_seed: Some(self.rng_seed),
            exclude_uncertain_paths: Some(self.exclude_uncertain_paths),
            trace_ranking_len: Some(self.trace_ranking_len),
        }
    }

    /// Short stable string identifying the settings that affect rankings.
    pub fn fingerprint(&self) -> String {
        format!(
            "mode={} K={} tau={} N={} seed={}{}",
            self.fusion_mode,
            self.top_k,
            self.tau,
            self.max_iterations,
            self.rng_seed,
            if self.exclude_uncertain_paths { " strict" } else { "" }
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = validate_config(PipelineConfig::default()).unwrap();
        assert_eq!(cfg.top_k, 50);
        assert_eq!(cfg.tau, 0.7);
        assert_eq!(cfg.max_iterations, 1);
        assert_eq!(cfg.fusion_mode, FusionMode::Ada);
    }

    #[test]
    fn tau_one_is_allowed() {
        let cfg = PipelineConfig {
            tau: 1.0,
            ..Default::default()
        };
        assert_eq!(validate_config(cfg.clone()).unwrap(), cfg);
    }

    #[test]
    fn zero_top_k_names_the_field() {
        let cfg = PipelineConfig {
            top_k: 0,
            ..Default::default()
        };
        match validate_config(cfg) {
            Err(Error::Range { field, .. }) => assert_eq!(field, "top_k"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tau_outside_unit_interval_rejected() {
        for tau in [-0.01, 1.01, f64::NAN] {
            let cfg = PipelineConfig {
                tau,
                ..Default::default()
            };
            assert!(matches!(validate_config(cfg), Err(Error::Range { field: "tau", .. })));
        }
    }

    #[test]
    fn avg_requires_lambda_in_range() {
        assert!(matches!(
            FusionMode::parse("AVG", None),
            Err(Error::Range { field: "lambda", .. })
        ));
        let cfg = PipelineConfig {
            fusion_mode: FusionMode::Avg { lambda: 1.5 },
            ..Default::default()
        };
        assert!(matches!(validate_config(cfg), Err(Error::Range { field: "lambda", .. })));
    }

    #[test]
    fn lambda_outside_avg_is_rejected() {
        let file = ConfigFile {
            fusion_mode: Some("ADA".into()),
            lambda: Some(0.5),
            ..Default::default()
        };
        assert!(matches!(
            PipelineConfig::from_file(&file),
            Err(Error::Range { field: "lambda", .. })
        ));
    }

    #[test]
    fn parses_toml_and_json() {
        let toml = "top_k = 10\ntau = 0.5\nfusion_mode = \"AVG\"\nlambda = 0.25\n";
        let cfg = PipelineConfig::from_file(&ConfigFile::parse(toml).unwrap()).unwrap();
        assert_eq!(cfg.top_k, 10);
        assert_eq!(cfg.fusion_mode, FusionMode::Avg { lambda: 0.25 });

        let json = r#"{"max_iterations": 0, "fusion_mode": "RAK_I2I", "rng_seed": 18446744073709551615}"#;
        let cfg = PipelineConfig::from_file(&ConfigFile::parse(json).unwrap()).unwrap();
        assert_eq!(cfg.max_iterations, 0);
        assert_eq!(cfg.fusion_mode, FusionMode::Rak(Pathway::I2I));
        assert_eq!(cfg.rng_seed, u64::MAX);
    }

    #[test]
    fn unknown_key_is_a_schema_error() {
        let err = ConfigFile::parse("top_k = 5\nthreshold = 0.7\n").unwrap_err();
        assert!(matches!(err, Error::Schema { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn overrides_beat_file_values() {
        let file = ConfigFile {
            top_k: Some(20),
            tau: Some(0.6),
            fusion_mode: Some("AVG".into()),
            lambda: Some(0.3),
            ..Default::default()
        };
        let cli = ConfigFile {
            tau: Some(0.9),
            fusion_mode: Some("ADA".into()),
            ..Default::default()
        };
        let cfg = PipelineConfig::from_file(&file.merge(cli)).unwrap();
        assert_eq!(cfg.top_k, 20);
        assert_eq!(cfg.tau, 0.9);
        assert_eq!(cfg.fusion_mode, FusionMode::Ada);
    }

    #[test]
    fn mode_strings_parse() {
        assert_eq!("avg(0.5)".parse::<FusionMode>().unwrap(), FusionMode::Avg { lambda: 0.5 });
        assert_eq!("AVG:1".parse::<FusionMode>().unwrap(), FusionMode::Avg { lambda: 1.0 });
        assert_eq!("rak".parse::<FusionMode>().unwrap(), FusionMode::Rak(Pathway::T2I));
        assert_eq!("t2i_only".parse::<FusionMode>().unwrap(), FusionMode::T2iOnly);
        assert!("fancy".parse::<FusionMode>().is_err());
    }

    fn arb_mode() -> impl Strategy<Value = FusionMode> {
        prop_oneof![
            Just(FusionMode::Ada),
            (0.0..=1.0f64).prop_map(|lambda| FusionMode::Avg { lambda }),
            Just(FusionMode::Rak(Pathway::T2I)),
            Just(FusionMode::Rak(Pathway::I2I)),
            Just(FusionMode::T2iOnly),
            Just(FusionMode::I2iOnly),
        ]
    }

    proptest! {
        #[test]
        fn serialization_round_trip_is_identity(
            top_k in 1usize..10_000,
            tau in 0.0..=1.0f64,
            n in 0u32..8,
            mode in arb_mode(),
            par in 1usize..64,
            seed in any::<u64>(),
            strict in any::<bool>(),
        ) {
            let cfg = PipelineConfig {
                top_k, tau, max_iterations: n, fusion_mode: mode,
                backend_parallelism: par, rng_seed: seed,
                exclude_uncertain_paths: strict, trace_ranking_len: 100,
            };
            let json = serde_json::to_string(&cfg.to_file()).unwrap();
            let back = PipelineConfig::from_file(&ConfigFile::parse(&json).unwrap()).unwrap();
            prop_assert_eq!(&back, &cfg);
            prop_assert_eq!(validate_config(back).unwrap(), cfg);
        }
    }
}
