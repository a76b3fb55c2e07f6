//! The backends file: one profile per role, plus shared oracle settings.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::prompts::{self, PromptTemplate};
use super::{Backends, ChatClient, FileLookupEncoder, HttpBackend, Role};
use crate::error::{Error, Result};
use crate::synth::{FailureModeConfig, OracleSuite, SynthCorpus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BackendKind {
    Http,
    FileLookup,
    Oracle,
}

fn default_timeout_ms() -> u64 {
    60_000
}

fn default_max_retries() -> u32 {
    2
}

fn default_backoff_ms() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendProfile {
    pub role: Role,
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    /// FILE_LOOKUP embedding manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_template: Option<String>,
    /// Refiner only: template for the I2I pathway.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_template_i2i: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_logprobs: Option<u32>,
}

impl BackendProfile {
    pub fn new(role: Role, kind: BackendKind) -> Self {
        Self {
            role,
            kind,
            endpoint: None,
            model_name: None,
            api_key_env: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            backoff_ms: default_backoff_ms(),
            manifest: None,
            prompt_template: None,
            prompt_template_i2i: None,
            top_logprobs: None,
        }
    }

    pub fn http(role: Role, endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: Some(endpoint.into()),
            ..Self::new(role, BackendKind::Http)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timeout_ms == 0 {
            return Err(Error::range("timeout_ms", format!("{} profile: must be positive", self.role)));
        }
        match self.kind {
            BackendKind::Http if self.endpoint.as_deref().is_none_or(|e| e.trim().is_empty()) => {
                Err(Error::range("endpoint", format!("{} profile: HTTP kind requires an endpoint", self.role)))
            }
            BackendKind::FileLookup if self.manifest.is_none() => {
                Err(Error::range("manifest", format!("{} profile: FILE_LOOKUP kind requires a manifest", self.role)))
            }
            BackendKind::FileLookup if !matches!(self.role, Role::EncoderText | Role::EncoderImage) => Err(Error::range(
                "kind",
                format!("{} profile: FILE_LOOKUP serves only encoder roles", self.role),
            )),
            _ => Ok(()),
        }
    }

    fn default_template(&self) -> &'static str {
        match self.role {
            Role::Captioner => prompts::CAPTIONER,
            Role::EditorText => prompts::EDIT_CAPTION,
            Role::EditorImage => prompts::EDIT_IMAGE,
            Role::Verifier => prompts::VERIFIER,
            Role::Refiner => prompts::REFINER_T2I,
            Role::EncoderText | Role::EncoderImage => "",
        }
    }

    fn http_backend(&self, artifact_dir: Option<&str>) -> Result<HttpBackend> {
        let api_key = match &self.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| Error::BackendUnavailable {
                role: self.role.as_str(),
                detail: format!("environment variable {var} is not set"),
            })?),
            None => None,
        };
        let client = ChatClient::new(
            self.role,
            self.endpoint.as_deref().expect("validated"),
            self.model_name.clone(),
            api_key,
            self.timeout_ms,
            self.max_retries,
            self.backoff_ms,
        );
        let template = match &self.prompt_template {
            Some(p) => PromptTemplate::load(Path::new(p))?,
            None => PromptTemplate::new(self.default_template()),
        };
        let mut b = HttpBackend::new(client, template);
        if self.role == Role::Refiner {
            b = b.with_i2i_template(match &self.prompt_template_i2i {
                Some(p) => PromptTemplate::load(Path::new(p))?,
                None => PromptTemplate::new(prompts::REFINER_I2I),
            });
        }
        if let Some(dir) = artifact_dir {
            b = b.with_artifact_dir(dir);
        }
        if let Some(n) = self.top_logprobs {
            b = b.with_top_logprobs(n);
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    /// Path of the synthetic corpus the oracle resolves locators against.
    pub manifest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logit_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
}

impl OracleSection {
    pub fn failure_config(&self) -> Result<FailureModeConfig> {
        let mut f: FailureModeConfig = match &self.failure {
            Some(s) => s.parse()?,
            None => FailureModeConfig::default(),
        };
        if let Some(s) = self.logit_scale {
            f.logit_scale = s;
        }
        if let Some(n) = self.noise {
            f.noise = n;
        }
        f.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendsFile {
    /// Where HTTP image editors save generated images.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSection>,
    #[serde(default)]
    pub profiles: Vec<BackendProfile>,
}

impl BackendsFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::schema(e.line(), "backends", e.to_string()))
    }

    /// Relative manifest and artifact paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut file = Self::parse(&text)?;
        if let Some(base) = path.parent() {
            file.rebase(base);
        }
        Ok(file)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut String| {
            if Path::new(p.as_str()).is_relative() {
                *p = base.join(p.as_str()).to_string_lossy().into_owned();
            }
        };
        if let Some(o) = self.oracle.as_mut() {
            fix(&mut o.manifest);
        }
        self.artifact_dir.iter_mut().for_each(fix);
        for prof in &mut self.profiles {
            prof.manifest.iter_mut().for_each(fix);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.profiles {
            p.validate()?;
            if !seen.insert(p.role) {
                return Err(Error::range("profiles", format!("role {} configured twice", p.role)));
            }
            if p.kind == BackendKind::Oracle && self.oracle.is_none() {
                return Err(Error::range("oracle", format!("{} profile is ORACLE but no oracle section is given", p.role)));
            }
        }
        Ok(())
    }

    pub fn has_http(&self) -> bool {
        self.profiles.iter().any(|p| p.kind == BackendKind::Http)
    }

    /// Instantiates every profile. `seed` feeds the oracle's embedding noise.
    pub fn build(&self, seed: u64) -> Result<Backends> {
        self.validate()?;
        let oracle = match &self.oracle {
            Some(section) if self.profiles.iter().any(|p| p.kind == BackendKind::Oracle) => {
                let corpus = Arc::new(SynthCorpus::load(Path::new(&section.manifest))?);
                Some(Arc::new(OracleSuite::new(corpus, section.failure_config()?, seed)?))
            }
            _ => None,
        };
        let mut b = Backends::new();
        for p in &self.profiles {
            match p.kind {
                BackendKind::Oracle => {
                    let o = oracle.clone().expect("validated");
                    match p.role {
                        Role::Captioner => b.captioner = Some(o),
                        Role::EditorText => b.editor_text = Some(o),
                        Role::EditorImage => b.editor_image = Some(o),
                        Role::Verifier => b.verifier = Some(o),
                        Role::Refiner => b.refiner = Some(o),
                        Role::EncoderText => b.encoder_text = Some(o),
                        Role::EncoderImage => b.encoder_image = Some(o),
                    }
                }
                BackendKind::FileLookup => {
                    let enc = Arc::new(FileLookupEncoder::load(Path::new(p.manifest.as_deref().expect("validated")))?);
                    if p.role == Role::EncoderText {
                        b.encoder_text = Some(enc);
                    } else {
                        b.encoder_image = Some(enc);
                    }
                }
                BackendKind::Http => {
                    let h = Arc::new(p.http_backend(self.artifact_dir.as_deref())?);
                    match p.role {
                        Role::Captioner => b.captioner = Some(h),
                        Role::EditorText => b.editor_text = Some(h),
                        Role::EditorImage => b.editor_image = Some(h),
                        Role::Verifier => b.verifier = Some(h),
                        Role::Refiner => b.refiner = Some(h),
                        Role::EncoderText => b.encoder_text = Some(h),
                        Role::EncoderImage => b.encoder_image = Some(h),
                    }
                }
            }
        }
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn http_requires_endpoint() {
        let mut p = BackendProfile::new(Role::Verifier, BackendKind::Http);
        assert!(matches!(p.validate(), Err(Error::Range { field: "endpoint", .. })));
        p.endpoint = Some("http://localhost:1".into());
        p.validate().unwrap();
    }

    #[test]
    fn file_lookup_requires_manifest_and_encoder_role() {
        let p = BackendProfile::new(Role::EncoderText, BackendKind::FileLookup);
        assert!(matches!(p.validate(), Err(Error::Range { field: "manifest", .. })));
        let p = BackendProfile {
            manifest: Some("m.jsonl".into()),
            ..BackendProfile::new(Role::Verifier, BackendKind::FileLookup)
        };
        assert!(matches!(p.validate(), Err(Error::Range { field: "kind", .. })));
    }

    #[test]
    fn parses_with_defaults() {
        let f = BackendsFile::parse(
            r#"{"profiles": [{"role": "VERIFIER", "kind": "HTTP", "endpoint": "http://h/v1", "model_name": "m"}]}"#,
        )
        .unwrap();
        assert_eq!(f.profiles[0].timeout_ms, 60_000);
        assert_eq!(f.profiles[0].max_retries, 2);
        assert!(f.has_http());
        assert!(BackendsFile::parse(r#"{"profiles": [], "extra": 1}"#).is_err());
    }

    #[test]
    fn oracle_profile_needs_section() {
        let f = BackendsFile {
            profiles: vec![BackendProfile::new(Role::Captioner, BackendKind::Oracle)],
            ..BackendsFile::default()
        };
        assert!(f.build(0).is_err());
    }

    #[test]
    fn missing_api_key_env() {
        let f = BackendsFile {
            profiles: vec![BackendProfile {
                api_key_env: Some("CIR_TEST_SURELY_UNSET_KEY".into()),
                ..BackendProfile::http(Role::Captioner, "http://127.0.0.1:9")
            }],
            ..BackendsFile::default()
        };
        assert!(matches!(f.build(0), Err(Error::BackendUnavailable { .. })));
    }
}
