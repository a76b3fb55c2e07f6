//! Model roles behind pluggable backends.
//!
//! Each role is a small trait. [`Backends`] bundles one implementation per
//! role and adds what the pipeline relies on regardless of backend kind: the
//! reference-caption cache, per-role call accounting, and a clear error when
//! a role the fusion mode needs was never configured.

mod http;
mod lookup;
mod profile;
pub mod prompts;

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Pathway;

pub use http::{parse_reflection, parse_verifier_response, ChatClient, HttpBackend};
pub use lookup::FileLookupEncoder;
pub use profile::{BackendKind, BackendProfile, BackendsFile, OracleSection};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Caption(String);

impl Caption {
    /// Trims `text`; blank text is an empty response from `role`.
    pub fn new(role: &'static str, text: impl AsRef<str>) -> Result<Self> {
        let t = text.as_ref().trim();
        if t.is_empty() {
            return Err(Error::EmptyResponse { role });
        }
        Ok(Caption(t.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Caption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageOrigin {
    Reference,
    Edited { iteration: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageHandle {
    pub locator: String,
    pub origin: ImageOrigin,
}

impl ImageHandle {
    pub fn reference(locator: impl Into<String>) -> Self {
        Self {
            locator: locator.into(),
            origin: ImageOrigin::Reference,
        }
    }

    pub fn edited(locator: impl Into<String>, iteration: u32) -> Result<Self> {
        if iteration == 0 {
            return Err(Error::range("iteration", "edited images start at iteration 1"));
        }
        Ok(Self {
            locator: locator.into(),
            origin: ImageOrigin::Edited { iteration },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifierLogits {
    pub logit_yes: f64,
    pub logit_no: f64,
}

impl VerifierLogits {
    pub fn new(logit_yes: f64, logit_no: f64) -> Self {
        Self { logit_yes, logit_no }
    }
}

/// Outcome of one self-reflection call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reflection {
    Suggest(String),
    Satisfied,
}

/// Where an edit happens: lets backends name generated artifacts.
#[derive(Debug, Clone, Copy)]
pub struct EditContext<'a> {
    pub query_id: &'a str,
    /// 1 for the initial edit, incremented per refinement round.
    pub iteration: u32,
}

pub trait Captioner: Send + Sync {
    fn caption(&self, image: &ImageHandle) -> Result<Caption>;
}

pub trait CaptionEditor: Send + Sync {
    /// `suggestions`, when present, is appended to the modification text.
    fn edit_caption(&self, c_ref: &Caption, t_mod: &str, suggestions: Option<&str>) -> Result<Caption>;
}

pub trait ImageEditor: Send + Sync {
    fn edit_image(
        &self,
        i_ref: &ImageHandle,
        t_mod: &str,
        suggestions: Option<&str>,
        ctx: EditContext<'_>,
    ) -> Result<ImageHandle>;
}

pub trait Verifier: Send + Sync {
    fn verify(&self, i_ref: &ImageHandle, t_mod: &str, candidate: &ImageHandle) -> Result<VerifierLogits>;
}

pub trait Refiner: Send + Sync {
    fn reflect(
        &self,
        c_ref: &Caption,
        t_mod: &str,
        pseudo_target_caption: &Caption,
        pathway: Pathway,
    ) -> Result<Reflection>;
}

pub trait TextEncoder: Send + Sync {
    fn encode_text(&self, text: &Caption) -> Result<Vec<f32>>;
}

pub trait ImageEncoder: Send + Sync {
    fn encode_image(&self, image: &ImageHandle) -> Result<Vec<f32>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Captioner,
    EditorText,
    EditorImage,
    Verifier,
    Refiner,
    EncoderText,
    EncoderImage,
}

impl Role {
    pub const ALL: [Role; 7] = [
        Role::Captioner,
        Role::EditorText,
        Role::EditorImage,
        Role::Verifier,
        Role::Refiner,
        Role::EncoderText,
        Role::EncoderImage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Captioner => "captioner",
            Role::EditorText => "editor_text",
            Role::EditorImage => "editor_image",
            Role::Verifier => "verifier",
            Role::Refiner => "refiner",
            Role::EncoderText => "encoder_text",
            Role::EncoderImage => "encoder_image",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Logical backend invocations made on behalf of one query. Cache hits on
/// the shared caption cache still count, so the numbers do not depend on how
/// queries were scheduled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub captioner: u32,
    pub editor_text: u32,
    pub editor_image: u32,
    pub verifier: u32,
    pub refiner: u32,
    pub encoder_text: u32,
    pub encoder_image: u32,
}

impl CallCounts {
    pub fn get(&self, role: Role) -> u32 {
        match role {
            Role::Captioner => self.captioner,
            Role::EditorText => self.editor_text,
            Role::EditorImage => self.editor_image,
            Role::Verifier => self.verifier,
            Role::Refiner => self.refiner,
            Role::EncoderText => self.encoder_text,
            Role::EncoderImage => self.encoder_image,
        }
    }

    fn bump(&mut self, role: Role) {
        let slot = match role {
            Role::Captioner => &mut self.captioner,
            Role::EditorText => &mut self.editor_text,
            Role::EditorImage => &mut self.editor_image,
            Role::Verifier => &mut self.verifier,
            Role::Refiner => &mut self.refiner,
            Role::EncoderText => &mut self.encoder_text,
            Role::EncoderImage => &mut self.encoder_image,
        };
        *slot += 1;
    }
}

/// Process-wide count of calls that actually reached each backend.
#[derive(Debug, Default)]
pub struct BackendStats {
    counters: [AtomicU64; 7],
}

impl BackendStats {
    fn record(&self, role: Role) {
        self.counters[role as usize].fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self, role: Role) -> u64 {
        self.counters[role as usize].load(Ordering::Relaxed)
    }
}

/// One implementation per role plus shared caches and counters.
#[derive(Default)]
pub struct Backends {
    pub captioner: Option<Arc<dyn Captioner>>,
    pub editor_text: Option<Arc<dyn CaptionEditor>>,
    pub editor_image: Option<Arc<dyn ImageEditor>>,
    pub verifier: Option<Arc<dyn Verifier>>,
    pub refiner: Option<Arc<dyn Refiner>>,
    pub encoder_text: Option<Arc<dyn TextEncoder>>,
    pub encoder_image: Option<Arc<dyn ImageEncoder>>,
    caption_cache: RwLock<HashMap<String, Caption>>,
    stats: BackendStats,
}

fn missing(role: Role) -> Error {
    Error::BackendUnavailable {
        role: role.as_str(),
        detail: "no backend configured for this role".into(),
    }
}

impl Backends {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> &BackendStats {
        &self.stats
    }

    pub fn has(&self, role: Role) -> bool {
        match role {
            Role::Captioner => self.captioner.is_some(),
            Role::EditorText => self.editor_text.is_some(),
            Role::EditorImage => self.editor_image.is_some(),
            Role::Verifier => self.verifier.is_some(),
            Role::Refiner => self.refiner.is_some(),
            Role::EncoderText => self.encoder_text.is_some(),
            Role::EncoderImage => self.encoder_image.is_some(),
        }
    }

    /// Captions are cached by locator across all queries.
    pub fn caption_image(&self, image: &ImageHandle, counts: &mut CallCounts) -> Result<Caption> {
        counts.bump(Role::Captioner);
        if let Some(c) = self.caption_cache.read().expect("caption cache poisoned").get(&image.locator) {
            return Ok(c.clone());
        }
        let backend = self.captioner.as_ref().ok_or_else(|| missing(Role::Captioner))?;
        self.stats.record(Role::Captioner);
        let caption = backend.caption(image)?;
        self.caption_cache
            .write()
            .expect("caption cache poisoned")
            .insert(image.locator.clone(), caption.clone());
        Ok(caption)
    }

    pub fn edit_caption(
        &self,
        c_ref: &Caption,
        t_mod: &str,
        suggestions: Option<&str>,
        counts: &mut CallCounts,
    ) -> Result<Caption> {
        let backend = self.editor_text.as_ref().ok_or_else(|| missing(Role::EditorText))?;
        counts.bump(Role::EditorText);
        self.stats.record(Role::EditorText);
        backend.edit_caption(c_ref, t_mod, suggestions)
    }

    pub fn edit_image(
        &self,
        i_ref: &ImageHandle,
        t_mod: &str,
        suggestions: Option<&str>,
        ctx: EditContext<'_>,
        counts: &mut CallCounts,
    ) -> Result<ImageHandle> {
        let backend = self.editor_image.as_ref().ok_or_else(|| missing(Role::EditorImage))?;
        counts.bump(Role::EditorImage);
        self.stats.record(Role::EditorImage);
        backend.edit_image(i_ref, t_mod, suggestions, ctx)
    }

    pub fn verify(
        &self,
        i_ref: &ImageHandle,
        t_mod: &str,
        candidate: &ImageHandle,
        counts: &mut CallCounts,
    ) -> Result<VerifierLogits> {
        let backend = self.verifier.as_ref().ok_or_else(|| missing(Role::Verifier))?;
        counts.bump(Role::Verifier);
        self.stats.record(Role::Verifier);
        let logits = backend.verify(i_ref, t_mod, candidate)?;
        if !logits.logit_yes.is_finite() || !logits.logit_no.is_finite() {
            return Err(Error::NonFinite {
                yes: logits.logit_yes,
                no: logits.logit_no,
            });
        }
        Ok(logits)
    }

    pub fn refine_reflect(
        &self,
        c_ref: &Caption,
        t_mod: &str,
        pseudo_target_caption: &Caption,
        pathway: Pathway,
        counts: &mut CallCounts,
    ) -> Result<Reflection> {
        let backend = self.refiner.as_ref().ok_or_else(|| missing(Role::Refiner))?;
        counts.bump(Role::Refiner);
        self.stats.record(Role::Refiner);
        backend.reflect(c_ref, t_mod, pseudo_target_caption, pathway)
    }

    pub fn encode_text(&self, text: &Caption, counts: &mut CallCounts) -> Result<Vec<f32>> {
        let backend = self.encoder_text.as_ref().ok_or_else(|| missing(Role::EncoderText))?;
        counts.bump(Role::EncoderText);
        self.stats.record(Role::EncoderText);
        let mut v = backend.encode_text(text)?;
        crate::index::normalize(text.as_str(), &mut v)?;
        Ok(v)
    }

    pub fn encode_image(&self, image: &ImageHandle, counts: &mut CallCounts) -> Result<Vec<f32>> {
        let backend = self.encoder_image.as_ref().ok_or_else(|| missing(Role::EncoderImage))?;
        counts.bump(Role::EncoderImage);
        self.stats.record(Role::EncoderImage);
        let mut v = backend.encode_image(image)?;
        crate::index::normalize(&image.locator, &mut v)?;
        Ok(v)
    }
}
