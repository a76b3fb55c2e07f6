use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ops::{apply_ops, caption_of, parse_caption, parse_instruction, AttrSet};
use super::{AttrClass, SynthCorpus};
use crate::backends::{
    Backends, Caption, CaptionEditor, Captioner, EditContext, ImageEditor, ImageEncoder, ImageHandle, Refiner,
    Reflection, TextEncoder, Verifier, VerifierLogits,
};
use crate::error::{Error, Result};
use crate::types::Pathway;

/// Locators of oracle-edited images carry their attribute set.
pub const EDITED_LOCATOR_PREFIX: &str = "oracle:edit:";

pub const FAILURE_GRAMMAR: &str =
    "none | t2i=<none|visual_drop:N>,i2i=<none|semantic_drop:N>[,scale=R][,noise=R]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropRule {
    None,
    VisualDrop(usize),
    SemanticDrop(usize),
}

impl DropRule {
    fn class_and_count(self) -> Option<(AttrClass, usize)> {
        match self {
            DropRule::None | DropRule::VisualDrop(0) | DropRule::SemanticDrop(0) => None,
            DropRule::VisualDrop(n) => Some((AttrClass::Visual, n)),
            DropRule::SemanticDrop(n) => Some((AttrClass::Semantic, n)),
        }
    }
}

impl fmt::Display for DropRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DropRule::None => f.write_str("none"),
            DropRule::VisualDrop(n) => write!(f, "visual_drop:{n}"),
            DropRule::SemanticDrop(n) => write!(f, "semantic_drop:{n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureModeConfig {
    pub t2i_drop: DropRule,
    pub i2i_drop: DropRule,
    pub logit_scale: f64,
    pub noise: f64,
}

impl Default for FailureModeConfig {
    fn default() -> Self {
        Self {
            t2i_drop: DropRule::None,
            i2i_drop: DropRule::None,
            logit_scale: 4.0,
            noise: 0.0,
        }
    }
}

impl FailureModeConfig {
    pub fn dropping(visual: usize, semantic: usize) -> Self {
        Self {
            t2i_drop: if visual == 0 { DropRule::None } else { DropRule::VisualDrop(visual) },
            i2i_drop: if semantic == 0 { DropRule::None } else { DropRule::SemanticDrop(semantic) },
            ..Self::default()
        }
    }

    pub fn with_logit_scale(mut self, s: f64) -> Self {
        self.logit_scale = s;
        self
    }

    pub fn validate(self) -> Result<Self> {
        if !(self.logit_scale.is_finite() && self.logit_scale > 0.0) {
            return Err(Error::range("logit_scale", format!("{} must be positive", self.logit_scale)));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::range("noise", format!("{} must be nonnegative", self.noise)));
        }
        if matches!(self.t2i_drop, DropRule::SemanticDrop(_)) || matches!(self.i2i_drop, DropRule::VisualDrop(_)) {
            return Err(Error::range("failure", format!("T2I drops visual tokens, I2I semantic; expected {FAILURE_GRAMMAR}")));
        }
        Ok(self)
    }
}

/// Drops are always printed; scale and noise only when not at their defaults.
impl fmt::Display for FailureModeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t2i={},i2i={}", self.t2i_drop, self.i2i_drop)?;
        if self.logit_scale != 4.0 {
            write!(f, ",scale={}", self.logit_scale)?;
        }
        if self.noise != 0.0 {
            write!(f, ",noise={}", self.noise)?;
        }
        Ok(())
    }
}

impl FromStr for FailureModeConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |detail: String| Error::range("failure", format!("{detail}; expected {FAILURE_GRAMMAR}"));
        let mut cfg = FailureModeConfig::default();
        if s.trim().eq_ignore_ascii_case("none") {
            return Ok(cfg);
        }
        let count = |v: &str, kind: &str| -> Result<usize> {
            v.strip_prefix(kind)
                .and_then(|n| n.strip_prefix(':'))
                .and_then(|n| n.parse().ok())
                .ok_or_else(|| bad(format!("cannot parse {v:?}")))
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part.split_once('=').ok_or_else(|| bad(format!("clause {part:?} lacks '='")))?;
            let value = value.trim().to_ascii_lowercase();
            match key.trim().to_ascii_lowercase().as_str() {
                "t2i" if value == "none" => cfg.t2i_drop = DropRule::None,
                "t2i" => cfg.t2i_drop = DropRule::VisualDrop(count(&value, "visual_drop")?),
                "i2i" if value == "none" => cfg.i2i_drop = DropRule::None,
                "i2i" => cfg.i2i_drop = DropRule::SemanticDrop(count(&value, "semantic_drop")?),
                "scale" => cfg.logit_scale = value.parse().map_err(|_| bad(format!("bad scale {value:?}")))?,
                "noise" => cfg.noise = value.parse().map_err(|_| bad(format!("bad noise {value:?}")))?,
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        cfg.validate().map_err(|e| bad(e.to_string()))
    }
}

/// Oracle implementation of every backend role over one corpus.
#[derive(Debug, Clone)]
pub struct OracleSuite {
    corpus: Arc<SynthCorpus>,
    attrs: Arc<HashMap<String, AttrSet>>,
    failure: FailureModeConfig,
    seed: u64,
}

impl OracleSuite {
    pub fn new(corpus: Arc<SynthCorpus>, failure: FailureModeConfig, seed: u64) -> Result<Self> {
        let attrs = corpus
            .items
            .iter()
            .map(|it| (it.item_id.clone(), it.attributes.clone()))
            .collect();
        Ok(Self {
            corpus,
            attrs: Arc::new(attrs),
            failure: failure.validate()?,
            seed,
        })
    }

    pub fn failure(&self) -> FailureModeConfig {
        self.failure
    }

    pub fn resolve(&self, locator: &str) -> Result<AttrSet> {
        if let Some(a) = self.attrs.get(locator) {
            return Ok(a.clone());
        }
        if let Some(rest) = locator.strip_prefix(EDITED_LOCATOR_PREFIX) {
            return Ok(rest.split(',').filter(|t| !t.is_empty()).map(String::from).collect());
        }
        Err(Error::UnknownItem(locator.to_string()))
    }

    /// The edit both editors perform: the modification, then the pathway's
    /// drop, then any suggestions on top.
    pub fn edited_attributes(&self, base: &AttrSet, t_mod: &str, suggestions: Option<&str>, pathway: Pathway) -> AttrSet {
        let ops = parse_instruction(t_mod);
        let mut out = apply_ops(base, &ops);
        let rule = match pathway {
            Pathway::T2I => self.failure.t2i_drop,
            Pathway::I2I => self.failure.i2i_drop,
        };
        if let (false, Some((class, n))) = (ops.is_empty(), rule.class_and_count()) {
            let victims: Vec<String> = out
                .iter()
                .filter(|t| self.corpus.class_of(t) == Some(class))
                .take(n)
                .cloned()
                .collect();
            for v in victims {
                out.remove(&v);
            }
        }
        if let Some(s) = suggestions {
            out = apply_ops(&out, &parse_instruction(s));
        }
        out
    }

    pub fn match_fraction(&self, reference: &AttrSet, t_mod: &str, candidate: &AttrSet) -> f64 {
        let target = apply_ops(reference, &parse_instruction(t_mod));
        if target.is_empty() {
            return 0.0;
        }
        target.intersection(candidate).count() as f64 / target.len() as f64
    }

    fn embed(&self, kind: &str, key: &str, attrs: &AttrSet) -> Result<Vec<f32>> {
        let mut v = self.corpus.universe.indicator(attrs);
        if self.failure.noise > 0.0 {
            let mut h = Sha256::new();
            h.update(self.seed.to_le_bytes());
            h.update(kind.as_bytes());
            h.update([0]);
            h.update(key.as_bytes());
            let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
            let normal = Normal::new(0.0, self.failure.noise).expect("validated noise");
            for x in v.iter_mut() {
                *x += normal.sample(&mut rng) as f32;
            }
        }
        crate::index::normalize(key, &mut v)?;
        Ok(v)
    }
}

fn caption(role: &'static str, attrs: &AttrSet) -> Result<Caption> {
    Caption::new(role, caption_of(attrs))
}

impl Captioner for OracleSuite {
    fn caption(&self, image: &ImageHandle) -> Result<Caption> {
        caption("captioner", &self.resolve(&image.locator)?)
    }
}

impl CaptionEditor for OracleSuite {
    fn edit_caption(&self, c_ref: &Caption, t_mod: &str, suggestions: Option<&str>) -> Result<Caption> {
        let base = parse_caption(c_ref.as_str());
        caption("editor_text", &self.edited_attributes(&base, t_mod, suggestions, Pathway::T2I))
    }
}

impl ImageEditor for OracleSuite {
    fn edit_image(
        &self,
        i_ref: &ImageHandle,
        t_mod: &str,
        suggestions: Option<&str>,
        ctx: EditContext<'_>,
    ) -> Result<ImageHandle> {
        let base = self.resolve(&i_ref.locator)?;
        let out = self.edited_attributes(&base, t_mod, suggestions, Pathway::I2I);
        let tokens: Vec<&str> = out.iter().map(String::as_str).collect();
        ImageHandle::edited(format!("{EDITED_LOCATOR_PREFIX}{}", tokens.join(",")), ctx.iteration)
    }
}

impl Verifier for OracleSuite {
    fn verify(&self, i_ref: &ImageHandle, t_mod: &str, candidate: &ImageHandle) -> Result<VerifierLogits> {
        let m = self.match_fraction(&self.resolve(&i_ref.locator)?, t_mod, &self.resolve(&candidate.locator)?);
        let yes = self.failure.logit_scale * (2.0 * m - 1.0);
        Ok(VerifierLogits::new(yes, -yes))
    }
}

impl Refiner for OracleSuite {
    fn reflect(&self, c_ref: &Caption, t_mod: &str, pseudo_target_caption: &Caption, _pathway: Pathway) -> Result<Reflection> {
        let required = apply_ops(&parse_caption(c_ref.as_str()), &parse_instruction(t_mod));
        let have = parse_caption(pseudo_target_caption.as_str());
        Ok(match required.difference(&have).next() {
            Some(t) => Reflection::Suggest(format!("ensure: {t}")),
            None => Reflection::Satisfied,
        })
    }
}

impl TextEncoder for OracleSuite {
    fn encode_text(&self, text: &Caption) -> Result<Vec<f32>> {
        self.embed("text", text.as_str(), &parse_caption(text.as_str()))
    }
}

impl ImageEncoder for OracleSuite {
    fn encode_image(&self, image: &ImageHandle) -> Result<Vec<f32>> {
        self.embed("image", &image.locator, &self.resolve(&image.locator)?)
    }
}

/// Backends with the oracle in every role.
pub fn oracle_suite(corpus: Arc<SynthCorpus>, failure: FailureModeConfig, seed: u64) -> Result<Backends> {
    let o = Arc::new(OracleSuite::new(corpus, failure, seed)?);
    let mut b = Backends::new();
    b.captioner = Some(o.clone());
    b.editor_text = Some(o.clone());
    b.editor_image = Some(o.clone());
    b.verifier = Some(o.clone());
    b.refiner = Some(o.clone());
    b.encoder_text = Some(o.clone());
    b.encoder_image = Some(o);
    Ok(b)
}
