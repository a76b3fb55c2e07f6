//! Prompt templates with named placeholders.
//!
//! Recognised placeholders are `{reference_caption}`, `{modification}`,
//! `{candidate}` and `{pseudo_target_caption}`. Any other brace text (the
//! JSON examples in the refiner prompts, for instance) is left untouched.

use std::path::Path;

use crate::error::{Error, Result};
use crate::types::Pathway;

pub const PLACEHOLDERS: [&str; 4] = ["reference_caption", "modification", "candidate", "pseudo_target_caption"];

pub const CAPTIONER: &str = include_str!("../../prompts/captioner.txt");
pub const EDIT_CAPTION: &str = include_str!("../../prompts/edit_caption.txt");
pub const EDIT_IMAGE: &str = include_str!("../../prompts/edit_image.txt");
pub const VERIFIER: &str = include_str!("../../prompts/verifier.txt");
pub const REFINER_T2I: &str = include_str!("../../prompts/refiner_t2i.txt");
pub const REFINER_I2I: &str = include_str!("../../prompts/refiner_i2i.txt");

/// Separator between the modification text and appended refinement suggestions.
pub const SUGGESTION_SEPARATOR: &str = " ; ";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }

    pub fn load(path: &Path) -> Result<Self> {
        std::fs::read_to_string(path)
            .map(Self::new)
            .map_err(|e| Error::io(path, e))
    }

    pub fn refiner_default(pathway: Pathway) -> Self {
        match pathway {
            Pathway::T2I => Self::new(REFINER_T2I),
            Pathway::I2I => Self::new(REFINER_I2I),
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Substitutes the given values; placeholders without a value stay as written.
    pub fn render(&self, values: &[(&str, &str)]) -> String {
        let mut out = self.text.clone();
        for (name, value) in values {
            debug_assert!(PLACEHOLDERS.contains(name), "unknown placeholder {name}");
            out = out.replace(&format!("{{{name}}}"), value);
        }
        out.trim_end().to_string()
    }
}

/// The instruction the editor sees: the modification text followed by every
/// suggestion collected so far.
pub fn augmented_instruction(t_mod: &str, suggestions: Option<&str>) -> String {
    match suggestions.map(str::trim).filter(|s| !s.is_empty()) {
        Some(s) if t_mod.trim().is_empty() => s.to_string(),
        Some(s) => format!("{}{SUGGESTION_SEPARATOR}{s}", t_mod.trim()),
        None => t_mod.trim().to_string(),
    }
}
