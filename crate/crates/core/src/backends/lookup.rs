use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{Caption, ImageEncoder, ImageHandle, TextEncoder};
use crate::error::{Error, Result};

/// Precomputed embeddings resolved by key. Images are looked up by locator;
/// text by the exact string first, then by its lowercase hex SHA-256.
#[derive(Debug, Clone, Default)]
pub struct FileLookupEncoder {
    vectors: HashMap<String, Vec<f32>>,
    dim: Option<usize>,
}

pub fn text_key(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl FileLookupEncoder {
    /// Reads a manifest of `{"key": "...", "vec": [...]}` lines.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut enc = FileLookupEncoder::default();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let v: Value = serde_json::from_str(&line).map_err(|e| Error::schema(i + 1, "<line>", e.to_string()))?;
            let key = v
                .get("key")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::schema(i + 1, "key", "missing or not a string"))?;
            let vec = v
                .get("vec")
                .and_then(Value::as_array)
                .and_then(|a| a.iter().map(|x| x.as_f64().map(|f| f as f32)).collect::<Option<Vec<_>>>())
                .ok_or_else(|| Error::schema(i + 1, "vec", "missing or non-numeric"))?;
            enc.insert(key, vec).map_err(|e| match e {
                Error::DimMismatch { expected, actual, .. } => Error::schema(
                    i + 1,
                    "vec",
                    format!("dimension mismatch: expected {expected}, got {actual}"),
                ),
                other => other,
            })?;
        }
        Ok(enc)
    }

    pub fn insert(&mut self, key: impl Into<String>, vec: Vec<f32>) -> Result<()> {
        let key = key.into();
        match self.dim {
            Some(d) if d != vec.len() => {
                return Err(Error::DimMismatch {
                    item_id: key,
                    expected: d,
                    actual: vec.len(),
                })
            }
            None => self.dim = Some(vec.len()),
            _ => {}
        }
        self.vectors.insert(key, vec);
        Ok(())
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    fn get(&self, key: &str) -> Option<&Vec<f32>> {
        self.vectors.get(key)
    }
}

impl TextEncoder for FileLookupEncoder {
    fn encode_text(&self, text: &Caption) -> Result<Vec<f32>> {
        self.get(text.as_str())
            .or_else(|| self.get(&text_key(text.as_str())))
            .cloned()
            .ok_or_else(|| Error::LookupMiss(text.as_str().to_string()))
    }
}

impl ImageEncoder for FileLookupEncoder {
    fn encode_image(&self, image: &ImageHandle) -> Result<Vec<f32>> {
        self.get(&image.locator)
            .cloned()
            .ok_or_else(|| Error::LookupMiss(image.locator.clone()))
    }
}
