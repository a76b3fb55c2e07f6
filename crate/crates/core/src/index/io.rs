//! Embedding files: JSON Lines (`{"id": ..., "vec": [...]}`) and a compact
//! little-endian binary form. Readers sniff the magic bytes and accept both.
//!
//! Binary layout:
//!
//! ```text
//! b"WISE" | version: u32 | dim: u32 | count: u64 | count x (id_len: u32 | id bytes | dim x f32)
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde_json::Value;

use super::EmbeddingRecord;
use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"WISE";
pub const BINARY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingFormat {
    JsonLines,
    Binary,
}

/// Reads an embedding file in either form. Returns the records and their
/// common dimension. Dimension disagreements are reported with the line (or
/// record number, for binary files) where they occur.
pub fn read_embeddings(path: &Path) -> Result<(Vec<EmbeddingRecord>, usize)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings_from(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_embeddings_from<R: BufRead>(mut reader: R) -> Result<(Vec<EmbeddingRecord>, usize)> {
    let head = reader.fill_buf().map_err(|e| Error::io("<embeddings>", e))?;
    if head.starts_with(BINARY_MAGIC) {
        read_binary(reader)
    } else {
        read_jsonl(reader)
    }
}

fn read_jsonl<R: BufRead>(reader: R) -> Result<(Vec<EmbeddingRecord>, usize)> {
    let mut records = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io("<embeddings>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(&line).map_err(|e| Error::schema(lineno, "<line>", e.to_string()))?;
        let id = value
            .get("id")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::schema(lineno, "id", "missing or not a string"))?;
        let vec = value
            .get("vec")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::schema(lineno, "vec", "missing or not an array"))?;
        let vector = vec
            .iter()
            .map(|x| x.as_f64().map(|f| f as f32))
            .collect::<Option<Vec<f32>>>()
            .ok_or_else(|| Error::schema(lineno, "vec", "non-numeric component"))?;
        match dim {
            None => dim = Some(vector.len()),
            Some(d) if d != vector.len() => {
                return Err(Error::schema(
                    lineno,
                    "vec",
                    format!("dimension mismatch for `{id}`: expected {d}, got {}", vector.len()),
                ))
            }
            Some(_) => {}
        }
        records.push(EmbeddingRecord::new(id, vector));
    }
    let dim = dim.ok_or_else(|| Error::schema(0, "<file>", "no records"))?;
    if dim == 0 {
        return Err(Error::schema(1, "vec", "empty vector"));
    }
    Ok((records, dim))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str, record: usize) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::schema(record, what, format!("truncated binary file: {e}")))
}

fn read_binary<R: Read>(mut r: R) -> Result<(Vec<EmbeddingRecord>, usize)> {
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    read_exact(&mut r, &mut b4, "magic", 0)?;
    read_exact(&mut r, &mut b4, "version", 0)?;
    let version = u32::from_le_bytes(b4);
    if version != BINARY_VERSION {
        return Err(Error::schema(0, "version", format!("unsupported version {version}")));
    }
    read_exact(&mut r, &mut b4, "dim", 0)?;
    let dim = u32::from_le_bytes(b4) as usize;
    if dim == 0 {
        return Err(Error::schema(0, "dim", "must be positive"));
    }
    read_exact(&mut r, &mut b8, "count", 0)?;
    let count = u64::from_le_bytes(b8) as usize;
    let mut records = Vec::with_capacity(count.min(1 << 20));
    let mut raw = vec![0u8; dim * 4];
    for n in 1..=count {
        read_exact(&mut r, &mut b4, "id_len", n)?;
        let mut id = vec![0u8; u32::from_le_bytes(b4) as usize];
        read_exact(&mut r, &mut id, "id", n)?;
        let id = String::from_utf8(id).map_err(|_| Error::schema(n, "id", "not valid UTF-8"))?;
        read_exact(&mut r, &mut raw, "vec", n)?;
        let vector = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        records.push(EmbeddingRecord::new(id, vector));
    }
    Ok((records, dim))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn write_jsonl(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    let mut w = create(path)?;
    for r in records {
        let line = serde_json::json!({ "id": r.item_id, "vec": r.vector });
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_binary(path: &Path, records: &[EmbeddingRecord], dim: usize) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + records.len() * (8 + dim * 4));
    encode_binary(&mut buf, records, dim)?;
    let mut w = create(path)?;
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn encode_binary(buf: &mut Vec<u8>, records: &[EmbeddingRecord], dim: usize) -> Result<()> {
    buf.extend_from_slice(BINARY_MAGIC);
    buf.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        if r.vector.len() != dim {
            return Err(Error::DimMismatch {
                item_id: r.item_id.clone(),
                expected: dim,
                actual: r.vector.len(),
            });
        }
        buf.extend_from_slice(&(r.item_id.len() as u32).to_le_bytes());
        buf.extend_from_slice(r.item_id.as_bytes());
        for x in &r.vector {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(())
}
