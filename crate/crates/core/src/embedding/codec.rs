//! Binary embedding files.
//!
//! `EMB1` (embedding set):
//!
//! ```text
//! "EMB1" | version u32 | dim u32 | count u64 | model_id (u32 len + UTF-8)
//! count × [ subject_id (u32 len + UTF-8) | sample_id (u32 len + UTF-8) | dim × f32 ]
//! ```
//!
//! `EMB2` (paired embeddings, adapter training data):
//!
//! ```text
//! "EMB2" | version u32 | dim_source u32 | dim_target u32 | count u64
//! source model_id | target model_id
//! count × [ subject_id | sample_id | dim_source × f32 | dim_target × f32 ]
//! ```
//!
//! Integers and floats are little-endian. Readers reject trailing bytes, so a
//! successfully decoded file re-encodes to the identical byte string.

use std::fs;
use std::path::Path;

use super::{EmbeddingPair, EmbeddingRecord, EmbeddingSet, PairedEmbeddings, SampleKey};
use crate::error::{Error, Result};
use crate::wire::{ByteReader, ByteWriter};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";
pub const EMBEDDING_VERSION: u32 = 1;
pub const PAIRS_MAGIC: &[u8; 4] = b"EMB2";
pub const PAIRS_VERSION: u32 = 1;

fn dim_u32(dim: usize) -> Result<u32> {
    u32::try_from(dim).map_err(|_| Error::validation(format!("dimension {dim} exceeds u32")))
}

fn write_key(w: &mut ByteWriter, key: &SampleKey) -> Result<()> {
    w.str(&key.subject_id, "subject_id")?;
    w.str(&key.sample_id, "sample_id")
}

fn read_key(r: &mut ByteReader<'_>) -> Result<SampleKey> {
    let subject_id = r.str("subject_id")?;
    let sample_id = r.str("sample_id")?;
    Ok(SampleKey { subject_id, sample_id })
}

fn read_dim(r: &mut ByteReader<'_>, what: &str) -> Result<usize> {
    match r.u32(what)? {
        0 => Err(Error::corruption(format!("{what} is zero"))),
        d => Ok(d as usize),
    }
}

/// Rejects record counts that cannot fit in the remaining bytes before any allocation.
fn checked_count(r: &ByteReader<'_>, count: u64, min_record: usize) -> Result<usize> {
    let fits = usize::try_from(count)
        .ok()
        .and_then(|c| c.checked_mul(min_record))
        .is_some_and(|bytes| bytes <= r.remaining());
    if !fits {
        return Err(Error::corruption(format!(
            "header declares {count} records but only {} bytes follow",
            r.remaining()
        )));
    }
    Ok(count as usize)
}

fn invalid_to_corruption(e: Error) -> Error {
    match e {
        // a duplicated key cannot come out of a valid writer
        Error::Validation(msg) if msg.contains("duplicate") => Error::Corruption(msg),
        other => other,
    }
}

pub fn encode_embeddings(set: &EmbeddingSet) -> Result<Vec<u8>> {
    let per_record = 8 + set.dim() * 4 + 16;
    let mut w = ByteWriter::with_capacity(32 + set.model_id().len() + set.len() * per_record);
    w.bytes(EMBEDDING_MAGIC);
    w.u32(EMBEDDING_VERSION);
    w.u32(dim_u32(set.dim())?);
    w.u64(set.len() as u64);
    w.str(set.model_id(), "model_id")?;
    for r in set.records() {
        write_key(&mut w, &r.key)?;
        w.f32s(&r.vector);
    }
    Ok(w.finish())
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingSet> {
    let mut r = ByteReader::new(bytes);
    r.magic(EMBEDDING_MAGIC)?;
    r.version(EMBEDDING_VERSION)?;
    let dim = read_dim(&mut r, "dim")?;
    let count = r.u64("record count")?;
    let model_id = r.str("model_id")?;
    let count = checked_count(&r, count, 8 + dim * 4)?;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let key = read_key(&mut r)?;
        let vector = r.f32s(dim, "embedding vector")?;
        records.push(EmbeddingRecord { key, vector });
    }
    r.finish()?;
    EmbeddingSet::new(model_id, dim, records).map_err(invalid_to_corruption)
}

pub fn write_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_embeddings(set)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    decode_embeddings(&fs::read(path)?)
}

pub fn encode_pairs(pairs: &PairedEmbeddings) -> Result<Vec<u8>> {
    let per_record = 8 + (pairs.dim_source() + pairs.dim_target()) * 4 + 16;
    let mut w = ByteWriter::with_capacity(64 + pairs.len() * per_record);
    w.bytes(PAIRS_MAGIC);
    w.u32(PAIRS_VERSION);
    w.u32(dim_u32(pairs.dim_source())?);
    w.u32(dim_u32(pairs.dim_target())?);
    w.u64(pairs.len() as u64);
    w.str(pairs.source_model_id(), "source model_id")?;
    w.str(pairs.target_model_id(), "target model_id")?;
    for p in pairs.pairs() {
        write_key(&mut w, &p.key)?;
        w.f32s(&p.source);
        w.f32s(&p.target);
    }
    Ok(w.finish())
}

pub fn decode_pairs(bytes: &[u8]) -> Result<PairedEmbeddings> {
    let mut r = ByteReader::new(bytes);
    r.magic(PAIRS_MAGIC)?;
    r.version(PAIRS_VERSION)?;
    let dim_source = read_dim(&mut r, "dim_source")?;
    let dim_target = read_dim(&mut r, "dim_target")?;
    let count = r.u64("pair count")?;
    let source_model_id = r.str("source model_id")?;
    let target_model_id = r.str("target model_id")?;
    let count = checked_count(&r, count, 8 + (dim_source + dim_target) * 4)?;
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let key = read_key(&mut r)?;
        let source = r.f32s(dim_source, "source vector")?;
        let target = r.f32s(dim_target, "target vector")?;
        pairs.push(EmbeddingPair { key, source, target });
    }
    r.finish()?;
    PairedEmbeddings::new(source_model_id, target_model_id, dim_source, dim_target, pairs)
        .map_err(invalid_to_corruption)
}

pub fn write_pairs(pairs: &PairedEmbeddings, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pairs(pairs)?)?;
    Ok(())
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<PairedEmbeddings> {
    decode_pairs(&fs::read(path)?)
}
