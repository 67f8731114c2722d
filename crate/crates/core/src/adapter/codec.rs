//! `ADP1` adapter files:
//!
//! ```text
//! "ADP1" | version u32 | dim_source u32 | dim_target u32 | bias flag u8
//! source model_id (u32 len + UTF-8) | target model_id (u32 len + UTF-8)
//! weights f32[dim_target × dim_source], row-major | bias f32[dim_target] if flagged
//! meta: u32 len + UTF-8 JSON
//! ```

use std::fs;
use std::path::Path;

use super::{AdapterModel, TrainReport};
use crate::error::{Error, Result};
use crate::wire::{ByteReader, ByteWriter};

pub const ADAPTER_MAGIC: &[u8; 4] = b"ADP1";
pub const ADAPTER_VERSION: u32 = 1;

pub fn encode_adapter(adapter: &AdapterModel) -> Result<Vec<u8>> {
    let meta = serde_json::to_string(adapter.meta()).map_err(|e| Error::validation(format!("meta: {e}")))?;
    let mut w = ByteWriter::with_capacity(64 + adapter.parameter_count() * 4 + meta.len());
    w.bytes(ADAPTER_MAGIC);
    w.u32(ADAPTER_VERSION);
    w.len_u32(adapter.dim_source(), "dim_source")?;
    w.len_u32(adapter.dim_target(), "dim_target")?;
    w.u8(u8::from(adapter.bias().is_some()));
    w.str(adapter.source_model_id(), "source model_id")?;
    w.str(adapter.target_model_id(), "target model_id")?;
    w.f32s(adapter.weights());
    if let Some(b) = adapter.bias() {
        w.f32s(b);
    }
    w.str(&meta, "meta")?;
    Ok(w.finish())
}

pub fn decode_adapter(bytes: &[u8]) -> Result<AdapterModel> {
    let mut r = ByteReader::new(bytes);
    r.magic(ADAPTER_MAGIC)?;
    r.version(ADAPTER_VERSION)?;
    let ds = r.u32("dim_source")? as usize;
    let dt = r.u32("dim_target")? as usize;
    if ds == 0 || dt == 0 {
        return Err(Error::corruption("adapter dimension is zero"));
    }
    let has_bias = match r.u8("bias flag")? {
        0 => false,
        1 => true,
        f => return Err(Error::corruption(format!("bias flag must be 0 or 1, found {f}"))),
    };
    let source = r.str("source model_id")?;
    let target = r.str("target model_id")?;
    let n_weights = ds
        .checked_mul(dt)
        .ok_or_else(|| Error::corruption("adapter dimensions overflow"))?;
    let weights = r.f32s(n_weights, "weights")?;
    let bias = if has_bias { Some(r.f32s(dt, "bias")?) } else { None };
    let meta_text = r.str("meta")?;
    r.finish()?;
    let meta: TrainReport =
        serde_json::from_str(&meta_text).map_err(|e| Error::corruption(format!("adapter meta is not valid: {e}")))?;
    AdapterModel::new(source, target, ds, dt, weights, bias, meta)
}

pub fn save_adapter(adapter: &AdapterModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_adapter(adapter)?)?;
    Ok(())
}

pub fn load_adapter(path: impl AsRef<Path>) -> Result<AdapterModel> {
    decode_adapter(&fs::read(path)?)
}
