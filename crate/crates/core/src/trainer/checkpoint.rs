//! Binary checkpoint: `RLCK` magic, format version, then little-endian
//! `buckets`, `dim`, `hash_seed` (u64) and `alpha`, `beta`, table (f64 bits).

use std::fs;
use std::path::Path;

use crate::data::write_atomic;
use crate::embed::EncoderParams;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAGIC: &[u8; 4] = b"RLCK";
const VERSION: u32 = 1;
const HEADER: usize = 4 + 4 + 8 * 5;

pub fn encode_checkpoint(params: &EncoderParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 8 * params.table.as_slice().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.buckets() as u64).to_le_bytes());
    out.extend_from_slice(&(params.dim() as u64).to_le_bytes());
    out.extend_from_slice(&params.hash_seed.to_le_bytes());
    out.extend_from_slice(&params.alpha.to_bits().to_le_bytes());
    out.extend_from_slice(&params.beta.to_bits().to_le_bytes());
    for x in params.table.as_slice() {
        out.extend_from_slice(&x.to_bits().to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<EncoderParams> {
    let bad = |m: &str| Error::Checkpoint(m.to_owned());
    if bytes.len() < HEADER || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let buckets = u64_at(8) as usize;
    let dim = u64_at(16) as usize;
    let hash_seed = u64_at(24);
    let alpha = f64::from_bits(u64_at(32));
    let beta = f64::from_bits(u64_at(40));
    let n = buckets
        .checked_mul(dim)
        .filter(|n| bytes.len() - HEADER == n * 8)
        .ok_or_else(|| bad("table size does not match header"))?;
    if n == 0 {
        return Err(bad("empty table"));
    }
    let data = (0..n).map(|i| f64::from_bits(u64_at(HEADER + 8 * i))).collect();
    Ok(EncoderParams {
        table: Matrix::from_vec(buckets, dim, data),
        alpha,
        beta,
        hash_seed,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &EncoderParams) -> Result<()> {
    write_atomic(path, &encode_checkpoint(params))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<EncoderParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
