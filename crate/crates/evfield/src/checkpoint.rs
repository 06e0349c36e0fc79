//! Checkpoint files: an inspectable JSON header (config snapshot, step,
//! seed, tensor directory) followed by concatenated little-endian f64
//! tensor payloads and a trailing CRC32 of the payload.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::atomic_write;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume a run: model and optimizer tensors live in
/// one flat named map (optimizer moments under `opt.m.*` / `opt.v.*`).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub rng_seed: u64,
    /// Opaque config snapshot; the trainer round-trips its own type.
    pub config: serde_json::Value,
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

#[derive(Serialize, Deserialize)]
struct DirEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload, in f64 elements.
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    step: u64,
    rng_seed: u64,
    config: serde_json::Value,
    tensors: Vec<DirEntry>,
}

pub fn checkpoint_bytes(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut dir = Vec::with_capacity(ck.tensors.len());
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    for (name, (shape, data)) in &ck.tensors {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Invalid(format!("tensor {name} shape/data mismatch")));
        }
        dir.push(DirEntry {
            name: name.clone(),
            shape: shape.clone(),
            offset,
            len: data.len(),
        });
        for &v in data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        offset += data.len();
    }
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        step: ck.step,
        rng_seed: ck.rng_seed,
        config: ck.config.clone(),
        tensors: dir,
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::Invalid(format!("unserializable checkpoint header: {e}")))?;
    let crc = crc32fast::hash(&payload);
    let mut out = Vec::with_capacity(8 + header_bytes.len() + payload.len() + 4);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<()> {
    atomic_write(path, &checkpoint_bytes(ck)?)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    if buf.len() < 8 {
        return Err(Error::corrupt(path, "truncated checkpoint"));
    }
    let hlen = u32::from_le_bytes(buf[0..4].try_into().unwrap()) as usize;
    if buf.len() < 4 + hlen + 4 {
        return Err(Error::corrupt(path, "truncated header"));
    }
    let header: Header = serde_json::from_slice(&buf[4..4 + hlen])
        .map_err(|e| Error::corrupt(path, format!("bad header: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::corrupt(
            path,
            format!("unsupported version {}", header.format_version),
        ));
    }
    let payload = &buf[4 + hlen..buf.len() - 4];
    let stored_crc = u32::from_le_bytes(buf[buf.len() - 4..].try_into().unwrap());
    if crc32fast::hash(payload) != stored_crc {
        return Err(Error::corrupt(path, "payload checksum mismatch"));
    }
    let total = payload.len() / 8;
    if payload.len() % 8 != 0 {
        return Err(Error::corrupt(path, "payload not f64-aligned"));
    }
    let mut tensors = BTreeMap::new();
    for e in header.tensors {
        if e.shape.iter().product::<usize>() != e.len
            || e.offset.checked_add(e.len).map_or(true, |end| end > total)
        {
            return Err(Error::corrupt(path, format!("directory entry {} out of range", e.name)));
        }
        let data = (e.offset..e.offset + e.len)
            .map(|k| f64::from_le_bytes(payload[8 * k..8 * k + 8].try_into().unwrap()))
            .collect();
        tensors.insert(e.name, (e.shape, data));
    }
    Ok(Checkpoint {
        step: header.step,
        rng_seed: header.rng_seed,
        config: header.config,
        tensors,
    })
}
