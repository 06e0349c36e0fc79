//! On-disk dataset container: a small binary header plus little-endian f32
//! sample payload, with ground truth in a line-delimited JSON sidecar.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::synthgen::{Corpus, SidecarRecord, Waveform};
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"EVFD";
pub const FORMAT_VERSION: u32 = 1;
pub const FLAG_MULTIMODAL: u32 = 1;

/// Write `path` atomically: temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Serialize recordings to container bytes. All recordings must share
/// channel count, length, and sample rate.
pub fn container_bytes(recordings: &[Waveform], multimodal: bool) -> Result<Vec<u8>> {
    let first = recordings
        .first()
        .ok_or_else(|| Error::Invalid("cannot write an empty container".into()))?;
    let (c, t) = (first.channels, first.len);
    let mut out = Vec::with_capacity(28 + recordings.len() * (8 + 4 * c * t));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(c as u32).to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(first.sample_rate as f32).to_le_bytes());
    out.extend_from_slice(&(recordings.len() as u32).to_le_bytes());
    out.extend_from_slice(&if multimodal { FLAG_MULTIMODAL } else { 0 }.to_le_bytes());
    for w in recordings {
        if w.channels != c || w.len != t || w.sample_rate != first.sample_rate {
            return Err(Error::Invalid(
                "container recordings must share shape and sample rate".into(),
            ));
        }
        out.extend_from_slice(&w.subject_id.to_le_bytes());
        out.extend_from_slice(&w.modality_id.to_le_bytes());
        for &s in &w.data {
            out.extend_from_slice(&(s as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_container(path: &Path, recordings: &[Waveform], multimodal: bool) -> Result<()> {
    atomic_write(path, &container_bytes(recordings, multimodal)?)
}

fn read_u32(buf: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(buf[off..off + 4].try_into().unwrap())
}

/// Read a container; returns recordings and the multimodal flag. Labels are
/// not stored here — join against the sidecar with [`attach_labels`].
pub fn read_container(path: &Path) -> Result<(Vec<Waveform>, bool)> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    if buf.len() < 28 {
        return Err(Error::corrupt(path, "truncated header"));
    }
    if buf[0..4] != MAGIC {
        return Err(Error::corrupt(path, "bad magic"));
    }
    let version = read_u32(&buf, 4);
    if version != FORMAT_VERSION {
        return Err(Error::corrupt(path, format!("unsupported version {version}")));
    }
    let c = read_u32(&buf, 8) as usize;
    let t = read_u32(&buf, 12) as usize;
    let sample_rate = f32::from_le_bytes(buf[16..20].try_into().unwrap()) as f64;
    let count = read_u32(&buf, 20) as usize;
    let flags = read_u32(&buf, 24);
    let rec_bytes = 8 + 4 * c * t;
    if buf.len() != 28 + count * rec_bytes {
        return Err(Error::corrupt(
            path,
            format!(
                "payload is {} bytes, expected {}",
                buf.len() - 28,
                count * rec_bytes
            ),
        ));
    }
    let mut recordings = Vec::with_capacity(count);
    for i in 0..count {
        let base = 28 + i * rec_bytes;
        let subject_id = read_u32(&buf, base);
        let modality_id = read_u32(&buf, base + 4);
        let data = (0..c * t)
            .map(|k| {
                let off = base + 8 + 4 * k;
                f32::from_le_bytes(buf[off..off + 4].try_into().unwrap()) as f64
            })
            .collect();
        recordings.push(Waveform {
            channels: c,
            len: t,
            sample_rate,
            data,
            subject_id,
            modality_id,
            label: None,
        });
    }
    Ok((recordings, flags & FLAG_MULTIMODAL != 0))
}

pub fn write_sidecar(path: &Path, records: &[SidecarRecord]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(f);
        for r in records {
            serde_json::to_writer(&mut w, r)
                .map_err(|e| Error::Corrupt {
                    path: tmp.display().to_string(),
                    reason: e.to_string(),
                })?;
            writeln!(w).map_err(|e| Error::io(&tmp, e))?;
        }
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<Vec<SidecarRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SidecarRecord = serde_json::from_str(&line)
            .map_err(|e| Error::corrupt(path, format!("sidecar line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Copy dominant labels from sidecar records onto the recordings.
pub fn attach_labels(recordings: &mut [Waveform], sidecar: &[SidecarRecord]) -> Result<()> {
    for r in sidecar {
        let w = recordings
            .get_mut(r.recording)
            .ok_or_else(|| Error::Invalid(format!("sidecar names recording {}", r.recording)))?;
        if w.subject_id != r.subject_id || w.modality_id != r.modality_id {
            return Err(Error::Invalid(format!(
                "sidecar mismatch on recording {}",
                r.recording
            )));
        }
        w.label = Some(r.label);
    }
    Ok(())
}

/// Write both files of a corpus next to each other.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let data = dir.join("data.evfd");
    let side = dir.join("sidecar.jsonl");
    write_container(&data, &corpus.recordings, corpus.multimodal)?;
    write_sidecar(&side, &corpus.sidecar)?;
    Ok((data, side))
}

/// Read a corpus written by [`write_corpus`], with labels attached.
pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let (mut recordings, multimodal) = read_container(&dir.join("data.evfd"))?;
    let sidecar = read_sidecar(&dir.join("sidecar.jsonl"))?;
    attach_labels(&mut recordings, &sidecar)?;
    Ok(Corpus {
        recordings,
        sidecar,
        multimodal,
    })
}
