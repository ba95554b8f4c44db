//! Filesystem access for clips, embeddings and checkpoints. Every write goes
//! to a temporary sibling first and is renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use spice_core::audio::{decode_wav, resample, AudioClip, LoadReport};
use spice_core::checkpoint::Checkpoint;
use spice_core::embed::{decode_embeddings, encode_embeddings, EmbeddingRecord};
use spice_core::CANONICAL_RATE;

/// Writes `bytes` to `path` atomically; parent directories are created.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating directory {}", dir.display()))?;
    let name = path
        .file_name()
        .with_context(|| format!("{} has no file name", path.display()))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.with_context(|| format!("writing {}", path.display()))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

/// Decodes a WAV file at its own rate; the clip id is the file stem.
pub fn load_wav(path: &Path) -> Result<(AudioClip, LoadReport)> {
    let bytes = read_bytes(path)?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    decode_wav(&bytes, stem).with_context(|| format!("decoding {}", path.display()))
}

/// Loads a WAV file and resamples it to the canonical rate.
pub fn load_canonical(path: &Path) -> Result<AudioClip> {
    let (clip, report) = load_wav(path)?;
    if report.out_of_range > 0 {
        log::warn!("{}: {} samples outside [-1, 1]", path.display(), report.out_of_range);
    }
    resample(&clip, CANONICAL_RATE).with_context(|| format!("resampling {}", path.display()))
}

/// Returns the number of bytes written.
pub fn write_embeddings(path: &Path, records: &[EmbeddingRecord], dim: usize) -> Result<usize> {
    let bytes = encode_embeddings(records, dim).with_context(|| format!("encoding {}", path.display()))?;
    write_atomic(path, &bytes)?;
    Ok(bytes.len())
}

/// Returns `(dim, records)`.
pub fn read_embeddings(path: &Path) -> Result<(usize, Vec<EmbeddingRecord>)> {
    let bytes = read_bytes(path)?;
    decode_embeddings(&bytes).with_context(|| format!("decoding embeddings {}", path.display()))
}

pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    write_atomic(path, &checkpoint.encode())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = read_bytes(path)?;
    Checkpoint::decode(&bytes).with_context(|| format!("decoding checkpoint {}", path.display()))
}
