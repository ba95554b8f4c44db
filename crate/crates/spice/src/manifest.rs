//! Manifest CSV reading and writing.
//!
//! Header: `utterance_id,audio_path,speaker_id,label[,etiology][,split]`,
//! plus any extra columns, which are carried through untouched. Relative
//! audio paths are resolved against the manifest's directory.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use spice_core::data::{parse_row, validate_rows, ManifestError, ManifestRow, SpeakerRecord, REQUIRED_COLUMNS};

use crate::io::write_atomic;

#[derive(Debug, Clone)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    pub speakers: Vec<SpeakerRecord>,
    /// Directory that relative audio paths are resolved against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn audio_path(&self, row: &ManifestRow) -> PathBuf {
        let p = Path::new(&row.audio_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// Parses and validates a manifest. Row numbers in errors are file line
/// numbers (the header is line 1).
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let context = || format!("manifest {}", path.display());
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(context)?;
    let headers: Vec<String> = reader.headers().with_context(context)?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(context)?;
        let cells: Vec<(&str, &str)> = headers.iter().map(String::as_str).zip(record.iter()).collect();
        rows.push(parse_row(i + 2, &cells).with_context(context)?);
    }
    if rows.is_empty() {
        return Err(ManifestError::NoRows).with_context(context);
    }
    if let Some(missing) = REQUIRED_COLUMNS.iter().find(|c| !headers.iter().any(|h| h == *c)) {
        return Err(ManifestError::MissingColumn(missing)).with_context(context);
    }
    let speakers = validate_rows(&rows).with_context(context)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Manifest { rows, speakers, base_dir })
}

/// Standard columns first (etiology and split only when some row has
/// them), then extra columns in first-seen order.
pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let has_etiology = rows.iter().any(|r| r.etiology.is_some());
    let has_split = rows.iter().any(|r| r.split.is_some());
    let mut columns: Vec<String> = REQUIRED_COLUMNS.iter().map(|c| c.to_string()).collect();
    if has_etiology {
        columns.push("etiology".into());
    }
    if has_split {
        columns.push("split".into());
    }
    for r in rows {
        for (k, _) in &r.extra {
            if !columns.contains(k) {
                columns.push(k.clone());
            }
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&columns)?;
    for r in rows {
        w.write_record(columns.iter().map(|c| r.field(c).unwrap_or_default()))?;
    }
    let bytes = w.into_inner().context("flushing manifest")?;
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn round_trip_keeps_extras_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(
            &path,
            "utterance_id,audio_path,speaker_id,label,percent,etiology\n\
             u1,wavs/u1.wav,s1,MODERATE,60,als\n\
             u2,/abs/u2.wav,s2,TYPICAL,100,\n",
        )
        .unwrap();
        let m = read_manifest(&path).unwrap();
        assert_eq!(m.rows[0].label.code(), 2);
        assert_eq!(m.audio_path(&m.rows[0]), dir.path().join("wavs/u1.wav"));
        assert_eq!(m.audio_path(&m.rows[1]), PathBuf::from("/abs/u2.wav"));
        let out = dir.path().join("out.csv");
        write_manifest(&out, &m.rows).unwrap();
        let text = fs::read_to_string(&out).unwrap();
        assert!(text.starts_with("utterance_id,audio_path,speaker_id,label,etiology,percent\n"));
        let again = read_manifest(&out).unwrap();
        assert_eq!(again.rows, m.rows);
    }

    #[test]
    fn errors_name_the_problem() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "").unwrap();
        assert!(format!("{:#}", read_manifest(&path).unwrap_err()).contains("no rows"));
        fs::write(
            &path,
            "utterance_id,audio_path,speaker_id,label\nu1,a.wav,spk9,MILD\nu2,b.wav,spk9,SEVERE\n",
        )
        .unwrap();
        assert!(format!("{:#}", read_manifest(&path).unwrap_err()).contains("spk9"));
        fs::write(&path, "utterance_id,audio_path,label\nu1,a.wav,MILD\n").unwrap();
        assert!(format!("{:#}", read_manifest(&path).unwrap_err()).contains("speaker_id"));
    }
}
