use std::path::Path;

use anyhow::Result;
use rayon::prelude::*;
use spice_core::audio::{encode_wav, SampleEncoding};
use spice_core::data::{ManifestRow, SynthConfig, SynthCorpus};
use spice_core::CANONICAL_RATE;

use crate::io::write_atomic;
use crate::manifest::write_manifest;

pub const MANIFEST_NAME: &str = "manifest.csv";
pub const WAV_DIR: &str = "wavs";

/// Writes `wavs/<utterance_id>.wav` (16-bit PCM, 16 kHz) for every utterance,
/// then `manifest.csv` listing them. Returns the manifest rows.
pub fn write_synth_corpus(out_dir: &Path, config: SynthConfig) -> Result<Vec<ManifestRow>> {
    let corpus = SynthCorpus::new(config)?;
    let jobs: Vec<(usize, usize)> = (0..corpus.speakers().len())
        .flat_map(|s| (0..corpus.utterances_per_speaker()).map(move |j| (s, j)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(s, j)| -> Result<ManifestRow> {
            let u = corpus.utterance(s, j);
            let rel = format!("{WAV_DIR}/{}.wav", u.utterance_id);
            let bytes = encode_wav(&[&u.samples], CANONICAL_RATE, SampleEncoding::Pcm16);
            write_atomic(&out_dir.join(&rel), &bytes)?;
            Ok(ManifestRow {
                utterance_id: u.utterance_id,
                audio_path: rel,
                speaker_id: u.speaker_id,
                label: u.label,
                etiology: Some(u.etiology.to_string()),
                split: None,
                extra: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_manifest(&out_dir.join(MANIFEST_NAME), &rows)?;
    Ok(rows)
}
