//! Manifest rows, per-speaker label validation, speaker-level splits and the
//! synthetic corpus generator.

mod synth;

pub use synth::{SynthConfig, SynthCorpus, SynthSpeaker, SynthUtterance, JITTER, SNR_DB, TILT_DB_PER_OCTAVE};

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use libm::floor;
use rand::seq::SliceRandom;

use crate::labels::IntelligibilityClass;
use crate::rng::seeded;
use crate::{Error, Result};

/// Columns every manifest must have, in canonical order.
pub const REQUIRED_COLUMNS: [&str; 4] = ["utterance_id", "audio_path", "speaker_id", "label"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ManifestError {
    #[error("missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("no rows")]
    NoRows,
    #[error("row {row}: empty `{column}`")]
    EmptyField { row: usize, column: &'static str },
    #[error("row {row}: unknown label {value:?}")]
    UnknownLabel { row: usize, value: String },
    #[error("row {row}: unknown split {value:?} (expected train, val or test)")]
    UnknownSplit { row: usize, value: String },
    #[error("row {row}: duplicate utterance_id {id:?}")]
    DuplicateUtterance { row: usize, id: String },
    #[error("speaker {speaker:?} has rows labelled {first} and {second}")]
    LabelMismatch {
        speaker: String,
        first: IntelligibilityClass,
        second: IntelligibilityClass,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = ();

    fn from_str(s: &str) -> core::result::Result<Self, ()> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ManifestRow {
    pub utterance_id: String,
    pub audio_path: String,
    pub speaker_id: String,
    pub label: IntelligibilityClass,
    pub etiology: Option<String>,
    pub split: Option<Split>,
    /// Any further columns, in file order.
    pub extra: Vec<(String, String)>,
}

impl ManifestRow {
    /// Value of a column by name, covering the standard columns too; an absent
    /// optional column reads as `None`.
    pub fn field(&self, column: &str) -> Option<String> {
        match column {
            "utterance_id" => Some(self.utterance_id.clone()),
            "audio_path" => Some(self.audio_path.clone()),
            "speaker_id" => Some(self.speaker_id.clone()),
            "label" => Some(String::from(self.label.name())),
            "etiology" => self.etiology.clone(),
            "split" => self.split.map(|s| String::from(s.name())),
            _ => self.extra.iter().find(|(k, _)| k == column).map(|(_, v)| v.clone()),
        }
    }
}

/// Builds a row from raw string cells; `row` is the 1-based data row number
/// used in error messages.
pub fn parse_row(row: usize, cells: &[(&str, &str)]) -> core::result::Result<ManifestRow, ManifestError> {
    let get = |name: &str| cells.iter().find(|(k, _)| *k == name).map(|(_, v)| v.trim());
    let required = |name: &'static str| -> core::result::Result<String, ManifestError> {
        match get(name) {
            None => Err(ManifestError::MissingColumn(name)),
            Some("") => Err(ManifestError::EmptyField { row, column: name }),
            Some(v) => Ok(String::from(v)),
        }
    };
    let utterance_id = required("utterance_id")?;
    let audio_path = required("audio_path")?;
    let speaker_id = required("speaker_id")?;
    let label_text = required("label")?;
    let label = label_text
        .parse::<IntelligibilityClass>()
        .map_err(|_| ManifestError::UnknownLabel { row, value: label_text })?;
    let etiology = get("etiology").filter(|v| !v.is_empty()).map(String::from);
    let split = match get("split").filter(|v| !v.is_empty()) {
        None => None,
        Some(v) => Some(v.parse::<Split>().map_err(|_| ManifestError::UnknownSplit {
            row,
            value: String::from(v),
        })?),
    };
    let standard = ["utterance_id", "audio_path", "speaker_id", "label", "etiology", "split"];
    let extra = cells
        .iter()
        .filter(|(k, _)| !standard.contains(k))
        .map(|(k, v)| (String::from(*k), String::from(*v)))
        .collect();
    Ok(ManifestRow {
        utterance_id,
        audio_path,
        speaker_id,
        label,
        etiology,
        split,
        extra,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct SpeakerRecord {
    pub speaker_id: String,
    pub label: IntelligibilityClass,
    pub n_utterances: usize,
    pub etiology: Option<String>,
}

/// Checks the manifest invariants (rows present, unique utterance ids, one
/// label per speaker) and summarizes the speakers in id order.
pub fn validate_rows(rows: &[ManifestRow]) -> core::result::Result<Vec<SpeakerRecord>, ManifestError> {
    if rows.is_empty() {
        return Err(ManifestError::NoRows);
    }
    let mut seen: BTreeMap<&str, ()> = BTreeMap::new();
    let mut speakers: BTreeMap<&str, SpeakerRecord> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        if seen.insert(&r.utterance_id, ()).is_some() {
            return Err(ManifestError::DuplicateUtterance {
                row: i + 1,
                id: r.utterance_id.clone(),
            });
        }
        let rec = speakers.entry(&r.speaker_id).or_insert_with(|| SpeakerRecord {
            speaker_id: r.speaker_id.clone(),
            label: r.label,
            n_utterances: 0,
            etiology: r.etiology.clone(),
        });
        if rec.label != r.label {
            return Err(ManifestError::LabelMismatch {
                speaker: r.speaker_id.clone(),
                first: rec.label,
                second: r.label,
            });
        }
        rec.n_utterances += 1;
    }
    Ok(speakers.into_values().collect())
}

/// Default train/val/test ratios.
pub const DEFAULT_RATIOS: [f64; 3] = [0.70, 0.15, 0.15];

/// Seats per split for `n` items by largest remainder: floors of the quotas
/// first, leftover seats to the largest fractional parts, ties to the
/// earlier-listed split. When there are enough items, every split with a
/// positive ratio then receives at least one, taken from the split holding
/// the most seats.
pub fn allocate(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let quotas = ratios.map(|r| r * n as f64);
    let mut seats = quotas.map(|q| floor(q + 1e-9) as usize);
    let mut left = n.saturating_sub(seats.iter().sum());
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - seats[a] as f64;
        let fb = quotas[b] - seats[b] as f64;
        fb.partial_cmp(&fa).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        seats[i] += 1;
        left -= 1;
    }
    let nonzero = ratios.iter().filter(|&&r| r > 0.0).count();
    if n >= nonzero {
        for i in 0..3 {
            if ratios[i] > 0.0 && seats[i] == 0 {
                let mut donor = 0;
                for j in 1..3 {
                    if seats[j] > seats[donor] {
                        donor = j;
                    }
                }
                seats[donor] -= 1;
                seats[i] += 1;
            }
        }
    }
    seats
}

fn check_ratios(ratios: &[f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::invalid("ratios", "must be finite and non-negative"));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("ratios", alloc::format!("sum to {sum}, not 1")));
    }
    Ok(())
}

/// Assigns a split to every row, per speaker. Speakers are sorted by id,
/// shuffled with a seeded stream and cut by [`allocate`]; with `stratify`
/// the allocation runs separately inside each label group (in class order).
/// The result does not depend on row order.
pub fn speaker_split(rows: &mut [ManifestRow], ratios: &[f64; 3], seed: u64, stratify: bool) -> Result<[usize; 3]> {
    check_ratios(ratios)?;
    let speakers = validate_rows(rows)?;
    let nonzero = ratios.iter().filter(|&&r| r > 0.0).count();
    if speakers.len() < nonzero {
        return Err(Error::invalid(
            "speakers",
            alloc::format!("{} speakers cannot fill {nonzero} non-empty splits", speakers.len()),
        ));
    }
    let groups: Vec<Vec<&str>> = if stratify {
        IntelligibilityClass::ALL
            .iter()
            .map(|&c| {
                speakers
                    .iter()
                    .filter(|s| s.label == c)
                    .map(|s| s.speaker_id.as_str())
                    .collect()
            })
            .collect()
    } else {
        vec![speakers.iter().map(|s| s.speaker_id.as_str()).collect()]
    };
    let mut rng = seeded(seed);
    let mut assignment: BTreeMap<String, Split> = BTreeMap::new();
    let mut counts = [0usize; 3];
    for mut group in groups {
        if group.is_empty() {
            continue;
        }
        group.shuffle(&mut rng);
        let seats = allocate(group.len(), ratios);
        let mut it = group.into_iter();
        for split in Split::ALL {
            for id in it.by_ref().take(seats[split.index()]) {
                assignment.insert(String::from(id), split);
                counts[split.index()] += 1;
            }
        }
    }
    for r in rows.iter_mut() {
        r.split = assignment.get(&r.speaker_id).copied();
    }
    Ok(counts)
}
