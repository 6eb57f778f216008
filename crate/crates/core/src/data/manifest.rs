use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Emotion, NUM_CLASSES};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("line {line}: audio file {path} does not exist")]
    MissingFile { line: usize, path: String },
    #[error("line {line}: label {label:?} is not one of anger, excited, happy, neutral, sad")]
    BadLabel { line: usize, label: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    #[default]
    Original,
    Augmented,
}

/// One line of a JSON Lines manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    /// Relative paths are resolved against the manifest's directory on load.
    pub wav_path: PathBuf,
    pub transcript: String,
    pub label: Emotion,
    #[serde(default)]
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    wav_path: PathBuf,
    #[serde(default)]
    transcript: String,
    label: String,
    #[serde(default)]
    origin: Origin,
    #[serde(default)]
    source_id: Option<String>,
}

/// Reads and validates a manifest: labels in the five-class set, unique ids,
/// existing audio files.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| DataError::Parse {
            line: line_no,
            reason: e.to_string(),
        })?;
        let label: Emotion = raw.label.parse().map_err(|_| DataError::BadLabel {
            line: line_no,
            label: raw.label.clone(),
        })?;
        if !seen.insert(raw.id.clone()) {
            return Err(DataError::DuplicateId {
                line: line_no,
                id: raw.id,
            });
        }
        let wav_path = if raw.wav_path.is_absolute() {
            raw.wav_path
        } else {
            base.join(raw.wav_path)
        };
        if !wav_path.exists() {
            return Err(DataError::MissingFile {
                line: line_no,
                path: wav_path.display().to_string(),
            });
        }
        out.push(ManifestRecord {
            id: raw.id,
            wav_path,
            transcript: raw.transcript,
            label,
            origin: raw.origin,
            source_id: raw.source_id,
        });
    }
    if out.is_empty() {
        log::warn!("manifest {} contains no records", path.display());
    }
    Ok(out)
}

/// Writes records one JSON object per line. Paths are written as given.
pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<(), DataError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut file, r).map_err(std::io::Error::from)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

/// Record count per class, in one-hot order.
pub fn class_histogram(records: &[ManifestRecord]) -> [usize; NUM_CLASSES] {
    let mut h = [0; NUM_CLASSES];
    for r in records {
        h[r.label.index()] += 1;
    }
    h
}
