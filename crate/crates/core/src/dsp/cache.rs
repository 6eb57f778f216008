use std::fs;
use std::path::{Path, PathBuf};

use super::{DspError, MfccMatrix, MfccParams};

const SIDECAR: &str = "params.json";

/// Directory of `<utterance-id>.mfcc` records (little-endian f32, row-major)
/// plus a `params.json` sidecar naming the extraction settings.
pub struct FeatureCache {
    dir: PathBuf,
    params: MfccParams,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Sidecar {
    fingerprint: String,
    params: MfccParams,
}

impl FeatureCache {
    /// Opens or creates a cache; fails if it was filled with other settings.
    pub fn open(dir: impl AsRef<Path>, params: &MfccParams) -> Result<Self, DspError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let sidecar = dir.join(SIDECAR);
        if sidecar.exists() {
            let existing: Sidecar = serde_json::from_slice(&fs::read(&sidecar)?)?;
            if existing.params != *params {
                return Err(DspError::CacheParamsMismatch);
            }
        } else {
            let body = Sidecar {
                fingerprint: params.fingerprint(),
                params: params.clone(),
            };
            fs::write(&sidecar, serde_json::to_vec_pretty(&body)?)?;
        }
        Ok(Self {
            dir,
            params: params.clone(),
        })
    }

    fn path(&self, id: &str) -> PathBuf {
        let safe: String = id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
            .collect();
        self.dir.join(format!("{safe}.mfcc"))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.path(id).exists()
    }

    pub fn put(&self, id: &str, m: &MfccMatrix) -> Result<(), DspError> {
        let bytes: Vec<u8> = m.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = self.path(id);
        let tmp = path.with_extension("mfcc.tmp");
        fs::write(&tmp, bytes)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<Option<MfccMatrix>, DspError> {
        let path = self.path(id);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let (frames, coeffs) = (self.params.frames, self.params.n_mfcc);
        if bytes.len() != frames * coeffs * 4 {
            return Err(DspError::CorruptRecord {
                path: path.display().to_string(),
                reason: format!("{} bytes, expected {}", bytes.len(), frames * coeffs * 4),
            });
        }
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        // Log-floored frames are never all zero, so trailing zero rows are padding.
        let valid_frames = (0..frames)
            .rev()
            .find(|&t| values[t * coeffs..(t + 1) * coeffs].iter().any(|&v| v != 0.0))
            .map_or(0, |t| t + 1);
        Ok(Some(MfccMatrix {
            values,
            frames,
            coeffs,
            valid_frames,
        }))
    }
}
