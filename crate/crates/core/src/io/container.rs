//! Versioned model container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "BDE1"                      4 bytes magic
//! metadata length             u64
//! metadata                    canonical JSON (format version, network, config,
//!                             standardization, member metadata, S, d, schema)
//! samples                     S * d f64, row-major
//! checksum                    u64, XXH64 (seed 0) of every preceding byte
//! ```

use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use twox_hash::XxHash64;

use super::csv::DataSchema;
use crate::ensemble::{EnsembleConfig, MemberMeta, PosteriorEnsemble};
use crate::error::{BdeError, Result};
use crate::matrix::Matrix;
use crate::model::NetworkConfig;
use crate::standardize::StandardizationStats;

pub const MAGIC: [u8; 4] = *b"BDE1";
pub const FORMAT_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 8;
const CHECKSUM_LEN: usize = 8;

/// A posterior ensemble plus what is needed to reuse it from the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub ensemble: PosteriorEnsemble,
    pub config: Option<EnsembleConfig>,
    pub schema: Option<DataSchema>,
}

impl From<PosteriorEnsemble> for SavedModel {
    fn from(ensemble: PosteriorEnsemble) -> Self {
        Self {
            ensemble,
            config: None,
            schema: None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    format_version: u32,
    samples: usize,
    params: usize,
    net: NetworkConfig,
    config: Option<EnsembleConfig>,
    standardization: StandardizationStats,
    member_meta: Vec<MemberMeta>,
    schema: Option<DataSchema>,
}

/// Just enough of the metadata to check the version before anything else.
#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

pub fn checksum(bytes: &[u8]) -> u64 {
    XxHash64::oneshot(0, bytes)
}

/// Serializes `model` to the container layout.
pub fn encode(model: &SavedModel) -> Result<Vec<u8>> {
    let ens = &model.ensemble;
    ens.validate()?;
    let meta = Metadata {
        format_version: FORMAT_VERSION,
        samples: ens.samples.rows(),
        params: ens.samples.cols(),
        net: ens.net.clone(),
        config: model.config.clone(),
        standardization: ens.standardization.clone(),
        member_meta: ens.member_meta.clone(),
        schema: model.schema.clone(),
    };
    let json = serde_json::to_vec(&meta)
        .map_err(|e| BdeError::Format(format!("cannot encode metadata: {e}")))?;
    let payload = ens.samples.as_slice();
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + payload.len() * 8 + CHECKSUM_LEN);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let sum = checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

fn read_u64(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"))
}

fn verify_checksum(bytes: &[u8]) -> Result<()> {
    let body = bytes.len() - CHECKSUM_LEN;
    let stored = read_u64(bytes, body);
    let computed = checksum(&bytes[..body]);
    if stored != computed {
        return Err(BdeError::ChecksumMismatch { stored, computed });
    }
    Ok(())
}

struct Parsed {
    meta: Metadata,
    payload: Range<usize>,
}

fn parse(bytes: &[u8]) -> Result<Parsed> {
    if bytes.len() < HEADER_LEN + CHECKSUM_LEN {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(BdeError::Format("not a model file (bad magic)".into()));
        }
        return Err(BdeError::Truncated {
            expected: HEADER_LEN + CHECKSUM_LEN,
            found: bytes.len(),
        });
    }
    if bytes[..4] != MAGIC {
        return Err(BdeError::Format("not a model file (bad magic)".into()));
    }
    let meta_len = usize::try_from(read_u64(bytes, 4))
        .map_err(|_| BdeError::Format("metadata length overflows".into()))?;
    let meta_end = HEADER_LEN
        .checked_add(meta_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| {
            // Either the length field is corrupt or the file was cut inside the metadata.
            match verify_checksum(bytes) {
                Err(e) => e,
                Ok(()) => BdeError::Format("metadata length exceeds file size".into()),
            }
        })?;
    let meta_bytes = &bytes[HEADER_LEN..meta_end];

    // Version first, so a newer file is never partially interpreted.
    let probe: VersionProbe = serde_json::from_slice(meta_bytes).map_err(|e| {
        verify_checksum(bytes)
            .err()
            .unwrap_or_else(|| BdeError::Format(format!("unreadable metadata: {e}")))
    })?;
    if probe.format_version != FORMAT_VERSION {
        return Err(BdeError::VersionMismatch {
            found: probe.format_version,
            supported: FORMAT_VERSION,
        });
    }
    let meta: Metadata = serde_json::from_slice(meta_bytes).map_err(|e| {
        verify_checksum(bytes)
            .err()
            .unwrap_or_else(|| BdeError::Format(format!("invalid metadata: {e}")))
    })?;

    let payload_len = meta
        .samples
        .checked_mul(meta.params)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| BdeError::Format("declared sample matrix is too large".into()))?;
    let expected = meta_end + payload_len + CHECKSUM_LEN;
    if bytes.len() < expected {
        return Err(BdeError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(BdeError::Format(format!(
            "{} trailing bytes after the checksum",
            bytes.len() - expected
        )));
    }
    verify_checksum(bytes)?;
    Ok(Parsed {
        meta,
        payload: meta_end..meta_end + payload_len,
    })
}

pub fn decode(bytes: &[u8]) -> Result<SavedModel> {
    let Parsed { meta, payload } = parse(bytes)?;
    let values: Vec<f64> = bytes[payload]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let samples = Matrix::from_vec(meta.samples, meta.params, values)?;
    let ensemble = PosteriorEnsemble::new(samples, meta.net, meta.standardization, meta.member_meta)
        .map_err(|e| BdeError::Format(format!("inconsistent model: {e}")))?;
    Ok(SavedModel {
        ensemble,
        config: meta.config,
        schema: meta.schema,
    })
}

/// Byte range of the sample payload inside a valid container.
pub fn payload_range(bytes: &[u8]) -> Result<Range<usize>> {
    Ok(parse(bytes)?.payload)
}

pub fn save_saved_model(model: &SavedModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(model)?)?;
    Ok(())
}

pub fn load_saved_model(path: impl AsRef<Path>) -> Result<SavedModel> {
    decode(&fs::read(path)?)
}

pub fn save_model(ens: &PosteriorEnsemble, path: impl AsRef<Path>) -> Result<()> {
    save_saved_model(&SavedModel::from(ens.clone()), path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<PosteriorEnsemble> {
    Ok(load_saved_model(path)?.ensemble)
}
