//! Exam file container.
//!
//! Layout: 7 magic bytes `MDSEG1\0`, a little-endian u32 header length, a
//! JSON header (`exam_id`, `domain`, `shape`, `spacing`, `dtype`,
//! `checksum`), then the voxel payload as little-endian 32-bit floats and
//! the label payload as unsigned 8-bit integers. The checksum is the SHA-256
//! of the concatenated payloads, hex-encoded.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DataError, LabelVolume, Volume};
use crate::network::DomainSpec;

pub const EXAM_MAGIC: &[u8; 7] = b"MDSEG1\0";
const DTYPE: &str = "f32le+u8";

#[derive(Debug, Serialize, Deserialize)]
struct ExamHeader {
    exam_id: String,
    domain: usize,
    shape: [usize; 3],
    spacing: [f64; 3],
    dtype: String,
    checksum: String,
}

fn payload_bytes(volume: &Volume, labels: &LabelVolume) -> Vec<u8> {
    let mut payload = Vec::with_capacity(volume.voxels.len() * 4 + labels.labels.len());
    for &v in &volume.voxels {
        payload.extend_from_slice(&(v as f32).to_le_bytes());
    }
    payload.extend_from_slice(&labels.labels);
    payload
}

fn hex_sha256(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes one exam (volume + labels) to `path`.
pub fn save_exam(path: &Path, volume: &Volume, labels: &LabelVolume) -> Result<(), DataError> {
    let payload = payload_bytes(volume, labels);
    let header = ExamHeader {
        exam_id: volume.exam_id.clone(),
        domain: volume.domain,
        shape: [volume.shape.0, volume.shape.1, volume.shape.2],
        spacing: [volume.spacing.0, volume.spacing.1, volume.spacing.2],
        dtype: DTYPE.to_string(),
        checksum: hex_sha256(&payload),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| DataError::MalformedHeader(e.to_string()))?;
    let mut file = File::create(path)?;
    file.write_all(EXAM_MAGIC)?;
    file.write_all(&(header_json.len() as u32).to_le_bytes())?;
    file.write_all(&header_json)?;
    file.write_all(&payload)?;
    Ok(())
}

/// Reads one exam back; errors distinguish malformed headers, truncated
/// payloads and checksum mismatches.
pub fn load_exam(path: &Path) -> Result<(Volume, LabelVolume), DataError> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 7];
    file.read_exact(&mut magic)
        .map_err(|_| DataError::MalformedHeader("file shorter than magic".into()))?;
    if &magic != EXAM_MAGIC {
        return Err(DataError::MalformedHeader("bad magic bytes".into()));
    }
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes)
        .map_err(|_| DataError::MalformedHeader("missing header length".into()))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)
        .map_err(|_| DataError::MalformedHeader("header shorter than declared".into()))?;
    let header: ExamHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| DataError::MalformedHeader(e.to_string()))?;
    if header.dtype != DTYPE {
        return Err(DataError::MalformedHeader(format!(
            "unsupported dtype {:?}",
            header.dtype
        )));
    }

    let [z, h, w] = header.shape;
    let voxel_bytes = z * h * w * 4;
    let label_bytes = z * h * w;
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    if payload.len() < voxel_bytes + label_bytes {
        return Err(DataError::TruncatedPayload {
            expected: voxel_bytes + label_bytes,
            got: payload.len(),
        });
    }
    payload.truncate(voxel_bytes + label_bytes);
    let computed = hex_sha256(&payload);
    if computed != header.checksum {
        return Err(DataError::ChecksumMismatch {
            header: header.checksum,
            computed,
        });
    }

    let voxels: Vec<f64> = payload[..voxel_bytes]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let labels = payload[voxel_bytes..].to_vec();
    let volume = Volume::new(
        header.exam_id.clone(),
        header.domain,
        (z, h, w),
        voxels,
        (header.spacing[0], header.spacing[1], header.spacing[2]),
    )?;
    let label_volume = LabelVolume::new(header.exam_id, header.domain, (z, h, w), labels)?;
    Ok((volume, label_volume))
}

/// One domain's exams as loaded from a dataset directory.
#[derive(Debug)]
pub struct DomainData {
    pub spec: DomainSpec,
    pub exams: Vec<(Volume, LabelVolume)>,
}

/// Loads a dataset directory written by the generate command: one
/// `domain<k>/` subdirectory per domain, exams ordered by filename.
pub fn load_dataset_dir(dir: &Path) -> Result<Vec<DomainData>, DataError> {
    let mut by_domain: BTreeMap<usize, Vec<(PathBuf, Volume, LabelVolume)>> = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if !entry.file_type()?.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().to_string();
        let Some(domain_str) = name.strip_prefix("domain") else {
            continue;
        };
        let Ok(domain) = domain_str.parse::<usize>() else {
            continue;
        };
        let mut files: Vec<PathBuf> = std::fs::read_dir(entry.path())?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "mdseg"))
            .collect();
        files.sort();
        let mut exams = Vec::new();
        for f in files {
            let (v, l) = load_exam(&f)?;
            exams.push((f, v, l));
        }
        by_domain.insert(domain, exams);
    }
    let mut out = Vec::new();
    for (domain, exams) in by_domain {
        let num_exams = exams.len();
        let max_label = exams
            .iter()
            .flat_map(|(_, _, l)| l.labels.iter().copied())
            .max()
            .unwrap_or(0) as usize;
        // reconstruct the label set: canonical names for the two synthetic
        // domains, generic names otherwise
        let canonical = super::synth_domain_specs(num_exams);
        let spec = if domain < canonical.len() && canonical[domain].labels.len() == max_label + 1 {
            canonical[domain].clone()
        } else {
            DomainSpec {
                id: domain,
                labels: (0..=max_label)
                    .map(|c| {
                        if c == 0 {
                            "background".to_string()
                        } else {
                            format!("class_{c}")
                        }
                    })
                    .collect(),
                sample_count: num_exams,
            }
        };
        out.push(DomainData {
            spec,
            exams: exams.into_iter().map(|(_, v, l)| (v, l)).collect(),
        });
    }
    Ok(out)
}
