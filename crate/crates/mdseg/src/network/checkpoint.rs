//! Checkpoint container.
//!
//! Layout: 8-byte magic `MDSEGCK1`, a little-endian u32 header length, a
//! JSON [`CheckpointHeader`], then the raw parameter blocks as little-endian
//! 32-bit floats, concatenated in the header's `blocks` order. One file
//! holds one network; the base scheme therefore writes one file per domain.
//!
//! Blocks cover every trainable parameter *and* the per-domain running
//! batch-norm statistics, so a restored model is immediately usable for
//! inference. Values are stored at 32-bit precision.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{build_model, ArchConfig, DomainSpec, Model, ModelError, Scheme, SegNet};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MDSEGCK1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes (not a checkpoint file)")]
    BadMagic,
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: block {name} wanted {expected} bytes, got {got}")]
    TruncatedPayload {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("block {name}: stored {stored} values, model expects {expected}")]
    BlockMismatch {
        name: String,
        stored: usize,
        expected: usize,
    },
    #[error("missing block {name}")]
    MissingBlock { name: String },
    #[error("checkpoint files disagree: {0}")]
    InconsistentFiles(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Per-domain exam indices of one leave-one-out fold, as recorded in a
/// checkpoint so later stages can re-derive which slices were train/val.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct SplitInfo {
    pub fold: usize,
    pub train: Vec<Vec<usize>>,
    pub val: Vec<Vec<usize>>,
    pub test: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub scheme: Scheme,
    pub arch: ArchConfig,
    pub domains: Vec<DomainSpec>,
    pub seed: u64,
    /// Which net this file holds: the served domain under the base scheme,
    /// 0 otherwise.
    pub net_index: usize,
    /// Training epoch the snapshot was taken at (1-based); `None` for the
    /// best-validation checkpoint.
    pub epoch: Option<usize>,
    pub val_dice: Option<f64>,
    pub split: Option<SplitInfo>,
    pub blocks: Vec<BlockInfo>,
}

pub const FORMAT_NAME: &str = "mdseg-checkpoint-v1";

impl SegNet {
    /// Every stored block of this net in declaration order:
    /// `(name, shape, values)`.
    pub(crate) fn state_blocks(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = Vec::new();
        let push_block = |prefix: String,
                          block: &super::DoubleConvBlock,
                          out: &mut Vec<(String, Vec<usize>, Vec<f64>)>| {
            for (tag, conv, bn) in [
                ("1", &block.conv1, &block.bn1),
                ("2", &block.conv2, &block.bn2),
            ] {
                out.push((
                    format!("{prefix}.conv{tag}.kernel"),
                    conv.kernel.shape(),
                    conv.kernel.values(),
                ));
                out.push((
                    format!("{prefix}.conv{tag}.bias"),
                    conv.bias.shape(),
                    conv.bias.values(),
                ));
                for k in 0..bn.num_domains() {
                    out.push((
                        format!("{prefix}.bn{tag}.gamma{k}"),
                        bn.gamma(k).shape(),
                        bn.gamma(k).values(),
                    ));
                    out.push((
                        format!("{prefix}.bn{tag}.beta{k}"),
                        bn.beta(k).shape(),
                        bn.beta(k).values(),
                    ));
                    out.push((
                        format!("{prefix}.bn{tag}.running_mean{k}"),
                        vec![bn.num_features()],
                        bn.running_mean(k).to_vec(),
                    ));
                    out.push((
                        format!("{prefix}.bn{tag}.running_var{k}"),
                        vec![bn.num_features()],
                        bn.running_var(k).to_vec(),
                    ));
                }
            }
        };
        for (i, block) in self.enc.iter().enumerate() {
            push_block(format!("enc{i}"), block, &mut out);
        }
        push_block("bottleneck".to_string(), &self.bottleneck, &mut out);
        for (i, up) in self.up.iter().enumerate() {
            out.push((
                format!("dec{i}.tconv.kernel"),
                up.tconv_kernel.shape(),
                up.tconv_kernel.values(),
            ));
            push_block(format!("dec{i}"), &up.block, &mut out);
        }
        for (i, head) in self.heads.iter().enumerate() {
            out.push((
                format!("head{i}.kernel"),
                head.kernel.shape(),
                head.kernel.values(),
            ));
            out.push((format!("head{i}.bias"), head.bias.shape(), head.bias.values()));
        }
        out
    }

    /// Writes `data` back into this net; every expected block must be
    /// present with its exact length.
    pub(crate) fn restore_blocks(
        &mut self,
        data: &HashMap<String, Vec<f64>>,
    ) -> Result<(), CheckpointError> {
        let expected: Vec<(String, usize)> = self
            .state_blocks()
            .into_iter()
            .map(|(name, _, values)| (name, values.len()))
            .collect();
        for (name, len) in &expected {
            let stored = data
                .get(name)
                .ok_or_else(|| CheckpointError::MissingBlock { name: name.clone() })?;
            if stored.len() != *len {
                return Err(CheckpointError::BlockMismatch {
                    name: name.clone(),
                    stored: stored.len(),
                    expected: *len,
                });
            }
        }

        let set = |t: &crate::tensor::Tensor, name: &str| {
            t.set_values(&data[name]).expect("length checked above");
        };
        let apply_block = |prefix: String, block: &mut super::DoubleConvBlock| {
            for (tag, conv, bn) in [
                ("1", &mut block.conv1, &mut block.bn1),
                ("2", &mut block.conv2, &mut block.bn2),
            ] {
                set(&conv.kernel, &format!("{prefix}.conv{tag}.kernel"));
                set(&conv.bias, &format!("{prefix}.conv{tag}.bias"));
                for k in 0..bn.num_domains() {
                    set(bn.gamma(k), &format!("{prefix}.bn{tag}.gamma{k}"));
                    set(bn.beta(k), &format!("{prefix}.bn{tag}.beta{k}"));
                    bn.set_running_stats(
                        k,
                        &data[&format!("{prefix}.bn{tag}.running_mean{k}")],
                        &data[&format!("{prefix}.bn{tag}.running_var{k}")],
                    );
                }
            }
        };
        for (i, block) in self.enc.iter_mut().enumerate() {
            apply_block(format!("enc{i}"), block);
        }
        apply_block("bottleneck".to_string(), &mut self.bottleneck);
        for (i, up) in self.up.iter_mut().enumerate() {
            set(&up.tconv_kernel, &format!("dec{i}.tconv.kernel"));
            apply_block(format!("dec{i}"), &mut up.block);
        }
        for (i, head) in self.heads.iter().enumerate() {
            set(&head.kernel, &format!("head{i}.kernel"));
            set(&head.bias, &format!("head{i}.bias"));
        }
        Ok(())
    }
}

/// Extra metadata recorded alongside the weights.
#[derive(Debug, Clone, Default)]
pub struct SnapshotMeta {
    pub epoch: Option<usize>,
    pub val_dice: Option<f64>,
    pub split: Option<SplitInfo>,
}

/// Writes net `net_index` of `model` to `path`.
pub fn save_net_checkpoint(
    path: &Path,
    model: &Model,
    net_index: usize,
    meta: &SnapshotMeta,
) -> Result<(), CheckpointError> {
    let blocks = model.nets()[net_index].state_blocks();
    let header = CheckpointHeader {
        format: FORMAT_NAME.to_string(),
        scheme: model.scheme,
        arch: model.cfg,
        domains: model.domains.clone(),
        seed: model.seed,
        net_index,
        epoch: meta.epoch,
        val_dice: meta.val_dice,
        split: meta.split.clone(),
        blocks: blocks
            .iter()
            .map(|(name, shape, _)| BlockInfo {
                name: name.clone(),
                shape: shape.clone(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| CheckpointError::MalformedHeader(e.to_string()))?;

    let mut file = File::create(path)?;
    file.write_all(CHECKPOINT_MAGIC)?;
    file.write_all(&(header_json.len() as u32).to_le_bytes())?;
    file.write_all(&header_json)?;
    let mut payload = Vec::new();
    for (_, _, values) in &blocks {
        for &v in values {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    file.write_all(&payload)?;
    Ok(())
}

/// Reads a checkpoint header plus its blocks (as f64 values).
pub fn read_checkpoint(
    path: &Path,
) -> Result<(CheckpointHeader, HashMap<String, Vec<f64>>), CheckpointError> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes)
        .map_err(|_| CheckpointError::MalformedHeader("missing header length".into()))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)
        .map_err(|_| CheckpointError::MalformedHeader("header shorter than declared".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| CheckpointError::MalformedHeader(e.to_string()))?;
    if header.format != FORMAT_NAME {
        return Err(CheckpointError::MalformedHeader(format!(
            "unknown format {:?}",
            header.format
        )));
    }

    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    let mut blocks = HashMap::new();
    let mut offset = 0;
    for info in &header.blocks {
        let count: usize = info.shape.iter().product();
        let bytes = count * 4;
        if offset + bytes > payload.len() {
            return Err(CheckpointError::TruncatedPayload {
                name: info.name.clone(),
                expected: bytes,
                got: payload.len().saturating_sub(offset),
            });
        }
        let values: Vec<f64> = payload[offset..offset + bytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        blocks.insert(info.name.clone(), values);
        offset += bytes;
    }
    Ok((header, blocks))
}

/// Rebuilds a full model from the checkpoint files of one fold (one file
/// for joint/dsl, one per domain for base). Headers must agree on scheme,
/// architecture, domains and seed.
pub fn load_model(paths: &[std::path::PathBuf]) -> Result<(Model, Vec<CheckpointHeader>), CheckpointError> {
    if paths.is_empty() {
        return Err(CheckpointError::InconsistentFiles("no files given".into()));
    }
    let mut loaded = Vec::new();
    for p in paths {
        loaded.push(read_checkpoint(p)?);
    }
    let first = &loaded[0].0;
    for (h, _) in &loaded[1..] {
        if h.scheme != first.scheme
            || h.arch != first.arch
            || h.domains != first.domains
            || h.seed != first.seed
        {
            return Err(CheckpointError::InconsistentFiles(
                "scheme/arch/domains/seed differ across files".into(),
            ));
        }
    }
    let expected_files = match first.scheme {
        Scheme::Base => first.domains.len(),
        _ => 1,
    };
    if loaded.len() != expected_files {
        return Err(CheckpointError::InconsistentFiles(format!(
            "scheme {} expects {} file(s), got {}",
            first.scheme,
            expected_files,
            loaded.len()
        )));
    }

    let mut model = build_model(first.scheme, &first.domains, first.arch, first.seed)?;
    let mut headers = Vec::new();
    for (header, blocks) in loaded {
        model.nets_mut()[header.net_index].restore_blocks(&blocks)?;
        headers.push(header);
    }
    Ok((model, headers))
}
