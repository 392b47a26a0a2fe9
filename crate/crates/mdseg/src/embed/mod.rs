//! Embedding analysis: collect per-slice encoder embeddings, reduce with
//! PCA to 50 components, map to 2D with exact t-SNE, quantify domain
//! separation, and emit CSV plus scatter images.

mod artifacts;
mod pca;
mod stats;
mod tsne;

pub use artifacts::{emit_artifacts, write_bmp};
pub use pca::pca_reduce;
pub use stats::{separation_stats, silhouette_score, SeparationReport};
pub use tsne::{tsne_2d, TsneConfig, TsneResult};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("need at least 2 points, got {got}")]
    TooFewPoints { got: usize },
    #[error(
        "t-SNE with perplexity {perplexity} needs at least {needed} points, got {got}; \
         lower the perplexity"
    )]
    PerplexityTooLarge {
        perplexity: f64,
        needed: usize,
        got: usize,
    },
    #[error("separation statistics need at least 2 domains")]
    SingleDomain,
    #[error("point {index} has {got} features, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("{coords} coordinates for {records} records")]
    CoordsRecordMismatch { coords: usize, records: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Which split a record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// One slice's embedding with its domain, split and the epoch it was
/// collected at.
#[derive(Debug, Clone)]
pub struct EmbeddingRecord {
    pub z: Vec<f64>,
    pub domain: usize,
    pub split: Split,
    pub epoch: usize,
}

fn check_uniform_dim(points: &[Vec<f64>]) -> Result<usize, EmbedError> {
    let d = points.first().map_or(0, Vec::len);
    for (index, p) in points.iter().enumerate() {
        if p.len() != d {
            return Err(EmbedError::DimensionMismatch {
                index,
                expected: d,
                got: p.len(),
            });
        }
    }
    Ok(d)
}
