//! Multi-task, multi-domain volumetric segmentation at desk scale.
//!
//! A single encoder-decoder segmentation network is trained jointly over
//! several datasets ("domains") that each carry their own label set. The
//! convolutional filters are shared; batch normalization statistics and the
//! final 1×1 segmentation head are kept per domain. A supervised contrastive
//! regularizer on the globally max-pooled encoder representation pulls
//! same-domain embeddings together and pushes different domains apart.
//!
//! Everything runs on a self-contained f64 tensor engine with reverse-mode
//! automatic differentiation — no external ML framework. The crate ships:
//!
//! - [`tensor`]: the differentiation engine and its NN ops,
//! - [`dsbn`]: domain-specific batch normalization,
//! - [`network`]: the U-Net style model with base/joint/dsl weight schemes,
//! - [`losses`]: multi-domain cross-entropy and the contrastive regularizer,
//! - [`data`]: a two-domain synthetic volumetric dataset with file IO,
//! - [`training`]: batch composition, the four training schemes, leave-one-out,
//! - [`metrics`]: post-processing and the six segmentation metrics plus a
//!   two-sample Kolmogorov-Smirnov test,
//! - [`embed`]: PCA → exact t-SNE embedding analysis with artifact emission,
//! - [`run`]: the operator commands behind the `mdseg` binary.
//!
//! See the crate `examples/` directory for one runnable example per major
//! capability, and `tests/acceptance.rs` for the verification suite.

pub mod data;
pub mod dsbn;
pub mod embed;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod run;
pub mod seeding;
pub mod tensor;
pub mod training;

pub use tensor::{backward, no_grad, AdamState, Tensor, TensorError};
