//! Rank pooling and hierarchical rank pooling of frame sequences, with
//! gradients through the rank-pool argmin for learning discriminative
//! encodings.

pub mod argmin_grad;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod hierarchy;
pub mod io;
pub mod maps;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod pooling;
pub mod synth;
pub mod training;
pub mod types;

pub use encoder::{EncoderConfig, Method};
pub use error::{Error, Result};
pub use hierarchy::{hrp_encode, HierarchyConfig, LayerSpec};
pub use maps::MapKind;
pub use model::{Model, Transform};
pub use pooling::{rank_pool, RankPoolSolution, SvrConfig};
pub use types::{validate_dataset, Dataset, Encoding, FrameSequence, Violation};
