//! Weakly-supervised temporal action segmentation with pose-supervised
//! contrastive learning.
//!
//! The crate covers the full pipeline: canonicalizing 2-D skeletons
//! ([`pose`]), embedding RGB features and poses into a shared space
//! ([`nets`]), cross-modal contrastive training with pose-distance negative
//! mining ([`contrastive`]), transcript-constrained alignment and online
//! decoding ([`segment`]), the usual segmentation metrics ([`metrics`]), and
//! the glue to train, checkpoint, and evaluate models on on-disk datasets
//! ([`train`], [`dataio`], [`synth`]).

pub mod checkpoint;
pub mod contrastive;
pub mod dataio;
pub mod linalg;
pub mod metrics;
pub mod nets;
pub mod pose;
pub mod segment;
pub mod synth;
pub mod train;
