//! Streaming t-SNE.
//!
//! Points arrive one at a time and are projected in fixed-size batches. The
//! first batch (the opening slice) is embedded with exact t-SNE; later batches
//! are partially embedded against a bounded set of density representatives
//! whose low-dimensional positions stay fixed. Clusters of representatives are
//! summarized by convex hulls, and each hull is split into a cobweb of
//! wedge × ring sections. Sections that stop receiving points for longer than
//! an exponentially decaying threshold are sliced away, which lets the
//! embedding forget stale regions of the stream.
//!
//! The crate is organized bottom-up:
//!
//! * [`tsne`]: exact affinities, KL objective and gradient, full fit.
//! * [`partial`]: embedding new points against fixed anchors.
//! * [`kdtree`] and [`pedrul`]: radius queries and representative selection.
//! * [`geometry`]: hulls, cobweb partitions, point location, cuts.
//! * [`ecs`]: decay threshold, hit bookkeeping and slicing.
//! * [`clustering`]: DBSCAN over the embedding.
//! * [`pipeline`]: the batch-triggered streaming state machine.
//! * [`baseline`]: full re-projection per batch, for comparison.
//! * [`streamgen`] and [`metrics`]: data sources and instrumentation.

pub mod baseline;
pub mod clustering;
pub mod ecs;
mod error;
pub mod geometry;
pub mod kdtree;
pub mod metrics;
pub mod partial;
pub mod pedrul;
pub mod pipeline;
pub mod streamgen;
pub mod tsne;

pub use error::{Error, Result};
pub use tsne::{HighDimPoint, LowDimPoint};
