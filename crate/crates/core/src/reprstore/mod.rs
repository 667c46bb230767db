//! Per-layer frame stores and pooling of frames into per-phone vectors.

mod format;
mod pool;

pub use format::{read_manifest, write_manifest, FrameMatrix, LayerStore, StoreError, StoreHeader, MAGIC, VERSION};
pub use pool::{assemble, overlapping_frames, pool, Assembled, DataMatrix, PhoneVector, Pooled, Skip, SkipReason};
