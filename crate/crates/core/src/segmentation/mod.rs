//! Frames to superpixel Region Adjacency Graphs.

mod features;
mod frame;
mod rag;
mod slic;

pub use features::{node_features, ExtractorKind, FeatureExtractor, FilterBank, Pooling};
pub use frame::Frame;
pub use rag::region_adjacency;
pub use slic::{slic, Segmentation, SlicParams};
