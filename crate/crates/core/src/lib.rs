//! Spatio-temporal graph classification over superpixel supergraphs with
//! learned temporal edges.

pub mod dataio;
pub mod diagnostics;
pub mod error;
pub mod gnn;
pub mod mending;
pub mod numcore;
pub mod segmentation;
pub mod supergraph;
pub mod training;

pub use error::{Error, Result};

pub type Tensor64 = numcore::Tensor<f64>;
pub type Tensor32 = numcore::Tensor<f32>;
pub type SuperGraph64 = supergraph::SuperGraph<f64>;
pub type SuperGraph32 = supergraph::SuperGraph<f32>;
pub type Model64 = training::Model<f64>;
pub type Model32 = training::Model<f32>;
pub type Sample64 = training::Sample<f64>;
pub type Sample32 = training::Sample<f32>;
