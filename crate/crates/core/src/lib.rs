pub mod diagnostics;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod retrieval;
mod scalar;
pub mod textdata;
pub mod training;

pub use pipeline::Error;
pub use scalar::{Scalar, Strided};

pub type Tensor32 = numerics::Tensor<f32>;
pub type Tensor64 = numerics::Tensor<f64>;
pub type Graph32 = numerics::Graph<f32>;
pub type Graph64 = numerics::Graph<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
