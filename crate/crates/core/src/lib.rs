//! One-shot relational reasoning over knowledge graphs.
//!
//! Given a single support triple for an unseen relation, the model summarizes
//! the support pair into a query vector, then expands a small subgraph around
//! the query head with a learned policy and reads the answer entity off the
//! node scores. Training combines a policy-gradient term for the expansion
//! steps with a cross-entropy term for the final prediction.
//!
//! The crate is generic over the scalar type; use the `64`/`32` aliases at
//! the root for concrete instantiations.

pub mod error;
pub mod scalar;
pub mod tensor;
pub mod params;
pub mod tape;
pub mod gradcheck;
pub mod seeds;
pub mod kg;
pub mod dataset;
pub mod model;
pub mod summary;
pub mod reasoner;
pub mod evaluator;
pub mod trainer;
pub mod distmult;
pub mod taskgen;
pub mod dot;

pub use error::{Error, Result};
pub use scalar::{FloatWidth, Scalar};
pub use tensor::{Shape, Tensor};

/// 64-bit tensor, the default precision.
pub type Tensor64 = Tensor<f64>;
/// 32-bit tensor.
pub type Tensor32 = Tensor<f32>;
/// 64-bit parameter store.
pub type ParameterStore64 = params::ParameterStore<f64>;
/// 32-bit parameter store.
pub type ParameterStore32 = params::ParameterStore<f32>;
