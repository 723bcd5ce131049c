//! Learned name index (LNI) for NDN-style forwarding tables.
//!
//! Names are XOR-folded into short byte vectors ([`input`]), a two-level
//! neural CDF model maps each vector to a bitmap part and a position inside
//! it ([`pyramid`]), and an offset bitmap resolves that slot to a stored
//! entry ([`bitmap`], [`lni`]). [`baselines`] holds the hash-table and
//! Patricia-trie comparators measured with the same metrics ([`metrics`]).
//!
//! The numeric core is generic over [`Scalar`]; the aliases below fix it to
//! `f64`, which is what model files store.

pub mod baselines;
pub mod bitmap;
pub mod bpnn;
pub mod corpus;
pub mod error;
pub mod index_io;
pub mod input;
pub mod lni;
pub mod metrics;
pub mod model_io;
pub mod pyramid;
pub mod scalar;

pub use corpus::{CorpusSpec, Dataset, Name};
pub use error::{Error, Result};
pub use input::InputVector;
pub use lni::{FibEntry, LniStats};
pub use scalar::Scalar;

/// Double-precision network.
pub type Bpnn = bpnn::Network<f64>;
/// Single-precision network.
pub type Bpnn32 = bpnn::Network<f32>;
/// Double-precision two-level model.
pub type PyramidNn = pyramid::Pyramid<f64>;
/// Single-precision two-level model.
pub type PyramidNn32 = pyramid::Pyramid<f32>;
/// Double-precision learned name index.
pub type LniIndex = lni::Lni<f64>;
/// Double-precision FIB facade.
pub type LniFib = lni::LniFib<f64>;
