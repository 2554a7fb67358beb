//! Training-data influence scoring over per-example gradient matrices.
//!
//! The crate is organized around a small pipeline: a desk-scale trainer
//! produces per-example gradients ([`trainer`]), gradients live in a
//! bit-exact binary container ([`gradstore`]), five compression schemes map
//! them to a low-dimensional space ([`compress`]), five scoring engines turn
//! them into influence scores ([`influence`]), and three evaluation
//! protocols plus a set of error-bound checks sit on top ([`eval`],
//! [`theory`]). All numeric kernels are in [`linalg`].

pub mod compress;
pub mod eval;
pub mod gradstore;
pub mod influence;
pub mod linalg;
pub mod plot;
pub mod rng;
pub mod theory;
pub mod trainer;

pub use compress::{CompressedDataset, CompressionPlan, LayerPlan, Method};
pub use gradstore::{GradientDataset, LayerKind, LayerSpec, QueryVector, Split};
pub use influence::{DampingConfig, Engine, EngineConfig, InfluenceReport};
pub use linalg::{DenseMatrix, DenseVector};
pub use trainer::{ModelSpec, ModelState, SyntheticTask, TrainRecord};
