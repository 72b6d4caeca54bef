//! Minimal reverse-mode differentiable array engine.
//!
//! Values live on a [`Tape`]; every primitive records what its backward rule
//! needs, and [`Tape::backward`] sweeps the records in reverse. The engine is
//! generic over [`Real`] so the same graph can be trained in `f32` and
//! verified in `f64`.

pub mod array;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod init;
pub mod kernels;
pub mod optim;
pub mod params;
pub mod real;
pub mod tape;

pub use array::NdArray;
pub use error::{Result, TensorError};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore};
pub use real::Real;
pub use tape::{ConvTransposeSpec, OpKind, Tape, Var};
