//! Dense `f64` tensors with tape-based reverse-mode differentiation, an AdamW
//! optimizer, seedable random streams and a binary checkpoint container.
//!
//! ```
//! use handrift_tensor::{Graph, Tensor};
//!
//! let g = Graph::new();
//! let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
//! let loss = g.sum(g.square(x));
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap(), &[2.0, 4.0]);
//! ```

pub mod checkpoint;
pub mod gradcheck;
mod error;
mod graph;
mod ops;
pub mod optim;
mod params;
pub mod rng;
mod tensor;

pub use checkpoint::{Checkpoint, Manifest};
pub use error::{Result, TensorError};
pub use graph::{BackwardCtx, Gradients, Graph, InputGrads, Var};
pub use ops::sigmoid;
pub use optim::{AdamW, AdamWConfig};
pub use params::{BoundParams, ParamStore};
pub use rng::RngStream;
pub use tensor::Tensor;
