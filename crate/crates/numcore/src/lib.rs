//! Minimal dense-tensor arithmetic with recorded reverse-mode
//! differentiation and an Adam optimizer.
//!
//! ```
//! use numcore::{Tape, Tensor, ParameterSet, AdamConfig};
//!
//! let mut params = ParameterSet::new();
//! params.insert("w", Tensor::row(&[1.0, -2.0])).unwrap();
//!
//! let tape = Tape::new();
//! let w = tape.param(&params, "w").unwrap();
//! let loss = w.mul(w).unwrap().sum().unwrap();
//! tape.backward_into(loss, &mut params).unwrap();
//! assert_eq!(params.grad("w").unwrap().data(), &[2.0, -4.0]);
//! params.adam_step(&AdamConfig::with_lr(0.1)).unwrap();
//! ```

pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{NumError, Result};
pub use params::{AdamConfig, Parameter, ParameterSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Axis, Shape, Tensor};
