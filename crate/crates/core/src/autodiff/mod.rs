//! Tape-based reverse-mode automatic differentiation over small dense
//! `f64` tensors.
//!
//! Only the operations the state-change model and its losses use are
//! provided. Broadcasting is limited to exact shape matches and scalars.
//!
//! ```
//! use lace_core::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let w = tape.param(&Tensor::row(vec![1.0, 2.0, 3.0]));
//! let loss = tape.sum(w);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(w).unwrap(), &[1.0, 1.0, 1.0]);
//! ```

mod tape;
mod tensor;

pub use tape::{sigmoid, softmax, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AutodiffError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{0}")]
    Contract(String),
}
