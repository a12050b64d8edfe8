//! Memory-augmented sentence encoding (NSE).
//!
//! A memory-augmented sequence encoder whose encoding memory starts as the
//! input's word embeddings and evolves one token at a time through *read*
//! (LSTM + dot-product attention over memory slots), *compose* (MLP) and
//! *write* (LSTM + erase-then-write update at the slots the read addressed).
//!
//! The crate is self-contained: a small reverse-mode autodiff ([`autodiff`]),
//! the recurrent cells ([`cells`]), the encoder itself ([`nse`]), task heads
//! ([`heads`]), the training stack ([`train`]), data ingestion ([`data`]) and
//! memory-trace introspection ([`introspect`]).

pub mod autodiff;
pub mod cells;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod heads;
pub mod introspect;
pub mod nse;
pub mod params;
pub mod tasks;
pub mod tensor;
pub mod train;

pub use autodiff::{GradStore, Graph, Var};
pub use error::{Error, Result};
pub use params::{Gradients, ParamId, ParamKind, ParameterSet};
pub use tensor::{Real, Shape, Tensor};
