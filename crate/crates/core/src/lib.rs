//! Discriminative recurrent acoustic word embeddings.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod classifier;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod network;
pub mod numeric;
pub mod optim;
pub mod random;
pub mod rnn;
pub mod siamese;

pub use error::{AweError, ErrorClass, Result};
pub use random::RandomSource;
