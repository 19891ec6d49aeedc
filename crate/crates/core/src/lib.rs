//! BERT-style masked-language-model pretraining with a pretraining-only
//! decoder stack, gradual unmasking attention (GUA) inside that decoder, and
//! stochastic selection between encoder and decoder outputs.
//!
//! The decoder exists only for pretraining: [`train::export_encoder`] drops it
//! so finetuning and inference cost exactly what a vanilla encoder costs.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` is meant to reject NaN as well

pub mod analysis;
pub mod bpdec;
pub mod config;
pub mod data;
pub mod error;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod transformer;

pub use error::{Error, Result};
