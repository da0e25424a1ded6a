//! Core library for preference-based fine-tuning of a small autoregressive
//! protein sequence model and likelihood-guided mutant search.
//!
//! The crate is `no_std` (with `alloc`) so the numeric pipeline can run
//! anywhere; all file formats, threading and the command-line surface live in
//! the companion `hitmat` crate. Everything here is deterministic: given the
//! same seeds and inputs, every function produces bit-identical results
//! regardless of platform or thread count.
//!
//! Module map:
//! - [`seq`]: amino-acid sequences, the token vocabulary, prompt encoding and
//!   point mutations.
//! - [`model`]: a tiny decoder-only transformer in `f64` with hand-written
//!   exact backpropagation.
//! - [`loss`]: sigmoid (DPO), hinge and KTO preference objectives plus batch
//!   diagnostics.
//! - [`dataset`]: turning scored candidates into preference pairs with a
//!   disjoint train/validation split.
//! - [`train`]: pretraining and preference fine-tuning loops with linear
//!   learning-rate decay and best-checkpoint retention.
//! - [`search`]: permutation-averaged candidate scoring, greedy
//!   diversification and exhaustive single/double mutant search.
//! - [`eval`]: synthetic fitness oracle, plate normalization and Pearson
//!   correlation with significance.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod dataset;
pub mod eval;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod rng;
pub mod runtime;
pub mod search;
pub mod seq;
pub mod train;

pub use runtime::{Runtime, SingleThread};
