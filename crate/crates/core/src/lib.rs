//! Automata extraction from gated recurrent networks.
//!
//! The pipeline trains a small recurrent classifier on a regular-language
//! task, records the top-layer hidden state after every token of a held-out
//! split, clusters those points and compiles the clusters into a
//! deterministic finite state automaton:
//!
//! 1. [`data`] generates labelled sequences over a finite [`data::Alphabet`].
//! 2. [`rnn`] runs SRN / MGU / GRU / LSTM stacks; [`train`] fits them by
//!    backpropagation through time.
//! 3. [`cluster`] collects a [`cluster::TracePool`] and partitions it with
//!    k-means++ or the position-augmented k-means-x.
//! 4. [`fsa`] counts cluster-to-cluster transitions per symbol, keeps the most
//!    frequent successor and marks clusters whose centre the network labels
//!    positive as accepting.
//! 5. [`dot`] renders the result for Graphviz.
//!
//! The crate is `no_std` (it needs `alloc`); file formats and the command line
//! live in the `lisor` crate.
#![cfg_attr(not(any(test, feature = "std")), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod cluster;
pub mod data;
pub mod dot;
mod error;
pub mod fsa;
pub mod math;
pub mod rnn;
pub mod train;

pub use error::{Error, Result};

/// Deterministic generator used everywhere a seed is accepted.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Builds the crate's generator from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
