//! Open-vocabulary keyword spotting in a shared phonetic embedding space.
//!
//! Audio goes through a CTC-trained conformer ([`encoder`]); keyword text goes
//! through a lexicon and a phoneme-to-vector table built from that same encoder
//! ([`p2v`]). A verifier aligns the two sequences and scores the pair
//! ([`verifier`]). [`training`] generates confusable negatives and trains the
//! verifier head; [`eval`] computes AUC and EER.

pub mod encoder;
pub mod error;
pub mod eval;
pub mod features;
pub mod hashing;
pub mod nn;
pub mod p2v;
pub mod phonemes;
pub mod training;
pub mod verifier;

pub use error::{CedError, Result};
