//! Joint domain classification and out-of-domain detection.
//!
//! A character-aware word encoder feeds an utterance encoder (BiLSTM, word
//! vector summation, or CNN). On top sit a `(K+1)`-way domain head, where
//! the last class is out-of-domain, and an auxiliary binary OOD head. The
//! two losses are mixed with a coefficient `alpha`, and IND / OOD
//! utterances are weighted `2 - lambda` / `lambda`, where `lambda` is moved
//! between epochs by a controller that watches the dev false acceptance
//! rate. At evaluation a confidence threshold converts low-confidence IND
//! predictions to OOD so that a target FAR is met.

pub mod data;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
