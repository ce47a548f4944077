//! Word and utterance encoders.
//!
//! Words are represented by the final states of a forward and a backward
//! character LSTM concatenated with a word embedding. Utterances are
//! encoded from the word vectors by a BiLSTM, a plain sum, or a CNN with
//! max-over-time pooling.

mod dropout;
mod lstm;
mod utterance;
mod word;

pub use dropout::{apply_variational_dropout, sample_mask, BiLstmMasks, SequenceMasks};
pub use lstm::LstmCell;
pub use utterance::{
    encode_utterance_bilstm, encode_utterance_cnn, encode_utterance_sum, ConvBank, EncoderKind, UtteranceEncoder,
    CNN_WIDTHS,
};
pub use word::{encode_word, WordEncoder};


use rand::Rng;

use crate::numerics::{Real, Tensor};

/// Layer sizes. The defaults are the sizes the architecture is defined
/// with; smaller values exist for fast tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub char_emb: usize,
    pub char_hidden: usize,
    pub word_emb: usize,
    pub word_hidden: usize,
    pub head_hidden: usize,
    pub cnn_channels: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            char_emb: 25,
            char_hidden: 25,
            word_emb: 100,
            word_hidden: 100,
            head_hidden: 100,
            cnn_channels: 50,
        }
    }
}

impl ModelDims {
    /// Width of a word representation.
    pub fn word_rep(&self) -> usize {
        2 * self.char_hidden + self.word_emb
    }
}

pub fn xavier_uniform<F: Real, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor<F> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| F::of(rng.gen_range(-a..a))).collect();
    Tensor::new(vec![rows, cols], data).expect("consistent shape")
}

pub(crate) fn uniform_vector<F: Real, R: Rng + ?Sized>(rng: &mut R, len: usize, a: f64) -> Tensor<F> {
    Tensor::vector((0..len).map(|_| F::of(rng.gen_range(-a..a))).collect())
}

/// Embedding table; each row is drawn from `U(-sqrt(3/dim), sqrt(3/dim))`.
pub(crate) fn embedding_table<F: Real, R: Rng + ?Sized>(rng: &mut R, rows: usize, dim: usize) -> Tensor<F> {
    let a = (3.0 / dim as f64).sqrt();
    let data = (0..rows * dim).map(|_| F::of(rng.gen_range(-a..a))).collect();
    Tensor::new(vec![rows, dim], data).expect("consistent shape")
}
