//! Datasets, vocabularies, the synthetic corpus generator, and checkpoints.

mod checkpoint;
mod dataset;
pub mod synthetic;
mod vocab;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dataset::{tokenize, Dataset, LabelMap, Utterance, OOD_LABEL};
pub use vocab::{read_word_vectors, Encoded, Vocab, UNK, UNK_WORD};
