use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use super::{Dataset, Utterance};
use crate::error::{Error, Result};

/// Id 0 is reserved for unknown words and characters.
pub const UNK: usize = 0;
pub const UNK_WORD: &str = "<unk>";

/// Word and character vocabularies built from a training split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    word_index: HashMap<String, usize>,
    chars: Vec<char>,
    char_index: HashMap<char, usize>,
}

/// An utterance mapped to vocabulary ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoded {
    pub words: Vec<usize>,
    pub chars: Vec<Vec<usize>>,
    pub label: usize,
}

impl Vocab {
    /// Words seen fewer than `min_count` times in `train` are left out and
    /// map to UNK. Every character seen is kept.
    pub fn build(train: &Dataset, min_count: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut chars = BTreeSet::new();
        for u in &train.utterances {
            for t in &u.tokens {
                *counts.entry(t).or_default() += 1;
                chars.extend(t.chars());
            }
        }
        let words = counts
            .into_iter()
            .filter(|&(_, n)| n >= min_count)
            .map(|(w, _)| w.to_string())
            .collect();
        Self::from_parts(words, chars.into_iter().collect())
    }

    /// Rebuild from the ordered entries (excluding UNK) as stored in a
    /// checkpoint.
    pub fn from_parts(words: Vec<String>, chars: Vec<char>) -> Self {
        let words: Vec<String> = std::iter::once(UNK_WORD.to_string()).chain(words).collect();
        let chars: Vec<char> = std::iter::once('\u{0}').chain(chars).collect();
        let word_index = words.iter().enumerate().skip(1).map(|(i, w)| (w.clone(), i)).collect();
        let char_index = chars.iter().enumerate().skip(1).map(|(i, &c)| (c, i)).collect();
        Self {
            words,
            word_index,
            chars,
            char_index,
        }
    }

    /// Entries without the UNK slot, in id order.
    pub fn word_entries(&self) -> &[String] {
        &self.words[1..]
    }

    pub fn char_entries(&self) -> &[char] {
        &self.chars[1..]
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len()
    }

    pub fn word_id(&self, w: &str) -> usize {
        self.word_index.get(w).copied().unwrap_or(UNK)
    }

    pub fn char_id(&self, c: char) -> usize {
        self.char_index.get(&c).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn encode(&self, u: &Utterance) -> Encoded {
        Encoded {
            words: u.tokens.iter().map(|t| self.word_id(t)).collect(),
            chars: u
                .tokens
                .iter()
                .map(|t| t.chars().map(|c| self.char_id(c)).collect())
                .collect(),
            label: u.label,
        }
    }
}

impl Encoded {
    /// Copy with each word and character id independently replaced by UNK
    /// with probability `rate`, so the UNK embeddings receive training.
    pub fn with_unk_noise<R: Rng>(&self, rate: f64, rng: &mut R) -> Encoded {
        let mut out = self.clone();
        if rate <= 0.0 {
            return out;
        }
        for w in &mut out.words {
            if rng.gen::<f64>() < rate {
                *w = UNK;
            }
        }
        for word in &mut out.chars {
            for c in word.iter_mut() {
                if rng.gen::<f64>() < rate {
                    *c = UNK;
                }
            }
        }
        out
    }
}

/// Read whitespace-separated word vectors: one word per line followed by
/// `dim` numbers. Lines of the wrong width are an error.
pub fn read_word_vectors(path: impl AsRef<Path>, dim: usize) -> Result<HashMap<String, Vec<f32>>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let values = fields
            .map(|f| f.parse::<f32>().map_err(|e| err(format!("{f:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != dim {
            return Err(err(format!("expected {dim} values, found {}", values.len())));
        }
        out.insert(word.to_lowercase(), values);
    }
    Ok(out)
}
