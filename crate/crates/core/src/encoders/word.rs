use rand::Rng;

use super::{embedding_table, LstmCell, ModelDims};
use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, ParamId, Params, Real};

/// `v = f_last ⊕ b_first ⊕ e_w`: the forward char-LSTM state after the
/// last character, the backward char-LSTM state after the first character,
/// and the word embedding.
pub fn encode_word<F: Real>(
    g: &mut Graph<'_, F>,
    char_emb: ParamId,
    forward: &LstmCell,
    backward: &LstmCell,
    word_emb: ParamId,
    word: usize,
    chars: &[usize],
) -> Result<NodeId> {
    if chars.is_empty() {
        return Err(Error::Input("cannot encode an empty word".into()));
    }
    let embedded = chars
        .iter()
        .map(|&c| g.lookup(char_emb, c))
        .collect::<Result<Vec<_>>>()?;
    let f = forward.run(g, &embedded, false, None)?;
    let b = backward.run(g, &embedded, true, None)?;
    let e = g.lookup(word_emb, word)?;
    g.concat(&[f, b, e])
}

#[derive(Clone, Debug)]
pub struct WordEncoder {
    pub char_emb: ParamId,
    pub word_emb: ParamId,
    pub char_forward: LstmCell,
    pub char_backward: LstmCell,
}

impl WordEncoder {
    pub fn new<F: Real, R: Rng + ?Sized>(
        params: &mut Params<F>,
        prefix: &str,
        dims: &ModelDims,
        num_words: usize,
        num_chars: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let char_emb = params.add(
            format!("{prefix}.char_emb"),
            embedding_table(rng, num_chars, dims.char_emb),
        )?;
        let word_emb = params.add(
            format!("{prefix}.word_emb"),
            embedding_table(rng, num_words, dims.word_emb),
        )?;
        let char_forward = LstmCell::new(params, &format!("{prefix}.char_fwd"), dims.char_emb, dims.char_hidden, rng)?;
        let char_backward = LstmCell::new(params, &format!("{prefix}.char_bwd"), dims.char_emb, dims.char_hidden, rng)?;
        Ok(Self {
            char_emb,
            word_emb,
            char_forward,
            char_backward,
        })
    }

    pub fn encode<F: Real>(&self, g: &mut Graph<'_, F>, word: usize, chars: &[usize]) -> Result<NodeId> {
        encode_word(
            g,
            self.char_emb,
            &self.char_forward,
            &self.char_backward,
            self.word_emb,
            word,
            chars,
        )
    }
}
