use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::{xavier_uniform, BiLstmMasks, LstmCell, ModelDims};
use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, ParamId, Params, Real, Tensor};

/// Filter widths of the three CNN banks.
pub const CNN_WIDTHS: [usize; 3] = [3, 4, 5];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EncoderKind {
    BiLstm,
    Sum,
    Cnn,
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::BiLstm => "bilstm",
            EncoderKind::Sum => "sum",
            EncoderKind::Cnn => "cnn",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilstm" => Ok(EncoderKind::BiLstm),
            "sum" => Ok(EncoderKind::Sum),
            "cnn" => Ok(EncoderKind::Cnn),
            _ => Err(Error::Config(format!("unknown encoder {s:?} (bilstm|sum|cnn)"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConvBank {
    pub width: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub enum UtteranceEncoder {
    BiLstm { forward: LstmCell, backward: LstmCell },
    Sum { dim: usize },
    Cnn { banks: Vec<ConvBank>, word_dim: usize, channels: usize },
}

impl UtteranceEncoder {
    pub fn new<F: Real, R: Rng + ?Sized>(
        kind: EncoderKind,
        params: &mut Params<F>,
        prefix: &str,
        dims: &ModelDims,
        rng: &mut R,
    ) -> Result<Self> {
        let d = dims.word_rep();
        Ok(match kind {
            EncoderKind::BiLstm => UtteranceEncoder::BiLstm {
                forward: LstmCell::new(params, &format!("{prefix}.word_fwd"), d, dims.word_hidden, rng)?,
                backward: LstmCell::new(params, &format!("{prefix}.word_bwd"), d, dims.word_hidden, rng)?,
            },
            EncoderKind::Sum => UtteranceEncoder::Sum { dim: d },
            EncoderKind::Cnn => {
                let c = dims.cnn_channels;
                let banks = CNN_WIDTHS
                    .iter()
                    .map(|&width| {
                        Ok(ConvBank {
                            width,
                            weight: params.add(
                                format!("{prefix}.conv{width}.w"),
                                xavier_uniform(rng, c, width * d),
                            )?,
                            bias: params.add(format!("{prefix}.conv{width}.b"), Tensor::zeros(&[c]))?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                UtteranceEncoder::Cnn {
                    banks,
                    word_dim: d,
                    channels: c,
                }
            }
        })
    }

    pub fn kind(&self) -> EncoderKind {
        match self {
            UtteranceEncoder::BiLstm { .. } => EncoderKind::BiLstm,
            UtteranceEncoder::Sum { .. } => EncoderKind::Sum,
            UtteranceEncoder::Cnn { .. } => EncoderKind::Cnn,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            UtteranceEncoder::BiLstm { forward, backward } => forward.hidden + backward.hidden,
            UtteranceEncoder::Sum { dim } => *dim,
            UtteranceEncoder::Cnn { banks, channels, .. } => banks.len() * channels,
        }
    }

    /// Dimensions a [`BiLstmMasks`] for this encoder must have, if it uses
    /// recurrent dropout at all.
    pub fn mask_dims(&self) -> Option<(usize, usize)> {
        match self {
            UtteranceEncoder::BiLstm { forward, .. } => Some((forward.input, forward.hidden)),
            _ => None,
        }
    }

    pub fn encode<F: Real>(
        &self,
        g: &mut Graph<'_, F>,
        words: &[NodeId],
        masks: Option<&BiLstmMasks<F>>,
    ) -> Result<NodeId> {
        match self {
            UtteranceEncoder::BiLstm { forward, backward } => encode_utterance_bilstm(g, forward, backward, words, masks),
            UtteranceEncoder::Sum { .. } => encode_utterance_sum(g, words),
            UtteranceEncoder::Cnn { banks, word_dim, .. } => encode_utterance_cnn(g, banks, *word_dim, words),
        }
    }
}

fn non_empty(words: &[NodeId]) -> Result<()> {
    if words.is_empty() {
        return Err(Error::Input("cannot encode an empty utterance".into()));
    }
    Ok(())
}

/// `u = f_n ⊕ b_1`.
pub fn encode_utterance_bilstm<F: Real>(
    g: &mut Graph<'_, F>,
    forward: &LstmCell,
    backward: &LstmCell,
    words: &[NodeId],
    masks: Option<&BiLstmMasks<F>>,
) -> Result<NodeId> {
    non_empty(words)?;
    let f = forward.run(g, words, false, masks.map(|m| &m.forward))?;
    let b = backward.run(g, words, true, masks.map(|m| &m.backward))?;
    g.concat(&[f, b])
}

/// `u = Σ v_i`.
pub fn encode_utterance_sum<F: Real>(g: &mut Graph<'_, F>, words: &[NodeId]) -> Result<NodeId> {
    non_empty(words)?;
    g.sum(words)
}

/// Convolution banks over the word sequence, max-over-time pooling per
/// bank, pooled vectors concatenated. Sequences shorter than the widest
/// filter are right-padded with zero vectors.
pub fn encode_utterance_cnn<F: Real>(
    g: &mut Graph<'_, F>,
    banks: &[ConvBank],
    word_dim: usize,
    words: &[NodeId],
) -> Result<NodeId> {
    non_empty(words)?;
    let widest = banks.iter().map(|b| b.width).max().unwrap_or(1);
    let mut rows = words.to_vec();
    if rows.len() < widest {
        let pad = g.vector(vec![F::zero(); word_dim]);
        rows.resize(widest, pad);
    }
    let seq = g.stack(&rows)?;
    let mut pooled = Vec::with_capacity(banks.len());
    for bank in banks {
        let w = g.param(bank.weight);
        let b = g.param(bank.bias);
        let conv = g.conv1d(seq, w, b, bank.width)?;
        pooled.push(g.max_over_time(conv)?);
    }
    g.concat(&pooled)
}
