//! Classifier heads, losses, and the joint / separate model wiring.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::data::{Encoded, Vocab};
use crate::encoders::{xavier_uniform, BiLstmMasks, EncoderKind, ModelDims, UtteranceEncoder, WordEncoder};
use crate::error::{Error, Result};
use crate::numerics::{argmax, Graph, NodeId, ParamId, Params, Real, Tensor};

/// Index of the IND / OOD entries of the binary OOD head.
pub const OOD_HEAD_IND: usize = 0;
pub const OOD_HEAD_OOD: usize = 1;

/// Feed-forward head: one SeLU hidden layer, then output logits.
#[derive(Clone, Debug)]
pub struct Head {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl Head {
    pub fn new<F: Real, R: Rng + ?Sized>(
        params: &mut Params<F>,
        prefix: &str,
        input: usize,
        hidden: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            input,
            hidden,
            classes,
            w1: params.add(format!("{prefix}.w1"), xavier_uniform(rng, hidden, input))?,
            b1: params.add(format!("{prefix}.b1"), Tensor::zeros(&[hidden]))?,
            w2: params.add(format!("{prefix}.w2"), xavier_uniform(rng, classes, hidden))?,
            b2: params.add(format!("{prefix}.b2"), Tensor::zeros(&[classes]))?,
        })
    }

    pub fn output_bias(&self) -> ParamId {
        self.b2
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    pub fn logits<F: Real>(&self, g: &mut Graph<'_, F>, u: NodeId) -> Result<NodeId> {
        let w1 = g.param(self.w1);
        let b1 = g.param(self.b1);
        let w2 = g.param(self.w2);
        let b2 = g.param(self.b2);
        let z = g.matvec(w1, u)?;
        let z = g.add(z, b1)?;
        let a = g.selu(z);
        let out = g.matvec(w2, a)?;
        g.add(out, b2)
    }
}

/// `d = softmax(head(u))`.
pub fn domain_forward<F: Real>(g: &mut Graph<'_, F>, u: NodeId, head: &Head) -> Result<NodeId> {
    let z = head.logits(g, u)?;
    g.softmax(z)
}

/// Cross-entropy against a one-hot gold label: `-log d[gold]`.
pub fn loss_domain<F: Real>(d: &[F], gold: usize) -> F {
    -d[gold].ln()
}

/// Cross-entropy of the binary OOD head.
pub fn loss_ood<F: Real>(o: &[F], gold: usize) -> F {
    debug_assert_eq!(o.len(), 2);
    -o[gold].ln()
}

/// `L_D + alpha * L_O`.
pub fn loss_joint<F: Real>(domain: F, ood: F, alpha: F) -> F {
    domain + alpha * ood
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda < 2.0) {
        return Err(Error::Config(format!("class weight lambda {lambda} outside (0, 2)")));
    }
    Ok(())
}

/// Weight of one utterance: `lambda` for OOD-gold, `2 - lambda` for IND.
pub fn class_weight(is_ood: bool, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(if is_ood { lambda } else { 2.0 - lambda })
}

/// `(2 - lambda) Σ_IND L + lambda Σ_OOD L`.
pub fn loss_weighted_batch<F: Real>(losses: &[F], is_ood: &[bool], lambda: f64) -> Result<F> {
    check_lambda(lambda)?;
    if losses.len() != is_ood.len() {
        return Err(Error::ShapeMismatch {
            op: "loss_weighted_batch",
            shapes: vec![vec![losses.len()], vec![is_ood.len()]],
        });
    }
    let mut ind = F::zero();
    let mut ood = F::zero();
    for (&l, &o) in losses.iter().zip(is_ood) {
        if o {
            ood += l;
        } else {
            ind += l;
        }
    }
    Ok(F::of(2.0 - lambda) * ind + F::of(lambda) * ood)
}

/// Argmax class and its probability; ties go to the lowest class id.
pub fn predict_joint<F: Real>(d: &[F]) -> (usize, F) {
    let k = argmax(d);
    (k, d[k])
}

/// A decision with the confidence used for thresholding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scored {
    pub predicted: usize,
    pub confidence: f64,
}

/// Separate-model decision: the detector gates the IND-only classifier.
/// The confidence is the detector's IND probability.
pub fn predict_separate<F: Real>(ood_probs: &[F], ind_probs: &[F], ood_id: usize) -> Scored {
    let confidence = ood_probs[OOD_HEAD_IND].as_f64();
    let predicted = if argmax(ood_probs) == OOD_HEAD_OOD {
        ood_id
    } else {
        argmax(ind_probs)
    };
    Scored { predicted, confidence }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Joint,
    Separate,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Joint => "joint",
            Mode::Separate => "separate",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Mode::Joint),
            "separate" => Ok(Mode::Separate),
            _ => Err(Error::Config(format!("unknown mode {s:?} (joint|separate)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub dims: ModelDims,
    pub encoder: EncoderKind,
    pub classes: usize,
    pub ood_head: bool,
    pub num_words: usize,
    pub num_chars: usize,
}

/// Training targets for one utterance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Targets {
    pub main: usize,
    pub ood: Option<usize>,
}

/// Word encoder, utterance encoder, a main classification head and an
/// optional auxiliary IND/OOD head, with the parameters they own.
#[derive(Clone, Debug)]
pub struct Network<F> {
    pub spec: NetworkSpec,
    pub params: Params<F>,
    pub word: WordEncoder,
    pub utterance: UtteranceEncoder,
    pub main: Head,
    pub ood: Option<Head>,
}

impl<F: Real> Network<F> {
    pub fn new<R: Rng + ?Sized>(spec: NetworkSpec, prefix: &str, rng: &mut R) -> Result<Self> {
        if spec.classes < 2 {
            return Err(Error::Config(format!("a classifier needs at least 2 classes, got {}", spec.classes)));
        }
        let mut params = Params::new();
        let dims = spec.dims;
        let word = WordEncoder::new(
            &mut params,
            &format!("{prefix}.word"),
            &dims,
            spec.num_words,
            spec.num_chars,
            rng,
        )?;
        let utterance = UtteranceEncoder::new(spec.encoder, &mut params, &format!("{prefix}.utt"), &dims, rng)?;
        let u = utterance.output_dim();
        let main = Head::new(&mut params, &format!("{prefix}.main"), u, dims.head_hidden, spec.classes, rng)?;
        let ood = if spec.ood_head {
            Some(Head::new(&mut params, &format!("{prefix}.ood"), u, dims.head_hidden, 2, rng)?)
        } else {
            None
        };
        Ok(Self {
            spec,
            params,
            word,
            utterance,
            main,
            ood,
        })
    }

    /// Same structure in another precision.
    pub fn cast<G: Real>(&self) -> Network<G> {
        Network {
            spec: self.spec.clone(),
            params: self.params.cast(),
            word: self.word.clone(),
            utterance: self.utterance.clone(),
            main: self.main.clone(),
            ood: self.ood.clone(),
        }
    }

    /// Copy pretrained vectors into the word-embedding rows of matching
    /// vocabulary entries. Returns how many rows were set.
    pub fn set_word_vectors(&mut self, vocab: &Vocab, vectors: &HashMap<String, Vec<f32>>) -> Result<usize> {
        let dim = self.spec.dims.word_emb;
        let table = self.params.get_mut(self.word.word_emb);
        let mut found = 0;
        for (id, word) in vocab.word_entries().iter().enumerate() {
            if let Some(v) = vectors.get(word) {
                if v.len() != dim {
                    return Err(Error::Input(format!(
                        "vector for {word:?} has {} values, expected {dim}",
                        v.len()
                    )));
                }
                let row = (id + 1) * dim;
                for (dst, &src) in table.data_mut()[row..row + dim].iter_mut().zip(v) {
                    *dst = F::of(src as f64);
                }
                found += 1;
            }
        }
        Ok(found)
    }

    /// Sample the variational dropout masks for one training sequence.
    pub fn sample_masks<R: Rng + ?Sized>(&self, rng: &mut R, rate: f64) -> Result<Option<BiLstmMasks<F>>> {
        if rate == 0.0 {
            return Ok(None);
        }
        match self.utterance.mask_dims() {
            Some((input, hidden)) => Ok(Some(BiLstmMasks::sample(rng, input, hidden, rate)?)),
            None => Ok(None),
        }
    }

    pub fn encode<'a>(
        &'a self,
        g: &mut Graph<'a, F>,
        e: &Encoded,
        masks: Option<&BiLstmMasks<F>>,
    ) -> Result<NodeId> {
        if e.words.is_empty() {
            return Err(Error::Input("cannot encode an empty utterance".into()));
        }
        let words = e
            .words
            .iter()
            .zip(&e.chars)
            .map(|(&w, cs)| self.word.encode(g, w, cs))
            .collect::<Result<Vec<_>>>()?;
        self.utterance.encode(g, &words, masks)
    }

    /// `L_J = L_D + alpha * L_O` for one utterance. With `alpha == 0` the
    /// OOD head is not evaluated at all.
    pub fn loss<'a>(
        &'a self,
        g: &mut Graph<'a, F>,
        e: &Encoded,
        targets: Targets,
        alpha: F,
        masks: Option<&BiLstmMasks<F>>,
    ) -> Result<NodeId> {
        let u = self.encode(g, e, masks)?;
        let z = self.main.logits(g, u)?;
        let main = g.softmax_cross_entropy(z, targets.main)?;
        match (&self.ood, targets.ood) {
            (Some(head), Some(gold)) if alpha != F::zero() => {
                let zo = head.logits(g, u)?;
                let lo = g.softmax_cross_entropy(zo, gold)?;
                let lo = g.scale(lo, alpha);
                g.add(main, lo)
            }
            _ => Ok(main),
        }
    }

    /// Main-head distribution in evaluation mode (no dropout).
    pub fn probabilities(&self, e: &Encoded) -> Result<Vec<F>> {
        let mut g = Graph::new(&self.params);
        let u = self.encode(&mut g, e, None)?;
        let d = domain_forward(&mut g, u, &self.main)?;
        Ok(g.value(d).to_vec())
    }

    /// Auxiliary OOD-head distribution `[P(IND), P(OOD)]`.
    pub fn ood_probabilities(&self, e: &Encoded) -> Result<Option<Vec<F>>> {
        let Some(head) = &self.ood else {
            return Ok(None);
        };
        let mut g = Graph::new(&self.params);
        let u = self.encode(&mut g, e, None)?;
        let o = domain_forward(&mut g, u, head)?;
        Ok(Some(g.value(o).to_vec()))
    }
}

/// A trained decision maker: either one joint `(K+1)`-way network, or an
/// OOD detector gating a `K`-way IND classifier.
#[derive(Clone, Debug)]
pub enum Classifier {
    Joint(Network<f32>),
    Separate {
        detector: Network<f32>,
        classifier: Network<f32>,
    },
}

pub const JOINT_PREFIX: &str = "joint";
pub const DETECTOR_PREFIX: &str = "detector";
pub const IND_PREFIX: &str = "classifier";

/// Architecture of a [`Classifier`], independent of trained values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Architecture {
    pub mode: Mode,
    pub encoder: EncoderKind,
    pub dims: ModelDims,
    pub num_domains: usize,
    pub num_words: usize,
    pub num_chars: usize,
}

impl Classifier {
    pub fn new<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Self> {
        let spec = |classes, ood_head| NetworkSpec {
            dims: arch.dims,
            encoder: arch.encoder,
            classes,
            ood_head,
            num_words: arch.num_words,
            num_chars: arch.num_chars,
        };
        Ok(match arch.mode {
            Mode::Joint => Classifier::Joint(Network::new(spec(arch.num_domains + 1, true), JOINT_PREFIX, rng)?),
            Mode::Separate => Classifier::Separate {
                detector: Network::new(spec(2, false), DETECTOR_PREFIX, rng)?,
                classifier: Network::new(spec(arch.num_domains, false), IND_PREFIX, rng)?,
            },
        })
    }

    pub fn mode(&self) -> Mode {
        match self {
            Classifier::Joint(_) => Mode::Joint,
            Classifier::Separate { .. } => Mode::Separate,
        }
    }

    /// Class id reserved for OOD.
    pub fn ood_id(&self) -> usize {
        match self {
            Classifier::Joint(n) => n.spec.classes - 1,
            Classifier::Separate { classifier, .. } => classifier.spec.classes,
        }
    }

    pub fn networks(&self) -> Vec<&Network<f32>> {
        match self {
            Classifier::Joint(n) => vec![n],
            Classifier::Separate { detector, classifier } => vec![detector, classifier],
        }
    }

    pub fn networks_mut(&mut self) -> Vec<&mut Network<f32>> {
        match self {
            Classifier::Joint(n) => vec![n],
            Classifier::Separate { detector, classifier } => vec![detector, classifier],
        }
    }

    /// Raw (unthresholded) decision and confidence. The joint model decides
    /// from the domain head alone.
    pub fn score(&self, e: &Encoded) -> Result<Scored> {
        match self {
            Classifier::Joint(n) => {
                let d = n.probabilities(e)?;
                let (predicted, confidence) = predict_joint(&d);
                Ok(Scored {
                    predicted,
                    confidence: confidence.as_f64(),
                })
            }
            Classifier::Separate { detector, classifier } => {
                let o = detector.probabilities(e)?;
                let ind = if argmax(&o) == OOD_HEAD_OOD {
                    Vec::new()
                } else {
                    classifier.probabilities(e)?
                };
                Ok(predict_separate(&o, &ind, self.ood_id()))
            }
        }
    }

    /// All parameters with their global names, in canonical order.
    pub fn named_tensors(&self) -> Vec<(&str, &Tensor<f32>)> {
        self.networks()
            .into_iter()
            .flat_map(|n| n.params.iter().map(|(_, name, t)| (name, t)))
            .collect()
    }

    /// Overwrite every parameter from `(name, tensor)` pairs. Every
    /// parameter must be provided exactly once.
    pub fn load_tensors(&mut self, tensors: Vec<(String, Tensor<f32>)>) -> Result<()> {
        let expected: usize = self.networks().iter().map(|n| n.params.len()).sum();
        if tensors.len() != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, architecture has {expected}",
                tensors.len()
            )));
        }
        for (name, t) in tensors {
            let net = self
                .networks_mut()
                .into_iter()
                .find(|n| n.params.id(&name).is_some())
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
            net.params.assign(&name, t)?;
        }
        Ok(())
    }
}
