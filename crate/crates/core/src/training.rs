//! Epoch loop with dynamic class weighting and best-epoch selection.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Encoded, LabelMap, Vocab};
use crate::encoders::{EncoderKind, ModelDims};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, score_all};
use crate::model::{class_weight, Architecture, Classifier, Mode, Network, Targets, OOD_HEAD_IND, OOD_HEAD_OOD};
use crate::numerics::{clip_gradients, Adam, AdamConfig, Graph, GradStore};

/// Distance kept between λ and the ends of (0, 2).
pub const LAMBDA_MARGIN: f64 = 1e-6;
pub const INITIAL_LAMBDA: f64 = 1.0;
pub const INITIAL_GAMMA: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub clip: f64,
    pub alpha: f64,
    pub mode: Mode,
    pub encoder: EncoderKind,
    pub dcw: bool,
    pub batch_size: usize,
    pub seed: u64,
    pub target_far: f64,
    pub dropout: f64,
    pub unk_rate: f64,
    pub min_count: usize,
    pub dims: ModelDims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 0.001,
            clip: 5.0,
            alpha: 0.005,
            mode: Mode::Joint,
            encoder: EncoderKind::BiLstm,
            dcw: true,
            batch_size: 32,
            seed: 1,
            target_far: 0.05,
            dropout: 0.2,
            unk_rate: 1e-4,
            min_count: 2,
            dims: ModelDims::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_switch(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        _ => Err(Error::Config(format!("invalid value {value:?} for {key} (on|off)"))),
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 19] = [
        "epochs",
        "learning_rate",
        "clip",
        "alpha",
        "mode",
        "encoder",
        "dcw",
        "batch_size",
        "seed",
        "target_far",
        "dropout",
        "unk_rate",
        "min_count",
        "char_emb",
        "char_hidden",
        "word_emb",
        "word_hidden",
        "head_hidden",
        "cnn_channels",
    ];

    /// Set one field from its textual form. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "clip" => self.clip = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "mode" => self.mode = value.parse()?,
            "encoder" => self.encoder = value.parse()?,
            "dcw" => self.dcw = parse_switch(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "target_far" => self.target_far = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "unk_rate" => self.unk_rate = parse(key, value)?,
            "min_count" => self.min_count = parse(key, value)?,
            "char_emb" => self.dims.char_emb = parse(key, value)?,
            "char_hidden" => self.dims.char_hidden = parse(key, value)?,
            "word_emb" => self.dims.word_emb = parse(key, value)?,
            "word_hidden" => self.dims.word_hidden = parse(key, value)?,
            "head_hidden" => self.dims.head_hidden = parse(key, value)?,
            "cnn_channels" => self.dims.cnn_channels = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// All fields as `(key, value)` pairs, in [`TrainConfig::KEYS`] order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let d = &self.dims;
        let values = [
            self.epochs.to_string(),
            self.learning_rate.to_string(),
            self.clip.to_string(),
            self.alpha.to_string(),
            self.mode.to_string(),
            self.encoder.to_string(),
            (if self.dcw { "on" } else { "off" }).to_string(),
            self.batch_size.to_string(),
            self.seed.to_string(),
            self.target_far.to_string(),
            self.dropout.to_string(),
            self.unk_rate.to_string(),
            self.min_count.to_string(),
            d.char_emb.to_string(),
            d.char_hidden.to_string(),
            d.word_emb.to_string(),
            d.word_hidden.to_string(),
            d.head_hidden.to_string(),
            d.cnn_channels.to_string(),
        ];
        Self::KEYS.into_iter().zip(values).collect()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut config = Self::default();
        for (k, v) in pairs {
            config.set(k, v)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 {
            return fail("epochs must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.clip > 0.0) {
            return fail(format!("clip {} must be positive", self.clip));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha {} must be non-negative", self.alpha));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.target_far) {
            return fail(format!("target_far {} outside [0, 1]", self.target_far));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(0.0..1.0).contains(&self.unk_rate) {
            return fail(format!("unk_rate {} outside [0, 1)", self.unk_rate));
        }
        if self.min_count == 0 {
            return fail("min_count must be at least 1".into());
        }
        let d = &self.dims;
        if [d.char_emb, d.char_hidden, d.word_emb, d.word_hidden, d.head_hidden, d.cnn_channels].contains(&0) {
            return fail("model dimensions must be positive".into());
        }
        Ok(())
    }

    /// Separate mode always trains with α = 1 (there is no auxiliary head).
    pub fn effective_alpha(&self) -> f64 {
        match self.mode {
            Mode::Joint => self.alpha,
            Mode::Separate => 1.0,
        }
    }

    pub fn architecture(&self, labels: &LabelMap, vocab: &Vocab) -> Architecture {
        Architecture {
            mode: self.mode,
            encoder: self.encoder,
            dims: self.dims,
            num_domains: labels.num_domains(),
            num_words: vocab.num_words(),
            num_chars: vocab.num_chars(),
        }
    }
}

/// Dynamic class-weighting controller.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DcwState {
    pub lambda: f64,
    pub gamma: f64,
    pub satisfied: bool,
    pub target: f64,
}

impl DcwState {
    pub fn new(target: f64) -> Self {
        Self {
            lambda: INITIAL_LAMBDA,
            gamma: INITIAL_GAMMA,
            satisfied: false,
            target,
        }
    }
}

/// End-of-epoch update from the dev FAR. On a satisficing epoch γ halves
/// first (only on a false→true transition) and then λ decreases.
pub fn dcw_update(state: DcwState, far: f64) -> DcwState {
    let mut s = state;
    if far > s.target {
        s.lambda = (s.lambda + s.gamma).min(2.0 - LAMBDA_MARGIN);
        s.satisfied = false;
    } else {
        if !s.satisfied {
            s.gamma /= 2.0;
            s.satisfied = true;
        }
        s.lambda = (s.lambda - s.gamma).max(LAMBDA_MARGIN);
    }
    s
}

/// One completed epoch. λ, γ and `satisfied` are the controller state after
/// the end-of-epoch update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_acc: f64,
    pub dev_far: f64,
    pub dev_frr: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub satisfied: bool,
}

pub const LOG_HEADER: &str = "epoch,train_loss,dev_acc,dev_far,dev_frr,lambda,gamma,satisfied";

impl EpochRecord {
    /// CSV line; floats use the shortest text that parses back exactly.
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.train_loss,
            self.dev_acc,
            self.dev_far,
            self.dev_frr,
            self.lambda,
            self.gamma,
            self.satisfied
        )
    }
}

pub fn format_log(records: &[EpochRecord]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}", r.to_csv());
    }
    out
}

pub fn parse_log(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(LOG_HEADER) {
        return Err(Error::Input("epoch log does not start with the expected header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(Error::Input(format!("epoch log line {}: expected 8 fields", i + 2)));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::Input(format!("epoch log line {}: bad number {s:?}", i + 2)))
            };
            Ok(EpochRecord {
                epoch: num(f[0])? as usize,
                train_loss: num(f[1])?,
                dev_acc: num(f[2])?,
                dev_far: num(f[3])?,
                dev_frr: num(f[4])?,
                lambda: num(f[5])?,
                gamma: num(f[6])?,
                satisfied: f[7]
                    .parse()
                    .map_err(|_| Error::Input(format!("epoch log line {}: bad flag", i + 2)))?,
            })
        })
        .collect()
}

/// Index of the best record: among epochs with dev FAR ≤ `target`, the
/// highest dev accuracy (earliest on ties); otherwise the lowest dev FAR
/// (higher accuracy, then earliest, on ties).
pub fn select_best_epoch(records: &[EpochRecord], target: f64) -> Option<usize> {
    let satisficing = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.dev_far <= target)
        .fold(None, |best: Option<(usize, &EpochRecord)>, (i, r)| match best {
            Some((_, b)) if b.dev_acc >= r.dev_acc => best,
            _ => Some((i, r)),
        });
    if let Some((i, _)) = satisficing {
        return Some(i);
    }
    records
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, &EpochRecord)>, (i, r)| match best {
            Some((_, b)) if b.dev_far < r.dev_far || (b.dev_far == r.dev_far && b.dev_acc >= r.dev_acc) => best,
            _ => Some((i, r)),
        })
        .map(|(i, _)| i)
}

/// Optimizer state for one network.
struct Learner {
    adam: Adam<f32>,
    grads: GradStore<f32>,
}

impl Learner {
    fn new(net: &Network<f32>, lr: f64) -> Self {
        let config = AdamConfig {
            learning_rate: lr,
            ..AdamConfig::default()
        };
        Self {
            adam: Adam::new(config, &net.params),
            grads: GradStore::for_params(&net.params),
        }
    }
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Classifier,
    pub best_epoch: usize,
    pub records: Vec<EpochRecord>,
    pub vocab: Vocab,
    pub labels: LabelMap,
}

/// Epoch-at-a-time trainer, so callers can observe the schedule as it
/// runs. [`train`] drives it for the configured number of epochs.
pub struct Trainer {
    config: TrainConfig,
    vocab: Vocab,
    labels: LabelMap,
    model: Classifier,
    learners: Vec<Learner>,
    dcw: DcwState,
    rng: ChaCha8Rng,
    train: Vec<Encoded>,
    dev: Vec<Encoded>,
    records: Vec<EpochRecord>,
    snapshots: Vec<Classifier>,
}

impl Trainer {
    pub fn new(config: TrainConfig, train: &Dataset, dev: &Dataset) -> Result<Self> {
        config.validate()?;
        if train.is_empty() || dev.is_empty() {
            return Err(Error::Config("train and dev sets must be non-empty".into()));
        }
        if train.labels != dev.labels {
            return Err(Error::Config("train and dev label maps differ".into()));
        }
        let dev_ood = dev.count_ood();
        if dev_ood == 0 || dev_ood == dev.len() {
            return Err(Error::Config(
                "dev set needs both OOD and IND utterances (FAR/FRR undefined otherwise)".into(),
            ));
        }
        if config.mode == Mode::Separate && train.count_ood() == train.len() {
            return Err(Error::Config("separate mode needs IND training utterances".into()));
        }
        let labels = train.labels.clone();
        let vocab = Vocab::build(train, config.min_count);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = Classifier::new(&config.architecture(&labels, &vocab), &mut rng)?;
        let learners = model
            .networks()
            .into_iter()
            .map(|n| Learner::new(n, config.learning_rate))
            .collect();
        Ok(Self {
            dcw: DcwState::new(config.target_far),
            train: train.utterances.iter().map(|u| vocab.encode(u)).collect(),
            dev: dev.utterances.iter().map(|u| vocab.encode(u)).collect(),
            config,
            vocab,
            labels,
            model,
            learners,
            rng,
            records: Vec::new(),
            snapshots: Vec::new(),
        })
    }

    /// Overwrite word-embedding rows with pretrained vectors; returns the
    /// number of vocabulary words found.
    pub fn init_word_vectors(&mut self, vectors: &HashMap<String, Vec<f32>>) -> Result<usize> {
        let mut found = 0;
        for net in self.model.networks_mut() {
            found = net.set_word_vectors(&self.vocab, vectors)?;
        }
        Ok(found)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Classifier {
        &self.model
    }

    pub fn dcw(&self) -> DcwState {
        self.dcw
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn labels(&self) -> &LabelMap {
        &self.labels
    }

    /// Train one epoch, evaluate on dev, update the controller and return
    /// the new record.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.records.len() + 1;
        let train_loss = self.train_epoch(epoch)?;
        let outcomes = score_all(&self.model, &self.dev)?;
        let report = evaluate(&outcomes, self.model.ood_id(), 0.0)?;
        if self.config.dcw {
            self.dcw = dcw_update(self.dcw, report.far);
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            dev_acc: report.accuracy,
            dev_far: report.far,
            dev_frr: report.frr,
            lambda: self.dcw.lambda,
            gamma: self.dcw.gamma,
            satisfied: self.dcw.satisfied,
        };
        self.records.push(record);
        self.snapshots.push(self.model.clone());
        Ok(record)
    }

    /// One shuffled pass; returns the mean weighted per-utterance loss
    /// (summed over both networks in separate mode).
    fn train_epoch(&mut self, epoch: usize) -> Result<f64> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);
        let lambda = self.dcw.lambda;
        let ood_id = self.model.ood_id();
        let cfg = &self.config;
        let alpha = cfg.effective_alpha() as f32;
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let fail = |what: &str| Error::NonFinite(format!("{what} at epoch {epoch}, batch {}", b + 1));
            for l in &mut self.learners {
                l.grads.clear();
            }
            for &i in batch {
                let e = self.train[i].with_unk_noise(cfg.unk_rate, &mut self.rng);
                let is_ood = e.label == ood_id;
                match &self.model {
                    Classifier::Joint(net) => {
                        let targets = Targets {
                            main: e.label,
                            ood: Some(if is_ood { OOD_HEAD_OOD } else { OOD_HEAD_IND }),
                        };
                        let w = class_weight(is_ood, lambda)?;
                        let loss = step(net, &mut self.learners[0].grads, &e, targets, alpha, w, cfg, &mut self.rng)
                            .map_err(|err| annotate(err, epoch, b))?;
                        total += w * loss;
                    }
                    Classifier::Separate { detector, classifier } => {
                        let targets = Targets {
                            main: if is_ood { OOD_HEAD_OOD } else { OOD_HEAD_IND },
                            ood: None,
                        };
                        let w = class_weight(is_ood, lambda)?;
                        let loss = step(detector, &mut self.learners[0].grads, &e, targets, alpha, w, cfg, &mut self.rng)
                            .map_err(|err| annotate(err, epoch, b))?;
                        total += w * loss;
                        if !is_ood {
                            let targets = Targets {
                                main: e.label,
                                ood: None,
                            };
                            let loss =
                                step(classifier, &mut self.learners[1].grads, &e, targets, alpha, 1.0, cfg, &mut self.rng)
                                    .map_err(|err| annotate(err, epoch, b))?;
                            total += loss;
                        }
                    }
                }
            }
            for (l, net) in self.learners.iter_mut().zip(self.model.networks_mut()) {
                let norm = clip_gradients(&mut l.grads, cfg.clip);
                if !norm.is_finite() {
                    return Err(fail("gradient norm"));
                }
                l.adam.update(&mut net.params, &l.grads)?;
            }
        }
        Ok(total / self.train.len() as f64)
    }

    /// Select the best epoch and hand back its model.
    pub fn finish(mut self) -> Result<TrainOutcome> {
        let best = select_best_epoch(&self.records, self.config.target_far)
            .ok_or_else(|| Error::Config("no epochs were run".into()))?;
        Ok(TrainOutcome {
            model: self.snapshots.swap_remove(best),
            best_epoch: best + 1,
            records: self.records,
            vocab: self.vocab,
            labels: self.labels,
        })
    }
}

fn annotate(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::NonFinite(what) => Error::NonFinite(format!("{what} at epoch {epoch}, batch {}", batch + 1)),
        other => other,
    }
}

/// Forward and weighted backward for one utterance; gradients accumulate
/// into `grads`. Returns the unweighted loss.
#[allow(clippy::too_many_arguments)]
fn step(
    net: &Network<f32>,
    grads: &mut GradStore<f32>,
    e: &Encoded,
    targets: Targets,
    alpha: f32,
    weight: f64,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let masks = net.sample_masks(rng, cfg.dropout)?;
    let mut g = Graph::new(&net.params);
    let loss = net.loss(&mut g, e, targets, alpha, masks.as_ref())?;
    let value = g.scalar(loss) as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    g.backward_into(loss, weight as f32, grads)?;
    Ok(value)
}

/// Run the full configured schedule and return the best epoch's model.
pub fn train(config: TrainConfig, train: &Dataset, dev: &Dataset) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config, train, dev)?;
    for _ in 0..trainer.config.epochs {
        trainer.run_epoch()?;
    }
    trainer.finish()
}
