//! Deterministic synthetic corpus built from a template grammar.
//!
//! Each in-domain (IND) domain is a set of carrier templates with slots
//! filled from domain-specific word lists. Out-of-domain (OOD) utterances
//! come from three sources in roughly equal shares: a grammar whose
//! content words appear in no IND domain, IND sentences with their tokens
//! reordered, and IND sentences with character-level corruption of a word
//! (a stand-in for recognition errors).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::{Dataset, LabelMap, Utterance, OOD_LABEL};
use crate::error::{Error, Result};

/// The grammar shipped with the crate.
pub const BUILTIN_GRAMMAR: &str = include_str!("../../data/grammar.toml");

/// Consecutive rejected samples after which a grammar counts as exhausted.
const MAX_REJECTIONS: usize = 20_000;

#[derive(Deserialize)]
struct RawGrammar {
    function_words: Vec<String>,
    ood: RawDomain,
    domain: Vec<RawDomain>,
}

#[derive(Deserialize)]
struct RawDomain {
    #[serde(default)]
    name: String,
    templates: Vec<String>,
    slots: BTreeMap<String, Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Part {
    Word(String),
    Slot(usize),
}

/// One domain: templates over slots whose values may span several tokens.
#[derive(Clone, Debug)]
pub struct DomainGrammar {
    pub name: String,
    templates: Vec<Vec<Part>>,
    slots: Vec<Vec<Vec<String>>>,
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

impl DomainGrammar {
    fn compile(raw: RawDomain) -> Result<Self> {
        let bad = |msg: String| Error::Generator(format!("domain {:?}: {msg}", raw.name));
        if raw.templates.is_empty() {
            return Err(bad("no templates".into()));
        }
        let names: Vec<&String> = raw.slots.keys().collect();
        let mut slots = Vec::new();
        for (name, values) in &raw.slots {
            let values: Vec<Vec<String>> = values.iter().map(|v| words(v)).collect();
            if values.is_empty() || values.iter().any(Vec::is_empty) {
                return Err(bad(format!("slot {name:?} has an empty value list or value")));
            }
            slots.push(values);
        }
        let mut templates = Vec::new();
        for t in &raw.templates {
            let mut parts = Vec::new();
            for tok in t.split_whitespace() {
                if let Some(slot) = tok.strip_prefix('{').and_then(|s| s.strip_suffix('}')) {
                    let i = names
                        .iter()
                        .position(|n| n.as_str() == slot)
                        .ok_or_else(|| bad(format!("template {t:?} uses undefined slot {slot:?}")))?;
                    parts.push(Part::Slot(i));
                } else {
                    parts.push(Part::Word(tok.to_lowercase()));
                }
            }
            if parts.is_empty() {
                return Err(bad("empty template".into()));
            }
            templates.push(parts);
        }
        Ok(Self {
            name: raw.name,
            templates,
            slots,
        })
    }

    /// Every token the grammar can emit.
    pub fn vocabulary(&self) -> BTreeSet<String> {
        let mut v = BTreeSet::new();
        for t in &self.templates {
            for p in t {
                if let Part::Word(w) = p {
                    v.insert(w.clone());
                }
            }
        }
        for values in &self.slots {
            for value in values {
                v.extend(value.iter().cloned());
            }
        }
        v
    }

    /// Upper bound on the number of distinct sentences.
    pub fn capacity(&self) -> f64 {
        self.templates
            .iter()
            .map(|t| {
                t.iter()
                    .map(|p| match p {
                        Part::Word(_) => 1.0,
                        Part::Slot(i) => self.slots[*i].len() as f64,
                    })
                    .product::<f64>()
            })
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<String> {
        let t = &self.templates[rng.gen_range(0..self.templates.len())];
        let mut out = Vec::new();
        for p in t {
            match p {
                Part::Word(w) => out.push(w.clone()),
                Part::Slot(i) => {
                    let values = &self.slots[*i];
                    out.extend(values[rng.gen_range(0..values.len())].iter().cloned());
                }
            }
        }
        out
    }

    /// Whether some template derives exactly this token sequence.
    pub fn derives(&self, tokens: &[String]) -> bool {
        self.templates.iter().any(|t| self.matches(tokens, t))
    }

    fn matches(&self, tokens: &[String], parts: &[Part]) -> bool {
        let Some((first, rest)) = parts.split_first() else {
            return tokens.is_empty();
        };
        match first {
            Part::Word(w) => tokens.first() == Some(w) && self.matches(&tokens[1..], rest),
            Part::Slot(i) => self.slots[*i]
                .iter()
                .any(|v| tokens.starts_with(v) && self.matches(&tokens[v.len()..], rest)),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Grammar {
    pub function_words: BTreeSet<String>,
    pub domains: Vec<DomainGrammar>,
    pub ood: DomainGrammar,
}

impl Grammar {
    pub fn builtin() -> Result<Self> {
        Self::from_toml(BUILTIN_GRAMMAR)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Parse and validate: slot references resolve, domain names are unique,
    /// and no content word is shared between two domains (the OOD grammar
    /// included). Function words may appear anywhere.
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawGrammar = toml::from_str(text).map_err(|e| Error::Generator(format!("grammar: {e}")))?;
        let function_words: BTreeSet<String> = raw.function_words.iter().map(|w| w.to_lowercase()).collect();
        let mut ood_raw = raw.ood;
        ood_raw.name = OOD_LABEL.to_string();
        let ood = DomainGrammar::compile(ood_raw)?;
        let mut domains = Vec::new();
        let mut seen = HashSet::new();
        for d in raw.domain {
            if d.name.is_empty() || d.name == OOD_LABEL || d.name.contains(char::is_whitespace) {
                return Err(Error::Generator(format!("invalid domain name {:?}", d.name)));
            }
            if !seen.insert(d.name.clone()) {
                return Err(Error::Generator(format!("duplicate domain {:?}", d.name)));
            }
            domains.push(DomainGrammar::compile(d)?);
        }
        let g = Self {
            function_words,
            domains,
            ood,
        };
        let mut owner: BTreeMap<String, &str> = BTreeMap::new();
        for d in g.domains.iter().chain(std::iter::once(&g.ood)) {
            for w in d.vocabulary().difference(&g.function_words) {
                if let Some(other) = owner.insert(w.clone(), &d.name) {
                    return Err(Error::Generator(format!(
                        "content word {w:?} appears in both {other} and {}",
                        d.name
                    )));
                }
            }
        }
        Ok(g)
    }

    /// All tokens the IND domains can emit, function words included.
    pub fn ind_vocabulary(&self) -> BTreeSet<String> {
        let mut v = self.function_words.clone();
        for d in &self.domains {
            v.extend(d.vocabulary());
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub num_domains: usize,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub ood_ratio: f64,
    pub seed: u64,
}

/// Where an OOD utterance came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum OodSource {
    Grammar,
    Shuffled,
    Corrupted,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
    /// `(split name, source, count)` for every OOD source.
    pub ood_counts: Vec<(&'static str, OodSource, usize)>,
    pub config: SyntheticConfig,
}

impl Corpus {
    pub fn manifest(&self) -> String {
        let c = &self.config;
        let mut m = String::new();
        let _ = writeln!(m, "seed = {}", c.seed);
        let _ = writeln!(m, "num_domains = {}", c.num_domains);
        let _ = writeln!(m, "ood_ratio = {}", c.ood_ratio);
        let _ = writeln!(m, "domains = {}", self.train.labels.domains().join(","));
        for (name, d) in [("train", &self.train), ("dev", &self.dev), ("test", &self.test)] {
            let _ = writeln!(m, "{name}_total = {}", d.len());
            let _ = writeln!(m, "{name}_ood = {}", d.count_ood());
            for &(split, source, n) in &self.ood_counts {
                if split == name {
                    let _ = writeln!(m, "{name}_ood_{} = {n}", format!("{source:?}").to_lowercase());
                }
            }
        }
        m
    }

    /// Write `train.jsonl`, `dev.jsonl`, `test.jsonl` and `manifest`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.train.save(dir.join("train.jsonl"))?;
        self.dev.save(dir.join("dev.jsonl"))?;
        self.test.save(dir.join("test.jsonl"))?;
        fs::write(dir.join("manifest"), self.manifest())?;
        Ok(())
    }
}

fn corrupt_word<R: Rng + ?Sized>(word: &str, rng: &mut R) -> String {
    const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
    let mut cs: Vec<char> = word.chars().collect();
    let letter = |rng: &mut R| LETTERS[rng.gen_range(0..LETTERS.len())] as char;
    match rng.gen_range(0..4) {
        0 => {
            let i = rng.gen_range(0..cs.len());
            cs[i] = letter(rng);
        }
        1 if cs.len() > 1 => {
            cs.remove(rng.gen_range(0..cs.len()));
        }
        2 if cs.len() > 1 => {
            let i = rng.gen_range(0..cs.len() - 1);
            cs.swap(i, i + 1);
        }
        _ => {
            let i = rng.gen_range(0..=cs.len());
            cs.insert(i, letter(rng));
        }
    }
    cs.into_iter().collect()
}

struct Generator<'g> {
    grammar: &'g Grammar,
    domains: Vec<&'g DomainGrammar>,
    ind_vocab: BTreeSet<String>,
    seen: HashSet<String>,
    rng: ChaCha8Rng,
}

impl Generator<'_> {
    fn is_ind(&self, tokens: &[String]) -> bool {
        self.domains.iter().any(|d| d.derives(tokens))
    }

    fn unique<F>(&mut self, what: &str, mut sample: F) -> Result<String>
    where
        F: FnMut(&mut Self) -> Option<Vec<String>>,
    {
        for _ in 0..MAX_REJECTIONS {
            if let Some(tokens) = sample(self) {
                let text = tokens.join(" ");
                if self.seen.insert(text.clone()) {
                    return Ok(text);
                }
            }
        }
        Err(Error::Generator(format!(
            "grammar capacity exhausted while sampling {what}; request fewer utterances"
        )))
    }

    fn ind(&mut self, d: usize) -> Result<String> {
        let domain = self.domains[d];
        self.unique(&domain.name, |g| Some(domain.sample(&mut g.rng)))
    }

    fn ood(&mut self, source: OodSource) -> Result<String> {
        match source {
            OodSource::Grammar => self.unique("OOD grammar", |g| {
                let t = g.grammar.ood.sample(&mut g.rng);
                (!g.is_ind(&t)).then_some(t)
            }),
            OodSource::Shuffled => self.unique("shuffled OOD", |g| {
                let d = g.rng.gen_range(0..g.domains.len());
                let mut t = g.domains[d].sample(&mut g.rng);
                if t.len() < 2 {
                    return None;
                }
                // Half rotations, half arbitrary permutations.
                if g.rng.gen_bool(0.5) {
                    let k = g.rng.gen_range(1..t.len());
                    t.rotate_left(k);
                } else {
                    t.shuffle(&mut g.rng);
                }
                (!g.is_ind(&t)).then_some(t)
            }),
            OodSource::Corrupted => self.unique("corrupted OOD", |g| {
                let d = g.rng.gen_range(0..g.domains.len());
                let mut t = g.domains[d].sample(&mut g.rng);
                let edits = if g.rng.gen_bool(0.3) { 2 } else { 1 };
                for _ in 0..edits {
                    let i = g.rng.gen_range(0..t.len());
                    t[i] = corrupt_word(&t[i], &mut g.rng);
                }
                t.iter().any(|w| !g.ind_vocab.contains(w)).then_some(t)
            }),
        }
    }
}

fn split_evenly(total: usize, parts: usize) -> Vec<usize> {
    (0..parts).map(|i| total / parts + usize::from(i < total % parts)).collect()
}

/// Generate train/dev/test splits. The first `num_domains` grammar domains
/// are used. All utterances are distinct strings across the three splits.
pub fn generate_synthetic(grammar: &Grammar, config: &SyntheticConfig) -> Result<Corpus> {
    let c = config;
    if c.num_domains < 2 {
        return Err(Error::Config(format!("num_domains must be at least 2, got {}", c.num_domains)));
    }
    if c.num_domains > grammar.domains.len() {
        return Err(Error::Config(format!(
            "num_domains {} exceeds the {} domains in the grammar",
            c.num_domains,
            grammar.domains.len()
        )));
    }
    if !(c.ood_ratio > 0.0 && c.ood_ratio < 1.0) {
        return Err(Error::Config(format!("ood_ratio {} outside (0, 1)", c.ood_ratio)));
    }
    if c.train_size == 0 || c.dev_size == 0 || c.test_size == 0 {
        return Err(Error::Config("split sizes must be positive".into()));
    }
    let domains: Vec<&DomainGrammar> = grammar.domains[..c.num_domains].iter().collect();
    let labels = LabelMap::new(domains.iter().map(|d| d.name.as_str()))?;

    let sizes = [("train", c.train_size), ("dev", c.dev_size), ("test", c.test_size)];
    let plan: Vec<(usize, Vec<usize>)> = sizes
        .iter()
        .map(|&(_, n)| {
            let ood = (n as f64 * c.ood_ratio).round() as usize;
            (ood, split_evenly(n - ood, c.num_domains))
        })
        .collect();
    for (i, d) in domains.iter().enumerate() {
        let needed: usize = plan.iter().map(|(_, per)| per[i]).sum();
        if needed as f64 > d.capacity() {
            return Err(Error::Generator(format!(
                "domain {} can produce at most {} distinct utterances, {needed} requested",
                d.name,
                d.capacity()
            )));
        }
    }

    let mut gen = Generator {
        grammar,
        ind_vocab: grammar.ind_vocabulary(),
        domains,
        seen: HashSet::new(),
        rng: ChaCha8Rng::seed_from_u64(c.seed),
    };
    let mut splits = Vec::new();
    let mut ood_counts = Vec::new();
    for (&(name, _), (n_ood, per_domain)) in sizes.iter().zip(&plan) {
        let mut pairs: Vec<(String, usize)> = Vec::new();
        for (d, &n) in per_domain.iter().enumerate() {
            for _ in 0..n {
                let domain = labels.id(&gen.domains[d].name).expect("label exists");
                pairs.push((gen.ind(d)?, domain));
            }
        }
        let sources = [OodSource::Grammar, OodSource::Shuffled, OodSource::Corrupted];
        for (source, n) in sources.into_iter().zip(split_evenly(*n_ood, 3)) {
            for _ in 0..n {
                pairs.push((gen.ood(source)?, labels.ood_id()));
            }
            ood_counts.push((name, source, n));
        }
        pairs.shuffle(&mut gen.rng);
        let utterances = pairs
            .iter()
            .map(|(text, label)| Utterance::new(text, *label))
            .collect::<Result<Vec<_>>>()?;
        splits.push(Dataset {
            utterances,
            labels: labels.clone(),
        });
    }
    let test = splits.pop().expect("three splits");
    let dev = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    Ok(Corpus {
        train,
        dev,
        test,
        ood_counts,
        config: c.clone(),
    })
}
