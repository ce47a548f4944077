//! Binary checkpoint: magic, version, length-prefixed text manifest, then
//! little-endian `f32` parameter payload.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{LabelMap, Vocab};
use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::numerics::Tensor;
use crate::training::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"JOODCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to rebuild a trained classifier.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub labels: LabelMap,
    pub vocab: Vocab,
    pub model: Classifier,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = String::new();
        let config = self.config.to_pairs();
        let _ = writeln!(manifest, "config {}", config.len());
        for (k, v) in &config {
            let _ = writeln!(manifest, "{k} = {v}");
        }
        let domains = self.labels.domains();
        let _ = writeln!(manifest, "labels {}", domains.len());
        for d in domains {
            let _ = writeln!(manifest, "{d}");
        }
        let words = self.vocab.word_entries();
        let _ = writeln!(manifest, "words {}", words.len());
        for w in words {
            let _ = writeln!(manifest, "{w}");
        }
        let chars = self.vocab.char_entries();
        let _ = writeln!(manifest, "chars {}", chars.len());
        for &c in chars {
            let _ = writeln!(manifest, "{}", c as u32);
        }
        let tensors = self.model.named_tensors();
        let _ = writeln!(manifest, "params {}", tensors.len());
        let mut offset = 0;
        for (name, t) in &tensors {
            let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let _ = writeln!(manifest, "{name} {} {offset} {}", shape.join("x"), t.len());
            offset += t.len();
        }

        let mut out = Vec::with_capacity(20 + manifest.len() + 4 * offset);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        for (_, t) in &tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < 20 {
            return Err(bad("file is truncated"));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic header)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let end = usize::try_from(len)
            .ok()
            .and_then(|l| l.checked_add(20))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("file is truncated inside the manifest"))?;
        let manifest = std::str::from_utf8(&bytes[20..end]).map_err(|_| bad("manifest is not UTF-8"))?;
        let payload = &bytes[end..];

        let mut lines = manifest.lines();
        let config = section(&mut lines, "config")?;
        let config = TrainConfig::from_pairs(config.iter().map(|l| {
            let (k, v) = l.split_once('=').unwrap_or((l, ""));
            (k.trim(), v.trim())
        }))?;
        let labels = LabelMap::new(section(&mut lines, "labels")?)?;
        let words: Vec<String> = section(&mut lines, "words")?.into_iter().map(String::from).collect();
        let chars = section(&mut lines, "chars")?
            .into_iter()
            .map(|l| {
                l.parse::<u32>()
                    .ok()
                    .and_then(char::from_u32)
                    .ok_or_else(|| Error::Checkpoint(format!("bad character entry {l:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let vocab = Vocab::from_parts(words, chars);

        let mut tensors = Vec::new();
        let mut expected_offset = 0;
        for entry in section(&mut lines, "params")? {
            let f: Vec<&str> = entry.split(' ').collect();
            let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Checkpoint(format!("bad parameter entry {entry:?}")));
            if f.len() != 4 {
                return Err(Error::Checkpoint(format!("bad parameter entry {entry:?}")));
            }
            let shape = f[1].split('x').map(parse).collect::<Result<Vec<_>>>()?;
            let (offset, n) = (parse(f[2])?, parse(f[3])?);
            if offset != expected_offset {
                return Err(Error::Checkpoint(format!("parameter {} has offset {offset}, expected {expected_offset}", f[0])));
            }
            expected_offset += n;
            let raw = payload
                .get(4 * offset..4 * (offset + n))
                .ok_or_else(|| bad("file is truncated inside the parameter payload"))?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            tensors.push((f[0].to_string(), Tensor::new(shape, data)?));
        }
        if payload.len() != 4 * expected_offset {
            return Err(bad("payload length does not match the parameter directory"));
        }

        // Structure comes from the config; every value is then overwritten.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Classifier::new(&config.architecture(&labels, &vocab), &mut rng)?;
        model.load_tensors(tensors)?;
        Ok(Self {
            config,
            labels,
            vocab,
            model,
        })
    }
}

/// Read a `name count` header followed by `count` lines.
fn section<'a>(lines: &mut std::str::Lines<'a>, name: &str) -> Result<Vec<&'a str>> {
    let header = lines
        .next()
        .ok_or_else(|| Error::Checkpoint(format!("manifest ends before the {name} section")))?;
    let count = header
        .strip_prefix(name)
        .and_then(|rest| rest.trim().parse::<usize>().ok())
        .ok_or_else(|| Error::Checkpoint(format!("expected {name} section, found {header:?}")))?;
    let out: Vec<&str> = lines.by_ref().take(count).collect();
    if out.len() != count {
        return Err(Error::Checkpoint(format!("{name} section is truncated")));
    }
    Ok(out)
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, checkpoint.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
