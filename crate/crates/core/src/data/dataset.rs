use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label reserved for out-of-domain utterances.
pub const OOD_LABEL: &str = "OOD";

/// Domain name to class id. Domains are sorted by name and take ids
/// `0..K`; OOD is always the final id `K`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    domains: Vec<String>,
}

impl LabelMap {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = names
            .into_iter()
            .map(|s| s.as_ref().to_string())
            .filter(|s| s != OOD_LABEL)
            .collect();
        if set.is_empty() {
            return Err(Error::Input("label map needs at least one in-domain label".into()));
        }
        Ok(Self {
            domains: set.into_iter().collect(),
        })
    }

    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    /// Number of classes including OOD.
    pub fn num_classes(&self) -> usize {
        self.domains.len() + 1
    }

    pub fn ood_id(&self) -> usize {
        self.domains.len()
    }

    pub fn is_ood(&self, id: usize) -> bool {
        id == self.ood_id()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        if name == OOD_LABEL {
            return Some(self.ood_id());
        }
        self.domains.binary_search_by(|d| d.as_str().cmp(name)).ok()
    }

    pub fn name(&self, id: usize) -> &str {
        if id == self.ood_id() {
            OOD_LABEL
        } else {
            &self.domains[id]
        }
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }
}

/// Lowercase and split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub text: String,
    pub tokens: Vec<String>,
    pub label: usize,
}

impl Utterance {
    pub fn new(text: &str, label: usize) -> Result<Self> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::Input(format!("utterance {text:?} has no tokens")));
        }
        Ok(Self {
            text: text.to_string(),
            tokens,
            label,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub utterances: Vec<Utterance>,
    pub labels: LabelMap,
}

#[derive(Serialize, Deserialize)]
struct Record<'a> {
    text: std::borrow::Cow<'a, str>,
    label: std::borrow::Cow<'a, str>,
}

fn read_records(path: &Path) -> Result<Vec<(usize, String, String)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push((i + 1, rec.text.into_owned(), rec.label.into_owned()));
    }
    if out.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "dataset is empty".into(),
        });
    }
    Ok(out)
}

impl Dataset {
    /// Load a line-delimited JSON file, building the label map from the
    /// labels it contains.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let records = read_records(path)?;
        let labels = LabelMap::new(records.iter().map(|(_, _, l)| l.as_str())).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
        Self::from_records(path, records, labels)
    }

    /// Load with a fixed label map; labels outside it are an error.
    pub fn load_with_labels(path: impl AsRef<Path>, labels: &LabelMap) -> Result<Self> {
        let path = path.as_ref();
        let records = read_records(path)?;
        Self::from_records(path, records, labels.clone())
    }

    fn from_records(path: &Path, records: Vec<(usize, String, String)>, labels: LabelMap) -> Result<Self> {
        let mut utterances = Vec::with_capacity(records.len());
        for (line, text, label) in records {
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            };
            let id = labels.id(&label).ok_or_else(|| err(format!("unknown label {label:?}")))?;
            utterances.push(Utterance::new(&text, id).map_err(|e| err(e.to_string()))?);
        }
        Ok(Self { utterances, labels })
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>, labels: &LabelMap) -> Result<Self> {
        let mut utterances = Vec::new();
        for (text, label) in pairs {
            let id = labels
                .id(label)
                .ok_or_else(|| Error::Input(format!("unknown label {label:?}")))?;
            utterances.push(Utterance::new(text, id)?);
        }
        Ok(Self {
            utterances,
            labels: labels.clone(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for u in &self.utterances {
            let rec = Record {
                text: u.text.as_str().into(),
                label: self.labels.name(u.label).into(),
            };
            serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn is_ood(&self, u: &Utterance) -> bool {
        self.labels.is_ood(u.label)
    }

    pub fn count_ood(&self) -> usize {
        self.utterances.iter().filter(|u| self.is_ood(u)).count()
    }
}
