//! Label taxonomy, labelled samples and the JSON Lines dataset format.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered set of intent labels with a one-sentence description per label.
///
/// Label order is significant: it fixes the multi-hot layout, the classifier
/// output order and the segment order of composed multi-label queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawVocabulary", into = "RawVocabulary")]
pub struct LabelVocabulary {
    labels: Vec<String>,
    descriptions: BTreeMap<String, String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct RawVocabulary {
    labels: Vec<String>,
    #[serde(default)]
    descriptions: BTreeMap<String, String>,
}

impl TryFrom<RawVocabulary> for LabelVocabulary {
    type Error = Error;

    fn try_from(raw: RawVocabulary) -> Result<Self> {
        LabelVocabulary::new(raw.labels, raw.descriptions)
    }
}

impl From<LabelVocabulary> for RawVocabulary {
    fn from(v: LabelVocabulary) -> Self {
        RawVocabulary {
            labels: v.labels,
            descriptions: v.descriptions,
        }
    }
}

impl LabelVocabulary {
    pub fn new(labels: Vec<String>, descriptions: BTreeMap<String, String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidVocabulary("no labels".into()));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            if label.trim().is_empty() {
                return Err(Error::InvalidVocabulary(format!("label {i} is empty")));
            }
            if index.insert(label.clone(), i).is_some() {
                return Err(Error::InvalidVocabulary(format!("duplicate label {label:?}")));
            }
        }
        if let Some(stray) = descriptions.keys().find(|k| !index.contains_key(*k)) {
            return Err(Error::InvalidVocabulary(format!(
                "description for unknown label {stray:?}"
            )));
        }
        Ok(LabelVocabulary {
            labels,
            descriptions,
            index,
        })
    }

    /// Eight-class maritime routing taxonomy used as the default configuration.
    pub fn maritime() -> Self {
        let entries = [
            (
                "long-range ETA in maritime",
                "estimated time of arrival for maritime vessels and ships",
            ),
            (
                "arrival time to pilotage boarding ground",
                "arrival time of a vessel at the pilot boarding ground before entering port",
            ),
            (
                "direct berthing to port",
                "likelihood that a vessel berths directly on arrival without anchoring",
            ),
            (
                "vehicular waiting time after arrival",
                "how long a vessel waits at anchorage for a berth after it arrives",
            ),
            (
                "ship fuel consumption",
                "amount of fuel such as LSFO or MGO a ship consumes over a period or voyage",
            ),
            (
                "berth staying",
                "how long a ship stays alongside the berth until it unberths",
            ),
            (
                "maritime risk evaluation",
                "safety and security risks such as piracy, collision or weather along a voyage",
            ),
            (
                "vessel trajectory",
                "the future route or track a vessel will sail",
            ),
        ];
        let labels = entries.iter().map(|(l, _)| l.to_string()).collect();
        let descriptions = entries
            .iter()
            .map(|(l, d)| (l.to_string(), d.to_string()))
            .collect();
        LabelVocabulary::new(labels, descriptions).expect("built-in taxonomy is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn description(&self, label: &str) -> Option<&str> {
        self.descriptions.get(label).map(String::as_str)
    }

    /// Resolves label names into a set, rejecting unknown names.
    pub fn label_set<S: AsRef<str>>(&self, names: &[S]) -> Result<LabelSet> {
        let indices = names
            .iter()
            .map(|n| {
                self.index_of(n.as_ref()).ok_or_else(|| Error::UnknownLabel {
                    line: None,
                    label: n.as_ref().to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LabelSet::from_indices(indices))
    }
}

/// A subset of vocabulary labels, stored as sorted unique label indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelSet(Vec<usize>);

impl LabelSet {
    pub fn from_indices(indices: impl IntoIterator<Item = usize>) -> Self {
        let mut v: Vec<usize> = indices.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        LabelSet(v)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }

    pub fn intersects(&self, other: &LabelSet) -> bool {
        self.0.iter().any(|i| other.contains(*i))
    }

    pub fn names<'a>(&self, vocabulary: &'a LabelVocabulary) -> Vec<&'a str> {
        self.0.iter().map(|&i| vocabulary.label(i)).collect()
    }

    pub fn validate(&self, vocabulary: &LabelVocabulary) -> Result<()> {
        match self.0.iter().find(|&&i| i >= vocabulary.len()) {
            Some(i) => Err(Error::UnknownLabel {
                line: None,
                label: format!("#{i}"),
            }),
            None => Ok(()),
        }
    }

    /// Decodes a multi-hot row back into a set.
    pub fn from_multi_hot(row: &[bool]) -> Self {
        LabelSet(
            row.iter()
                .enumerate()
                .filter_map(|(i, &on)| on.then_some(i))
                .collect(),
        )
    }
}

/// Multi-hot encoding: position `i` is set iff vocabulary label `i` is a member.
pub fn encode_labels(labels: &LabelSet, vocabulary: &LabelVocabulary) -> Result<Vec<bool>> {
    labels.validate(vocabulary)?;
    let mut row = vec![false; vocabulary.len()];
    for &i in labels.indices() {
        row[i] = true;
    }
    Ok(row)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextSample {
    pub text: String,
    pub labels: LabelSet,
}

impl TextSample {
    pub fn new(text: impl Into<String>, labels: LabelSet) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::EmptyText { line: None });
        }
        if labels.is_empty() {
            return Err(Error::EmptyLabels { line: None });
        }
        Ok(TextSample { text, labels })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocabulary: LabelVocabulary,
    pub samples: Vec<TextSample>,
}

#[derive(Serialize, Deserialize)]
struct Record<'a> {
    #[serde(borrow)]
    text: std::borrow::Cow<'a, str>,
    labels: Vec<std::borrow::Cow<'a, str>>,
}

impl Dataset {
    pub fn new(vocabulary: LabelVocabulary, samples: Vec<TextSample>) -> Result<Self> {
        for s in &samples {
            s.labels.validate(&vocabulary)?;
        }
        Ok(Dataset {
            vocabulary,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn texts(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.text.clone()).collect()
    }

    /// Multi-hot truth matrix, one row per sample.
    pub fn truth_matrix(&self) -> Vec<Vec<bool>> {
        self.samples
            .iter()
            .map(|s| encode_labels(&s.labels, &self.vocabulary).expect("validated"))
            .collect()
    }

    pub fn read_from(reader: impl Read, vocabulary: LabelVocabulary) -> Result<Self> {
        let mut samples = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
            if record.text.trim().is_empty() {
                return Err(Error::EmptyText {
                    line: Some(line_no),
                });
            }
            if record.labels.is_empty() {
                return Err(Error::EmptyLabels {
                    line: Some(line_no),
                });
            }
            let labels = vocabulary.label_set(&record.labels).map_err(|e| match e {
                Error::UnknownLabel { label, .. } => Error::UnknownLabel {
                    line: Some(line_no),
                    label,
                },
                other => other,
            })?;
            samples.push(TextSample {
                text: record.text.into_owned(),
                labels,
            });
        }
        Ok(Dataset {
            vocabulary,
            samples,
        })
    }

    pub fn write_to(&self, mut writer: impl Write) -> std::io::Result<()> {
        for s in &self.samples {
            let record = Record {
                text: s.text.as_str().into(),
                labels: s
                    .labels
                    .names(&self.vocabulary)
                    .into_iter()
                    .map(Into::into)
                    .collect(),
            };
            serde_json::to_writer(&mut writer, &record)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    /// Takes the samples at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            vocabulary: self.vocabulary.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, vocabulary: LabelVocabulary) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Dataset::read_from(file, vocabulary)
}

/// Index partition produced by [`split_indices`]; both halves sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub holdout: Vec<usize>,
}

/// Number of holdout rows: round-half-up of `fraction * n`, clamped to `[1, n-1]`.
pub fn holdout_size(n: usize, fraction: f64) -> usize {
    let raw = (fraction * n as f64 + 0.5).floor() as usize;
    raw.clamp(1, n.saturating_sub(1).max(1))
}

pub fn split_indices(n: usize, holdout_fraction: f64, seed: u64) -> Result<SplitIndices> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "holdout fraction {holdout_fraction} is outside (0, 1)"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "cannot split {n} samples; need at least 2"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let h = holdout_size(n, holdout_fraction);
    let mut holdout = order[..h].to_vec();
    let mut train = order[h..].to_vec();
    holdout.sort_unstable();
    train.sort_unstable();
    Ok(SplitIndices { train, holdout })
}

/// Deterministic train/holdout partition; each half keeps the original sample order.
pub fn split(dataset: &Dataset, holdout_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let parts = split_indices(dataset.len(), holdout_fraction, seed)?;
    Ok((dataset.subset(&parts.train), dataset.subset(&parts.holdout)))
}
