//! Documents, rationale masks and corpora, plus the loaders and generators
//! that produce them.

mod eraser;
mod input;
mod split;
mod synthetic;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use eraser::{load_eraser_corpus, EraserOptions, PairOrder};
pub use input::{build_input, ModelInput, Vocab, MASK_TOKEN, PAD_TOKEN, SEP_TOKEN, UNK_TOKEN};
pub use split::{sample_few_shot, FewShotSplit, GoldEntry, SealedGold};
pub use synthetic::{generate_synthetic, SyntheticConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Hard,
    Soft,
}

/// Per-token rationale membership: hard 0/1 labels or soft probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationaleMask {
    values: Vec<f64>,
    kind: MaskKind,
}

impl RationaleMask {
    pub fn hard(bits: &[bool]) -> Self {
        RationaleMask {
            values: bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            kind: MaskKind::Hard,
        }
    }

    pub fn zeros(len: usize) -> Self {
        RationaleMask {
            values: vec![0.0; len],
            kind: MaskKind::Hard,
        }
    }

    pub fn soft(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("soft mask value {v} outside [0, 1]")));
        }
        Ok(RationaleMask {
            values,
            kind: MaskKind::Soft,
        })
    }

    /// Builds a hard mask of `len` tokens with 1s on each half-open span.
    pub fn from_spans(len: usize, spans: &[(usize, usize)], doc_id: &str) -> Result<Self> {
        let mut bits = vec![false; len];
        for &(start, end) in spans {
            if start > end || end > len {
                return Err(Error::Alignment {
                    doc_id: doc_id.to_string(),
                    message: format!("span [{start}, {end}) outside document of {len} tokens"),
                });
            }
            bits[start..end].iter_mut().for_each(|b| *b = true);
        }
        Ok(RationaleMask::hard(&bits))
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Membership of token `j`; soft values are thresholded at 0.5 (inclusive).
    pub fn bit(&self, j: usize) -> bool {
        self.values[j] >= 0.5
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.len()).map(|j| self.bit(j)).collect()
    }

    pub fn count_ones(&self) -> usize {
        (0..self.len()).filter(|&j| self.bit(j)).count()
    }

    /// Maximal runs of set tokens as half-open intervals.
    pub fn spans(&self) -> Vec<(usize, usize)> {
        let mut spans = Vec::new();
        let mut start = None;
        for j in 0..self.len() {
            match (self.bit(j), start) {
                (true, None) => start = Some(j),
                (false, Some(s)) => {
                    spans.push((s, j));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            spans.push((s, self.len()));
        }
        spans
    }

    pub fn truncated(&self, len: usize) -> Self {
        RationaleMask {
            values: self.values[..len.min(self.values.len())].to_vec(),
            kind: self.kind,
        }
    }

    /// Right-pads with zeros up to `len` tokens.
    pub fn padded(&self, len: usize) -> Self {
        let mut values = self.values.clone();
        values.resize(len.max(values.len()), 0.0);
        RationaleMask {
            values,
            kind: self.kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
    pub query: Option<Vec<String>>,
    pub gold_label: Option<usize>,
    pub gold_rationale: Option<RationaleMask>,
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        tokens: Vec<String>,
        query: Option<Vec<String>>,
        gold_label: Option<usize>,
        gold_rationale: Option<RationaleMask>,
    ) -> Result<Self> {
        let doc = Document {
            id: id.into(),
            tokens,
            query,
            gold_label,
            gold_rationale,
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Parse {
                doc_id: self.id.clone(),
                message: "document has no tokens".into(),
            });
        }
        if let Some(mask) = &self.gold_rationale {
            if mask.len() != self.tokens.len() {
                return Err(Error::Alignment {
                    doc_id: self.id.clone(),
                    message: format!(
                        "rationale mask has {} entries for {} tokens",
                        mask.len(),
                        self.tokens.len()
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Copy with gold label and rationale removed.
    pub fn stripped(&self) -> Document {
        Document {
            gold_label: None,
            gold_rationale: None,
            ..self.clone()
        }
    }

    /// Tokens of the rationale text: the ordered subsequence where the mask is set.
    pub fn rationale_tokens(&self, mask: &RationaleMask) -> Vec<String> {
        self.tokens
            .iter()
            .enumerate()
            .filter(|&(j, _)| j < mask.len() && mask.bit(j))
            .map(|(_, t)| t.clone())
            .collect()
    }
}

/// One line of the corpus file format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale_spans: Option<Vec<(usize, usize)>>,
}

impl CorpusRecord {
    pub fn into_document(self) -> Result<Document> {
        let gold_rationale = match &self.rationale_spans {
            Some(spans) => Some(RationaleMask::from_spans(self.tokens.len(), spans, &self.id)?),
            None => None,
        };
        Document::new(self.id, self.tokens, self.query, self.label, gold_rationale)
    }
}

impl From<&Document> for CorpusRecord {
    fn from(doc: &Document) -> Self {
        CorpusRecord {
            id: doc.id.clone(),
            tokens: doc.tokens.clone(),
            query: doc.query.clone(),
            label: doc.gold_label,
            rationale_spans: doc.gold_rationale.as_ref().map(|m| m.spans()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub num_classes: usize,
    pub class_names: Vec<String>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>, class_names: Vec<String>) -> Result<Self> {
        let corpus = Corpus {
            documents,
            num_classes: class_names.len(),
            class_names,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.class_names.len() != self.num_classes {
            return Err(Error::Config(format!(
                "corpus declares {} classes with {} names",
                self.num_classes,
                self.class_names.len()
            )));
        }
        for doc in &self.documents {
            doc.validate()?;
            if let Some(label) = doc.gold_label {
                if label >= self.num_classes {
                    return Err(Error::Parse {
                        doc_id: doc.id.clone(),
                        message: format!("label {label} >= {} classes", self.num_classes),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Same class set, different documents.
    pub fn with_documents(&self, documents: Vec<Document>) -> Corpus {
        Corpus {
            documents,
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
        }
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.num_classes];
        for label in self.documents.iter().filter_map(|d| d.gold_label) {
            hist[label] += 1;
        }
        hist
    }

    /// Reads the line-delimited corpus format.
    pub fn read_jsonl(path: impl AsRef<Path>, class_names: Vec<String>) -> Result<Self> {
        Corpus::new(read_documents(path.as_ref())?, class_names)
    }

    /// Like [`Corpus::read_jsonl`], naming classes `"0"..="max label"`.
    pub fn read_jsonl_inferred(path: impl AsRef<Path>) -> Result<Self> {
        let documents = read_documents(path.as_ref())?;
        let k = documents
            .iter()
            .filter_map(|d| d.gold_label)
            .max()
            .map_or(1, |m| m + 1);
        Corpus::new(documents, (0..k).map(|c| c.to_string()).collect())
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for doc in &self.documents {
            let line = serde_json::to_string(&CorpusRecord::from(doc))
                .expect("corpus records always serialize");
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Index from document id to position.
    pub fn id_index(&self) -> BTreeMap<&str, usize> {
        self.documents
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.as_str(), i))
            .collect()
    }
}

fn read_documents(path: &Path) -> Result<Vec<Document>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut documents = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            doc_id: record_id_hint(&line).unwrap_or_else(|| format!("line {}", lineno + 1)),
            message: e.to_string(),
        })?;
        documents.push(record.into_document()?);
    }
    Ok(documents)
}

fn record_id_hint(line: &str) -> Option<String> {
    let value: serde_json::Value = serde_json::from_str(line).ok()?;
    value.get("id")?.as_str().map(str::to_string)
}
