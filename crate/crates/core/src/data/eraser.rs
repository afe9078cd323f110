//! Loader for the ERASER benchmark directory layout:
//!
//! ```text
//! <root>/docs/<docid>        one sentence per line, whitespace tokenized
//! <root>/docs.jsonl          alternative: {"docid": .., "document": ..} per line
//! <root>/{train,val,test}.jsonl
//! ```
//!
//! Evidence given as token offsets or as sentence ranges is projected onto a
//! hard token mask over the document.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{Corpus, Document, RationaleMask};
use crate::error::{Error, Result};

/// Which side of a two-document annotation (premise/hypothesis style) plays
/// the document role; the other side becomes the query.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairOrder {
    #[default]
    FirstAsDocument,
    SecondAsDocument,
}

#[derive(Debug, Clone)]
pub struct EraserOptions {
    /// `train`, `val` or `test`.
    pub split: String,
    /// Fixes the class index order; inferred (sorted) from the split if absent.
    pub class_names: Option<Vec<String>>,
    pub pair_order: PairOrder,
}

impl Default for EraserOptions {
    fn default() -> Self {
        EraserOptions {
            split: "train".into(),
            class_names: None,
            pair_order: PairOrder::default(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct Annotation {
    annotation_id: String,
    classification: Option<String>,
    #[serde(default)]
    evidences: Vec<Vec<Evidence>>,
    #[serde(default)]
    query: Option<String>,
    #[serde(default)]
    docids: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
struct Evidence {
    docid: String,
    #[serde(default = "neg_one")]
    start_token: i64,
    #[serde(default = "neg_one")]
    end_token: i64,
    #[serde(default = "neg_one")]
    start_sentence: i64,
    #[serde(default = "neg_one")]
    end_sentence: i64,
}

fn neg_one() -> i64 {
    -1
}

#[derive(Debug, Deserialize)]
struct DocLine {
    docid: String,
    document: String,
}

/// Sentences of one source document, each a token list.
type Sentences = Vec<Vec<String>>;

struct DocStore {
    root: PathBuf,
    inline: Option<HashMap<String, Sentences>>,
    cache: HashMap<String, Sentences>,
}

impl DocStore {
    fn open(root: &Path) -> Result<Self> {
        let jsonl = root.join("docs.jsonl");
        let inline = if jsonl.is_file() {
            let file = File::open(&jsonl).map_err(|e| Error::io(&jsonl, e))?;
            let mut map = HashMap::new();
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| Error::io(&jsonl, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: DocLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    doc_id: "docs.jsonl".into(),
                    message: e.to_string(),
                })?;
                map.insert(rec.docid, split_sentences(&rec.document));
            }
            Some(map)
        } else {
            None
        };
        Ok(DocStore {
            root: root.to_path_buf(),
            inline,
            cache: HashMap::new(),
        })
    }

    fn contains(&self, docid: &str) -> bool {
        match &self.inline {
            Some(map) => map.contains_key(docid),
            None => self.cache.contains_key(docid) || self.root.join("docs").join(docid).is_file(),
        }
    }

    fn get(&mut self, docid: &str, annotation: &str) -> Result<&Sentences> {
        if let Some(map) = &self.inline {
            return map.get(docid).ok_or_else(|| Error::Parse {
                doc_id: annotation.to_string(),
                message: format!("unknown docid {docid}"),
            });
        }
        if !self.cache.contains_key(docid) {
            let path = self.root.join("docs").join(docid);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            self.cache.insert(docid.to_string(), split_sentences(&text));
        }
        Ok(&self.cache[docid])
    }
}

fn split_sentences(text: &str) -> Sentences {
    text.lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect()
}

fn flatten(sentences: &Sentences) -> (Vec<String>, Vec<usize>) {
    let mut tokens = Vec::new();
    let mut offsets = Vec::with_capacity(sentences.len() + 1);
    for s in sentences {
        offsets.push(tokens.len());
        tokens.extend(s.iter().cloned());
    }
    offsets.push(tokens.len());
    (tokens, offsets)
}

/// Loads one split of an ERASER-style dataset directory.
pub fn load_eraser_corpus(root: impl AsRef<Path>, options: &EraserOptions) -> Result<Corpus> {
    let root = root.as_ref();
    let path = root.join(format!("{}.jsonl", options.split));
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut annotations = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ann: Annotation = serde_json::from_str(&line).map_err(|e| Error::Parse {
            doc_id: serde_json::from_str::<serde_json::Value>(&line)
                .ok()
                .and_then(|v| v.get("annotation_id")?.as_str().map(str::to_string))
                .unwrap_or_else(|| format!("{}:{}", path.display(), lineno + 1)),
            message: e.to_string(),
        })?;
        annotations.push(ann);
    }

    let class_names = match &options.class_names {
        Some(names) => names.clone(),
        None => annotations
            .iter()
            .filter_map(|a| a.classification.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let class_index: HashMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();

    let mut store = DocStore::open(root)?;
    let mut documents = Vec::with_capacity(annotations.len());
    for ann in &annotations {
        let id = ann.annotation_id.as_str();
        let docids: Vec<String> = match &ann.docids {
            Some(ids) if !ids.is_empty() => ids.clone(),
            _ => {
                let named: Vec<String> = ann
                    .evidences
                    .iter()
                    .flatten()
                    .map(|e| e.docid.clone())
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                // single-document datasets key the document by the annotation id
                if named.is_empty() && store.contains(id) {
                    vec![id.to_string()]
                } else {
                    named
                }
            }
        };
        let (doc_id, query) = match (docids.len(), options.pair_order) {
            (0, _) => {
                return Err(Error::Parse {
                    doc_id: id.to_string(),
                    message: "annotation names no document".into(),
                })
            }
            (1, _) => (docids[0].clone(), ann.query.as_ref().map(|q| tokenize(q))),
            (_, PairOrder::FirstAsDocument) => (
                docids[0].clone(),
                Some(flatten(store.get(&docids[1], id)?).0),
            ),
            (_, PairOrder::SecondAsDocument) => (
                docids[1].clone(),
                Some(flatten(store.get(&docids[0], id)?).0),
            ),
        };
        let (tokens, offsets) = flatten(store.get(&doc_id, id)?);
        let n_sent = offsets.len() - 1;

        let mut spans = Vec::new();
        for ev in ann.evidences.iter().flatten().filter(|e| e.docid == doc_id) {
            let span = if ev.start_token >= 0 && ev.end_token > ev.start_token {
                (ev.start_token as usize, ev.end_token as usize)
            } else if ev.start_sentence >= 0 && ev.end_sentence > ev.start_sentence {
                let (s, e) = (ev.start_sentence as usize, ev.end_sentence as usize);
                if e > n_sent {
                    return Err(Error::Alignment {
                        doc_id: id.to_string(),
                        message: format!("sentences [{s}, {e}) outside {n_sent} sentences"),
                    });
                }
                (offsets[s], offsets[e])
            } else {
                return Err(Error::Parse {
                    doc_id: id.to_string(),
                    message: "evidence has neither token nor sentence offsets".into(),
                });
            };
            spans.push(span);
        }
        let rationale = RationaleMask::from_spans(tokens.len(), &spans, id)?;
        let label = match &ann.classification {
            Some(name) => Some(*class_index.get(name.as_str()).ok_or_else(|| Error::Parse {
                doc_id: id.to_string(),
                message: format!("unknown class {name}"),
            })?),
            None => None,
        };
        documents.push(Document::new(id, tokens, query, label, Some(rationale))?);
    }
    Corpus::new(documents, class_names)
}

fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}
