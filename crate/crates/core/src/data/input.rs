use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Document;
use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "[PAD]";
pub const MASK_TOKEN: &str = "[MASK]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CLS_TOKEN: &str = "[CLS]";

const SPECIALS: [&str; 5] = [PAD_TOKEN, MASK_TOKEN, SEP_TOKEN, UNK_TOKEN, CLS_TOKEN];

/// Word-level vocabulary. Ids 0..5 are the special tokens in the order
/// pad, mask, separator, unknown, classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Collects every document and query token, most frequent first (ties
    /// broken lexicographically).
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for doc in docs {
            let query = doc.query.iter().flatten();
            for tok in doc.tokens.iter().chain(query) {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut words: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(w, _)| !SPECIALS.contains(w))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(|(w, _)| w.to_string()))
            .collect::<Vec<_>>();
        Vocab::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pad_id(&self) -> usize {
        0
    }

    pub fn mask_id(&self) -> usize {
        1
    }

    pub fn sep_id(&self) -> usize {
        2
    }

    pub fn unk_id(&self) -> usize {
        3
    }

    pub fn cls_id(&self) -> usize {
        4
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.unk_id())
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("vocab serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let vocab: Vocab = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("bad vocabulary {}: {e}", path.display())))?;
        if vocab.tokens.len() < SPECIALS.len()
            || vocab.tokens[..SPECIALS.len()] != SPECIALS.map(String::from)
        {
            return Err(Error::Config(format!(
                "vocabulary {} does not start with the special tokens",
                path.display()
            )));
        }
        Ok(vocab)
    }
}

/// Model-ready ids. Positions `doc_start..doc_start + doc_len` are document
/// tokens and form the rationale target region. Inputs built by
/// [`build_input`] put the classification token at position 0 and a
/// separator plus the query after the document when present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelInput {
    pub ids: Vec<usize>,
    pub doc_start: usize,
    pub doc_len: usize,
    pub truncated: bool,
}

impl ModelInput {
    pub fn doc_range(&self) -> std::ops::Range<usize> {
        self.doc_start..self.doc_start + self.doc_len
    }

    pub fn doc_ids(&self) -> &[usize] {
        &self.ids[self.doc_range()]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Encodes `[CLS] doc [SEP] query`, truncating the document tail so the
/// whole sequence fits in `max_len`. The query is kept whole unless it alone
/// would leave no room for a single document token.
pub fn build_input(vocab: &Vocab, doc: &Document, max_len: usize) -> ModelInput {
    let mut query: Vec<usize> = doc
        .query
        .iter()
        .flatten()
        .map(|t| vocab.id(t))
        .collect();
    let tail = |q: &[usize]| if doc.query.is_some() { 1 + q.len() } else { 0 };
    let mut truncated = false;
    if doc.query.is_some() && 1 + tail(&query) + 1 > max_len {
        query.truncate(max_len.saturating_sub(3));
        truncated = true;
    }
    let room = max_len.saturating_sub(1 + tail(&query)).max(1);
    let doc_len = doc.tokens.len().min(room);
    truncated |= doc_len < doc.tokens.len();

    let mut ids = Vec::with_capacity(1 + doc_len + tail(&query));
    ids.push(vocab.cls_id());
    ids.extend(doc.tokens[..doc_len].iter().map(|t| vocab.id(t)));
    if doc.query.is_some() {
        ids.push(vocab.sep_id());
        ids.extend(query);
    }
    ModelInput {
        ids,
        doc_start: 1,
        doc_len,
        truncated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(tokens: &[&str], query: Option<&[&str]>) -> Document {
        Document::new(
            "d",
            tokens.iter().map(|s| s.to_string()).collect(),
            query.map(|q| q.iter().map(|s| s.to_string()).collect()),
            None,
            None,
        )
        .unwrap()
    }

    #[test]
    fn document_sep_query_layout() {
        let d = doc(&["a", "b"], Some(&["q"]));
        let vocab = Vocab::build([&d]);
        let input = build_input(&vocab, &d, 512);
        assert_eq!(
            input.ids,
            vec![vocab.cls_id(), vocab.id("a"), vocab.id("b"), vocab.sep_id(), vocab.id("q")]
        );
        assert_eq!(input.doc_ids(), &[vocab.id("a"), vocab.id("b")]);
        assert_eq!(input.doc_len, 2);
        assert!(!input.truncated);
    }

    #[test]
    fn document_without_query() {
        let d = doc(&["a"], None);
        let vocab = Vocab::build([&d]);
        let input = build_input(&vocab, &d, 512);
        assert_eq!(input.ids, vec![vocab.cls_id(), vocab.id("a")]);
        assert_eq!(input.doc_len, 1);
    }

    #[test]
    fn long_document_is_truncated_at_tail() {
        let words: Vec<String> = (0..600).map(|i| format!("w{i}")).collect();
        let refs: Vec<&str> = words.iter().map(String::as_str).collect();
        let d = doc(&refs, None);
        let vocab = Vocab::build([&d]);
        let input = build_input(&vocab, &d, 512);
        // no query: the classification token is the only overhead
        assert_eq!(input.doc_len, 511);
        assert_eq!(input.ids.len(), 512);
        assert!(input.truncated);
        assert_eq!(input.ids[511], vocab.id("w510"));

        // five-token query adds a separator and five query positions
        let d = doc(&refs, Some(&["q1", "q2", "q3", "q4", "q5"]));
        let vocab = Vocab::build([&d]);
        let input = build_input(&vocab, &d, 512);
        assert_eq!(input.doc_len, 505);
        assert_eq!(input.ids.len(), 512);
        assert_eq!(input.ids[506], vocab.sep_id());
        assert_eq!(input.ids[511], vocab.id("q5"));
    }

    #[test]
    fn unknown_tokens_map_to_unk() {
        let vocab = Vocab::build([&doc(&["a"], None)]);
        assert_eq!(vocab.id("zzz"), vocab.unk_id());
        assert_eq!(vocab.token(vocab.sep_id()), Some(SEP_TOKEN));
    }

    #[test]
    fn vocab_orders_by_frequency() {
        let vocab = Vocab::build([&doc(&["b", "a", "b", "c"], None)]);
        assert_eq!(vocab.token(5), Some("b"));
        assert_eq!(vocab.token(6), Some("a"));
        assert_eq!(vocab.len(), 8);
    }
}
