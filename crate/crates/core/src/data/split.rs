use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Corpus, RationaleMask};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GoldEntry {
    pub label: Option<usize>,
    pub rationale: Option<RationaleMask>,
}

/// Gold annotations of the unlabeled pool. Kept apart from the documents so
/// training code never sees them; only evaluation reads them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SealedGold {
    entries: BTreeMap<String, GoldEntry>,
}

impl SealedGold {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let entries = corpus
            .documents
            .iter()
            .map(|d| {
                (
                    d.id.clone(),
                    GoldEntry {
                        label: d.gold_label,
                        rationale: d.gold_rationale.clone(),
                    },
                )
            })
            .collect();
        SealedGold { entries }
    }

    /// Evaluation-only access.
    pub fn for_evaluation(&self, id: &str) -> Option<&GoldEntry> {
        self.entries.get(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Re-attaches gold fields to a stripped corpus, for evaluation runs.
    pub fn unseal(&self, stripped: &Corpus) -> Corpus {
        let docs = stripped
            .documents
            .iter()
            .map(|d| {
                let mut d = d.clone();
                if let Some(gold) = self.entries.get(&d.id) {
                    d.gold_label = gold.label;
                    d.gold_rationale = gold.rationale.clone();
                }
                d
            })
            .collect();
        stripped.with_documents(docs)
    }
}

#[derive(Debug, Clone)]
pub struct FewShotSplit {
    pub labeled: Corpus,
    pub unlabeled: Corpus,
    pub sealed_gold: SealedGold,
    pub seed: u64,
}

impl FewShotSplit {
    pub fn labeled_per_class(&self) -> Vec<usize> {
        self.labeled.label_histogram()
    }
}

/// Stratified few-shot split: up to `n_per_class` documents of each class
/// (those carrying both a gold label and a gold rationale) become the labeled
/// set; everything else becomes the unlabeled pool with gold fields stripped.
pub fn sample_few_shot(corpus: &Corpus, n_per_class: usize, seed: u64) -> Result<FewShotSplit> {
    if n_per_class == 0 {
        return Err(Error::Config("n_per_class must be at least 1".into()));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); corpus.num_classes];
    for (i, doc) in corpus.documents.iter().enumerate() {
        if let (Some(label), Some(_)) = (doc.gold_label, &doc.gold_rationale) {
            by_class[label].push(i);
        }
    }
    let empty: Vec<&str> = by_class
        .iter()
        .enumerate()
        .filter(|(_, idx)| idx.is_empty())
        .map(|(c, _)| corpus.class_names[c].as_str())
        .collect();
    if !empty.is_empty() {
        return Err(Error::ClassShortage {
            class: empty.join(", "),
            available: 0,
            requested: n_per_class,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = BTreeSet::new();
    for idx in &mut by_class {
        idx.shuffle(&mut rng);
        chosen.extend(idx.iter().take(n_per_class).copied());
    }

    let mut labeled = Vec::with_capacity(chosen.len());
    let mut unlabeled = Vec::with_capacity(corpus.len() - chosen.len());
    for (i, doc) in corpus.documents.iter().enumerate() {
        if chosen.contains(&i) {
            labeled.push(doc.clone());
        } else {
            unlabeled.push(doc.clone());
        }
    }
    let unlabeled_gold = corpus.with_documents(unlabeled);
    let sealed_gold = SealedGold::from_corpus(&unlabeled_gold);
    let stripped = unlabeled_gold.documents.iter().map(|d| d.stripped()).collect();
    Ok(FewShotSplit {
        labeled: corpus.with_documents(labeled),
        unlabeled: corpus.with_documents(stripped),
        sealed_gold,
        seed,
    })
}
