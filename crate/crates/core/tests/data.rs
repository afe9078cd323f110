use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use fewshot_rationale::data::*;
use fewshot_rationale::Error;
use proptest::prelude::*;

fn write(root: &Path, rel: &str, text: &str) {
    let path = root.join(rel);
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, text).unwrap();
}

/// A movie-review style fixture with per-document files.
fn reviews(root: &Path) {
    write(root, "docs/r1", "great movie\n");
    write(root, "docs/r2", "dull plot\n");
    write(root, "docs/r3", "the film opens slowly .\nthen it soars !\nwe left happy .\n");
    write(
        root,
        "train.jsonl",
        concat!(
            r#"{"annotation_id":"r1","classification":"POS","evidences":[[{"docid":"r1","start_token":0,"end_token":1,"text":"great"}]]}"#,
            "\n",
            r#"{"annotation_id":"r2","classification":"NEG","evidences":[]}"#,
            "\n",
            r#"{"annotation_id":"r3","classification":"POS","evidences":[[{"docid":"r3","start_sentence":1,"end_sentence":2}]]}"#,
            "\n",
        ),
    );
}

fn load(root: &Path, split: &str) -> fewshot_rationale::Result<Corpus> {
    load_eraser_corpus(
        root,
        &EraserOptions {
            split: split.into(),
            ..Default::default()
        },
    )
}

#[test]
fn eraser_token_sentence_and_empty_evidence() {
    let dir = tempfile::tempdir().unwrap();
    reviews(dir.path());
    let corpus = load(dir.path(), "train").unwrap();
    assert_eq!(corpus.class_names, vec!["NEG", "POS"]);
    let by_id: HashMap<&str, &Document> = corpus.documents.iter().map(|d| (d.id.as_str(), d)).collect();

    let r1 = by_id["r1"];
    assert_eq!(r1.tokens, vec!["great", "movie"]);
    assert_eq!(r1.gold_rationale.as_ref().unwrap().bits(), vec![true, false]);
    assert_eq!(r1.gold_label, Some(1));

    let r2 = by_id["r2"];
    assert_eq!(r2.gold_rationale.as_ref().unwrap().count_ones(), 0);
    assert_eq!(r2.gold_label, Some(0));

    // sentence 1 has five tokens, sentence 2 ("then it soars !") four
    let r3 = by_id["r3"];
    assert_eq!(r3.len(), 5 + 4 + 4);
    let expect: Vec<bool> = (0..13).map(|j| (5..9).contains(&j)).collect();
    assert_eq!(r3.gold_rationale.as_ref().unwrap().bits(), expect);
    assert_eq!(r3.rationale_tokens(r3.gold_rationale.as_ref().unwrap()), vec!["then", "it", "soars", "!"]);
}

#[test]
fn eraser_inline_documents_and_queries() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write(
        root,
        "docs.jsonl",
        concat!(
            r#"{"docid":"p1","document":"the sky is blue ."}"#,
            "\n",
            r#"{"docid":"h1","document":"a man naps"}"#,
            "\n",
        ),
    );
    write(
        root,
        "val.jsonl",
        concat!(
            r#"{"annotation_id":"q1","classification":"True","query":"is the sky blue ?","evidences":[[{"docid":"p1","start_token":3,"end_token":4}]]}"#,
            "\n",
            r#"{"annotation_id":"pair","classification":"False","docids":["p1","h1"],"evidences":[[{"docid":"h1","start_token":2,"end_token":3},{"docid":"p1","start_token":0,"end_token":2}]]}"#,
            "\n",
        ),
    );
    let corpus = load(root, "val").unwrap();
    let q1 = &corpus.documents[0];
    assert_eq!(q1.query.as_deref().unwrap(), ["is", "the", "sky", "blue", "?"]);
    assert_eq!(q1.gold_rationale.as_ref().unwrap().spans(), vec![(3, 4)]);

    let pair = &corpus.documents[1];
    assert_eq!(pair.tokens, vec!["the", "sky", "is", "blue", "."]);
    assert_eq!(pair.query.as_deref().unwrap(), ["a", "man", "naps"]);
    assert_eq!(pair.gold_rationale.as_ref().unwrap().spans(), vec![(0, 2)]);

    let swapped = load_eraser_corpus(
        root,
        &EraserOptions {
            split: "val".into(),
            pair_order: PairOrder::SecondAsDocument,
            ..Default::default()
        },
    )
    .unwrap();
    let pair = &swapped.documents[1];
    assert_eq!(pair.tokens, vec!["a", "man", "naps"]);
    assert_eq!(pair.gold_rationale.as_ref().unwrap().spans(), vec![(2, 3)]);
}

#[test]
fn eraser_errors_name_the_document() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write(root, "docs/d", "one two three\n");
    write(
        root,
        "bad_span.jsonl",
        r#"{"annotation_id":"a7","classification":"X","evidences":[[{"docid":"d","start_token":1,"end_token":9}]]}"#,
    );
    match load(root, "bad_span") {
        Err(Error::Alignment { doc_id, .. }) => assert_eq!(doc_id, "a7"),
        other => panic!("{other:?}"),
    }
    write(
        root,
        "bad_sentence.jsonl",
        r#"{"annotation_id":"a8","classification":"X","evidences":[[{"docid":"d","start_sentence":0,"end_sentence":4}]]}"#,
    );
    assert!(matches!(load(root, "bad_sentence"), Err(Error::Alignment { doc_id, .. }) if doc_id == "a8"));
    write(root, "malformed.jsonl", r#"{"annotation_id":"a9","evidences":"nope"}"#);
    assert!(matches!(load(root, "malformed"), Err(Error::Parse { doc_id, .. }) if doc_id == "a9"));
    write(
        root,
        "missing.jsonl",
        r#"{"annotation_id":"a10","classification":"X","evidences":[[{"docid":"ghost","start_token":0,"end_token":1}]]}"#,
    );
    assert!(matches!(load(root, "missing"), Err(Error::Io { .. })));
    write(root, "orphan.jsonl", r#"{"annotation_id":"a11","classification":"X","evidences":[]}"#);
    assert!(matches!(load(root, "orphan"), Err(Error::Parse { doc_id, .. }) if doc_id == "a11"));
}

#[test]
fn truncation_keeps_mask_aligned_with_model_input() {
    let d = Document::new(
        "long",
        (0..40).map(|i| format!("w{i}")).collect(),
        Some(vec!["q".into()]),
        Some(0),
        Some(RationaleMask::from_spans(40, &[(10, 12), (30, 35)], "long").unwrap()),
    )
    .unwrap();
    let vocab = Vocab::build([&d]);
    let input = build_input(&vocab, &d, 20);
    assert!(input.truncated);
    assert_eq!(input.len(), 20);
    // [CLS] + 17 document tokens + [SEP] + query
    assert_eq!(input.doc_len, 17);
    let mask = d.gold_rationale.as_ref().unwrap().truncated(input.doc_len);
    assert_eq!(mask.len(), input.doc_len);
    assert_eq!(mask.spans(), vec![(10, 12)]);
}

/// Bag-of-words naive Bayes with add-one smoothing.
struct NaiveBayes {
    log_prior: Vec<f64>,
    log_lik: Vec<HashMap<String, f64>>,
    unseen: Vec<f64>,
}

impl NaiveBayes {
    fn fit(docs: &[(Vec<String>, usize)], k: usize) -> Self {
        let vocab: BTreeSet<&String> = docs.iter().flat_map(|(t, _)| t).collect();
        let mut counts = vec![HashMap::<String, f64>::new(); k];
        let mut totals = vec![0.0; k];
        let mut class_docs = vec![0.0; k];
        for (tokens, y) in docs {
            class_docs[*y] += 1.0;
            for t in tokens {
                *counts[*y].entry(t.clone()).or_default() += 1.0;
                totals[*y] += 1.0;
            }
        }
        let v = vocab.len() as f64;
        let n = docs.len() as f64;
        NaiveBayes {
            log_prior: class_docs.iter().map(|c| (c / n).ln()).collect(),
            log_lik: (0..k)
                .map(|c| {
                    counts[c]
                        .iter()
                        .map(|(w, &x)| (w.clone(), ((x + 1.0) / (totals[c] + v)).ln()))
                        .collect()
                })
                .collect(),
            unseen: (0..k).map(|c| (1.0 / (totals[c] + v)).ln()).collect(),
        }
    }

    fn predict(&self, tokens: &[String]) -> usize {
        (0..self.log_prior.len())
            .map(|c| {
                let s = self.log_prior[c]
                    + tokens
                        .iter()
                        .map(|t| *self.log_lik[c].get(t).unwrap_or(&self.unseen[c]))
                        .sum::<f64>();
                (c, s)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0
    }
}

fn accuracy(train: &[(Vec<String>, usize)], test: &[(Vec<String>, usize)], k: usize) -> f64 {
    let nb = NaiveBayes::fit(train, k);
    test.iter().filter(|(t, y)| nb.predict(t) == *y).count() as f64 / test.len() as f64
}

#[test]
fn synthetic_labels_live_only_in_the_planted_phrase() {
    for (k, seed) in [(2usize, 1u64), (3, 2)] {
        let cfg = SyntheticConfig {
            num_classes: k,
            num_docs: 4000,
            seed,
            ..Default::default()
        };
        let corpus = generate_synthetic(&cfg).unwrap();
        let full: Vec<(Vec<String>, usize)> = corpus
            .documents
            .iter()
            .map(|d| (d.tokens.clone(), d.gold_label.unwrap()))
            .collect();
        let removed: Vec<(Vec<String>, usize)> = corpus
            .documents
            .iter()
            .map(|d| {
                let mask = d.gold_rationale.as_ref().unwrap();
                let rest = d.tokens.iter().enumerate().filter(|(j, _)| !mask.bit(*j)).map(|(_, t)| t.clone());
                (rest.collect(), d.gold_label.unwrap())
            })
            .collect();
        let (tr, te) = full.split_at(2000);
        assert!(accuracy(tr, te, k) > 0.99);
        let (tr, te) = removed.split_at(2000);
        let acc = accuracy(tr, te, k);
        assert!((acc - 1.0 / k as f64).abs() <= 0.05, "K={k}: accuracy {acc} without the phrase");
    }
}

fn arb_corpus() -> impl Strategy<Value = Corpus> {
    let doc = (1usize..12, prop::option::of(1usize..4), prop::option::of(0usize..3), any::<bool>());
    prop::collection::vec(doc, 1..25).prop_flat_map(|shapes| {
        let docs: Vec<_> = shapes
            .into_iter()
            .enumerate()
            .map(|(i, (len, qlen, label, gold))| {
                (
                    prop::collection::vec("[a-e]{1,3}", len),
                    prop::collection::vec("[x-z]{1,2}", qlen.unwrap_or(0)),
                    prop::collection::vec(any::<bool>(), len),
                    Just((i, qlen.is_some(), label, gold)),
                )
                    .prop_map(|(tokens, query, bits, (i, has_q, label, gold))| {
                        Document::new(
                            format!("d{i}"),
                            tokens,
                            has_q.then_some(query),
                            label,
                            gold.then(|| RationaleMask::hard(&bits)),
                        )
                        .unwrap()
                    })
            })
            .collect();
        docs.prop_map(|d| Corpus::new(d, vec!["a".into(), "b".into(), "c".into()]).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corpus_jsonl_round_trip(corpus in arb_corpus()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        corpus.write_jsonl(&path).unwrap();
        let back = Corpus::read_jsonl(&path, corpus.class_names.clone()).unwrap();
        prop_assert_eq!(back, corpus);
    }

    #[test]
    fn few_shot_split_partitions_the_corpus(corpus in arb_corpus(), n in 1usize..6, seed in any::<u64>()) {
        match sample_few_shot(&corpus, n, seed) {
            Ok(split) => {
                let lab: BTreeSet<&str> = split.labeled.documents.iter().map(|d| d.id.as_str()).collect();
                let unl: BTreeSet<&str> = split.unlabeled.documents.iter().map(|d| d.id.as_str()).collect();
                let all: BTreeSet<&str> = corpus.documents.iter().map(|d| d.id.as_str()).collect();
                prop_assert!(lab.is_disjoint(&unl));
                prop_assert_eq!(lab.union(&unl).copied().collect::<BTreeSet<_>>(), all);
                prop_assert!(split.unlabeled.documents.iter().all(|d| d.gold_label.is_none() && d.gold_rationale.is_none()));
                prop_assert!(split.labeled.documents.iter().all(|d| d.gold_label.is_some() && d.gold_rationale.is_some()));
                for (c, &count) in split.labeled.label_histogram().iter().enumerate() {
                    let eligible = corpus
                        .documents
                        .iter()
                        .filter(|d| d.gold_label == Some(c) && d.gold_rationale.is_some())
                        .count();
                    prop_assert_eq!(count, eligible.min(n));
                }
                prop_assert_eq!(split.sealed_gold.unseal(&split.unlabeled).documents.len(), split.unlabeled.len());
            }
            Err(Error::ClassShortage { available, .. }) => prop_assert_eq!(available, 0),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn model_inputs_respect_the_length_limit(corpus in arb_corpus(), max_len in 3usize..16) {
        let vocab = Vocab::build(&corpus.documents);
        for d in &corpus.documents {
            let input = build_input(&vocab, d, max_len);
            prop_assert!(input.len() <= max_len);
            prop_assert!(input.doc_len >= 1);
            prop_assert_eq!(input.ids[0], vocab.cls_id());
            prop_assert_eq!(input.doc_ids().len(), input.doc_len);
            prop_assert_eq!(input.truncated, input.doc_len < d.len() || input.len() < 1 + d.len() + d.query.as_ref().map_or(0, |q| q.len() + 1));
            if d.query.is_some() {
                prop_assert_eq!(input.ids[input.doc_range().end], vocab.sep_id());
            } else {
                prop_assert_eq!(input.doc_range().end, input.len());
            }
        }
    }
}
