use std::collections::BTreeMap;

use fewshot_rationale::data::{Document, RationaleMask};
use fewshot_rationale::eval::*;
use proptest::prelude::*;

fn mask(bits: &[u8]) -> RationaleMask {
    RationaleMask::hard(&bits.iter().map(|&b| b == 1).collect::<Vec<_>>())
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

#[test]
fn task_f1_examples() {
    assert_eq!(task_f1(&[0, 1, 1, 0], &[0, 1, 1, 0], 2).unwrap(), 1.0);
    // everything predicted as class 0 on a balanced set
    let f1 = task_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
    assert!((f1 - 1.0 / 3.0).abs() < 1e-12);
    assert!(task_f1(&[], &[], 2).is_err());
    assert!(task_f1(&[0], &[0, 1], 2).is_err());
    // micro-averaged F1 over single-label predictions is accuracy
    let micro = task_f1_with(&[0, 0, 0, 0], &[0, 0, 1, 1], 2, Averaging::Micro).unwrap();
    assert!((micro - 0.5).abs() < 1e-12);
}

#[test]
fn token_and_bleu_examples() {
    let prf = token_prf(&[mask(&[1, 0, 1])], &[mask(&[1, 1, 0])]).unwrap();
    assert_eq!((prf.precision, prf.recall, prf.f1), (0.5, 0.5, 0.5));
    let prf = token_prf(&[mask(&[0, 0, 0])], &[mask(&[1, 1, 0])]).unwrap();
    assert_eq!((prf.precision, prf.recall, prf.f1), (0.0, 0.0, 0.0));
    assert!(token_prf(&[mask(&[1, 0])], &[mask(&[1, 0, 0])]).is_err());

    let b = bleu2(&[words("a b c")], &[words("a b d")]);
    let expect = (0.5 * (2.0f64 / 3.0).ln() + 0.5 * 0.5f64.ln()).exp();
    assert!((b - expect).abs() < 1e-12);
    assert!((b - 0.577).abs() < 1e-3);
    assert_eq!(bleu2(&[vec![]], &[words("a b")]), 0.0);
    assert_eq!(bleu2(&[words("a b")], &[words("a b")]), 1.0);
}

/// Gold-as-prediction scores at the ceiling; inverting the masks leaves no
/// true positives.
#[test]
fn score_ceiling_and_inverted_masks() {
    let golds = [mask(&[1, 1, 0, 0, 0]), mask(&[0, 0, 0, 1, 0])];
    let docs: Vec<Document> = golds
        .iter()
        .enumerate()
        .map(|(i, g)| {
            Document::new(
                format!("d{i}"),
                (0..5).map(|j| format!("t{j}")).collect(),
                None,
                Some(i),
                Some(g.clone()),
            )
            .unwrap()
        })
        .collect();
    let perfect: Vec<Prediction> = docs
        .iter()
        .map(|d| Prediction {
            label: d.gold_label.unwrap(),
            rationale: d.gold_rationale.clone().unwrap(),
        })
        .collect();
    let r = score(&docs, &perfect, 2, &EvalOptions::default()).unwrap();
    assert_eq!(
        (r.task_f1, r.task_accuracy, r.token_precision, r.token_recall, r.token_f1, r.bleu2),
        (1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    );
    assert!((r.rationale_pct - 30.0).abs() < 1e-12);

    let inverted: Vec<Prediction> = perfect
        .iter()
        .map(|p| Prediction {
            label: p.label,
            rationale: RationaleMask::hard(&p.rationale.bits().iter().map(|b| !b).collect::<Vec<_>>()),
        })
        .collect();
    let r = score(&docs, &inverted, 2, &EvalOptions::default()).unwrap();
    // 7 predicted positives, all false; 3 gold positives, all missed
    assert_eq!((r.token_precision, r.token_recall, r.token_f1), (0.0, 0.0, 0.0));
    assert!((r.rationale_pct - 70.0).abs() < 1e-12);
}

fn ngrams(tokens: &[String], n: usize) -> BTreeMap<Vec<String>, usize> {
    let mut m = BTreeMap::new();
    for w in tokens.windows(n) {
        *m.entry(w.to_vec()).or_insert(0) += 1;
    }
    m
}

fn arb_masks() -> impl Strategy<Value = (Vec<RationaleMask>, Vec<RationaleMask>)> {
    prop::collection::vec(1usize..10, 1..12).prop_flat_map(|lens| {
        let one = |len: usize| prop::collection::vec(any::<bool>(), len).prop_map(|b| RationaleMask::hard(&b));
        let preds: Vec<_> = lens.iter().map(|&l| one(l)).collect();
        let golds: Vec<_> = lens.iter().map(|&l| one(l)).collect();
        (preds, golds)
    })
}

fn arb_texts() -> impl Strategy<Value = Vec<(Vec<String>, Vec<String>)>> {
    let text = prop::collection::vec("[abc]", 0..6);
    prop::collection::vec((text.clone(), text), 1..4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn metrics_stay_in_range(
        (preds, golds) in arb_masks(),
        labels in prop::collection::vec((0usize..3, 0usize..3), 1..20),
        texts in arb_texts(),
    ) {
        for avg in [Averaging::Micro, Averaging::Macro] {
            let prf = token_prf_with(&preds, &golds, avg).unwrap();
            for v in [prf.precision, prf.recall, prf.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let (p, g): (Vec<usize>, Vec<usize>) = labels.iter().copied().unzip();
            let f = task_f1_with(&p, &g, 3, avg).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
        }
        let prf = token_prf(&preds, &golds).unwrap();
        let harmonic = if prf.precision + prf.recall == 0.0 {
            0.0
        } else {
            2.0 * prf.precision * prf.recall / (prf.precision + prf.recall)
        };
        prop_assert!((prf.f1 - harmonic).abs() < 1e-12);
        let pct = rationale_pct(&preds);
        prop_assert!((0.0..=100.0).contains(&pct));
        let (p, g): (Vec<Vec<String>>, Vec<Vec<String>>) = texts.into_iter().unzip();
        let b = bleu2(&p, &g);
        prop_assert!((0.0..=1.0).contains(&b));
    }

    #[test]
    fn token_prf_ignores_document_order((preds, golds) in arb_masks(), seed in any::<u64>()) {
        let mut order: Vec<usize> = (0..preds.len()).collect();
        let mut s = seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let p2: Vec<RationaleMask> = order.iter().map(|&i| preds[i].clone()).collect();
        let g2: Vec<RationaleMask> = order.iter().map(|&i| golds[i].clone()).collect();
        for avg in [Averaging::Micro, Averaging::Macro] {
            let a = token_prf_with(&preds, &golds, avg).unwrap();
            let b = token_prf_with(&p2, &g2, avg).unwrap();
            prop_assert!((a.precision - b.precision).abs() < 1e-12);
            prop_assert!((a.recall - b.recall).abs() < 1e-12);
            prop_assert!((a.f1 - b.f1).abs() < 1e-12);
        }
    }

    /// BLEU-2 reaches 1 exactly when every document's prediction has the
    /// same unigram and bigram counts as its gold text; in particular
    /// identical texts score 1.
    #[test]
    fn bleu_is_one_exactly_on_matching_ngram_counts(texts in arb_texts()) {
        let (p, g): (Vec<Vec<String>>, Vec<Vec<String>>) = texts.into_iter().unzip();
        prop_assume!(g.iter().any(|t| !t.is_empty()));
        let b = bleu2(&p, &g);
        let same_counts = p.iter().zip(&g).all(|(x, y)| ngrams(x, 1) == ngrams(y, 1) && ngrams(x, 2) == ngrams(y, 2));
        prop_assert_eq!(b == 1.0, same_counts, "bleu {}", b);
        prop_assert_eq!(bleu2(&g, &g), 1.0);
        if p == g {
            prop_assert_eq!(b, 1.0);
        }
    }
}
