//! Task and rationale metrics.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Document, ModelInput, RationaleMask};
use crate::error::{Error, Result};
use crate::model::MultiTaskModel;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Pool counts over everything, then compute the score once.
    Micro,
    /// Score each group (class or document) separately and average.
    #[default]
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub task_averaging: Averaging,
    pub token_averaging: Averaging,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            task_averaging: Averaging::Macro,
            token_averaging: Averaging::Micro,
        }
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Macro-averaged F1 over `k` classes. A class that is neither predicted nor
/// present scores 0.
pub fn task_f1(predictions: &[usize], golds: &[usize], k: usize) -> Result<f64> {
    task_f1_with(predictions, golds, k, Averaging::Macro)
}

pub fn task_f1_with(predictions: &[usize], golds: &[usize], k: usize, averaging: Averaging) -> Result<f64> {
    if predictions.len() != golds.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            golds.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Empty("task F1 of an empty set".into()));
    }
    if let Some(&bad) = predictions.iter().chain(golds).find(|&&c| c >= k) {
        return Err(Error::Config(format!("class {bad} outside 0..{k}")));
    }
    let mut tp = vec![0usize; k];
    let mut fp = vec![0usize; k];
    let mut fn_ = vec![0usize; k];
    for (&p, &g) in predictions.iter().zip(golds) {
        if p == g {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[g] += 1;
        }
    }
    Ok(match averaging {
        Averaging::Macro => {
            (0..k)
                .map(|c| f1(ratio(tp[c], tp[c] + fp[c]), ratio(tp[c], tp[c] + fn_[c])))
                .sum::<f64>()
                / k as f64
        }
        Averaging::Micro => {
            let (t, f, n) = (tp.iter().sum(), fp.iter().sum::<usize>(), fn_.iter().sum::<usize>());
            f1(ratio(t, t + f), ratio(t, t + n))
        }
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Prf {
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }
}

/// Token-level precision/recall/F1 of predicted against gold masks, micro
/// averaged over all tokens.
pub fn token_prf(pred_masks: &[RationaleMask], gold_masks: &[RationaleMask]) -> Result<Prf> {
    token_prf_with(pred_masks, gold_masks, Averaging::Micro)
}

/// With [`Averaging::Macro`], P, R and F1 are each the mean of the
/// per-document values.
pub fn token_prf_with(pred_masks: &[RationaleMask], gold_masks: &[RationaleMask], averaging: Averaging) -> Result<Prf> {
    if pred_masks.len() != gold_masks.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predicted masks for {} gold masks",
            pred_masks.len(),
            gold_masks.len()
        )));
    }
    let mut counts = Vec::with_capacity(pred_masks.len());
    for (i, (p, g)) in pred_masks.iter().zip(gold_masks).enumerate() {
        if p.len() != g.len() {
            return Err(Error::LengthMismatch(format!(
                "document {i}: predicted mask has {} tokens, gold has {}",
                p.len(),
                g.len()
            )));
        }
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for j in 0..p.len() {
            match (p.bit(j), g.bit(j)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        counts.push((tp, fp, fn_));
    }
    Ok(match averaging {
        Averaging::Micro => {
            let (tp, fp, fn_) = counts
                .iter()
                .fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
            Prf::from_counts(tp, fp, fn_)
        }
        Averaging::Macro => {
            if counts.is_empty() {
                return Ok(Prf::default());
            }
            let n = counts.len() as f64;
            let per: Vec<Prf> = counts.iter().map(|&(a, b, c)| Prf::from_counts(a, b, c)).collect();
            Prf {
                precision: per.iter().map(|x| x.precision).sum::<f64>() / n,
                recall: per.iter().map(|x| x.recall).sum::<f64>() / n,
                f1: per.iter().map(|x| x.f1).sum::<f64>() / n,
            }
        }
    })
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for w in tokens.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

/// Corpus BLEU with uniform unigram and bigram weights and a brevity
/// penalty. Clipped n-gram matches and lengths are pooled over documents.
/// If no prediction contains a bigram, the score uses unigram precision
/// alone, so single-token rationales can still match exactly.
pub fn bleu2(pred_tokens: &[Vec<String>], gold_tokens: &[Vec<String>]) -> f64 {
    let (mut matched, mut total) = ([0usize; 2], [0usize; 2]);
    let (mut pred_len, mut gold_len) = (0usize, 0usize);
    for (p, g) in pred_tokens.iter().zip(gold_tokens) {
        pred_len += p.len();
        gold_len += g.len();
        for n in 1..=2 {
            let gold = ngram_counts(g, n);
            for (gram, c) in ngram_counts(p, n) {
                matched[n - 1] += c.min(gold.get(gram).copied().unwrap_or(0));
            }
            total[n - 1] += p.len().saturating_sub(n - 1);
        }
    }
    if pred_len == 0 || matched[0] == 0 {
        return 0.0;
    }
    let p1 = matched[0] as f64 / total[0] as f64;
    let log_mean = if total[1] == 0 {
        p1.ln()
    } else if matched[1] == 0 {
        return 0.0;
    } else {
        0.5 * p1.ln() + 0.5 * (matched[1] as f64 / total[1] as f64).ln()
    };
    let bp = if pred_len >= gold_len {
        1.0
    } else {
        (1.0 - gold_len as f64 / pred_len as f64).exp()
    };
    bp * log_mean.exp()
}

/// Percentage of tokens selected across all masks; 0 for an empty set.
pub fn rationale_pct(masks: &[RationaleMask]) -> f64 {
    let total: usize = masks.iter().map(|m| m.len()).sum();
    let ones: usize = masks.iter().map(|m| m.count_ones()).sum();
    100.0 * ratio(ones, total)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task_f1: f64,
    pub task_accuracy: f64,
    pub token_precision: f64,
    pub token_recall: f64,
    pub token_f1: f64,
    pub bleu2: f64,
    pub rationale_pct: f64,
    pub num_documents: usize,
    /// Gold documents per class.
    pub support: Vec<usize>,
}

impl MetricReport {
    /// Flat `key -> number` record; support expands to `support_<class>`.
    pub fn flat(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("task_f1".into(), self.task_f1);
        m.insert("task_accuracy".into(), self.task_accuracy);
        m.insert("token_precision".into(), self.token_precision);
        m.insert("token_recall".into(), self.token_recall);
        m.insert("token_f1".into(), self.token_f1);
        m.insert("bleu2".into(), self.bleu2);
        m.insert("rationale_pct".into(), self.rationale_pct);
        m.insert("num_documents".into(), self.num_documents as f64);
        for (c, n) in self.support.iter().enumerate() {
            m.insert(format!("support_{c}"), *n as f64);
        }
        m
    }
}

/// A prediction for one document over its (possibly truncated) model input.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub rationale: RationaleMask,
}

/// Scores predictions against the documents' gold annotations. Gold masks
/// are truncated to the predicted length.
pub fn score(docs: &[Document], predictions: &[Prediction], num_classes: usize, options: &EvalOptions) -> Result<MetricReport> {
    if docs.len() != predictions.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions for {} documents",
            predictions.len(),
            docs.len()
        )));
    }
    let mut golds = Vec::with_capacity(docs.len());
    let mut gold_masks = Vec::with_capacity(docs.len());
    let mut pred_text = Vec::with_capacity(docs.len());
    let mut gold_text = Vec::with_capacity(docs.len());
    for (d, p) in docs.iter().zip(predictions) {
        let label = d.gold_label.ok_or_else(|| Error::MissingGold(d.id.clone()))?;
        let gold = d
            .gold_rationale
            .as_ref()
            .ok_or_else(|| Error::MissingGold(d.id.clone()))?
            .truncated(p.rationale.len());
        pred_text.push(d.rationale_tokens(&p.rationale));
        gold_text.push(d.rationale_tokens(&gold));
        golds.push(label);
        gold_masks.push(gold);
    }
    let labels: Vec<usize> = predictions.iter().map(|p| p.label).collect();
    let pred_masks: Vec<RationaleMask> = predictions.iter().map(|p| p.rationale.clone()).collect();
    let prf = token_prf_with(&pred_masks, &gold_masks, options.token_averaging)?;
    let mut support = vec![0; num_classes];
    for &g in &golds {
        if g < num_classes {
            support[g] += 1;
        }
    }
    let correct = labels.iter().zip(&golds).filter(|(a, b)| a == b).count();
    Ok(MetricReport {
        task_f1: task_f1_with(&labels, &golds, num_classes, options.task_averaging)?,
        task_accuracy: ratio(correct, golds.len()),
        token_precision: prf.precision,
        token_recall: prf.recall,
        token_f1: prf.f1,
        bleu2: bleu2(&pred_text, &gold_text),
        rationale_pct: rationale_pct(&pred_masks),
        num_documents: docs.len(),
        support,
    })
}

/// Runs the model on every input (in parallel, order preserved).
pub fn predict<T: Scalar>(model: &MultiTaskModel<T>, inputs: &[ModelInput]) -> Result<Vec<Prediction>> {
    inputs
        .par_iter()
        .map(|input| {
            let (task, rationale) = model.forward(input)?;
            Ok(Prediction {
                label: task.argmax(),
                rationale: rationale.to_mask(),
            })
        })
        .collect()
}

pub fn evaluate<T: Scalar>(
    model: &MultiTaskModel<T>,
    docs: &[Document],
    inputs: &[ModelInput],
    options: &EvalOptions,
) -> Result<MetricReport> {
    let preds = predict(model, inputs)?;
    score(docs, &preds, model.num_classes(), options)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(bits: &[u8]) -> RationaleMask {
        RationaleMask::hard(&bits.iter().map(|&b| b == 1).collect::<Vec<_>>())
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn task_f1_examples() {
        assert_eq!(task_f1(&[0, 1, 1], &[0, 1, 1], 2).unwrap(), 1.0);
        let f = task_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert!((f - 1.0 / 3.0).abs() < 1e-12);
        assert!(task_f1(&[], &[], 2).is_err());
        assert!(task_f1(&[0], &[0, 1], 2).is_err());
        let micro = task_f1_with(&[0, 0, 0, 0], &[0, 0, 1, 1], 2, Averaging::Micro).unwrap();
        assert!((micro - 0.5).abs() < 1e-12);
    }

    #[test]
    fn token_prf_examples() {
        let p = token_prf(&[mask(&[1, 0, 1])], &[mask(&[1, 1, 0])]).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (0.5, 0.5, 0.5));
        let p = token_prf(&[mask(&[1, 1, 0])], &[mask(&[1, 1, 0])]).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        let p = token_prf(&[mask(&[0, 0, 0])], &[mask(&[1, 1, 0])]).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
        assert!(token_prf(&[mask(&[0, 0])], &[mask(&[1, 1, 0])]).is_err());
    }

    #[test]
    fn bleu_examples() {
        assert_eq!(bleu2(&[toks("a b c")], &[toks("a b c")]), 1.0);
        assert_eq!(bleu2(&[vec![]], &[toks("a b")]), 0.0);
        let b = bleu2(&[toks("a b c")], &[toks("a b d")]);
        let expected = (0.5 * (2.0f64 / 3.0).ln() + 0.5 * 0.5f64.ln()).exp();
        assert!((b - expected).abs() < 1e-12 && (b - 0.577).abs() < 1e-3);
        assert_eq!(bleu2(&[toks("x")], &[toks("x")]), 1.0);
        // shorter prediction pays the brevity penalty
        let short = bleu2(&[toks("a b")], &[toks("a b c d")]);
        assert!((short - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn rationale_pct_examples() {
        assert_eq!(rationale_pct(&[mask(&[0, 0])]), 0.0);
        assert_eq!(rationale_pct(&[mask(&[1, 1])]), 100.0);
        assert_eq!(rationale_pct(&[mask(&[1, 0, 0, 0]), mask(&[1, 1, 0, 0])]), 37.5);
    }

    #[test]
    fn flat_record_expands_support() {
        let r = MetricReport {
            support: vec![3, 4],
            ..Default::default()
        };
        let f = r.flat();
        assert_eq!(f["support_1"], 4.0);
        assert!(f.contains_key("token_f1"));
    }
}
