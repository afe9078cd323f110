//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use fewshot_rationale::data::{Document, ModelInput, RationaleMask};
use fewshot_rationale::encoder::EncoderConfig;
use fewshot_rationale::losses::LabeledExample;
use fewshot_rationale::model::{ModelConfig, ModelGrads, MultiTaskModel, PseudoLabeledExample};
use rand::Rng;

pub const TINY_VOCAB: usize = 24;
pub const TINY_MAX_LEN: usize = 16;
pub const MASK_ID: usize = 1;
pub const SEP_ID: usize = 2;
pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 4;
/// First id of an ordinary word.
pub const FIRST_WORD: usize = 5;

/// Hidden size 8, one layer, no dropout.
pub fn tiny_config(k: usize) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            vocab_size: TINY_VOCAB,
            hidden_dim: 8,
            num_layers: 1,
            num_heads: 2,
            ffn_dim: 16,
            max_len: TINY_MAX_LEN,
            dropout_rate: 0.0,
            pad_token_id: PAD_ID,
            mask_token_id: MASK_ID,
            sep_token_id: SEP_ID,
        },
        num_classes: k,
    }
}

pub fn tiny_model(k: usize, seed: u64) -> MultiTaskModel<f64> {
    MultiTaskModel::new(tiny_config(k), seed).unwrap()
}

/// Random input: an optional classification token, `doc_len` ordinary
/// tokens, optionally a separator and a query, optionally trailing padding.
pub fn random_input<R: Rng>(rng: &mut R) -> ModelInput {
    let doc_start = rng.random_range(0..=1);
    let doc_len = rng.random_range(2..=8);
    let mut ids = vec![CLS_ID; doc_start];
    ids.extend((0..doc_len).map(|_| rng.random_range(FIRST_WORD..TINY_VOCAB)));
    if rng.random_bool(0.5) {
        ids.push(SEP_ID);
        for _ in 0..rng.random_range(1..=3) {
            ids.push(rng.random_range(FIRST_WORD..TINY_VOCAB));
        }
    }
    for _ in 0..rng.random_range(0..=2) {
        ids.push(PAD_ID);
    }
    ModelInput {
        ids,
        doc_start,
        doc_len,
        truncated: false,
    }
}

pub fn random_bits<R: Rng>(rng: &mut R, n: usize) -> Vec<bool> {
    (0..n).map(|_| rng.random_bool(0.4)).collect()
}

fn stub_doc(input: &ModelInput) -> Document {
    let tokens = input.doc_ids().iter().map(|i| format!("t{i}")).collect();
    Document::new("probe", tokens, None, None, None).unwrap()
}

pub fn random_labeled<R: Rng>(rng: &mut R, k: usize) -> LabeledExample {
    let input = random_input(rng);
    let rationale = RationaleMask::hard(&random_bits(rng, input.doc_len));
    LabeledExample {
        label: rng.random_range(0..k),
        rationale,
        input,
    }
}

pub fn random_pseudo<R: Rng>(rng: &mut R, k: usize) -> PseudoLabeledExample {
    let input = random_input(rng);
    let n = input.doc_len;
    PseudoLabeledExample {
        doc: stub_doc(&input),
        y_pseudo: rng.random_range(0..k),
        y_confidence: rng.random_range(0.05..1.0),
        r_pseudo: RationaleMask::hard(&random_bits(rng, n)),
        r_confidences: (0..n).map(|_| rng.random_range(0.5..1.0)).collect(),
        input,
    }
}

/// Worst per-coordinate relative error between an analytic gradient and
/// fourth-order central differences of `f` over every parameter of `model`.
/// Relative error is `|a - n| / max(|a|, |n|, floor)`.
pub fn gradcheck<F>(model: &MultiTaskModel<f64>, analytic: &ModelGrads<f64>, step: f64, floor: f64, f: F) -> f64
where
    F: Fn(&MultiTaskModel<f64>) -> f64,
{
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for part in 0..5 {
        for i in 0..analytic.parts[part].len() {
            let orig = probe.parts_mut()[part][i];
            let mut at = |x: f64| {
                probe.parts_mut()[part][i] = orig + x;
                f(&probe)
            };
            let (p1, m1, p2, m2) = (at(step), at(-step), at(2.0 * step), at(-2.0 * step));
            probe.parts_mut()[part][i] = orig;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step);
            let a = analytic.parts[part][i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
        }
    }
    worst
}

/// 12-token documents, 10 labeled per class, 300 unlabeled, 60 validation.
pub fn small_benchmark() -> fewshot_rationale::experiment::SyntheticBenchmark {
    use fewshot_rationale::data::SyntheticConfig;
    fewshot_rationale::experiment::SyntheticBenchmark {
        corpus: SyntheticConfig {
            vocab_size: 60,
            signal_words_per_class: 8,
            doc_len_min: 12,
            doc_len_max: 12,
            ..SyntheticConfig::default()
        },
        labeled_per_class: 10,
        num_unlabeled: 300,
        num_validation: 60,
        max_len: 16,
    }
}

/// [`small_benchmark`] with a width-16 single-layer encoder.
pub fn small_experiment(seed: u64) -> fewshot_rationale::experiment::Experiment {
    use fewshot_rationale::experiment::Experiment;
    let split = small_benchmark().split(seed).unwrap();
    let encoder = EncoderConfig {
        hidden_dim: 16,
        num_layers: 1,
        num_heads: 2,
        ffn_dim: 32,
        dropout_rate: 0.1,
        ..EncoderConfig::reference(0, 16)
    };
    Experiment::new(&split.labeled, &split.unlabeled, &split.validation, &encoder, 16).unwrap()
}

/// Training settings sized for [`small_experiment`].
pub fn small_config(seed: u64) -> fewshot_rationale::selftrain::SelfTrainConfig {
    fewshot_rationale::selftrain::SelfTrainConfig {
        max_iterations: 3,
        early_stop_patience: 3,
        teacher_epochs: 15,
        teacher_patience: 3,
        learning_rate: 3e-3,
        seed,
        ..Default::default()
    }
}
