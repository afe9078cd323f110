//! Planted-phrase corpora: every document hides one contiguous phrase drawn
//! from its class's private lexicon inside class-independent noise, so the
//! label and the rationale are both known exactly.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, Document, RationaleMask};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Distinct word types, signal and noise together.
    pub vocab_size: usize,
    pub num_classes: usize,
    pub phrase_len: usize,
    /// Size of each class's private signal lexicon.
    pub signal_words_per_class: usize,
    /// Zipf exponent over a class lexicon; 0 is uniform.
    pub signal_zipf: f64,
    /// Zipf exponent over the noise lexicon; 0 is uniform.
    pub noise_zipf: f64,
    pub doc_len_min: usize,
    pub doc_len_max: usize,
    pub num_docs: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            vocab_size: 200,
            num_classes: 2,
            phrase_len: 3,
            signal_words_per_class: 24,
            signal_zipf: 1.0,
            noise_zipf: 0.0,
            doc_len_min: 30,
            doc_len_max: 30,
            num_docs: 1000,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.num_classes < 2 {
            return err(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.phrase_len == 0 || self.signal_words_per_class == 0 {
            return err("phrase_len and signal_words_per_class must be positive".into());
        }
        if self.doc_len_min < self.phrase_len || self.doc_len_max < self.doc_len_min {
            return err(format!(
                "document length range [{}, {}] cannot hold a phrase of {}",
                self.doc_len_min, self.doc_len_max, self.phrase_len
            ));
        }
        let signal = self.num_classes * self.signal_words_per_class;
        if signal >= self.vocab_size {
            return err(format!(
                "vocabulary of {} leaves no noise words after {} signal words",
                self.vocab_size, signal
            ));
        }
        if self.signal_zipf < 0.0 || self.noise_zipf < 0.0 {
            return err("zipf exponents must be non-negative".into());
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.num_classes).map(|c| format!("class{c}")).collect()
    }

    pub fn signal_word(class: usize, i: usize) -> String {
        format!("c{class}w{i}")
    }

    pub fn noise_word(i: usize) -> String {
        format!("n{i}")
    }
}

fn zipf_weights(n: usize, exponent: f64) -> Vec<f64> {
    (1..=n).map(|r| (r as f64).powf(-exponent)).collect()
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Corpus> {
    config.validate()?;
    let noise_count = config.vocab_size - config.num_classes * config.signal_words_per_class;
    let noise = WeightedIndex::new(zipf_weights(noise_count, config.noise_zipf))
        .expect("positive weights");
    let signal = WeightedIndex::new(zipf_weights(
        config.signal_words_per_class,
        config.signal_zipf,
    ))
    .expect("positive weights");

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut documents = Vec::with_capacity(config.num_docs);
    for i in 0..config.num_docs {
        let label = rng.random_range(0..config.num_classes);
        let len = rng.random_range(config.doc_len_min..=config.doc_len_max);
        let start = rng.random_range(0..=len - config.phrase_len);
        let mut tokens = Vec::with_capacity(len);
        let mut bits = vec![false; len];
        for (j, bit) in bits.iter_mut().enumerate() {
            if (start..start + config.phrase_len).contains(&j) {
                tokens.push(SyntheticConfig::signal_word(label, signal.sample(&mut rng)));
                *bit = true;
            } else {
                tokens.push(SyntheticConfig::noise_word(noise.sample(&mut rng)));
            }
        }
        documents.push(Document::new(
            format!("syn{}-{i}", config.seed),
            tokens,
            None,
            Some(label),
            Some(RationaleMask::hard(&bits)),
        )?);
    }
    Corpus::new(documents, config.class_names())
}
