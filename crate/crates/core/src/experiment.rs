//! Experiment plumbing shared by the command-line driver and the benchmark
//! tests: three-way corpus splits, model-ready datasets, the planted-phrase
//! benchmark and the loss-component ablation rows.

use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, sample_few_shot, Corpus, SealedGold, SyntheticConfig, Vocab};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::MetricReport;
use crate::losses::LossWeights;
use crate::model::ModelConfig;
use crate::scalar::Scalar;
use crate::selftrain::{self_train, teacher_only, IterationRecord, PreparedSet, SelfTrainConfig};

/// Labeled, unlabeled and validation corpora carved from one annotated
/// corpus. The unlabeled documents are stripped; their gold is sealed.
#[derive(Debug, Clone)]
pub struct ExperimentSplit {
    pub labeled: Corpus,
    pub unlabeled: Corpus,
    pub validation: Corpus,
    pub unlabeled_gold: SealedGold,
    pub seed: u64,
}

/// Samples `n_per_class` labeled documents per class, then takes the first
/// `num_validation` of the remaining documents (corpus order) as validation
/// data and leaves the rest unlabeled.
pub fn split_for_experiment(
    corpus: &Corpus,
    n_per_class: usize,
    num_validation: usize,
    seed: u64,
) -> Result<ExperimentSplit> {
    let few = sample_few_shot(corpus, n_per_class, seed)?;
    let rest = few.sealed_gold.unseal(&few.unlabeled);
    if rest.len() <= num_validation {
        return Err(Error::Config(format!(
            "{} documents remain after labeling, not enough for {num_validation} validation documents plus an unlabeled pool",
            rest.len()
        )));
    }
    let (val, unl) = rest.documents.split_at(num_validation);
    let validation = rest.with_documents(val.to_vec());
    let gold_side = rest.with_documents(unl.to_vec());
    let unlabeled = rest.with_documents(unl.iter().map(|d| d.stripped()).collect());
    Ok(ExperimentSplit {
        labeled: few.labeled,
        unlabeled,
        validation,
        unlabeled_gold: SealedGold::from_corpus(&gold_side),
        seed,
    })
}

/// Everything a training run consumes.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub vocab: Vocab,
    pub model_config: ModelConfig,
    pub labeled: PreparedSet,
    pub unlabeled: PreparedSet,
    pub validation: PreparedSet,
}

impl Experiment {
    /// Builds the vocabulary from the training documents (labeled and
    /// unlabeled) and encodes all three sets. `encoder` supplies the shape;
    /// its vocabulary size, special ids and length limit are overwritten.
    pub fn new(
        labeled: &Corpus,
        unlabeled: &Corpus,
        validation: &Corpus,
        encoder: &EncoderConfig,
        max_len: usize,
    ) -> Result<Self> {
        let vocab = Vocab::build(labeled.documents.iter().chain(&unlabeled.documents));
        Experiment::with_vocab(vocab, labeled, unlabeled, validation, encoder, max_len)
    }

    pub fn with_vocab(
        vocab: Vocab,
        labeled: &Corpus,
        unlabeled: &Corpus,
        validation: &Corpus,
        encoder: &EncoderConfig,
        max_len: usize,
    ) -> Result<Self> {
        let encoder = EncoderConfig {
            vocab_size: vocab.len(),
            max_len,
            pad_token_id: vocab.pad_id(),
            mask_token_id: vocab.mask_id(),
            sep_token_id: vocab.sep_id(),
            ..encoder.clone()
        };
        let model_config = ModelConfig {
            encoder,
            num_classes: labeled.num_classes,
        };
        model_config.validate()?;
        let prep = |c: &Corpus| PreparedSet::new(c.documents.clone(), &vocab, max_len);
        Ok(Experiment {
            labeled: prep(labeled),
            unlabeled: prep(unlabeled),
            validation: prep(validation),
            model_config,
            vocab,
        })
    }
}

/// The planted-phrase benchmark: two classes, 200 word types, 30-token
/// documents with a 3-token phrase, 20 labeled documents per class, 2,000
/// unlabeled and 200 validation documents, reference encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticBenchmark {
    pub corpus: SyntheticConfig,
    pub labeled_per_class: usize,
    pub num_unlabeled: usize,
    pub num_validation: usize,
    pub max_len: usize,
}

impl Default for SyntheticBenchmark {
    fn default() -> Self {
        SyntheticBenchmark {
            corpus: SyntheticConfig::default(),
            labeled_per_class: 20,
            num_unlabeled: 2000,
            num_validation: 200,
            max_len: 32,
        }
    }
}

impl SyntheticBenchmark {
    /// Self-training settings used on the benchmark: exactly ten iterations
    /// at a learning rate suited to the small encoder.
    pub fn self_train_config(seed: u64) -> SelfTrainConfig {
        SelfTrainConfig {
            max_iterations: 10,
            early_stop_patience: 10,
            learning_rate: 1e-3,
            seed,
            ..SelfTrainConfig::default()
        }
    }

    pub fn corpus(&self, seed: u64) -> Result<Corpus> {
        let num_docs = self.labeled_per_class * self.corpus.num_classes + self.num_unlabeled + self.num_validation;
        generate_synthetic(&SyntheticConfig {
            num_docs,
            seed,
            ..self.corpus.clone()
        })
    }

    pub fn split(&self, seed: u64) -> Result<ExperimentSplit> {
        split_for_experiment(&self.corpus(seed)?, self.labeled_per_class, self.num_validation, seed)
    }

    pub fn build(&self, seed: u64) -> Result<Experiment> {
        let s = self.split(seed)?;
        Experiment::new(
            &s.labeled,
            &s.unlabeled,
            &s.validation,
            &EncoderConfig::reference(0, self.max_len),
            self.max_len,
        )
    }
}

/// Cumulative loss-component subsets, from the bare teacher to the full
/// objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationRow {
    TeacherOnly,
    Sufficiency,
    Reweighting,
    Sparsity,
    Completeness,
    Full,
}

impl AblationRow {
    pub const ALL: [AblationRow; 6] = [
        AblationRow::TeacherOnly,
        AblationRow::Sufficiency,
        AblationRow::Reweighting,
        AblationRow::Sparsity,
        AblationRow::Completeness,
        AblationRow::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationRow::TeacherOnly => "teacher-only",
            AblationRow::Sufficiency => "sufficiency",
            AblationRow::Reweighting => "re-weighting",
            AblationRow::Sparsity => "sparsity",
            AblationRow::Completeness => "completeness",
            AblationRow::Full => "full",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        AblationRow::ALL
            .into_iter()
            .find(|r| r.name() == name)
            .ok_or_else(|| {
                let known: Vec<&str> = AblationRow::ALL.iter().map(|r| r.name()).collect();
                Error::Config(format!("unknown ablation row {name:?}; expected one of {known:?}"))
            })
    }

    /// Student settings for this row, or `None` when no student is trained.
    ///
    /// | row | pseudo | suff | sparsity | comp | continuity | re-weighting |
    /// |---|---|---|---|---|---|---|
    /// | sufficiency | 1 | 1 | 0 | 0 | 0 | off |
    /// | re-weighting | 1 | 1 | 0 | 0 | 0 | on |
    /// | sparsity | 1 | 1 | 1 | 0 | 0 | on |
    /// | completeness | 1 | 1 | 1 | 1 | 0 | on |
    /// | full | 1 | 1 | 1 | 1 | 1 | on |
    pub fn configure(self, base: &SelfTrainConfig) -> Option<SelfTrainConfig> {
        let on = |b: bool| if b { 1.0 } else { 0.0 };
        let rank = AblationRow::ALL.iter().position(|&r| r == self).expect("listed");
        if rank == 0 {
            return None;
        }
        let mut cfg = base.clone();
        cfg.loss_weights = LossWeights {
            coef_wu: 1.0,
            coef_suff: 1.0,
            coef_sparsity: on(rank >= 3),
            coef_comp: on(rank >= 4),
            coef_continuity: on(rank >= 5),
        };
        cfg.loss_options.reweight_task = rank >= 2;
        cfg.loss_options.reweight_rationale = rank >= 2;
        Some(cfg)
    }
}

/// Validation metrics of one ablation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub row: AblationRow,
    pub seed: u64,
    pub report: MetricReport,
    /// 1-based iteration of the returned student.
    pub best_iteration: Option<usize>,
    pub records: Vec<IterationRecord>,
}

pub fn run_ablation_row<T: Scalar>(
    row: AblationRow,
    experiment: &Experiment,
    base: &SelfTrainConfig,
) -> Result<AblationResult> {
    let Experiment {
        model_config,
        labeled,
        unlabeled,
        validation,
        ..
    } = experiment;
    match row.configure(base) {
        None => {
            let (_, _, report) = teacher_only::<T>(model_config.clone(), base, labeled, validation)?;
            Ok(AblationResult {
                row,
                seed: base.seed,
                report,
                best_iteration: None,
                records: Vec::new(),
            })
        }
        Some(cfg) => {
            let outcome = self_train::<T>(model_config.clone(), cfg.clone(), labeled, unlabeled, validation)?;
            let report = match outcome.best_iteration {
                Some(i) => outcome.records[i - 1].validation.clone(),
                None => crate::eval::evaluate(&outcome.model, &validation.docs, &validation.inputs, &cfg.eval)?,
            };
            Ok(AblationResult {
                row,
                seed: base.seed,
                report,
                best_iteration: outcome.best_iteration,
                records: outcome.records,
            })
        }
    }
}
