//! Teacher/student self-training.
//!
//! Each iteration (optionally) refits the teacher on the labeled set,
//! pseudo-labels the unlabeled pool with it, trains a student on the joint
//! objective over those pseudo-labels, scores the student on validation data
//! and copies it into the teacher. The loop stops after `max_iterations` or
//! once the selection metric has not improved for `early_stop_patience`
//! iterations, and returns the best student seen.
//!
//! All randomness (batch order, dropout, fresh student initialization) is
//! drawn from seeds derived from `(seed, iteration, phase)`, so an
//! interrupted run resumed from its last completed iteration replays the
//! remaining iterations exactly.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{build_input, Document, ModelInput, Vocab};
use crate::error::{Error, Result};
use crate::eval::{evaluate, rationale_pct, EvalOptions, MetricReport};
use crate::losses::{
    compute_batch_weights_with, joint_student_loss, supervised_terms, LabeledExample, LossOptions, LossTerms,
    LossWeights, Mode, SupervisedTerms,
};
use crate::model::{copy_into_teacher, pseudo_label, pseudo_label_sampled, MultiTaskModel, PseudoLabeledExample};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    ValidationTotalLoss,
    ValidationRationaleLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfTrainConfig {
    pub max_iterations: usize,
    /// Upper bound on teacher epochs per fit; early stopping usually ends
    /// the fit sooner.
    pub teacher_epochs: usize,
    /// Epochs without validation improvement before a teacher fit stops.
    pub teacher_patience: usize,
    pub student_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    pub loss_weights: LossWeights,
    pub loss_options: LossOptions,
    pub refit_teacher_each_iter: bool,
    pub class_rebalance: bool,
    pub early_stop_patience: usize,
    pub selection_metric: SelectionMetric,
    /// Start each student from the teacher's parameters (otherwise from a
    /// fresh initialization).
    pub warm_start_student: bool,
    /// Draw pseudo-labels from the teacher's distributions instead of
    /// taking their modes.
    pub sample_pseudo_labels: bool,
    pub eval: EvalOptions,
    pub seed: u64,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        SelfTrainConfig {
            max_iterations: 15,
            teacher_epochs: 50,
            teacher_patience: 5,
            student_epochs: 1,
            batch_size: 16,
            learning_rate: 3e-5,
            max_grad_norm: Some(1.0),
            loss_weights: LossWeights::default(),
            loss_options: LossOptions::default(),
            refit_teacher_each_iter: true,
            class_rebalance: false,
            early_stop_patience: 3,
            selection_metric: SelectionMetric::ValidationTotalLoss,
            warm_start_student: true,
            sample_pseudo_labels: false,
            eval: EvalOptions::default(),
            seed: 0,
        }
    }
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.loss_weights.validate()?;
        self.adam().validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            max_grad_norm: self.max_grad_norm,
            ..AdamConfig::default()
        }
    }
}

/// Documents paired with their model inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSet {
    pub docs: Vec<Document>,
    pub inputs: Vec<ModelInput>,
}

impl PreparedSet {
    pub fn new(docs: Vec<Document>, vocab: &Vocab, max_len: usize) -> Self {
        let inputs = docs.iter().map(|d| build_input(vocab, d, max_len)).collect();
        PreparedSet { docs, inputs }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Labeled examples for the supervised loss; every document needs gold.
    pub fn labeled_examples(&self) -> Result<Vec<LabeledExample>> {
        self.docs
            .iter()
            .zip(&self.inputs)
            .map(|(d, i)| LabeledExample::from_document(d, i.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub train: SupervisedTerms,
    pub validation: SupervisedTerms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherSummary {
    pub epochs: Vec<EpochLoss>,
    /// Index into `epochs` whose parameters were kept.
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentSummary {
    pub steps: usize,
    pub coefficients: LossWeights,
    /// Mean raw term values over all steps.
    pub mean_terms: LossTerms,
    pub mean_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    pub teacher_fit: Option<TeacherSummary>,
    /// Validation metrics of the teacher that produced the pseudo-labels.
    pub teacher_validation: MetricReport,
    pub student_fit: StudentSummary,
    pub pseudo_histogram: Vec<usize>,
    pub pseudo_rationale_pct: f64,
    pub validation: MetricReport,
    pub validation_total_loss: f64,
    pub validation_rationale_loss: f64,
    /// Predicted rationale percentage on validation data.
    pub rationale_pct: f64,
    pub selection_value: f64,
    pub is_best: bool,
}

/// Hooks called by [`SelfTrainer::step`]. Errors abort the run.
pub trait Observer<T: Scalar> {
    fn teacher_fitted(&mut self, _iteration: usize, _teacher: &MultiTaskModel<T>) -> Result<()> {
        Ok(())
    }

    /// Right after the student has been copied into the teacher.
    fn after_copy(&mut self, _iteration: usize, _student: &MultiTaskModel<T>, _teacher: &MultiTaskModel<T>) -> Result<()> {
        Ok(())
    }

    fn iteration_done(&mut self, _record: &IterationRecord, _trainer: &SelfTrainer<T>) -> Result<()> {
        Ok(())
    }
}

/// An observer that does nothing.
pub struct NoObserver;

impl<T: Scalar> Observer<T> for NoObserver {}

#[derive(Debug, Clone, Copy)]
enum Phase {
    TeacherShuffle = 1,
    TeacherDropout = 2,
    StudentShuffle = 3,
    StudentDropout = 4,
    StudentInit = 5,
    PseudoSample = 6,
}

/// Seed for one phase of one iteration (splitmix64 over the key).
pub fn phase_seed(seed: u64, iteration: usize, phase: u64) -> u64 {
    let mut z = seed ^ (iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ phase.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn seed_for(seed: u64, iteration: usize, phase: Phase, sub: usize) -> u64 {
    phase_seed(phase_seed(seed, iteration, phase as u64), sub, 0)
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

fn validation_terms<T: Scalar>(model: &MultiTaskModel<T>, validation: &[LabeledExample], opts: &LossOptions) -> Result<SupervisedTerms> {
    Ok(supervised_terms(model, validation, opts, Mode::value_only())?.0)
}

/// Minibatch Adam on the supervised loss with early stopping on validation
/// loss; the best epoch's parameters are restored. `iteration` only feeds
/// the seed derivation.
pub fn fit_teacher<T: Scalar>(
    teacher: &mut MultiTaskModel<T>,
    labeled: &PreparedSet,
    validation: &PreparedSet,
    config: &SelfTrainConfig,
    iteration: usize,
) -> Result<TeacherSummary> {
    config.validate()?;
    let train = labeled.labeled_examples()?;
    if train.is_empty() {
        return Err(Error::Empty("teacher fit needs labeled documents".into()));
    }
    let val = validation.labeled_examples()?;
    let opts = &config.loss_options;
    let mut adam = Adam::new(config.adam(), teacher)?;
    let mut best: Option<(f64, usize, MultiTaskModel<T>)> = None;
    let mut epochs = Vec::new();
    let mut stale = 0;
    for epoch in 0..config.teacher_epochs {
        let order = shuffled(train.len(), seed_for(config.seed, iteration, Phase::TeacherShuffle, epoch));
        let mut sum = SupervisedTerms::default();
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<LabeledExample> = chunk.iter().map(|&i| train[i].clone()).collect();
            let mode = Mode::train(seed_for(config.seed, iteration, Phase::TeacherDropout, epoch * 1_000_003 + b));
            let (terms, grads) = supervised_terms(teacher, &batch, opts, mode)?;
            let grads = grads.expect("gradients requested");
            if !terms.total().is_finite() || !grads.is_finite() {
                let ids: Vec<&str> = chunk.iter().map(|&i| labeled.docs[i].id.as_str()).collect();
                return Err(Error::NonFinite {
                    value: terms.total(),
                    context: format!("teacher iteration {iteration} epoch {epoch} batch {b}, documents {ids:?}"),
                });
            }
            let w = batch.len() as f64 / train.len() as f64;
            sum.task += terms.task * w;
            sum.rationale += terms.rationale * w;
            adam.step(teacher, &grads);
        }
        let v = if val.is_empty() {
            sum
        } else {
            validation_terms(teacher, &val, opts)?
        };
        epochs.push(EpochLoss {
            train: sum,
            validation: v,
        });
        if best.as_ref().is_none_or(|(b, _, _)| v.total() < *b) {
            best = Some((v.total(), epoch, teacher.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale > config.teacher_patience {
                break;
            }
        }
    }
    let best_epoch = best.map(|(_, e, m)| {
        *teacher = m;
        e
    });
    Ok(TeacherSummary { epochs, best_epoch })
}

/// One pseudo-labeled example per document (in parallel, order kept) plus
/// the histogram of pseudo task labels.
pub fn pseudo_label_corpus<T: Scalar>(
    teacher: &MultiTaskModel<T>,
    unlabeled: &PreparedSet,
) -> Result<(Vec<PseudoLabeledExample>, Vec<usize>)> {
    let pseudo: Vec<PseudoLabeledExample> = unlabeled
        .docs
        .par_iter()
        .zip(&unlabeled.inputs)
        .map(|(d, i)| pseudo_label(teacher, d, i))
        .collect::<Result<_>>()?;
    let mut histogram = vec![0; teacher.num_classes()];
    for p in &pseudo {
        histogram[p.y_pseudo] += 1;
    }
    Ok((pseudo, histogram))
}

/// Like [`pseudo_label_corpus`] but sampling each document's labels with its
/// own generator seeded from `seed` and the document index, so the result
/// does not depend on the worker count.
pub fn pseudo_label_corpus_sampled<T: Scalar>(
    teacher: &MultiTaskModel<T>,
    unlabeled: &PreparedSet,
    seed: u64,
) -> Result<(Vec<PseudoLabeledExample>, Vec<usize>)> {
    let pseudo: Vec<PseudoLabeledExample> = unlabeled
        .docs
        .par_iter()
        .zip(&unlabeled.inputs)
        .enumerate()
        .map(|(k, (d, i))| {
            let mut rng = ChaCha8Rng::seed_from_u64(phase_seed(seed, k, 0));
            pseudo_label_sampled(teacher, d, i, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mut histogram = vec![0; teacher.num_classes()];
    for p in &pseudo {
        histogram[p.y_pseudo] += 1;
    }
    Ok((pseudo, histogram))
}

/// Per-example multipliers `(total / K) / count(class)` that equalize the
/// total task weight of each pseudo class. Absent classes are skipped.
pub fn rebalance_weights(pseudo: &[PseudoLabeledExample], num_classes: usize) -> Result<Vec<f64>> {
    if pseudo.is_empty() {
        return Err(Error::Empty("rebalancing an empty pseudo-labeled set".into()));
    }
    let mut counts = vec![0usize; num_classes];
    for p in pseudo {
        *counts
            .get_mut(p.y_pseudo)
            .ok_or_else(|| Error::Config(format!("pseudo label {} outside 0..{num_classes}", p.y_pseudo)))? += 1;
    }
    for (c, &n) in counts.iter().enumerate() {
        if n == 0 {
            log::warn!("no pseudo-labels for class {c}; it receives no rebalancing multiplier");
        }
    }
    let present = counts.iter().filter(|&&n| n > 0).count() as f64;
    let total = pseudo.len() as f64;
    Ok(pseudo
        .iter()
        .map(|p| (total / present) / counts[p.y_pseudo] as f64)
        .collect())
}

/// Minibatch Adam on the joint student objective over a fixed pseudo set.
pub fn fit_student<T: Scalar>(
    student: &mut MultiTaskModel<T>,
    pseudo: &[PseudoLabeledExample],
    config: &SelfTrainConfig,
    iteration: usize,
) -> Result<StudentSummary> {
    config.validate()?;
    if pseudo.is_empty() {
        return Err(Error::Empty("student fit needs pseudo-labeled documents".into()));
    }
    let multipliers = if config.class_rebalance {
        Some(rebalance_weights(pseudo, student.num_classes())?)
    } else {
        None
    };
    let lw = config.loss_weights;
    let mut adam = Adam::new(config.adam(), student)?;
    let mut steps = 0;
    let mut sum_terms = LossTerms::default();
    let mut sum_total = 0.0;
    for epoch in 0..config.student_epochs {
        let order = shuffled(pseudo.len(), seed_for(config.seed, iteration, Phase::StudentShuffle, epoch));
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<PseudoLabeledExample> = chunk.iter().map(|&i| pseudo[i].clone()).collect();
            let mult: Option<Vec<f64>> = multipliers.as_ref().map(|m| chunk.iter().map(|&i| m[i]).collect());
            let weights = compute_batch_weights_with(&batch, mult.as_deref(), &config.loss_options)?;
            let mode = Mode::train(seed_for(config.seed, iteration, Phase::StudentDropout, epoch * 1_000_003 + b));
            let loss = joint_student_loss(student, &batch, &weights, &lw, &config.loss_options, mode)?;
            let grads = loss.grads.expect("gradients requested");
            if !loss.total.as_f64().is_finite() || !grads.is_finite() {
                return Err(Error::NonFinite {
                    value: loss.total.as_f64(),
                    context: format!(
                        "student iteration {iteration} epoch {epoch} batch {b}, terms {:?}",
                        loss.terms
                    ),
                });
            }
            adam.step(student, &grads);
            steps += 1;
            let t = loss.terms;
            sum_terms.wu += t.wu;
            sum_terms.suff += t.suff;
            sum_terms.comp += t.comp;
            sum_terms.sparsity += t.sparsity;
            sum_terms.continuity += t.continuity;
            sum_total += loss.total.as_f64();
        }
    }
    let n = steps.max(1) as f64;
    Ok(StudentSummary {
        steps,
        coefficients: lw,
        mean_terms: LossTerms {
            wu: sum_terms.wu / n,
            suff: sum_terms.suff / n,
            comp: sum_terms.comp / n,
            sparsity: sum_terms.sparsity / n,
            continuity: sum_terms.continuity / n,
        },
        mean_total: sum_total / n,
    })
}

/// Result of a finished run.
#[derive(Debug, Clone)]
pub struct SelfTrainOutcome<T> {
    pub model: MultiTaskModel<T>,
    pub records: Vec<IterationRecord>,
    /// 1-based iteration of `model`; `None` in degenerate runs that return
    /// the fitted teacher.
    pub best_iteration: Option<usize>,
}

/// Resumable self-training state.
#[derive(Debug, Clone)]
pub struct SelfTrainer<T> {
    config: SelfTrainConfig,
    teacher: MultiTaskModel<T>,
    best: Option<(f64, usize, MultiTaskModel<T>)>,
    records: Vec<IterationRecord>,
    stale: usize,
    stopped: bool,
}

impl<T: Scalar> SelfTrainer<T> {
    /// Starts from `initial` as the first teacher (before any fitting).
    pub fn new(config: SelfTrainConfig, initial: MultiTaskModel<T>) -> Result<Self> {
        config.validate()?;
        Ok(SelfTrainer {
            config,
            teacher: initial,
            best: None,
            records: Vec::new(),
            stale: 0,
            stopped: false,
        })
    }

    /// Rebuilds the state after `records.len()` completed iterations.
    /// `teacher` is the model after the last copy step and `best` the
    /// checkpoint of the best recorded iteration.
    pub fn resume(
        config: SelfTrainConfig,
        teacher: MultiTaskModel<T>,
        best: MultiTaskModel<T>,
        records: Vec<IterationRecord>,
    ) -> Result<Self> {
        let mut trainer = SelfTrainer::new(config, teacher)?;
        if records.is_empty() {
            return Err(Error::RunDir("cannot resume without any completed iteration".into()));
        }
        for (i, r) in records.iter().enumerate() {
            if r.iteration != i + 1 {
                return Err(Error::RunDir(format!("record {i} has iteration {}", r.iteration)));
            }
            trainer.observe_value(r.selection_value, r.iteration);
        }
        let (_, best_iteration) = trainer.best_value().expect("records non-empty");
        trainer.best = Some((records[best_iteration - 1].selection_value, best_iteration, best));
        trainer.records = records;
        Ok(trainer)
    }

    /// Called after the copy step, so the teacher holds the new student.
    fn observe_value(&mut self, value: f64, iteration: usize) -> bool {
        let improved = self.best_value().is_none_or(|(b, _)| value < b);
        if improved {
            self.best = Some((value, iteration, self.teacher.clone()));
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.config.early_stop_patience {
                self.stopped = true;
            }
        }
        if iteration >= self.config.max_iterations {
            self.stopped = true;
        }
        improved
    }

    pub fn config(&self) -> &SelfTrainConfig {
        &self.config
    }

    pub fn teacher(&self) -> &MultiTaskModel<T> {
        &self.teacher
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    /// Selection value and 1-based iteration of the best student so far.
    pub fn best_value(&self) -> Option<(f64, usize)> {
        self.best.as_ref().map(|(v, i, _)| (*v, *i))
    }

    pub fn best_model(&self) -> Option<&MultiTaskModel<T>> {
        self.best.as_ref().map(|(_, _, m)| m)
    }

    pub fn is_finished(&self) -> bool {
        self.stopped
    }

    /// Runs one iteration and returns its record.
    pub fn step<O: Observer<T>>(
        &mut self,
        labeled: &PreparedSet,
        unlabeled: &PreparedSet,
        validation: &PreparedSet,
        observer: &mut O,
    ) -> Result<IterationRecord> {
        if self.stopped {
            return Err(Error::Config("self-training already finished".into()));
        }
        let cfg = self.config.clone();
        let iteration = self.records.len() + 1;
        let val = validation.labeled_examples()?;

        let teacher_fit = if iteration == 1 || cfg.refit_teacher_each_iter {
            let s = fit_teacher(&mut self.teacher, labeled, validation, &cfg, iteration)?;
            observer.teacher_fitted(iteration, &self.teacher)?;
            Some(s)
        } else {
            None
        };
        let teacher_validation = evaluate(&self.teacher, &validation.docs, &validation.inputs, &cfg.eval)?;

        let (pseudo, pseudo_histogram) = if cfg.sample_pseudo_labels {
            let seed = seed_for(cfg.seed, iteration, Phase::PseudoSample, 0);
            pseudo_label_corpus_sampled(&self.teacher, unlabeled, seed)?
        } else {
            pseudo_label_corpus(&self.teacher, unlabeled)?
        };
        let pseudo_masks: Vec<_> = pseudo.iter().map(|p| p.r_pseudo.clone()).collect();

        let mut student = if cfg.warm_start_student {
            self.teacher.clone()
        } else {
            MultiTaskModel::new(
                self.teacher.config().clone(),
                seed_for(cfg.seed, iteration, Phase::StudentInit, 0),
            )?
        };
        let student_fit = fit_student(&mut student, &pseudo, &cfg, iteration)?;

        let validation_report = evaluate(&student, &validation.docs, &validation.inputs, &cfg.eval)?;
        let vt = validation_terms(&student, &val, &cfg.loss_options)?;
        let selection_value = match cfg.selection_metric {
            SelectionMetric::ValidationTotalLoss => vt.total(),
            SelectionMetric::ValidationRationaleLoss => vt.rationale,
        };

        copy_into_teacher(&student, &mut self.teacher)?;
        observer.after_copy(iteration, &student, &self.teacher)?;

        let is_best = self.observe_value(selection_value, iteration);
        let record = IterationRecord {
            iteration,
            teacher_fit,
            teacher_validation,
            student_fit,
            pseudo_histogram,
            pseudo_rationale_pct: rationale_pct(&pseudo_masks),
            rationale_pct: validation_report.rationale_pct,
            validation: validation_report,
            validation_total_loss: vt.total(),
            validation_rationale_loss: vt.rationale,
            selection_value,
            is_best,
        };
        log::info!(
            "iteration {iteration}: task F1 {:.4}, token F1 {:.4}, rationale {:.1}%, selection {:.5}{}",
            record.validation.task_f1,
            record.validation.token_f1,
            record.rationale_pct,
            selection_value,
            if is_best { " (best)" } else { "" }
        );
        self.records.push(record.clone());
        observer.iteration_done(&record, self)?;
        Ok(record)
    }

    pub fn finish(self) -> SelfTrainOutcome<T> {
        match self.best {
            Some((_, i, model)) => SelfTrainOutcome {
                model,
                records: self.records,
                best_iteration: Some(i),
            },
            None => SelfTrainOutcome {
                model: self.teacher,
                records: self.records,
                best_iteration: None,
            },
        }
    }

    /// Steps until finished.
    pub fn run<O: Observer<T>>(
        mut self,
        labeled: &PreparedSet,
        unlabeled: &PreparedSet,
        validation: &PreparedSet,
        observer: &mut O,
    ) -> Result<SelfTrainOutcome<T>> {
        if unlabeled.is_empty() {
            log::warn!("no unlabeled documents; returning the fitted teacher");
            if self.records.is_empty() {
                fit_teacher(&mut self.teacher, labeled, validation, &self.config, 1)?;
            }
            return Ok(self.finish());
        }
        while !self.stopped {
            self.step(labeled, unlabeled, validation, observer)?;
        }
        Ok(self.finish())
    }
}

/// Full self-training from a fresh model initialized with `config.seed`.
pub fn self_train<T: Scalar>(
    model_config: crate::model::ModelConfig,
    config: SelfTrainConfig,
    labeled: &PreparedSet,
    unlabeled: &PreparedSet,
    validation: &PreparedSet,
) -> Result<SelfTrainOutcome<T>> {
    let initial = MultiTaskModel::new(model_config, config.seed)?;
    SelfTrainer::new(config, initial)?.run(labeled, unlabeled, validation, &mut NoObserver)
}

/// Baseline without self-training: the first-iteration teacher alone.
pub fn teacher_only<T: Scalar>(
    model_config: crate::model::ModelConfig,
    config: &SelfTrainConfig,
    labeled: &PreparedSet,
    validation: &PreparedSet,
) -> Result<(MultiTaskModel<T>, TeacherSummary, MetricReport)> {
    let mut teacher = MultiTaskModel::new(model_config, config.seed)?;
    let summary = fit_teacher(&mut teacher, labeled, validation, config, 1)?;
    let report = evaluate(&teacher, &validation.docs, &validation.inputs, &config.eval)?;
    Ok((teacher, summary, report))
}
