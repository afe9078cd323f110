//! Training objectives.
//!
//! The first half of this module holds pure functions of head logits that
//! return a value and the gradient w.r.t. those logits. The batch-level
//! losses below run the model, apply them, and backpropagate into
//! [`ModelGrads`]. Every batch loss is a mean over examples except the
//! confidence-weighted pseudo loss, whose weights already sum to one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Document, ModelInput, RationaleMask};
use crate::error::{Error, Result};
use crate::linalg::{log_softmax, softmax};
use crate::model::{mask_drop_rationale, mask_keep_rationale, ModelGrads, MultiTaskModel, PseudoLabeledExample};
use crate::scalar::Scalar;

/// Lower clamp for probabilities inside logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub coef_wu: f64,
    pub coef_suff: f64,
    pub coef_comp: f64,
    pub coef_sparsity: f64,
    pub coef_continuity: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            coef_wu: 1.0,
            coef_suff: 1.0,
            coef_comp: 1.0,
            coef_sparsity: 1.0,
            coef_continuity: 1.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights {
            coef_wu: 0.0,
            coef_suff: 0.0,
            coef_comp: 0.0,
            coef_sparsity: 0.0,
            coef_continuity: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.coef_wu,
            self.coef_suff,
            self.coef_comp,
            self.coef_sparsity,
            self.coef_continuity,
        ];
        if all.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Config(format!("loss coefficients must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// How the per-example rationale term of the supervised and unweighted
/// pseudo losses aggregates over tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RationaleReduction {
    #[default]
    Sum,
    Mean,
}

/// Scope over which rationale confidences are normalized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightNormalization {
    /// All (example, token) pairs of the batch share one normalizer.
    #[default]
    Batch,
    /// Each example's tokens sum to `1 / batch_size`.
    PerExample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossOptions {
    pub rationale_reduction: RationaleReduction,
    pub rationale_normalization: WeightNormalization,
    /// Divide coherence terms by document length.
    pub normalize_coherence: bool,
    /// Use teacher confidence for task weights (otherwise uniform).
    pub reweight_task: bool,
    /// Use teacher confidence for rationale weights (otherwise uniform).
    pub reweight_rationale: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            rationale_reduction: RationaleReduction::Sum,
            rationale_normalization: WeightNormalization::Batch,
            normalize_coherence: true,
            reweight_task: true,
            reweight_rationale: true,
        }
    }
}

/// Whether a batch evaluation needs gradients and, if so, whether dropout is
/// active (keyed by a seed so every example draws an independent mask).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Mode {
    pub with_grads: bool,
    pub dropout_seed: Option<u64>,
}

impl Mode {
    pub fn value_only() -> Self {
        Mode::default()
    }

    pub fn grads() -> Self {
        Mode {
            with_grads: true,
            dropout_seed: None,
        }
    }

    pub fn train(seed: u64) -> Self {
        Mode {
            with_grads: true,
            dropout_seed: Some(seed),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossValue<T> {
    pub value: T,
    pub grads: Option<ModelGrads<T>>,
}

// ---------------------------------------------------------------------------
// Pure functions of logits

/// `-ln p(target)` under `softmax(logits)` with the log clamped at
/// [`LOG_FLOOR`], and its gradient w.r.t. the logits.
pub fn nll<T: Scalar>(logits: &[T], target: usize) -> (T, Vec<T>) {
    let logp = log_softmax(logits);
    let floor = T::of(LOG_FLOOR.ln());
    if logp[target] < floor {
        return (-floor, vec![T::zero(); logits.len()]);
    }
    let mut grad: Vec<T> = logp.iter().map(|&l| l.exp()).collect();
    grad[target] -= T::one();
    (-logp[target], grad)
}

/// Negative entropy `Σ p ln p` of `softmax(logits)` (with `0 ln 0 = 0`) and
/// its gradient. Lies in `[-ln K, 0]`.
pub fn neg_entropy<T: Scalar>(logits: &[T]) -> (T, Vec<T>) {
    let p = softmax(logits);
    let plogp: Vec<T> = p
        .iter()
        .map(|&x| if x > T::zero() { x * x.ln() } else { T::zero() })
        .collect();
    let value: T = plogp.iter().copied().sum();
    let grad = p
        .iter()
        .map(|&x| if x > T::zero() { x * (x.ln() - value) } else { T::zero() })
        .collect();
    (value, grad)
}

/// Sparsity `Σ_j p_j` and continuity `Σ_{j≥2} |p_j − p_{j−1}|`, each divided
/// by the token count when `normalize` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceTerms<T> {
    pub sparsity: T,
    pub continuity: T,
    pub d_sparsity: Vec<T>,
    pub d_continuity: Vec<T>,
}

pub fn coherence_terms<T: Scalar>(probs: &[T], normalize: bool) -> Result<CoherenceTerms<T>> {
    let n = probs.len();
    if n == 0 {
        return Err(Error::Empty("coherence loss over an empty sequence".into()));
    }
    let scale = if normalize { T::one() / T::of(n as f64) } else { T::one() };
    let sparsity = probs.iter().copied().sum::<T>() * scale;
    let mut continuity = T::zero();
    let mut d_continuity = vec![T::zero(); n];
    for j in 1..n {
        let diff = probs[j] - probs[j - 1];
        continuity += diff.abs();
        let s = if diff > T::zero() {
            T::one()
        } else if diff < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
        d_continuity[j] += s * scale;
        d_continuity[j - 1] -= s * scale;
    }
    Ok(CoherenceTerms {
        sparsity,
        continuity: continuity * scale,
        d_sparsity: vec![scale; n],
        d_continuity,
    })
}

/// Coefficient-weighted coherence of a rationale distribution. On hard 0/1
/// inputs with `normalize = false` this is exactly
/// `coef_sparsity·|r| + coef_continuity·Σ_j |r_j − r_{j−1}|`.
pub fn coherence_loss<T: Scalar>(
    probs: &[T],
    coef_sparsity: f64,
    coef_continuity: f64,
    normalize: bool,
) -> Result<T> {
    let t = coherence_terms(probs, normalize)?;
    Ok(T::of(coef_sparsity) * t.sparsity + T::of(coef_continuity) * t.continuity)
}

// ---------------------------------------------------------------------------
// Batch machinery

/// A labeled training example with gold annotations over the model input's
/// document region.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub input: ModelInput,
    pub label: usize,
    pub rationale: RationaleMask,
}

impl LabeledExample {
    pub fn from_document(doc: &Document, input: ModelInput) -> Result<Self> {
        let label = doc.gold_label.ok_or_else(|| Error::MissingGold(doc.id.clone()))?;
        let rationale = doc
            .gold_rationale
            .as_ref()
            .ok_or_else(|| Error::MissingGold(doc.id.clone()))?
            .truncated(input.doc_len);
        Ok(LabeledExample {
            input,
            label,
            rationale,
        })
    }
}

fn mix_seed(seed: u64, example: usize, pass: u64) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = seed
        .wrapping_add((example as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(pass.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct PassOutcome<T> {
    task_grad: Vec<T>,
    rationale_grad: Vec<T>,
}

/// Runs one forward pass, lets `head` turn the logits into loss contributions
/// and logit gradients, and backpropagates them when requested.
fn run_pass<T: Scalar, F>(
    model: &MultiTaskModel<T>,
    input: &ModelInput,
    mode: Mode,
    example: usize,
    pass: u64,
    grads: Option<&mut ModelGrads<T>>,
    head: F,
) -> Result<()>
where
    F: FnOnce(&crate::model::ModelOutput<T>) -> PassOutcome<T>,
{
    let mut rng = mode.dropout_seed.map(|s| ChaCha8Rng::seed_from_u64(mix_seed(s, example, pass)));
    let (out, cache) = model.forward_train(input, rng.as_mut())?;
    let outcome = head(&out);
    if let Some(grads) = grads {
        model.backward(&cache, &outcome.task_grad, &outcome.rationale_grad, grads);
    }
    Ok(())
}

/// Evaluates `per_example` over the batch (in parallel), summing values and
/// gradients in example order so the result is independent of scheduling.
fn reduce_batch<T, E, V, F>(
    model: &MultiTaskModel<T>,
    batch: &[E],
    mode: Mode,
    zero: V,
    add: impl Fn(&mut V, &V),
    per_example: F,
) -> Result<(V, Option<ModelGrads<T>>)>
where
    T: Scalar,
    E: Sync,
    V: Send + Clone,
    F: Fn(usize, &E, Option<&mut ModelGrads<T>>) -> Result<V> + Sync,
{
    let parts: Vec<Result<(V, Option<ModelGrads<T>>)>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut g = mode.with_grads.then(|| ModelGrads::zeros_like(model));
            let v = per_example(i, ex, g.as_mut())?;
            Ok((v, g))
        })
        .collect();
    let mut total = zero;
    let mut grads = mode.with_grads.then(|| ModelGrads::zeros_like(model));
    for part in parts {
        let (v, g) = part?;
        add(&mut total, &v);
        if let (Some(acc), Some(g)) = (grads.as_mut(), g) {
            acc.add_assign(&g);
        }
    }
    Ok((total, grads))
}

fn require_batch<E>(batch: &[E]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Empty("loss over an empty batch".into()));
    }
    Ok(())
}

fn check_pseudo(ex: &PseudoLabeledExample) -> Result<()> {
    if ex.r_pseudo.len() != ex.input.doc_len || ex.r_confidences.len() != ex.input.doc_len {
        return Err(Error::LengthMismatch(format!(
            "pseudo rationale of {} tokens for document region {} of {}",
            ex.r_pseudo.len(),
            ex.input.doc_len,
            ex.doc.id
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Supervised loss

/// Value of the supervised loss split into its two terms (batch means).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SupervisedTerms {
    pub task: f64,
    pub rationale: f64,
}

impl SupervisedTerms {
    pub fn total(&self) -> f64 {
        self.task + self.rationale
    }
}

/// Batch mean of `−ln p(y|x) − Σ_j ln p(r_j|x)` over gold annotations.
pub fn supervised_loss<T: Scalar>(
    model: &MultiTaskModel<T>,
    batch: &[LabeledExample],
    options: &LossOptions,
    mode: Mode,
) -> Result<LossValue<T>> {
    let (terms, grads) = supervised_terms(model, batch, options, mode)?;
    Ok(LossValue {
        value: T::of(terms.total()),
        grads,
    })
}

pub fn supervised_terms<T: Scalar>(
    model: &MultiTaskModel<T>,
    batch: &[LabeledExample],
    options: &LossOptions,
    mode: Mode,
) -> Result<(SupervisedTerms, Option<ModelGrads<T>>)> {
    require_batch(batch)?;
    let inv_b = T::one() / T::of(batch.len() as f64);
    reduce_batch(
        model,
        batch,
        mode,
        (T::zero(), T::zero()),
        |acc, v| {
            acc.0 += v.0;
            acc.1 += v.1;
        },
        |i, ex, grads| {
            if ex.rationale.len() != ex.input.doc_len {
                return Err(Error::LengthMismatch(format!(
                    "gold rationale of {} tokens for document region {}",
                    ex.rationale.len(),
                    ex.input.doc_len
                )));
            }
            let mut value = (T::zero(), T::zero());
            run_pass(model, &ex.input, mode, i, 0, grads, |out| {
                let (task, mut task_grad) = nll(&out.task_logits, ex.label);
                task_grad.iter_mut().for_each(|g| *g *= inv_b);
                let tok_scale = match options.rationale_reduction {
                    RationaleReduction::Sum => inv_b,
                    RationaleReduction::Mean => inv_b / T::of(out.doc_len as f64),
                };
                let mut rat = T::zero();
                let mut rationale_grad = Vec::with_capacity(out.doc_len * 2);
                for (j, z) in out.rationale_logits.chunks_exact(2).enumerate() {
                    let (l, g) = nll(z, ex.rationale.bit(j) as usize);
                    rat += l;
                    rationale_grad.extend(g.into_iter().map(|x| x * tok_scale));
                }
                value = (task * inv_b, rat * tok_scale);
                PassOutcome {
                    task_grad,
                    rationale_grad,
                }
            })?;
            Ok(value)
        },
    )
    .map(|((task, rat), g)| {
        (
            SupervisedTerms {
                task: task.as_f64(),
                rationale: rat.as_f64(),
            },
            g,
        )
    })
}

// ---------------------------------------------------------------------------
// Confidence weights

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchWeights {
    pub task_weights: Vec<f64>,
    pub rationale_weights: Vec<Vec<f64>>,
}

/// Batch-normalized confidence weights: task weights proportional to
/// `P_T(y = y_T)`, rationale weights proportional to `P_T(r_j = r_T_j)`.
pub fn compute_batch_weights(batch: &[PseudoLabeledExample], options: &LossOptions) -> Result<BatchWeights> {
    compute_batch_weights_with(batch, None, options)
}

/// As [`compute_batch_weights`], multiplying each task confidence by
/// `task_multipliers[i]` (class rebalancing) before normalizing.
pub fn compute_batch_weights_with(
    batch: &[PseudoLabeledExample],
    task_multipliers: Option<&[f64]>,
    options: &LossOptions,
) -> Result<BatchWeights> {
    require_batch(batch)?;
    if let Some(m) = task_multipliers {
        if m.len() != batch.len() {
            return Err(Error::LengthMismatch(format!(
                "{} multipliers for a batch of {}",
                m.len(),
                batch.len()
            )));
        }
    }
    let raw_task: Vec<f64> = batch
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let c = if options.reweight_task { ex.y_confidence } else { 1.0 };
            c * task_multipliers.map_or(1.0, |m| m[i])
        })
        .collect();
    let task_sum: f64 = raw_task.iter().sum();
    if !(task_sum > 0.0) {
        return Err(Error::Config("task confidences sum to zero".into()));
    }
    let task_weights = raw_task.iter().map(|c| c / task_sum).collect();

    let raw_rat: Vec<Vec<f64>> = batch
        .iter()
        .map(|ex| {
            if options.reweight_rationale {
                ex.r_confidences.clone()
            } else {
                vec![1.0; ex.r_confidences.len()]
            }
        })
        .collect();
    let rationale_weights = match options.rationale_normalization {
        WeightNormalization::Batch => {
            let total: f64 = raw_rat.iter().flatten().sum();
            raw_rat
                .iter()
                .map(|row| row.iter().map(|c| if total > 0.0 { c / total } else { 0.0 }).collect())
                .collect()
        }
        WeightNormalization::PerExample => {
            let b = batch.len() as f64;
            raw_rat
                .iter()
                .map(|row| {
                    let s: f64 = row.iter().sum();
                    row.iter().map(|c| if s > 0.0 { c / s / b } else { 0.0 }).collect()
                })
                .collect()
        }
    };
    Ok(BatchWeights {
        task_weights,
        rationale_weights,
    })
}

fn check_weights(batch: &[PseudoLabeledExample], weights: &BatchWeights) -> Result<()> {
    let misaligned = weights.task_weights.len() != batch.len()
        || weights.rationale_weights.len() != batch.len()
        || batch
            .iter()
            .zip(&weights.rationale_weights)
            .any(|(ex, w)| w.len() != ex.r_pseudo.len());
    if misaligned {
        return Err(Error::LengthMismatch("batch weights do not match the batch".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Student losses

/// `Σ_i w_y,i·(−ln p_S(y_T,i|u_i)) + Σ_{i,j} w_r,ij·(−ln p_S(r_T,ij|u_i))`.
pub fn weighted_pseudo_loss<T: Scalar>(
    student: &MultiTaskModel<T>,
    batch: &[PseudoLabeledExample],
    weights: &BatchWeights,
    mode: Mode,
) -> Result<LossValue<T>> {
    require_batch(batch)?;
    check_weights(batch, weights)?;
    let (value, grads) = reduce_batch(student, batch, mode, T::zero(), |a, b| *a += *b, |i, ex, grads| {
        check_pseudo(ex)?;
        let wy = T::of(weights.task_weights[i]);
        let wr = &weights.rationale_weights[i];
        let mut value = T::zero();
        run_pass(student, &ex.input, mode, i, 0, grads, |out| {
            let (l, mut task_grad) = nll(&out.task_logits, ex.y_pseudo);
            task_grad.iter_mut().for_each(|g| *g *= wy);
            value = wy * l;
            let mut rationale_grad = Vec::with_capacity(out.doc_len * 2);
            for (j, z) in out.rationale_logits.chunks_exact(2).enumerate() {
                let w = T::of(wr[j]);
                let (l, g) = nll(z, ex.r_pseudo.bit(j) as usize);
                value += w * l;
                rationale_grad.extend(g.into_iter().map(|x| x * w));
            }
            PassOutcome {
                task_grad,
                rationale_grad,
            }
        })?;
        Ok(value)
    })?;
    Ok(LossValue { value, grads })
}

/// Unweighted pseudo loss: batch mean of `−ln p_S(y_T|u) − Σ_j ln p_S(r_T,j|u)`.
///
/// With uniform [`BatchWeights`] the weighted loss has the same task term and
/// a rationale term smaller by the factor `N/B` (tokens per example in the
/// batch), i.e. `unweighted = task + (N/B)·rationale_weighted`.
pub fn unweighted_pseudo_loss<T: Scalar>(
    student: &MultiTaskModel<T>,
    batch: &[PseudoLabeledExample],
    options: &LossOptions,
    mode: Mode,
) -> Result<LossValue<T>> {
    let as_labeled: Vec<LabeledExample> = batch
        .iter()
        .map(|ex| {
            check_pseudo(ex)?;
            Ok(LabeledExample {
                input: ex.input.clone(),
                label: ex.y_pseudo,
                rationale: ex.r_pseudo.clone(),
            })
        })
        .collect::<Result<_>>()?;
    supervised_loss(student, &as_labeled, options, mode)
}

/// Batch mean of `−ln p_S(y_T | u ⊙ r_T)`: the student sees only the
/// teacher's rationale tokens.
pub fn sufficiency_loss<T: Scalar>(
    student: &MultiTaskModel<T>,
    batch: &[PseudoLabeledExample],
    mode: Mode,
) -> Result<LossValue<T>> {
    require_batch(batch)?;
    let inv_b = T::one() / T::of(batch.len() as f64);
    let mask_id = student.mask_token_id();
    let (value, grads) = reduce_batch(student, batch, mode, T::zero(), |a, b| *a += *b, |i, ex, grads| {
        check_pseudo(ex)?;
        let kept = mask_keep_rationale(&ex.input, &ex.r_pseudo, mask_id)?;
        let mut value = T::zero();
        run_pass(student, &kept, mode, i, 1, grads, |out| {
            let (l, mut g) = nll(&out.task_logits, ex.y_pseudo);
            g.iter_mut().for_each(|x| *x *= inv_b);
            value = l * inv_b;
            PassOutcome {
                task_grad: g,
                rationale_grad: Vec::new(),
            }
        })?;
        Ok(value)
    })?;
    Ok(LossValue { value, grads })
}

/// Batch mean of the negative entropy of `p_S(y | u ⊙ (1 − r_T))`; minimizing
/// it makes the student uncertain once the rationale is removed.
pub fn completeness_loss<T: Scalar>(
    student: &MultiTaskModel<T>,
    batch: &[PseudoLabeledExample],
    mode: Mode,
) -> Result<LossValue<T>> {
    require_batch(batch)?;
    let inv_b = T::one() / T::of(batch.len() as f64);
    let mask_id = student.mask_token_id();
    let (value, grads) = reduce_batch(student, batch, mode, T::zero(), |a, b| *a += *b, |i, ex, grads| {
        check_pseudo(ex)?;
        let dropped = mask_drop_rationale(&ex.input, &ex.r_pseudo, mask_id)?;
        let mut value = T::zero();
        run_pass(student, &dropped, mode, i, 2, grads, |out| {
            let (l, mut g) = neg_entropy(&out.task_logits);
            g.iter_mut().for_each(|x| *x *= inv_b);
            value = l * inv_b;
            PassOutcome {
                task_grad: g,
                rationale_grad: Vec::new(),
            }
        })?;
        Ok(value)
    })?;
    Ok(LossValue { value, grads })
}

/// Gradient of a function of `P(r_j = 1) = softmax(z_j)[1]` pushed back to
/// the two logits of each token.
fn rationale_prob_grad<T: Scalar>(logits: &[T], d_prob: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for (z, &dp) in logits.chunks_exact(2).zip(d_prob) {
        let p = softmax(z)[1];
        let s = dp * p * (T::one() - p);
        out.push(-s);
        out.push(s);
    }
    out
}

/// Batch mean of the coherence penalty on the student's rationale
/// probabilities over the full input.
pub fn coherence_batch_loss<T: Scalar>(
    student: &MultiTaskModel<T>,
    batch: &[PseudoLabeledExample],
    coef_sparsity: f64,
    coef_continuity: f64,
    normalize: bool,
    mode: Mode,
) -> Result<LossValue<T>> {
    require_batch(batch)?;
    let inv_b = T::one() / T::of(batch.len() as f64);
    let (cs, cc) = (T::of(coef_sparsity), T::of(coef_continuity));
    let (value, grads) = reduce_batch(student, batch, mode, T::zero(), |a, b| *a += *b, |i, ex, grads| {
        let mut result = Ok(T::zero());
        run_pass(student, &ex.input, mode, i, 0, grads, |out| {
            let probs = out.rationale().probs;
            match coherence_terms(&probs, normalize) {
                Ok(t) => {
                    result = Ok((cs * t.sparsity + cc * t.continuity) * inv_b);
                    let d: Vec<T> = t
                        .d_sparsity
                        .iter()
                        .zip(&t.d_continuity)
                        .map(|(&a, &b)| (cs * a + cc * b) * inv_b)
                        .collect();
                    PassOutcome {
                        task_grad: Vec::new(),
                        rationale_grad: rationale_prob_grad(&out.rationale_logits, &d),
                    }
                }
                Err(e) => {
                    result = Err(e);
                    PassOutcome {
                        task_grad: Vec::new(),
                        rationale_grad: Vec::new(),
                    }
                }
            }
        })?;
        result
    })?;
    Ok(LossValue { value, grads })
}

/// Raw (unscaled) value of each student objective term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub wu: f64,
    pub suff: f64,
    pub comp: f64,
    pub sparsity: f64,
    pub continuity: f64,
}

impl LossTerms {
    /// Each term multiplied by its coefficient; these sum to the total.
    pub fn contributions(&self, w: &LossWeights) -> LossTerms {
        LossTerms {
            wu: w.coef_wu * self.wu,
            suff: w.coef_suff * self.suff,
            comp: w.coef_comp * self.comp,
            sparsity: w.coef_sparsity * self.sparsity,
            continuity: w.coef_continuity * self.continuity,
        }
    }

    pub fn sum(&self) -> f64 {
        self.wu + self.suff + self.comp + self.sparsity + self.continuity
    }

    fn add(&mut self, o: &LossTerms) {
        self.wu += o.wu;
        self.suff += o.suff;
        self.comp += o.comp;
        self.sparsity += o.sparsity;
        self.continuity += o.continuity;
    }
}

#[derive(Debug, Clone)]
pub struct JointLoss<T> {
    pub total: T,
    /// Raw term values; terms whose coefficient is zero are not evaluated
    /// and read 0.
    pub terms: LossTerms,
    pub grads: Option<ModelGrads<T>>,
}

/// Coefficient-weighted sum of the confidence-weighted pseudo loss,
/// sufficiency, completeness and coherence (sparsity + continuity).
pub fn joint_student_loss<T: Scalar>(
    student: &MultiTaskModel<T>,
    batch: &[PseudoLabeledExample],
    weights: &BatchWeights,
    loss_weights: &LossWeights,
    options: &LossOptions,
    mode: Mode,
) -> Result<JointLoss<T>> {
    require_batch(batch)?;
    loss_weights.validate()?;
    check_weights(batch, weights)?;
    let lw = *loss_weights;
    let inv_b = 1.0 / batch.len() as f64;
    let mask_id = student.mask_token_id();
    let need_full = lw.coef_wu > 0.0 || lw.coef_sparsity > 0.0 || lw.coef_continuity > 0.0;
    let c = |x: f64| T::of(x);

    let (terms, grads) = reduce_batch(
        student,
        batch,
        mode,
        LossTerms::default(),
        LossTerms::add,
        |i, ex, mut grads| {
            check_pseudo(ex)?;
            let mut t = LossTerms::default();
            if need_full {
                let wy = weights.task_weights[i];
                let wr = &weights.rationale_weights[i];
                let mut err = None;
                run_pass(student, &ex.input, mode, i, 0, grads.as_deref_mut(), |out| {
                    let mut task_grad = vec![T::zero(); out.task_logits.len()];
                    let mut rationale_grad = vec![T::zero(); out.rationale_logits.len()];
                    if lw.coef_wu > 0.0 {
                        let (l, g) = nll(&out.task_logits, ex.y_pseudo);
                        t.wu += wy * l.as_f64();
                        for (a, b) in task_grad.iter_mut().zip(g) {
                            *a += c(lw.coef_wu * wy) * b;
                        }
                        for (j, z) in out.rationale_logits.chunks_exact(2).enumerate() {
                            let (l, g) = nll(z, ex.r_pseudo.bit(j) as usize);
                            t.wu += wr[j] * l.as_f64();
                            rationale_grad[2 * j] += c(lw.coef_wu * wr[j]) * g[0];
                            rationale_grad[2 * j + 1] += c(lw.coef_wu * wr[j]) * g[1];
                        }
                    }
                    if lw.coef_sparsity > 0.0 || lw.coef_continuity > 0.0 {
                        match coherence_terms(&out.rationale().probs, options.normalize_coherence) {
                            Ok(ct) => {
                                t.sparsity += ct.sparsity.as_f64() * inv_b;
                                t.continuity += ct.continuity.as_f64() * inv_b;
                                let d: Vec<T> = ct
                                    .d_sparsity
                                    .iter()
                                    .zip(&ct.d_continuity)
                                    .map(|(&a, &b)| (c(lw.coef_sparsity) * a + c(lw.coef_continuity) * b) * c(inv_b))
                                    .collect();
                                for (a, b) in rationale_grad.iter_mut().zip(rationale_prob_grad(&out.rationale_logits, &d)) {
                                    *a += b;
                                }
                            }
                            Err(e) => err = Some(e),
                        }
                    }
                    PassOutcome {
                        task_grad,
                        rationale_grad,
                    }
                })?;
                if let Some(e) = err {
                    return Err(e);
                }
            }
            if lw.coef_suff > 0.0 {
                let kept = mask_keep_rationale(&ex.input, &ex.r_pseudo, mask_id)?;
                run_pass(student, &kept, mode, i, 1, grads.as_deref_mut(), |out| {
                    let (l, g) = nll(&out.task_logits, ex.y_pseudo);
                    t.suff += l.as_f64() * inv_b;
                    PassOutcome {
                        task_grad: g.into_iter().map(|x| x * c(lw.coef_suff * inv_b)).collect(),
                        rationale_grad: Vec::new(),
                    }
                })?;
            }
            if lw.coef_comp > 0.0 {
                let dropped = mask_drop_rationale(&ex.input, &ex.r_pseudo, mask_id)?;
                run_pass(student, &dropped, mode, i, 2, grads.as_deref_mut(), |out| {
                    let (l, g) = neg_entropy(&out.task_logits);
                    t.comp += l.as_f64() * inv_b;
                    PassOutcome {
                        task_grad: g.into_iter().map(|x| x * c(lw.coef_comp * inv_b)).collect(),
                        rationale_grad: Vec::new(),
                    }
                })?;
            }
            Ok(t)
        },
    )?;
    let total = terms.contributions(&lw).sum();
    Ok(JointLoss {
        total: T::of(total),
        terms,
        grads,
    })
}
