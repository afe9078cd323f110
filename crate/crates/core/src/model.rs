//! Shared-encoder multi-task model: a task head over the pooled state and a
//! binary rationale head over every document-token state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{Document, ModelInput, RationaleMask};
use crate::encoder::{Encoder, EncoderCache, EncoderConfig, EncoderOutput};
use crate::error::{Error, Result};
use crate::linalg::{matmul_nt_acc, matmul_tn_acc, softmax};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub num_classes: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let d = self.encoder.hidden_dim;
        self.encoder.param_count() + (d + 1) * self.num_classes + (d + 1) * 2
    }
}

/// Dense layer `y = x·W + b` with `W` stored `[in × out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl<T: Scalar> Linear<T> {
    fn new<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let a = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a).expect("valid range");
        Linear {
            weight: (0..in_dim * out_dim).map(|_| T::of(dist.sample(rng))).collect(),
            bias: vec![T::zero(); out_dim],
            in_dim,
            out_dim,
        }
    }

    fn apply_row(&self, x: &[T]) -> Vec<T> {
        let mut out = self.bias.clone();
        for (p, &xp) in x.iter().enumerate() {
            let row = &self.weight[p * self.out_dim..(p + 1) * self.out_dim];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += xp * w;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDistribution<T> {
    pub probs: Vec<T>,
}

impl<T: Scalar> TaskDistribution<T> {
    /// Most probable class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = k;
            }
        }
        best
    }
}

/// Per document token, `P(r_j = 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RationaleDistribution<T> {
    pub probs: Vec<T>,
}

impl<T: Scalar> RationaleDistribution<T> {
    /// Hard mask with the inclusive 0.5 threshold.
    pub fn to_mask(&self) -> RationaleMask {
        let bits: Vec<bool> = self.probs.iter().map(|&p| p >= T::of(0.5)).collect();
        RationaleMask::hard(&bits)
    }
}

/// Raw head outputs of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput<T> {
    pub task_logits: Vec<T>,
    /// `[doc_len × 2]`; column 1 scores membership in the rationale.
    pub rationale_logits: Vec<T>,
    pub doc_len: usize,
}

impl<T: Scalar> ModelOutput<T> {
    pub fn task(&self) -> TaskDistribution<T> {
        TaskDistribution {
            probs: softmax(&self.task_logits),
        }
    }

    pub fn rationale(&self) -> RationaleDistribution<T> {
        RationaleDistribution {
            probs: self
                .rationale_logits
                .chunks_exact(2)
                .map(|z| softmax(z)[1])
                .collect(),
        }
    }
}

pub struct ForwardCache<T> {
    encoder: EncoderCache<T>,
    states: EncoderOutput<T>,
    doc_start: usize,
}

/// Gradient buffers mirroring [`MultiTaskModel::parts`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads<T> {
    pub parts: [Vec<T>; 5],
}

impl<T: Scalar> ModelGrads<T> {
    pub fn zeros_like(model: &MultiTaskModel<T>) -> Self {
        ModelGrads {
            parts: model.parts().map(|p| vec![T::zero(); p.len()]),
        }
    }

    pub fn add_assign(&mut self, other: &ModelGrads<T>) {
        for (a, b) in self.parts.iter_mut().zip(&other.parts) {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: T) {
        self.parts.iter_mut().flatten().for_each(|x| *x *= s);
    }

    pub fn norm(&self) -> T {
        self.parts.iter().flatten().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.parts.iter().flatten()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskModel<T> {
    config: ModelConfig,
    encoder: Encoder<T>,
    task_head: Linear<T>,
    rationale_head: Linear<T>,
}

impl<T: Scalar> MultiTaskModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::new(config.encoder.clone(), seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
        let d = config.encoder.hidden_dim;
        let task_head = Linear::new(d, config.num_classes, &mut rng);
        let rationale_head = Linear::new(d, 2, &mut rng);
        Ok(MultiTaskModel {
            config,
            encoder,
            task_head,
            rationale_head,
        })
    }

    pub fn from_parts(
        config: ModelConfig,
        encoder: Encoder<T>,
        task_head: Linear<T>,
        rationale_head: Linear<T>,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.encoder.hidden_dim;
        if encoder.config() != &config.encoder
            || (task_head.in_dim, task_head.out_dim) != (d, config.num_classes)
            || (rationale_head.in_dim, rationale_head.out_dim) != (d, 2)
            || task_head.weight.len() != d * config.num_classes
            || task_head.bias.len() != config.num_classes
            || rationale_head.weight.len() != 2 * d
            || rationale_head.bias.len() != 2
        {
            return Err(Error::Checkpoint("head or encoder shape does not match config".into()));
        }
        Ok(MultiTaskModel {
            config,
            encoder,
            task_head,
            rationale_head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder(&self) -> &Encoder<T> {
        &self.encoder
    }

    pub fn task_head(&self) -> &Linear<T> {
        &self.task_head
    }

    pub fn rationale_head(&self) -> &Linear<T> {
        &self.rationale_head
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn mask_token_id(&self) -> usize {
        self.config.encoder.mask_token_id
    }

    /// Parameter tensors in a fixed order: encoder, task weight, task bias,
    /// rationale weight, rationale bias.
    pub fn parts(&self) -> [&[T]; 5] {
        [
            self.encoder.params(),
            &self.task_head.weight,
            &self.task_head.bias,
            &self.rationale_head.weight,
            &self.rationale_head.bias,
        ]
    }

    pub fn parts_mut(&mut self) -> [&mut [T]; 5] {
        [
            self.encoder.params_mut(),
            &mut self.task_head.weight,
            &mut self.task_head.bias,
            &mut self.rationale_head.weight,
            &mut self.rationale_head.bias,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.parts().iter().map(|p| p.len()).sum()
    }

    /// Inference-mode forward pass.
    pub fn forward(&self, input: &ModelInput) -> Result<(TaskDistribution<T>, RationaleDistribution<T>)> {
        let out = self.logits(input)?;
        Ok((out.task(), out.rationale()))
    }

    /// Inference-mode head logits.
    pub fn logits(&self, input: &ModelInput) -> Result<ModelOutput<T>> {
        self.forward_train::<ChaCha8Rng>(input, None).map(|(o, _)| o)
    }

    /// Forward pass retaining activations; dropout only when `dropout` is set.
    pub fn forward_train<R: Rng>(
        &self,
        input: &ModelInput,
        dropout: Option<&mut R>,
    ) -> Result<(ModelOutput<T>, ForwardCache<T>)> {
        if input.doc_len == 0 || input.doc_start + input.doc_len > input.ids.len() {
            return Err(Error::LengthMismatch(format!(
                "document region {:?} for input of {} ids",
                input.doc_range(),
                input.ids.len()
            )));
        }
        let (states, cache) = self.encoder.forward(&input.ids, dropout)?;
        let task_logits = self.task_head.apply_row(&states.pooled);
        let mut rationale_logits = Vec::with_capacity(input.doc_len * 2);
        for j in input.doc_range() {
            rationale_logits.extend(self.rationale_head.apply_row(states.row(j)));
        }
        Ok((
            ModelOutput {
                task_logits,
                rationale_logits,
                doc_len: input.doc_len,
            },
            ForwardCache {
                encoder: cache,
                states,
                doc_start: input.doc_start,
            },
        ))
    }

    /// Backpropagates head-logit gradients into `grads`. `d_rationale` may be
    /// empty when no rationale term depends on this pass.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        d_task: &[T],
        d_rationale: &[T],
        grads: &mut ModelGrads<T>,
    ) {
        let d = self.config.encoder.hidden_dim;
        let states = &cache.states;
        let mut d_states = vec![T::zero(); states.token_states.len()];
        let [g_enc, g_tw, g_tb, g_rw, g_rb] = &mut grads.parts;

        if !d_task.is_empty() {
            debug_assert_eq!(d_task.len(), self.config.num_classes);
            matmul_tn_acc(&states.pooled, d_task, g_tw, 1, d, self.config.num_classes);
            g_tb.iter_mut().zip(d_task).for_each(|(g, &v)| *g += v);
            matmul_nt_acc(d_task, &self.task_head.weight, &mut d_states[..d], 1, self.config.num_classes, d);
        }
        if !d_rationale.is_empty() {
            let doc_len = d_rationale.len() / 2;
            let rows = cache.doc_start * d..(cache.doc_start + doc_len) * d;
            let region = &states.token_states[rows.clone()];
            matmul_tn_acc(region, d_rationale, g_rw, doc_len, d, 2);
            for row in d_rationale.chunks_exact(2) {
                g_rb[0] += row[0];
                g_rb[1] += row[1];
            }
            matmul_nt_acc(d_rationale, &self.rationale_head.weight, &mut d_states[rows], doc_len, 2, d);
        }
        self.encoder.backward(&cache.encoder, &d_states, g_enc);
    }
}

/// Teacher prediction on one unlabeled document, with the confidence of each
/// hard decision. `r_pseudo` spans the model input's document region.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabeledExample {
    pub doc: Document,
    pub input: ModelInput,
    pub y_pseudo: usize,
    pub y_confidence: f64,
    pub r_pseudo: RationaleMask,
    pub r_confidences: Vec<f64>,
}

/// Argmax pseudo-labels from the teacher in inference mode. Rationale tokens
/// with `P(r = 1) >= 0.5` are labeled 1; task ties go to the lowest class.
pub fn pseudo_label<T: Scalar>(
    teacher: &MultiTaskModel<T>,
    doc: &Document,
    input: &ModelInput,
) -> Result<PseudoLabeledExample> {
    let (task, rationale) = teacher.forward(input)?;
    Ok(pseudo_label_from_probs(doc, input, &task, &rationale))
}

pub fn pseudo_label_from_probs<T: Scalar>(
    doc: &Document,
    input: &ModelInput,
    task: &TaskDistribution<T>,
    rationale: &RationaleDistribution<T>,
) -> PseudoLabeledExample {
    let y = task.argmax();
    let r_pseudo = rationale.to_mask();
    let r_confidences = rationale
        .probs
        .iter()
        .map(|&p| {
            let p = p.as_f64();
            if p >= 0.5 {
                p
            } else {
                1.0 - p
            }
        })
        .collect();
    PseudoLabeledExample {
        doc: doc.clone(),
        input: input.clone(),
        y_pseudo: y,
        y_confidence: task.probs[y].as_f64(),
        r_pseudo,
        r_confidences,
    }
}

/// Pseudo-labels drawn from the teacher's distributions instead of their
/// modes; confidences are the probabilities of the drawn values.
pub fn pseudo_label_sampled<T: Scalar, R: Rng>(
    teacher: &MultiTaskModel<T>,
    doc: &Document,
    input: &ModelInput,
    rng: &mut R,
) -> Result<PseudoLabeledExample> {
    let (task, rationale) = teacher.forward(input)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut y = task.probs.len() - 1;
    for (k, p) in task.probs.iter().enumerate() {
        acc += p.as_f64();
        if u < acc {
            y = k;
            break;
        }
    }
    let mut bits = Vec::with_capacity(rationale.probs.len());
    let mut conf = Vec::with_capacity(rationale.probs.len());
    for p in &rationale.probs {
        let p = p.as_f64();
        let on = rng.random::<f64>() < p;
        bits.push(on);
        conf.push(if on { p } else { 1.0 - p });
    }
    Ok(PseudoLabeledExample {
        doc: doc.clone(),
        input: input.clone(),
        y_pseudo: y,
        y_confidence: task.probs[y].as_f64(),
        r_pseudo: RationaleMask::hard(&bits),
        r_confidences: conf,
    })
}

fn check_region(input: &ModelInput, r: &RationaleMask) -> Result<()> {
    if r.len() != input.doc_len || input.doc_start + input.doc_len > input.ids.len() {
        return Err(Error::LengthMismatch(format!(
            "mask of {} tokens for a document region of {}",
            r.len(),
            input.doc_len
        )));
    }
    Ok(())
}

/// Keeps only rationale tokens: document positions outside `r` become the
/// mask token. Separator and query positions are untouched.
pub fn mask_keep_rationale(input: &ModelInput, r: &RationaleMask, mask_id: usize) -> Result<ModelInput> {
    check_region(input, r)?;
    let mut out = input.clone();
    for j in 0..r.len() {
        if !r.bit(j) {
            out.ids[input.doc_start + j] = mask_id;
        }
    }
    Ok(out)
}

/// Removes the rationale: document positions inside `r` become the mask
/// token.
pub fn mask_drop_rationale(input: &ModelInput, r: &RationaleMask, mask_id: usize) -> Result<ModelInput> {
    check_region(input, r)?;
    let mut out = input.clone();
    for j in 0..r.len() {
        if r.bit(j) {
            out.ids[input.doc_start + j] = mask_id;
        }
    }
    Ok(out)
}

/// Overwrites the teacher's parameters with the student's.
pub fn copy_into_teacher<T: Scalar>(student: &MultiTaskModel<T>, teacher: &mut MultiTaskModel<T>) -> Result<()> {
    if student.config != teacher.config {
        return Err(Error::Config("student and teacher configurations differ".into()));
    }
    for (dst, src) in teacher.parts_mut().into_iter().zip(student.parts()) {
        dst.copy_from_slice(src);
    }
    Ok(())
}
