//! Reference text encoder: a small pre-norm transformer trained from scratch.
//!
//! All parameters live in one flat vector addressed through an
//! [`EncoderLayout`], so gradients, optimizer state and checkpoints are plain
//! slices of the same shape.
//!
//! Parameter count for vocabulary `V`, maximum length `M`, hidden size `d`,
//! feed-forward size `f` and `L` layers:
//!
//! ```text
//! V·d + M·d + L·(4·d² + 2·d·f + 9·d + f) + 2·d
//! ```
//!
//! (token and position embeddings; per layer two layer norms, the four
//! attention projections with biases and the two feed-forward projections with
//! biases; a final layer norm).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    acc_col_sums, add_row_bias, matmul, matmul_acc, matmul_nt_acc, matmul_tn_acc,
    softmax_in_place,
};
use crate::scalar::Scalar;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    #[serde(default = "default_ffn_dim")]
    pub ffn_dim: usize,
    pub max_len: usize,
    #[serde(default)]
    pub dropout_rate: f64,
    pub mask_token_id: usize,
    pub sep_token_id: usize,
    pub pad_token_id: usize,
}

fn default_ffn_dim() -> usize {
    128
}

impl EncoderConfig {
    /// Default reference shape (2 layers, width 64, 4 heads) for a vocabulary
    /// laid out like [`crate::data::Vocab`].
    pub fn reference(vocab_size: usize, max_len: usize) -> Self {
        EncoderConfig {
            vocab_size,
            hidden_dim: 64,
            num_layers: 2,
            num_heads: 4,
            ffn_dim: 128,
            max_len,
            dropout_rate: 0.1,
            pad_token_id: 0,
            mask_token_id: 1,
            sep_token_id: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.hidden_dim == 0 || self.num_heads == 0 || self.ffn_dim == 0 || self.max_len == 0 {
            return err("encoder dimensions must be positive".into());
        }
        if self.hidden_dim % self.num_heads != 0 {
            return err(format!(
                "hidden_dim {} not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        let specials = [self.mask_token_id, self.sep_token_id, self.pad_token_id];
        if specials[0] == specials[1] || specials[0] == specials[2] || specials[1] == specials[2] {
            return err("mask, separator and pad ids must be distinct".into());
        }
        if specials.iter().any(|&s| s >= self.vocab_size) {
            return err(format!("special ids must be below vocab_size {}", self.vocab_size));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return err(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    /// Closed-form parameter count (see module docs).
    pub fn param_count(&self) -> usize {
        let (v, m, d, f, l) = (
            self.vocab_size,
            self.max_len,
            self.hidden_dim,
            self.ffn_dim,
            self.num_layers,
        );
        v * d + m * d + l * (4 * d * d + 2 * d * f + 9 * d + f) + 2 * d
    }
}

/// Location of one parameter tensor inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub len: usize,
}

impl Slot {
    pub fn range(self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSlots {
    pub ln1_gain: Slot,
    pub ln1_bias: Slot,
    pub wq: Slot,
    pub bq: Slot,
    pub wk: Slot,
    pub bk: Slot,
    pub wv: Slot,
    pub bv: Slot,
    pub wo: Slot,
    pub bo: Slot,
    pub ln2_gain: Slot,
    pub ln2_bias: Slot,
    pub w1: Slot,
    pub b1: Slot,
    pub w2: Slot,
    pub b2: Slot,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderLayout {
    pub token_emb: Slot,
    pub pos_emb: Slot,
    pub layers: Vec<LayerSlots>,
    pub final_gain: Slot,
    pub final_bias: Slot,
    pub total: usize,
}

impl EncoderLayout {
    pub fn new(config: &EncoderConfig) -> Self {
        let mut next = 0;
        let mut slot = |len: usize| {
            let s = Slot { offset: next, len };
            next += len;
            s
        };
        let (d, f) = (config.hidden_dim, config.ffn_dim);
        let token_emb = slot(config.vocab_size * d);
        let pos_emb = slot(config.max_len * d);
        let layers = (0..config.num_layers)
            .map(|_| LayerSlots {
                ln1_gain: slot(d),
                ln1_bias: slot(d),
                wq: slot(d * d),
                bq: slot(d),
                wk: slot(d * d),
                bk: slot(d),
                wv: slot(d * d),
                bv: slot(d),
                wo: slot(d * d),
                bo: slot(d),
                ln2_gain: slot(d),
                ln2_bias: slot(d),
                w1: slot(d * f),
                b1: slot(f),
                w2: slot(f * d),
                b2: slot(d),
            })
            .collect();
        let final_gain = slot(d);
        let final_bias = slot(d);
        EncoderLayout {
            token_emb,
            pos_emb,
            layers,
            final_gain,
            final_bias,
            total: next,
        }
    }
}

/// Hidden states for every input position plus the pooled (first position)
/// state, row-major `[len × hidden_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput<T> {
    pub token_states: Vec<T>,
    pub pooled: Vec<T>,
    pub len: usize,
    pub hidden_dim: usize,
}

impl<T: Scalar> EncoderOutput<T> {
    pub fn row(&self, i: usize) -> &[T] {
        &self.token_states[i * self.hidden_dim..(i + 1) * self.hidden_dim]
    }
}

struct NormCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

struct LayerCache<T> {
    ln1: NormCache<T>,
    a: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// `[heads × len × len]` attention probabilities.
    probs: Vec<T>,
    ctx: Vec<T>,
    attn_drop: Option<Vec<T>>,
    ln2: NormCache<T>,
    b: Vec<T>,
    hpre: Vec<T>,
    g: Vec<T>,
    ffn_drop: Option<Vec<T>>,
}

/// Activations retained by a training forward pass for [`Encoder::backward`].
pub struct EncoderCache<T> {
    ids: Vec<usize>,
    emb_drop: Option<Vec<T>>,
    layers: Vec<LayerCache<T>>,
    final_norm: NormCache<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    config: EncoderConfig,
    layout: EncoderLayout,
    params: Vec<T>,
}

/// Deterministically initialised encoder parameters.
pub fn new_encoder<T: Scalar>(config: EncoderConfig, seed: u64) -> Result<Encoder<T>> {
    Encoder::new(config, seed)
}

impl<T: Scalar> Encoder<T> {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = EncoderLayout::new(&config);
        let mut params = vec![T::zero(); layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = Normal::new(0.0, 0.1).expect("valid normal");
        for slot in [layout.token_emb, layout.pos_emb] {
            for p in &mut params[slot.range()] {
                *p = T::of(emb.sample(&mut rng));
            }
        }
        let (d, f) = (config.hidden_dim, config.ffn_dim);
        for layer in &layout.layers {
            for (slot, fan_in, fan_out) in [
                (layer.wq, d, d),
                (layer.wk, d, d),
                (layer.wv, d, d),
                (layer.wo, d, d),
                (layer.w1, d, f),
                (layer.w2, f, d),
            ] {
                xavier(&mut params[slot.range()], fan_in, fan_out, &mut rng);
            }
            for gain in [layer.ln1_gain, layer.ln2_gain] {
                params[gain.range()].iter_mut().for_each(|g| *g = T::one());
            }
        }
        params[layout.final_gain.range()]
            .iter_mut()
            .for_each(|g| *g = T::one());
        Ok(Encoder {
            config,
            layout,
            params,
        })
    }

    /// Wraps an existing flat parameter vector (e.g. from a checkpoint).
    pub fn from_params(config: EncoderConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let layout = EncoderLayout::new(&config);
        if params.len() != layout.total {
            return Err(Error::Checkpoint(format!(
                "expected {} encoder parameters, found {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Encoder {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn layout(&self) -> &EncoderLayout {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn p(&self, slot: Slot) -> &[T] {
        &self.params[slot.range()]
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Empty("encoder input".into()));
        }
        if ids.len() > self.config.max_len {
            return Err(Error::InputTooLong {
                len: ids.len(),
                max_len: self.config.max_len,
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Inference-mode encoding (no dropout).
    pub fn encode(&self, ids: &[usize]) -> Result<EncoderOutput<T>> {
        self.forward::<ChaCha8Rng>(ids, None).map(|(out, _)| out)
    }

    /// Forward pass keeping the activations needed for backpropagation.
    /// Dropout is applied only when `dropout` is given and the configured
    /// rate is positive.
    pub fn forward<R: Rng>(
        &self,
        ids: &[usize],
        mut dropout: Option<&mut R>,
    ) -> Result<(EncoderOutput<T>, EncoderCache<T>)> {
        self.check_ids(ids)?;
        let cfg = &self.config;
        let (n, d, f, h, dh) = (
            ids.len(),
            cfg.hidden_dim,
            cfg.ffn_dim,
            cfg.num_heads,
            cfg.head_dim(),
        );
        let rate = if dropout.is_some() { cfg.dropout_rate } else { 0.0 };

        let mut x = vec![T::zero(); n * d];
        let tok = self.p(self.layout.token_emb);
        let pos = self.p(self.layout.pos_emb);
        for (i, &id) in ids.iter().enumerate() {
            let row = &mut x[i * d..(i + 1) * d];
            for c in 0..d {
                row[c] = tok[id * d + c] + pos[i * d + c];
            }
        }
        let emb_drop = apply_dropout(&mut x, rate, dropout.as_deref_mut());

        // keys at pad positions are excluded unless nothing else remains
        let key_live: Vec<bool> = {
            let live: Vec<bool> = ids.iter().map(|&id| id != cfg.pad_token_id).collect();
            if live.iter().any(|&l| l) {
                live
            } else {
                vec![true; n]
            }
        };
        let scale = T::one() / T::of(dh as f64).sqrt();

        let mut layers = Vec::with_capacity(cfg.num_layers);
        for slots in &self.layout.layers {
            let (a, ln1) = layer_norm(&x, self.p(slots.ln1_gain), self.p(slots.ln1_bias), d);
            let mut q = vec![T::zero(); n * d];
            let mut k = vec![T::zero(); n * d];
            let mut v = vec![T::zero(); n * d];
            for (out, w, b) in [
                (&mut q, slots.wq, slots.bq),
                (&mut k, slots.wk, slots.bk),
                (&mut v, slots.wv, slots.bv),
            ] {
                matmul(&a, self.p(w), out, n, d, d);
                add_row_bias(out, self.p(b));
            }

            let mut probs = vec![T::zero(); h * n * n];
            let mut ctx = vec![T::zero(); n * d];
            let mut qh = vec![T::zero(); n * dh];
            let mut kh = vec![T::zero(); n * dh];
            let mut vh = vec![T::zero(); n * dh];
            let mut ch = vec![T::zero(); n * dh];
            for head in 0..h {
                gather_head(&q, &mut qh, head, d, dh);
                gather_head(&k, &mut kh, head, d, dh);
                gather_head(&v, &mut vh, head, d, dh);
                let p = &mut probs[head * n * n..(head + 1) * n * n];
                matmul_nt_acc(&qh, &kh, p, n, dh, n);
                for row in p.chunks_exact_mut(n) {
                    for (s, &live) in row.iter_mut().zip(&key_live) {
                        *s = if live { *s * scale } else { T::neg_infinity() };
                    }
                    softmax_in_place(row);
                }
                matmul(p, &vh, &mut ch, n, n, dh);
                scatter_head(&ch, &mut ctx, head, d, dh);
            }

            let mut o = vec![T::zero(); n * d];
            matmul(&ctx, self.p(slots.wo), &mut o, n, d, d);
            add_row_bias(&mut o, self.p(slots.bo));
            let attn_drop = apply_dropout(&mut o, rate, dropout.as_deref_mut());
            for (xi, oi) in x.iter_mut().zip(&o) {
                *xi += *oi;
            }

            let (b, ln2) = layer_norm(&x, self.p(slots.ln2_gain), self.p(slots.ln2_bias), d);
            let mut hpre = vec![T::zero(); n * f];
            matmul(&b, self.p(slots.w1), &mut hpre, n, d, f);
            add_row_bias(&mut hpre, self.p(slots.b1));
            let g: Vec<T> = hpre.iter().map(|&z| gelu(z)).collect();
            let mut out = vec![T::zero(); n * d];
            matmul(&g, self.p(slots.w2), &mut out, n, f, d);
            add_row_bias(&mut out, self.p(slots.b2));
            let ffn_drop = apply_dropout(&mut out, rate, dropout.as_deref_mut());
            for (xi, oi) in x.iter_mut().zip(&out) {
                *xi += *oi;
            }

            layers.push(LayerCache {
                ln1,
                a,
                q,
                k,
                v,
                probs,
                ctx,
                attn_drop,
                ln2,
                b,
                hpre,
                g,
                ffn_drop,
            });
        }

        let (states, final_norm) = layer_norm(
            &x,
            self.p(self.layout.final_gain),
            self.p(self.layout.final_bias),
            d,
        );
        let pooled = states[..d].to_vec();
        Ok((
            EncoderOutput {
                token_states: states,
                pooled,
                len: n,
                hidden_dim: d,
            },
            EncoderCache {
                ids: ids.to_vec(),
                emb_drop,
                layers,
                final_norm,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads` (same layout as the
    /// parameters) given the gradient of the loss w.r.t. the token states.
    /// The pooled state is row 0, so its gradient belongs in that row.
    pub fn backward(&self, cache: &EncoderCache<T>, d_states: &[T], grads: &mut [T]) {
        let cfg = &self.config;
        let (n, d, f, h, dh) = (
            cache.ids.len(),
            cfg.hidden_dim,
            cfg.ffn_dim,
            cfg.num_heads,
            cfg.head_dim(),
        );
        assert_eq!(d_states.len(), n * d, "state gradient shape");
        assert_eq!(grads.len(), self.layout.total, "gradient buffer shape");
        let scale = T::one() / T::of(dh as f64).sqrt();

        let mut dx = layer_norm_backward(
            d_states,
            &cache.final_norm,
            self.p(self.layout.final_gain),
            grads,
            self.layout.final_gain,
            self.layout.final_bias,
            d,
        );

        for (slots, lc) in self.layout.layers.iter().zip(&cache.layers).rev() {
            // feed-forward block
            let mut dout = dx.clone();
            if let Some(mask) = &lc.ffn_drop {
                dout.iter_mut().zip(mask).for_each(|(g, &m)| *g *= m);
            }
            matmul_tn_acc(&lc.g, &dout, &mut grads[slots.w2.range()], n, f, d);
            acc_col_sums(&dout, &mut grads[slots.b2.range()]);
            let mut dg = vec![T::zero(); n * f];
            matmul_nt_acc(&dout, self.p(slots.w2), &mut dg, n, d, f);
            for (g, &z) in dg.iter_mut().zip(&lc.hpre) {
                *g *= gelu_grad(z);
            }
            matmul_tn_acc(&lc.b, &dg, &mut grads[slots.w1.range()], n, d, f);
            acc_col_sums(&dg, &mut grads[slots.b1.range()]);
            let mut db = vec![T::zero(); n * d];
            matmul_nt_acc(&dg, self.p(slots.w1), &mut db, n, f, d);
            let dmid = layer_norm_backward(
                &db,
                &lc.ln2,
                self.p(slots.ln2_gain),
                grads,
                slots.ln2_gain,
                slots.ln2_bias,
                d,
            );
            dx.iter_mut().zip(&dmid).for_each(|(a, &b)| *a += b);

            // attention block
            let mut dout = dx.clone();
            if let Some(mask) = &lc.attn_drop {
                dout.iter_mut().zip(mask).for_each(|(g, &m)| *g *= m);
            }
            matmul_tn_acc(&lc.ctx, &dout, &mut grads[slots.wo.range()], n, d, d);
            acc_col_sums(&dout, &mut grads[slots.bo.range()]);
            let mut dctx = vec![T::zero(); n * d];
            matmul_nt_acc(&dout, self.p(slots.wo), &mut dctx, n, d, d);

            let mut dq = vec![T::zero(); n * d];
            let mut dk = vec![T::zero(); n * d];
            let mut dv = vec![T::zero(); n * d];
            let mut qh = vec![T::zero(); n * dh];
            let mut kh = vec![T::zero(); n * dh];
            let mut vh = vec![T::zero(); n * dh];
            let mut dch = vec![T::zero(); n * dh];
            let mut dqh = vec![T::zero(); n * dh];
            let mut dkh = vec![T::zero(); n * dh];
            let mut dvh = vec![T::zero(); n * dh];
            let mut dp = vec![T::zero(); n * n];
            for head in 0..h {
                gather_head(&lc.q, &mut qh, head, d, dh);
                gather_head(&lc.k, &mut kh, head, d, dh);
                gather_head(&lc.v, &mut vh, head, d, dh);
                gather_head(&dctx, &mut dch, head, d, dh);
                let p = &lc.probs[head * n * n..(head + 1) * n * n];

                dvh.iter_mut().for_each(|x| *x = T::zero());
                matmul_tn_acc(p, &dch, &mut dvh, n, n, dh);
                dp.iter_mut().for_each(|x| *x = T::zero());
                matmul_nt_acc(&dch, &vh, &mut dp, n, dh, n);
                // softmax backward, then the score scale
                for (prow, dprow) in p.chunks_exact(n).zip(dp.chunks_exact_mut(n)) {
                    let inner: T = prow.iter().zip(dprow.iter()).map(|(&a, &b)| a * b).sum();
                    for (g, &a) in dprow.iter_mut().zip(prow) {
                        *g = a * (*g - inner) * scale;
                    }
                }
                dqh.iter_mut().for_each(|x| *x = T::zero());
                matmul_acc(&dp, &kh, &mut dqh, n, n, dh);
                dkh.iter_mut().for_each(|x| *x = T::zero());
                matmul_tn_acc(&dp, &qh, &mut dkh, n, n, dh);
                scatter_head(&dqh, &mut dq, head, d, dh);
                scatter_head(&dkh, &mut dk, head, d, dh);
                scatter_head(&dvh, &mut dv, head, d, dh);
            }

            let mut da = vec![T::zero(); n * d];
            for (dproj, w, b) in [(&dq, slots.wq, slots.bq), (&dk, slots.wk, slots.bk), (&dv, slots.wv, slots.bv)] {
                matmul_tn_acc(&lc.a, dproj, &mut grads[w.range()], n, d, d);
                acc_col_sums(dproj, &mut grads[b.range()]);
                matmul_nt_acc(dproj, self.p(w), &mut da, n, d, d);
            }
            let din = layer_norm_backward(
                &da,
                &lc.ln1,
                self.p(slots.ln1_gain),
                grads,
                slots.ln1_gain,
                slots.ln1_bias,
                d,
            );
            dx.iter_mut().zip(&din).for_each(|(a, &b)| *a += b);
        }

        if let Some(mask) = &cache.emb_drop {
            dx.iter_mut().zip(mask).for_each(|(g, &m)| *g *= m);
        }
        let tok = self.layout.token_emb.offset;
        let pos = self.layout.pos_emb.offset;
        for (i, &id) in cache.ids.iter().enumerate() {
            for c in 0..d {
                let g = dx[i * d + c];
                grads[tok + id * d + c] += g;
                grads[pos + i * d + c] += g;
            }
        }
    }
}

fn xavier<T: Scalar, R: Rng>(w: &mut [T], fan_in: usize, fan_out: usize, rng: &mut R) {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a).expect("valid range");
    for x in w {
        *x = T::of(dist.sample(rng));
    }
}

fn apply_dropout<T: Scalar, R: Rng>(x: &mut [T], rate: f64, rng: Option<&mut R>) -> Option<Vec<T>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    x.iter_mut().zip(&mask).for_each(|(v, &m)| *v *= m);
    Some(mask)
}

fn gather_head<T: Scalar>(src: &[T], dst: &mut [T], head: usize, d: usize, dh: usize) {
    for (i, row) in dst.chunks_exact_mut(dh).enumerate() {
        row.copy_from_slice(&src[i * d + head * dh..i * d + (head + 1) * dh]);
    }
}

fn scatter_head<T: Scalar>(src: &[T], dst: &mut [T], head: usize, d: usize, dh: usize) {
    for (i, row) in src.chunks_exact(dh).enumerate() {
        dst[i * d + head * dh..i * d + (head + 1) * dh].copy_from_slice(row);
    }
}

fn layer_norm<T: Scalar>(x: &[T], gain: &[T], bias: &[T], d: usize) -> (Vec<T>, NormCache<T>) {
    let n = x.len() / d;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); n];
    let inv_d = T::one() / T::of(d as f64);
    let eps = T::of(LN_EPS);
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let r = T::one() / (var + eps).sqrt();
        rstd[i] = r;
        for c in 0..d {
            let xh = (row[c] - mean) * r;
            xhat[i * d + c] = xh;
            y[i * d + c] = gain[c] * xh + bias[c];
        }
    }
    (y, NormCache { xhat, rstd })
}

fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    cache: &NormCache<T>,
    gain: &[T],
    grads: &mut [T],
    gain_slot: Slot,
    bias_slot: Slot,
    d: usize,
) -> Vec<T> {
    let n = dy.len() / d;
    let inv_d = T::one() / T::of(d as f64);
    let mut dx = vec![T::zero(); dy.len()];
    let mut dxhat = vec![T::zero(); d];
    for i in 0..n {
        let dyr = &dy[i * d..(i + 1) * d];
        let xh = &cache.xhat[i * d..(i + 1) * d];
        for c in 0..d {
            grads[gain_slot.offset + c] += dyr[c] * xh[c];
            grads[bias_slot.offset + c] += dyr[c];
            dxhat[c] = dyr[c] * gain[c];
        }
        let mean_d = dxhat.iter().copied().sum::<T>() * inv_d;
        let mean_dx = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
        let r = cache.rstd[i];
        for c in 0..d {
            dx[i * d + c] = r * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `tanh` through a single `exp`, which is several times cheaper than the
/// library routine. Saturates correctly since `exp` overflows to infinity.
#[inline]
fn fast_tanh<T: Scalar>(x: T) -> T {
    let two = T::of(2.0);
    T::one() - two / ((two * x).exp() + T::one())
}

#[inline]
fn gelu<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let inner = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    half * x * (T::one() + fast_tanh(inner))
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let inner = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    let t = fast_tanh(inner);
    let dinner = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_A) * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}
