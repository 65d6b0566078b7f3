//! Pre-norm transformer encoder over one packed sequence, with a hand-written
//! backward pass.
//!
//! Each block computes
//!
//! ```text
//! x = x + Dropout(Wo · MultiHeadAttention(LN1(x)))
//! x = x + Dropout(W2 · GELU(W1 · LN2(x)))
//! ```
//!
//! and a final layer norm produces the token vectors `T`. The pooled vector
//! `C` is `T[0]`, the `[CLS]` position. Everything is `f64` so that the
//! analytic gradients can be compared against finite differences.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::pack::PackedInput;
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
const MASKED: f64 = -1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hidden_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_size: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl EncoderConfig {
    /// 2 layers, h = 64, 4 heads, feed-forward 256, dropout 0.1.
    pub fn desk_scale(vocab_size: usize) -> Self {
        Self {
            hidden_size: 64,
            layers: 2,
            heads: 4,
            ff_size: 256,
            max_len: 323,
            vocab_size,
            dropout: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.hidden_size == 0 || self.heads == 0 || !self.hidden_size.is_multiple_of(self.heads)
        {
            return fail(format!(
                "hidden size {} must be a positive multiple of heads {}",
                self.hidden_size, self.heads
            ));
        }
        if self.max_len < 20 + 100 + 200 + 3 {
            return fail(format!("max_len {} below 323", self.max_len));
        }
        if self.vocab_size < 5 || self.ff_size == 0 {
            return fail("vocab and feed-forward sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// A flat, ordered view over named parameter tensors.
pub trait TensorSet {
    fn tensors(&self) -> Vec<&Array2<f64>>;
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>>;
    fn names(&self) -> Vec<String>;

    fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    fn add_assign(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            *a += b;
        }
    }

    fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.mapv_inplace(|x| x * k);
        }
    }

    fn sq_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|t| t.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Array2<f64>,
    pub ln1_b: Array2<f64>,
    pub wq: Array2<f64>,
    pub bq: Array2<f64>,
    pub wk: Array2<f64>,
    pub bk: Array2<f64>,
    pub wv: Array2<f64>,
    pub bv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bo: Array2<f64>,
    pub ln2_g: Array2<f64>,
    pub ln2_b: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
}

const LAYER_NAMES: [&str; 16] = [
    "ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln2_g", "ln2_b", "w1", "b1",
    "w2", "b2",
];

impl LayerParams {
    fn tensors(&self) -> [&Array2<f64>; 16] {
        [
            &self.ln1_g,
            &self.ln1_b,
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.ln2_g,
            &self.ln2_b,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Array2<f64>; 16] {
        [
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln2_g,
            &mut self.ln2_b,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }
}

/// Encoder weights. The same type holds gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub seg_emb: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Array2<f64>,
    pub lnf_b: Array2<f64>,
}

impl TensorSet for EncoderParams {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut v = vec![&self.tok_emb, &self.pos_emb, &self.seg_emb];
        for l in &self.layers {
            v.extend(l.tensors());
        }
        v.push(&self.lnf_g);
        v.push(&self.lnf_b);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = vec![&mut self.tok_emb, &mut self.pos_emb, &mut self.seg_emb];
        for l in &mut self.layers {
            v.extend(l.tensors_mut());
        }
        v.push(&mut self.lnf_g);
        v.push(&mut self.lnf_b);
        v
    }

    fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = ["encoder.tok_emb", "encoder.pos_emb", "encoder.seg_emb"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for i in 0..self.layers.len() {
            v.extend(LAYER_NAMES.iter().map(|n| format!("encoder.layer{i}.{n}")));
        }
        v.push("encoder.lnf_g".into());
        v.push("encoder.lnf_b".into());
        v
    }
}

/// Final hidden vectors for one packed input.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// `C`, the vector at the `[CLS]` position.
    pub pooled: Array1<f64>,
    /// `T`, one row per input position.
    pub token_vectors: Array2<f64>,
}

struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

struct LayerCache {
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    drop_attn: Option<Array2<f64>>,
    ln2: LnCache,
    b: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
    drop_ff: Option<Array2<f64>>,
}

/// Activations retained by [`EncoderParams::forward`] for the backward pass.
pub struct ForwardCache {
    ids: Vec<u32>,
    segments: Vec<u8>,
    drop_emb: Option<Array2<f64>>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
}

fn normal_std(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

impl EncoderParams {
    /// Seeded initialization: N(0, 1) embeddings, N(0, 1/fan_in) linear
    /// weights, unit layer-norm gains, zero biases. A shallow encoder trained
    /// from scratch stalls under the small-std init used for pretrained
    /// checkpoints.
    pub fn init(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let h = config.hidden_size;
        let ff = config.ff_size;
        let tok_emb = normal_std(&mut rng, config.vocab_size, h, 1.0);
        let pos_emb = normal_std(&mut rng, config.max_len, h, 1.0);
        let seg_emb = normal_std(&mut rng, 2, h, 1.0);
        let lin = |rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize| {
            normal_std(rng, fan_in, fan_out, 1.0 / (fan_in as f64).sqrt())
        };
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                ln1_g: Array2::ones((1, h)),
                ln1_b: Array2::zeros((1, h)),
                wq: lin(&mut rng, h, h),
                bq: Array2::zeros((1, h)),
                wk: lin(&mut rng, h, h),
                bk: Array2::zeros((1, h)),
                wv: lin(&mut rng, h, h),
                bv: Array2::zeros((1, h)),
                wo: lin(&mut rng, h, h),
                bo: Array2::zeros((1, h)),
                ln2_g: Array2::ones((1, h)),
                ln2_b: Array2::zeros((1, h)),
                w1: lin(&mut rng, h, ff),
                b1: Array2::zeros((1, ff)),
                w2: lin(&mut rng, ff, h),
                b2: Array2::zeros((1, h)),
            })
            .collect();
        Ok(Self {
            tok_emb,
            pos_emb,
            seg_emb,
            layers,
            lnf_g: Array2::ones((1, h)),
            lnf_b: Array2::zeros((1, h)),
            config,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero();
        z
    }

    pub fn hidden_size(&self) -> usize {
        self.config.hidden_size
    }

    /// Eval-mode forward pass.
    pub fn encode(&self, input: &PackedInput) -> Result<EncoderOutput> {
        Ok(self.forward(input, None)?.0)
    }

    /// Forward pass. Dropout is applied only when `dropout_rng` is given.
    pub fn forward(
        &self,
        input: &PackedInput,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(EncoderOutput, ForwardCache)> {
        let len = input.ids.len();
        let cfg = &self.config;
        if len == 0 || len > cfg.max_len {
            return Err(Error::OutOfRange {
                what: "sequence length",
                index: len,
                len: cfg.max_len,
            });
        }
        if let Some(&bad) = input.ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(Error::OutOfRange {
                what: "token id",
                index: bad as usize,
                len: cfg.vocab_size,
            });
        }
        let h = cfg.hidden_size;
        let heads = cfg.heads;
        let dk = h / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let p_drop = if dropout_rng.is_some() {
            cfg.dropout
        } else {
            0.0
        };

        let mut x = Array2::<f64>::zeros((len, h));
        for (i, mut row) in x.rows_mut().into_iter().enumerate() {
            row += &self.tok_emb.row(input.ids[i] as usize);
            row += &self.pos_emb.row(i);
            row += &self.seg_emb.row(input.segment_ids[i].min(1) as usize);
        }
        let drop_emb = dropout(&mut x, p_drop, dropout_rng.as_deref_mut());

        let key_bias: Array1<f64> = input
            .attention_mask
            .iter()
            .map(|&m| if m == 0 { MASKED } else { 0.0 })
            .collect();

        let mut caches = Vec::with_capacity(self.layers.len());
        for lp in &self.layers {
            let (a, ln1) = layer_norm(&x, &lp.ln1_g, &lp.ln1_b);
            let q = a.dot(&lp.wq) + &lp.bq;
            let k = a.dot(&lp.wk) + &lp.bk;
            let v = a.dot(&lp.wv) + &lp.bv;
            let mut ctx = Array2::<f64>::zeros((len, h));
            let mut probs = Vec::with_capacity(heads);
            for hd in 0..heads {
                let r = hd * dk..(hd + 1) * dk;
                let qs = q.slice(s![.., r.clone()]);
                let ks = k.slice(s![.., r.clone()]);
                let vs = v.slice(s![.., r.clone()]);
                let mut sc = qs.dot(&ks.t()) * scale;
                sc += &key_bias;
                softmax_rows(&mut sc);
                ctx.slice_mut(s![.., r]).assign(&sc.dot(&vs));
                probs.push(sc);
            }
            let mut o = ctx.dot(&lp.wo) + &lp.bo;
            let drop_attn = dropout(&mut o, p_drop, dropout_rng.as_deref_mut());
            x += &o;

            let (b, ln2) = layer_norm(&x, &lp.ln2_g, &lp.ln2_b);
            let u = b.dot(&lp.w1) + &lp.b1;
            let g = u.mapv(gelu);
            let mut f = g.dot(&lp.w2) + &lp.b2;
            let drop_ff = dropout(&mut f, p_drop, dropout_rng.as_deref_mut());
            x += &f;

            caches.push(LayerCache {
                ln1,
                a,
                q,
                k,
                v,
                probs,
                ctx,
                drop_attn,
                ln2,
                b,
                u,
                g,
                drop_ff,
            });
        }
        let (t, lnf) = layer_norm(&x, &self.lnf_g, &self.lnf_b);
        let out = EncoderOutput {
            pooled: t.row(0).to_owned(),
            token_vectors: t,
        };
        let cache = ForwardCache {
            ids: input.ids.clone(),
            segments: input.segment_ids.clone(),
            drop_emb,
            layers: caches,
            lnf,
        };
        Ok((out, cache))
    }

    /// Accumulates into `grads` the gradient of a scalar loss given its
    /// gradient with respect to the token vectors.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_tokens: &Array2<f64>,
        grads: &mut EncoderParams,
    ) {
        let h = self.config.hidden_size;
        let heads = self.config.heads;
        let dk = h / heads;
        let scale = 1.0 / (dk as f64).sqrt();

        let mut dx = layer_norm_backward(
            d_tokens,
            &cache.lnf,
            &self.lnf_g,
            &mut grads.lnf_g,
            &mut grads.lnf_b,
        );

        for (li, (lp, lc)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            let gl = &mut grads.layers[li];

            // feed-forward block
            let df = match &lc.drop_ff {
                Some(m) => &dx * m,
                None => dx.clone(),
            };
            gl.w2 += &lc.g.t().dot(&df);
            gl.b2 += &df.sum_axis(Axis(0)).insert_axis(Axis(0));
            let dg = df.dot(&lp.w2.t());
            let mut du = dg;
            du.zip_mut_with(&lc.u, |d, &u| *d *= gelu_grad(u));
            gl.w1 += &lc.b.t().dot(&du);
            gl.b1 += &du.sum_axis(Axis(0)).insert_axis(Axis(0));
            let db = du.dot(&lp.w1.t());
            dx += &layer_norm_backward(&db, &lc.ln2, &lp.ln2_g, &mut gl.ln2_g, &mut gl.ln2_b);

            // attention block
            let d_o = match &lc.drop_attn {
                Some(m) => &dx * m,
                None => dx.clone(),
            };
            gl.wo += &lc.ctx.t().dot(&d_o);
            gl.bo += &d_o.sum_axis(Axis(0)).insert_axis(Axis(0));
            let dctx = d_o.dot(&lp.wo.t());
            let len = dctx.nrows();
            let mut dq = Array2::<f64>::zeros((len, h));
            let mut dkm = Array2::<f64>::zeros((len, h));
            let mut dv = Array2::<f64>::zeros((len, h));
            for hd in 0..heads {
                let r = hd * dk..(hd + 1) * dk;
                let p = &lc.probs[hd];
                let qs = lc.q.slice(s![.., r.clone()]);
                let ks = lc.k.slice(s![.., r.clone()]);
                let vs = lc.v.slice(s![.., r.clone()]);
                let dctx_h = dctx.slice(s![.., r.clone()]);
                let dp = dctx_h.dot(&vs.t());
                dv.slice_mut(s![.., r.clone()]).assign(&p.t().dot(&dctx_h));
                let row_dot = (&dp * p).sum_axis(Axis(1)).insert_axis(Axis(1));
                let ds = p * &(dp - &row_dot) * scale;
                dq.slice_mut(s![.., r.clone()]).assign(&ds.dot(&ks));
                dkm.slice_mut(s![.., r]).assign(&ds.t().dot(&qs));
            }
            gl.wq += &lc.a.t().dot(&dq);
            gl.bq += &dq.sum_axis(Axis(0)).insert_axis(Axis(0));
            gl.wk += &lc.a.t().dot(&dkm);
            gl.bk += &dkm.sum_axis(Axis(0)).insert_axis(Axis(0));
            gl.wv += &lc.a.t().dot(&dv);
            gl.bv += &dv.sum_axis(Axis(0)).insert_axis(Axis(0));
            let da = dq.dot(&lp.wq.t()) + dkm.dot(&lp.wk.t()) + dv.dot(&lp.wv.t());
            dx += &layer_norm_backward(&da, &lc.ln1, &lp.ln1_g, &mut gl.ln1_g, &mut gl.ln1_b);
        }

        if let Some(m) = &cache.drop_emb {
            dx *= m;
        }
        for (i, row) in dx.rows().into_iter().enumerate() {
            let mut t = grads.tok_emb.row_mut(cache.ids[i] as usize);
            t += &row;
            let mut p = grads.pos_emb.row_mut(i);
            p += &row;
            let mut sg = grads.seg_emb.row_mut(cache.segments[i].min(1) as usize);
            sg += &row;
        }
    }
}

fn dropout(x: &mut Array2<f64>, p: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Array2<f64>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    let mask =
        Array2::from_shape_simple_fn(
            x.raw_dim(),
            || {
                if rng.gen::<f64>() < p {
                    0.0
                } else {
                    keep
                }
            },
        );
    *x *= &mask;
    Some(mask)
}

fn layer_norm(x: &Array2<f64>, g: &Array2<f64>, b: &Array2<f64>) -> (Array2<f64>, LnCache) {
    let h = x.ncols() as f64;
    let mean = x.sum_axis(Axis(1)) / h;
    let centered = x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / h;
    let rstd = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = centered * rstd.view().insert_axis(Axis(1));
    let y = &xhat * g + b;
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    g: &Array2<f64>,
    dg: &mut Array2<f64>,
    db: &mut Array2<f64>,
) -> Array2<f64> {
    let h = dy.ncols() as f64;
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * g;
    let sum_d = dxhat.sum_axis(Axis(1)).insert_axis(Axis(1));
    let sum_dx = (&dxhat * &cache.xhat)
        .sum_axis(Axis(1))
        .insert_axis(Axis(1));
    let inner = dxhat * h - sum_d - &cache.xhat * &sum_dx;
    inner * &(cache.rstd.view().insert_axis(Axis(1)).mapv(|r| r / h))
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}
