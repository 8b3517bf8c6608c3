//! Windowed multi-head attention and the SA/CMA block built on it.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{Graph, ParamId, ParamStore, Real, Tensor, Var};

/// Snippets visible from snippet `t` (0-based): `max(0, t-d) ..= min(s-1, t+d)`.
pub fn window_mask(s: usize, t: usize, d: usize) -> Result<Vec<bool>> {
    if t >= s {
        return Err(Error::invalid(
            "window_mask",
            format!("snippet {t} out of range for s={s}"),
        ));
    }
    Ok((0..s).map(|u| u.abs_diff(t) <= d).collect())
}

/// Row-major `s x s` mask; row `t` is [`window_mask`]`(s, t, d)`.
pub fn window_mask_matrix(s: usize, d: usize) -> Vec<bool> {
    (0..s).flat_map(|t| (0..s).map(move |u| u.abs_diff(t) <= d)).collect()
}

/// Per-head query/key/value projections plus the output projection over the
/// concatenated heads.
#[derive(Debug, Clone)]
pub struct AttentionIds {
    pub wq: Vec<ParamId>,
    pub wk: Vec<ParamId>,
    pub wv: Vec<ParamId>,
    pub wo: ParamId,
}

impl AttentionIds {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        heads: usize,
        head_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut wq = Vec::with_capacity(heads);
        let mut wk = Vec::with_capacity(heads);
        let mut wv = Vec::with_capacity(heads);
        for h in 0..heads {
            wq.push(store.register_glorot(format!("{prefix}.h{h}.wq"), channels, head_dim, rng));
            wk.push(store.register_glorot(format!("{prefix}.h{h}.wk"), channels, head_dim, rng));
            wv.push(store.register_glorot(format!("{prefix}.h{h}.wv"), channels, head_dim, rng));
        }
        let wo = store.register_glorot(format!("{prefix}.wo"), heads * head_dim, channels, rng);
        Self { wq, wk, wv, wo }
    }

    pub fn heads(&self) -> usize {
        self.wq.len()
    }

    pub fn all(&self) -> Vec<ParamId> {
        let mut v: Vec<ParamId> = self.wq.iter().chain(&self.wk).chain(&self.wv).copied().collect();
        v.push(self.wo);
        v
    }
}

/// Result of one attention call: the projected output and each head's weight matrix.
#[derive(Debug, Clone)]
pub struct AttentionOut {
    pub out: Var,
    pub weights: Vec<Var>,
}

/// `concat_h(softmax(Q_h K_h^T / sqrt(d_k)) V_h) W_o`, queries from `query`,
/// keys and values from `context`. `mask` is `s_q x s_k` row-major or `None` for dense.
pub fn multi_head_attention<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    ids: &AttentionIds,
    query: Var,
    context: Var,
    mask: Option<&[bool]>,
) -> Result<AttentionOut> {
    let (sq, _) = g.value(query).dims2()?;
    let (sk, _) = g.value(context).dims2()?;
    let dense;
    let mask = match mask {
        Some(m) => m,
        None => {
            dense = vec![true; sq * sk];
            &dense
        }
    };
    let mut heads = Vec::with_capacity(ids.heads());
    let mut weights = Vec::with_capacity(ids.heads());
    for h in 0..ids.heads() {
        let (wq, wk, wv) = (
            g.param(store, ids.wq[h]),
            g.param(store, ids.wk[h]),
            g.param(store, ids.wv[h]),
        );
        let q = g.matmul(query, wq)?;
        let k = g.matmul(context, wk)?;
        let v = g.matmul(context, wv)?;
        let dk = g.value(q).shape()[1];
        let kt = g.transpose(k)?;
        let logits = g.matmul(q, kt)?;
        let logits = g.scale(logits, T::one() / T::of(dk as f64).sqrt());
        let p = g.masked_softmax(logits, mask)?;
        heads.push(g.matmul(p, v)?);
        weights.push(p);
    }
    let cat = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat(&heads, 1)?
    };
    let wo = g.param(store, ids.wo);
    let out = g.matmul(cat, wo)?;
    Ok(AttentionOut { out, weights })
}

/// Attention, residual + LayerNorm, tanh feed-forward, residual + LayerNorm.
#[derive(Debug, Clone)]
pub struct BlockIds {
    pub attn: AttentionIds,
    pub ff_w1: ParamId,
    pub ff_b1: ParamId,
    pub ff_w2: ParamId,
    pub ff_b2: ParamId,
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
}

impl BlockIds {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        heads: usize,
        ffn_hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let attn = AttentionIds::register(store, &format!("{prefix}.attn"), channels, heads, channels / heads, rng);
        let ff_w1 = store.register_glorot(format!("{prefix}.ff.w1"), channels, ffn_hidden, rng);
        let ff_b1 = store.register(format!("{prefix}.ff.b1"), Tensor::zeros(&[1, ffn_hidden]));
        let ff_w2 = store.register_glorot(format!("{prefix}.ff.w2"), ffn_hidden, channels, rng);
        let ff_b2 = store.register(format!("{prefix}.ff.b2"), Tensor::zeros(&[1, channels]));
        let ln1_g = store.register(format!("{prefix}.ln1.g"), Tensor::full(&[1, channels], T::one()));
        let ln1_b = store.register(format!("{prefix}.ln1.b"), Tensor::zeros(&[1, channels]));
        let ln2_g = store.register(format!("{prefix}.ln2.g"), Tensor::full(&[1, channels], T::one()));
        let ln2_b = store.register(format!("{prefix}.ln2.b"), Tensor::zeros(&[1, channels]));
        Self {
            attn,
            ff_w1,
            ff_b1,
            ff_w2,
            ff_b2,
            ln1_g,
            ln1_b,
            ln2_g,
            ln2_b,
        }
    }
}

fn affine_norm<T: Real>(g: &mut Graph<T>, x: Var, gain: Var, bias: Var) -> Result<Var> {
    let n = g.layer_norm(x)?;
    let n = g.mul(n, gain)?;
    g.add(n, bias)
}

/// SA block when `context == query`, CMA block when `context` is the other modality.
pub fn attention_block<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    ids: &BlockIds,
    query: Var,
    context: Var,
    mask: Option<&[bool]>,
) -> Result<AttentionOut> {
    let att = multi_head_attention(g, store, &ids.attn, query, context, mask)?;
    let res = g.add(query, att.out)?;
    let (g1, b1) = (g.param(store, ids.ln1_g), g.param(store, ids.ln1_b));
    let h = affine_norm(g, res, g1, b1)?;

    let (w1, c1, w2, c2) = (
        g.param(store, ids.ff_w1),
        g.param(store, ids.ff_b1),
        g.param(store, ids.ff_w2),
        g.param(store, ids.ff_b2),
    );
    let f = g.matmul(h, w1)?;
    let f = g.add(f, c1)?;
    let f = g.tanh(f);
    let f = g.matmul(f, w2)?;
    let f = g.add(f, c2)?;

    let res2 = g.add(h, f)?;
    let (g2, b2) = (g.param(store, ids.ln2_g), g.param(store, ids.ln2_b));
    let out = affine_norm(g, res2, g2, b2)?;
    Ok(AttentionOut {
        out,
        weights: att.weights,
    })
}
