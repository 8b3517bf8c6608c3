use super::attention::{attention_block, multi_head_attention, window_mask_matrix, AttentionIds, BlockIds};
use super::config::{FusionStrategy, LgfConfig};
use crate::error::{Error, Result};
use crate::numcore::{Graph, ParamId, ParamStore, Real, Tensor, Var};
use rand::Rng;

/// Index of the audio stream in per-modality pairs.
pub const AUDIO: usize = 0;
/// Index of the visual stream in per-modality pairs.
pub const VISUAL: usize = 1;

const MODALITIES: [&str; 2] = ["audio", "visual"];

#[derive(Debug, Clone)]
pub struct GateIds {
    pub ws: ParamId,
    pub bs: ParamId,
    pub wc: ParamId,
    pub bc: ParamId,
}

#[derive(Debug, Clone)]
pub struct PyramidLayerIds {
    /// Self-attention block per modality.
    pub sa: [BlockIds; 2],
    /// One cross-modal block read by both directions.
    pub cma: BlockIds,
    pub gate: [GateIds; 2],
    /// Per modality, one `conv_width x C1` kernel per dilation.
    pub conv: [Vec<ParamId>; 2],
}

#[derive(Debug, Clone)]
pub struct GranularityIds {
    pub wa: ParamId,
    pub ba: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

#[derive(Debug, Clone)]
pub struct GlobalIds {
    pub attn: AttentionIds,
    pub wg: ParamId,
    pub bg: ParamId,
}

#[derive(Debug, Clone)]
pub enum HeadIds {
    Linear {
        w: ParamId,
        b: ParamId,
    },
    Gated {
        wa: ParamId,
        ba: ParamId,
        wv: ParamId,
        bv: ParamId,
        w: ParamId,
        b: ParamId,
    },
    Neural {
        w1: ParamId,
        b1: ParamId,
        w2: ParamId,
        b2: ParamId,
    },
}

#[derive(Debug, Clone)]
pub struct LgfParams {
    pub layers: Vec<PyramidLayerIds>,
    pub granularity: GranularityIds,
    pub global: GlobalIds,
    pub head: HeadIds,
    /// Linear classifier per modality on its pooled embedding.
    pub branch: [(ParamId, ParamId); 2],
}

/// Graph handles for every intermediate of one forward pass.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub sa_weights: [Vec<Var>; 2],
    pub cma_weights: [Vec<Var>; 2],
    pub sa_out: [Var; 2],
    pub cma_out: [Var; 2],
    pub merged: [Var; 2],
    pub out: [Var; 2],
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
    pub granularity: GranularityTrace,
    pub global: GlobalTrace,
    pub logits: Var,
    pub branch_logits: [Var; 2],
}

#[derive(Debug, Clone)]
pub struct GranularityTrace {
    /// `s x L` granularity weights per modality.
    pub e1: [Var; 2],
    /// Per modality, per snippet, the `L x L` attention matrix.
    pub weights: [Vec<Var>; 2],
    /// Per modality, per snippet, the `L x 1` adjusted layer weights.
    pub layer_weights: [Vec<Var>; 2],
    pub e2: [Var; 2],
}

#[derive(Debug, Clone)]
pub struct GlobalTrace {
    pub e3: [Var; 2],
    pub weights: [Vec<Var>; 2],
    pub e4: [Var; 2],
}

/// Values of the fused representations for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedOutputs<T> {
    pub e2: [Tensor<T>; 2],
    pub e3: [Tensor<T>; 2],
    pub e4: [Tensor<T>; 2],
    pub logits: Tensor<T>,
    pub branch_logits: [Tensor<T>; 2],
}

/// `[N, classes]` logits for the fused output and each modality branch.
#[derive(Debug, Clone, Copy)]
pub struct BatchLogits {
    pub overall: Var,
    pub audio: Var,
    pub visual: Var,
}

/// `sigmoid(c(F_s, F_c) W_s + b_s) * F_s + sigmoid(c(F_s, F_c) W_c + b_c) * F_c`.
pub fn gated_merge<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>, ids: &GateIds, fs: Var, fc: Var) -> Result<Var> {
    if g.shape(fs) != g.shape(fc) {
        return Err(Error::shape("gated_merge", g.shape(fs), g.shape(fc)));
    }
    let cat = g.concat(&[fs, fc], 1)?;
    let (ws, bs, wc, bc) = (
        g.param(store, ids.ws),
        g.param(store, ids.bs),
        g.param(store, ids.wc),
        g.param(store, ids.bc),
    );
    let zs = g.matmul(cat, ws)?;
    let zs = g.add(zs, bs)?;
    let gs = g.sigmoid(zs);
    let zc = g.matmul(cat, wc)?;
    let zc = g.add(zc, bc)?;
    let gc = g.sigmoid(zc);
    let a = g.mul(gs, fs)?;
    let b = g.mul(gc, fc)?;
    g.add(a, b)
}

/// `x <- x + conv(x, k_i, dilation_i)` for each residual block in turn.
pub fn dilated_residual<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    kernels: &[ParamId],
    dilations: &[usize],
    x: Var,
) -> Result<Var> {
    if kernels.len() != dilations.len() {
        return Err(Error::invalid("dilated_residual", "one kernel per dilation required"));
    }
    let mut h = x;
    for (&k, &d) in kernels.iter().zip(dilations) {
        let kv = g.param(store, k);
        let c = g.dilated_conv1d(h, kv, d)?;
        h = g.add(h, c)?;
    }
    Ok(h)
}

/// Selectively cross-aggregative integration of the per-layer pyramid features.
///
/// For each snippet the `L` layer rows are weighted by a single-head, width-1
/// cross-modal attention over the sigmoid granularity scores of both modalities.
pub fn integrate_granularities<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    ids: &GranularityIds,
    pyramid: [&[Var]; 2],
) -> Result<GranularityTrace> {
    let layers = pyramid[AUDIO].len();
    if layers == 0 || pyramid[VISUAL].len() != layers {
        return Err(Error::invalid(
            "integrate_granularities",
            format!(
                "pyramid depth differs between modalities ({} vs {})",
                pyramid[AUDIO].len(),
                pyramid[VISUAL].len()
            ),
        ));
    }
    let shape = g.shape(pyramid[AUDIO][0]).to_vec();
    for level in pyramid {
        for &p in level {
            if g.shape(p) != shape.as_slice() {
                return Err(Error::shape("integrate_granularities", &shape, g.shape(p)));
            }
        }
    }
    let s = shape[0];
    let (wa, ba) = (g.param(store, ids.wa), g.param(store, ids.ba));
    let (wq, wk, wv) = (g.param(store, ids.wq), g.param(store, ids.wk), g.param(store, ids.wv));

    let mut e1 = Vec::with_capacity(2);
    for level in pyramid {
        let mut cols = Vec::with_capacity(layers);
        for &p in level {
            let z = g.matmul(p, wa)?;
            let z = g.add(z, ba)?;
            cols.push(g.sigmoid(z));
        }
        e1.push(if layers == 1 { cols[0] } else { g.concat(&cols, 1)? });
    }

    let mut weights: [Vec<Var>; 2] = [Vec::with_capacity(s), Vec::with_capacity(s)];
    let mut layer_weights: [Vec<Var>; 2] = [Vec::with_capacity(s), Vec::with_capacity(s)];
    let mut e2 = Vec::with_capacity(2);
    for m in 0..2 {
        let other = 1 - m;
        let mut rows = Vec::with_capacity(s);
        for t in 0..s {
            let own = g.narrow(e1[m], 0, t, 1)?;
            let own = g.transpose(own)?;
            let cross = g.narrow(e1[other], 0, t, 1)?;
            let cross = g.transpose(cross)?;
            let q = g.matmul(own, wq)?;
            let k = g.matmul(cross, wk)?;
            let v = g.matmul(cross, wv)?;
            let kt = g.transpose(k)?;
            // d_k = 1, so no scaling
            let logits = g.matmul(q, kt)?;
            let p = g.softmax(logits)?;
            let att = g.matmul(p, v)?;

            let mut stack = Vec::with_capacity(layers);
            for &f in pyramid[m] {
                stack.push(g.narrow(f, 0, t, 1)?);
            }
            let stacked = if layers == 1 { stack[0] } else { g.concat(&stack, 0)? };
            let att_t = g.transpose(att)?;
            rows.push(g.matmul(att_t, stacked)?);
            weights[m].push(p);
            layer_weights[m].push(att);
        }
        e2.push(if s == 1 { rows[0] } else { g.concat(&rows, 0)? });
    }
    Ok(GranularityTrace {
        e1: [e1[0], e1[1]],
        weights,
        layer_weights,
        e2: [e2[0], e2[1]],
    })
}

/// Unrestricted multi-head cross-modal attention, projected residual and mean pooling.
pub fn global_fuse<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    ids: &GlobalIds,
    e2: [Var; 2],
) -> Result<GlobalTrace> {
    if g.shape(e2[AUDIO]) != g.shape(e2[VISUAL]) {
        return Err(Error::shape("global_fuse", g.shape(e2[AUDIO]), g.shape(e2[VISUAL])));
    }
    let (wg, bg) = (g.param(store, ids.wg), g.param(store, ids.bg));
    let mut e3 = [e2[0]; 2];
    let mut e4 = [e2[0]; 2];
    let mut weights: [Vec<Var>; 2] = [Vec::new(), Vec::new()];
    for m in 0..2 {
        let att = multi_head_attention(g, store, &ids.attn, e2[m], e2[1 - m], None)?;
        e3[m] = att.out;
        weights[m] = att.weights;
        let proj = g.matmul(att.out, wg)?;
        let proj = g.add(proj, bg)?;
        let res = g.add(proj, e2[m])?;
        e4[m] = g.mean_pool(res, 0)?;
    }
    Ok(GlobalTrace { e3, weights, e4 })
}

fn linear<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
    let (wv, bv) = (g.param(store, w), g.param(store, b));
    let y = g.matmul(x, wv)?;
    g.add(y, bv)
}

/// Combines the pooled `1 x C1` embeddings into `1 x classes` logits.
pub fn fusion_head<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    strategy: FusionStrategy,
    ids: &HeadIds,
    e4a: Var,
    e4v: Var,
) -> Result<Var> {
    match (strategy, ids) {
        (FusionStrategy::MidConcat, HeadIds::Linear { w, b }) => {
            let cat = g.concat(&[e4a, e4v], 1)?;
            linear(g, store, cat, *w, *b)
        }
        (FusionStrategy::Sum, HeadIds::Linear { w, b }) => {
            let x = g.add(e4a, e4v)?;
            linear(g, store, x, *w, *b)
        }
        (FusionStrategy::EwMultiply, HeadIds::Linear { w, b }) => {
            let x = g.mul(e4a, e4v)?;
            linear(g, store, x, *w, *b)
        }
        (FusionStrategy::Gated, HeadIds::Gated { wa, ba, wv, bv, w, b }) => {
            let cat = g.concat(&[e4a, e4v], 1)?;
            let za = linear(g, store, cat, *wa, *ba)?;
            let ga = g.sigmoid(za);
            let zv = linear(g, store, cat, *wv, *bv)?;
            let gv = g.sigmoid(zv);
            let a = g.mul(ga, e4a)?;
            let v = g.mul(gv, e4v)?;
            let x = g.add(a, v)?;
            linear(g, store, x, *w, *b)
        }
        (FusionStrategy::Neural, HeadIds::Neural { w1, b1, w2, b2 }) => {
            let cat = g.concat(&[e4a, e4v], 1)?;
            let h = linear(g, store, cat, *w1, *b1)?;
            let h = g.tanh(h);
            linear(g, store, h, *w2, *b2)
        }
        _ => Err(Error::Config(format!(
            "head parameters do not match strategy {strategy:?}"
        ))),
    }
}

/// The local-global fusion network and its parameters.
#[derive(Debug, Clone)]
pub struct LgfModel<T> {
    cfg: LgfConfig,
    store: ParamStore<T>,
    params: LgfParams,
}

impl<T: Real> LgfModel<T> {
    pub fn new(cfg: LgfConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let c = cfg.channels;
        let ffn = cfg.ffn_mult * c;

        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let p = format!("layer{l}");
            let sa = MODALITIES.map(|m| BlockIds::register(&mut store, &format!("{p}.sa.{m}"), c, cfg.heads, ffn, rng));
            let cma = BlockIds::register(&mut store, &format!("{p}.cma"), c, cfg.heads, ffn, rng);
            let gate = MODALITIES.map(|m| GateIds {
                ws: store.register_glorot(format!("{p}.gate.{m}.ws"), 2 * c, c, rng),
                bs: store.register(format!("{p}.gate.{m}.bs"), Tensor::zeros(&[1, c])),
                wc: store.register_glorot(format!("{p}.gate.{m}.wc"), 2 * c, c, rng),
                bc: store.register(format!("{p}.gate.{m}.bc"), Tensor::zeros(&[1, c])),
            });
            let conv = MODALITIES.map(|m| {
                cfg.dilations
                    .iter()
                    .enumerate()
                    .map(|(i, _)| store.register_uniform(format!("{p}.conv.{m}.k{i}"), &[cfg.conv_width, c], 0.1, rng))
                    .collect()
            });
            layers.push(PyramidLayerIds { sa, cma, gate, conv });
        }

        let granularity = GranularityIds {
            wa: store.register_glorot("granularity.wa", c, 1, rng),
            ba: store.register("granularity.ba", Tensor::zeros(&[1, 1])),
            wq: store.register_glorot("granularity.wq", 1, 1, rng),
            wk: store.register_glorot("granularity.wk", 1, 1, rng),
            wv: store.register_glorot("granularity.wv", 1, 1, rng),
        };
        let global = GlobalIds {
            attn: AttentionIds::register(&mut store, "global.attn", c, cfg.heads, cfg.head_dim(), rng),
            wg: store.register_glorot("global.wg", c, c, rng),
            bg: store.register("global.bg", Tensor::zeros(&[1, c])),
        };
        let k = cfg.classes;
        let head = match cfg.fusion {
            FusionStrategy::MidConcat => HeadIds::Linear {
                w: store.register_glorot("head.w", 2 * c, k, rng),
                b: store.register("head.b", Tensor::zeros(&[1, k])),
            },
            FusionStrategy::Sum | FusionStrategy::EwMultiply => HeadIds::Linear {
                w: store.register_glorot("head.w", c, k, rng),
                b: store.register("head.b", Tensor::zeros(&[1, k])),
            },
            FusionStrategy::Gated => HeadIds::Gated {
                wa: store.register_glorot("head.gate_a.w", 2 * c, c, rng),
                ba: store.register("head.gate_a.b", Tensor::zeros(&[1, c])),
                wv: store.register_glorot("head.gate_v.w", 2 * c, c, rng),
                bv: store.register("head.gate_v.b", Tensor::zeros(&[1, c])),
                w: store.register_glorot("head.w", c, k, rng),
                b: store.register("head.b", Tensor::zeros(&[1, k])),
            },
            FusionStrategy::Neural => HeadIds::Neural {
                w1: store.register_glorot("head.w1", 2 * c, cfg.neural_hidden, rng),
                b1: store.register("head.b1", Tensor::zeros(&[1, cfg.neural_hidden])),
                w2: store.register_glorot("head.w2", cfg.neural_hidden, k, rng),
                b2: store.register("head.b2", Tensor::zeros(&[1, k])),
            },
        };
        let branch = MODALITIES.map(|m| {
            (
                store.register_glorot(format!("branch.{m}.w"), c, k, rng),
                store.register(format!("branch.{m}.b"), Tensor::zeros(&[1, k])),
            )
        });

        Ok(Self {
            cfg,
            store,
            params: LgfParams {
                layers,
                granularity,
                global,
                head,
                branch,
            },
        })
    }

    pub fn config(&self) -> &LgfConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn params(&self) -> &LgfParams {
        &self.params
    }

    /// Same architecture and values at another precision.
    pub fn cast<U: Real>(&self) -> LgfModel<U> {
        LgfModel {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            params: self.params.clone(),
        }
    }

    fn check_input(&self, g: &Graph<T>, v: Var) -> Result<()> {
        let want = [self.cfg.snippets, self.cfg.channels];
        if g.shape(v) != want {
            return Err(Error::shape("lgf forward", &want, g.shape(v)));
        }
        Ok(())
    }

    /// One pyramid layer over `(F_a, F_v)`.
    pub fn pyramid_layer(&self, g: &mut Graph<T>, layer: usize, input: [Var; 2]) -> Result<LayerTrace> {
        self.layer_in(&self.store, g, layer, input)
    }

    /// Full pipeline for one sample, recording every intermediate.
    pub fn forward_graph(&self, g: &mut Graph<T>, fa: Var, fv: Var) -> Result<ForwardTrace> {
        self.graph_in(&self.store, g, fa, fv)
    }

    fn layer_in(&self, store: &ParamStore<T>, g: &mut Graph<T>, layer: usize, input: [Var; 2]) -> Result<LayerTrace> {
        let ids = &self.params.layers[layer];
        let mask = window_mask_matrix(g.shape(input[AUDIO])[0], self.cfg.window(layer));
        let mut sa_w: [Vec<Var>; 2] = [Vec::new(), Vec::new()];
        let mut cma_w: [Vec<Var>; 2] = [Vec::new(), Vec::new()];
        let mut sa_out = input;
        let mut cma_out = input;
        let mut merged = input;
        let mut out = input;
        for m in 0..2 {
            let sa = attention_block(g, store, &ids.sa[m], input[m], input[m], Some(&mask))?;
            let cma = attention_block(g, store, &ids.cma, input[m], input[1 - m], Some(&mask))?;
            sa_out[m] = sa.out;
            cma_out[m] = cma.out;
            sa_w[m] = sa.weights;
            cma_w[m] = cma.weights;
            merged[m] = gated_merge(g, store, &ids.gate[m], sa.out, cma.out)?;
            out[m] = dilated_residual(g, store, &ids.conv[m], &self.cfg.dilations, merged[m])?;
        }
        Ok(LayerTrace {
            sa_weights: sa_w,
            cma_weights: cma_w,
            sa_out,
            cma_out,
            merged,
            out,
        })
    }

    fn graph_in(&self, store: &ParamStore<T>, g: &mut Graph<T>, fa: Var, fv: Var) -> Result<ForwardTrace> {
        self.check_input(g, fa)?;
        self.check_input(g, fv)?;
        let mut x = [fa, fv];
        let mut layers = Vec::with_capacity(self.cfg.layers);
        for l in 0..self.cfg.layers {
            let tr = self.layer_in(store, g, l, x)?;
            x = tr.out;
            layers.push(tr);
        }
        let pyr_a: Vec<Var> = layers.iter().map(|l| l.out[AUDIO]).collect();
        let pyr_v: Vec<Var> = layers.iter().map(|l| l.out[VISUAL]).collect();
        let granularity = integrate_granularities(g, store, &self.params.granularity, [&pyr_a, &pyr_v])?;
        let global = global_fuse(g, store, &self.params.global, granularity.e2)?;
        let logits = fusion_head(
            g,
            store,
            self.cfg.fusion,
            &self.params.head,
            global.e4[AUDIO],
            global.e4[VISUAL],
        )?;
        let mut branch_logits = [logits; 2];
        for (m, &(w, b)) in self.params.branch.iter().enumerate() {
            branch_logits[m] = linear(g, store, global.e4[m], w, b)?;
        }
        Ok(ForwardTrace {
            layers,
            granularity,
            global,
            logits,
            branch_logits,
        })
    }

    /// Evaluates one sample and returns the representation values.
    pub fn forward(&self, fa: &Tensor<T>, fv: &Tensor<T>) -> Result<FusedOutputs<T>> {
        let mut g = Graph::new();
        let a = g.input(fa.clone());
        let v = g.input(fv.clone());
        let tr = self.forward_graph(&mut g, a, v)?;
        let val = |x: Var| g.value(x).clone();
        Ok(FusedOutputs {
            e2: tr.granularity.e2.map(val),
            e3: tr.global.e3.map(val),
            e4: tr.global.e4.map(val),
            logits: val(tr.logits),
            branch_logits: tr.branch_logits.map(val),
        })
    }

    /// Stacks the per-sample logits of a batch into `[N, classes]` matrices.
    pub fn forward_batch(&self, g: &mut Graph<T>, batch: &[(&Tensor<T>, &Tensor<T>)]) -> Result<BatchLogits> {
        self.forward_batch_with(&self.store, g, batch)
    }

    /// Like [`forward_batch`](Self::forward_batch) but reads parameter values from
    /// `store`, which must have this model's layout.
    pub fn forward_batch_with(
        &self,
        store: &ParamStore<T>,
        g: &mut Graph<T>,
        batch: &[(&Tensor<T>, &Tensor<T>)],
    ) -> Result<BatchLogits> {
        if store.len() != self.store.len() {
            return Err(Error::Contract(format!(
                "parameter store holds {} tensors, model expects {}",
                store.len(),
                self.store.len()
            )));
        }
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let mut overall = Vec::with_capacity(batch.len());
        let mut audio = Vec::with_capacity(batch.len());
        let mut visual = Vec::with_capacity(batch.len());
        for (fa, fv) in batch {
            let a = g.input((*fa).clone());
            let v = g.input((*fv).clone());
            let tr = self.graph_in(store, g, a, v)?;
            overall.push(tr.logits);
            audio.push(tr.branch_logits[AUDIO]);
            visual.push(tr.branch_logits[VISUAL]);
        }
        Ok(BatchLogits {
            overall: g.concat(&overall, 0)?,
            audio: g.concat(&audio, 0)?,
            visual: g.concat(&visual, 0)?,
        })
    }

    /// Argmax class of the fused logits (lowest index on ties).
    pub fn predict(&self, fa: &Tensor<T>, fv: &Tensor<T>) -> Result<usize> {
        let out = self.forward(fa, fv)?;
        Ok(crate::objective::argmax(out.logits.data()))
    }
}
