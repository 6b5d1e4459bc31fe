//! Integer inference. The same code serves plain decoding and proving; when
//! a tape is attached every component leaves its tensors behind, keyed by
//! component name, together with the weights it read.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{KernelError, ModelError};
use crate::fixed::KernelTables;
use crate::kernels::{self, expert_select, rope_rotate, softmax_row, SortOrder};
use crate::proof::{index_bits, sort_tag, tag_index, Witness};
use crate::kernels::RopeTable;
use crate::tensor::{QInt, QTensor};

use super::config::ModelConfig;
use super::graph::rescale_name;
use super::layout::{expert_prefix, layer_prefix, shared_prefix, Loader};

/// Owned counterpart of [`Witness`].
#[derive(Clone, Debug)]
pub enum Trace {
    Embedding { x: QTensor },
    /// `w` is `n x b`; `committed` when it came from the loader.
    Gemm { x: QTensor, w: QTensor, y: QTensor, committed: bool },
    Rescale { y_raw: QTensor, y: QTensor },
    RmsNorm { x: QTensor, w: QTensor, y: QTensor },
    Rope { x: QTensor, y: QTensor },
    Softmax { x: QTensor, y: QTensor },
    Unary { x: QTensor, y: QTensor },
    Elementwise { x: QTensor, b: QTensor, y: QTensor, committed: bool },
    TopK { x: QTensor, idx: QTensor },
    Experts { sp: QTensor, s: QTensor, outputs: Vec<QTensor> },
}

impl Trace {
    pub fn witness<'a>(&'a self, rope: &'a RopeTable) -> Witness<'a> {
        match self {
            Trace::Embedding { x } => Witness::Embedding { x },
            Trace::Gemm { x, w, y, .. } => Witness::Gemm { x, w, y },
            Trace::Rescale { y_raw, y } => Witness::Rescale { y_raw, y },
            Trace::RmsNorm { x, w, y } => Witness::RmsNorm { x, w: w.row(0), y },
            Trace::Rope { x, y } => Witness::Rope { x, table: rope, y },
            Trace::Softmax { x, y } => Witness::Softmax { x, y },
            Trace::Unary { x, y } => Witness::Unary { x, y },
            Trace::Elementwise { x, b, y, .. } => Witness::Elementwise { x, b, y },
            Trace::TopK { x, idx } => Witness::TopK { x, idx },
            Trace::Experts { sp, s, outputs } => Witness::Experts { sp, s, outputs },
        }
    }

    /// The committed tensor this trace holds, if any.
    pub fn into_weight(self) -> Option<QTensor> {
        match self {
            Trace::Gemm { w, committed: true, .. } | Trace::RmsNorm { w, .. } | Trace::Elementwise { b: w, committed: true, .. } => Some(w),
            _ => None,
        }
    }
}

pub type Tape = Vec<(String, Trace)>;

/// Compressed keys of one layer for every processed position.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerCache {
    /// `c^KV` rows, `kv_lora_rank` wide.
    pub kv: QTensor,
    /// Rotated `k^R` rows, `rope_dim` wide.
    pub pe: QTensor,
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelState {
    pub caches: Vec<LayerCache>,
    /// Tokens processed so far.
    pub pos: usize,
}

impl ModelState {
    pub fn new(cfg: &ModelConfig) -> Self {
        let cache = LayerCache {
            kv: QTensor::zeros(0, cfg.kv_lora_rank),
            pe: QTensor::zeros(0, cfg.rope_dim),
        };
        Self {
            caches: vec![cache; cfg.n_layers],
            pos: 0,
        }
    }
}

/// One forward pass worth of context.
pub struct Fwd<'l, 's> {
    pub cfg: ModelConfig,
    pub tables: &'l KernelTables,
    pub rope: &'l RopeTable,
    pub loader: &'l mut Loader<'s>,
    tape: Option<Tape>,
}

impl<'l, 's> Fwd<'l, 's> {
    pub fn new(cfg: ModelConfig, tables: &'l KernelTables, rope: &'l RopeTable, loader: &'l mut Loader<'s>, taping: bool) -> Self {
        Self {
            cfg,
            tables,
            rope,
            loader,
            tape: taping.then(Vec::new),
        }
    }

    /// Hands over what was recorded since the last call.
    pub fn take_tape(&mut self) -> Tape {
        self.tape.as_mut().map(core::mem::take).unwrap_or_default()
    }

    fn taping(&self) -> bool {
        self.tape.is_some()
    }

    fn record(&mut self, name: &str, tr: impl FnOnce() -> Trace) {
        if let Some(t) = &mut self.tape {
            t.push((name.into(), tr()));
        }
    }

    /// Keeps a loaded weight on the tape or releases it right away.
    fn settle(&mut self, w: QTensor) -> Option<QTensor> {
        if self.taping() {
            Some(w)
        } else {
            self.loader.release(w);
            None
        }
    }

    fn q(&self) -> u32 {
        self.cfg.quant.q
    }

    fn raw_and_rescale(&mut self, name: &str, x: &QTensor, w: QTensor, committed: bool) -> Result<QTensor, ModelError> {
        let raw = kernels::gemm(x, &w)?;
        let (y, _) = kernels::rescale(&raw, self.q());
        let w = if committed { self.settle(w) } else { Some(w) };
        if let Some(w) = w {
            self.record(name, || Trace::Gemm {
                x: x.clone(),
                w,
                y: raw.clone(),
                committed,
            });
        }
        let out = y.clone();
        self.record(&rescale_name(name), || Trace::Rescale { y_raw: raw, y });
        Ok(out)
    }

    /// `x * W_name`, rescaled.
    pub fn gemm_w(&mut self, name: &str, x: &QTensor) -> Result<QTensor, ModelError> {
        let w = self.loader.load(name, name)?;
        self.raw_and_rescale(name, x, w, true)
    }

    /// `x * rhs` for an activation `rhs` already laid out as `n x b`.
    pub fn gemm_a(&mut self, name: &str, x: &QTensor, rhs: QTensor) -> Result<QTensor, ModelError> {
        self.raw_and_rescale(name, x, rhs, false)
    }

    pub fn norm(&mut self, name: &str, x: &QTensor) -> Result<QTensor, ModelError> {
        let w = self.loader.load(name, name)?;
        let mut data = Vec::with_capacity(x.data().len());
        for r in 0..x.rows() {
            data.extend(kernels::rmsnorm(x.row(r), w.row(0), self.q())?.0);
        }
        let y = QTensor::new(x.rows(), x.cols(), data)?;
        if let Some(w) = self.settle(w) {
            self.record(name, || Trace::RmsNorm { x: x.clone(), w, y: y.clone() });
        }
        Ok(y)
    }

    /// Rotates each `rope_dim` head of row `i` at position `pos0 + i`.
    pub fn rope(&mut self, name: &str, x: &QTensor, pos0: usize) -> Result<QTensor, ModelError> {
        let d = self.cfg.rope_dim;
        let mut data = Vec::with_capacity(x.data().len());
        for i in 0..x.rows() {
            let pos = pos0 + i;
            if pos >= self.rope.max_pos() {
                return Err(ModelError::PositionOutOfRange(pos));
            }
            for head in x.row(i).chunks(d) {
                data.extend(rope_rotate(head, self.rope.row(pos), self.rope.scale_bits)?.0);
            }
        }
        let y = QTensor::new(x.rows(), x.cols(), data)?;
        self.record(name, || Trace::Rope { x: x.clone(), y: y.clone() });
        Ok(y)
    }

    /// Causal softmax over `heads` blocks of `width` per row; lanes at or
    /// past `valid[i]` are masked.
    pub fn softmax(&mut self, name: &str, x: &QTensor, width: usize, valid: &[usize]) -> Result<QTensor, ModelError> {
        let neg_inf = self.cfg.quant.neg_inf_q;
        let mut data = Vec::with_capacity(x.data().len());
        for i in 0..x.rows() {
            for head in x.row(i).chunks(width) {
                let masked: Vec<QInt> = head.iter().enumerate().map(|(c, &v)| if c < valid[i] { v } else { neg_inf }).collect();
                data.extend(softmax_row(&masked, self.tables)?.0);
            }
        }
        let y = QTensor::new(x.rows(), x.cols(), data)?;
        self.record(name, || Trace::Softmax { x: x.clone(), y: y.clone() });
        Ok(y)
    }

    pub fn sigmoid(&mut self, name: &str, x: &QTensor) -> Result<QTensor, ModelError> {
        let data = x.data().iter().map(|&v| kernels::sigmoid(v, self.tables).0).collect();
        let y = QTensor::new(x.rows(), x.cols(), data)?;
        self.record(name, || Trace::Unary { x: x.clone(), y: y.clone() });
        Ok(y)
    }

    pub fn silu(&mut self, name: &str, x: &QTensor) -> Result<QTensor, ModelError> {
        let data = x.data().iter().map(|&v| kernels::silu(v, self.tables).0).collect();
        let y = QTensor::new(x.rows(), x.cols(), data)?;
        self.record(name, || Trace::Unary { x: x.clone(), y: y.clone() });
        Ok(y)
    }

    pub fn add(&mut self, name: &str, x: &QTensor, b: &QTensor) -> Result<QTensor, ModelError> {
        let y = kernels::elementwise_add(x, b)?;
        self.record(name, || Trace::Elementwise {
            x: x.clone(),
            b: b.clone(),
            y: y.clone(),
            committed: false,
        });
        Ok(y)
    }

    pub fn mul(&mut self, name: &str, x: &QTensor, b: &QTensor) -> Result<QTensor, ModelError> {
        let y = kernels::elementwise_mul(x, b, self.q())?.0;
        self.record(name, || Trace::Elementwise {
            x: x.clone(),
            b: b.clone(),
            y: y.clone(),
            committed: false,
        });
        Ok(y)
    }

    /// Scales row `i` of `x` by `col[i]`.
    pub fn mul_col(&mut self, name: &str, x: &QTensor, col: &QTensor) -> Result<QTensor, ModelError> {
        let wide: Vec<QInt> = col.data().iter().flat_map(|&v| core::iter::repeat_n(v, x.cols())).collect();
        let y = kernels::elementwise_mul(x, &QTensor::new(x.rows(), x.cols(), wide)?, self.q())?.0;
        self.record(name, || Trace::Elementwise {
            x: x.clone(),
            b: col.clone(),
            y: y.clone(),
            committed: false,
        });
        Ok(y)
    }

    /// Adds the committed row vector `name` to every row.
    pub fn bias(&mut self, name: &str, x: &QTensor) -> Result<QTensor, ModelError> {
        let w = self.loader.load(name, name)?;
        let wide = QTensor::new(x.rows(), x.cols(), w.row(0).repeat(x.rows()))?;
        let y = kernels::elementwise_add(x, &wide)?;
        if let Some(w) = self.settle(w) {
            self.record(name, || Trace::Elementwise {
                x: x.clone(),
                b: w,
                y: y.clone(),
                committed: true,
            });
        }
        Ok(y)
    }

    /// Routes on `sp`, weights by `s`. Returns the union of chosen experts
    /// and each one's `rows x 1` gate column (zero where a row did not
    /// choose it).
    pub fn experts(&mut self, name: &str, sp: &QTensor, s: &QTensor) -> Result<(Vec<usize>, Vec<QTensor>), ModelError> {
        let picks = (0..sp.rows())
            .map(|r| expert_select(sp.row(r), &self.cfg.moe.grouping).map(|sel| sel.experts))
            .collect::<Result<Vec<_>, _>>()?;
        let mut active: Vec<usize> = picks.iter().flatten().copied().collect();
        active.sort_unstable();
        active.dedup();
        let cols = active
            .iter()
            .map(|&e| {
                let data = (0..sp.rows()).map(|r| if picks[r].contains(&e) { s.get(r, e) } else { 0 }).collect();
                QTensor::new(sp.rows(), 1, data)
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.record(name, || Trace::Experts {
            sp: sp.clone(),
            s: s.clone(),
            outputs: cols.clone(),
        });
        Ok((active, cols))
    }

    /// Index of the largest entry per row; ties go to the lower index.
    pub fn argmax(&mut self, name: &str, x: &QTensor) -> Result<QTensor, ModelError> {
        let bits = index_bits(x.cols());
        let mut idx = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let mut best = None;
            for (c, &v) in x.row(r).iter().enumerate() {
                let tag = sort_tag(v, c, bits, SortOrder::Desc).ok_or(KernelError::Overflow(v as i128))?;
                best = best.max(Some(tag));
            }
            idx.push(best.map_or(0, |t| tag_index(t, bits, SortOrder::Desc)) as QInt);
        }
        let idx = QTensor::new(x.rows(), 1, idx)?;
        self.record(name, || Trace::TopK { x: x.clone(), idx: idx.clone() });
        Ok(idx)
    }

    pub fn embed(&mut self, tokens: &[u32]) -> Result<QTensor, ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let vocab = self.loader.load("embed", "embed")?;
        let x = kernels::embed_tokens(tokens, &vocab);
        // the lookup is proved against per-row leaves, so the table can go now
        self.loader.release(vocab);
        let x = x?;
        self.record("embed", || Trace::Embedding { x: x.clone() });
        Ok(x)
    }

    fn expert_mlp(&mut self, ep: &str, x: &QTensor) -> Result<QTensor, ModelError> {
        let a = self.gemm_w(&format!("{ep}w1"), x)?;
        let a = self.silu(&format!("{ep}silu"), &a)?;
        let b = self.gemm_w(&format!("{ep}w3"), x)?;
        let m = self.mul(&format!("{ep}mul2"), &a, &b)?;
        self.gemm_w(&format!("{ep}w2"), &m)
    }

    /// One decoder layer over `h`, whose row `i` sits at position
    /// `cache.kv.rows() + i`. Appends the new keys to the cache. Returns the
    /// layer output and the routed experts.
    pub fn run_layer(&mut self, l: usize, h: &QTensor, cache: &mut LayerCache) -> Result<(QTensor, Vec<usize>), ModelError> {
        let cfg = self.cfg;
        let p = layer_prefix(l);
        let n = |s: &str| format!("{p}{s}");
        let (t, heads) = (h.rows(), cfg.n_heads);
        let pos0 = cache.kv.rows();
        let ctx = pos0 + t;
        if ctx > cfg.max_pos {
            return Err(ModelError::PositionOutOfRange(ctx - 1));
        }

        let xn = self.norm(&n("attn_norm"), h)?;
        let qa = self.gemm_w(&n("wq_a"), &xn)?;
        let qn = self.norm(&n("q_norm"), &qa)?;
        let q_nope = self.gemm_w(&n("wq_b1"), &qn)?;
        let q_pe = self.gemm_w(&n("wq_b2"), &qn)?;
        let q_pe = self.rope(&n("rope1"), &q_pe, pos0)?;
        let kv = self.gemm_w(&n("wkv_a1"), &xn)?;
        let ckv = self.norm(&n("kv_norm"), &kv)?;
        let kpe = self.gemm_w(&n("wkv_a2"), &xn)?;
        let kpe = self.rope(&n("rope2"), &kpe, pos0)?;
        cache.kv = cache.kv.vstack(&ckv)?;
        cache.pe = cache.pe.vstack(&kpe)?;

        let q_abs = self.gemm_w(&n("wkv_b1"), &q_nope)?.reshape(t * heads, cfg.kv_lora_rank)?;
        let s1 = self.gemm_a(&n("mul1"), &q_abs, cache.kv.transpose())?;
        let q_pe = q_pe.reshape(t * heads, cfg.rope_dim)?;
        let s2 = self.gemm_a(&n("mul2"), &q_pe, cache.pe.transpose())?;
        let scores = self.add(&n("add"), &s1, &s2)?.reshape(t, heads * ctx)?;
        let valid: Vec<usize> = (0..t).map(|i| pos0 + i + 1).collect();
        let probs = self.softmax(&n("softmax"), &scores, ctx, &valid)?.reshape(t * heads, ctx)?;
        let o = self.gemm_a(&n("mul3"), &probs, cache.kv.clone())?.reshape(t, heads * cfg.kv_lora_rank)?;
        let o = self.gemm_w(&n("wkv_b2"), &o)?;
        let o = self.gemm_w(&n("wo"), &o)?;
        let h1 = self.add(&n("attn_res"), h, &o)?;

        let xf = self.norm(&n("ffn_norm"), &h1)?;
        let g = self.gemm_w(&n("gate"), &xf)?;
        let s = self.sigmoid(&n("sigmoid"), &g)?;
        let sp = self.bias(&n("bias"), &s)?;
        let (active, cols) = self.experts(&n("experts"), &sp, &s)?;
        let mut acc = h1;
        for i in 0..cfg.moe.n_shared {
            let y = self.expert_mlp(&shared_prefix(l, i), &xf)?;
            acc = self.add(&n(&format!("add.s{i}")), &acc, &y)?;
        }
        for (&e, col) in active.iter().zip(&cols) {
            let ep = expert_prefix(l, e);
            let y = self.expert_mlp(&ep, &xf)?;
            let y = self.mul_col(&format!("{ep}mul1"), &y, col)?;
            acc = self.add(&n(&format!("add.e{e}")), &acc, &y)?;
        }
        Ok((acc, active))
    }

    /// Final norm, logits and argmax.
    pub fn head(&mut self, h: &QTensor) -> Result<(QTensor, QTensor), ModelError> {
        let x = self.norm("final_norm", h)?;
        let logits = self.gemm_w("head", &x)?;
        let idx = self.argmax("argmax", &logits)?;
        Ok((logits, idx))
    }

    /// Embeds `tokens`, runs every layer and the head, updating `state`.
    pub fn run(&mut self, state: &mut ModelState, tokens: &[u32]) -> Result<Output, ModelError> {
        let mut h = self.embed(tokens)?;
        let mut active = Vec::with_capacity(self.cfg.n_layers);
        for (l, cache) in state.caches.iter_mut().enumerate() {
            let (next, a) = self.run_layer(l, &h, cache)?;
            h = next;
            active.push(a);
        }
        state.pos += tokens.len();
        let (logits, argmax) = self.head(&h)?;
        Ok(Output { logits, argmax, active })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Output {
    /// `tokens x vocab`, fixed point.
    pub logits: QTensor,
    /// `tokens x 1`.
    pub argmax: QTensor,
    /// Routed experts per layer.
    pub active: Vec<Vec<usize>>,
}
