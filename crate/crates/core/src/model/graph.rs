//! Component graphs of one layer and of the model ends. Specs are pure
//! functions of the config, the row count and the routed expert set, so the
//! verifier regenerates exactly what the prover used.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::ModelError;
use crate::kernels::SortOrder;
use crate::proof::{ComponentSpec, ElemOp, GemmRhs, Layout as RhsLayout, Level, Op, Operand};

use super::config::ModelConfig;
use super::layout::{expert_prefix, layer_prefix, shared_prefix, Layout};

/// Output tensor name of the raw product of GeMM `name`.
pub fn raw_name(name: &str) -> String {
    format!("{name}.raw")
}

/// Spec name of the rescale that follows GeMM `name`.
pub fn rescale_name(name: &str) -> String {
    format!("{name}.rescale")
}

pub fn gate_column(l: usize, e: usize) -> String {
    format!("L{l}.gate.e{e}")
}

/// Specs in topological order plus the tensors fed in from outside.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComponentGraph {
    pub specs: Vec<ComponentSpec>,
    pub externals: Vec<String>,
}

/// What [`ComponentGraph::audit`] counted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphAudit {
    /// ZMul link obligations, one per consumed input port.
    pub links: usize,
    /// Distinct committed tensors read, each bound by one spec.
    pub weight_obligations: usize,
    /// Produced tensors nobody consumes.
    pub sinks: Vec<String>,
}

fn weight_offset(op: &Op) -> Option<usize> {
    match op {
        Op::Embedding { leaf_offset, .. }
        | Op::RmsNorm { leaf_offset, .. }
        | Op::Gemm {
            rhs: GemmRhs::Weight { leaf_offset },
            ..
        }
        | Op::Elementwise {
            operand: Operand::WeightRow { leaf_offset },
            ..
        } => Some(*leaf_offset),
        _ => None,
    }
}

impl ComponentGraph {
    /// Checks that every input is produced before use (so the graph is a
    /// DAG in spec order), that each tensor has one producer, that port
    /// counts match the ops, and that no committed tensor other than the
    /// shared rope table is bound twice.
    pub fn audit(&self) -> Result<GraphAudit, ModelError> {
        let bad = |m: String| Err(ModelError::BadConfig(m));
        let mut produced: BTreeSet<&str> = self.externals.iter().map(String::as_str).collect();
        let mut consumed: BTreeSet<&str> = BTreeSet::new();
        let mut order: Vec<&str> = Vec::new();
        let mut names = BTreeSet::new();
        let mut weights = BTreeSet::new();
        let mut links = 0;
        for s in &self.specs {
            if !names.insert(s.name.as_str()) {
                return bad(format!("duplicate component {}", s.name));
            }
            if s.inputs.len() != s.op.input_ports() || s.outputs.len() != s.op.output_ports() {
                return bad(format!("{}: port count", s.name));
            }
            for i in &s.inputs {
                if !produced.contains(i.as_str()) {
                    return bad(format!("{}: input {i} is not produced earlier", s.name));
                }
                consumed.insert(i);
                links += 1;
            }
            for o in &s.outputs {
                if !produced.insert(o) {
                    return bad(format!("{}: tensor {o} has two producers", s.name));
                }
                order.push(o);
            }
            if let Some(off) = weight_offset(&s.op) {
                if !weights.insert(off) {
                    return bad(format!("{}: committed tensor at leaf {off} bound twice", s.name));
                }
            }
        }
        let sinks = order.into_iter().filter(|o| !consumed.contains(o)).map(ToString::to_string).collect();
        Ok(GraphAudit {
            links,
            weight_obligations: weights.len(),
            sinks,
        })
    }

    pub fn get(&self, name: &str) -> Option<&ComponentSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    /// Kind of every component, by name.
    pub fn kinds(&self) -> BTreeMap<&str, crate::proof::Kind> {
        self.specs.iter().map(|s| (s.name.as_str(), s.op.kind())).collect()
    }
}

struct Builder<'a> {
    cfg: &'a ModelConfig,
    layout: &'a Layout,
    rows: usize,
    specs: Vec<ComponentSpec>,
}

impl<'a> Builder<'a> {
    fn new(cfg: &'a ModelConfig, layout: &'a Layout, rows: usize) -> Self {
        Self {
            cfg,
            layout,
            rows,
            specs: Vec::new(),
        }
    }

    fn push(&mut self, name: &str, op: Op, inputs: &[&str], outputs: &[&str]) {
        self.specs.push(ComponentSpec::new(name, op, inputs, outputs));
    }

    fn rescale(&mut self, name: &str, rows: usize, cols: usize) {
        let op = Op::Rescale {
            rows,
            cols,
            seg: self.cfg.segments.elem,
            shift: self.cfg.quant.q,
        };
        self.push(&rescale_name(name), op, &[&raw_name(name)], &[name]);
    }

    /// GeMM against committed weight `name` followed by its rescale.
    fn gemm_w(&mut self, name: &str, input: &str) -> Result<(), ModelError> {
        let e = self.layout.get(name)?;
        let (n, b) = (e.rows, e.cols);
        let op = Op::Gemm {
            a: self.rows,
            n,
            b,
            seg: self.cfg.segments.gemm,
            rhs: GemmRhs::Weight { leaf_offset: e.leaf_offset },
        };
        self.push(name, op, &[input], &[&raw_name(name)]);
        self.rescale(name, self.rows, b);
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn gemm_a(&mut self, name: &str, x: &str, rhs: &str, a: usize, n: usize, b: usize, layout: RhsLayout) {
        let op = Op::Gemm {
            a,
            n,
            b,
            seg: self.cfg.segments.gemm,
            rhs: GemmRhs::Activation { layout },
        };
        self.push(name, op, &[x, rhs], &[&raw_name(name)]);
        self.rescale(name, a, b);
    }

    fn norm(&mut self, name: &str, input: &str) -> Result<(), ModelError> {
        let e = self.layout.get(name)?;
        let op = Op::RmsNorm {
            rows: self.rows,
            dim: e.cols,
            seg: self.cfg.segments.norm,
            leaf_offset: e.leaf_offset,
        };
        self.push(name, op, &[input], &[name]);
        Ok(())
    }

    fn rope(&mut self, name: &str, input: &str, heads: usize) -> Result<(), ModelError> {
        let op = Op::Rope {
            rows: self.rows,
            heads,
            head_dim: self.cfg.rope_dim,
            positions: (0..self.rows).collect(),
            leaf_offset: self.layout.get("rope")?.leaf_offset,
            scale_bits: self.cfg.rope_scale_bits,
        };
        self.push(name, op, &[input], &[name]);
        Ok(())
    }

    fn elem(&mut self, name: &str, op: ElemOp, operand: Operand, inputs: &[&str], rows: usize, cols: usize) {
        let spec = Op::Elementwise {
            rows,
            cols,
            seg: self.cfg.segments.elem,
            op,
            operand,
        };
        self.push(name, spec, inputs, &[name]);
    }

    /// One expert MLP reading `input`; its output tensor is `{ep}w2`.
    fn expert(&mut self, ep: &str, input: &str) -> Result<(), ModelError> {
        let (w1, w3, w2) = (format!("{ep}w1"), format!("{ep}w3"), format!("{ep}w2"));
        let (silu, mul2) = (format!("{ep}silu"), format!("{ep}mul2"));
        let inter = self.cfg.moe.inter_dim;
        self.gemm_w(&w1, input)?;
        let op = Op::Silu {
            rows: self.rows,
            cols: inter,
            seg: self.cfg.segments.act,
        };
        self.push(&silu, op, &[&w1], &[&silu]);
        self.gemm_w(&w3, input)?;
        self.elem(&mul2, ElemOp::Mul, Operand::Activation, &[&silu, &w3], self.rows, inter);
        self.gemm_w(&w2, &mul2)
    }

    fn finish(self, externals: &[&str]) -> ComponentGraph {
        ComponentGraph {
            specs: self.specs,
            externals: externals.iter().map(|s| (*s).into()).collect(),
        }
    }
}

fn check_rows(cfg: &ModelConfig, rows: usize) -> Result<(), ModelError> {
    if rows == 0 {
        return Err(ModelError::EmptyInput);
    }
    if rows > cfg.max_pos {
        return Err(ModelError::PositionOutOfRange(rows - 1));
    }
    Ok(())
}

fn mla(b: &mut Builder, l: usize, input: &str) -> Result<(), ModelError> {
    let cfg = b.cfg;
    let (t, h) = (b.rows, cfg.n_heads);
    let p = layer_prefix(l);
    let n = |s: &str| format!("{p}{s}");
    b.norm(&n("attn_norm"), input)?;
    b.gemm_w(&n("wq_a"), &n("attn_norm"))?;
    b.norm(&n("q_norm"), &n("wq_a"))?;
    b.gemm_w(&n("wq_b1"), &n("q_norm"))?;
    b.gemm_w(&n("wq_b2"), &n("q_norm"))?;
    b.rope(&n("rope1"), &n("wq_b2"), h)?;
    b.gemm_w(&n("wkv_a1"), &n("attn_norm"))?;
    b.norm(&n("kv_norm"), &n("wkv_a1"))?;
    b.gemm_w(&n("wkv_a2"), &n("attn_norm"))?;
    b.rope(&n("rope2"), &n("wkv_a2"), 1)?;
    // queries absorb W^UK so scores are taken against the latent cache
    b.gemm_w(&n("wkv_b1"), &n("wq_b1"))?;
    b.gemm_a(&n("mul1"), &n("wkv_b1"), &n("kv_norm"), t * h, cfg.kv_lora_rank, t, RhsLayout::Transposed);
    b.gemm_a(&n("mul2"), &n("rope1"), &n("rope2"), t * h, cfg.rope_dim, t, RhsLayout::Transposed);
    b.elem(&n("add"), ElemOp::Add, Operand::Activation, &[&n("mul1"), &n("mul2")], t * h, t);
    let op = Op::Softmax {
        rows: t,
        heads: h,
        width: t,
        seg: cfg.segments.softmax,
        valid: (1..=t).collect(),
    };
    b.push(&n("softmax"), op, &[&n("add")], &[&n("softmax")]);
    b.gemm_a(&n("mul3"), &n("softmax"), &n("kv_norm"), t * h, t, cfg.kv_lora_rank, RhsLayout::RowMajor);
    b.gemm_w(&n("wkv_b2"), &n("mul3"))?;
    b.gemm_w(&n("wo"), &n("wkv_b2"))
}

/// Everything after the attention residual. Returns the output tensor.
fn moe(b: &mut Builder, l: usize, input: &str, active: &[usize]) -> Result<String, ModelError> {
    let cfg = b.cfg;
    let (t, ne) = (b.rows, cfg.moe.n_experts);
    let p = layer_prefix(l);
    let n = |s: &str| format!("{p}{s}");
    b.norm(&n("ffn_norm"), input)?;
    b.gemm_w(&n("gate"), &n("ffn_norm"))?;
    let op = Op::Sigmoid {
        rows: t,
        cols: ne,
        seg: cfg.segments.act,
    };
    b.push(&n("sigmoid"), op, &[&n("gate")], &[&n("sigmoid")]);
    let bias = Operand::WeightRow {
        leaf_offset: b.layout.get(&n("bias"))?.leaf_offset,
    };
    b.elem(&n("bias"), ElemOp::Add, bias, &[&n("sigmoid")], t, ne);
    let cols: Vec<String> = active.iter().map(|&e| gate_column(l, e)).collect();
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let op = Op::ExpertSelector {
        rows: t,
        n_experts: ne,
        grouping: cfg.moe.grouping,
        active: active.to_vec(),
    };
    b.push(&n("experts"), op, &[&n("bias"), &n("sigmoid")], &col_refs);

    let mut terms = Vec::new();
    for s in 0..cfg.moe.n_shared {
        let sp = shared_prefix(l, s);
        b.expert(&sp, &n("ffn_norm"))?;
        terms.push((format!("{p}add.s{s}"), format!("{sp}w2")));
    }
    for (&e, col) in active.iter().zip(&cols) {
        let ep = expert_prefix(l, e);
        b.expert(&ep, &n("ffn_norm"))?;
        let (w2, mul1) = (format!("{ep}w2"), format!("{ep}mul1"));
        b.elem(&mul1, ElemOp::Mul, Operand::ActivationCol, &[&w2, col], t, cfg.dim);
        terms.push((format!("{p}add.e{e}"), mul1));
    }
    let mut acc = input.to_string();
    for (name, term) in terms {
        b.elem(&name, ElemOp::Add, Operand::Activation, &[&acc, &term], t, cfg.dim);
        acc = name;
    }
    Ok(acc)
}

fn check_active(cfg: &ModelConfig, active: &[usize]) -> Result<(), ModelError> {
    let sorted = active.windows(2).all(|w| w[0] < w[1]);
    if active.is_empty() || !sorted || active.iter().any(|&e| e >= cfg.moe.n_experts) {
        return Err(ModelError::BadConfig("active experts must be ascending, distinct and in range".into()));
    }
    Ok(())
}

/// Attention graph of layer 0 over `rows` tokens; external input `h`.
pub fn build_mla_graph(cfg: &ModelConfig, rows: usize) -> Result<ComponentGraph, ModelError> {
    let layout = Layout::new(cfg)?;
    check_rows(cfg, rows)?;
    let mut b = Builder::new(cfg, &layout, rows);
    mla(&mut b, 0, "h")?;
    Ok(b.finish(&["h"]))
}

/// Feed-forward graph of layer 0 with the given routed experts; external
/// input `h`.
pub fn build_moe_graph(cfg: &ModelConfig, rows: usize, active: &[usize]) -> Result<ComponentGraph, ModelError> {
    let layout = Layout::new(cfg)?;
    check_rows(cfg, rows)?;
    check_active(cfg, active)?;
    let mut b = Builder::new(cfg, &layout, rows);
    moe(&mut b, 0, "h", active)?;
    Ok(b.finish(&["h"]))
}

/// Full layer `l`: attention, residual and feed-forward.
pub fn layer_graph(cfg: &ModelConfig, layout: &Layout, l: usize, rows: usize, input: &str, active: &[usize]) -> Result<ComponentGraph, ModelError> {
    check_rows(cfg, rows)?;
    check_active(cfg, active)?;
    let mut b = Builder::new(cfg, layout, rows);
    mla(&mut b, l, input)?;
    let p = layer_prefix(l);
    let res = format!("{p}attn_res");
    b.elem(&res, ElemOp::Add, Operand::Activation, &[input, &format!("{p}wo")], rows, cfg.dim);
    moe(&mut b, l, &res, active)?;
    Ok(b.finish(&[input]))
}

/// The embedding lookup, which starts the model.
pub fn embed_graph(cfg: &ModelConfig, layout: &Layout, tokens: &[u32]) -> Result<ComponentGraph, ModelError> {
    check_rows(cfg, tokens.len())?;
    let op = Op::Embedding {
        tokens: tokens.to_vec(),
        dim: cfg.dim,
        seg: cfg.segments.embed,
        leaf_offset: layout.get("embed")?.leaf_offset,
    };
    Ok(ComponentGraph {
        specs: vec![ComponentSpec::new("embed", op, &[], &["embed"])],
        externals: Vec::new(),
    })
}

/// Final norm, vocabulary projection and argmax.
pub fn head_graph(cfg: &ModelConfig, layout: &Layout, rows: usize, input: &str) -> Result<ComponentGraph, ModelError> {
    check_rows(cfg, rows)?;
    let mut b = Builder::new(cfg, layout, rows);
    b.norm("final_norm", input)?;
    b.gemm_w("head", "final_norm")?;
    let op = Op::TopK {
        rows,
        cols: cfg.vocab_size,
        k: 1,
        order: SortOrder::Desc,
    };
    b.push("argmax", op, &["head"], &["argmax"]);
    Ok(b.finish(&[input]))
}

/// Node count per level of one component, with the op checked first.
pub fn dag_shape(op: &Op) -> Result<Vec<(Level, usize)>, ModelError> {
    let bad = |m: &str| Err(ModelError::BadConfig(m.into()));
    let zero_seg = match op {
        Op::Embedding { seg, .. }
        | Op::Gemm { seg, .. }
        | Op::Rescale { seg, .. }
        | Op::RmsNorm { seg, .. }
        | Op::Softmax { seg, .. }
        | Op::Sigmoid { seg, .. }
        | Op::Silu { seg, .. }
        | Op::Elementwise { seg, .. } => *seg == 0,
        _ => false,
    };
    if zero_seg {
        return bad("segment width must be at least 1");
    }
    match op {
        Op::Embedding { tokens, dim, .. } if tokens.is_empty() || *dim == 0 => return bad("empty embedding"),
        Op::Gemm { a, n, b, .. } if *a == 0 || *n == 0 || *b == 0 => return bad("empty gemm"),
        Op::Rope { rows, heads, head_dim, .. } if *rows == 0 || *heads == 0 || head_dim % 2 != 0 => {
            return bad("rope needs rows, heads and an even head width")
        }
        Op::ExpertSelector { n_experts, grouping, .. } => {
            grouping.validate(*n_experts).map_err(|e| ModelError::BadConfig(format!("{e}")))?;
        }
        _ => {}
    }
    Ok(op.shape())
}
