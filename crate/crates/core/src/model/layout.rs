//! Which tensors a model has, where their leaves sit in the commitment, and
//! the metered loader the prover streams them through.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::commit::{Digest, MerkleTree};
use crate::error::ModelError;
use crate::kernels::RopeTable;
use crate::proof::{gemm_weight_leaves, rope_leaves, vector_leaves, vocab_row_leaf};
use crate::tensor::QTensor;

use super::config::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum TensorKind {
    /// GeMM right operand, `n x b`.
    Matrix,
    /// RMSNorm scale, `1 x n`.
    NormVector,
    /// Elementwise bias, `1 x n`.
    BiasVector,
    Vocab,
    /// Derived from the config; committed but never stored.
    Rope,
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub kind: TensorKind,
    pub leaf_offset: usize,
    pub leaf_count: usize,
}

impl TensorEntry {
    pub fn byte_len(&self) -> usize {
        self.rows * self.cols * 8
    }
}

pub fn layer_prefix(l: usize) -> String {
    format!("L{l}.")
}

pub fn expert_prefix(l: usize, e: usize) -> String {
    format!("L{l}.e{e}.")
}

pub fn shared_prefix(l: usize, s: usize) -> String {
    format!("L{l}.s{s}.")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub entries: Vec<TensorEntry>,
    index: BTreeMap<String, usize>,
    pub leaf_count: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let (h, dim) = (cfg.n_heads, cfg.dim);
        let mut shapes: Vec<(String, usize, usize, TensorKind)> = vec![
            ("embed".into(), cfg.vocab_size, dim, TensorKind::Vocab),
            ("rope".into(), cfg.max_pos, cfg.rope_dim, TensorKind::Rope),
        ];
        let m = TensorKind::Matrix;
        for l in 0..cfg.n_layers {
            let p = layer_prefix(l);
            let mut add = |n: &str, r: usize, c: usize, k: TensorKind| shapes.push((format!("{p}{n}"), r, c, k));
            add("attn_norm", 1, dim, TensorKind::NormVector);
            add("wq_a", dim, cfg.q_lora_rank, m);
            add("q_norm", 1, cfg.q_lora_rank, TensorKind::NormVector);
            add("wq_b1", cfg.q_lora_rank, h * cfg.head_dim, m);
            add("wq_b2", cfg.q_lora_rank, h * cfg.rope_dim, m);
            add("wkv_a1", dim, cfg.kv_lora_rank, m);
            add("kv_norm", 1, cfg.kv_lora_rank, TensorKind::NormVector);
            add("wkv_a2", dim, cfg.rope_dim, m);
            add("wkv_b1", h * cfg.head_dim, h * cfg.kv_lora_rank, m);
            add("wkv_b2", h * cfg.kv_lora_rank, h * cfg.v_head_dim, m);
            add("wo", h * cfg.v_head_dim, dim, m);
            add("ffn_norm", 1, dim, TensorKind::NormVector);
            add("gate", dim, cfg.moe.n_experts, m);
            add("bias", 1, cfg.moe.n_experts, TensorKind::BiasVector);
            let experts = (0..cfg.moe.n_shared).map(|s| shared_prefix(l, s)).chain((0..cfg.moe.n_experts).map(|e| expert_prefix(l, e)));
            for ep in experts {
                shapes.push((format!("{ep}w1"), dim, cfg.moe.inter_dim, m));
                shapes.push((format!("{ep}w3"), dim, cfg.moe.inter_dim, m));
                shapes.push((format!("{ep}w2"), cfg.moe.inter_dim, dim, m));
            }
        }
        shapes.push(("final_norm".into(), 1, dim, TensorKind::NormVector));
        shapes.push(("head".into(), dim, cfg.vocab_size, m));

        let s = cfg.segments;
        // leaf 0 holds the config digest
        let mut offset = 1;
        let mut entries = Vec::with_capacity(shapes.len());
        let mut index = BTreeMap::new();
        for (name, rows, cols, kind) in shapes {
            let leaf_count = match kind {
                TensorKind::Matrix => cols * rows.div_ceil(s.gemm),
                TensorKind::NormVector => cols.div_ceil(s.norm),
                TensorKind::BiasVector => cols.div_ceil(s.elem),
                TensorKind::Vocab | TensorKind::Rope => rows,
            };
            index.insert(name.clone(), entries.len());
            entries.push(TensorEntry {
                name,
                rows,
                cols,
                kind,
                leaf_offset: offset,
                leaf_count,
            });
            offset += leaf_count;
        }
        Ok(Self {
            entries,
            index,
            leaf_count: offset,
        })
    }

    pub fn get(&self, name: &str) -> Result<&TensorEntry, ModelError> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| ModelError::MissingWeight(name.into()))
    }

    pub fn offset(&self, name: &str) -> usize {
        self.get(name).map_or(usize::MAX, |e| e.leaf_offset)
    }
}

pub fn rope_table(cfg: &ModelConfig) -> Result<RopeTable, ModelError> {
    Ok(RopeTable::build(cfg.max_pos, cfg.rope_dim, cfg.rope_theta as f64, cfg.rope_scale_bits)?)
}

/// Commitment leaves of one tensor.
pub fn tensor_leaves(cfg: &ModelConfig, entry: &TensorEntry, t: &QTensor) -> Vec<Digest> {
    let s = cfg.segments;
    match entry.kind {
        TensorKind::Matrix => gemm_weight_leaves(t, s.gemm),
        TensorKind::NormVector => vector_leaves(t.row(0), s.norm),
        TensorKind::BiasVector => vector_leaves(t.row(0), s.elem),
        TensorKind::Vocab => (0..t.rows()).map(|r| vocab_row_leaf(t.row(r), s.embed)).collect(),
        TensorKind::Rope => (0..t.rows()).map(|p| crate::commit::hash_segment(crate::proof::ROPE_TAG, t.row(p))).collect(),
    }
}

/// Source of stored parameters, by tensor name.
pub trait WeightStore {
    fn load(&self, name: &str) -> Result<QTensor, ModelError>;
}

impl WeightStore for BTreeMap<String, QTensor> {
    fn load(&self, name: &str) -> Result<QTensor, ModelError> {
        self.get(name).cloned().ok_or_else(|| ModelError::MissingWeight(name.into()))
    }
}

fn check_shape(e: &TensorEntry, t: &QTensor) -> Result<(), ModelError> {
    if t.shape() != (e.rows, e.cols) {
        return Err(ModelError::WeightShape {
            name: e.name.clone(),
            got: t.shape(),
            expected: (e.rows, e.cols),
        });
    }
    Ok(())
}

/// The public model commitment: config, leaf layout and the tree itself.
#[derive(Clone, Debug)]
pub struct Commitment {
    pub cfg: ModelConfig,
    pub layout: Layout,
    pub tree: MerkleTree,
}

impl Commitment {
    pub fn root(&self) -> Digest {
        self.tree.root()
    }

    /// Rebuilds a commitment from published leaves.
    pub fn from_leaves(cfg: ModelConfig, leaves: Vec<Digest>) -> Result<Self, ModelError> {
        let layout = Layout::new(&cfg)?;
        if leaves.len() != layout.leaf_count || leaves[0] != cfg.digest() {
            return Err(ModelError::BadConfig("leaves do not match the config".into()));
        }
        Ok(Self {
            cfg,
            layout,
            tree: MerkleTree::build(leaves)?,
        })
    }
}

/// Hashes every tensor once, one at a time.
pub fn commit_model(cfg: &ModelConfig, store: &dyn WeightStore) -> Result<Commitment, ModelError> {
    let layout = Layout::new(cfg)?;
    let mut leaves = Vec::with_capacity(layout.leaf_count);
    leaves.push(cfg.digest());
    let rope = rope_table(cfg)?;
    for e in &layout.entries {
        let t = match e.kind {
            TensorKind::Rope => {
                leaves.extend(rope_leaves(&rope));
                continue;
            }
            _ => store.load(&e.name)?,
        };
        check_shape(e, &t)?;
        leaves.extend(tensor_leaves(cfg, e, &t));
    }
    debug_assert_eq!(leaves.len(), layout.leaf_count);
    Ok(Commitment {
        cfg: *cfg,
        layout,
        tree: MerkleTree::build(leaves)?,
    })
}

/// Loads parameters against the commitment and tracks how many bytes are
/// resident at once.
pub struct Loader<'a> {
    store: &'a dyn WeightStore,
    commitment: &'a Commitment,
    current: usize,
    peak: usize,
}

impl<'a> Loader<'a> {
    pub fn new(store: &'a dyn WeightStore, commitment: &'a Commitment) -> Self {
        Self {
            store,
            commitment,
            current: 0,
            peak: 0,
        }
    }

    /// Loads `name` for `component`, refusing tensors whose leaves differ
    /// from the committed ones.
    pub fn load(&mut self, name: &str, component: &str) -> Result<QTensor, ModelError> {
        let c = self.commitment;
        let e = c.layout.get(name)?;
        let t = self.store.load(name)?;
        check_shape(e, &t)?;
        let leaves = tensor_leaves(&c.cfg, e, &t);
        if leaves.as_slice() != &c.tree.leaves()[e.leaf_offset..e.leaf_offset + e.leaf_count] {
            return Err(ModelError::CommitmentMismatch {
                tensor: name.to_string(),
                component: component.to_string(),
            });
        }
        self.current += t.byte_len();
        self.peak = self.peak.max(self.current);
        Ok(t)
    }

    pub fn release(&mut self, t: QTensor) {
        self.current -= t.byte_len();
    }

    pub fn resident(&self) -> usize {
        self.current
    }

    pub fn peak(&self) -> usize {
        self.peak
    }
}
