use alloc::string::String;
use alloc::vec::Vec;

use crate::commit::{Digest, Hasher};
use crate::fixed::KernelTables;
use crate::kernels::{Grouping, SortOrder};
use crate::transcript::Challenges;

use super::node::{Kind, Level};

/// How the right-hand side of an activation-by-activation GeMM sits in the
/// tensor it was produced as.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Layout {
    /// `W` is the producer tensor itself (`n x b`).
    RowMajor,
    /// `W` is the transpose of a `b x n` producer tensor.
    Transposed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum GemmRhs {
    /// Committed weight; column `j`, block `k` sits at leaf `offset + j*blocks + k`.
    Weight { leaf_offset: usize },
    Activation { layout: Layout },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ElemOp {
    Add,
    /// `floor(x * b / 2^q)`.
    Mul,
}

/// Provenance of the second elementwise operand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Operand {
    /// A committed `1 x cols` vector broadcast over rows.
    WeightRow { leaf_offset: usize },
    /// An activation of the same shape.
    Activation,
    /// A `rows x 1` activation broadcast over columns.
    ActivationCol,
}

/// Everything the verifier needs to know about one component, all derivable
/// from public data.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Op {
    Embedding {
        tokens: Vec<u32>,
        dim: usize,
        seg: usize,
        leaf_offset: usize,
    },
    Gemm {
        a: usize,
        n: usize,
        b: usize,
        seg: usize,
        rhs: GemmRhs,
    },
    Rescale {
        rows: usize,
        cols: usize,
        seg: usize,
        shift: u32,
    },
    RmsNorm {
        rows: usize,
        dim: usize,
        seg: usize,
        leaf_offset: usize,
    },
    Rope {
        rows: usize,
        heads: usize,
        head_dim: usize,
        positions: Vec<usize>,
        leaf_offset: usize,
        scale_bits: u32,
    },
    Softmax {
        rows: usize,
        heads: usize,
        width: usize,
        seg: usize,
        /// Live lanes per row; the rest are masked to `neg_inf_q`.
        valid: Vec<usize>,
    },
    Sigmoid {
        rows: usize,
        cols: usize,
        seg: usize,
    },
    Silu {
        rows: usize,
        cols: usize,
        seg: usize,
    },
    Elementwise {
        rows: usize,
        cols: usize,
        seg: usize,
        op: ElemOp,
        operand: Operand,
    },
    TopK {
        rows: usize,
        cols: usize,
        k: usize,
        order: SortOrder,
    },
    ExpertSelector {
        rows: usize,
        n_experts: usize,
        grouping: Grouping,
        /// Experts chosen by at least one row, ascending; one output port each.
        active: Vec<usize>,
    },
}

impl Op {
    pub fn kind(&self) -> Kind {
        match self {
            Op::Embedding { .. } => Kind::Embedding,
            Op::Gemm { .. } => Kind::Gemm,
            Op::Rescale { .. } => Kind::Rescale,
            Op::RmsNorm { .. } => Kind::RmsNorm,
            Op::Rope { .. } => Kind::Rope,
            Op::Softmax { .. } => Kind::Softmax,
            Op::Sigmoid { .. } => Kind::Sigmoid,
            Op::Silu { .. } => Kind::Silu,
            Op::Elementwise { op: ElemOp::Add, .. } => Kind::ElemAdd,
            Op::Elementwise { op: ElemOp::Mul, .. } => Kind::ElemMul,
            Op::TopK { .. } => Kind::TopK,
            Op::ExpertSelector { .. } => Kind::ExpertSelector,
        }
    }

    /// Number of activation input ports.
    pub fn input_ports(&self) -> usize {
        match self {
            Op::Embedding { .. } => 0,
            Op::Gemm {
                rhs: GemmRhs::Activation { .. },
                ..
            } => 2,
            Op::Elementwise {
                operand: Operand::Activation | Operand::ActivationCol,
                ..
            } => 2,
            Op::ExpertSelector { .. } => 2,
            _ => 1,
        }
    }

    pub fn output_ports(&self) -> usize {
        match self {
            Op::ExpertSelector { active, .. } => active.len(),
            _ => 1,
        }
    }

    /// Node count per level of the DAG this op proves into.
    pub fn shape(&self) -> Vec<(Level, usize)> {
        let blocks = |n: usize, s: usize| n.div_ceil(s.max(1));
        let v = match self {
            Op::Embedding { tokens, dim, seg, .. } => {
                alloc::vec![(Level::Segment, tokens.len() * blocks(*dim, *seg)), (Level::Row, tokens.len())]
            }
            Op::RmsNorm { rows, dim: cols, seg, .. }
            | Op::Rescale { rows, cols, seg, .. }
            | Op::Sigmoid { rows, cols, seg }
            | Op::Silu { rows, cols, seg }
            | Op::Elementwise { rows, cols, seg, .. } => {
                alloc::vec![(Level::Segment, rows * blocks(*cols, *seg)), (Level::Row, *rows)]
            }
            Op::Gemm { a, n, b, seg, .. } => {
                let nb = blocks(*n, *seg);
                alloc::vec![
                    (Level::Segment, (a + b) * nb),
                    (Level::XProof, nb),
                    (Level::WProof, nb),
                    (Level::XwProof, nb),
                ]
            }
            Op::Rope { rows, heads, .. } => alloc::vec![(Level::Head, rows * heads), (Level::Row, *rows)],
            Op::Softmax {
                rows, heads, width, seg, ..
            } => alloc::vec![
                (Level::Segment, rows * heads * blocks(*width, *seg)),
                (Level::Head, rows * heads),
                (Level::Row, *rows),
            ],
            Op::TopK { rows, .. } => alloc::vec![(Level::Row, *rows)],
            Op::ExpertSelector { rows, grouping, .. } => alloc::vec![
                (Level::Group, rows * grouping.n_groups),
                (Level::GroupRow, *rows),
                (Level::SortedGroup, rows * grouping.n_groups),
                (Level::SortedGroupRow, *rows),
            ],
        };
        let mut v = v;
        v.push((Level::Component, 1));
        v
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ComponentSpec {
    /// Unique name, also the label of the component node.
    pub name: String,
    pub op: Op,
    /// Tensor names linked to the input ports, in port order.
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl ComponentSpec {
    pub fn new(name: impl Into<String>, op: Op, inputs: &[&str], outputs: &[&str]) -> Self {
        Self {
            name: name.into(),
            op,
            inputs: inputs.iter().map(|s| (*s).into()).collect(),
            outputs: outputs.iter().map(|s| (*s).into()).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    Replay,
    /// Recompute a seeded pseudorandom `fraction` of leaf claims; every
    /// digest, path, link and wrap constraint is still checked.
    SpotCheck { fraction: f64, seed: u64 },
}

/// Shared verification context.
#[derive(Clone, Copy)]
pub struct VerifyCtx<'a> {
    pub model_root: Digest,
    pub tables: &'a KernelTables,
    pub challenges: Challenges,
    pub mode: Mode,
}

impl VerifyCtx<'_> {
    /// Whether the leaf identified by `(component, key)` is recomputed.
    pub fn sampled(&self, component: &str, key: [usize; 3]) -> bool {
        match self.mode {
            Mode::Replay => true,
            Mode::SpotCheck { fraction, seed } => {
                if fraction >= 1.0 {
                    return true;
                }
                let mut h = Hasher::new("VT-SPOT");
                h.u64(seed).bytes(component.as_bytes());
                for k in key {
                    h.u64(k as u64);
                }
                let d = h.finish();
                let mut b = [0u8; 8];
                b.copy_from_slice(&d.0[..8]);
                (u64::from_le_bytes(b) as f64) < fraction * 18_446_744_073_709_551_616.0
            }
        }
    }
}
