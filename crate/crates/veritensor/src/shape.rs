//! `veritensor shape`: node counts of a single component's proof DAG.

use clap::{Args, ValueEnum};
use veritensor_core::kernels::{Grouping, SortOrder};
use veritensor_core::model::dag_shape;
use veritensor_core::proof::{ElemOp, GemmRhs, Level, Op, Operand};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Component {
    Embedding,
    Rmsnorm,
    Rope,
    Softmax,
    Sigmoid,
    Silu,
    Rescale,
    Elementwise,
    Gemm,
    Topk,
    Experts,
}

#[derive(Clone, Debug, Args)]
pub struct ShapeArgs {
    pub component: Component,
    #[arg(long, default_value_t = 24)]
    pub rows: usize,
    /// Row width (embedding, norm, activations, top-k).
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub segment: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub head_dim: Option<usize>,
    /// Softmax lanes per head.
    #[arg(long)]
    pub width: Option<usize>,
    /// GeMM `a x n` by `n x b`.
    #[arg(long)]
    pub a: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub b: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub experts: Option<usize>,
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub group_top: usize,
    #[arg(long, default_value_t = 4)]
    pub groups_selected: usize,
    #[arg(long, default_value_t = 8)]
    pub experts_selected: usize,
}

fn need(v: Option<usize>, flag: &str, c: Component) -> Result<usize, CliError> {
    v.ok_or_else(|| CliError::Usage(format!("{c:?} needs --{flag}").to_lowercase()))
}

impl ShapeArgs {
    pub fn op(&self) -> Result<Op, CliError> {
        let c = self.component;
        let rows = self.rows;
        let dim = || need(self.dim, "dim", c);
        let seg = || need(self.segment, "segment", c);
        Ok(match c {
            Component::Embedding => Op::Embedding {
                tokens: vec![0; rows],
                dim: dim()?,
                seg: seg()?,
                leaf_offset: 0,
            },
            Component::Rmsnorm => Op::RmsNorm {
                rows,
                dim: dim()?,
                seg: seg()?,
                leaf_offset: 0,
            },
            Component::Rope => Op::Rope {
                rows,
                heads: need(self.heads, "heads", c)?,
                head_dim: need(self.head_dim, "head-dim", c)?,
                positions: (0..rows).collect(),
                leaf_offset: 0,
                scale_bits: 20,
            },
            Component::Softmax => Op::Softmax {
                rows,
                heads: need(self.heads, "heads", c)?,
                width: need(self.width, "width", c)?,
                seg: seg()?,
                valid: vec![self.width.unwrap_or(0); rows],
            },
            Component::Sigmoid => Op::Sigmoid {
                rows,
                cols: dim()?,
                seg: seg()?,
            },
            Component::Silu => Op::Silu {
                rows,
                cols: dim()?,
                seg: seg()?,
            },
            Component::Rescale => Op::Rescale {
                rows,
                cols: dim()?,
                seg: seg()?,
                shift: 16,
            },
            Component::Elementwise => Op::Elementwise {
                rows,
                cols: dim()?,
                seg: seg()?,
                op: ElemOp::Add,
                operand: Operand::Activation,
            },
            Component::Gemm => Op::Gemm {
                a: need(self.a, "a", c)?,
                n: need(self.n, "n", c)?,
                b: need(self.b, "b", c)?,
                seg: seg()?,
                rhs: GemmRhs::Weight { leaf_offset: 0 },
            },
            Component::Topk => Op::TopK {
                rows,
                cols: dim()?,
                k: need(self.k, "k", c)?,
                order: SortOrder::Desc,
            },
            Component::Experts => Op::ExpertSelector {
                rows,
                n_experts: need(self.experts, "experts", c)?,
                grouping: Grouping {
                    n_groups: need(self.groups, "groups", c)?,
                    per_group_top: self.group_top,
                    groups_selected: self.groups_selected,
                    experts_selected: self.experts_selected,
                },
                active: vec![],
            },
        })
    }
}

/// Levels a component reports in its summary line. GeMM segment leaves and
/// pairings and softmax segments are internal to their parents.
fn reported(c: Component, level: Level) -> bool {
    !matches!(
        (c, level),
        (Component::Gemm, Level::Segment | Level::XwProof) | (Component::Softmax, Level::Segment)
    )
}

/// The printed table, ending in a `counts a/b/c` summary line.
pub fn render(args: &ShapeArgs) -> Result<String, CliError> {
    let shape = dag_shape(&args.op()?).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut out = String::new();
    for (level, n) in &shape {
        out.push_str(&format!("{:<16}{n}\n", level.name()));
    }
    let counts: Vec<String> = shape.iter().filter(|(l, _)| reported(args.component, *l)).map(|(_, n)| n.to_string()).collect();
    out.push_str(&format!("counts {}\n", counts.join("/")));
    Ok(out)
}
