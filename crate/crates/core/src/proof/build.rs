//! Prover side: turns a component's tensors into an unsealed node tree with
//! every opening and Merkle path the verifier will replay.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::commit::{hash_digests, hash_segment, Digest, MerkleTree};
use crate::error::ProveError;
use crate::fixed::KernelTables;
use crate::kernels::{self, expert_select, rope_rotate, softmax_row, sort_with_witness, RopeTable, SortOrder};
use crate::par::map_range;
use crate::tensor::{QInt, QTensor};
use crate::transcript::Challenges;

use super::eval::{index_bits, sort_tag, tag_index, ROPE_TAG, VROW_TAG, VSEG_TAG, WSEG_TAG};
use super::node::{Kind, Level, Opening, ProofNode};
use super::spec::{ComponentSpec, ElemOp, GemmRhs, Layout, Mode, Op, Operand, VerifyCtx};
use super::verify::seal_component;

/// Tensors a component consumed and produced, in the layout the matching
/// [`Op`] describes.
#[derive(Clone, Copy, Debug)]
pub enum Witness<'a> {
    Embedding { x: &'a QTensor },
    /// `w` is the `n x b` right operand whatever its provenance.
    Gemm { x: &'a QTensor, w: &'a QTensor, y: &'a QTensor },
    Rescale { y_raw: &'a QTensor, y: &'a QTensor },
    RmsNorm { x: &'a QTensor, w: &'a [QInt], y: &'a QTensor },
    Rope { x: &'a QTensor, table: &'a RopeTable, y: &'a QTensor },
    /// Raw scores; masked lanes are replaced by the verifier too.
    Softmax { x: &'a QTensor, y: &'a QTensor },
    Unary { x: &'a QTensor, y: &'a QTensor },
    Elementwise { x: &'a QTensor, b: &'a QTensor, y: &'a QTensor },
    TopK { x: &'a QTensor, idx: &'a QTensor },
    /// `outputs[p]` is the `rows x 1` gate column of the `p`-th active expert.
    Experts { sp: &'a QTensor, s: &'a QTensor, outputs: &'a [QTensor] },
}

fn violation(what: impl Into<String>) -> ProveError {
    ProveError::ConstraintViolation(what.into())
}

fn shape(what: &str, t: &QTensor, rows: usize, cols: usize) -> Result<(), ProveError> {
    if t.shape() != (rows, cols) {
        return Err(ProveError::ShapeMismatch(format!(
            "{what}: {}x{} where {rows}x{cols} expected",
            t.rows(),
            t.cols()
        )));
    }
    Ok(())
}

fn expect_eq(what: &str, got: &[QInt], want: &[QInt]) -> Result<(), ProveError> {
    if got != want {
        return Err(violation(format!("{what} does not match the recomputed kernel output")));
    }
    Ok(())
}

/// Leaves of an `n x b` weight: column `j`, block `k` at `j*blocks + k`.
pub fn gemm_weight_leaves(w: &QTensor, seg: usize) -> Vec<Digest> {
    let (n, b) = w.shape();
    let wt = w.transpose();
    (0..b)
        .flat_map(|j| {
            let col = wt.row(j).to_vec();
            (0..n.div_ceil(seg)).map(move |k| hash_segment(WSEG_TAG, &col[k * seg..(k * seg + seg).min(n)]))
        })
        .collect()
}

pub fn vector_leaves(v: &[QInt], seg: usize) -> Vec<Digest> {
    v.chunks(seg).map(|c| hash_segment(WSEG_TAG, c)).collect()
}

/// One leaf per vocabulary row: the hash of its segment hashes.
pub fn vocab_row_leaf(row: &[QInt], seg: usize) -> Digest {
    let segs: Vec<Digest> = row.chunks(seg).map(|c| hash_segment(VSEG_TAG, c)).collect();
    hash_digests(VROW_TAG, &segs)
}

pub fn rope_leaves(table: &RopeTable) -> Vec<Digest> {
    (0..table.max_pos()).map(|p| hash_segment(ROPE_TAG, table.row(p))).collect()
}

fn tree_of(tree: Option<&MerkleTree>) -> Result<&MerkleTree, ProveError> {
    tree.ok_or_else(|| ProveError::ShapeMismatch("component reads committed weights but no commitment was given".into()))
}

fn seg_node(kind: Kind, label: String, lanes: Vec<Vec<i64>>) -> ProofNode {
    ProofNode::new(Level::Segment, kind, label, Some(Opening::lanes(lanes)), Vec::new())
}

fn inner(kind: Kind, level: Level, label: String, opening: Option<Opening>, children: Vec<ProofNode>) -> ProofNode {
    ProofNode::new(level, kind, label, opening, children)
}

fn ranges(n: usize, seg: usize) -> impl Iterator<Item = (usize, core::ops::Range<usize>)> {
    (0..n.div_ceil(seg)).map(move |k| (k, k * seg..(k * seg + seg).min(n)))
}

fn path(tree: &MerkleTree, idx: usize) -> Result<(u64, crate::commit::AuthPath), ProveError> {
    Ok((idx as u64, tree.open(idx)?))
}

/// Builds the unsealed node tree of one component.
pub fn build_component(spec: &ComponentSpec, wit: Witness, tree: Option<&MerkleTree>, tables: &KernelTables) -> Result<ProofNode, ProveError> {
    let kind = spec.op.kind();
    let q = tables.cfg.q;
    let name = spec.name.clone();
    let comp = |rows: Vec<ProofNode>| inner(kind, Level::Component, name.clone(), None, rows);
    // rows of plain segment nodes, one lane set per segment
    let grid = |rows: usize, cols: usize, seg: usize, f: &(dyn Fn(usize, core::ops::Range<usize>) -> Result<Vec<Vec<i64>>, ProveError> + Sync)| -> Result<Vec<ProofNode>, ProveError> {
        map_range(rows, |i| {
            let segs = ranges(cols, seg)
                .map(|(k, r)| Ok(seg_node(kind, format!("s{k}"), f(i, r)?)))
                .collect::<Result<Vec<_>, ProveError>>()?;
            Ok(inner(kind, Level::Row, format!("r{i}"), None, segs))
        })
        .into_iter()
        .collect()
    };
    let node = match (&spec.op, wit) {
        (Op::Embedding { tokens, dim, seg, leaf_offset }, Witness::Embedding { x }) => {
            shape("embedding", x, tokens.len(), *dim)?;
            let t = tree_of(tree)?;
            let rows = map_range(tokens.len(), |i| {
                let tok = tokens[i] as usize;
                let leaf = vocab_row_leaf(x.row(i), *seg);
                if t.leaf(leaf_offset + tok) != Some(&leaf) {
                    return Err(ProveError::VocabDigestMismatch(tokens[i]));
                }
                let segs = ranges(*dim, *seg).map(|(k, r)| seg_node(kind, format!("s{k}"), vec![x.row(i)[r].to_vec()])).collect();
                let opening = Opening {
                    scalars: vec![tok as i128],
                    paths: vec![path(t, leaf_offset + tok)?],
                    ..Opening::default()
                };
                Ok(inner(kind, Level::Row, format!("r{i}"), Some(opening), segs))
            });
            comp(rows.into_iter().collect::<Result<_, _>>()?)
        }
        (Op::Rescale { rows, cols, seg, shift }, Witness::Rescale { y_raw, y }) => {
            shape("rescale input", y_raw, *rows, *cols)?;
            shape("rescale output", y, *rows, *cols)?;
            let (want, _) = kernels::rescale(y_raw, *shift);
            expect_eq(&spec.name, y.data(), want.data())?;
            comp(grid(*rows, *cols, *seg, &|i, r| {
                let raw = y_raw.row(i)[r.clone()].to_vec();
                let out = y.row(i)[r].to_vec();
                let rem = raw.iter().zip(&out).map(|(a, b)| a - (b << shift)).collect();
                Ok(vec![raw, out, rem])
            })?)
        }
        (Op::RmsNorm { rows, dim, seg, leaf_offset }, Witness::RmsNorm { x, w, y }) => {
            shape("rmsnorm input", x, *rows, *dim)?;
            shape("rmsnorm output", y, *rows, *dim)?;
            if w.len() != *dim {
                return Err(ProveError::ShapeMismatch(format!("rmsnorm weight of {}", w.len())));
            }
            let t = tree_of(tree)?;
            for (k, r) in ranges(*dim, *seg) {
                if t.leaf(leaf_offset + k) != Some(&hash_segment(WSEG_TAG, &w[r])) {
                    return Err(ProveError::WeightDigestMismatch(spec.name.clone()));
                }
            }
            let rows_v = map_range(*rows, |i| {
                let (out, aux) = kernels::rmsnorm(x.row(i), w, q)?;
                expect_eq(&spec.name, y.row(i), &out)?;
                let segs = ranges(*dim, *seg)
                    .map(|(k, r)| {
                        let mut n = seg_node(
                            kind,
                            format!("s{k}"),
                            vec![x.row(i)[r.clone()].to_vec(), w[r.clone()].to_vec(), out[r.clone()].to_vec(), aux.elem_rem[r].to_vec()],
                        );
                        n.opening.as_mut().expect("segment").paths.push(path(t, leaf_offset + k)?);
                        Ok(n)
                    })
                    .collect::<Result<Vec<_>, ProveError>>()?;
                let opening = Opening {
                    scalars: vec![aux.quotient, aux.remainder, aux.rms],
                    ..Opening::default()
                };
                Ok(inner(kind, Level::Row, format!("r{i}"), Some(opening), segs))
            });
            comp(rows_v.into_iter().collect::<Result<_, ProveError>>()?)
        }
        (
            Op::Rope {
                rows,
                heads,
                head_dim,
                positions,
                leaf_offset,
                scale_bits,
            },
            Witness::Rope { x, table, y },
        ) => {
            let width = heads * head_dim;
            shape("rope input", x, *rows, width)?;
            shape("rope output", y, *rows, width)?;
            if positions.len() != *rows || table.entries.cols() != *head_dim || table.scale_bits != *scale_bits {
                return Err(ProveError::ShapeMismatch("rope table or positions".into()));
            }
            let t = tree_of(tree)?;
            let rows_v = map_range(*rows, |i| {
                let pos = positions[i];
                if pos >= table.max_pos() {
                    return Err(ProveError::ShapeMismatch(format!("position {pos} beyond table")));
                }
                let trow = table.row(pos);
                if t.leaf(leaf_offset + pos) != Some(&hash_segment(ROPE_TAG, trow)) {
                    return Err(ProveError::RopeTableDigestMismatch(pos as u32));
                }
                let hs = (0..*heads)
                    .map(|h| {
                        let r = h * head_dim..(h + 1) * head_dim;
                        let xs = &x.row(i)[r.clone()];
                        let (out, rem) = rope_rotate(xs, trow, *scale_bits)?;
                        expect_eq(&spec.name, &y.row(i)[r], &out)?;
                        Ok(inner(kind, Level::Head, format!("h{h}"), Some(Opening::lanes(vec![xs.to_vec(), out, rem])), Vec::new()))
                    })
                    .collect::<Result<Vec<_>, ProveError>>()?;
                let opening = Opening {
                    lanes: vec![trow.to_vec()],
                    scalars: vec![pos as i128],
                    paths: vec![path(t, leaf_offset + pos)?],
                };
                Ok(inner(kind, Level::Row, format!("r{i}"), Some(opening), hs))
            });
            comp(rows_v.into_iter().collect::<Result<_, ProveError>>()?)
        }
        (
            Op::Softmax {
                rows,
                heads,
                width,
                seg,
                valid,
            },
            Witness::Softmax { x, y },
        ) => {
            shape("softmax input", x, *rows, heads * width)?;
            shape("softmax output", y, *rows, heads * width)?;
            if valid.len() != *rows {
                return Err(ProveError::ShapeMismatch("softmax mask".into()));
            }
            let neg_inf = tables.cfg.neg_inf_q;
            let rows_v = map_range(*rows, |i| {
                let hs = (0..*heads)
                    .map(|h| {
                        let raw = &x.row(i)[h * width..(h + 1) * width];
                        let masked: Vec<QInt> = raw.iter().enumerate().map(|(c, &v)| if c < valid[i] { v } else { neg_inf }).collect();
                        let (p, a) = softmax_row(&masked, tables)?;
                        expect_eq(&spec.name, &y.row(i)[h * width..(h + 1) * width], &p)?;
                        let segs = ranges(*width, *seg)
                            .map(|(k, r)| {
                                let lanes = [raw, &a.delta, &a.y, &a.y_rem, &a.k, &a.f, &a.idx, &a.t, &a.w, &p, &a.p_rem]
                                    .iter()
                                    .map(|l| l[r.clone()].to_vec())
                                    .collect();
                                seg_node(kind, format!("s{k}"), lanes)
                            })
                            .collect();
                        let opening = Opening {
                            scalars: vec![a.x_max as i128, a.sum_w],
                            ..Opening::default()
                        };
                        Ok(inner(kind, Level::Head, format!("h{h}"), Some(opening), segs))
                    })
                    .collect::<Result<Vec<_>, ProveError>>()?;
                Ok(inner(kind, Level::Row, format!("r{i}"), None, hs))
            });
            comp(rows_v.into_iter().collect::<Result<_, ProveError>>()?)
        }
        (Op::Sigmoid { rows, cols, seg } | Op::Silu { rows, cols, seg }, Witness::Unary { x, y }) => {
            shape("activation input", x, *rows, *cols)?;
            shape("activation output", y, *rows, *cols)?;
            let silu = kind == Kind::Silu;
            comp(grid(*rows, *cols, *seg, &|i, r| {
                let n = if silu { 12 } else { 10 };
                let mut lanes = vec![Vec::with_capacity(r.len()); n];
                for c in r {
                    let xv = x.get(i, c);
                    let (out, a, rem) = if silu {
                        let (o, s) = kernels::silu(xv, tables);
                        (o, s.sigmoid, Some(s.rem))
                    } else {
                        let (o, a) = kernels::sigmoid(xv, tables);
                        (o, a, None)
                    };
                    if y.get(i, c) != out {
                        return Err(violation(format!("{} does not match the recomputed kernel output", spec.name)));
                    }
                    let vals = [xv, a.y, a.y_rem, a.k, a.f, a.idx, a.t, a.u, a.sigma, a.sigma_rem];
                    for (lane, v) in lanes.iter_mut().zip(vals) {
                        lane.push(v);
                    }
                    if let Some(rem) = rem {
                        lanes[10].push(out);
                        lanes[11].push(rem);
                    }
                }
                Ok(lanes)
            })?)
        }
        (
            Op::Elementwise {
                rows,
                cols,
                seg,
                op,
                operand,
            },
            Witness::Elementwise { x, b, y },
        ) => {
            shape("elementwise input", x, *rows, *cols)?;
            shape("elementwise output", y, *rows, *cols)?;
            let full = match operand {
                Operand::WeightRow { leaf_offset } => {
                    shape("elementwise weight", b, 1, *cols)?;
                    let t = tree_of(tree)?;
                    for (k, leaf) in vector_leaves(b.row(0), *seg).iter().enumerate() {
                        if t.leaf(leaf_offset + k) != Some(leaf) {
                            return Err(ProveError::WeightDigestMismatch(spec.name.clone()));
                        }
                    }
                    QTensor::new(*rows, *cols, b.row(0).repeat(*rows))?
                }
                Operand::Activation => {
                    shape("elementwise operand", b, *rows, *cols)?;
                    b.clone()
                }
                Operand::ActivationCol => {
                    shape("elementwise operand", b, *rows, 1)?;
                    QTensor::new(*rows, *cols, b.data().iter().flat_map(|&v| core::iter::repeat_n(v, *cols)).collect())?
                }
            };
            let rem = match op {
                ElemOp::Add => {
                    expect_eq(&spec.name, y.data(), kernels::elementwise_add(x, &full)?.data())?;
                    None
                }
                ElemOp::Mul => {
                    let (out, rem) = kernels::elementwise_mul(x, &full, q)?;
                    expect_eq(&spec.name, y.data(), out.data())?;
                    Some(QTensor::new(*rows, *cols, rem)?)
                }
            };
            let t = tree;
            let mut rows_v = grid(*rows, *cols, *seg, &|i, r| {
                let mut lanes = vec![x.row(i)[r.clone()].to_vec(), full.row(i)[r.clone()].to_vec(), y.row(i)[r.clone()].to_vec()];
                if let Some(rem) = &rem {
                    lanes.push(rem.row(i)[r].to_vec());
                }
                Ok(lanes)
            })?;
            if let Operand::WeightRow { leaf_offset } = operand {
                let t = tree_of(t)?;
                for row in &mut rows_v {
                    for (k, s) in row.children.iter_mut().enumerate() {
                        s.opening.as_mut().expect("segment").paths.push(path(t, leaf_offset + k)?);
                    }
                }
            }
            comp(rows_v)
        }
        (Op::Gemm { a, n, b, seg, rhs }, Witness::Gemm { x, w, y }) => {
            shape("gemm input", x, *a, *n)?;
            shape("gemm operand", w, *n, *b)?;
            shape("gemm output", y, *a, *b)?;
            expect_eq(&spec.name, y.data(), kernels::gemm(x, w)?.data())?;
            let nb = n.div_ceil(*seg);
            let wt = w.transpose();
            let t = match rhs {
                GemmRhs::Weight { leaf_offset } => {
                    let t = tree_of(tree)?;
                    for (i, leaf) in gemm_weight_leaves(w, *seg).iter().enumerate() {
                        if t.leaf(leaf_offset + i) != Some(leaf) {
                            return Err(ProveError::WeightDigestMismatch(spec.name.clone()));
                        }
                    }
                    Some((t, *leaf_offset))
                }
                GemmRhs::Activation { .. } => None,
            };
            let blocks = map_range(nb, |k| {
                let r = k * seg..(k * seg + seg).min(*n);
                let xs = (0..*a).map(|i| seg_node(kind, format!("s{i}"), vec![x.row(i)[r.clone()].to_vec()])).collect();
                let ws = (0..*b)
                    .map(|j| {
                        let mut s = seg_node(kind, format!("s{j}"), vec![wt.row(j)[r.clone()].to_vec()]);
                        if let Some((t, off)) = t {
                            s.opening.as_mut().expect("segment").paths.push(path(t, off + j * nb + k)?);
                        }
                        Ok(s)
                    })
                    .collect::<Result<Vec<_>, ProveError>>()?;
                let xp = inner(kind, Level::XProof, format!("x{k}"), None, xs);
                let wp = inner(kind, Level::WProof, format!("w{k}"), None, ws);
                Ok(inner(kind, Level::XwProof, format!("xw{k}"), None, vec![xp, wp]))
            });
            comp(blocks.into_iter().collect::<Result<_, ProveError>>()?)
        }
        (Op::TopK { rows, cols, k, order }, Witness::TopK { x, idx }) => {
            shape("topk input", x, *rows, *cols)?;
            shape("topk output", idx, *rows, *k)?;
            let bits = index_bits(*cols);
            let rows_v = map_range(*rows, |i| {
                let tags = tag_list(x.row(i), 0, bits, *order)?;
                let (sorted, _) = sort_with_witness(&tags, *order);
                let top: Vec<QInt> = sorted[..*k].iter().map(|&s| tag_index(s, bits, *order) as QInt).collect();
                expect_eq(&spec.name, idx.row(i), &top)?;
                let opening = Opening {
                    lanes: vec![x.row(i).to_vec(), sorted],
                    scalars: top.iter().map(|&v| v as i128).collect(),
                    ..Opening::default()
                };
                Ok(inner(kind, Level::Row, format!("r{i}"), Some(opening), Vec::new()))
            });
            comp(rows_v.into_iter().collect::<Result<_, ProveError>>()?)
        }
        (
            Op::ExpertSelector {
                rows,
                n_experts,
                grouping,
                active,
            },
            Witness::Experts { sp, s, outputs },
        ) => {
            shape("router scores", sp, *rows, *n_experts)?;
            shape("gate scores", s, *rows, *n_experts)?;
            if outputs.len() != active.len() {
                return Err(ProveError::ShapeMismatch("one gate column per active expert".into()));
            }
            let gs = grouping.validate(*n_experts)?;
            let ng = grouping.n_groups;
            let (bits, gbits) = (index_bits(*n_experts), index_bits(ng));
            let desc = SortOrder::Desc;
            let mut union = Vec::new();
            let mut children = Vec::with_capacity(2 * rows);
            for r in 0..*rows {
                let sel = expert_select(sp.row(r), grouping)?;
                for (p, &e) in active.iter().enumerate() {
                    shape("gate column", &outputs[p], *rows, 1)?;
                    let want = if sel.experts.contains(&e) { s.get(r, e) } else { 0 };
                    if outputs[p].get(r, 0) != want {
                        return Err(violation(format!("{}: gate column of expert {e}", spec.name)));
                    }
                }
                union.extend_from_slice(&sel.experts);
                let mut groups = Vec::with_capacity(ng);
                let mut sorted_groups = Vec::with_capacity(ng);
                let mut scores = Vec::with_capacity(ng);
                let mut cand_tags = Vec::new();
                for g in 0..ng {
                    let cols = g * gs..(g + 1) * gs;
                    let tags = tag_list(&sp.row(r)[cols.clone()], g * gs, bits, desc)?;
                    let (sorted, _) = sort_with_witness(&tags, desc);
                    scores.push(QInt::try_from(sel.group_scores[g]).map_err(|_| violation("group score overflow"))?);
                    groups.push(inner(
                        kind,
                        Level::Group,
                        format!("g{g}"),
                        Some(Opening::lanes(vec![sp.row(r)[cols.clone()].to_vec(), s.row(r)[cols].to_vec(), sorted])),
                        Vec::new(),
                    ));
                    let cands = if sel.groups.contains(&g) { tags } else { Vec::new() };
                    cand_tags.extend_from_slice(&cands);
                    sorted_groups.push(inner(kind, Level::SortedGroup, format!("sg{g}"), Some(Opening::lanes(vec![cands])), Vec::new()));
                }
                let gtags = tag_list(&scores, 0, gbits, desc)?;
                let (gsorted, _) = sort_with_witness(&gtags, desc);
                let (csorted, _) = sort_with_witness(&cand_tags, desc);
                children.push(inner(kind, Level::GroupRow, format!("gr{r}"), Some(Opening::lanes(vec![scores, gsorted])), groups));
                children.push(inner(kind, Level::SortedGroupRow, format!("sgr{r}"), Some(Opening::lanes(vec![csorted])), sorted_groups));
            }
            union.sort_unstable();
            union.dedup();
            if union != *active {
                return Err(violation(format!("{}: active expert set", spec.name)));
            }
            comp(children)
        }
        _ => return Err(ProveError::ShapeMismatch(format!("{}: witness does not fit the op", spec.name))),
    };
    Ok(node)
}

fn tag_list(vals: &[QInt], base: usize, bits: u32, order: SortOrder) -> Result<Vec<QInt>, ProveError> {
    vals.iter()
        .enumerate()
        .map(|(m, &v)| sort_tag(v, base + m, bits, order).ok_or_else(|| violation("sort key exceeds the field window")))
        .collect()
}

/// Builds and seals one standalone component under fixed challenges.
pub fn prove_component(
    spec: &ComponentSpec,
    wit: Witness,
    tree: Option<&MerkleTree>,
    tables: &KernelTables,
    challenges: Challenges,
) -> Result<ProofNode, ProveError> {
    let mut node = build_component(spec, wit, tree, tables)?;
    let ctx = VerifyCtx {
        model_root: tree.map_or(Digest::SENTINEL, MerkleTree::root),
        tables,
        challenges,
        mode: Mode::Replay,
    };
    seal_component(spec, &mut node, &ctx, true)?;
    Ok(node)
}

/// `Y_raw = X * W` against a committed weight at `leaf_offset`.
#[allow(clippy::too_many_arguments)]
pub fn prove_gemm(
    name: &str,
    x: &QTensor,
    w: &QTensor,
    y_raw: &QTensor,
    seg: usize,
    leaf_offset: usize,
    tree: &MerkleTree,
    tables: &KernelTables,
    ch: Challenges,
) -> Result<(ComponentSpec, ProofNode), ProveError> {
    let spec = ComponentSpec::new(
        name,
        Op::Gemm {
            a: x.rows(),
            n: x.cols(),
            b: w.cols(),
            seg,
            rhs: GemmRhs::Weight { leaf_offset },
        },
        &["x"],
        &["y"],
    );
    let node = prove_component(&spec, Witness::Gemm { x, w, y: y_raw }, Some(tree), tables, ch)?;
    Ok((spec, node))
}

/// Activation-by-activation product; `rhs` is the producer tensor in `layout`.
#[allow(clippy::too_many_arguments)]
pub fn prove_gemm_activation(
    name: &str,
    x: &QTensor,
    rhs: &QTensor,
    layout: Layout,
    y_raw: &QTensor,
    seg: usize,
    tables: &KernelTables,
    ch: Challenges,
) -> Result<(ComponentSpec, ProofNode), ProveError> {
    let w = match layout {
        Layout::RowMajor => rhs.clone(),
        Layout::Transposed => rhs.transpose(),
    };
    let spec = ComponentSpec::new(
        name,
        Op::Gemm {
            a: x.rows(),
            n: x.cols(),
            b: w.cols(),
            seg,
            rhs: GemmRhs::Activation { layout },
        },
        &["x", "w"],
        &["y"],
    );
    let node = prove_component(&spec, Witness::Gemm { x, w: &w, y: y_raw }, None, tables, ch)?;
    Ok((spec, node))
}

pub fn prove_topk(name: &str, x: &QTensor, k: usize, order: SortOrder, tables: &KernelTables, ch: Challenges) -> Result<(ComponentSpec, ProofNode, QTensor), ProveError> {
    let bits = index_bits(x.cols());
    let mut idx = Vec::with_capacity(x.rows() * k);
    for i in 0..x.rows() {
        let tags = tag_list(x.row(i), 0, bits, order)?;
        let (sorted, _) = sort_with_witness(&tags, order);
        idx.extend(sorted.iter().take(k).map(|&s| tag_index(s, bits, order) as QInt));
    }
    let idx = QTensor::new(x.rows(), k, idx)?;
    let spec = ComponentSpec::new(
        name,
        Op::TopK {
            rows: x.rows(),
            cols: x.cols(),
            k,
            order,
        },
        &["x"],
        &["idx"],
    );
    let node = prove_component(&spec, Witness::TopK { x, idx: &idx }, None, tables, ch)?;
    Ok((spec, node, idx))
}
