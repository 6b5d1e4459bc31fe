//! Replay of component proofs: for every node, the claim it must carry given
//! its opening, its children and the position the public spec assigns it.
//! Both sides use this: the prover to fill claims in, the verifier to
//! compare.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::commit::{hash_segment, inner_product, merkle_verify, zmul_strided, AuthPath, Digest};
use crate::field::{char_poly_eval, embed_unchecked, FieldElement, SIGNED_WINDOW};
use crate::kernels::{shift_split, SortOrder};
use crate::par::map_range;

use super::node::{Aux, Claim, Kind, Level, Opening, ProofNode, Span, WEIGHT_MERGE_TAG};
use super::spec::{ComponentSpec, ElemOp, GemmRhs, Layout, Op, Operand, VerifyCtx};

pub const WSEG_TAG: &str = "VT-WSEG";
pub const VSEG_TAG: &str = "VT-VSEG";
pub const VROW_TAG: &str = "VT-VROW";
pub const ROPE_TAG: &str = "VT-ROPE";

/// Expected claims mirroring a node tree, with the first constraint each
/// node violated.
#[derive(Clone, Debug)]
pub struct ClaimTree {
    pub claim: Claim,
    pub fail: Option<&'static str>,
    pub children: Vec<ClaimTree>,
}

impl ClaimTree {
    fn stored(node: &ProofNode, fail: &'static str) -> Self {
        Self {
            claim: node.claim.clone(),
            fail: Some(fail),
            children: Vec::new(),
        }
    }
}

#[derive(Default)]
struct Chk(Option<&'static str>);

impl Chk {
    fn req(&mut self, ok: bool, name: &'static str) {
        if !ok && self.0.is_none() {
            self.0 = Some(name);
        }
    }
}

fn in_window(lanes: &[Vec<i64>]) -> bool {
    lanes
        .iter()
        .flatten()
        .all(|&v| (-SIGNED_WINDOW..=SIGNED_WINDOW).contains(&(v as i128)))
}

fn shape_ok(node: &ProofNode, level: Level, label: &str, children: usize) -> bool {
    node.level == level && node.label == label && node.children.len() == children
}

fn opening_ok(o: &Opening, lanes: &[usize], scalars: usize, paths: usize) -> bool {
    o.lanes.len() == lanes.len()
        && o.lanes.iter().zip(lanes).all(|(l, &n)| l.len() == n)
        && o.scalars.len() == scalars
        && o.paths.len() == paths
        && in_window(&o.lanes)
}

/// Validates a childless node and runs `f` on its opening, or returns the
/// stored claim if the node is not sampled.
fn leaf(
    node: &ProofNode,
    level: Level,
    label: &str,
    lanes: &[usize],
    paths: usize,
    sampled: bool,
    f: impl FnOnce(&Opening, &mut Chk) -> Claim,
) -> ClaimTree {
    let Some(o) = node.opening.as_ref() else {
        return ClaimTree::stored(node, "structure");
    };
    if !shape_ok(node, level, label, 0) || !opening_ok(o, lanes, 0, paths) {
        return ClaimTree::stored(node, "structure");
    }
    if !sampled {
        return ClaimTree {
            claim: node.claim.clone(),
            fail: None,
            children: Vec::new(),
        };
    }
    let mut chk = Chk::default();
    let claim = f(o, &mut chk);
    ClaimTree {
        claim,
        fail: chk.0,
        children: Vec::new(),
    }
}

fn combine(kind: Kind, trees: &[ClaimTree], tag: &str) -> (Claim, Option<&'static str>) {
    let refs: Vec<&Claim> = trees.iter().map(|t| &t.claim).collect();
    match Claim::combine(kind, &refs, tag) {
        Some(c) => (c, None),
        None => (
            Claim {
                kind,
                ..Claim::default()
            },
            Some("combine"),
        ),
    }
}

fn path_ok(ctx: &VerifyCtx, o: &Opening, idx: usize, leaf: &Digest) -> bool {
    let (i, path): &(u64, AuthPath) = &o.paths[0];
    *i == idx as u64 && merkle_verify(&ctx.model_root, idx, leaf, path)
}

fn div_ok(num: i128, den: i128, q: i64, r: i64) -> bool {
    den > 0
        && (0..den).contains(&(r as i128))
        && (q as i128).checked_mul(den).and_then(|v| v.checked_add(r as i128)) == Some(num)
}

struct Seg {
    row: usize,
    block: usize,
    c0: usize,
    len: usize,
}

impl Seg {
    fn span(&self) -> Span {
        Span::new((self.row, self.row + 1), (self.c0, self.c0 + self.len))
    }
}

fn blocks(n: usize, s: usize) -> usize {
    n.div_ceil(s)
}

fn block_len(n: usize, s: usize, k: usize) -> usize {
    s.min(n - k * s)
}

pub fn eval_component(spec: &ComponentSpec, node: &ProofNode, ctx: &VerifyCtx) -> ClaimTree {
    match &spec.op {
        Op::Gemm { a, n, b, seg, rhs } => eval_gemm(spec, node, ctx, *a, *n, *b, *seg, *rhs),
        Op::Rope {
            rows,
            heads,
            head_dim,
            positions,
            leaf_offset,
            scale_bits,
        } => eval_rope(spec, node, ctx, *rows, *heads, *head_dim, positions, *leaf_offset, *scale_bits),
        Op::Softmax {
            rows,
            heads,
            width,
            seg,
            valid,
        } => eval_softmax(spec, node, ctx, *rows, *heads, *width, *seg, valid),
        Op::TopK { rows, cols, k, order } => eval_topk(spec, node, ctx, *rows, *cols, *k, *order),
        Op::ExpertSelector { .. } => eval_experts(spec, node, ctx),
        _ => eval_grid_op(spec, node, ctx),
    }
}

/// Component -> rows -> segments, with optional per-row context parsed from
/// the row opening and a per-row wrap check.
#[allow(clippy::too_many_arguments)]
fn eval_grid<R: Sync>(
    spec: &ComponentSpec,
    node: &ProofNode,
    rows: usize,
    cols: usize,
    seg: usize,
    row_tag: &str,
    row_ctx: impl Fn(usize, &ProofNode) -> Result<R, &'static str> + Sync + Send,
    seg_fn: impl Fn(&R, Seg, &ProofNode) -> ClaimTree + Sync + Send,
    row_wrap: impl Fn(&R, usize, &ProofNode, &mut Claim) -> Option<&'static str> + Sync + Send,
) -> ClaimTree {
    let kind = spec.op.kind();
    if !shape_ok(node, Level::Component, &spec.name, rows) || node.opening.is_some() {
        return ClaimTree::stored(node, "structure");
    }
    let nseg = blocks(cols, seg);
    let row_trees = map_range(rows, |i| {
        let rn = &node.children[i];
        if !shape_ok(rn, Level::Row, &format!("r{i}"), nseg) {
            return ClaimTree::stored(rn, "structure");
        }
        let r = match row_ctx(i, rn) {
            Ok(r) => r,
            Err(e) => return ClaimTree::stored(rn, e),
        };
        let segs: Vec<ClaimTree> = (0..nseg)
            .map(|k| {
                let s = Seg {
                    row: i,
                    block: k,
                    c0: k * seg,
                    len: block_len(cols, seg, k),
                };
                seg_fn(&r, s, &rn.children[k])
            })
            .collect();
        let (mut claim, mut fail) = combine(kind, &segs, row_tag);
        if fail.is_none() {
            fail = row_wrap(&r, i, rn, &mut claim);
        }
        ClaimTree {
            claim,
            fail,
            children: segs,
        }
    });
    let (claim, fail) = combine(kind, &row_trees, WEIGHT_MERGE_TAG);
    ClaimTree {
        claim,
        fail,
        children: row_trees,
    }
}

fn no_row_opening(_: usize, rn: &ProofNode) -> Result<(), &'static str> {
    if rn.opening.is_some() {
        Err("structure")
    } else {
        Ok(())
    }
}

fn no_wrap<R>(_: &R, _: usize, _: &ProofNode, _: &mut Claim) -> Option<&'static str> {
    None
}

fn eval_grid_op(spec: &ComponentSpec, node: &ProofNode, ctx: &VerifyCtx) -> ClaimTree {
    let z = ctx.challenges.z;
    let kind = spec.op.kind();
    let q = ctx.tables.cfg.q;
    let one = 1i128 << q;
    let name = spec.name.as_str();
    let seg_label = |s: &Seg| format!("s{}", s.block);
    match &spec.op {
        Op::Embedding {
            tokens,
            dim,
            seg,
            leaf_offset,
        } => eval_grid(
            spec,
            node,
            tokens.len(),
            *dim,
            *seg,
            VROW_TAG,
            |i, rn| {
                let o = rn.opening.as_ref().ok_or("structure")?;
                if !opening_ok(o, &[], 1, 1) {
                    return Err("structure");
                }
                if o.scalars[0] != tokens[i] as i128 {
                    return Err("token");
                }
                Ok(())
            },
            |_, s, sn| {
                leaf(sn, Level::Segment, &seg_label(&s), &[s.len], 0, ctx.sampled(name, [s.row, s.block, 0]), |o, _| Claim {
                    kind,
                    outputs: vec![zmul_strided(&o.lanes[0], z, (s.row * dim + s.c0) as u64, 1)],
                    weight_digest: Some(hash_segment(VSEG_TAG, &o.lanes[0])),
                    span: s.span(),
                    ..Claim::default()
                })
            },
            |_, i, rn, claim| {
                let o = rn.opening.as_ref().expect("checked by row_ctx");
                let row_digest = claim.weight_digest.unwrap_or_default();
                if path_ok(ctx, o, leaf_offset + tokens[i] as usize, &row_digest) {
                    None
                } else {
                    Some("vocab-digest")
                }
            },
        ),
        Op::Rescale { rows, cols, seg, shift } => {
            let d = 1i128 << shift;
            eval_grid(
                spec,
                node,
                *rows,
                *cols,
                *seg,
                WEIGHT_MERGE_TAG,
                no_row_opening,
                |_, s, sn| {
                    leaf(sn, Level::Segment, &seg_label(&s), &[s.len; 3], 0, ctx.sampled(name, [s.row, s.block, 0]), |o, chk| {
                        let (raw, y, r) = (&o.lanes[0], &o.lanes[1], &o.lanes[2]);
                        for m in 0..s.len {
                            chk.req(div_ok(raw[m] as i128, d, y[m], r[m]), "rescale");
                        }
                        let e0 = (s.row * cols + s.c0) as u64;
                        Claim {
                            kind,
                            inputs: vec![zmul_strided(raw, z, e0, 1)],
                            outputs: vec![zmul_strided(y, z, e0, 1)],
                            span: s.span(),
                            ..Claim::default()
                        }
                    })
                },
                no_wrap,
            )
        }
        Op::RmsNorm {
            rows,
            dim,
            seg,
            leaf_offset,
        } => eval_grid(
            spec,
            node,
            *rows,
            *dim,
            *seg,
            WEIGHT_MERGE_TAG,
            |_, rn| {
                let o = rn.opening.as_ref().ok_or("structure")?;
                if !opening_ok(o, &[], 3, 0) {
                    return Err("structure");
                }
                let (quot, rem, rms) = (o.scalars[0], o.scalars[1], o.scalars[2]);
                if !(1..SIGNED_WINDOW).contains(&rms) {
                    return Err("eq6");
                }
                Ok((quot, rem, rms))
            },
            |&(_, _, rms), s, sn| {
                leaf(sn, Level::Segment, &seg_label(&s), &[s.len; 4], 1, ctx.sampled(name, [s.row, s.block, 0]), |o, chk| {
                    let (x, w, y, r) = (&o.lanes[0], &o.lanes[1], &o.lanes[2], &o.lanes[3]);
                    let den = rms << q;
                    let mut sum_sq: i128 = 0;
                    for m in 0..s.len {
                        let num = (x[m] as i128 * w[m] as i128).checked_mul(one);
                        chk.req(num.is_some_and(|num| div_ok(num, den, y[m], r[m])), "eq7");
                        match sum_sq.checked_add(x[m] as i128 * x[m] as i128) {
                            Some(v) => sum_sq = v,
                            None => chk.req(false, "overflow"),
                        }
                    }
                    let wd = hash_segment(WSEG_TAG, w);
                    chk.req(path_ok(ctx, o, leaf_offset + s.block, &wd), "weight-digest");
                    let e0 = (s.row * dim + s.c0) as u64;
                    Claim {
                        kind,
                        inputs: vec![zmul_strided(x, z, e0, 1)],
                        outputs: vec![zmul_strided(y, z, e0, 1)],
                        weight_digest: Some(wd),
                        aux: vec![Aux::Sum(sum_sq)],
                        span: s.span(),
                        ..Claim::default()
                    }
                })
            },
            |&(quot, rem, rms), _, _, claim| {
                let sum_sq = match claim.aux.as_slice() {
                    [Aux::Sum(v)] => *v,
                    _ => return Some("structure"),
                };
                claim.aux.clear();
                let n = *dim as i128;
                let split = quot >= 0 && (0..n).contains(&rem) && quot.checked_mul(n).and_then(|v| v.checked_add(rem)) == Some(sum_sq);
                let root = split && rms * rms <= quot + 1 && quot + 1 < (rms + 1) * (rms + 1);
                if split && root {
                    None
                } else {
                    Some("eq6")
                }
            },
        ),
        Op::Sigmoid { rows, cols, seg } | Op::Silu { rows, cols, seg } => {
            let silu = matches!(spec.op, Op::Silu { .. });
            let nl = if silu { 12 } else { 10 };
            let (l, log2e) = (ctx.tables.cfg.l, ctx.tables.log2e_q as i128);
            eval_grid(
                spec,
                node,
                *rows,
                *cols,
                *seg,
                WEIGHT_MERGE_TAG,
                no_row_opening,
                |_, s, sn| {
                    let lanes = vec![s.len; nl];
                    leaf(sn, Level::Segment, &seg_label(&s), &lanes, 0, ctx.sampled(name, [s.row, s.block, 0]), |o, chk| {
                        let v = &o.lanes;
                        for m in 0..s.len {
                            let [x, y, yr, k, f, idx, t, u, sig, sr] = core::array::from_fn(|c| v[c][m] as i128);
                            chk.req(div_ok(-x * log2e, one, y as i64, yr as i64), "step2");
                            chk.req(div_ok(y, one, k as i64, f as i64) && idx == f >> (q - l), "step3");
                            let entry = usize::try_from(idx).ok().and_then(|i| ctx.tables.pos.entries.get(i));
                            chk.req(entry == Some(&(t as i64)), "table");
                            chk.req(u == shift_split(t, k, q), "shift-split");
                            chk.req(div_ok(1i128 << (2 * q), one + u, sig as i64, sr as i64), "sigma-div");
                            if silu {
                                chk.req(div_ok(x * sig, one, v[10][m], v[11][m]), "silu-div");
                            }
                        }
                        let e0 = (s.row * cols + s.c0) as u64;
                        let out = if silu { &v[10] } else { &v[8] };
                        Claim {
                            kind,
                            inputs: vec![zmul_strided(&v[0], z, e0, 1)],
                            outputs: vec![zmul_strided(out, z, e0, 1)],
                            span: s.span(),
                            ..Claim::default()
                        }
                    })
                },
                no_wrap,
            )
        }
        Op::Elementwise {
            rows,
            cols,
            seg,
            op,
            operand,
        } => {
            let nl = if *op == ElemOp::Mul { 4 } else { 3 };
            let paths = usize::from(matches!(operand, Operand::WeightRow { .. }));
            eval_grid(
                spec,
                node,
                *rows,
                *cols,
                *seg,
                WEIGHT_MERGE_TAG,
                no_row_opening,
                |_, s, sn| {
                    let lanes = vec![s.len; nl];
                    leaf(sn, Level::Segment, &seg_label(&s), &lanes, paths, ctx.sampled(name, [s.row, s.block, 0]), |o, chk| {
                        let (x, b, y) = (&o.lanes[0], &o.lanes[1], &o.lanes[2]);
                        for m in 0..s.len {
                            match op {
                                ElemOp::Add => chk.req(y[m] as i128 == x[m] as i128 + b[m] as i128, "add"),
                                ElemOp::Mul => chk.req(div_ok(x[m] as i128 * b[m] as i128, one, y[m], o.lanes[3][m]), "mul"),
                            }
                        }
                        let e0 = (s.row * cols + s.c0) as u64;
                        let mut claim = Claim {
                            kind,
                            inputs: vec![zmul_strided(x, z, e0, 1)],
                            outputs: vec![zmul_strided(y, z, e0, 1)],
                            span: s.span(),
                            ..Claim::default()
                        };
                        match operand {
                            Operand::WeightRow { leaf_offset } => {
                                let wd = hash_segment(WSEG_TAG, b);
                                chk.req(path_ok(ctx, o, leaf_offset + s.block, &wd), "weight-digest");
                                claim.weight_digest = Some(wd);
                            }
                            Operand::Activation => claim.inputs.push(zmul_strided(b, z, e0, 1)),
                            Operand::ActivationCol => {
                                chk.req(b.iter().all(|&v| v == b[0]), "broadcast");
                                claim.inputs.push(if s.block == 0 {
                                    z.pow(s.row as u64) * embed_unchecked(b[0])
                                } else {
                                    FieldElement::ZERO
                                });
                            }
                        }
                        claim
                    })
                },
                no_wrap,
            )
        }
        _ => unreachable!("dispatched elsewhere"),
    }
}

#[allow(clippy::too_many_arguments)]
fn eval_gemm(spec: &ComponentSpec, node: &ProofNode, ctx: &VerifyCtx, a: usize, n: usize, b: usize, seg: usize, rhs: GemmRhs) -> ClaimTree {
    let z = ctx.challenges.z;
    let nb = blocks(n, seg);
    if !shape_ok(node, Level::Component, &spec.name, nb) || node.opening.is_some() {
        return ClaimTree::stored(node, "structure");
    }
    let name = spec.name.as_str();
    let xw_trees = map_range(nb, |k| {
        let xw = &node.children[k];
        if !shape_ok(xw, Level::XwProof, &format!("xw{k}"), 2) || xw.opening.is_some() {
            return ClaimTree::stored(xw, "structure");
        }
        let (xn, wn) = (&xw.children[0], &xw.children[1]);
        let len = block_len(n, seg, k);
        let k0 = k * seg;
        let x_tree = if !shape_ok(xn, Level::XProof, &format!("x{k}"), a) || xn.opening.is_some() {
            ClaimTree::stored(xn, "structure")
        } else {
            let segs: Vec<ClaimTree> = (0..a)
                .map(|i| {
                    leaf(&xn.children[i], Level::Segment, &format!("s{i}"), &[len], 0, ctx.sampled(name, [0, i, k]), |o, _| {
                        let x = &o.lanes[0];
                        let zi = z.pow((i * b) as u64);
                        Claim {
                            kind: Kind::Gemm,
                            inputs: vec![zmul_strided(x, z, (i * n + k0) as u64, 1)],
                            vector: x.iter().map(|&v| zi * embed_unchecked(v)).collect(),
                            span: Span::new((i, i + 1), (k0, k0 + len)),
                            ..Claim::default()
                        }
                    })
                })
                .collect();
            let (claim, fail) = combine(Kind::Gemm, &segs, WEIGHT_MERGE_TAG);
            ClaimTree {
                claim,
                fail,
                children: segs,
            }
        };
        let w_tree = if !shape_ok(wn, Level::WProof, &format!("w{k}"), b) || wn.opening.is_some() {
            ClaimTree::stored(wn, "structure")
        } else {
            let paths = usize::from(matches!(rhs, GemmRhs::Weight { .. }));
            let segs: Vec<ClaimTree> = (0..b)
                .map(|j| {
                    leaf(&wn.children[j], Level::Segment, &format!("s{j}"), &[len], paths, ctx.sampled(name, [1, j, k]), |o, chk| {
                        let w = &o.lanes[0];
                        let zj = z.pow(j as u64);
                        let mut claim = Claim {
                            kind: Kind::Gemm,
                            vector: w.iter().map(|&v| zj * embed_unchecked(v)).collect(),
                            span: Span::new((k0, k0 + len), (j, j + 1)),
                            ..Claim::default()
                        };
                        match rhs {
                            GemmRhs::Weight { leaf_offset } => {
                                let wd = hash_segment(WSEG_TAG, w);
                                chk.req(path_ok(ctx, o, leaf_offset + j * nb + k, &wd), "weight-digest");
                                claim.weight_digest = Some(wd);
                            }
                            GemmRhs::Activation { layout: Layout::RowMajor } => {
                                claim.inputs.push(zmul_strided(w, z, (k0 * b + j) as u64, b as u64));
                            }
                            GemmRhs::Activation { layout: Layout::Transposed } => {
                                claim.inputs.push(zmul_strided(w, z, (j * n + k0) as u64, 1));
                            }
                        }
                        claim
                    })
                })
                .collect();
            let (claim, fail) = combine(Kind::Gemm, &segs, WEIGHT_MERGE_TAG);
            ClaimTree {
                claim,
                fail,
                children: segs,
            }
        };
        let (xc, wc) = (&x_tree.claim, &w_tree.claim);
        let mut fail = None;
        if xc.vector.len() != len || wc.vector.len() != len {
            fail = Some("structure");
        }
        let mut inputs = xc.inputs.clone();
        inputs.extend_from_slice(&wc.inputs);
        let claim = Claim {
            kind: Kind::Gemm,
            inputs,
            outputs: vec![inner_product(&xc.vector, &wc.vector)],
            weight_digest: wc.weight_digest,
            span: Span::new((0, a), (k0, k0 + len)),
            ..Claim::default()
        };
        ClaimTree {
            claim,
            fail,
            children: vec![x_tree, w_tree],
        }
    });
    let (claim, fail) = combine(Kind::Gemm, &xw_trees, WEIGHT_MERGE_TAG);
    ClaimTree {
        claim,
        fail,
        children: xw_trees,
    }
}

#[allow(clippy::too_many_arguments)]
fn eval_rope(
    spec: &ComponentSpec,
    node: &ProofNode,
    ctx: &VerifyCtx,
    rows: usize,
    heads: usize,
    hd: usize,
    positions: &[usize],
    leaf_offset: usize,
    sb: u32,
) -> ClaimTree {
    let z = ctx.challenges.z;
    if !shape_ok(node, Level::Component, &spec.name, rows) || node.opening.is_some() || positions.len() != rows || !hd.is_multiple_of(2) {
        return ClaimTree::stored(node, "structure");
    }
    let d = 1i128 << sb;
    let width = heads * hd;
    let row_trees = map_range(rows, |i| {
        let rn = &node.children[i];
        let Some(ro) = rn.opening.as_ref() else {
            return ClaimTree::stored(rn, "structure");
        };
        if !shape_ok(rn, Level::Row, &format!("r{i}"), heads) || !opening_ok(ro, &[hd], 1, 1) {
            return ClaimTree::stored(rn, "structure");
        }
        let table = &ro.lanes[0];
        let heads_t: Vec<ClaimTree> = (0..heads)
            .map(|h| {
                leaf(&rn.children[h], Level::Head, &format!("h{h}"), &[hd; 3], 0, ctx.sampled(&spec.name, [i, h, 0]), |o, chk| {
                    let (x, y, r) = (&o.lanes[0], &o.lanes[1], &o.lanes[2]);
                    for p in 0..hd / 2 {
                        let (x0, x1) = (x[2 * p] as i128, x[2 * p + 1] as i128);
                        let (c, s) = (table[2 * p] as i128, table[2 * p + 1] as i128);
                        chk.req(div_ok(x0 * c - x1 * s, d, y[2 * p], r[2 * p]), "eq8");
                        chk.req(div_ok(x1 * c + x0 * s, d, y[2 * p + 1], r[2 * p + 1]), "eq8");
                    }
                    let e0 = (i * width + h * hd) as u64;
                    Claim {
                        kind: Kind::Rope,
                        inputs: vec![zmul_strided(x, z, e0, 1)],
                        outputs: vec![zmul_strided(y, z, e0, 1)],
                        span: Span::new((i, i + 1), (h * hd, (h + 1) * hd)),
                        ..Claim::default()
                    }
                })
            })
            .collect();
        let (mut claim, mut fail) = combine(Kind::Rope, &heads_t, WEIGHT_MERGE_TAG);
        let leaf_digest = hash_segment(ROPE_TAG, table);
        claim.weight_digest = Some(leaf_digest);
        if fail.is_none() {
            let pos_ok = ro.scalars[0] == positions[i] as i128;
            if !pos_ok || !path_ok(ctx, ro, leaf_offset + positions[i], &leaf_digest) {
                fail = Some("rope-table-digest");
            }
        }
        ClaimTree {
            claim,
            fail,
            children: heads_t,
        }
    });
    let (claim, fail) = combine(Kind::Rope, &row_trees, WEIGHT_MERGE_TAG);
    ClaimTree {
        claim,
        fail,
        children: row_trees,
    }
}

#[allow(clippy::too_many_arguments)]
fn eval_softmax(
    spec: &ComponentSpec,
    node: &ProofNode,
    ctx: &VerifyCtx,
    rows: usize,
    heads: usize,
    width: usize,
    seg: usize,
    valid: &[usize],
) -> ClaimTree {
    let z = ctx.challenges.z;
    if !shape_ok(node, Level::Component, &spec.name, rows) || node.opening.is_some() || valid.len() != rows {
        return ClaimTree::stored(node, "structure");
    }
    let cfg = ctx.tables.cfg;
    let (q, l) = (cfg.q, cfg.l);
    let one = 1i128 << q;
    let log2e = ctx.tables.log2e_q as i128;
    let neg_inf = cfg.neg_inf_q as i128;
    let nseg = blocks(width, seg);
    let row_trees = map_range(rows, |i| {
        let rn = &node.children[i];
        if !shape_ok(rn, Level::Row, &format!("r{i}"), heads) || rn.opening.is_some() {
            return ClaimTree::stored(rn, "structure");
        }
        let head_trees: Vec<ClaimTree> = (0..heads)
            .map(|h| {
                let hn = &rn.children[h];
                let Some(ho) = hn.opening.as_ref() else {
                    return ClaimTree::stored(hn, "structure");
                };
                if !shape_ok(hn, Level::Head, &format!("h{h}"), nseg) || !opening_ok(ho, &[], 2, 0) {
                    return ClaimTree::stored(hn, "structure");
                }
                let (x_max, sum) = (ho.scalars[0], ho.scalars[1]);
                let segs: Vec<ClaimTree> = (0..nseg)
                    .map(|k| {
                        let len = block_len(width, seg, k);
                        let c0 = k * seg;
                        leaf(&hn.children[k], Level::Segment, &format!("s{k}"), &[len; 11], 0, ctx.sampled(&spec.name, [i, h, k]), |o, chk| {
                            let v = &o.lanes;
                            let (mut sw, mut zeros, mut sp) = (0i128, 0i128, 0i128);
                            for m in 0..len {
                                let [x, delta, y, yr, kk, f, idx, t, w, p, pr] = core::array::from_fn(|c| v[c][m] as i128);
                                let x_eff = if c0 + m < valid[i] { x } else { neg_inf };
                                chk.req(delta == x_eff - x_max && delta <= 0, "step1");
                                chk.req(div_ok(delta * log2e, one, y as i64, yr as i64), "step2");
                                chk.req(div_ok(-y, one, kk as i64, f as i64) && idx == f >> (q - l), "step3");
                                let entry = usize::try_from(idx).ok().and_then(|i| ctx.tables.neg.entries.get(i));
                                let w_ok = kk >= 0 && w == if kk >= 63 { 0 } else { t >> kk };
                                chk.req(entry == Some(&(t as i64)) && w_ok, "step4");
                                chk.req(div_ok(w * one, sum, p as i64, pr as i64), "step5");
                                sw += w;
                                sp += p;
                                zeros += i128::from(delta == 0);
                            }
                            let e0 = (i * heads * width + h * width + c0) as u64;
                            Claim {
                                kind: Kind::Softmax,
                                inputs: vec![zmul_strided(&v[0], z, e0, 1)],
                                outputs: vec![zmul_strided(&v[9], z, e0, 1)],
                                aux: vec![Aux::Sum(sw), Aux::Sum(zeros), Aux::Sum(sp)],
                                span: Span::new((i, i + 1), (h * width + c0, h * width + c0 + len)),
                                ..Claim::default()
                            }
                        })
                    })
                    .collect();
                let (mut claim, mut fail) = combine(Kind::Softmax, &segs, WEIGHT_MERGE_TAG);
                if fail.is_none() {
                    fail = match claim.aux.as_slice() {
                        [Aux::Sum(sw), Aux::Sum(zeros), Aux::Sum(sp)] => {
                            if *sw != sum || sum <= 0 {
                                Some("sum-w")
                            } else if *zeros < 1 || x_max <= neg_inf {
                                Some("max")
                            } else if !((one - width as i128) < *sp && *sp <= one) {
                                Some("sum-bound")
                            } else {
                                None
                            }
                        }
                        _ => Some("structure"),
                    };
                }
                claim.aux.clear();
                ClaimTree {
                    claim,
                    fail,
                    children: segs,
                }
            })
            .collect();
        let (claim, fail) = combine(Kind::Softmax, &head_trees, WEIGHT_MERGE_TAG);
        ClaimTree {
            claim,
            fail,
            children: head_trees,
        }
    });
    let (claim, fail) = combine(Kind::Softmax, &row_trees, WEIGHT_MERGE_TAG);
    ClaimTree {
        claim,
        fail,
        children: row_trees,
    }
}

/// Bits needed to tag an index in `0..n`.
pub fn index_bits(n: usize) -> u32 {
    (usize::BITS - n.saturating_sub(1).leading_zeros()).max(1)
}

/// Distinct sort key: value in the high bits, index in the low bits arranged
/// so that ties resolve to the lowest index in either order.
pub fn sort_tag(v: i64, idx: usize, bits: u32, order: SortOrder) -> Option<i64> {
    let low = match order {
        SortOrder::Asc => idx as i128,
        SortOrder::Desc => (1i128 << bits) - 1 - idx as i128,
    };
    let tag = (v as i128).checked_mul(1i128 << bits)? + low;
    (-SIGNED_WINDOW..=SIGNED_WINDOW).contains(&tag).then_some(tag as i64)
}

pub fn tag_index(tag: i64, bits: u32, order: SortOrder) -> usize {
    let low = (tag as i128).rem_euclid(1i128 << bits);
    match order {
        SortOrder::Asc => low as usize,
        SortOrder::Desc => ((1i128 << bits) - 1 - low) as usize,
    }
}

pub fn tag_value(tag: i64, bits: u32) -> i128 {
    (tag as i128).div_euclid(1i128 << bits)
}

fn strictly_sorted(v: &[i64], order: SortOrder) -> bool {
    v.windows(2).all(|w| match order {
        SortOrder::Asc => w[0] < w[1],
        SortOrder::Desc => w[0] > w[1],
    })
}

fn poly(tags: &[i64], t: FieldElement) -> FieldElement {
    let f: Vec<FieldElement> = tags.iter().map(|&v| embed_unchecked(v)).collect();
    char_poly_eval(&f, t)
}

/// Permutation and order check of one tagged list against its sorted
/// witness; returns the input tags.
fn check_sorted(vals: &[i64], base: usize, sorted: &[i64], bits: u32, order: SortOrder, t: FieldElement, chk: &mut Chk) -> Vec<i64> {
    let tags: Vec<i64> = vals
        .iter()
        .enumerate()
        .map(|(m, &v)| match sort_tag(v, base + m, bits, order) {
            Some(tag) => tag,
            None => {
                chk.req(false, "window");
                0
            }
        })
        .collect();
    chk.req(poly(&tags, t) == poly(sorted, t), "permutation");
    chk.req(strictly_sorted(sorted, order), "order");
    tags
}

#[allow(clippy::too_many_arguments)]
fn eval_topk(spec: &ComponentSpec, node: &ProofNode, ctx: &VerifyCtx, rows: usize, cols: usize, k: usize, order: SortOrder) -> ClaimTree {
    let (z, t) = (ctx.challenges.z, ctx.challenges.t);
    if !shape_ok(node, Level::Component, &spec.name, rows) || node.opening.is_some() || k > cols {
        return ClaimTree::stored(node, "structure");
    }
    let bits = index_bits(cols);
    let row_trees = map_range(rows, |i| {
        let rn = &node.children[i];
        let Some(o) = rn.opening.as_ref() else {
            return ClaimTree::stored(rn, "structure");
        };
        if !shape_ok(rn, Level::Row, &format!("r{i}"), 0) || !opening_ok(o, &[cols, cols], k, 0) {
            return ClaimTree::stored(rn, "structure");
        }
        let mut chk = Chk::default();
        let (x, sorted) = (&o.lanes[0], &o.lanes[1]);
        let tags = check_sorted(x, 0, sorted, bits, order, t, &mut chk);
        let top: Vec<i128> = sorted[..k].iter().map(|&s| tag_index(s, bits, order) as i128).collect();
        chk.req(top == o.scalars, "topk");
        let idx: Vec<i64> = o.scalars.iter().map(|&s| s as i64).collect();
        ClaimTree {
            claim: Claim {
                kind: Kind::TopK,
                inputs: vec![zmul_strided(x, z, (i * cols) as u64, 1)],
                outputs: vec![zmul_strided(&idx, z, (i * k) as u64, 1)],
                aux: vec![Aux::Prod(poly(&tags, t)), Aux::Prod(poly(sorted, t))],
                span: Span::new((i, i + 1), (0, cols)),
                ..Claim::default()
            },
            fail: chk.0,
            children: Vec::new(),
        }
    });
    let (claim, fail) = combine(Kind::TopK, &row_trees, WEIGHT_MERGE_TAG);
    ClaimTree {
        claim,
        fail,
        children: row_trees,
    }
}

fn eval_experts(spec: &ComponentSpec, node: &ProofNode, ctx: &VerifyCtx) -> ClaimTree {
    let Op::ExpertSelector {
        rows,
        n_experts,
        grouping,
        active,
    } = &spec.op
    else {
        unreachable!()
    };
    let (rows, e_n) = (*rows, *n_experts);
    let (z, t) = (ctx.challenges.z, ctx.challenges.t);
    let Ok(gs) = grouping.validate(e_n) else {
        return ClaimTree::stored(node, "structure");
    };
    let ng = grouping.n_groups;
    if !shape_ok(node, Level::Component, &spec.name, 2 * rows) || node.opening.is_some() {
        return ClaimTree::stored(node, "structure");
    }
    let (bits, gbits) = (index_bits(e_n), index_bits(ng));
    let desc = SortOrder::Desc;
    let n_out = active.len();
    let blank = |aux: Vec<Aux>, span: Span| Claim {
        kind: Kind::ExpertSelector,
        inputs: vec![FieldElement::ZERO; 2],
        outputs: vec![FieldElement::ZERO; n_out],
        aux,
        span,
        ..Claim::default()
    };

    let pairs = map_range(rows, |r| {
        // first round: per-group ranking and group scores
        let grn = &node.children[2 * r];
        let gro = grn.opening.as_ref();
        let mut selected_groups: Option<Vec<usize>> = None;
        let gr_tree = match gro {
            Some(o) if shape_ok(grn, Level::GroupRow, &format!("gr{r}"), ng) && opening_ok(o, &[ng, ng], 0, 0) => {
                let groups: Vec<ClaimTree> = (0..ng)
                    .map(|g| {
                        leaf(&grn.children[g], Level::Group, &format!("g{g}"), &[gs; 3], 0, true, |o, chk| {
                            let (sp, s, sorted) = (&o.lanes[0], &o.lanes[1], &o.lanes[2]);
                            check_sorted(sp, g * gs, sorted, bits, desc, t, chk);
                            let score: i128 = sorted[..grouping.per_group_top].iter().map(|&v| tag_value(v, bits)).sum();
                            let e0 = (r * e_n + g * gs) as u64;
                            let mut c = blank(vec![Aux::Sum(score)], Span::new((r, r + 1), (g * gs, (g + 1) * gs)));
                            c.inputs = vec![zmul_strided(sp, z, e0, 1), zmul_strided(s, z, e0, 1)];
                            c
                        })
                    })
                    .collect();
                let (mut claim, mut fail) = combine(Kind::ExpertSelector, &groups, WEIGHT_MERGE_TAG);
                claim.aux.clear();
                let mut chk = Chk::default();
                let (scores, sorted) = (&o.lanes[0], &o.lanes[1]);
                for (g, gt) in groups.iter().enumerate() {
                    chk.req(gt.claim.aux.first() == Some(&Aux::Sum(scores[g] as i128)), "group-score");
                }
                check_sorted(scores, 0, sorted, gbits, desc, t, &mut chk);
                if fail.is_none() {
                    fail = chk.0;
                }
                if fail.is_none() && groups.iter().all(|g| g.fail.is_none()) {
                    let mut sel: Vec<usize> = sorted[..grouping.groups_selected].iter().map(|&v| tag_index(v, gbits, desc)).collect();
                    sel.sort_unstable();
                    selected_groups = Some(sel);
                }
                ClaimTree {
                    claim,
                    fail,
                    children: groups,
                }
            }
            _ => ClaimTree::stored(grn, "structure"),
        };

        // second round: candidates from surviving groups
        let sgn = &node.children[2 * r + 1];
        let n_cand = grouping.groups_selected * gs;
        let sg_tree = match (sgn.opening.as_ref(), &selected_groups) {
            (Some(o), Some(sel)) if shape_ok(sgn, Level::SortedGroupRow, &format!("sgr{r}"), ng) && opening_ok(o, &[n_cand], 0, 0) => {
                let sorted = &o.lanes[0];
                let chosen: Vec<usize> = sorted[..grouping.experts_selected].iter().map(|&v| tag_index(v, bits, desc)).collect();
                let children: Vec<ClaimTree> = (0..ng)
                    .map(|g| {
                        let cn = &sgn.children[g];
                        let is_sel = sel.contains(&g);
                        let want = if is_sel { gs } else { 0 };
                        let co = match cn.opening.as_ref() {
                            Some(co) if shape_ok(cn, Level::SortedGroup, &format!("sg{g}"), 0) && opening_ok(co, &[want], 0, 0) => co,
                            _ => return ClaimTree::stored(cn, "structure"),
                        };
                        let lanes = &grn.children[g].opening.as_ref().expect("group validated").lanes;
                        let (sp, s) = (&lanes[0], &lanes[1]);
                        let mut chk = Chk::default();
                        let span = Span::new((r, r + 1), (g * gs, (g + 1) * gs));
                        let mut claim = blank(vec![Aux::Prod(poly(&co.lanes[0], t))], span);
                        if is_sel {
                            let expect: Vec<Option<i64>> = (0..gs).map(|m| sort_tag(sp[m], g * gs + m, bits, desc)).collect();
                            chk.req(expect.iter().zip(&co.lanes[0]).all(|(e, &c)| *e == Some(c)), "candidates");
                            let zr = z.pow(r as u64);
                            for (port, &e) in active.iter().enumerate() {
                                if e / gs == g && chosen.contains(&e) {
                                    claim.outputs[port] = zr * embed_unchecked(s[e - g * gs]);
                                }
                            }
                        }
                        ClaimTree {
                            claim,
                            fail: chk.0,
                            children: Vec::new(),
                        }
                    })
                    .collect();
                let (mut claim, mut fail) = combine(Kind::ExpertSelector, &children, WEIGHT_MERGE_TAG);
                let mut chk = Chk::default();
                chk.req(claim.aux == vec![Aux::Prod(poly(sorted, t))], "permutation");
                chk.req(strictly_sorted(sorted, desc), "order");
                chk.req(chosen.iter().all(|e| active.contains(e)), "active-set");
                claim.aux.clear();
                if fail.is_none() {
                    fail = chk.0;
                }
                (
                    ClaimTree {
                        claim,
                        fail,
                        children,
                    },
                    chosen,
                )
            }
            (_, None) => (ClaimTree::stored(sgn, "group-row"), Vec::new()),
            _ => (ClaimTree::stored(sgn, "structure"), Vec::new()),
        };
        (gr_tree, sg_tree)
    });

    let mut union: Vec<usize> = Vec::new();
    let mut trees = Vec::with_capacity(2 * rows);
    for (gr, (sg, chosen)) in pairs {
        union.extend(chosen);
        trees.push(gr);
        trees.push(sg);
    }
    union.sort_unstable();
    union.dedup();
    let (claim, mut fail) = combine(Kind::ExpertSelector, &trees, WEIGHT_MERGE_TAG);
    if fail.is_none() && union != *active {
        fail = Some("active-set");
    }
    ClaimTree {
        claim,
        fail,
        children: trees,
    }
}

/// Human-readable label path helper for failures.
pub fn join_path(parent: &str, label: &str) -> String {
    if parent.is_empty() {
        label.into()
    } else {
        format!("{parent}/{label}")
    }
}
