use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::commit::{Digest, MerkleTree};
use crate::error::ProveError;
use crate::field::FieldElement;
use crate::fixed::{KernelTables, QuantConfig};
use crate::kernels::{self, Grouping, RopeTable, SortOrder};
use crate::tensor::{QInt, QTensor};
use crate::transcript::Challenges;

fn tables() -> KernelTables {
    KernelTables::new(QuantConfig::new(16, 8).unwrap()).unwrap()
}

fn ch() -> Challenges {
    Challenges {
        z: FieldElement::new(0x1234_5678_9abc_def1),
        t: FieldElement::new(0x0fed_cba9_8765_4321),
    }
}

fn ctx<'a>(tree: Option<&MerkleTree>, tables: &'a KernelTables) -> VerifyCtx<'a> {
    VerifyCtx {
        model_root: tree.map_or(Digest::SENTINEL, MerkleTree::root),
        tables,
        challenges: ch(),
        mode: Mode::Replay,
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: i64) -> QTensor {
    QTensor::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect()).unwrap()
}

/// Every opening value of a sealed proof, as `(opening index, lane, position)`.
fn lane_slots(node: &ProofNode) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    let mut n = 0;
    node.for_each_opening(&mut |o| {
        for (l, lane) in o.lanes.iter().enumerate() {
            for p in 0..lane.len() {
                out.push((n, l, p));
            }
        }
        n += 1;
    });
    out
}

fn bump(node: &mut ProofNode, slot: (usize, usize, usize), delta: i64) {
    let mut n = 0;
    node.for_each_opening_mut(&mut |o| {
        if n == slot.0 {
            o.lanes[slot.1][slot.2] += delta;
        }
        n += 1;
    });
}

fn by_level(mut v: Vec<(Level, usize)>) -> Vec<(Level, usize)> {
    v.sort_by_key(|(l, _)| *l as u8);
    v
}

/// Tampers one lane value and reseals honestly around it. The result must
/// either fail replay or expose different tensor ZMuls at the root, which
/// the cross-component links then refuse. Returns the replay failure.
fn assert_tamper_rejected(spec: &ComponentSpec, node: &ProofNode, c: &VerifyCtx, slot: (usize, usize, usize)) -> Option<Failure> {
    let mut bad = node.clone();
    bump(&mut bad, slot, 1);
    let raw = verify_component(spec, &bad, c);
    assert!(!raw.accepted, "unsealed tamper at {slot:?} accepted");
    seal_component(spec, &mut bad, c, false).unwrap();
    let v = verify_component(spec, &bad, c);
    let relinked = bad.claim.inputs != node.claim.inputs || bad.claim.outputs != node.claim.outputs;
    assert!(!v.accepted || relinked, "resealed tamper at {slot:?} accepted");
    v.failure
}

fn replay_failure(spec: &ComponentSpec, node: &ProofNode, c: &VerifyCtx, slot: (usize, usize, usize)) -> Failure {
    assert_tamper_rejected(spec, node, c, slot).expect("tamper must fail replay")
}

#[test]
fn gemm_single_entry() {
    let t = tables();
    let x = QTensor::new(1, 1, vec![3]).unwrap();
    let w = QTensor::new(1, 1, vec![4]).unwrap();
    let y = kernels::gemm(&x, &w).unwrap();
    assert_eq!(y.data(), &[12]);
    let tree = MerkleTree::build(gemm_weight_leaves(&w, 1)).unwrap();
    let (spec, node) = prove_gemm("g", &x, &w, &y, 1, 0, &tree, &t, ch()).unwrap();
    assert_eq!(node.level_counts(), by_level(spec.op.shape()));
    assert_eq!(node.children.len(), 1);
    // the root claim exposes zmul(X) and zmul(Y_raw)
    assert_eq!(node.claim.inputs, vec![FieldElement::new(3)]);
    assert_eq!(node.claim.outputs, vec![FieldElement::new(12)]);
    assert!(verify_component(&spec, &node, &ctx(Some(&tree), &t)).accepted);
}

#[test]
fn gemm_random_and_tampers() {
    let t = tables();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor(&mut rng, 4, 6, 1000);
    let w = rand_tensor(&mut rng, 6, 3, 1000);
    let y = kernels::gemm(&x, &w).unwrap();
    let tree = MerkleTree::build(gemm_weight_leaves(&w, 2)).unwrap();
    let (spec, node) = prove_gemm("g", &x, &w, &y, 2, 0, &tree, &t, ch()).unwrap();
    let c = ctx(Some(&tree), &t);
    assert!(verify_component(&spec, &node, &c).accepted);
    assert_eq!(node.claim.outputs[0], crate::commit::zmul(&y, ch().z));
    assert_eq!(node.claim.inputs[0], crate::commit::zmul(&x, ch().z));
    for slot in lane_slots(&node) {
        assert_tamper_rejected(&spec, &node, &c, slot);
    }
    // a W entry changed before proving no longer matches the commitment
    let mut wd = w.data().to_vec();
    wd[5] += 1;
    let w2 = QTensor::new(6, 3, wd).unwrap();
    let y2 = kernels::gemm(&x, &w2).unwrap();
    assert!(matches!(
        prove_gemm("g", &x, &w2, &y2, 2, 0, &tree, &t, ch()),
        Err(ProveError::WeightDigestMismatch(_))
    ));
    // a wrong output is refused outright
    let mut yd = y.data().to_vec();
    yd[0] += 1;
    let y3 = QTensor::new(4, 3, yd).unwrap();
    assert!(matches!(
        prove_gemm("g", &x, &w, &y3, 2, 0, &tree, &t, ch()),
        Err(ProveError::ConstraintViolation(_))
    ));
}

#[test]
fn gemm_short_final_block_and_activation_layouts() {
    let t = tables();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rand_tensor(&mut rng, 3, 7, 50);
    let k = rand_tensor(&mut rng, 5, 7, 50);
    let y = kernels::gemm(&x, &k.transpose()).unwrap();
    let (spec, node) = prove_gemm_activation("qk", &x, &k, Layout::Transposed, &y, 3, &t, ch()).unwrap();
    assert_eq!(node.children.len(), 3);
    assert!(verify_component(&spec, &node, &ctx(None, &t)).accepted);
    let z = ch().z;
    assert_eq!(node.claim.inputs, vec![crate::commit::zmul(&x, z), crate::commit::zmul(&k, z)]);

    let v = rand_tensor(&mut rng, 7, 4, 50);
    let y = kernels::gemm(&x, &v).unwrap();
    let (spec, node) = prove_gemm_activation("pv", &x, &v, Layout::RowMajor, &y, 3, &t, ch()).unwrap();
    assert!(verify_component(&spec, &node, &ctx(None, &t)).accepted);
    assert_eq!(node.claim.inputs[1], crate::commit::zmul(&v, z));
}

#[test]
fn rmsnorm_zero_row_and_eq6_tamper() {
    let t = tables();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut x = rand_tensor(&mut rng, 3, 10, 1 << 17);
    for c in 0..10 {
        // an all-zero row has rms = isqrt(0 + 1) = 1
        x = QTensor::new(3, 10, {
            let mut d = x.into_data();
            d[c] = 0;
            d
        })
        .unwrap();
    }
    let w: Vec<QInt> = (0..10).map(|_| rng.gen_range(0..1 << 17)).collect();
    let y = QTensor::new(3, 10, (0..3).flat_map(|i| kernels::rmsnorm(x.row(i), &w, 16).unwrap().0).collect()).unwrap();
    let tree = MerkleTree::build(vector_leaves(&w, 4)).unwrap();
    let spec = ComponentSpec::new(
        "norm",
        Op::RmsNorm {
            rows: 3,
            dim: 10,
            seg: 4,
            leaf_offset: 0,
        },
        &["x"],
        &["y"],
    );
    let node = prove_component(&spec, Witness::RmsNorm { x: &x, w: &w, y: &y }, Some(&tree), &t, ch()).unwrap();
    let row0 = node.children[0].opening.as_ref().unwrap();
    assert_eq!(row0.scalars[2], 1);
    assert!(y.row(0).iter().all(|&v| v == 0));
    let c = ctx(Some(&tree), &t);
    assert!(verify_component(&spec, &node, &c).accepted);
    assert_eq!(node.level_counts(), by_level(spec.op.shape()));

    let mut bad = node.clone();
    bad.children[1].opening.as_mut().unwrap().scalars[0] += 1;
    seal_component(&spec, &mut bad, &c, false).unwrap();
    let f = verify_component(&spec, &bad, &c).failure.unwrap();
    assert_eq!((f.path.as_str(), f.constraint.as_str()), ("norm/r1", "eq6"));
    for slot in lane_slots(&node).into_iter().step_by(7) {
        assert_tamper_rejected(&spec, &node, &c, slot);
    }
}

fn embedding_setup() -> (KernelTables, QTensor, MerkleTree) {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let vocab = rand_tensor(&mut rng, 6, 8, 1 << 20);
    let leaves = (0..6).map(|r| vocab_row_leaf(vocab.row(r), 3)).collect();
    (tables(), vocab, MerkleTree::build(leaves).unwrap())
}

#[test]
fn embedding_rows_and_vocab_binding() {
    let (t, vocab, tree) = embedding_setup();
    let tokens = vec![4u32, 1, 4];
    let x = kernels::embed_tokens(&tokens, &vocab).unwrap();
    let spec = ComponentSpec::new(
        "embed",
        Op::Embedding {
            tokens: tokens.clone(),
            dim: 8,
            seg: 3,
            leaf_offset: 0,
        },
        &[],
        &["x"],
    );
    let node = prove_component(&spec, Witness::Embedding { x: &x }, Some(&tree), &t, ch()).unwrap();
    let c = ctx(Some(&tree), &t);
    assert!(verify_component(&spec, &node, &c).accepted);
    assert_eq!(node.children[0].claim.weight_digest, node.children[2].claim.weight_digest);
    assert_eq!(node.claim.outputs[0], crate::commit::zmul(&x, ch().z));

    let mut xd = x.clone().into_data();
    xd[9] += 1;
    let bad_x = QTensor::new(3, 8, xd).unwrap();
    assert_eq!(
        prove_component(&spec, Witness::Embedding { x: &bad_x }, Some(&tree), &t, ch()),
        Err(ProveError::VocabDigestMismatch(1))
    );
    let f = replay_failure(&spec, &node, &c, (2, 0, 1));
    assert_eq!((f.path.as_str(), f.constraint.as_str()), ("embed/r0", "vocab-digest"));
}

#[test]
fn rope_identity_at_position_zero() {
    let t = tables();
    let table = RopeTable::build(4, 4, 10000.0, 20).unwrap();
    let tree = MerkleTree::build(rope_leaves(&table)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_tensor(&mut rng, 2, 8, 1 << 20);
    let positions = vec![0usize, 3];
    let mut yd = Vec::new();
    for i in 0..2 {
        for h in 0..2 {
            yd.extend(kernels::rope_rotate(&x.row(i)[h * 4..h * 4 + 4], table.row(positions[i]), 20).unwrap().0);
        }
    }
    let y = QTensor::new(2, 8, yd).unwrap();
    assert_eq!(y.row(0), x.row(0));
    let spec = ComponentSpec::new(
        "rope",
        Op::Rope {
            rows: 2,
            heads: 2,
            head_dim: 4,
            positions,
            leaf_offset: 0,
            scale_bits: 20,
        },
        &["x"],
        &["y"],
    );
    let node = prove_component(&spec, Witness::Rope { x: &x, table: &table, y: &y }, Some(&tree), &t, ch()).unwrap();
    let c = ctx(Some(&tree), &t);
    assert!(verify_component(&spec, &node, &c).accepted);
    assert_eq!(node.level_counts(), by_level(spec.op.shape()));

    // the row opening carries the table row: one sin entry off
    let f = replay_failure(&spec, &node, &c, (2, 0, 1));
    assert_eq!(f.constraint, "eq8");
    let mut bad_table = table.clone();
    let mut e = bad_table.entries.into_data();
    e[3 * 4 + 1] += 1;
    bad_table.entries = QTensor::new(4, 4, e).unwrap();
    assert_eq!(
        build_component(&spec, Witness::Rope { x: &x, table: &bad_table, y: &y }, Some(&tree), &t).map(|_| ()),
        Err(ProveError::RopeTableDigestMismatch(3))
    );
}

fn softmax_case(t: &KernelTables, x: &QTensor, heads: usize, width: usize, valid: &[usize]) -> (ComponentSpec, ProofNode) {
    let rows = x.rows();
    let mut y = Vec::new();
    for i in 0..rows {
        for h in 0..heads {
            let m: Vec<QInt> = x.row(i)[h * width..(h + 1) * width]
                .iter()
                .enumerate()
                .map(|(c, &v)| if c < valid[i] { v } else { t.cfg.neg_inf_q })
                .collect();
            y.extend(kernels::softmax_row(&m, t).unwrap().0);
        }
    }
    let y = QTensor::new(rows, heads * width, y).unwrap();
    let spec = ComponentSpec::new(
        "softmax",
        Op::Softmax {
            rows,
            heads,
            width,
            seg: 3,
            valid: valid.to_vec(),
        },
        &["x"],
        &["y"],
    );
    let node = prove_component(&spec, Witness::Softmax { x, y: &y }, None, t, ch()).unwrap();
    (spec, node)
}

#[test]
fn softmax_uniform_masked_and_step5() {
    let t = tables();
    let x = QTensor::new(1, 4, vec![5 << 16; 4]).unwrap();
    let (spec, node) = softmax_case(&t, &x, 1, 4, &[4]);
    let c = ctx(None, &t);
    assert!(verify_component(&spec, &node, &c).accepted);
    let p = &node.children[0].children[0].children[0].opening.as_ref().unwrap().lanes[9];
    assert!(p.iter().all(|&v| v == 1 << 14));

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = rand_tensor(&mut rng, 3, 14, 4 << 16);
    let (spec, node) = softmax_case(&t, &x, 2, 7, &[1, 4, 7]);
    assert!(verify_component(&spec, &node, &c).accepted);
    assert_eq!(node.level_counts(), by_level(spec.op.shape()));
    // p_0 of row 1, head 0, first segment
    let mut bad = node.clone();
    bad.children[1].children[0].children[0].opening.as_mut().unwrap().lanes[9][0] += 1;
    seal_component(&spec, &mut bad, &c, false).unwrap();
    let f = verify_component(&spec, &bad, &c).failure.unwrap();
    assert_eq!((f.path.as_str(), f.constraint.as_str()), ("softmax/r1/h0/s0", "step5"));
    for slot in lane_slots(&node).into_iter().step_by(5) {
        assert_tamper_rejected(&spec, &node, &c, slot);
    }
}

#[test]
fn sigmoid_silu_lanes() {
    let t = tables();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut x = rand_tensor(&mut rng, 2, 9, 8 << 16).into_data();
    x[0] = 0;
    let x = QTensor::new(2, 9, x).unwrap();
    for silu in [false, true] {
        let f = |v| if silu { kernels::silu(v, &t).0 } else { kernels::sigmoid(v, &t).0 };
        let y = QTensor::new(2, 9, x.data().iter().map(|&v| f(v)).collect()).unwrap();
        let op = if silu {
            Op::Silu { rows: 2, cols: 9, seg: 4 }
        } else {
            Op::Sigmoid { rows: 2, cols: 9, seg: 4 }
        };
        let spec = ComponentSpec::new("act", op, &["x"], &["y"]);
        let node = prove_component(&spec, Witness::Unary { x: &x, y: &y }, None, &t, ch()).unwrap();
        let c = ctx(None, &t);
        assert!(verify_component(&spec, &node, &c).accepted);
        if !silu {
            assert_eq!(y.get(0, 0), 1 << 15);
            let fail = replay_failure(&spec, &node, &c, (0, 7, 2));
            assert_eq!(fail.constraint, "shift-split");
        }
        for slot in lane_slots(&node).into_iter().step_by(3) {
            assert_tamper_rejected(&spec, &node, &c, slot);
        }
    }
}

#[test]
fn topk_permutation_argument() {
    let t = tables();
    let x = QTensor::new(1, 4, vec![5, 2, 8, 1]).unwrap();
    let (spec, node, idx) = prove_topk("sort", &x, 4, SortOrder::Asc, &t, ch()).unwrap();
    assert_eq!(idx.data(), &[3, 1, 0, 2]);
    let c = ctx(None, &t);
    assert!(verify_component(&spec, &node, &c).accepted);
    let aux = &node.claim.aux;
    assert_eq!(aux[0], aux[1]);

    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..1000 {
        let mut bad = node.clone();
        let o = bad.children[0].opening.as_mut().unwrap();
        o.lanes[1][0] = rng.gen_range(-1000..1000);
        if o.lanes[1][0] == 7 {
            continue;
        }
        seal_component(&spec, &mut bad, &c, false).unwrap();
        assert!(!verify_component(&spec, &bad, &c).accepted);
    }
    let already = QTensor::new(2, 3, vec![1, 2, 3, 9, 9, 9]).unwrap();
    let (spec, node, idx) = prove_topk("sorted", &already, 2, SortOrder::Desc, &t, ch()).unwrap();
    assert_eq!(idx.data(), &[2, 1, 0, 1]);
    assert!(verify_component(&spec, &node, &c).accepted);
}

fn experts_case(t: &KernelTables, sp: &QTensor, s: &QTensor, grouping: Grouping) -> Result<(ComponentSpec, ProofNode, Vec<usize>), ProveError> {
    let rows = sp.rows();
    let e = sp.cols();
    let sels: Vec<_> = (0..rows).map(|r| kernels::expert_select(sp.row(r), &grouping).unwrap()).collect();
    let mut active: Vec<usize> = sels.iter().flat_map(|s| s.experts.clone()).collect();
    active.sort_unstable();
    active.dedup();
    let outputs: Vec<QTensor> = active
        .iter()
        .map(|&ex| QTensor::new(rows, 1, (0..rows).map(|r| if sels[r].experts.contains(&ex) { s.get(r, ex) } else { 0 }).collect()).unwrap())
        .collect();
    let spec = ComponentSpec::new(
        "experts",
        Op::ExpertSelector {
            rows,
            n_experts: e,
            grouping,
            active: active.clone(),
        },
        &["sp", "s"],
        &[],
    );
    let node = prove_component(&spec, Witness::Experts { sp, s, outputs: &outputs }, None, t, ch())?;
    Ok((spec, node, active))
}

#[test]
fn expert_selector_two_rounds() {
    let t = tables();
    let grouping = Grouping {
        n_groups: 4,
        per_group_top: 1,
        groups_selected: 2,
        experts_selected: 2,
    };
    let sp = QTensor::new(1, 8, vec![1, 5, 9, 2, 3, 3, 8, 7]).unwrap();
    let (spec, node, active) = experts_case(&t, &sp, &sp, grouping).unwrap();
    assert_eq!(active, vec![2, 6]);
    let c = ctx(None, &t);
    assert!(verify_component(&spec, &node, &c).accepted);
    assert_eq!(node.level_counts(), by_level(spec.op.shape()));
    assert_eq!(node.claim.outputs, vec![FieldElement::new(9), FieldElement::new(8)]);
    for slot in lane_slots(&node) {
        assert_tamper_rejected(&spec, &node, &c, slot);
    }

    let flat = QTensor::new(2, 8, vec![4; 16]).unwrap();
    let (spec, node, active) = experts_case(&t, &flat, &flat, grouping).unwrap();
    assert_eq!(active, vec![0, 1]);
    assert!(verify_component(&spec, &node, &c).accepted);
}

#[test]
fn elementwise_provenances() {
    let t = tables();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let x = rand_tensor(&mut rng, 3, 5, 1 << 20);
    let z = ch().z;
    let c0 = ctx(None, &t);

    let zero = QTensor::zeros(3, 5);
    let spec = ComponentSpec::new(
        "add",
        Op::Elementwise {
            rows: 3,
            cols: 5,
            seg: 2,
            op: ElemOp::Add,
            operand: Operand::Activation,
        },
        &["x", "b"],
        &["y"],
    );
    let node = prove_component(&spec, Witness::Elementwise { x: &x, b: &zero, y: &x }, None, &t, ch()).unwrap();
    assert!(verify_component(&spec, &node, &c0).accepted);
    assert_eq!(node.claim.outputs[0], node.claim.inputs[0]);
    let f = replay_failure(&spec, &node, &c0, (4, 2, 1));
    assert_eq!(f.constraint, "add");

    let bias = rand_tensor(&mut rng, 1, 5, 1 << 10);
    let tree = MerkleTree::build(vector_leaves(bias.row(0), 2)).unwrap();
    let full = QTensor::new(3, 5, bias.row(0).repeat(3)).unwrap();
    let y = kernels::elementwise_add(&x, &full).unwrap();
    let spec = ComponentSpec::new(
        "bias",
        Op::Elementwise {
            rows: 3,
            cols: 5,
            seg: 2,
            op: ElemOp::Add,
            operand: Operand::WeightRow { leaf_offset: 0 },
        },
        &["x"],
        &["y"],
    );
    let node = prove_component(&spec, Witness::Elementwise { x: &x, b: &bias, y: &y }, Some(&tree), &t, ch()).unwrap();
    let c = ctx(Some(&tree), &t);
    assert!(verify_component(&spec, &node, &c).accepted);
    assert!(node.claim.weight_digest.is_some());
    let f = replay_failure(&spec, &node, &c, (1, 1, 0));
    assert_eq!(f.constraint, "add");

    let g = rand_tensor(&mut rng, 3, 1, 1 << 16);
    let gfull = QTensor::new(3, 5, g.data().iter().flat_map(|&v| [v; 5]).collect()).unwrap();
    let (y, _) = kernels::elementwise_mul(&x, &gfull, 16).unwrap();
    let spec = ComponentSpec::new(
        "gate",
        Op::Elementwise {
            rows: 3,
            cols: 5,
            seg: 2,
            op: ElemOp::Mul,
            operand: Operand::ActivationCol,
        },
        &["x", "g"],
        &["y"],
    );
    let node = prove_component(&spec, Witness::Elementwise { x: &x, b: &g, y: &y }, None, &t, ch()).unwrap();
    assert!(verify_component(&spec, &node, &c0).accepted);
    assert_eq!(node.claim.inputs[1], crate::commit::zmul(&g, z));
    assert_eq!(node.claim.outputs[0], crate::commit::zmul(&y, z));
    let f = replay_failure(&spec, &node, &c0, (1, 1, 1));
    assert_eq!(f.constraint, "mul");
}

#[test]
fn chained_components_link_by_zmul() {
    let t = tables();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = rand_tensor(&mut rng, 2, 6, 1 << 20);
    let w = rand_tensor(&mut rng, 6, 4, 1 << 16);
    let raw = kernels::gemm(&x, &w).unwrap();
    let (y, _) = kernels::rescale(&raw, 16);
    let tree = MerkleTree::build(gemm_weight_leaves(&w, 4)).unwrap();
    let (_, g) = prove_gemm("w", &x, &w, &raw, 4, 0, &tree, &t, ch()).unwrap();
    let spec = ComponentSpec::new(
        "w.rescale",
        Op::Rescale {
            rows: 2,
            cols: 4,
            seg: 4,
            shift: 16,
        },
        &["raw"],
        &["y"],
    );
    let r = prove_component(&spec, Witness::Rescale { y_raw: &raw, y: &y }, None, &t, ch()).unwrap();
    assert_eq!(g.claim.outputs[0], r.claim.inputs[0]);
    assert_eq!(r.claim.outputs[0], crate::commit::zmul(&y, ch().z));
    let c = ctx(None, &t);
    let f = replay_failure(&spec, &r, &c, (0, 2, 0));
    assert_eq!(f.constraint, "rescale");
}

#[test]
fn spot_check_trusts_unsampled_leaves_only() {
    let t = tables();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = rand_tensor(&mut rng, 4, 12, 8 << 16);
    let y = QTensor::new(4, 12, x.data().iter().map(|&v| kernels::sigmoid(v, &t).0).collect()).unwrap();
    let spec = ComponentSpec::new("sig", Op::Sigmoid { rows: 4, cols: 12, seg: 3 }, &["x"], &["y"]);
    let node = prove_component(&spec, Witness::Unary { x: &x, y: &y }, None, &t, ch()).unwrap();
    let mut c = ctx(None, &t);
    for fraction in [0.0, 0.1, 1.0] {
        c.mode = Mode::SpotCheck { fraction, seed: 5 };
        assert!(verify_component(&spec, &node, &c).accepted);
    }
    // a plain digest break is always caught
    let mut bad = node.clone();
    bump(&mut bad, (3, 0, 0), 1);
    c.mode = Mode::SpotCheck { fraction: 0.0, seed: 5 };
    assert_eq!(verify_component(&spec, &bad, &c).failure.unwrap().constraint, "digest");
    let sampled = (0..16).filter(|k| c.sampled("sig", [k / 4, k % 4, 0])).count();
    assert_eq!(sampled, 0);
    c.mode = Mode::SpotCheck { fraction: 0.5, seed: 5 };
    let a: Vec<bool> = (0..64).map(|k| c.sampled("sig", [k, 0, 0])).collect();
    let b: Vec<bool> = (0..64).map(|k| c.sampled("sig", [k, 0, 0])).collect();
    assert_eq!(a, b);
    assert!(a.iter().any(|&s| s) && a.iter().any(|&s| !s));
}

#[test]
fn wrong_challenges_reject() {
    let t = tables();
    let x = QTensor::new(1, 3, vec![1, 2, 3]).unwrap();
    let (spec, node, _) = prove_topk("k", &x, 1, SortOrder::Desc, &t, ch()).unwrap();
    let mut c = ctx(None, &t);
    c.challenges.z += FieldElement::ONE;
    let f = verify_component(&spec, &node, &c).failure.unwrap();
    assert_eq!(f.constraint, "claim");
}

#[test]
fn structure_violations_are_located() {
    let t = tables();
    let x = QTensor::new(2, 3, vec![1, 2, 3, 4, 5, 6]).unwrap();
    let (spec, node, _) = prove_topk("k", &x, 1, SortOrder::Desc, &t, ch()).unwrap();
    let c = ctx(None, &t);
    let mut bad = node.clone();
    bad.children[1].label = String::from("r7");
    bad.rehash();
    let f = verify_component(&spec, &bad, &c).failure.unwrap();
    assert_eq!((f.path.as_str(), f.constraint.as_str()), ("k/r7", "structure"));
    let mut bad = node.clone();
    bad.children.pop();
    bad.rehash();
    assert_eq!(verify_component(&spec, &bad, &c).failure.unwrap().constraint, "structure");
    let mut bad = node;
    bad.children[0].opening.as_mut().unwrap().lanes[0][0] = i64::MAX;
    bad.rehash();
    assert_eq!(verify_component(&spec, &bad, &c).failure.unwrap().constraint, "structure");
}

#[test]
fn table3_shapes() {
    let g = |n_groups| Grouping {
        n_groups,
        per_group_top: 2,
        groups_selected: 4,
        experts_selected: 8,
    };
    let count = |op: Op, level: Level| op.shape().into_iter().find(|(l, _)| *l == level).map(|(_, n)| n);
    let emb = Op::Embedding {
        tokens: vec![0; 24],
        dim: 7168,
        seg: 224,
        leaf_offset: 0,
    };
    assert_eq!(emb.shape(), vec![(Level::Segment, 768), (Level::Row, 24), (Level::Component, 1)]);
    let norm = |dim, seg| Op::RmsNorm {
        rows: 24,
        dim,
        seg,
        leaf_offset: 0,
    };
    assert_eq!(count(norm(7168, 112), Level::Segment), Some(1536));
    assert_eq!(count(norm(1536, 48), Level::Segment), Some(768));
    let rope = Op::Rope {
        rows: 24,
        heads: 128,
        head_dim: 64,
        positions: vec![0; 24],
        leaf_offset: 0,
        scale_bits: 20,
    };
    assert_eq!(rope.shape(), vec![(Level::Head, 3072), (Level::Row, 24), (Level::Component, 1)]);
    let sm = Op::Softmax {
        rows: 24,
        heads: 128,
        width: 24,
        seg: 32,
        valid: vec![24; 24],
    };
    assert_eq!(count(sm, Level::Head), Some(3072));
    assert_eq!(count(Op::Sigmoid { rows: 24, cols: 256, seg: 16 }, Level::Segment), Some(384));
    let ex = Op::ExpertSelector {
        rows: 24,
        n_experts: 256,
        grouping: g(8),
        active: vec![],
    };
    assert_eq!(
        ex.shape(),
        vec![
            (Level::Group, 192),
            (Level::GroupRow, 24),
            (Level::SortedGroup, 192),
            (Level::SortedGroupRow, 24),
            (Level::Component, 1)
        ]
    );
    let gemm = Op::Gemm {
        a: 24,
        n: 7168,
        b: 512,
        seg: 112,
        rhs: GemmRhs::Weight { leaf_offset: 0 },
    };
    assert_eq!(count(gemm.clone(), Level::XProof), Some(64));
    assert_eq!(count(gemm, Level::WProof), Some(64));
}
