extern crate std;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use std::sync::OnceLock;

use super::*;
use crate::error::ModelError;
use crate::fixed::KernelTables;
use crate::kernels::{self, Grouping};
use crate::proof::{seal_component, Kind, Mode, VerifyCtx};
use crate::tensor::QTensor;

type Store = BTreeMap<String, QTensor>;

const TOKENS: [u32; 8] = [17, 3, 250, 99, 3, 42, 0, 128];

struct Fixture {
    store: Store,
    commitment: Commitment,
    proof: ModelProof,
    stats: ProveStats,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let cfg = ModelConfig::default();
        let store = toy_weights(&cfg, 7).unwrap();
        let commitment = commit_model(&cfg, &store).unwrap();
        let (proof, stats) = prove_inference(&commitment, &store, &TOKENS).unwrap();
        Fixture {
            store,
            commitment,
            proof,
            stats,
        }
    })
}

fn tables(cfg: &ModelConfig) -> KernelTables {
    KernelTables::new(cfg.quant).unwrap()
}

fn infer(cfg: &ModelConfig, store: &Store, c: &Commitment, state: &mut ModelState, tokens: &[u32]) -> Output {
    let t = tables(cfg);
    let rope = rope_table(cfg).unwrap();
    let mut loader = Loader::new(store, c);
    let mut fwd = Fwd::new(*cfg, &t, &rope, &mut loader, false);
    fwd.run(state, tokens).unwrap()
}

#[test]
fn leaf_ranges_tile_the_tree() {
    let f = fixture();
    let layout = &f.commitment.layout;
    let mut next = 1;
    for e in &layout.entries {
        assert_eq!(e.leaf_offset, next, "{}", e.name);
        next += e.leaf_count;
    }
    assert_eq!(next, f.commitment.tree.leaf_count());
    assert_eq!(f.commitment.tree.leaf(0), Some(&f.commitment.cfg.digest()));
    let again = commit_model(&f.commitment.cfg, &f.store).unwrap();
    assert_eq!(again.root(), f.commitment.root());
}

#[test]
fn mla_graph_matches_component_mapping() {
    let cfg = ModelConfig::default();
    let g = build_mla_graph(&cfg, 5).unwrap();
    let kinds = g.kinds();
    for n in ["wq_a", "wkv_a1", "wkv_a2", "wq_b1", "wq_b2", "wkv_b1", "wkv_b2", "mul1", "mul2", "mul3", "wo"] {
        assert_eq!(kinds[format!("L0.{n}").as_str()], Kind::Gemm, "{n}");
    }
    for n in ["q_norm", "kv_norm", "attn_norm"] {
        assert_eq!(kinds[format!("L0.{n}").as_str()], Kind::RmsNorm, "{n}");
    }
    assert_eq!(kinds["L0.rope1"], Kind::Rope);
    assert_eq!(kinds["L0.rope2"], Kind::Rope);
    assert_eq!(kinds["L0.softmax"], Kind::Softmax);
    assert_eq!(kinds["L0.add"], Kind::ElemAdd);
    let audit = g.audit().unwrap();
    assert_eq!(audit.sinks, vec![String::from("L0.wo")]);
    // 8 weight GeMMs, 3 norms
    assert_eq!(audit.weight_obligations, 11);
    assert_eq!(audit.links, g.specs.iter().map(|s| s.inputs.len()).sum::<usize>());
    // W^UK is applied to the queries, never to the cache
    assert_eq!(g.get("L0.mul1").unwrap().inputs, vec![String::from("L0.wkv_b1"), String::from("L0.kv_norm")]);
    assert_eq!(g.get("L0.wkv_b2").unwrap().inputs, vec![String::from("L0.mul3")]);
}

#[test]
fn moe_graph_matches_component_mapping() {
    let cfg = ModelConfig::default();
    let active = [1, 5, 6, 12];
    let g = build_moe_graph(&cfg, 3, &active).unwrap();
    let kinds = g.kinds();
    assert_eq!(kinds["L0.experts"], Kind::ExpertSelector);
    assert_eq!(kinds["L0.bias"], Kind::ElemAdd);
    assert_eq!(kinds["L0.sigmoid"], Kind::Sigmoid);
    assert_eq!(kinds["L0.e5.silu"], Kind::Silu);
    assert_eq!(kinds["L0.e5.mul1"], Kind::ElemMul);
    assert_eq!(kinds["L0.s0.mul2"], Kind::ElemMul);
    let audit = g.audit().unwrap();
    assert_eq!(audit.sinks, vec![String::from("L0.add.e12")]);
    // ffn_norm, gate, bias and three matrices per expert
    assert_eq!(audit.weight_obligations, 3 + 3 * (cfg.moe.n_shared + active.len()));
    assert!(build_moe_graph(&cfg, 3, &[5, 1]).is_err());
    assert!(build_moe_graph(&cfg, 3, &[16]).is_err());
}

#[test]
fn audit_rejects_broken_graphs() {
    let cfg = ModelConfig::default();
    let mut g = build_mla_graph(&cfg, 2).unwrap();
    g.specs.swap(0, 1);
    assert!(g.audit().is_err());
    let mut g = build_mla_graph(&cfg, 2).unwrap();
    let dup = g.specs[1].clone();
    g.specs.push(dup);
    assert!(g.audit().is_err());
    let mut g = build_mla_graph(&cfg, 2).unwrap();
    let k = g.specs.iter().position(|s| s.name == "L0.wq_b2").unwrap();
    g.specs[k].op = g.specs.iter().find(|s| s.name == "L0.wq_b1").unwrap().op.clone();
    assert!(g.audit().is_err());
}

#[test]
fn full_layer_graph_audits() {
    let f = fixture();
    let cfg = f.commitment.cfg;
    let graphs = model_graphs(&cfg, &f.commitment.layout, &TOKENS, &f.proof.public.active).unwrap();
    let all = ComponentGraph {
        specs: graphs.into_iter().flat_map(|g| g.specs).collect(),
        externals: Vec::new(),
    };
    let audit = all.audit().unwrap();
    assert_eq!(audit.sinks, vec![String::from("argmax")]);
}

#[test]
fn dag_shape_rejects_degenerate_ops() {
    use crate::proof::Op;
    assert!(dag_shape(&Op::Sigmoid { rows: 2, cols: 3, seg: 0 }).is_err());
    let op = Op::ExpertSelector {
        rows: 1,
        n_experts: 10,
        grouping: Grouping {
            n_groups: 4,
            per_group_top: 1,
            groups_selected: 1,
            experts_selected: 1,
        },
        active: vec![0],
    };
    assert!(dag_shape(&op).is_err());
}

#[test]
fn zero_weights_give_zero_output_and_grow_caches() {
    let cfg = ModelConfig {
        n_layers: 1,
        ..ModelConfig::default()
    };
    let layout = Layout::new(&cfg).unwrap();
    let store: Store = layout
        .entries
        .iter()
        .filter(|e| e.kind != TensorKind::Rope)
        .map(|e| (e.name.clone(), QTensor::zeros(e.rows, e.cols)))
        .collect();
    let c = commit_model(&cfg, &store).unwrap();
    let mut state = ModelState::new(&cfg);
    let out = infer(&cfg, &store, &c, &mut state, &[9]);
    assert!(out.logits.data().iter().all(|&v| v == 0));
    assert_eq!(state.caches[0].kv.shape(), (1, cfg.kv_lora_rank));
    assert_eq!(state.caches[0].pe.shape(), (1, cfg.rope_dim));
    assert_eq!(state.pos, 1);
    infer(&cfg, &store, &c, &mut state, &[4, 5]);
    assert_eq!(state.caches[0].kv.rows(), 3);
}

#[test]
fn prefill_matches_token_by_token_decode() {
    let f = fixture();
    let cfg = f.commitment.cfg;
    let tokens = [5u32, 200, 31];
    let mut prefill = ModelState::new(&cfg);
    let full = infer(&cfg, &f.store, &f.commitment, &mut prefill, &tokens);
    let mut state = ModelState::new(&cfg);
    for (i, &tok) in tokens.iter().enumerate() {
        let step = infer(&cfg, &f.store, &f.commitment, &mut state, &[tok]);
        assert_eq!(step.logits.row(0), full.logits.row(i), "position {i}");
        assert_eq!(step.argmax.get(0, 0), full.argmax.get(i, 0));
    }
    assert_eq!(state, prefill);
}

/// Every expert chosen: the layer output must equal the residual plus the
/// gate-weighted sum of all expert MLPs, recomputed here from kernels.
#[test]
fn dense_routing_equals_weighted_mlp_sum() {
    let mut cfg = ModelConfig {
        n_layers: 1,
        ..ModelConfig::default()
    };
    cfg.moe.n_experts = 8;
    cfg.moe.grouping = Grouping {
        n_groups: 2,
        per_group_top: 2,
        groups_selected: 2,
        experts_selected: 8,
    };
    let store = toy_weights(&cfg, 3).unwrap();
    let c = commit_model(&cfg, &store).unwrap();
    let t = tables(&cfg);
    let rope = rope_table(&cfg).unwrap();
    let mut loader = Loader::new(&store, &c);
    let mut fwd = Fwd::new(cfg, &t, &rope, &mut loader, true);
    let mut state = ModelState::new(&cfg);
    let h = fwd.embed(&[1, 2, 3]).unwrap();
    let (out, active) = fwd.run_layer(0, &h, &mut state.caches[0]).unwrap();
    assert_eq!(active, (0..8).collect::<Vec<_>>());
    let tape: BTreeMap<String, Trace> = fwd.take_tape().into_iter().collect();
    let Trace::Elementwise { y: h1, .. } = &tape["L0.attn_res"] else { panic!() };

    let q = cfg.quant.q;
    let lin = |x: &QTensor, name: &str| kernels::rescale(&kernels::gemm(x, &store[name]).unwrap(), q).0;
    let mut xf = Vec::new();
    for r in 0..h1.rows() {
        xf.extend(kernels::rmsnorm(h1.row(r), store["L0.ffn_norm"].row(0), q).unwrap().0);
    }
    let xf = QTensor::new(h1.rows(), cfg.dim, xf).unwrap();
    let g = lin(&xf, "L0.gate");
    let mlp = |p: &str| {
        let a = lin(&xf, &format!("{p}w1"));
        let a = QTensor::new(a.rows(), a.cols(), a.data().iter().map(|&v| kernels::silu(v, &t).0).collect()).unwrap();
        let b = lin(&xf, &format!("{p}w3"));
        lin(&kernels::elementwise_mul(&a, &b, q).unwrap().0, &format!("{p}w2"))
    };
    let mut want = kernels::elementwise_add(h1, &mlp("L0.s0.")).unwrap();
    for e in 0..8 {
        let y = mlp(&format!("L0.e{e}."));
        let gate: Vec<i64> = (0..y.rows()).flat_map(|r| vec![kernels::sigmoid(g.get(r, e), &t).0; cfg.dim]).collect();
        let gate = QTensor::new(y.rows(), cfg.dim, gate).unwrap();
        want = kernels::elementwise_add(&want, &kernels::elementwise_mul(&y, &gate, q).unwrap().0).unwrap();
    }
    assert_eq!(out, want);
}

#[test]
fn toy_end_to_end_accepts() {
    let f = fixture();
    let p = &f.proof;
    assert_eq!(p.public.logits.shape(), (8, 256));
    assert_eq!(p.public.active.len(), 2);
    let root = f.commitment.root();
    let v = verify_inference(&root, &TOKENS, p, Mode::Replay);
    assert!(v.accepted, "{v:?}");
    let v = verify_inference(&root, &TOKENS, p, Mode::SpotCheck { fraction: 0.1, seed: 3 });
    assert!(v.accepted, "{v:?}");
    let plain = infer(&f.commitment.cfg, &f.store, &f.commitment, &mut ModelState::new(&f.commitment.cfg), &TOKENS);
    assert_eq!(plain.logits, p.public.logits);
    assert_eq!(plain.active, p.public.active);
}

#[test]
fn wrong_root_or_tokens_reject_at_the_model() {
    let f = fixture();
    let root = f.commitment.root();
    let mut other = root;
    other.0[0] ^= 1;
    let v = verify_inference(&other, &TOKENS, &f.proof, Mode::Replay);
    assert_eq!(v.failure.unwrap().constraint, "model-root");
    let v = verify_inference(&root, &TOKENS[..7], &f.proof, Mode::Replay);
    assert_eq!(v.failure.unwrap().constraint, "tokens");
}

#[test]
fn streaming_peak_stays_within_one_stage() {
    let f = fixture();
    let layout = &f.commitment.layout;
    let bytes = |pred: &dyn Fn(&str) -> bool| layout.entries.iter().filter(|e| e.kind != TensorKind::Rope && pred(&e.name)).map(TensorEntry::byte_len).sum::<usize>();
    let mut bound = bytes(&|n| n == "embed").max(bytes(&|n| n == "final_norm" || n == "head"));
    for (l, active) in f.proof.public.active.iter().enumerate() {
        let p = layer_prefix(l);
        let dense = bytes(&|n| n.starts_with(&p) && !n.contains(".e"));
        let routed: usize = active.iter().map(|&e| bytes(&|n| n.starts_with(&expert_prefix(l, e)))).sum();
        bound = bound.max(dense + routed);
    }
    let total = bytes(&|_| true);
    assert!(f.stats.peak_weight_bytes <= bound, "{} > {bound}", f.stats.peak_weight_bytes);
    assert!(f.stats.peak_weight_bytes < total);
}

#[test]
fn swapped_expert_weights_are_refused() {
    let f = fixture();
    let e = f.proof.public.active[0][0];
    let name = format!("{}w1", expert_prefix(0, e));
    let mut store = f.store.clone();
    let mut data = store[&name].clone().into_data();
    data[3] += 1;
    let w = QTensor::new(f.store[&name].rows(), f.store[&name].cols(), data).unwrap();
    store.insert(name.clone(), w);
    let err = prove_inference(&f.commitment, &store, &TOKENS).unwrap_err();
    assert_eq!(
        err,
        ModelError::CommitmentMismatch {
            tensor: name.clone(),
            component: name
        }
    );
    assert_eq!(prove_inference(&f.commitment, &f.store, &[]).unwrap_err(), ModelError::EmptyInput);
}

#[test]
fn proving_is_deterministic_and_the_container_round_trips() {
    let f = fixture();
    let bytes = encode_proof(&f.proof);
    let (again, _) = prove_inference(&f.commitment, &f.store, &TOKENS).unwrap();
    assert_eq!(encode_proof(&again), bytes);
    assert_eq!(decode_proof(&bytes).unwrap(), f.proof);
    match decode_proof(&bytes[..bytes.len() - 40]) {
        Err(ModelError::Container { at, .. }) => assert!(at.starts_with("model/"), "{at}"),
        other => panic!("{other:?}"),
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode_proof(&extra).is_err());
}

fn find_mut<'a>(node: &'a mut crate::proof::ProofNode, path: &[&str]) -> &'a mut crate::proof::ProofNode {
    match path.split_first() {
        None => node,
        Some((head, rest)) => {
            let c = node.children.iter_mut().find(|c| c.label == *head).unwrap();
            find_mut(c, rest)
        }
    }
}

#[test]
fn tampers_are_located() {
    let f = fixture();
    let root = f.commitment.root();
    let check = |p: &ModelProof| verify_inference(&root, &TOKENS, p, Mode::Replay).failure.expect("tamper accepted");

    let mut p = f.proof.clone();
    find_mut(&mut p.root, &["L1", "L1.softmax", "r3", "h2", "s0"]).opening.as_mut().unwrap().lanes[9][1] += 1;
    let fl = check(&p);
    assert!(fl.path.starts_with("model/L1/L1.softmax/r3/h2"), "{fl}");

    let mut p = f.proof.clone();
    find_mut(&mut p.root, &["L0", "L0.wo"]).claim.outputs[0] += crate::field::FieldElement::ONE;
    assert_eq!(check(&p).path, "model/L0/L0.wo");

    let mut p = f.proof.clone();
    let mut data = p.public.logits.clone().into_data();
    data[100] += 1;
    p.public.logits = QTensor::new(8, 256, data).unwrap();
    assert_eq!(check(&p).constraint, "public-logits");

    // a resealed edit passes its own component but not its consumers
    let mut p = f.proof.clone();
    let cfg = f.commitment.cfg;
    let t = tables(&cfg);
    let graphs = model_graphs(&cfg, &f.commitment.layout, &TOKENS, &p.public.active).unwrap();
    let spec = graphs[1].get("L0.wq_a.rescale").unwrap().clone();
    let node = find_mut(&mut p.root, &["L0", "L0.wq_a.rescale"]);
    let o = node.children[2].children[0].opening.as_mut().unwrap();
    let k = o.lanes[2].iter().position(|&r| r + 1 < 1 << cfg.quant.q).unwrap();
    o.lanes[0][k] += 1;
    o.lanes[2][k] += 1;
    let ctx = VerifyCtx {
        model_root: root,
        tables: &t,
        challenges: p.public.challenges,
        mode: Mode::Replay,
    };
    seal_component(&spec, node, &ctx, false).unwrap();
    let fl = check(&p);
    assert_eq!((fl.path.as_str(), fl.constraint.as_str()), ("model/L0/L0.wq_a.rescale", "link:L0.wq_a.raw"));
}
