//! Whole-model proving and verification.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::commit::{merkle_verify, zmul, AuthPath, Digest, Hasher, MerkleTree};
use crate::error::{ModelError, ProveError};
use crate::field::FieldElement;
use crate::fixed::KernelTables;
use crate::par::{for_each_mut, map_range};
use crate::proof::{
    build_component, join_path, seal_component, verify_component, Claim, ComponentSpec, Failure, Kind, Level, Mode, ProofNode, Span,
    Verdict, VerifyCtx,
};
use crate::tensor::QTensor;
use crate::transcript::{derive_session_challenges, Challenges};

use super::config::ModelConfig;
use super::forward::{Fwd, ModelState, Tape};
use super::graph::{embed_graph, head_graph, layer_graph, ComponentGraph};
use super::layout::{rope_table, Commitment, Layout, Loader, WeightStore};

pub const MODEL_LABEL: &str = "model";

/// Everything public about one proved inference.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PublicIo {
    pub cfg: ModelConfig,
    pub tokens: Vec<u32>,
    /// `tokens x vocab`, fixed point.
    pub logits: QTensor,
    /// `tokens x 1`.
    pub argmax: QTensor,
    /// Routed experts per layer, ascending.
    pub active: Vec<Vec<usize>>,
    pub model_root: Digest,
    pub input_digest: Digest,
    pub witness_root: Digest,
    pub challenges: Challenges,
    /// Opens leaf 0 (the config digest) under `model_root`.
    pub config_path: AuthPath,
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelProof {
    pub public: PublicIo,
    pub root: ProofNode,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ProveStats {
    /// Most parameter bytes resident at once.
    pub peak_weight_bytes: usize,
    pub nodes: usize,
}

pub fn input_digest(tokens: &[u32]) -> Digest {
    let mut h = Hasher::new("VT-INPUT");
    h.u64(tokens.len() as u64);
    for &t in tokens {
        h.u64(t as u64);
    }
    h.finish()
}

/// Component graphs of a run, in proof order: embedding, each layer, head.
pub fn model_graphs(cfg: &ModelConfig, layout: &Layout, tokens: &[u32], active: &[Vec<usize>]) -> Result<Vec<ComponentGraph>, ModelError> {
    if active.len() != cfg.n_layers {
        return Err(ModelError::BadConfig(format!("{} routed sets for {} layers", active.len(), cfg.n_layers)));
    }
    let rows = tokens.len();
    let mut graphs = Vec::with_capacity(cfg.n_layers + 2);
    graphs.push(embed_graph(cfg, layout, tokens)?);
    let mut input = String::from("embed");
    for (l, a) in active.iter().enumerate() {
        let g = layer_graph(cfg, layout, l, rows, &input, a)?;
        input = g.specs.last().expect("layers are never empty").outputs[0].clone();
        graphs.push(g);
    }
    graphs.push(head_graph(cfg, layout, rows, &input)?);
    Ok(graphs)
}

/// Builds unsealed nodes for `graph` from the tape, then hands the weights
/// back to the loader.
fn build_group(
    graph: &ComponentGraph,
    tape: Tape,
    loader: &mut Loader,
    tree: &MerkleTree,
    rope: &crate::kernels::RopeTable,
    tables: &KernelTables,
) -> Result<Vec<ProofNode>, ModelError> {
    let mut traces: BTreeMap<String, _> = tape.into_iter().collect();
    let mut nodes = Vec::with_capacity(graph.specs.len());
    for spec in &graph.specs {
        let tr = traces
            .get(&spec.name)
            .ok_or_else(|| ProveError::ShapeMismatch(format!("no witness for {}", spec.name)))?;
        nodes.push(build_component(spec, tr.witness(rope), Some(tree), tables)?);
    }
    for (name, tr) in core::mem::take(&mut traces) {
        if graph.get(&name).is_none() {
            return Err(ProveError::ShapeMismatch(format!("witness for unknown component {name}")).into());
        }
        if let Some(w) = tr.into_weight() {
            loader.release(w);
        }
    }
    Ok(nodes)
}

fn layer_claim(first: &ProofNode, last: &ProofNode, rows: usize, dim: usize) -> Option<Claim> {
    Some(Claim {
        kind: Kind::Layer,
        inputs: alloc::vec![*first.claim.inputs.first()?],
        outputs: alloc::vec![*last.claim.outputs.first()?],
        span: Span::new((0, rows), (0, dim)),
        ..Claim::default()
    })
}

fn model_claim(logits: &ProofNode, argmax: &ProofNode, rows: usize, vocab: usize) -> Option<Claim> {
    Some(Claim {
        kind: Kind::Model,
        outputs: alloc::vec![*logits.claim.outputs.first()?, *argmax.claim.outputs.first()?],
        span: Span::new((0, rows), (0, vocab)),
        ..Claim::default()
    })
}

/// Wraps per-group component nodes into layer nodes under the model root.
fn assemble(cfg: &ModelConfig, rows: usize, mut groups: Vec<Vec<ProofNode>>) -> Option<ProofNode> {
    let head = groups.pop()?;
    let mut children: Vec<ProofNode> = groups.remove(0);
    for (l, comps) in groups.into_iter().enumerate() {
        let claim = layer_claim(comps.first()?, comps.last()?, rows, cfg.dim)?;
        let mut node = ProofNode::new(Level::Layer, Kind::Layer, format!("L{l}"), None, comps);
        node.claim = claim;
        node.digest = node.compute_digest();
        children.push(node);
    }
    let n = head.len();
    let claim = model_claim(&head[n - 2], &head[n - 1], rows, cfg.vocab_size)?;
    children.extend(head);
    let mut root = ProofNode::new(Level::Model, Kind::Model, MODEL_LABEL, None, children);
    root.claim = claim;
    root.digest = root.compute_digest();
    Some(root)
}

fn witness_root<'a>(nodes: impl Iterator<Item = &'a ProofNode>) -> Result<Digest, ModelError> {
    let mut leaves = Vec::new();
    for n in nodes {
        n.for_each_opening(&mut |o| leaves.push(o.digest()));
    }
    Ok(MerkleTree::build(leaves)?.root())
}

/// Runs the model on `tokens` from empty caches and proves every component.
/// Parameters are loaded one stage at a time and checked against the
/// commitment as they arrive.
pub fn prove_inference(commitment: &Commitment, store: &dyn WeightStore, tokens: &[u32]) -> Result<(ModelProof, ProveStats), ModelError> {
    let cfg = commitment.cfg;
    if tokens.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let tables = KernelTables::new(cfg.quant).map_err(|e| ModelError::BadConfig(format!("{e}")))?;
    let rope = rope_table(&cfg)?;
    let layout = &commitment.layout;
    let tree = &commitment.tree;
    let rows = tokens.len();
    let mut loader = Loader::new(store, commitment);
    let mut state = ModelState::new(&cfg);
    let mut fwd = Fwd::new(cfg, &tables, &rope, &mut loader, true);

    let mut specs: Vec<Vec<ComponentSpec>> = Vec::new();
    let mut groups: Vec<Vec<ProofNode>> = Vec::new();
    let mut stage = |fwd: &mut Fwd, g: ComponentGraph| -> Result<(), ModelError> {
        let tape = fwd.take_tape();
        groups.push(build_group(&g, tape, fwd.loader, tree, &rope, &tables)?);
        specs.push(g.specs);
        Ok(())
    };

    let mut h = fwd.embed(tokens)?;
    stage(&mut fwd, embed_graph(&cfg, layout, tokens)?)?;
    let mut input = String::from("embed");
    let mut active = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let (next, a) = fwd.run_layer(l, &h, &mut state.caches[l])?;
        let g = layer_graph(&cfg, layout, l, rows, &input, &a)?;
        input = g.specs.last().expect("layers are never empty").outputs[0].clone();
        stage(&mut fwd, g)?;
        h = next;
        active.push(a);
    }
    let (logits, argmax) = fwd.head(&h)?;
    stage(&mut fwd, head_graph(&cfg, layout, rows, &input)?)?;
    drop(fwd);

    let model_root = tree.root();
    let input_digest = input_digest(tokens);
    let witness_root = witness_root(groups.iter().flatten())?;
    let challenges = derive_session_challenges(&model_root, &input_digest, &witness_root);
    let ctx = VerifyCtx {
        model_root,
        tables: &tables,
        challenges,
        mode: Mode::Replay,
    };

    let mut flat: Vec<(ComponentSpec, ProofNode, Option<ProveError>)> = Vec::new();
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    for (s, g) in specs.into_iter().zip(groups) {
        flat.extend(s.into_iter().zip(g).map(|(s, n)| (s, n, None)));
    }
    for_each_mut(&mut flat, |(spec, node, err)| {
        *err = seal_component(spec, node, &ctx, true).err();
    });
    let mut groups = Vec::with_capacity(sizes.len());
    let mut it = flat.into_iter();
    for n in sizes {
        let mut g = Vec::with_capacity(n);
        for (_, node, err) in it.by_ref().take(n) {
            if let Some(e) = err {
                return Err(e.into());
            }
            g.push(node);
        }
        groups.push(g);
    }
    let root = assemble(&cfg, rows, groups).ok_or_else(|| ProveError::ShapeMismatch("empty component group".into()))?;

    let stats = ProveStats {
        peak_weight_bytes: loader.peak(),
        nodes: root.count_nodes(),
    };
    let public = PublicIo {
        cfg,
        tokens: tokens.to_vec(),
        logits,
        argmax,
        active,
        model_root,
        input_digest,
        witness_root,
        challenges,
        config_path: tree.open(0)?,
    };
    Ok((ModelProof { public, root }, stats))
}

fn fail(path: impl Into<String>, constraint: impl Into<String>) -> Verdict {
    Verdict::reject(path, constraint)
}

/// Checks `proof` against the published `model_root` and the `tokens` the
/// caller asked about. Failures name the first offending node.
pub fn verify_inference(model_root: &Digest, tokens: &[u32], proof: &ModelProof, mode: Mode) -> Verdict {
    let io = &proof.public;
    let root = &proof.root;
    let cfg = io.cfg;
    if io.model_root != *model_root {
        return fail(MODEL_LABEL, "model-root");
    }
    if !merkle_verify(model_root, 0, &cfg.digest(), &io.config_path) {
        return fail(MODEL_LABEL, "config");
    }
    if io.tokens != tokens || tokens.is_empty() {
        return fail(MODEL_LABEL, "tokens");
    }
    let Ok(tables) = KernelTables::new(cfg.quant) else {
        return fail(MODEL_LABEL, "config");
    };
    let Ok(layout) = Layout::new(&cfg) else {
        return fail(MODEL_LABEL, "config");
    };
    let Ok(graphs) = model_graphs(&cfg, &layout, tokens, &io.active) else {
        return fail(MODEL_LABEL, "structure");
    };
    let rows = tokens.len();
    let n_layers = cfg.n_layers;

    // layout of the tree: embed components, layer nodes, head components
    let head_len = graphs[n_layers + 1].specs.len();
    let embed_len = graphs[0].specs.len();
    if root.level != Level::Model || root.label != MODEL_LABEL || root.opening.is_some() || root.children.len() != embed_len + n_layers + head_len {
        return fail(MODEL_LABEL, "structure");
    }
    let mut jobs: Vec<(String, &ComponentSpec, &ProofNode)> = Vec::new();
    for (spec, node) in graphs[0].specs.iter().zip(&root.children[..embed_len]) {
        jobs.push((String::from(MODEL_LABEL), spec, node));
    }
    for l in 0..n_layers {
        let ln = &root.children[embed_len + l];
        let label = format!("L{l}");
        let path = format!("{MODEL_LABEL}/{label}");
        let specs = &graphs[1 + l].specs;
        if ln.level != Level::Layer || ln.label != label || ln.opening.is_some() || ln.children.len() != specs.len() {
            return fail(path, "structure");
        }
        for (spec, node) in specs.iter().zip(&ln.children) {
            jobs.push((path.clone(), spec, node));
        }
    }
    for (spec, node) in graphs[n_layers + 1].specs.iter().zip(&root.children[embed_len + n_layers..]) {
        jobs.push((String::from(MODEL_LABEL), spec, node));
    }

    let ctx = VerifyCtx {
        model_root: *model_root,
        tables: &tables,
        challenges: io.challenges,
        mode,
    };
    let verdicts = map_range(jobs.len(), |i| {
        let (parent, spec, node) = &jobs[i];
        verify_component(spec, node, &ctx).failure.map(|f| Failure {
            path: join_path(parent, &f.path),
            constraint: f.constraint,
        })
    });
    if let Some(f) = verdicts.into_iter().flatten().next() {
        return Verdict::from_failure(Some(f));
    }

    // every consumed tensor must carry the value its producer claimed
    let mut produced: BTreeMap<&str, FieldElement> = BTreeMap::new();
    for (parent, spec, node) in &jobs {
        for (i, t) in spec.inputs.iter().enumerate() {
            let ok = match (produced.get(t.as_str()), node.claim.inputs.get(i)) {
                (Some(p), Some(c)) => p == c,
                _ => false,
            };
            if !ok {
                return fail(format!("{parent}/{}", spec.name), format!("link:{t}"));
            }
        }
        for (p, t) in spec.outputs.iter().enumerate() {
            let Some(v) = node.claim.outputs.get(p) else {
                return fail(format!("{parent}/{}", spec.name), "structure");
            };
            produced.insert(t, *v);
        }
    }

    for l in 0..n_layers {
        let ln = &root.children[embed_len + l];
        let path = format!("{MODEL_LABEL}/L{l}");
        let want = layer_claim(ln.children.first().expect("checked"), ln.children.last().expect("checked"), rows, cfg.dim);
        if want.as_ref() != Some(&ln.claim) {
            return fail(path, "claim");
        }
        if ln.digest != ln.compute_digest() {
            return fail(path, "digest");
        }
    }
    let n = root.children.len();
    if model_claim(&root.children[n - 2], &root.children[n - 1], rows, cfg.vocab_size).as_ref() != Some(&root.claim) {
        return fail(MODEL_LABEL, "claim");
    }
    if root.digest != root.compute_digest() {
        return fail(MODEL_LABEL, "digest");
    }

    let z = io.challenges.z;
    if io.logits.shape() != (rows, cfg.vocab_size) || Some(&zmul(&io.logits, z)) != root.claim.outputs.first() {
        return fail(MODEL_LABEL, "public-logits");
    }
    if io.argmax.shape() != (rows, 1) || Some(&zmul(&io.argmax, z)) != root.claim.outputs.get(1) {
        return fail(MODEL_LABEL, "public-argmax");
    }

    let Ok(wr) = witness_root(core::iter::once(root)) else {
        return fail(MODEL_LABEL, "witness-root");
    };
    if wr != io.witness_root {
        return fail(MODEL_LABEL, "witness-root");
    }
    if input_digest(tokens) != io.input_digest {
        return fail(MODEL_LABEL, "input-digest");
    }
    if derive_session_challenges(model_root, &io.input_digest, &io.witness_root) != io.challenges {
        return fail(MODEL_LABEL, "challenges");
    }
    Verdict::accept()
}
