use alloc::format;
use alloc::string::String;

use crate::error::ProveError;

use super::eval::{eval_component, join_path, ClaimTree};
use super::node::{Failure, ProofNode, Verdict};
use super::spec::{ComponentSpec, VerifyCtx};

/// Post-order search for the first node whose recomputed claim, constraint
/// or digest disagrees with what the proof stores.
pub fn first_failure(node: &ProofNode, tree: &ClaimTree, parent: &str) -> Option<Failure> {
    let path = join_path(parent, &node.label);
    if node.children.len() == tree.children.len() {
        for (c, t) in node.children.iter().zip(&tree.children) {
            if let Some(f) = first_failure(c, t, &path) {
                return Some(f);
            }
        }
    }
    let constraint = if let Some(f) = tree.fail {
        f
    } else if node.claim != tree.claim {
        "claim"
    } else if node.digest != node.compute_digest() {
        "digest"
    } else {
        return None;
    };
    Some(Failure {
        path,
        constraint: constraint.into(),
    })
}

fn first_violation(tree: &ClaimTree, node: &ProofNode, parent: &str) -> Option<String> {
    let path = join_path(parent, &node.label);
    for (c, t) in node.children.iter().zip(&tree.children) {
        if let Some(v) = first_violation(t, c, &path) {
            return Some(v);
        }
    }
    tree.fail.map(|f| format!("{path}: {f}"))
}

fn write_claims(node: &mut ProofNode, tree: ClaimTree) {
    node.claim = tree.claim;
    for (c, t) in node.children.iter_mut().zip(tree.children) {
        write_claims(c, t);
    }
}

/// Fills every claim of an unsealed component from its openings and hashes
/// the tree. With `strict`, any failing constraint aborts instead.
pub fn seal_component(spec: &ComponentSpec, node: &mut ProofNode, ctx: &VerifyCtx, strict: bool) -> Result<(), ProveError> {
    let tree = eval_component(spec, node, ctx);
    if strict {
        if let Some(v) = first_violation(&tree, node, "") {
            return Err(ProveError::ConstraintViolation(v));
        }
    }
    write_claims(node, tree);
    node.rehash();
    Ok(())
}

pub fn verify_component(spec: &ComponentSpec, node: &ProofNode, ctx: &VerifyCtx) -> Verdict {
    let tree = eval_component(spec, node, ctx);
    Verdict::from_failure(first_failure(node, &tree, ""))
}
