//! Proof composition: node trees per component, their replay, and sealing.

mod build;
mod eval;
mod node;
mod spec;
mod verify;

pub use build::{
    build_component, gemm_weight_leaves, prove_component, prove_gemm, prove_gemm_activation, prove_topk, rope_leaves, vector_leaves,
    vocab_row_leaf, Witness,
};
pub use eval::{eval_component, index_bits, join_path, sort_tag, tag_index, tag_value, ClaimTree, ROPE_TAG, VROW_TAG, VSEG_TAG, WSEG_TAG};
pub use node::{merge, merge_all, Aux, Claim, Failure, Kind, Level, Opening, ProofNode, Span, Verdict, WEIGHT_MERGE_TAG};
pub use spec::{ComponentSpec, ElemOp, GemmRhs, Layout, Mode, Op, Operand, VerifyCtx};
pub use verify::{first_failure, seal_component, verify_component};

#[cfg(test)]
mod tests;
