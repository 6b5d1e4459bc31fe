//! The MLA + MoE decoder: parameter layout and commitment, component graphs,
//! streamed integer inference and whole-model proofs.

mod config;
mod container;
mod forward;
mod graph;
mod layout;
mod prove;
#[cfg(any(test, feature = "toy"))]
mod toy;

pub use config::{ModelConfig, MoeConfig, SegmentDims};
pub use container::{decode_proof, encode_proof, MAGIC, VERSION};
pub use forward::{Fwd, LayerCache, ModelState, Output, Tape, Trace};
pub use graph::{
    build_mla_graph, build_moe_graph, dag_shape, embed_graph, gate_column, head_graph, layer_graph, raw_name, rescale_name, ComponentGraph,
    GraphAudit,
};
pub use layout::{
    commit_model, expert_prefix, layer_prefix, rope_table, shared_prefix, tensor_leaves, Commitment, Layout, Loader, TensorEntry, TensorKind,
    WeightStore,
};
pub use prove::{input_digest, model_graphs, prove_inference, verify_inference, ModelProof, ProveStats, PublicIo, MODEL_LABEL};
#[cfg(any(test, feature = "toy"))]
pub use toy::toy_weights;

#[cfg(test)]
mod tests;
