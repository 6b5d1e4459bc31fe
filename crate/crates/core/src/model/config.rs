use alloc::format;

use crate::commit::{Digest, Hasher};
use crate::error::ModelError;
use crate::fixed::QuantConfig;
use crate::kernels::Grouping;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MoeConfig {
    pub n_experts: usize,
    pub n_shared: usize,
    pub grouping: Grouping,
    /// Hidden width of every expert MLP.
    pub inter_dim: usize,
}

/// Segment width per component family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SegmentDims {
    pub embed: usize,
    pub norm: usize,
    pub gemm: usize,
    pub softmax: usize,
    pub act: usize,
    pub elem: usize,
}

impl Default for SegmentDims {
    fn default() -> Self {
        Self {
            embed: 16,
            norm: 16,
            gemm: 16,
            softmax: 8,
            act: 16,
            elem: 16,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Per-head query/key width without positional information.
    pub head_dim: usize,
    pub rope_dim: usize,
    pub v_head_dim: usize,
    pub q_lora_rank: usize,
    pub kv_lora_rank: usize,
    pub vocab_size: usize,
    pub max_pos: usize,
    pub rope_theta: u32,
    pub rope_scale_bits: u32,
    pub moe: MoeConfig,
    pub quant: QuantConfig,
    pub segments: SegmentDims,
}

impl Default for ModelConfig {
    /// The toy configuration: small enough to prove in seconds, yet every
    /// component kind appears.
    fn default() -> Self {
        Self {
            dim: 64,
            n_layers: 2,
            n_heads: 4,
            head_dim: 16,
            rope_dim: 8,
            v_head_dim: 16,
            q_lora_rank: 32,
            kv_lora_rank: 16,
            vocab_size: 256,
            max_pos: 64,
            rope_theta: 10_000,
            rope_scale_bits: 20,
            moe: MoeConfig {
                n_experts: 16,
                n_shared: 1,
                grouping: Grouping {
                    n_groups: 4,
                    per_group_top: 1,
                    groups_selected: 2,
                    experts_selected: 4,
                },
                inter_dim: 32,
            },
            quant: QuantConfig::default(),
            segments: SegmentDims::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::BadConfig(m.into()));
        let dims = [
            self.dim,
            self.n_layers,
            self.n_heads,
            self.head_dim,
            self.rope_dim,
            self.v_head_dim,
            self.q_lora_rank,
            self.kv_lora_rank,
            self.vocab_size,
            self.max_pos,
            self.moe.inter_dim,
        ];
        if dims.contains(&0) {
            return bad("all dimensions must be at least 1");
        }
        let s = &self.segments;
        if [s.embed, s.norm, s.gemm, s.softmax, s.act, s.elem].contains(&0) {
            return bad("segment widths must be at least 1");
        }
        if !self.head_dim.is_multiple_of(2) || !self.rope_dim.is_multiple_of(2) {
            return bad("head_dim and rope_dim must be even");
        }
        if !(1..=40).contains(&self.rope_scale_bits) {
            return bad("rope_scale_bits must be in 1..=40");
        }
        self.moe
            .grouping
            .validate(self.moe.n_experts)
            .map_err(|e| ModelError::BadConfig(format!("{e}")))?;
        self.quant.validate().map_err(|e| ModelError::BadConfig(format!("{e}")))?;
        Ok(())
    }

    /// Leaf 0 of the model commitment.
    pub fn digest(&self) -> Digest {
        let mut h = Hasher::new("VT-CONFIG");
        for v in [
            self.dim,
            self.n_layers,
            self.n_heads,
            self.head_dim,
            self.rope_dim,
            self.v_head_dim,
            self.q_lora_rank,
            self.kv_lora_rank,
            self.vocab_size,
            self.max_pos,
            self.rope_theta as usize,
            self.rope_scale_bits as usize,
            self.moe.n_experts,
            self.moe.n_shared,
            self.moe.grouping.n_groups,
            self.moe.grouping.per_group_top,
            self.moe.grouping.groups_selected,
            self.moe.grouping.experts_selected,
            self.moe.inter_dim,
            self.quant.q as usize,
            self.quant.l as usize,
            self.segments.embed,
            self.segments.norm,
            self.segments.gemm,
            self.segments.softmax,
            self.segments.act,
            self.segments.elem,
        ] {
            h.u64(v as u64);
        }
        h.i128(self.quant.neg_inf_q as i128);
        h.finish()
    }
}
