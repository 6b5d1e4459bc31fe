//! Seeded random parameters at a sensible scale for the toy config.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::ModelError;
use crate::tensor::QTensor;

use super::config::ModelConfig;
use super::layout::{Layout, TensorKind};

/// Uniform entries with variance `1/fan_in`, so activations keep unit scale.
/// Norm scales sit near one, the routing bias near zero, and the query
/// projections carry the `1/sqrt(d)` attention scale.
pub fn toy_weights(cfg: &ModelConfig, seed: u64) -> Result<BTreeMap<String, QTensor>, ModelError> {
    let layout = Layout::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let one = (1i64 << cfg.quant.q) as f64;
    let score_scale = 1.0 / libm::sqrt((cfg.head_dim + cfg.rope_dim) as f64);
    let mut out = BTreeMap::new();
    for e in &layout.entries {
        let short = e.name.rsplit('.').next().unwrap_or(&e.name);
        let (center, amp) = match e.kind {
            TensorKind::Rope => continue,
            TensorKind::Vocab => (0.0, 1.0),
            TensorKind::NormVector => (1.0, 0.1),
            TensorKind::BiasVector => (0.0, 0.05),
            TensorKind::Matrix => {
                // block-diagonal per-head maps only mix within a head
                let fan_in = match short {
                    "wkv_b1" => cfg.head_dim,
                    "wkv_b2" => cfg.kv_lora_rank,
                    _ => e.rows,
                };
                let mut a = libm::sqrt(3.0 / fan_in as f64);
                if short == "wq_b1" || short == "wq_b2" {
                    a *= score_scale;
                }
                (0.0, a)
            }
        };
        let block = match short {
            "wkv_b1" => Some((cfg.head_dim, cfg.kv_lora_rank)),
            "wkv_b2" => Some((cfg.kv_lora_rank, cfg.v_head_dim)),
            _ => None,
        };
        let lo = ((center - amp) * one) as i64;
        let hi = ((center + amp) * one) as i64;
        let mut data = Vec::with_capacity(e.rows * e.cols);
        for r in 0..e.rows {
            for c in 0..e.cols {
                let live = block.is_none_or(|(br, bc)| r / br == c / bc);
                data.push(if live { rng.gen_range(lo..=hi) } else { 0 });
            }
        }
        out.insert(e.name.clone(), QTensor::new(e.rows, e.cols, data)?);
    }
    Ok(out)
}
