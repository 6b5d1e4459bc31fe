//! `veritensor selftest`: a fast invariant suite over a pristine build.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use veritensor_core::commit::gemm_identity_check;
use veritensor_core::field::FieldElement;
use veritensor_core::kernels::{gemm, Grouping};
use veritensor_core::model::{commit_model, dag_shape, decode_proof, encode_proof, prove_inference, toy_weights, verify_inference, ModelConfig};
use veritensor_core::proof::{GemmRhs, Level, Mode, Op};
use veritensor_core::tensor::QTensor;

pub struct Check {
    pub name: &'static str,
    pub ok: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<String, String>) -> Check {
    match f() {
        Ok(detail) => Check { name, ok: true, detail },
        Err(detail) => Check { name, ok: false, detail },
    }
}

fn shapes() -> Result<String, String> {
    let levels = |op: Op| dag_shape(&op).map_err(|e| e.to_string());
    let emb = levels(Op::Embedding {
        tokens: vec![0; 24],
        dim: 7168,
        seg: 224,
        leaf_offset: 0,
    })?;
    if emb != [(Level::Segment, 768), (Level::Row, 24), (Level::Component, 1)] {
        return Err(format!("embedding {emb:?}"));
    }
    let mm = levels(Op::Gemm {
        a: 24,
        n: 7168,
        b: 512,
        seg: 112,
        rhs: GemmRhs::Weight { leaf_offset: 0 },
    })?;
    if !mm.contains(&(Level::XProof, 64)) || !mm.contains(&(Level::WProof, 64)) {
        return Err(format!("gemm {mm:?}"));
    }
    let ex = levels(Op::ExpertSelector {
        rows: 24,
        n_experts: 256,
        grouping: Grouping {
            n_groups: 8,
            per_group_top: 2,
            groups_selected: 4,
            experts_selected: 8,
        },
        active: vec![],
    })?;
    if ex.iter().map(|(_, n)| *n).collect::<Vec<_>>() != [192, 24, 192, 24, 1] {
        return Err(format!("experts {ex:?}"));
    }
    Ok("embedding, gemm, experts".into())
}

fn gemm_identity() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut rand_t = |r, c| QTensor::new(r, c, (0..r * c).map(|_| rng.gen_range(-1000..=1000)).collect()).unwrap();
    for i in 0..50 {
        let x = rand_t(3, 5);
        let w = rand_t(5, 4);
        let y = gemm(&x, &w).map_err(|e| e.to_string())?;
        let z = FieldElement::new(0x9e37_79b9 + i);
        if !gemm_identity_check(&x, &w, &y, z).map_err(|e| e.to_string())? {
            return Err(format!("honest instance {i} rejected"));
        }
        let mut bad = y.clone().into_data();
        bad[(i as usize) % 12] += 1;
        let bad = QTensor::new(3, 4, bad).unwrap();
        if gemm_identity_check(&x, &w, &bad, z).map_err(|e| e.to_string())? {
            return Err(format!("tampered instance {i} accepted"));
        }
    }
    Ok("50 honest, 50 tampered".into())
}

fn toy_round_trip() -> Result<String, String> {
    let cfg = ModelConfig {
        n_layers: 1,
        ..ModelConfig::default()
    };
    let w = toy_weights(&cfg, 5).map_err(|e| e.to_string())?;
    let c = commit_model(&cfg, &w).map_err(|e| e.to_string())?;
    let tokens = [5u32, 200, 17, 5];
    let (proof, _) = prove_inference(&c, &w, &tokens).map_err(|e| e.to_string())?;
    let bytes = encode_proof(&proof);
    let (again, _) = prove_inference(&c, &w, &tokens).map_err(|e| e.to_string())?;
    if encode_proof(&again) != bytes {
        return Err("two runs gave different proofs".into());
    }
    let proof = decode_proof(&bytes).map_err(|e| e.to_string())?;
    for mode in [Mode::Replay, Mode::SpotCheck { fraction: 0.2, seed: 1 }] {
        let v = verify_inference(&c.root(), &tokens, &proof, mode);
        if let Some(f) = v.failure {
            return Err(format!("honest proof rejected at {f}"));
        }
    }
    let mut forged = proof.clone();
    let mut logits = forged.public.logits.clone().into_data();
    logits[3] += 1;
    forged.public.logits = QTensor::new(forged.public.logits.rows(), forged.public.logits.cols(), logits).unwrap();
    let v = verify_inference(&c.root(), &tokens, &forged, Mode::Replay);
    match v.failure {
        Some(f) if !v.accepted => Ok(format!("{} bytes, forged logits rejected at {f}", bytes.len())),
        _ => Err("forged logits accepted".into()),
    }
}

pub fn run() -> Vec<Check> {
    vec![
        check("dag-shapes", shapes),
        check("gemm-identity", gemm_identity),
        check("toy-round-trip", toy_round_trip),
    ]
}
