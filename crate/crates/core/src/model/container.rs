//! Binary proof container.
//!
//! ```text
//! "VTPF" | version u16 | modulus u64 | q u32 | l u32
//! public section
//! nodes, depth first: level u8 | label | claim | opening? | digest | child count u32
//! ```
//! All integers little-endian. Decoding errors name the node being read.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::commit::{AuthPath, Digest};
use crate::error::ModelError;
use crate::field::{FieldElement, MODULUS};
use crate::fixed::QuantConfig;
use crate::kernels::Grouping;
use crate::proof::{join_path, Aux, Claim, Kind, Level, Opening, ProofNode, Span};
use crate::tensor::QTensor;
use crate::transcript::Challenges;

use super::config::{ModelConfig, MoeConfig, SegmentDims};
use super::prove::{ModelProof, PublicIo};

pub const MAGIC: &[u8; 4] = b"VTPF";
pub const VERSION: u16 = 1;
const MAX_DEPTH: usize = 16;

struct W(Vec<u8>);

impl W {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn digest(&mut self, d: &Digest) {
        self.0.extend_from_slice(&d.0);
    }
    fn tensor(&mut self, t: &QTensor) {
        self.u32(t.rows());
        self.u32(t.cols());
        for v in t.data() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn cfg_words(c: &ModelConfig) -> [u64; 27] {
    let g = c.moe.grouping;
    let s = c.segments;
    [
        c.dim,
        c.n_layers,
        c.n_heads,
        c.head_dim,
        c.rope_dim,
        c.v_head_dim,
        c.q_lora_rank,
        c.kv_lora_rank,
        c.vocab_size,
        c.max_pos,
        c.rope_theta as usize,
        c.rope_scale_bits as usize,
        c.moe.n_experts,
        c.moe.n_shared,
        g.n_groups,
        g.per_group_top,
        g.groups_selected,
        g.experts_selected,
        c.moe.inter_dim,
        c.quant.q as usize,
        c.quant.l as usize,
        s.embed,
        s.norm,
        s.gemm,
        s.softmax,
        s.act,
        s.elem,
    ]
    .map(|v| v as u64)
}

fn encode_node(w: &mut W, n: &ProofNode) {
    w.u8(n.level as u8);
    w.u32(n.label.len());
    w.0.extend_from_slice(n.label.as_bytes());
    n.claim.encode(&mut w.0);
    match &n.opening {
        Some(o) => {
            w.u8(1);
            o.encode(&mut w.0);
        }
        None => w.u8(0),
    }
    w.digest(&n.digest);
    w.u32(n.children.len());
    for c in &n.children {
        encode_node(w, c);
    }
}

pub fn encode_proof(p: &ModelProof) -> Vec<u8> {
    let io = &p.public;
    let mut w = W(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.0.extend_from_slice(&VERSION.to_le_bytes());
    w.u64(MODULUS);
    w.u32(io.cfg.quant.q as usize);
    w.u32(io.cfg.quant.l as usize);
    for v in cfg_words(&io.cfg) {
        w.u64(v);
    }
    w.u64(io.cfg.quant.neg_inf_q as u64);
    w.u32(io.tokens.len());
    for &t in &io.tokens {
        w.u32(t as usize);
    }
    w.tensor(&io.logits);
    w.tensor(&io.argmax);
    w.u32(io.active.len());
    for a in &io.active {
        w.u32(a.len());
        for &e in a {
            w.u32(e);
        }
    }
    for d in [&io.model_root, &io.input_digest, &io.witness_root] {
        w.digest(d);
    }
    w.u64(io.challenges.z.value());
    w.u64(io.challenges.t.value());
    w.u32(io.config_path.siblings.len());
    for d in &io.config_path.siblings {
        w.digest(d);
    }
    encode_node(&mut w, &p.root);
    w.0
}

struct R<'a> {
    buf: &'a [u8],
    pos: usize,
    at: String,
}

type Res<T> = Result<T, ModelError>;

impl<'a> R<'a> {
    fn err<T>(&self, reason: &str) -> Res<T> {
        Err(ModelError::Container {
            at: self.at.clone(),
            reason: format!("{reason} (byte {})", self.pos),
        })
    }
    fn take(&mut self, n: usize) -> Res<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return self.err("truncated");
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn arr<const N: usize>(&mut self) -> Res<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Res<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Res<u32> {
        Ok(u32::from_le_bytes(self.arr()?))
    }
    fn u64(&mut self) -> Res<u64> {
        Ok(u64::from_le_bytes(self.arr()?))
    }
    fn usize(&mut self) -> Res<usize> {
        Ok(self.u64()? as usize)
    }
    /// A count whose items take at least `item` bytes each.
    fn count(&mut self, item: usize) -> Res<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(item.max(1)) > self.buf.len() - self.pos {
            return self.err("count exceeds remaining bytes");
        }
        Ok(n)
    }
    fn digest(&mut self) -> Res<Digest> {
        Ok(Digest(self.arr()?))
    }
    fn field(&mut self) -> Res<FieldElement> {
        let v = self.u64()?;
        match FieldElement::from_canonical(v) {
            Ok(f) => Ok(f),
            Err(_) => self.err("non-canonical field element"),
        }
    }
    fn i64s(&mut self) -> Res<Vec<i64>> {
        let n = self.count(8)?;
        (0..n).map(|_| Ok(i64::from_le_bytes(self.arr()?))).collect()
    }
    fn tensor(&mut self) -> Res<QTensor> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let len = rows.saturating_mul(cols);
        if len.saturating_mul(8) > self.buf.len() - self.pos {
            return self.err("tensor exceeds remaining bytes");
        }
        let data = (0..len).map(|_| Ok(i64::from_le_bytes(self.arr()?))).collect::<Res<Vec<_>>>()?;
        match QTensor::new(rows, cols, data) {
            Ok(t) => Ok(t),
            Err(_) => self.err("tensor entry outside the window"),
        }
    }
    fn fields(&mut self) -> Res<Vec<FieldElement>> {
        let n = self.count(8)?;
        (0..n).map(|_| self.field()).collect()
    }

    fn claim(&mut self) -> Res<Claim> {
        let Some(kind) = Kind::from_u8(self.u8()?) else {
            return self.err("unknown claim kind");
        };
        let inputs = self.fields()?;
        let outputs = self.fields()?;
        let vector = self.fields()?;
        let weight_digest = match self.u8()? {
            0 => None,
            1 => Some(self.digest()?),
            _ => return self.err("bad weight digest flag"),
        };
        let n = self.count(9)?;
        let mut aux = Vec::with_capacity(n);
        for _ in 0..n {
            aux.push(match self.u8()? {
                0 => Aux::Sum(i128::from_le_bytes(self.arr()?)),
                1 => Aux::Prod(self.field()?),
                _ => return self.err("bad aux tag"),
            });
        }
        let span = Span {
            row0: self.u64()?,
            row1: self.u64()?,
            col0: self.u64()?,
            col1: self.u64()?,
        };
        Ok(Claim {
            kind,
            inputs,
            outputs,
            vector,
            weight_digest,
            aux,
            span,
        })
    }

    fn opening(&mut self) -> Res<Opening> {
        let n = self.count(4)?;
        let lanes = (0..n).map(|_| self.i64s()).collect::<Res<Vec<_>>>()?;
        let n = self.count(16)?;
        let scalars = (0..n).map(|_| Ok(i128::from_le_bytes(self.arr()?))).collect::<Res<Vec<_>>>()?;
        let n = self.count(12)?;
        let mut paths = Vec::with_capacity(n);
        for _ in 0..n {
            let idx = self.u64()?;
            let m = self.count(32)?;
            let siblings = (0..m).map(|_| self.digest()).collect::<Res<Vec<_>>>()?;
            paths.push((idx, AuthPath { siblings }));
        }
        Ok(Opening { lanes, scalars, paths })
    }

    fn node(&mut self, parent: &str, depth: usize) -> Res<ProofNode> {
        if depth > MAX_DEPTH {
            return self.err("nesting too deep");
        }
        let Some(level) = Level::from_u8(self.u8()?) else {
            return self.err("unknown level");
        };
        let n = self.count(1)?;
        let label = match core::str::from_utf8(self.take(n)?) {
            Ok(s) => String::from(s),
            Err(_) => return self.err("label is not UTF-8"),
        };
        let path = join_path(parent, &label);
        self.at = path.clone();
        let claim = self.claim()?;
        let opening = match self.u8()? {
            0 => None,
            1 => Some(self.opening()?),
            _ => return self.err("bad opening flag"),
        };
        let digest = self.digest()?;
        let n = self.count(1)?;
        let mut children = Vec::with_capacity(n);
        for _ in 0..n {
            children.push(self.node(&path, depth + 1)?);
        }
        Ok(ProofNode {
            level,
            label,
            claim,
            opening,
            children,
            digest,
        })
    }
}

fn usize_words(r: &mut R) -> Res<[usize; 27]> {
    let mut w = [0usize; 27];
    for v in &mut w {
        *v = r.usize()?;
    }
    Ok(w)
}

pub fn decode_proof(buf: &[u8]) -> Result<ModelProof, ModelError> {
    let mut r = R {
        buf,
        pos: 0,
        at: "header".into(),
    };
    if r.take(4)? != MAGIC {
        return r.err("bad magic");
    }
    if u16::from_le_bytes(r.arr()?) != VERSION {
        return r.err("unsupported version");
    }
    if r.u64()? != MODULUS {
        return r.err("unsupported field modulus");
    }
    let (q, l) = (r.u32()?, r.u32()?);
    r.at = "public".into();
    let w = usize_words(&mut r)?;
    let neg_inf_q = r.u64()? as i64;
    let cfg = ModelConfig {
        dim: w[0],
        n_layers: w[1],
        n_heads: w[2],
        head_dim: w[3],
        rope_dim: w[4],
        v_head_dim: w[5],
        q_lora_rank: w[6],
        kv_lora_rank: w[7],
        vocab_size: w[8],
        max_pos: w[9],
        rope_theta: w[10] as u32,
        rope_scale_bits: w[11] as u32,
        moe: MoeConfig {
            n_experts: w[12],
            n_shared: w[13],
            grouping: Grouping {
                n_groups: w[14],
                per_group_top: w[15],
                groups_selected: w[16],
                experts_selected: w[17],
            },
            inter_dim: w[18],
        },
        quant: QuantConfig {
            q: w[19] as u32,
            l: w[20] as u32,
            neg_inf_q,
        },
        segments: SegmentDims {
            embed: w[21],
            norm: w[22],
            gemm: w[23],
            softmax: w[24],
            act: w[25],
            elem: w[26],
        },
    };
    if cfg_words(&cfg).iter().zip(&w).any(|(a, &b)| *a != b as u64) || (cfg.quant.q, cfg.quant.l) != (q, l) {
        return r.err("config disagrees with header");
    }
    let n = r.count(4)?;
    let tokens = (0..n).map(|_| r.u32()).collect::<Res<Vec<_>>>()?;
    let logits = r.tensor()?;
    let argmax = r.tensor()?;
    let n = r.count(4)?;
    let mut active = Vec::with_capacity(n);
    for _ in 0..n {
        let m = r.count(4)?;
        active.push((0..m).map(|_| Ok(r.u32()? as usize)).collect::<Res<Vec<_>>>()?);
    }
    let model_root = r.digest()?;
    let input_digest = r.digest()?;
    let witness_root = r.digest()?;
    let challenges = Challenges {
        z: r.field()?,
        t: r.field()?,
    };
    let n = r.count(32)?;
    let config_path = AuthPath {
        siblings: (0..n).map(|_| r.digest()).collect::<Res<Vec<_>>>()?,
    };
    let root = r.node("", 0)?;
    if r.pos != buf.len() {
        r.at = "trailer".into();
        return r.err("trailing bytes");
    }
    Ok(ModelProof {
        public: PublicIo {
            cfg,
            tokens,
            logits,
            argmax,
            active,
            model_root,
            input_digest,
            witness_root,
            challenges,
            config_path,
        },
        root,
    })
}
