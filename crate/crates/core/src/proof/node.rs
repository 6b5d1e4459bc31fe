use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::commit::{hash_digests, AuthPath, Digest, Hasher};
use crate::error::ProveError;
use crate::field::FieldElement;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[repr(u8)]
pub enum Level {
    Segment = 0,
    Head = 1,
    Row = 2,
    Component = 3,
    Layer = 4,
    Model = 5,
    XProof = 6,
    WProof = 7,
    XwProof = 8,
    Group = 9,
    GroupRow = 10,
    SortedGroup = 11,
    SortedGroupRow = 12,
}

impl Level {
    pub const ALL: [Level; 13] = [
        Level::Segment,
        Level::Head,
        Level::Row,
        Level::Component,
        Level::Layer,
        Level::Model,
        Level::XProof,
        Level::WProof,
        Level::XwProof,
        Level::Group,
        Level::GroupRow,
        Level::SortedGroup,
        Level::SortedGroupRow,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Level::Segment => "segment",
            Level::Head => "head",
            Level::Row => "row",
            Level::Component => "component",
            Level::Layer => "layer",
            Level::Model => "model",
            Level::XProof => "XProof",
            Level::WProof => "WProof",
            Level::XwProof => "XWProof",
            Level::Group => "group",
            Level::GroupRow => "groupRow",
            Level::SortedGroup => "sortedGroup",
            Level::SortedGroupRow => "sortedGroupRow",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Component type a claim speaks for.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[repr(u8)]
pub enum Kind {
    #[default]
    Embedding = 0,
    Gemm = 1,
    Rescale = 2,
    RmsNorm = 3,
    Rope = 4,
    Softmax = 5,
    Sigmoid = 6,
    Silu = 7,
    ElemAdd = 8,
    ElemMul = 9,
    TopK = 10,
    ExpertSelector = 11,
    Layer = 12,
    Model = 13,
}

impl Kind {
    pub const ALL: [Kind; 14] = [
        Kind::Embedding,
        Kind::Gemm,
        Kind::Rescale,
        Kind::RmsNorm,
        Kind::Rope,
        Kind::Softmax,
        Kind::Sigmoid,
        Kind::Silu,
        Kind::ElemAdd,
        Kind::ElemMul,
        Kind::TopK,
        Kind::ExpertSelector,
        Kind::Layer,
        Kind::Model,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }
}

/// Auxiliary accumulator carried up the tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Aux {
    /// Integer sums (sum of squares, softmax weights, group scores).
    Sum(i128),
    /// Field products (characteristic polynomials at `t`).
    Prod(FieldElement),
}

/// Bounding box `[row0, row1) x [col0, col1)` of the entries a claim covers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Span {
    pub row0: u64,
    pub row1: u64,
    pub col0: u64,
    pub col1: u64,
}

impl Span {
    pub fn new(rows: (usize, usize), cols: (usize, usize)) -> Self {
        Self {
            row0: rows.0 as u64,
            row1: rows.1 as u64,
            col0: cols.0 as u64,
            col1: cols.1 as u64,
        }
    }

    fn is_empty(&self) -> bool {
        self.row0 == self.row1 && self.col0 == self.col1
    }

    pub fn union(&self, o: &Span) -> Span {
        if self.is_empty() {
            return *o;
        }
        if o.is_empty() {
            return *self;
        }
        Span {
            row0: self.row0.min(o.row0),
            row1: self.row1.max(o.row1),
            col0: self.col0.min(o.col0),
            col1: self.col1.max(o.col1),
        }
    }
}

/// The public assertion a node makes. `inputs` and `outputs` hold ZMul
/// contributions per port; for a component root they are the ZMul values of
/// whole tensors.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Claim {
    pub kind: Kind,
    pub inputs: Vec<FieldElement>,
    pub outputs: Vec<FieldElement>,
    /// Per-index ZMulCol or ZMulRow contributions inside one GeMM block.
    pub vector: Vec<FieldElement>,
    pub weight_digest: Option<Digest>,
    pub aux: Vec<Aux>,
    pub span: Span,
}

pub const WEIGHT_MERGE_TAG: &str = "VT-WMERGE";

fn add_into(acc: &mut Vec<FieldElement>, v: &[FieldElement]) -> bool {
    if acc.is_empty() {
        acc.extend_from_slice(v);
        return true;
    }
    if acc.len() != v.len() {
        return false;
    }
    acc.iter_mut().zip(v).for_each(|(a, &b)| *a += b);
    true
}

impl Claim {
    /// Sums ports, vectors and aux positionally, hashes child weight digests
    /// under `digest_tag` and unions spans. `None` if the children disagree
    /// on port counts or aux layout.
    pub fn combine(kind: Kind, children: &[&Claim], digest_tag: &str) -> Option<Claim> {
        let mut out = Claim {
            kind,
            ..Claim::default()
        };
        let mut digests = Vec::new();
        let mut any_digest = false;
        for (n, c) in children.iter().enumerate() {
            if c.kind != kind {
                return None;
            }
            if n > 0 && (c.inputs.len() != out.inputs.len() || c.outputs.len() != out.outputs.len()) {
                return None;
            }
            let ok = add_into(&mut out.inputs, &c.inputs)
                && add_into(&mut out.outputs, &c.outputs)
                && add_into(&mut out.vector, &c.vector);
            if !ok {
                return None;
            }
            if n == 0 {
                out.aux = c.aux.clone();
            } else {
                if c.aux.len() != out.aux.len() {
                    return None;
                }
                for (a, b) in out.aux.iter_mut().zip(&c.aux) {
                    *a = match (*a, *b) {
                        (Aux::Sum(x), Aux::Sum(y)) => Aux::Sum(x.wrapping_add(y)),
                        (Aux::Prod(x), Aux::Prod(y)) => Aux::Prod(x * y),
                        _ => return None,
                    };
                }
            }
            any_digest |= c.weight_digest.is_some();
            digests.push(c.weight_digest.unwrap_or(Digest::SENTINEL));
            out.span = out.span.union(&c.span);
        }
        if any_digest {
            out.weight_digest = Some(hash_digests(digest_tag, &digests));
        }
        Some(out)
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.push(self.kind as u8);
        for list in [&self.inputs, &self.outputs, &self.vector] {
            out.extend_from_slice(&(list.len() as u32).to_le_bytes());
            for f in list.iter() {
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
        match &self.weight_digest {
            Some(d) => {
                out.push(1);
                out.extend_from_slice(&d.0);
            }
            None => out.push(0),
        }
        out.extend_from_slice(&(self.aux.len() as u32).to_le_bytes());
        for a in &self.aux {
            match a {
                Aux::Sum(v) => {
                    out.push(0);
                    out.extend_from_slice(&v.to_le_bytes());
                }
                Aux::Prod(f) => {
                    out.push(1);
                    out.extend_from_slice(&f.to_le_bytes());
                }
            }
        }
        for v in [self.span.row0, self.span.row1, self.span.col0, self.span.col1] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

/// Raw witness values a node exposes for replay.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Opening {
    pub lanes: Vec<Vec<i64>>,
    pub scalars: Vec<i128>,
    /// `(leaf index, path)` pairs into the model commitment.
    pub paths: Vec<(u64, AuthPath)>,
}

impl Opening {
    pub fn lanes(lanes: Vec<Vec<i64>>) -> Self {
        Self {
            lanes,
            ..Self::default()
        }
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.lanes.len() as u32).to_le_bytes());
        for lane in &self.lanes {
            out.extend_from_slice(&(lane.len() as u32).to_le_bytes());
            for v in lane {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.scalars.len() as u32).to_le_bytes());
        for s in &self.scalars {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.extend_from_slice(&(self.paths.len() as u32).to_le_bytes());
        for (idx, path) in &self.paths {
            out.extend_from_slice(&idx.to_le_bytes());
            out.extend_from_slice(&(path.siblings.len() as u32).to_le_bytes());
            for d in &path.siblings {
                out.extend_from_slice(&d.0);
            }
        }
    }

    pub fn digest(&self) -> Digest {
        let mut buf = Vec::new();
        self.encode(&mut buf);
        let mut h = Hasher::new("VT-OPEN");
        h.bytes(&buf);
        h.finish()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProofNode {
    pub level: Level,
    pub label: String,
    pub claim: Claim,
    pub opening: Option<Opening>,
    pub children: Vec<ProofNode>,
    pub digest: Digest,
}

impl ProofNode {
    /// A node whose claim and digest are filled in later by sealing.
    pub fn new(level: Level, kind: Kind, label: impl Into<String>, opening: Option<Opening>, children: Vec<ProofNode>) -> Self {
        Self {
            level,
            label: label.into(),
            claim: Claim {
                kind,
                ..Claim::default()
            },
            opening,
            children,
            digest: Digest::SENTINEL,
        }
    }

    /// `H(level || label || claim || opening digest || child digests)`.
    pub fn compute_digest(&self) -> Digest {
        let mut buf = Vec::with_capacity(128);
        buf.push(self.level as u8);
        buf.extend_from_slice(&(self.label.len() as u32).to_le_bytes());
        buf.extend_from_slice(self.label.as_bytes());
        self.claim.encode(&mut buf);
        let open = self.opening.as_ref().map_or(Digest::SENTINEL, Opening::digest);
        let mut h = Hasher::new("VT-NODE");
        h.bytes(&buf).digest(&open).u64(self.children.len() as u64);
        for c in &self.children {
            h.digest(&c.digest);
        }
        h.finish()
    }

    /// Recomputes digests bottom-up.
    pub fn rehash(&mut self) {
        for c in &mut self.children {
            c.rehash();
        }
        self.digest = self.compute_digest();
    }

    pub fn count_nodes(&self) -> usize {
        1 + self.children.iter().map(ProofNode::count_nodes).sum::<usize>()
    }

    /// Node counts per level over the whole subtree.
    pub fn level_counts(&self) -> Vec<(Level, usize)> {
        let mut counts = [0usize; 13];
        fn walk(n: &ProofNode, counts: &mut [usize; 13]) {
            counts[n.level as usize] += 1;
            n.children.iter().for_each(|c| walk(c, counts));
        }
        walk(self, &mut counts);
        Level::ALL
            .iter()
            .filter(|l| counts[**l as usize] > 0)
            .map(|&l| (l, counts[l as usize]))
            .collect()
    }

    /// Depth-first visit of every opening, in the order used for the
    /// witness root.
    pub fn for_each_opening<'a>(&'a self, f: &mut impl FnMut(&'a Opening)) {
        if let Some(o) = &self.opening {
            f(o);
        }
        for c in &self.children {
            c.for_each_opening(f);
        }
    }

    pub fn for_each_opening_mut(&mut self, f: &mut impl FnMut(&mut Opening)) {
        if let Some(o) = &mut self.opening {
            f(o);
        }
        for c in &mut self.children {
            c.for_each_opening_mut(f);
        }
    }
}

/// Builds a `level` node over `children` with the combined claim.
pub fn merge_all(level: Level, label: impl Into<String>, children: Vec<ProofNode>) -> Result<ProofNode, ProveError> {
    let kind = children
        .first()
        .map(|c| c.claim.kind)
        .ok_or_else(|| ProveError::IncompatibleNodes("nothing to merge".into()))?;
    let refs: Vec<&Claim> = children.iter().map(|c| &c.claim).collect();
    let claim = Claim::combine(kind, &refs, WEIGHT_MERGE_TAG)
        .ok_or_else(|| ProveError::IncompatibleNodes("claims disagree on ports or aux layout".into()))?;
    let mut node = ProofNode {
        level,
        label: label.into(),
        claim,
        opening: None,
        children,
        digest: Digest::SENTINEL,
    };
    node.digest = node.compute_digest();
    Ok(node)
}

/// Merges `right` into a `level` parent. If `left` already is such a parent
/// `right` is appended to it, so repeated merges build the canonical
/// left-to-right node over all pieces.
pub fn merge(left: ProofNode, right: ProofNode, level: Level, label: &str) -> Result<ProofNode, ProveError> {
    if left.claim.kind != right.claim.kind {
        return Err(ProveError::IncompatibleNodes(alloc::format!(
            "{:?} with {:?}",
            left.claim.kind,
            right.claim.kind
        )));
    }
    if left.level == level && left.opening.is_none() && right.level != level {
        let mut children = left.children;
        children.push(right);
        return merge_all(level, left.label, children);
    }
    if left.level != right.level || left.level == level {
        return Err(ProveError::IncompatibleNodes(alloc::format!(
            "{} with {} under {}",
            left.level,
            right.level,
            level
        )));
    }
    merge_all(level, label, alloc::vec![left, right])
}

/// Where verification stopped and which constraint failed.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Failure {
    pub path: String,
    pub constraint: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.constraint)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Verdict {
    pub accepted: bool,
    pub failure: Option<Failure>,
}

impl Verdict {
    pub fn accept() -> Self {
        Self {
            accepted: true,
            failure: None,
        }
    }

    pub fn reject(path: impl Into<String>, constraint: impl Into<String>) -> Self {
        Self {
            accepted: false,
            failure: Some(Failure {
                path: path.into(),
                constraint: constraint.into(),
            }),
        }
    }

    pub fn from_failure(f: Option<Failure>) -> Self {
        Self {
            accepted: f.is_none(),
            failure: f,
        }
    }
}
