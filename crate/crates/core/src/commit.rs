//! ZMul encodings and the hash commitments that anchor every claim.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use sha2::{Digest as _, Sha256};

use crate::error::CommitError;
use crate::field::{embed_unchecked, FieldElement};
use crate::tensor::{QInt, QTensor};

/// A 32-byte SHA-256 output.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Digest(#[cfg_attr(feature = "serde", serde(with = "hex::serde"))] pub [u8; 32]);

impl Digest {
    /// All-zero digest used as the Merkle odd-node sibling.
    pub const SENTINEL: Self = Self([0; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Self(out))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Incremental hasher with the framing conventions used everywhere.
#[derive(Clone, Default)]
pub struct Hasher(Sha256);

impl Hasher {
    pub fn new(tag: &str) -> Self {
        let mut h = Self(Sha256::new());
        h.bytes(tag.as_bytes());
        h
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.0.update(b);
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn i128(&mut self, v: i128) -> &mut Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn field(&mut self, f: FieldElement) -> &mut Self {
        self.bytes(&f.to_le_bytes())
    }

    pub fn digest(&mut self, d: &Digest) -> &mut Self {
        self.bytes(&d.0)
    }

    pub fn finish(self) -> Digest {
        Digest(self.0.finalize().into())
    }
}

/// `H(tag || count || values as canonical field encodings)`.
pub fn hash_segment(tag: &str, values: &[QInt]) -> Digest {
    let mut h = Hasher::new(tag);
    h.u64(values.len() as u64);
    for &v in values {
        h.field(embed_unchecked(v));
    }
    h.finish()
}

/// `H(tag || count || digests)`.
pub fn hash_digests(tag: &str, digests: &[Digest]) -> Digest {
    let mut h = Hasher::new(tag);
    h.u64(digests.len() as u64);
    for d in digests {
        h.digest(d);
    }
    h.finish()
}

/// `sum_m z^(e0 + m*stride) * v_m`: the contribution of a strided run of
/// entries to the ZMul of the tensor they live in.
pub fn zmul_strided(values: &[QInt], z: FieldElement, e0: u64, stride: u64) -> FieldElement {
    let zs = z.pow(stride);
    let mut acc = FieldElement::ZERO;
    for &v in values.iter().rev() {
        acc = acc * zs + embed_unchecked(v);
    }
    acc * z.pow(e0)
}

/// `sum_{i,j} z^(i*b + j) * M[i][j]`.
pub fn zmul(m: &QTensor, z: FieldElement) -> FieldElement {
    zmul_strided(m.data(), z, 0, 1)
}

/// `col_k = sum_i z^(i*b_out) * X[i][k]`.
pub fn zmul_col(x: &QTensor, z: FieldElement, b_out: usize) -> Vec<FieldElement> {
    let zb = z.pow(b_out as u64);
    let mut out = alloc::vec![FieldElement::ZERO; x.cols()];
    for i in (0..x.rows()).rev() {
        for (slot, &v) in out.iter_mut().zip(x.row(i)) {
            *slot = *slot * zb + embed_unchecked(v);
        }
    }
    out
}

/// `row_k = sum_j z^j * W[k][j]`.
pub fn zmul_row(w: &QTensor, z: FieldElement) -> Vec<FieldElement> {
    (0..w.rows()).map(|k| zmul_strided(w.row(k), z, 0, 1)).collect()
}

pub fn inner_product(a: &[FieldElement], b: &[FieldElement]) -> FieldElement {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// `<ZMulCol(X), ZMulRow(W)> == ZMul(Y)`.
pub fn gemm_identity_check(x: &QTensor, w: &QTensor, y: &QTensor, z: FieldElement) -> Result<bool, CommitError> {
    if x.cols() != w.rows() || y.shape() != (x.rows(), w.cols()) {
        return Err(CommitError::ShapeMismatch(alloc::format!(
            "{:?} * {:?} -> {:?}",
            x.shape(),
            w.shape(),
            y.shape()
        )));
    }
    let lhs = inner_product(&zmul_col(x, z, w.cols()), &zmul_row(w, z));
    Ok(lhs == zmul(y, z))
}

const NODE_TAG: &str = "VT-MERKLE-NODE";

fn hash_pair(left: &Digest, right: &Digest) -> Digest {
    let mut h = Hasher::new(NODE_TAG);
    h.digest(left).digest(right);
    h.finish()
}

/// Binary Merkle tree; an odd node at the end of a level is paired with
/// [`Digest::SENTINEL`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MerkleTree {
    levels: Vec<Vec<Digest>>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AuthPath {
    pub siblings: Vec<Digest>,
}

fn parent_level(level: &[Digest]) -> Vec<Digest> {
    let pair = |c: &[Digest]| hash_pair(&c[0], c.get(1).unwrap_or(&Digest::SENTINEL));
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if level.len() >= 1024 {
            return level.par_chunks(2).map(pair).collect();
        }
    }
    level.chunks(2).map(pair).collect()
}

impl MerkleTree {
    pub fn build(leaves: Vec<Digest>) -> Result<Self, CommitError> {
        if leaves.is_empty() {
            return Err(CommitError::Empty);
        }
        let mut levels = alloc::vec![leaves];
        loop {
            let next = parent_level(levels.last().expect("non-empty"));
            let done = next.len() == 1;
            levels.push(next);
            if done {
                break;
            }
        }
        Ok(Self { levels })
    }

    pub fn root(&self) -> Digest {
        self.levels.last().expect("non-empty")[0]
    }

    pub fn leaf_count(&self) -> usize {
        self.levels[0].len()
    }

    pub fn leaves(&self) -> &[Digest] {
        &self.levels[0]
    }

    pub fn leaf(&self, i: usize) -> Option<&Digest> {
        self.levels[0].get(i)
    }

    pub fn open(&self, index: usize) -> Result<AuthPath, CommitError> {
        if index >= self.leaf_count() {
            return Err(CommitError::IndexOutOfRange(index, self.leaf_count()));
        }
        let mut i = index;
        let mut siblings = Vec::with_capacity(self.levels.len() - 1);
        for level in &self.levels[..self.levels.len() - 1] {
            siblings.push(*level.get(i ^ 1).unwrap_or(&Digest::SENTINEL));
            i >>= 1;
        }
        Ok(AuthPath { siblings })
    }
}

pub fn merkle_build(leaves: Vec<Digest>) -> Result<MerkleTree, CommitError> {
    MerkleTree::build(leaves)
}

pub fn merkle_open(tree: &MerkleTree, index: usize) -> Result<AuthPath, CommitError> {
    tree.open(index)
}

pub fn merkle_verify(root: &Digest, index: usize, leaf: &Digest, path: &AuthPath) -> bool {
    if path.siblings.len() >= usize::BITS as usize || index >> path.siblings.len() != 0 {
        return false;
    }
    let mut acc = *leaf;
    let mut i = index;
    for sib in &path.siblings {
        acc = if i & 1 == 0 {
            hash_pair(&acc, sib)
        } else {
            hash_pair(sib, &acc)
        };
        i >>= 1;
    }
    acc == *root
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::gemm;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn f(v: u64) -> FieldElement {
        FieldElement::new(v)
    }

    fn t(rows: &[&[i64]]) -> QTensor {
        QTensor::from_rows(rows).unwrap()
    }

    fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> QTensor {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1000..1000)).collect();
        QTensor::new(rows, cols, data).unwrap()
    }

    // Direct double sum with explicit powers, independent of the Horner code.
    fn zmul_naive(m: &QTensor, z: FieldElement) -> FieldElement {
        let mut acc = FieldElement::ZERO;
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                let v = crate::field::embed_signed(m.get(i, j) as i128).unwrap();
                acc += z.pow((i * m.cols() + j) as u64) * v;
            }
        }
        acc
    }

    #[test]
    fn zmul_examples() {
        assert_eq!(zmul(&t(&[&[1, 2], &[3, 4]]), f(2)), f(49));
        assert_eq!(zmul(&QTensor::zeros(3, 5), f(7)), FieldElement::ZERO);
        assert_eq!(zmul(&t(&[&[-5]]), f(12345)), -f(5));
        assert_eq!(zmul_col(&t(&[&[1, 0], &[0, 1]]), f(2), 2), vec![f(1), f(4)]);
        assert_eq!(zmul_col(&t(&[&[3, -4]]), f(9), 5), vec![f(3), -f(4)]);
        assert_eq!(zmul_row(&t(&[&[5, 6], &[7, 8]]), f(2)), vec![f(17), f(23)]);
        assert_eq!(zmul_row(&t(&[&[5], &[7]]), f(2)), vec![f(5), f(7)]);
        assert!(zmul_row(&QTensor::zeros(3, 2), f(2)).iter().all(|v| v.is_zero()));
    }

    #[test]
    fn identity_check_examples() {
        let x = t(&[&[1, 0], &[0, 1]]);
        let w = t(&[&[5, 6], &[7, 8]]);
        let lhs = inner_product(&zmul_col(&x, f(2), 2), &zmul_row(&w, f(2)));
        assert_eq!(lhs, f(109));
        assert_eq!(zmul(&w, f(2)), f(109));
        assert_eq!(gemm_identity_check(&x, &w, &w, f(2)), Ok(true));
        assert_eq!(
            gemm_identity_check(&QTensor::zeros(2, 3), &w.vstack(&t(&[&[1, 1]])).unwrap(), &QTensor::zeros(2, 2), f(5)),
            Ok(true)
        );
        assert!(gemm_identity_check(&x, &w, &x.transpose(), f(2)).is_ok());
        assert!(gemm_identity_check(&x, &w, &QTensor::zeros(3, 2), f(2)).is_err());
    }

    #[test]
    fn zmul_matches_naive_and_segments_add_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let (r, c) = (rng.gen_range(1..6), rng.gen_range(1..9));
            let m = random_tensor(&mut rng, r, c);
            let z = f(rng.gen());
            assert_eq!(zmul(&m, z), zmul_naive(&m, z));
            // arbitrary split of every row into runs
            let mut total = FieldElement::ZERO;
            for i in 0..r {
                let cut = rng.gen_range(0..=c);
                total += zmul_strided(&m.row(i)[..cut], z, (i * c) as u64, 1);
                total += zmul_strided(&m.row(i)[cut..], z, (i * c + cut) as u64, 1);
            }
            assert_eq!(total, zmul(&m, z));
            // columns with stride c cover the tensor too
            let cols: FieldElement = (0..c)
                .map(|j| {
                    let col: Vec<i64> = (0..r).map(|i| m.get(i, j)).collect();
                    zmul_strided(&col, z, j as u64, c as u64)
                })
                .sum();
            assert_eq!(cols, zmul(&m, z));
        }
    }

    #[test]
    fn identity_complete_and_sound_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..300 {
            let (a, n, b) = (rng.gen_range(1..7), rng.gen_range(1..7), rng.gen_range(1..7));
            let x = random_tensor(&mut rng, a, n);
            let w = random_tensor(&mut rng, n, b);
            let y = gemm(&x, &w).unwrap();
            let z = f(rng.gen());
            assert_eq!(gemm_identity_check(&x, &w, &y, z), Ok(true));
            let mut bad = y.clone().into_data();
            let k = rng.gen_range(0..bad.len());
            bad[k] += 1;
            let bad = QTensor::new(a, b, bad).unwrap();
            assert_eq!(gemm_identity_check(&x, &w, &bad, z), Ok(false));
        }
    }

    #[test]
    fn segment_hash_properties() {
        let a = hash_segment("VT-WSEG", &[1, 2, 3]);
        assert_eq!(a, hash_segment("VT-WSEG", &[1, 2, 3]));
        assert_ne!(a, hash_segment("VT-WSEG", &[1, 2, 4]));
        assert_ne!(a, hash_segment("VT-XSEG", &[1, 2, 3]));
        let mut h = Sha256::new();
        h.update(b"VT-WSEG");
        h.update(0u64.to_le_bytes());
        assert_eq!(hash_segment("VT-WSEG", &[]).0, <[u8; 32]>::from(h.finalize()));
        // -1 hashes as p - 1
        let mut h = Sha256::new();
        h.update(b"T");
        h.update(1u64.to_le_bytes());
        h.update((crate::field::MODULUS - 1).to_le_bytes());
        assert_eq!(hash_segment("T", &[-1]).0, <[u8; 32]>::from(h.finalize()));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let vals: Vec<i64> = (0..16).map(|_| rng.gen_range(-1 << 40..1 << 40)).collect();
            let mut bumped = vals.clone();
            bumped[rng.gen_range(0..16)] += 1;
            assert_ne!(hash_segment("S", &vals), hash_segment("S", &bumped));
        }
    }

    #[test]
    fn digest_hex_round_trip() {
        let d = hash_digests("X", &[Digest::SENTINEL]);
        assert_eq!(d.to_hex().len(), 64);
        assert_eq!(Digest::from_hex(&d.to_hex()), Ok(d));
        assert!(Digest::from_hex("zz").is_err());
    }

    #[test]
    fn merkle_examples() {
        let leaf = hash_segment("L", &[7]);
        let one = merkle_build(vec![leaf]).unwrap();
        assert_eq!(one.root(), hash_pair(&leaf, &Digest::SENTINEL));
        assert!(merkle_verify(&one.root(), 0, &leaf, &one.open(0).unwrap()));

        let leaves: Vec<Digest> = (0..4).map(|i| hash_segment("L", &[i])).collect();
        let tree = merkle_build(leaves.clone()).unwrap();
        let expect = hash_pair(&hash_pair(&leaves[0], &leaves[1]), &hash_pair(&leaves[2], &leaves[3]));
        assert_eq!(tree.root(), expect);
        assert!(merkle_verify(&tree.root(), 2, &leaves[2], &merkle_open(&tree, 2).unwrap()));
        assert!(!merkle_verify(&tree.root(), 3, &leaves[2], &merkle_open(&tree, 2).unwrap()));
        assert_eq!(tree.open(4), Err(CommitError::IndexOutOfRange(4, 4)));
        assert_eq!(merkle_build(vec![]), Err(CommitError::Empty));
    }

    #[test]
    fn merkle_round_trip_and_bit_flips() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for n in 1..40usize {
            let leaves: Vec<Digest> = (0..n).map(|i| hash_segment("L", &[i as i64, n as i64])).collect();
            let tree = merkle_build(leaves.clone()).unwrap();
            for (i, leaf) in leaves.iter().enumerate() {
                let path = tree.open(i).unwrap();
                assert!(merkle_verify(&tree.root(), i, leaf, &path));
                let mut bad = *leaf;
                bad.0[rng.gen_range(0..32)] ^= 1 << rng.gen_range(0..8);
                assert!(!merkle_verify(&tree.root(), i, &bad, &path));
                if !path.siblings.is_empty() {
                    let mut p2 = path.clone();
                    let k = rng.gen_range(0..p2.siblings.len());
                    p2.siblings[k].0[rng.gen_range(0..32)] ^= 1;
                    assert!(!merkle_verify(&tree.root(), i, leaf, &p2));
                }
            }
        }
    }
}
