use proptest::prelude::*;
use veritensor_core::commit::{hash_segment, merkle_verify, zmul, zmul_strided, Digest, MerkleTree};
use veritensor_core::field::{char_poly_eval, embed_signed, FieldElement, MODULUS};
use veritensor_core::fixed::{div_floor, isqrt, KernelTables, QuantConfig};
use veritensor_core::kernels::{gemm, softmax_row, sort_with_witness, SortOrder};
use veritensor_core::tensor::QTensor;

fn fe() -> impl Strategy<Value = FieldElement> {
    (0..MODULUS).prop_map(FieldElement::new)
}

fn tensor(max: usize, bound: i64) -> impl Strategy<Value = QTensor> {
    (1..=max, 1..=max).prop_flat_map(move |(r, c)| {
        prop::collection::vec(-bound..=bound, r * c).prop_map(move |d| QTensor::new(r, c, d).unwrap())
    })
}

proptest! {
    #[test]
    fn field_ops_match_u128(a in fe(), b in fe()) {
        let p = MODULUS as u128;
        prop_assert_eq!((a * b).value() as u128, a.value() as u128 * b.value() as u128 % p);
        prop_assert_eq!((a + b).value() as u128, (a.value() as u128 + b.value() as u128) % p);
        prop_assert_eq!((a - b) + b, a);
        if !a.is_zero() {
            prop_assert_eq!(a * a.inverse().unwrap(), FieldElement::ONE);
        }
    }

    #[test]
    fn signed_embedding_is_additive(x in -(1i64 << 61)..(1i64 << 61), y in -(1i64 << 61)..(1i64 << 61)) {
        let e = |v: i64| embed_signed(v as i128).unwrap();
        prop_assert_eq!(e(x) + e(y), embed_signed(x as i128 + y as i128).unwrap());
    }

    /// ZMul is the row-major polynomial evaluation, and splitting rows into
    /// column blocks with offset exponents reassembles it.
    #[test]
    fn zmul_blocks_reassemble(m in tensor(8, 1 << 30), z in fe(), seg in 1usize..8) {
        let cols = m.cols() as u64;
        let mut naive = FieldElement::ZERO;
        let mut blocks = FieldElement::ZERO;
        for i in 0..m.rows() {
            for (j, &v) in m.row(i).iter().enumerate() {
                naive += z.pow(i as u64 * cols + j as u64) * embed_signed(v as i128).unwrap();
            }
            for k in (0..m.cols()).step_by(seg) {
                let end = (k + seg).min(m.cols());
                blocks += zmul_strided(&m.row(i)[k..end], z, i as u64 * cols + k as u64, 1);
            }
        }
        prop_assert_eq!(zmul(&m, z), naive);
        prop_assert_eq!(blocks, naive);
    }

    #[test]
    fn gemm_identity_holds(x in tensor(6, 1 << 20), z in fe(), b in 1usize..6, seed in any::<u64>()) {
        let n = x.cols();
        let w = QTensor::new(n, b, (0..n * b).map(|i| ((seed.wrapping_mul(i as u64 + 7) >> 40) as i64) - (1 << 23)).collect()).unwrap();
        let y = gemm(&x, &w).unwrap();
        prop_assert!(veritensor_core::commit::gemm_identity_check(&x, &w, &y, z).unwrap());
    }

    #[test]
    fn merkle_paths_open_only_their_leaf(vals in prop::collection::vec(any::<i64>(), 1..40), pick in any::<prop::sample::Index>()) {
        let leaves: Vec<Digest> = vals.iter().map(|&v| hash_segment("T", &[v >> 2])).collect();
        let tree = MerkleTree::build(leaves.clone()).unwrap();
        let i = pick.index(leaves.len());
        let path = tree.open(i).unwrap();
        prop_assert!(merkle_verify(&tree.root(), i, &leaves[i], &path));
        let other = hash_segment("T", &[(vals[i] >> 2) ^ 1]);
        prop_assert!(!merkle_verify(&tree.root(), i, &other, &path));
        if leaves.len() > 1 {
            let j = (i + 1) % leaves.len();
            if leaves[j] != leaves[i] {
                prop_assert!(!merkle_verify(&tree.root(), j, &leaves[i], &path));
            }
        }
    }

    #[test]
    fn floor_division_reconstructs(a in any::<i64>(), b in 1i64..i64::MAX) {
        let (q, r) = div_floor(a as i128, b as i128);
        prop_assert_eq!(q * b as i128 + r, a as i128);
        prop_assert!((0..b as i128).contains(&r));
    }

    #[test]
    fn isqrt_brackets(n in 0i128..(1i128 << 100)) {
        let s = isqrt(n).unwrap();
        prop_assert!(s * s <= n && n < (s + 1) * (s + 1));
    }

    /// Sorting returns a stable, monotone permutation with an equal
    /// characteristic polynomial.
    #[test]
    fn sort_witness_is_a_stable_permutation(list in prop::collection::vec(-20i64..20, 0..24), desc in any::<bool>(), t in fe()) {
        let order = if desc { SortOrder::Desc } else { SortOrder::Asc };
        let (sorted, perm) = sort_with_witness(&list, order);
        let mut seen = vec![false; list.len()];
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!(!seen[i]);
            seen[i] = true;
            prop_assert_eq!(sorted[k], list[i]);
        }
        for k in 1..sorted.len() {
            let ok = if desc { sorted[k - 1] >= sorted[k] } else { sorted[k - 1] <= sorted[k] };
            prop_assert!(ok);
            if sorted[k - 1] == sorted[k] {
                prop_assert!(perm[k - 1] < perm[k]);
            }
        }
        let f = |v: &[i64]| v.iter().map(|&x| embed_signed(x as i128).unwrap()).collect::<Vec<_>>();
        prop_assert_eq!(char_poly_eval(&f(&list), t), char_poly_eval(&f(&sorted), t));
    }

    #[test]
    fn softmax_mass_and_order(row in prop::collection::vec(-(8i64 << 16)..(8i64 << 16), 1..48)) {
        let t = KernelTables::new(QuantConfig::new(16, 8).unwrap()).unwrap();
        let (p, _) = softmax_row(&row, &t).unwrap();
        let sum: i64 = p.iter().sum();
        prop_assert!((1 << 16) - (row.len() as i64) < sum && sum <= 1 << 16);
        for i in 0..row.len() {
            for j in 0..row.len() {
                if row[i] <= row[j] {
                    prop_assert!(p[i] <= p[j]);
                }
            }
        }
    }
}
