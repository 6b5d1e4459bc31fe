//! Witness generation: every inference component executed in exact integer
//! arithmetic, returning outputs together with the auxiliary values
//! (quotients, remainders, indices, maxima) that proofs later expose.

use alloc::format;
use alloc::vec::Vec;

use crate::error::KernelError;
use crate::fixed::{div_floor, isqrt, Exp2Table, KernelTables};
use crate::tensor::{check_window, QInt, QTensor};

/// Exact product `X * W` with no rescale.
pub fn gemm(x: &QTensor, w: &QTensor) -> Result<QTensor, KernelError> {
    if x.cols() != w.rows() {
        return Err(KernelError::ShapeMismatch(format!(
            "gemm {}x{} * {}x{}",
            x.rows(),
            x.cols(),
            w.rows(),
            w.cols()
        )));
    }
    let (a, n, b) = (x.rows(), x.cols(), w.cols());
    let mut out = Vec::with_capacity(a * b);
    let mut acc = alloc::vec![0i128; b];
    for i in 0..a {
        acc.iter_mut().for_each(|v| *v = 0);
        for k in 0..n {
            let xv = x.get(i, k) as i128;
            if xv == 0 {
                continue;
            }
            for (j, slot) in acc.iter_mut().enumerate() {
                *slot = slot
                    .checked_add(xv * w.get(k, j) as i128)
                    .ok_or(KernelError::Overflow(i128::MAX))?;
            }
        }
        for &v in &acc {
            out.push(check_window(v)?);
        }
    }
    QTensor::new(a, b, out)
}

/// Arithmetic shift right by `shift_bits` with the remainder of each element:
/// `y * 2^s + r = y_raw`, `0 <= r < 2^s`.
pub fn rescale(y: &QTensor, shift_bits: u32) -> (QTensor, Vec<QInt>) {
    let mut out = Vec::with_capacity(y.data().len());
    let mut rem = Vec::with_capacity(y.data().len());
    for &v in y.data() {
        let q = v >> shift_bits;
        out.push(q);
        rem.push(v - (q << shift_bits));
    }
    (
        QTensor::new(y.rows(), y.cols(), out).expect("shift keeps values in window"),
        rem,
    )
}

/// Auxiliary values of one normalized row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RmsAux {
    pub sum_sq: i128,
    pub quotient: i128,
    pub remainder: i128,
    pub rms: i128,
    /// Per-element remainders of `y_i * (rms * 2^q) + r_i = x_i * w_i * 2^q`.
    pub elem_rem: Vec<QInt>,
}

/// RMSNorm of one row with `epsilon = 1`:
/// `rms^2 <= Q + 1 < (rms + 1)^2` where `sum x^2 = Q*n + R`.
pub fn rmsnorm(x: &[QInt], w: &[QInt], q: u32) -> Result<(Vec<QInt>, RmsAux), KernelError> {
    if x.is_empty() || x.len() != w.len() {
        return Err(KernelError::ShapeMismatch(format!(
            "rmsnorm row of {} with weight of {}",
            x.len(),
            w.len()
        )));
    }
    let n = x.len() as i128;
    let mut sum_sq: i128 = 0;
    for &v in x {
        sum_sq = sum_sq
            .checked_add(v as i128 * v as i128)
            .ok_or(KernelError::Overflow(i128::MAX))?;
    }
    let (quotient, remainder) = (sum_sq / n, sum_sq % n);
    let rms = isqrt(quotient + 1)?;
    let denom = rms << q;
    let mut y = Vec::with_capacity(x.len());
    let mut elem_rem = Vec::with_capacity(x.len());
    for (&xv, &wv) in x.iter().zip(w) {
        let num = (xv as i128 * wv as i128)
            .checked_mul(1i128 << q)
            .ok_or(KernelError::Overflow(i128::MAX))?;
        let (yq, r) = div_floor(num, denom);
        y.push(check_window(yq)?);
        elem_rem.push(check_window(r)?);
    }
    Ok((
        y,
        RmsAux {
            sum_sq,
            quotient,
            remainder,
            rms,
            elem_rem,
        },
    ))
}

/// Quantized interleaved `cos/sin` grid, one row per position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RopeTable {
    /// Scale bits of the entries.
    pub scale_bits: u32,
    pub entries: QTensor,
}

impl RopeTable {
    /// `entries[p][2i], entries[p][2i+1] = round(cos(p*theta_i) * 2^s), round(sin(p*theta_i) * 2^s)`
    /// with `theta_i = base^(-2i/d)`.
    pub fn build(max_pos: usize, head_dim: usize, base: f64, scale_bits: u32) -> Result<Self, KernelError> {
        if !head_dim.is_multiple_of(2) {
            return Err(KernelError::OddHeadDim(head_dim));
        }
        let scale = (1u64 << scale_bits) as f64;
        let mut data = Vec::with_capacity(max_pos * head_dim);
        for p in 0..max_pos {
            for i in 0..head_dim / 2 {
                let theta = libm::pow(base, -2.0 * i as f64 / head_dim as f64);
                let angle = p as f64 * theta;
                data.push(libm::round(libm::cos(angle) * scale) as i64);
                data.push(libm::round(libm::sin(angle) * scale) as i64);
            }
        }
        Ok(Self {
            scale_bits,
            entries: QTensor::new(max_pos, head_dim, data)?,
        })
    }

    pub fn row(&self, pos: usize) -> &[QInt] {
        self.entries.row(pos)
    }

    pub fn max_pos(&self) -> usize {
        self.entries.rows()
    }
}

/// Rotates one head by one table row; each output carries the remainder of
/// its division by `2^scale_bits`.
pub fn rope_rotate(x: &[QInt], row: &[QInt], scale_bits: u32) -> Result<(Vec<QInt>, Vec<QInt>), KernelError> {
    if !x.len().is_multiple_of(2) {
        return Err(KernelError::OddHeadDim(x.len()));
    }
    if row.len() != x.len() {
        return Err(KernelError::ShapeMismatch(format!(
            "rope head of {} against table row of {}",
            x.len(),
            row.len()
        )));
    }
    let div = 1i128 << scale_bits;
    let mut y = Vec::with_capacity(x.len());
    let mut rem = Vec::with_capacity(x.len());
    for (pair, cs) in x.chunks_exact(2).zip(row.chunks_exact(2)) {
        let (x0, x1) = (pair[0] as i128, pair[1] as i128);
        let (c, s) = (cs[0] as i128, cs[1] as i128);
        for num in [x0 * c - x1 * s, x1 * c + x0 * s] {
            let (q, r) = div_floor(num, div);
            y.push(check_window(q)?);
            rem.push(r as QInt);
        }
    }
    Ok((y, rem))
}

/// Per-lane trace of the fixed-point exponent.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SoftmaxAux {
    pub x_max: QInt,
    pub delta: Vec<QInt>,
    pub y: Vec<QInt>,
    /// Remainder of `delta * LOG2E_Q = y * 2^q + ry`.
    pub y_rem: Vec<QInt>,
    pub k: Vec<QInt>,
    pub f: Vec<QInt>,
    pub idx: Vec<QInt>,
    pub t: Vec<QInt>,
    pub w: Vec<QInt>,
    pub sum_w: i128,
    /// Remainder of `p * S + r = w * 2^q`.
    pub p_rem: Vec<QInt>,
}

pub(crate) fn exp2_neg_lane(delta: i128, tables: &KernelTables) -> (i128, i128, i128, i128, i128, i64, i64) {
    let q = tables.cfg.q;
    let (y, ry) = div_floor(delta * tables.log2e_q as i128, 1i128 << q);
    let e = -y;
    let k = e >> q;
    let f = e & ((1i128 << q) - 1);
    let idx = f >> (q - tables.cfg.l);
    let t = tables.neg.get(idx as usize);
    let w = if k >= 63 { 0 } else { t >> k };
    (y, ry, k, f, idx, t, w)
}

/// Fixed-point softmax of one head.
pub fn softmax_row(x: &[QInt], tables: &KernelTables) -> Result<(Vec<QInt>, SoftmaxAux), KernelError> {
    let q = tables.cfg.q;
    let x_max = *x.iter().max().ok_or(KernelError::AllPadded)?;
    if x_max <= tables.cfg.neg_inf_q {
        return Err(KernelError::AllPadded);
    }
    let mut aux = SoftmaxAux {
        x_max,
        ..SoftmaxAux::default()
    };
    for &xv in x {
        let delta = xv as i128 - x_max as i128;
        let (y, ry, k, f, idx, t, w) = exp2_neg_lane(delta, tables);
        aux.delta.push(check_window(delta)?);
        aux.y.push(check_window(y)?);
        aux.y_rem.push(ry as QInt);
        aux.k.push(check_window(k)?);
        aux.f.push(f as QInt);
        aux.idx.push(idx as QInt);
        aux.t.push(t);
        aux.w.push(w);
        aux.sum_w += w as i128;
    }
    if aux.sum_w == 0 {
        return Err(KernelError::AllPadded);
    }
    let mut p = Vec::with_capacity(x.len());
    for &w in &aux.w {
        let (pq, r) = div_floor((w as i128) << q, aux.sum_w);
        p.push(pq as QInt);
        aux.p_rem.push(r as QInt);
    }
    Ok((p, aux))
}

/// Trace of the fixed-point `e^(-x)` used by sigmoid and SiLU.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SigmoidAux {
    pub y: QInt,
    /// Remainder of `-x * LOG2E_Q = y * 2^q + ry`.
    pub y_rem: QInt,
    pub k: QInt,
    pub f: QInt,
    pub idx: QInt,
    pub t: QInt,
    pub u: QInt,
    pub sigma: QInt,
    /// Remainder of `sigma * (2^q + u) + r = 2^(2q)`.
    pub sigma_rem: QInt,
}

/// `u = t >> -k` for `k < 0` and `t << k` otherwise. Left shifts are capped at
/// `q`: from there on `u >= 2^(2q)` and the sigmoid is already exactly zero.
pub(crate) fn shift_split(t: i128, k: i128, q: u32) -> i128 {
    if k < 0 {
        if -k >= 63 {
            0
        } else {
            t >> (-k)
        }
    } else {
        t << k.min(q as i128)
    }
}

pub fn sigmoid(x: QInt, tables: &KernelTables) -> (QInt, SigmoidAux) {
    sigmoid_with_table(x, tables.cfg.q, tables.cfg.l, tables.log2e_q, &tables.pos)
}

fn sigmoid_with_table(x: QInt, q: u32, l: u32, log2e: i64, pos: &Exp2Table) -> (QInt, SigmoidAux) {
    let (y, ry) = div_floor(-(x as i128) * log2e as i128, 1i128 << q);
    let (k, f) = div_floor(y, 1i128 << q);
    let idx = f >> (q - l);
    let t = pos.get(idx as usize) as i128;
    let u = shift_split(t, k, q);
    let (sigma, sigma_rem) = div_floor(1i128 << (2 * q), (1i128 << q) + u);
    (
        sigma as QInt,
        SigmoidAux {
            y: y as QInt,
            y_rem: ry as QInt,
            k: k as QInt,
            f: f as QInt,
            idx: idx as QInt,
            t: t as QInt,
            u: u as QInt,
            sigma: sigma as QInt,
            sigma_rem: sigma_rem as QInt,
        },
    )
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SiluAux {
    pub sigmoid: SigmoidAux,
    /// Remainder of `x * sigma = y * 2^q + r`.
    pub rem: QInt,
}

pub fn silu(x: QInt, tables: &KernelTables) -> (QInt, SiluAux) {
    let (sigma, sig) = sigmoid(x, tables);
    let (y, rem) = div_floor(x as i128 * sigma as i128, 1i128 << tables.cfg.q);
    (
        y as QInt,
        SiluAux {
            sigmoid: sig,
            rem: rem as QInt,
        },
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SortOrder {
    Asc,
    Desc,
}

/// Stable sort returning the sorted values and the source index of each.
pub fn sort_with_witness(list: &[QInt], order: SortOrder) -> (Vec<QInt>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..list.len()).collect();
    match order {
        SortOrder::Asc => perm.sort_by_key(|&i| list[i]),
        // ascending on negated values keeps the non-decreasing argument intact
        SortOrder::Desc => perm.sort_by_key(|&i| -(list[i] as i128)),
    }
    (perm.iter().map(|&i| list[i]).collect(), perm)
}

/// Grouped routing parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Grouping {
    pub n_groups: usize,
    pub per_group_top: usize,
    pub groups_selected: usize,
    pub experts_selected: usize,
}

impl Grouping {
    pub fn validate(&self, n_experts: usize) -> Result<usize, KernelError> {
        if self.n_groups == 0 || n_experts == 0 || !n_experts.is_multiple_of(self.n_groups) {
            return Err(KernelError::BadGrouping("n_experts must be a positive multiple of n_groups"));
        }
        let group_size = n_experts / self.n_groups;
        if self.per_group_top == 0 || self.per_group_top > group_size {
            return Err(KernelError::BadGrouping("per_group_top must be in [1, group size]"));
        }
        if self.groups_selected == 0 || self.groups_selected > self.n_groups {
            return Err(KernelError::BadGrouping("groups_selected must be in [1, n_groups]"));
        }
        if self.experts_selected == 0 || self.experts_selected > self.groups_selected * group_size {
            return Err(KernelError::BadGrouping("experts_selected exceeds surviving experts"));
        }
        Ok(group_size)
    }
}

/// Result of two-round grouped top-k selection for one token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExpertSelection {
    /// Sum of each group's top `per_group_top` scores.
    pub group_scores: Vec<i128>,
    /// Per group: DESC permutation of the group's local indices.
    pub group_perms: Vec<Vec<usize>>,
    /// DESC permutation of the group scores.
    pub group_order: Vec<usize>,
    /// Selected groups, ascending.
    pub groups: Vec<usize>,
    /// Candidate experts (members of selected groups) in DESC score order.
    pub candidates: Vec<usize>,
    /// Chosen experts in DESC score order.
    pub experts: Vec<usize>,
    pub values: Vec<QInt>,
}

pub fn expert_select(scores: &[QInt], grouping: &Grouping) -> Result<ExpertSelection, KernelError> {
    let group_size = grouping.validate(scores.len())?;
    let mut group_scores: Vec<i128> = Vec::with_capacity(grouping.n_groups);
    let mut group_perms = Vec::with_capacity(grouping.n_groups);
    for g in 0..grouping.n_groups {
        let members = &scores[g * group_size..(g + 1) * group_size];
        let (sorted, perm) = sort_with_witness(members, SortOrder::Desc);
        group_scores.push(sorted[..grouping.per_group_top].iter().map(|&v| v as i128).sum());
        group_perms.push(perm);
    }
    let mut group_order: Vec<usize> = (0..grouping.n_groups).collect();
    group_order.sort_by_key(|&g| -group_scores[g]);
    let mut groups = group_order[..grouping.groups_selected].to_vec();
    groups.sort_unstable();
    let mut candidates: Vec<usize> = groups
        .iter()
        .flat_map(|&g| g * group_size..(g + 1) * group_size)
        .collect();
    candidates.sort_by_key(|&e| (-(scores[e] as i128), e));
    let experts = candidates[..grouping.experts_selected].to_vec();
    let values = experts.iter().map(|&e| scores[e]).collect();
    Ok(ExpertSelection {
        group_scores,
        group_perms,
        group_order,
        groups,
        candidates,
        experts,
        values,
    })
}

fn same_shape(x: &QTensor, b: &QTensor) -> Result<(), KernelError> {
    if x.shape() != b.shape() {
        return Err(KernelError::ShapeMismatch(format!(
            "elementwise {:?} vs {:?}",
            x.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn elementwise_add(x: &QTensor, b: &QTensor) -> Result<QTensor, KernelError> {
    same_shape(x, b)?;
    let data = x
        .data()
        .iter()
        .zip(b.data())
        .map(|(&a, &c)| check_window(a as i128 + c as i128))
        .collect::<Result<Vec<_>, _>>()?;
    QTensor::new(x.rows(), x.cols(), data)
}

/// `floor(x * b / 2^q)` with remainders.
pub fn elementwise_mul(x: &QTensor, b: &QTensor, q: u32) -> Result<(QTensor, Vec<QInt>), KernelError> {
    same_shape(x, b)?;
    let mut data = Vec::with_capacity(x.data().len());
    let mut rem = Vec::with_capacity(x.data().len());
    for (&a, &c) in x.data().iter().zip(b.data()) {
        let (y, r) = div_floor(a as i128 * c as i128, 1i128 << q);
        data.push(check_window(y)?);
        rem.push(r as QInt);
    }
    Ok((QTensor::new(x.rows(), x.cols(), data)?, rem))
}

pub fn embed_tokens(token_ids: &[u32], vocab: &QTensor) -> Result<QTensor, KernelError> {
    let mut data = Vec::with_capacity(token_ids.len() * vocab.cols());
    for &id in token_ids {
        if id as usize >= vocab.rows() {
            return Err(KernelError::TokenOutOfRange(id, vocab.rows()));
        }
        data.extend_from_slice(vocab.row(id as usize));
    }
    QTensor::new(token_ids.len(), vocab.cols(), data)
}
