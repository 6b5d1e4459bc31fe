use alloc::format;
use alloc::vec::Vec;

use crate::error::KernelError;
use crate::field::SIGNED_WINDOW;

/// Fixed-point integer (value scaled by `2^q` unless stated otherwise).
pub type QInt = i64;

/// Row-major integer matrix. Entries always lie inside the `2^62` window.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QTensor {
    rows: usize,
    cols: usize,
    data: Vec<QInt>,
}

pub(crate) fn check_window(v: i128) -> Result<QInt, KernelError> {
    if (-SIGNED_WINDOW..=SIGNED_WINDOW).contains(&v) {
        Ok(v as QInt)
    } else {
        Err(KernelError::Overflow(v))
    }
}

impl QTensor {
    pub fn new(rows: usize, cols: usize, data: Vec<QInt>) -> Result<Self, KernelError> {
        if data.len() != rows * cols {
            return Err(KernelError::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} tensor",
                data.len()
            )));
        }
        for &v in &data {
            check_window(v as i128)?;
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: alloc::vec![0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[&[QInt]]) -> Result<Self, KernelError> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(KernelError::ShapeMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.iter().flat_map(|r| r.iter().copied()).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[QInt] {
        &self.data
    }

    pub fn into_data(self) -> Vec<QInt> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> QInt {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[QInt] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Row-major data is unchanged by a reshape, so ZMul values are too.
    pub fn reshape(mut self, rows: usize, cols: usize) -> Result<Self, KernelError> {
        if rows * cols != self.data.len() {
            return Err(KernelError::ShapeMismatch(format!(
                "cannot reshape {}x{} into {rows}x{cols}",
                self.rows, self.cols
            )));
        }
        self.rows = rows;
        self.cols = cols;
        Ok(self)
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.get(r, c));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    /// Stacks `other` under `self`.
    pub fn vstack(&self, other: &Self) -> Result<Self, KernelError> {
        if self.rows > 0 && other.rows > 0 && self.cols != other.cols {
            return Err(KernelError::ShapeMismatch("vstack column mismatch".into()));
        }
        let cols = if self.rows > 0 { self.cols } else { other.cols };
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self {
            rows: self.rows + other.rows,
            cols,
            data,
        })
    }

    /// Columns `[start, end)` of every row.
    pub fn col_slice(&self, start: usize, end: usize) -> Self {
        let mut data = Vec::with_capacity(self.rows * (end - start));
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..end]);
        }
        Self {
            rows: self.rows,
            cols: end - start,
            data,
        }
    }

    /// Bytes held by the data buffer.
    pub fn byte_len(&self) -> usize {
        self.data.len() * core::mem::size_of::<QInt>()
    }
}
