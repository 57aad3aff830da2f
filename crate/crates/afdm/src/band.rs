//! Cyclic band storage for DAFT-domain channel matrices.
//!
//! Row `m` keeps `width` entries; slot `q` holds column
//! `(m + q - offset) mod N`. A diagonal of the matrix is one fixed slot.

use crate::params::AfdmParams;
use crate::{CMatrix, C64};

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelBand {
    n: usize,
    offset: usize,
    width: usize,
    data: Vec<C64>,
}

impl ChannelBand {
    pub fn zeros(n: usize, offset: usize, width: usize) -> Self {
        Self { n, offset, width, data: vec![C64::new(0.0, 0.0); n * width] }
    }

    /// Empty band with the `L + 1` geometry of `params`.
    pub fn for_params(params: &AfdmParams) -> Self {
        Self::zeros(params.n, params.band_offset(), params.band_len().min(params.n))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    /// Column index held by `(row, slot)`.
    pub fn column(&self, row: usize, slot: usize) -> usize {
        (row + self.n + slot % self.n - self.offset % self.n) % self.n
    }

    /// Slot holding `(row, col)`, if that coordinate lies in the band.
    pub fn slot_of(&self, row: usize, col: usize) -> Option<usize> {
        let q = (col + self.offset + self.n - row % self.n) % self.n;
        (q < self.width).then_some(q)
    }

    pub fn at(&self, row: usize, slot: usize) -> C64 {
        self.data[row * self.width + slot]
    }

    pub fn set(&mut self, row: usize, slot: usize, v: C64) {
        self.data[row * self.width + slot] = v;
    }

    /// Entry `(row, col)`, zero outside the band.
    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.slot_of(row, col).map_or(C64::new(0.0, 0.0), |q| self.at(row, q))
    }

    pub fn row(&self, row: usize) -> &[C64] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut out = CMatrix::zeros(self.n, self.n);
        for m in 0..self.n {
            for q in 0..self.width {
                out[(m, self.column(m, q))] += self.at(m, q);
            }
        }
        out
    }

    /// Band restriction of a dense matrix.
    pub fn from_dense(dense: &CMatrix, offset: usize, width: usize) -> Self {
        let n = dense.nrows();
        let mut band = Self::zeros(n, offset, width);
        for m in 0..n {
            for q in 0..width {
                band.set(m, q, dense[(m, band.column(m, q))]);
            }
        }
        band
    }

    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        (0..self.n).map(|m| (0..self.width).map(|q| self.at(m, q) * x[self.column(m, q)]).sum()).collect()
    }

    pub fn frobenius_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    /// Non-zero entries as `(row, col, value)`.
    pub fn nonzeros(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.n).flat_map(move |m| {
            (0..self.width).filter_map(move |q| {
                let v = self.at(m, q);
                (v != C64::new(0.0, 0.0)).then(|| (m, self.column(m, q), v))
            })
        })
    }
}
