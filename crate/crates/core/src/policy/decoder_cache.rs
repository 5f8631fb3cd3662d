use crate::error::{Error, Result};
use crate::tensor::{Mat, Scalar};

/// Per-trajectory key/value store for incremental causal decoding.
///
/// Rows `0..len` of every layer's key and value matrices hold the rotated
/// keys and the values of the steps seen so far in the current episode.
/// A cache may also hold a trailing window of an episode, in which case its
/// first row sits at episode position `offset`.
#[derive(Clone, Debug)]
pub struct DecoderCache<F> {
    capacity: usize,
    len: usize,
    offset: usize,
    keys: Vec<Mat<F>>,
    values: Vec<Mat<F>>,
}

impl<F: Scalar> DecoderCache<F> {
    pub fn new(layers: usize, width: usize, capacity: usize) -> Self {
        Self {
            capacity,
            len: 0,
            offset: 0,
            keys: (0..layers).map(|_| Mat::zeros(capacity, width)).collect(),
            values: (0..layers).map(|_| Mat::zeros(capacity, width)).collect(),
        }
    }

    /// Occupancy: number of cached timesteps.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn layers(&self) -> usize {
        self.keys.len()
    }

    /// Episode position of the next step to be appended.
    pub fn position(&self) -> usize {
        self.offset + self.len
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    /// Empties the cache without touching its allocation.
    pub fn reset(&mut self) {
        self.len = 0;
        self.offset = 0;
    }

    /// Empties the cache but keeps counting episode positions from
    /// `position`, so later steps see only the new window.
    pub fn start_window(&mut self, position: usize) {
        self.len = 0;
        self.offset = position;
    }

    /// Drops every step after the first `len`.
    pub fn truncate(&mut self, len: usize) {
        self.len = self.len.min(len);
    }

    pub(crate) fn ensure_room(&self) -> Result<()> {
        if self.len >= self.capacity {
            return Err(Error::CacheRollover { capacity: self.capacity, position: self.len });
        }
        Ok(())
    }

    pub(crate) fn write(&mut self, layer: usize, key: &[F], value: &[F]) {
        let pos = self.len;
        self.keys[layer].row_mut(pos).copy_from_slice(key);
        self.values[layer].row_mut(pos).copy_from_slice(value);
    }

    pub(crate) fn advance(&mut self) {
        self.len += 1;
    }

    pub(crate) fn layer(&self, layer: usize) -> (&Mat<F>, &Mat<F>) {
        (&self.keys[layer], &self.values[layer])
    }

    /// Occupied key/value rows of one layer, for serialization.
    pub fn occupied(&self, layer: usize) -> (Mat<F>, Mat<F>) {
        (self.keys[layer].slice_rows(0, self.len), self.values[layer].slice_rows(0, self.len))
    }

    /// Restores occupied rows previously produced by [`Self::occupied`].
    /// Every layer must be restored with the same row count.
    pub fn restore(&mut self, layer: usize, offset: usize, keys: &Mat<F>, values: &Mat<F>) -> Result<()> {
        let width = self.keys[layer].cols();
        if keys.shape() != values.shape() || keys.cols() != width || keys.rows() > self.capacity {
            return Err(Error::format("decoder cache", format!("bad cached block {:?}", keys.shape())));
        }
        for r in 0..keys.rows() {
            self.keys[layer].row_mut(r).copy_from_slice(keys.row(r));
            self.values[layer].row_mut(r).copy_from_slice(values.row(r));
        }
        self.len = keys.rows();
        self.offset = offset;
        Ok(())
    }
}
