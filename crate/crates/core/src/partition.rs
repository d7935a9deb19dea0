//! Disjoint block partitioning of a tensor into equally sized sub-tensors.
//!
//! Blocks are numbered lexicographically by their block multi-index with the
//! last block index varying fastest, mirroring the entry layout of
//! [`DenseTensor`]. When a mode length is not a multiple of the block length
//! the grid can zero-pad the parent up to the next multiple; `unpartition`
//! crops the padding again.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::tensor::{advance, check_dims, DenseTensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionGrid {
    parent_dims: Vec<usize>,
    padded_dims: Vec<usize>,
    block_dims: Vec<usize>,
    counts: Vec<usize>,
}

impl PartitionGrid {
    /// Grid whose block lengths must divide the parent lengths exactly.
    pub fn new(parent_dims: &[usize], block_dims: &[usize]) -> Result<Self> {
        Self::build(parent_dims, block_dims, false)
    }

    /// Grid that zero-pads the parent up to a multiple of the block lengths.
    pub fn with_padding(parent_dims: &[usize], block_dims: &[usize]) -> Result<Self> {
        Self::build(parent_dims, block_dims, true)
    }

    fn build(parent_dims: &[usize], block_dims: &[usize], pad: bool) -> Result<Self> {
        check_dims(parent_dims)?;
        check_dims(block_dims)?;
        if parent_dims.len() != block_dims.len() {
            return Err(shape_err!(
                "block dims {block_dims:?} do not match parent order {}",
                parent_dims.len()
            ));
        }
        let mut padded = Vec::with_capacity(parent_dims.len());
        let mut counts = Vec::with_capacity(parent_dims.len());
        for (k, (&j, &p)) in parent_dims.iter().zip(block_dims).enumerate() {
            if j % p != 0 && !pad {
                return Err(shape_err!(
                    "block length {p} does not divide mode {k} of length {j}"
                ));
            }
            let c = j.div_ceil(p);
            counts.push(c);
            padded.push(c * p);
        }
        Ok(Self {
            parent_dims: parent_dims.to_vec(),
            padded_dims: padded,
            block_dims: block_dims.to_vec(),
            counts,
        })
    }

    pub fn parent_dims(&self) -> &[usize] {
        &self.parent_dims
    }

    pub fn padded_dims(&self) -> &[usize] {
        &self.padded_dims
    }

    pub fn block_dims(&self) -> &[usize] {
        &self.block_dims
    }

    /// Number of blocks along each mode.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn is_padded(&self) -> bool {
        self.parent_dims != self.padded_dims
    }

    /// Total block count `S`.
    pub fn block_count(&self) -> usize {
        self.counts.iter().product()
    }

    /// Block multi-index of block `s`.
    pub fn block_index(&self, s: usize) -> Vec<usize> {
        let mut idx = vec![0; self.counts.len()];
        let mut rem = s;
        for k in (0..self.counts.len()).rev() {
            idx[k] = rem % self.counts[k];
            rem /= self.counts[k];
        }
        idx
    }

    /// Inverse of [`block_index`](Self::block_index).
    pub fn block_id(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.counts).fold(0, |acc, (&i, &c)| acc * c + i)
    }

    /// Parent coordinates of the first entry of block `s`.
    pub fn block_origin(&self, s: usize) -> Vec<usize> {
        self.block_index(s)
            .iter()
            .zip(&self.block_dims)
            .map(|(i, p)| i * p)
            .collect()
    }

    /// Block containing the parent entry at `idx`.
    pub fn block_of(&self, idx: &[usize]) -> usize {
        let bi: Vec<usize> = idx.iter().zip(&self.block_dims).map(|(i, p)| i / p).collect();
        self.block_id(&bi)
    }

    /// Visits every block row: `(block id, offset inside the block buffer,
    /// parent offset of the row start, number of valid entries)`. A row is a
    /// run along the last mode; padded rows report zero valid entries.
    fn for_each_row(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let order = self.block_dims.len();
        let last = order - 1;
        let bl = self.block_dims[last];
        let row_dims = &self.block_dims[..last];
        let rows: usize = row_dims.iter().product();
        let mut parent_strides = vec![1; order];
        for k in (0..last).rev() {
            parent_strides[k] = parent_strides[k + 1] * self.parent_dims[k + 1];
        }
        for s in 0..self.block_count() {
            let origin = self.block_origin(s);
            let valid_last = self.parent_dims[last].saturating_sub(origin[last]).min(bl);
            let mut ridx = vec![0usize; last];
            for row in 0..rows {
                let mut inside = true;
                let mut off = origin[last];
                for k in 0..last {
                    let j = origin[k] + ridx[k];
                    if j >= self.parent_dims[k] {
                        inside = false;
                        break;
                    }
                    off += j * parent_strides[k];
                }
                f(s, row * bl, off, if inside { valid_last } else { 0 });
                if last > 0 {
                    advance(&mut ridx, row_dims);
                }
            }
        }
    }
}

/// Splits `x` into the grid's blocks, in block-id order.
pub fn partition(x: &DenseTensor, grid: &PartitionGrid) -> Result<Vec<DenseTensor>> {
    if x.dims() != grid.parent_dims() {
        return Err(shape_err!(
            "tensor dims {:?} do not match grid parent {:?}",
            x.dims(),
            grid.parent_dims()
        ));
    }
    let block_len: usize = grid.block_dims().iter().product();
    let mut bufs = vec![vec![0.0; block_len]; grid.block_count()];
    let src = x.data();
    grid.for_each_row(|s, boff, poff, n| {
        bufs[s][boff..boff + n].copy_from_slice(&src[poff..poff + n]);
    });
    Ok(bufs
        .into_iter()
        .map(|b| DenseTensor::from_parts(grid.block_dims().to_vec(), b))
        .collect())
}

/// Reassembles blocks produced by [`partition`], cropping any padding.
pub fn unpartition(blocks: &[DenseTensor], grid: &PartitionGrid) -> Result<DenseTensor> {
    if blocks.len() != grid.block_count() {
        return Err(shape_err!(
            "expected {} blocks, got {}",
            grid.block_count(),
            blocks.len()
        ));
    }
    if let Some(b) = blocks.iter().find(|b| b.dims() != grid.block_dims()) {
        return Err(shape_err!(
            "block dims {:?} differ from grid block dims {:?}",
            b.dims(),
            grid.block_dims()
        ));
    }
    let mut out = vec![0.0; grid.parent_dims().iter().product()];
    grid.for_each_row(|s, boff, poff, n| {
        out[poff..poff + n].copy_from_slice(&blocks[s].data()[boff..boff + n]);
    });
    Ok(DenseTensor::from_parts(grid.parent_dims().to_vec(), out))
}
