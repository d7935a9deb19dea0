//! Dense order-D arrays and the basic multilinear operations on them.
//!
//! Every tensor stores its entries in a flat buffer using *last-index-fastest*
//! (row-major) order: the entry at multi-index `(j_1, ..., j_D)` lives at
//! `sum_k j_k * stride_k` with `stride_D = 1` and `stride_k = stride_{k+1} * J_{k+1}`.
//! When subjects are stacked into a single tensor the subject index is always
//! the last mode.

use crate::error::{shape_err, Result, TprmError};

/// A dense, immutable, finite-valued tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    /// Builds a tensor from dimensions and a flat last-index-fastest buffer.
    ///
    /// Rejects empty or zero-sized dimensions, a buffer whose length differs
    /// from the product of `dims`, and any NaN or infinite entry.
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_dims(&dims)?;
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(shape_err!(
                "buffer has {} entries but dims {:?} require {}",
                data.len(),
                dims,
                len
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(TprmError::Numeric(format!(
                "non-finite entry {} at flat offset {pos}",
                data[pos]
            )));
        }
        Ok(Self { dims, data })
    }

    /// All-zero tensor.
    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        check_dims(&dims)?;
        let len = dims.iter().product();
        Ok(Self { dims, data: vec![0.0; len] })
    }

    /// Builds a tensor by evaluating `f` at every multi-index, in storage order.
    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        check_dims(&dims)?;
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..len {
            data.push(f(&idx));
            advance(&mut idx, &dims);
        }
        Self::new(dims, data)
    }

    /// Crate-internal constructor for buffers produced by finite arithmetic on
    /// already-validated tensors.
    pub(crate) fn from_parts(dims: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self { dims, data }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.dims)
    }

    pub fn offset(&self, idx: &[usize]) -> Result<usize> {
        if idx.len() != self.dims.len() {
            return Err(shape_err!(
                "index of order {} for tensor of order {}",
                idx.len(),
                self.dims.len()
            ));
        }
        let mut off = 0;
        for (k, (&i, &d)) in idx.iter().zip(&self.dims).enumerate() {
            if i >= d {
                return Err(shape_err!("index {i} out of range {d} in mode {k}"));
            }
            off = off * d + i;
        }
        Ok(off)
    }

    pub fn get(&self, idx: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(idx)?])
    }

    /// Squared Frobenius norm, i.e. `<x, x>`.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Multiplies every entry by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        Self::new(self.dims.clone(), self.data.iter().map(|v| v * alpha).collect())
    }

    /// Number of subjects when the last mode is the subject mode.
    pub fn subject_count(&self) -> usize {
        *self.dims.last().expect("dims are never empty")
    }

    /// Selects a subset of subjects (last-mode slices), preserving order.
    pub fn select_subjects(&self, subjects: &[usize]) -> Result<Self> {
        let n = self.subject_count();
        if subjects.is_empty() {
            return Err(shape_err!("subject selection is empty"));
        }
        if let Some(&bad) = subjects.iter().find(|&&i| i >= n) {
            return Err(shape_err!("subject {bad} out of range {n}"));
        }
        let rows = self.len() / n;
        let mut data = Vec::with_capacity(rows * subjects.len());
        for row in self.data.chunks_exact(n) {
            data.extend(subjects.iter().map(|&i| row[i]));
        }
        let mut dims = self.dims.clone();
        *dims.last_mut().unwrap() = subjects.len();
        Ok(Self::from_parts(dims, data))
    }

    /// Extracts subject `i` (a slice of the last mode) as a tensor of one order less.
    pub fn subject(&self, i: usize) -> Result<Self> {
        if self.order() < 2 {
            return Err(shape_err!("a subject slice needs a tensor of order >= 2"));
        }
        let n = self.subject_count();
        if i >= n {
            return Err(shape_err!("subject {i} out of range {n}"));
        }
        let data = self.data.iter().skip(i).step_by(n).copied().collect();
        Ok(Self::from_parts(self.dims[..self.order() - 1].to_vec(), data))
    }
}

/// Stacks equally shaped tensors along a new trailing subject mode.
pub fn stack_subjects(images: &[DenseTensor]) -> Result<DenseTensor> {
    let first = images.first().ok_or_else(|| shape_err!("no tensors to stack"))?;
    let n = images.len();
    if let Some(bad) = images.iter().find(|t| t.dims() != first.dims()) {
        return Err(shape_err!("cannot stack dims {:?} with {:?}", bad.dims(), first.dims()));
    }
    let mut data = vec![0.0; first.len() * n];
    for (i, img) in images.iter().enumerate() {
        for (row, &v) in img.data().iter().enumerate() {
            data[row * n + i] = v;
        }
    }
    let mut dims = first.dims().to_vec();
    dims.push(n);
    Ok(DenseTensor::from_parts(dims, data))
}

/// `<x, y>`: the sum over all multi-indices of the entrywise products.
pub fn inner_product(x: &DenseTensor, y: &DenseTensor) -> Result<f64> {
    if x.dims() != y.dims() {
        return Err(shape_err!(
            "inner product of dims {:?} and {:?}",
            x.dims(),
            y.dims()
        ));
    }
    Ok(x.data().iter().zip(y.data()).map(|(a, b)| a * b).sum())
}

/// Outer product `a^(1) o a^(2) o ... o a^(D)` of two or more vectors.
pub fn outer_product<V: AsRef<[f64]>>(vectors: &[V]) -> Result<DenseTensor> {
    if vectors.len() < 2 {
        return Err(shape_err!(
            "outer product needs at least two vectors, got {}",
            vectors.len()
        ));
    }
    if let Some(k) = vectors.iter().position(|v| v.as_ref().is_empty()) {
        return Err(shape_err!("vector {k} of the outer product is empty"));
    }
    let dims: Vec<usize> = vectors.iter().map(|v| v.as_ref().len()).collect();
    let mut data = vec![1.0];
    for v in vectors {
        let v = v.as_ref();
        let mut next = Vec::with_capacity(data.len() * v.len());
        for &head in &data {
            next.extend(v.iter().map(|&x| head * x));
        }
        data = next;
    }
    DenseTensor::new(dims, data)
}

pub(crate) fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() {
        return Err(shape_err!("a tensor needs at least one mode"));
    }
    if let Some(k) = dims.iter().position(|&d| d == 0) {
        return Err(shape_err!("mode {k} has zero length in dims {dims:?}"));
    }
    Ok(())
}

pub(crate) fn strides_of(dims: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * dims[k + 1];
    }
    strides
}

/// Odometer increment in last-index-fastest order. Wraps to all zeros.
pub(crate) fn advance(idx: &mut [usize], dims: &[usize]) {
    for k in (0..dims.len()).rev() {
        idx[k] += 1;
        if idx[k] < dims[k] {
            return;
        }
        idx[k] = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inner_product_examples() {
        let ones = DenseTensor::new(vec![2, 2], vec![1.0; 4]).unwrap();
        assert_eq!(inner_product(&ones, &ones).unwrap(), 4.0);
        let x = DenseTensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let eye = DenseTensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(inner_product(&x, &eye).unwrap(), 5.0);
    }

    #[test]
    fn inner_product_rejects_mismatched_dims() {
        let a = DenseTensor::zeros(vec![2, 3]).unwrap();
        let b = DenseTensor::zeros(vec![3, 2]).unwrap();
        assert!(matches!(inner_product(&a, &b), Err(TprmError::Shape(_))));
    }

    #[test]
    fn outer_product_examples() {
        let m = outer_product(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.dims(), &[2, 2]);
        assert_eq!(m.data(), &[3.0, 4.0, 6.0, 8.0]);

        let t = outer_product(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(t.dims(), &[2, 2, 2]);
        // ones exactly at (1,2,1) and (1,2,2) in one-based indexing
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let expected = if i == 0 && j == 1 { 1.0 } else { 0.0 };
                    assert_eq!(t.get(&[i, j, k]).unwrap(), expected);
                }
            }
        }
    }

    #[test]
    fn outer_product_rejects_empty_inputs() {
        assert!(outer_product(&[vec![1.0, 2.0], vec![]]).is_err());
        assert!(outer_product(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn constructor_rejects_bad_buffers() {
        assert!(DenseTensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(DenseTensor::new(vec![2, 0], vec![]).is_err());
        assert!(matches!(
            DenseTensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(TprmError::Numeric(_))
        ));
        assert!(DenseTensor::new(vec![1], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn layout_is_last_index_fastest() {
        let t = DenseTensor::from_fn(vec![2, 3, 4], |i| (100 * i[0] + 10 * i[1] + i[2]) as f64)
            .unwrap();
        assert_eq!(t.strides(), vec![12, 4, 1]);
        assert_eq!(t.data()[1], 1.0);
        assert_eq!(t.data()[4], 10.0);
        assert_eq!(t.data()[12], 100.0);
        assert_eq!(t.get(&[1, 2, 3]).unwrap(), 123.0);
    }

    #[test]
    fn stacking_and_subject_slices_round_trip() {
        let a = DenseTensor::from_fn(vec![2, 3], |i| (i[0] * 3 + i[1]) as f64).unwrap();
        let b = a.scaled(-1.0).unwrap();
        let stacked = stack_subjects(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(stacked.dims(), &[2, 3, 2]);
        assert_eq!(stacked.subject(0).unwrap(), a);
        assert_eq!(stacked.subject(1).unwrap(), b);
        let only_b = stacked.select_subjects(&[1]).unwrap();
        assert_eq!(only_b.dims(), &[2, 3, 1]);
        assert_eq!(only_b.data(), b.data());
    }
}
