//! Dense tensors, observation masks, factor sets and CP primitives.
//!
//! Conventions, fixed once here and relied on everywhere else:
//!
//! * tensors are stored row-major: the **last** index varies fastest in
//!   memory, and all indices are 0-based;
//! * `khatri_rao(a, b)` places `a`'s row index slow and `b`'s fast: row
//!   `i * J + j` of the product is the elementwise product of `a`'s row `i`
//!   and `b`'s row `j`;
//! * a chain over several factor matrices multiplies them in *descending*
//!   mode order (`U(N) ⊙ ... ⊙ U(1)`), so the first mode's index varies
//!   fastest along the chain's rows;
//! * `mode_unfold` uses the matching column order: column index
//!   `sum_{k != n} i_k * prod_{l < k, l != n} I_l`, i.e. the first remaining
//!   mode varies fastest. With these two choices the CP identity
//!   `X_(n) = U(n) * (U(N) ⊙ ... ⊙ U(1) without n)^T` holds exactly.

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Dense tensor of arbitrary order, row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(CoreError::InvalidArgument("tensor order must be at least 1".into()));
    }
    if shape.iter().any(|&s| s == 0) {
        return Err(CoreError::InvalidArgument("tensor dimensions must be positive".into()));
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> DenseTensor<T> {
    /// All-zero tensor.
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(DenseTensor { shape: shape.to_vec(), data: vec![T::zero(); len] })
    }

    /// Constant tensor.
    pub fn full(shape: &[usize], v: T) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(DenseTensor { shape: shape.to_vec(), data: vec![v; len] })
    }

    /// Build from a flat row-major buffer (last index fastest).
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = check_shape(shape)?;
        if data.len() != len {
            return Err(CoreError::ShapeMismatch(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                len,
                data.len()
            )));
        }
        Ok(DenseTensor { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    /// Number of entries.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Flat row-major offset of a multi-index.
    pub fn index_of(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut p = 0;
        for (k, &i) in idx.iter().enumerate() {
            debug_assert!(i < self.shape[k]);
            p = p * self.shape[k] + i;
        }
        p
    }

    /// Write the multi-index of flat offset `p` into `idx`.
    pub fn unravel(&self, mut p: usize, idx: &mut [usize]) {
        debug_assert_eq!(idx.len(), self.shape.len());
        for k in (0..self.shape.len()).rev() {
            idx[k] = p % self.shape[k];
            p /= self.shape[k];
        }
    }

    pub fn get(&self, idx: &[usize]) -> T {
        self.data[self.index_of(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: T) {
        let p = self.index_of(idx);
        self.data[p] = v;
    }

    /// Frobenius norm over all entries.
    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    /// Elementwise difference.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape {
            return Err(CoreError::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Ok(DenseTensor { shape: self.shape.clone(), data })
    }

    /// Sum of absolute values.
    pub fn l1_norm(&self) -> T {
        self.data.iter().map(|v| v.abs()).sum()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// True when all entries are finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Advance a row-major odometer over `shape`; returns `false` after the last
/// index wraps back to all zeros.
pub fn advance_index(idx: &mut [usize], shape: &[usize]) -> bool {
    for k in (0..shape.len()).rev() {
        idx[k] += 1;
        if idx[k] < shape[k] {
            return true;
        }
        idx[k] = 0;
    }
    false
}

/// Boolean observation mask with the same shape as its tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMask {
    shape: Vec<usize>,
    observed: Vec<bool>,
}

impl ObservationMask {
    /// Mask marking every entry observed.
    pub fn all_observed(shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(ObservationMask { shape: shape.to_vec(), observed: vec![true; len] })
    }

    /// Mask with no observed entries.
    pub fn all_missing(shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(ObservationMask { shape: shape.to_vec(), observed: vec![false; len] })
    }

    /// Build from flat row-major flags.
    pub fn from_flags(shape: &[usize], observed: Vec<bool>) -> Result<Self> {
        let len = check_shape(shape)?;
        if observed.len() != len {
            return Err(CoreError::ShapeMismatch(format!(
                "shape {:?} needs {} flags, got {}",
                shape,
                len,
                observed.len()
            )));
        }
        Ok(ObservationMask { shape: shape.to_vec(), observed })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    #[inline]
    pub fn observed_flat(&self, p: usize) -> bool {
        self.observed[p]
    }

    pub fn set_flat(&mut self, p: usize, v: bool) {
        self.observed[p] = v;
    }

    pub fn flags(&self) -> &[bool] {
        &self.observed
    }

    pub fn count_observed(&self) -> usize {
        self.observed.iter().filter(|&&b| b).count()
    }

    /// Flat indices of observed entries, ascending.
    pub fn iter_observed(&self) -> impl Iterator<Item = usize> + '_ {
        self.observed.iter().enumerate().filter_map(|(p, &b)| if b { Some(p) } else { None })
    }
}

/// CP factor set: one matrix per mode, all with `rank` columns, one mode
/// designated temporal.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet<T> {
    matrices: Vec<Matrix<T>>,
    rank: usize,
    temporal_mode: usize,
}

impl<T: Scalar> FactorSet<T> {
    pub fn new(matrices: Vec<Matrix<T>>, temporal_mode: usize) -> Result<Self> {
        if matrices.len() < 2 {
            return Err(CoreError::InvalidArgument(
                "factor set needs at least two modes".into(),
            ));
        }
        let rank = matrices[0].cols();
        if rank == 0 {
            return Err(CoreError::RankMismatch("rank must be at least 1".into()));
        }
        for (n, m) in matrices.iter().enumerate() {
            if m.cols() != rank {
                return Err(CoreError::RankMismatch(format!(
                    "mode {n} has {} columns, expected {rank}",
                    m.cols()
                )));
            }
        }
        if temporal_mode >= matrices.len() {
            return Err(CoreError::ModeOutOfRange {
                mode: temporal_mode,
                order: matrices.len(),
            });
        }
        Ok(FactorSet { matrices, rank, temporal_mode })
    }

    /// Factor set with entries drawn uniformly from `[0, 1)`.
    pub fn random<R: Rng + ?Sized>(
        shape: &[usize],
        rank: usize,
        temporal_mode: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let matrices =
            shape.iter().map(|&rows| Matrix::random_uniform(rows, rank, rng)).collect();
        FactorSet::new(matrices, temporal_mode)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn order(&self) -> usize {
        self.matrices.len()
    }

    pub fn temporal_mode(&self) -> usize {
        self.temporal_mode
    }

    pub fn matrices(&self) -> &[Matrix<T>] {
        &self.matrices
    }

    pub fn matrix(&self, mode: usize) -> &Matrix<T> {
        &self.matrices[mode]
    }

    pub fn matrix_mut(&mut self, mode: usize) -> &mut Matrix<T> {
        &mut self.matrices[mode]
    }

    /// Mode sizes (rows of each factor matrix).
    pub fn shape(&self) -> Vec<usize> {
        self.matrices.iter().map(|m| m.rows()).collect()
    }
}

/// Khatri-Rao (column-wise Kronecker) product. Row `i * b.rows() + j` of the
/// result is the elementwise product of `a`'s row `i` and `b`'s row `j`.
pub fn khatri_rao<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols() != b.cols() {
        return Err(CoreError::RankMismatch(format!(
            "khatri_rao column counts differ: {} vs {}",
            a.cols(),
            b.cols()
        )));
    }
    let r = a.cols();
    let mut out = Matrix::zeros(a.rows() * b.rows(), r);
    for i in 0..a.rows() {
        let ra = a.row(i);
        for j in 0..b.rows() {
            let rb = b.row(j);
            let dst = out.row_mut(i * b.rows() + j);
            for c in 0..r {
                dst[c] = ra[c] * rb[c];
            }
        }
    }
    Ok(out)
}

/// Khatri-Rao chain over `mats` given in ascending mode order, multiplied in
/// descending order (`last ⊙ ... ⊙ first`), so the first matrix's row index
/// varies fastest along the result's rows.
pub fn khatri_rao_chain<T: Scalar>(mats: &[&Matrix<T>]) -> Result<Matrix<T>> {
    match mats.len() {
        0 => Err(CoreError::InvalidArgument("khatri_rao_chain needs at least one matrix".into())),
        1 => Ok(mats[0].clone()),
        _ => {
            let mut acc = mats[mats.len() - 1].clone();
            for m in mats[..mats.len() - 1].iter().rev() {
                acc = khatri_rao(&acc, m)?;
            }
            Ok(acc)
        }
    }
}

/// Mode-`n` unfolding. Rows are indexed by the mode-`n` index; columns order
/// the remaining modes with the first one fastest.
pub fn mode_unfold<T: Scalar>(x: &DenseTensor<T>, mode: usize) -> Result<Matrix<T>> {
    let order = x.order();
    if mode >= order {
        return Err(CoreError::ModeOutOfRange { mode, order });
    }
    let shape = x.shape();
    let rows = shape[mode];
    let cols = x.len() / rows;
    let mut col_stride = vec![0usize; order];
    let mut acc = 1;
    for k in 0..order {
        if k != mode {
            col_stride[k] = acc;
            acc *= shape[k];
        }
    }
    let mut out = Matrix::zeros(rows, cols);
    let mut idx = vec![0usize; order];
    for p in 0..x.len() {
        let mut col = 0;
        for k in 0..order {
            if k != mode {
                col += idx[k] * col_stride[k];
            }
        }
        out.set(idx[mode], col, x.data()[p]);
        advance_index(&mut idx, shape);
    }
    Ok(out)
}

/// Inverse of [`mode_unfold`]: refold a matrix into a tensor of `shape`.
pub fn mode_fold<T: Scalar>(
    mat: &Matrix<T>,
    mode: usize,
    shape: &[usize],
) -> Result<DenseTensor<T>> {
    let order = shape.len();
    if mode >= order {
        return Err(CoreError::ModeOutOfRange { mode, order });
    }
    let len = check_shape(shape)?;
    if mat.rows() != shape[mode] || mat.rows() * mat.cols() != len {
        return Err(CoreError::ShapeMismatch(format!(
            "cannot fold {}x{} matrix into {:?} along mode {}",
            mat.rows(),
            mat.cols(),
            shape,
            mode
        )));
    }
    let mut col_stride = vec![0usize; order];
    let mut acc = 1;
    for k in 0..order {
        if k != mode {
            col_stride[k] = acc;
            acc *= shape[k];
        }
    }
    let mut x = DenseTensor::zeros(shape)?;
    let mut idx = vec![0usize; order];
    for p in 0..len {
        let mut col = 0;
        for k in 0..order {
            if k != mode {
                col += idx[k] * col_stride[k];
            }
        }
        x.data_mut()[p] = mat.get(idx[mode], col);
        advance_index(&mut idx, shape);
    }
    Ok(x)
}

/// Full CP reconstruction from a factor set.
pub fn kruskal_reconstruct<T: Scalar>(factors: &FactorSet<T>) -> DenseTensor<T> {
    let shape = factors.shape();
    let rank = factors.rank();
    let order = factors.order();
    let len: usize = shape.iter().product();
    let mut data = vec![T::zero(); len];
    let mut idx = vec![0usize; order];
    for v in data.iter_mut() {
        let mut acc = T::zero();
        for r in 0..rank {
            let mut prod = T::one();
            for n in 0..order {
                prod *= factors.matrix(n).get(idx[n], r);
            }
            acc += prod;
        }
        *v = acc;
        advance_index(&mut idx, &shape);
    }
    DenseTensor { shape, data }
}

/// One temporal slice of a CP model: the non-temporal matrices combined with
/// a single temporal row vector of weights.
pub fn kruskal_slice<T: Scalar>(mats: &[Matrix<T>], weights: &[T]) -> Result<DenseTensor<T>> {
    if mats.is_empty() {
        return Err(CoreError::InvalidArgument("kruskal_slice needs at least one matrix".into()));
    }
    let rank = mats[0].cols();
    for (n, m) in mats.iter().enumerate() {
        if m.cols() != rank {
            return Err(CoreError::RankMismatch(format!(
                "mode {n} has {} columns, expected {rank}",
                m.cols()
            )));
        }
    }
    if weights.len() != rank {
        return Err(CoreError::RankMismatch(format!(
            "weight vector length {} does not match rank {rank}",
            weights.len()
        )));
    }
    let shape: Vec<usize> = mats.iter().map(|m| m.rows()).collect();
    let mut out = DenseTensor::zeros(&shape)?;
    match mats {
        [a] => {
            for i in 0..a.rows() {
                let ra = a.row(i);
                let mut acc = T::zero();
                for r in 0..rank {
                    acc += weights[r] * ra[r];
                }
                out.data_mut()[i] = acc;
            }
        }
        [a, b] => {
            // dominant case in streams of matrix slices: row-scaled inner products
            let mut wa = vec![T::zero(); rank];
            for i in 0..a.rows() {
                let ra = a.row(i);
                for r in 0..rank {
                    wa[r] = weights[r] * ra[r];
                }
                let base = i * b.rows();
                for j in 0..b.rows() {
                    let rb = b.row(j);
                    let mut acc = T::zero();
                    for r in 0..rank {
                        acc += wa[r] * rb[r];
                    }
                    out.data_mut()[base + j] = acc;
                }
            }
        }
        _ => {
            let mut idx = vec![0usize; mats.len()];
            for p in 0..out.len() {
                let mut acc = T::zero();
                for r in 0..rank {
                    let mut prod = weights[r];
                    for (n, m) in mats.iter().enumerate() {
                        prod *= m.get(idx[n], r);
                    }
                    acc += prod;
                }
                out.data_mut()[p] = acc;
                advance_index(&mut idx, &shape);
            }
        }
    }
    Ok(out)
}

/// Frobenius norm restricted to observed entries.
pub fn masked_frobenius<T: Scalar>(x: &DenseTensor<T>, mask: &ObservationMask) -> Result<T> {
    if x.shape() != mask.shape() {
        return Err(CoreError::ShapeMismatch(format!(
            "tensor {:?} vs mask {:?}",
            x.shape(),
            mask.shape()
        )));
    }
    let mut acc = T::zero();
    for (p, &v) in x.data().iter().enumerate() {
        if mask.observed_flat(p) {
            acc += v * v;
        }
    }
    Ok(acc.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> Matrix<f64> {
        Matrix::from_vec(rows, cols, v.to_vec()).unwrap()
    }

    /// Independent reconstruction: explicit index arithmetic, no shared code
    /// with `kruskal_reconstruct`.
    fn recon_oracle(f: &FactorSet<f64>) -> Vec<f64> {
        let shape = f.shape();
        let len: usize = shape.iter().product();
        let mut out = vec![0.0; len];
        for (p, o) in out.iter_mut().enumerate() {
            // decode row-major multi-index by repeated division
            let mut rem = p;
            let mut idx = vec![0usize; shape.len()];
            for k in (0..shape.len()).rev() {
                idx[k] = rem % shape[k];
                rem /= shape[k];
            }
            for r in 0..f.rank() {
                let mut prod = 1.0;
                for n in 0..shape.len() {
                    prod *= f.matrix(n).get(idx[n], r);
                }
                *o += prod;
            }
        }
        out
    }

    #[test]
    fn khatri_rao_single_column() {
        let a = mat(2, 1, &[1.0, 0.0]);
        let b = mat(2, 1, &[1.0, 1.0]);
        let p = khatri_rao(&a, &b).unwrap();
        assert_eq!(p.data(), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn khatri_rao_two_columns() {
        let a = mat(2, 2, &[2.0, 0.0, 0.0, 3.0]);
        let b = mat(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = khatri_rao(&a, &b).unwrap();
        assert_eq!(p.rows(), 4);
        assert_eq!(p.row(0), &[2.0, 0.0]);
        assert_eq!(p.row(1), &[2.0, 0.0]);
        assert_eq!(p.row(2), &[0.0, 3.0]);
        assert_eq!(p.row(3), &[0.0, 3.0]);
    }

    #[test]
    fn khatri_rao_ones_row_is_identity() {
        let a = mat(1, 3, &[1.0, 1.0, 1.0]);
        let b = mat(4, 3, &(0..12).map(|v| v as f64).collect::<Vec<_>>());
        let p = khatri_rao(&a, &b).unwrap();
        assert_eq!(p.data(), b.data());
    }

    #[test]
    fn unfold_matrix_mode0_is_identity() {
        let x = DenseTensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let u = mode_unfold(&x, 0).unwrap();
        assert_eq!(u.row(0), &[1.0, 2.0]);
        assert_eq!(u.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn unfold_rank_one_matches_chain() {
        // x = u ∘ v ∘ w; X_(0) must equal u (w ⊙ v)^T
        let u = [1.0, 2.0];
        let v = [3.0, 5.0, 7.0];
        let w = [-1.0, 2.0, 0.5, 4.0];
        let mut data = vec![0.0; 2 * 3 * 4];
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    data[(i * 3 + j) * 4 + k] = u[i] * v[j] * w[k];
                }
            }
        }
        let x = DenseTensor::from_vec(&[2, 3, 4], data).unwrap();
        for mode in 0..3 {
            let unf = mode_unfold(&x, mode).unwrap();
            let others: Vec<&Matrix<f64>>;
            let mv = mat(3, 1, &v);
            let mw = mat(4, 1, &w);
            let mu = mat(2, 1, &u);
            others = match mode {
                0 => vec![&mv, &mw],
                1 => vec![&mu, &mw],
                _ => vec![&mu, &mv],
            };
            let chain = khatri_rao_chain(&others).unwrap();
            let own = match mode {
                0 => &u[..],
                1 => &v[..],
                _ => &w[..],
            };
            for (i, &ui) in own.iter().enumerate() {
                for c in 0..chain.rows() {
                    let expect = ui * chain.get(c, 0);
                    assert!(
                        (unf.get(i, c) - expect).abs() < 1e-12,
                        "mode {mode} entry ({i},{c})"
                    );
                }
            }
        }
    }

    #[test]
    fn unfold_fold_roundtrip() {
        let data: Vec<f64> = (0..24).map(|v| v as f64 * 0.5 - 3.0).collect();
        let x = DenseTensor::from_vec(&[2, 3, 4], data).unwrap();
        for mode in 0..3 {
            let unf = mode_unfold(&x, mode).unwrap();
            let back = mode_fold(&unf, mode, &[2, 3, 4]).unwrap();
            assert_eq!(back, x);
        }
    }

    #[test]
    fn kruskal_matches_independent_loop() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let f = FactorSet::<f64>::random(&[3, 4, 5], 3, 2, &mut rng).unwrap();
        let x = kruskal_reconstruct(&f);
        let oracle = recon_oracle(&f);
        for (a, b) in x.data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cp_identity_unfolding_vs_chain() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let f = FactorSet::<f64>::random(&[4, 3, 5], 2, 2, &mut rng).unwrap();
        let x = kruskal_reconstruct(&f);
        for mode in 0..3 {
            let unf = mode_unfold(&x, mode).unwrap();
            let others: Vec<&Matrix<f64>> =
                (0..3).filter(|&n| n != mode).map(|n| f.matrix(n)).collect();
            let chain = khatri_rao_chain(&others).unwrap();
            // U(mode) * chain^T, computed longhand
            for i in 0..unf.rows() {
                for c in 0..unf.cols() {
                    let mut expect = 0.0;
                    for r in 0..f.rank() {
                        expect += f.matrix(mode).get(i, r) * chain.get(c, r);
                    }
                    assert!(
                        (unf.get(i, c) - expect).abs() < 1e-12,
                        "mode {mode} entry ({i},{c})"
                    );
                }
            }
        }
    }

    #[test]
    fn kruskal_slice_matches_full_reconstruction() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let a = Matrix::<f64>::random_uniform(3, 2, &mut rng);
        let b = Matrix::<f64>::random_uniform(4, 2, &mut rng);
        let w = vec![0.7, -1.3];
        let slice = kruskal_slice(&[a.clone(), b.clone()], &w).unwrap();
        // same thing as a full reconstruction with a 1-row temporal matrix
        let t = Matrix::from_vec(1, 2, w.clone()).unwrap();
        let f = FactorSet::new(vec![a, b, t], 2).unwrap();
        let full = kruskal_reconstruct(&f);
        assert_eq!(slice.len(), full.len());
        for (s, v) in slice.data().iter().zip(full.data()) {
            assert!((s - v).abs() < 1e-12);
        }
    }

    #[test]
    fn kruskal_slice_of_ones_counts_rank() {
        let a = Matrix::<f64>::from_vec(2, 3, vec![1.0; 6]).unwrap();
        let b = Matrix::<f64>::from_vec(2, 3, vec![1.0; 6]).unwrap();
        let s = kruskal_slice(&[a, b], &[1.0, 1.0, 1.0]).unwrap();
        assert!(s.data().iter().all(|&v| (v - 3.0).abs() < 1e-15));
    }

    #[test]
    fn masked_frobenius_counts_only_observed() {
        let x = DenseTensor::from_vec(&[2, 2], vec![3.0, 4.0, 100.0, 0.0]).unwrap();
        let mask =
            ObservationMask::from_flags(&[2, 2], vec![true, true, false, true]).unwrap();
        let n = masked_frobenius(&x, &mask).unwrap();
        assert!((n - 5.0).abs() < 1e-12);
    }

    #[test]
    fn mask_counts_and_iteration() {
        let mask =
            ObservationMask::from_flags(&[2, 3], vec![true, false, true, false, false, true])
                .unwrap();
        assert_eq!(mask.count_observed(), 3);
        let idx: Vec<usize> = mask.iter_observed().collect();
        assert_eq!(idx, vec![0, 2, 5]);
    }

    #[test]
    fn factor_set_validation() {
        let a = Matrix::<f64>::zeros(2, 2);
        let b = Matrix::<f64>::zeros(3, 3);
        assert!(FactorSet::new(vec![a.clone(), b], 0).is_err());
        assert!(FactorSet::new(vec![a.clone()], 0).is_err());
        assert!(FactorSet::new(vec![a.clone(), a.clone()], 5).is_err());
        assert!(FactorSet::new(vec![a.clone(), a], 1).is_ok());
    }

    #[test]
    fn norm_transfer_preserves_reconstruction() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let mut f = FactorSet::<f64>::random(&[3, 4, 6], 3, 2, &mut rng).unwrap();
        let before = kruskal_reconstruct(&f);
        // transfer each non-temporal column norm into the temporal matrix
        for n in 0..2 {
            for r in 0..f.rank() {
                let norm = f.matrix(n).col_norm(r);
                assert!(norm > 0.0);
                f.matrix_mut(2).scale_col(r, norm);
                f.matrix_mut(n).scale_col(r, 1.0 / norm);
            }
        }
        let after = kruskal_reconstruct(&f);
        for (a, b) in before.data().iter().zip(after.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for n in 0..2 {
            for r in 0..f.rank() {
                assert!((f.matrix(n).col_norm(r) - 1.0).abs() < 1e-10);
            }
        }
    }
}
