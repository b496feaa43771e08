//! Dense numeric arrays for video feature volumes and small matrices.
//!
//! The crate works on two concrete array types: [`VideoFeatureTensor`], a
//! 4-axis volume laid out channel-first as `(channels, frames, height,
//! width)`, and [`Matrix`], a plain row-major 2-axis array. Both store `f64`
//! scalars; kernels that want 32-bit storage go through the tensor file
//! layer, which preserves the on-disk dtype for bit-exact round trips.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A spatiotemporal cell location, 0-based: frame `t`, row `y`, column `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coord3 {
    pub t: usize,
    pub y: usize,
    pub x: usize,
}

impl Coord3 {
    pub fn new(t: usize, y: usize, x: usize) -> Self {
        Coord3 { t, y, x }
    }
}

/// Spatiotemporal extents `(frames, height, width)` of a video volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims3 {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims3 {
    pub fn new(frames: usize, height: usize, width: usize) -> Self {
        Dims3 {
            frames,
            height,
            width,
        }
    }

    /// Total number of cells `T*H*W`.
    pub fn cells(&self) -> usize {
        self.frames * self.height * self.width
    }

    pub fn contains(&self, p: Coord3) -> bool {
        p.t < self.frames && p.y < self.height && p.x < self.width
    }

    /// Row-major cell index with the frame axis slowest.
    pub fn cell_index(&self, p: Coord3) -> usize {
        (p.t * self.height + p.y) * self.width + p.x
    }

    pub fn coord(&self, index: usize) -> Coord3 {
        let x = index % self.width;
        let y = (index / self.width) % self.height;
        let t = index / (self.width * self.height);
        Coord3 { t, y, x }
    }

    pub fn iter_cells(&self) -> impl Iterator<Item = Coord3> + '_ {
        (0..self.cells()).map(|i| self.coord(i))
    }

    pub fn as_tuple(&self) -> (usize, usize, usize) {
        (self.frames, self.height, self.width)
    }
}

/// A real-valued video feature volume of shape `(channels, frames, height, width)`,
/// row-major with the channel axis slowest. Holds frame embeddings, positional
/// encodings, and the query/key/value tensors of the attention kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFeatureTensor {
    channels: usize,
    dims: Dims3,
    data: Vec<f64>,
}

impl VideoFeatureTensor {
    pub fn zeros(channels: usize, dims: Dims3) -> Self {
        VideoFeatureTensor {
            channels,
            dims,
            data: vec![0.0; channels * dims.cells()],
        }
    }

    pub fn from_data(channels: usize, dims: Dims3, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || dims.frames == 0 || dims.height == 0 || dims.width == 0 {
            return Err(Error::InvalidDims("all axes must be >= 1".into()));
        }
        if data.len() != channels * dims.cells() {
            return Err(Error::ShapeMismatch(format!(
                "data length {} != {}x{}x{}x{}",
                data.len(),
                channels,
                dims.frames,
                dims.height,
                dims.width
            )));
        }
        Ok(VideoFeatureTensor {
            channels,
            dims,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn offset(&self, c: usize, p: Coord3) -> usize {
        ((c * self.dims.frames + p.t) * self.dims.height + p.y) * self.dims.width + p.x
    }

    pub fn get(&self, c: usize, p: Coord3) -> f64 {
        self.data[self.offset(c, p)]
    }

    pub fn set(&mut self, c: usize, p: Coord3, value: f64) {
        let i = self.offset(c, p);
        self.data[i] = value;
    }

    /// Copies the channel vector at cell `p` into a fresh buffer.
    pub fn cell_vector(&self, p: Coord3) -> Vec<f64> {
        (0..self.channels).map(|c| self.get(c, p)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reshapes into an `S x C` matrix with one row per cell, cells ordered
    /// by `Dims3::cell_index`. Attention kernels work in this layout so that
    /// per-cell channel vectors are contiguous.
    pub fn to_cell_matrix(&self) -> Matrix {
        let cells = self.dims.cells();
        let mut data = vec![0.0; cells * self.channels];
        for c in 0..self.channels {
            for (i, v) in self.data[c * cells..(c + 1) * cells].iter().enumerate() {
                data[i * self.channels + c] = *v;
            }
        }
        Matrix {
            rows: cells,
            cols: self.channels,
            data,
        }
    }

    /// Inverse of [`to_cell_matrix`](Self::to_cell_matrix).
    pub fn from_cell_matrix(m: &Matrix, dims: Dims3) -> Result<Self> {
        if m.rows != dims.cells() {
            return Err(Error::ShapeMismatch(format!(
                "matrix rows {} != cell count {}",
                m.rows,
                dims.cells()
            )));
        }
        let channels = m.cols;
        let cells = dims.cells();
        let mut data = vec![0.0; channels * cells];
        for i in 0..cells {
            for c in 0..channels {
                data[c * cells + i] = m.data[i * channels + c];
            }
        }
        Ok(VideoFeatureTensor {
            channels,
            dims,
            data,
        })
    }
}

/// A row-major 2-axis array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        Ok(Matrix {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_data(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "data length {} != {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Identity matrix of side `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Matrix-vector product `self * v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::ShapeMismatch(format!(
                "matvec: vector length {} != cols {}",
                v.len(),
                self.cols
            )));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), v)).collect())
    }
}

/// Dot product of two equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
///
/// Every output row sums to 1 within 1e-6 and all entries lie in `(0, 1]`.
pub fn softmax_rows(m: &Matrix) -> Result<Matrix> {
    if !m.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    let mut out = m.clone();
    for r in 0..out.rows {
        softmax_in_place(out.row_mut(r));
    }
    Ok(out)
}

/// Softmax of a single logit row, in place. The row must be non-empty and finite.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_symmetric_pair() {
        let m = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let s = softmax_rows(&m).unwrap();
        assert_eq!(s.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_uniform_triple() {
        let m = Matrix::from_rows(&[vec![1.0, 1.0, 1.0]]).unwrap();
        let s = softmax_rows(&m).unwrap();
        for v in s.row(0) {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_hand_evaluated() {
        // e^0 / (e^0 + 3) = 1/4 against logits [0, ln 3].
        let m = Matrix::from_rows(&[vec![0.0, 3.0f64.ln()]]).unwrap();
        let s = softmax_rows(&m).unwrap();
        assert!((s.get(0, 0) - 0.25).abs() < 1e-12);
        assert!((s.get(0, 1) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let m = Matrix::from_rows(&[vec![0.0, f64::NAN]]).unwrap();
        assert_eq!(softmax_rows(&m), Err(Error::NonFiniteInput));
        let m = Matrix::from_rows(&[vec![f64::INFINITY, 1.0]]).unwrap();
        assert_eq!(softmax_rows(&m), Err(Error::NonFiniteInput));
    }

    #[test]
    fn cell_matrix_round_trip() {
        let dims = Dims3::new(2, 3, 4);
        let data: Vec<f64> = (0..3 * dims.cells()).map(|i| i as f64 * 0.5).collect();
        let t = VideoFeatureTensor::from_data(3, dims, data).unwrap();
        let m = t.to_cell_matrix();
        assert_eq!(m.rows(), 24);
        assert_eq!(m.cols(), 3);
        let p = Coord3::new(1, 2, 3);
        assert_eq!(m.row(dims.cell_index(p)), t.cell_vector(p).as_slice());
        let back = VideoFeatureTensor::from_cell_matrix(&m, dims).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn cell_index_round_trip() {
        let dims = Dims3::new(3, 4, 5);
        for i in 0..dims.cells() {
            assert_eq!(dims.cell_index(dims.coord(i)), i);
        }
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..7, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-50.0..50.0)).collect();
            let m = Matrix::from_data(rows, cols, data).unwrap();
            let s = softmax_rows(&m).unwrap();
            for r in 0..rows {
                let sum: f64 = s.row(r).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-6);
                prop_assert!(s.row(r).iter().all(|v| *v > 0.0 && *v <= 1.0));
            }
        }

        #[test]
        fn softmax_shift_invariant(cols in 1usize..7, shift in -30.0f64..30.0, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let row: Vec<f64> = (0..cols).map(|_| rng.gen_range(-50.0..50.0)).collect();
            let shifted: Vec<f64> = row.iter().map(|v| v + shift).collect();
            let a = softmax_rows(&Matrix::from_rows(&[row]).unwrap()).unwrap();
            let b = softmax_rows(&Matrix::from_rows(&[shifted]).unwrap()).unwrap();
            for c in 0..cols {
                prop_assert!((a.get(0, c) - b.get(0, c)).abs() < 1e-6);
            }
        }
    }
}
