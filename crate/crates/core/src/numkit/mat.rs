use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "buffer of length {} cannot form a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Mat {
        self.map(|v| v * s)
    }

    fn zip_with(&self, other: &Mat, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Mat> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Mat) -> Result<Mat> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Mat) -> Result<Mat> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &Mat) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op: "axpy",
                left: self.shape(),
                right: other.shape(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest elementwise absolute difference; infinite when shapes differ.
    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        if self.shape() != other.shape() {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Largest `|m[i][j] - m[j][i]|`; infinite for non-square input.
    pub fn max_asymmetry(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// Column means, as a `1 x cols` matrix.
    pub fn col_mean(&self) -> Mat {
        let mut out = self.col_sum();
        if self.rows > 0 {
            let inv = 1.0 / self.rows as f64;
            out.data.iter_mut().for_each(|v| *v *= inv);
        }
        out
    }

    /// Column sums, as a `1 x cols` matrix.
    pub fn col_sum(&self) -> Mat {
        let mut out = Mat::zeros(1, self.cols);
        for i in 0..self.rows {
            for (o, v) in out.data.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    /// `selfᵀ · b` without materialising the transpose.
    pub fn t_matmul(&self, b: &Mat) -> Result<Mat> {
        if self.rows != b.rows {
            return Err(Error::Shape {
                op: "t_matmul",
                left: self.shape(),
                right: b.shape(),
            });
        }
        let mut out = Mat::zeros(self.cols, b.cols);
        for k in 0..self.rows {
            let brow = b.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += a * bv;
                }
            }
        }
        Ok(out)
    }

    /// `self · bᵀ`.
    pub fn matmul_t(&self, b: &Mat) -> Result<Mat> {
        if self.cols != b.cols {
            return Err(Error::Shape {
                op: "matmul_t",
                left: self.shape(),
                right: b.shape(),
            });
        }
        matmul(self, &b.transpose())
    }

    /// Permutes rows so that row `i` of the result is row `perm[i]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> Mat {
        let mut out = Mat::zeros(self.rows, self.cols);
        for (i, &p) in perm.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.row(p));
        }
        out
    }

    /// `P · self · Pᵀ` for the row permutation `perm` (square matrices).
    pub fn conjugate_by_permutation(&self, perm: &[usize]) -> Mat {
        let n = self.rows;
        let mut out = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = self[(perm[i], perm[j])];
            }
        }
        out
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// Standard matrix product. Each output entry accumulates over `k` in
/// ascending order; zero entries of `a` are skipped.
pub fn matmul(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.cols != b.rows {
        return Err(Error::Shape {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Mat::zeros(a.rows, b.cols);
    gemm(&a.data, a.cols, &b.data, b.cols, &mut out.data);
    Ok(out)
}

/// `out (m x n) += a (m x k) · b (k x n)`, all row-major.
///
/// Multiplies and adds are never fused, so the wide path produces the same
/// bits as the portable one.
fn gemm(a: &[f64], k: usize, b: &[f64], n: usize, out: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            unsafe { gemm_avx2(a, k, b, n, out) };
            return;
        }
    }
    gemm_blocked::<8>(a, k, b, n, out);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_avx2(a: &[f64], k: usize, b: &[f64], n: usize, out: &mut [f64]) {
    gemm_blocked::<16>(a, k, b, n, out);
}

#[inline(always)]
fn gemm_blocked<const BLOCK: usize>(a: &[f64], k: usize, b: &[f64], n: usize, out: &mut [f64]) {
    if n == 0 || k == 0 {
        return;
    }
    let full = n / BLOCK * BLOCK;
    for (arow, orow) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        let mut jb = 0;
        while jb < full {
            let mut acc = [0.0f64; BLOCK];
            acc.copy_from_slice(&orow[jb..jb + BLOCK]);
            for (kk, &av) in arow.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let brow: &[f64; BLOCK] = b[kk * n + jb..kk * n + jb + BLOCK].try_into().unwrap();
                for j in 0..BLOCK {
                    acc[j] += av * brow[j];
                }
            }
            orow[jb..jb + BLOCK].copy_from_slice(&acc);
            jb += BLOCK;
        }
        for j in full..n {
            let mut acc = orow[j];
            for (kk, &av) in arow.iter().enumerate() {
                if av != 0.0 {
                    acc += av * b[kk * n + j];
                }
            }
            orow[j] = acc;
        }
    }
}

pub fn relu(m: &Mat) -> Mat {
    m.map(|v| v.max(0.0))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &Mat) -> Mat {
    let mut out = m.clone();
    for i in 0..out.rows {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Rng;

    fn random(rng: &mut Rng, r: usize, c: usize) -> Mat {
        Mat::from_vec(r, c, (0..r * c).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_is_neutral() {
        let m = Mat::from_rows(&[&[1.5, -2.0], &[0.25, 7.0]]);
        assert_eq!(matmul(&Mat::identity(2), &m).unwrap(), m);
    }

    #[test]
    fn hand_product() {
        let a = Mat::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Mat::from_rows(&[&[0.0], &[1.0]]);
        assert_eq!(matmul(&a, &b).unwrap(), Mat::from_rows(&[&[2.0], &[4.0]]));
    }

    #[test]
    fn zero_times_anything() {
        let m = Mat::from_rows(&[&[1.5, -2.0], &[0.25, 7.0]]);
        assert_eq!(matmul(&Mat::zeros(3, 2), &m).unwrap(), Mat::zeros(3, 2));
    }

    #[test]
    fn mismatch_names_shapes() {
        let err = matmul(&Mat::zeros(2, 3), &Mat::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)"), "{msg}");
    }

    #[test]
    fn associativity() {
        let mut rng = Rng::new(11);
        for _ in 0..50 {
            let a = random(&mut rng, 5, 7);
            let b = random(&mut rng, 7, 3);
            let c = random(&mut rng, 3, 6);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let rel = left.sub(&right).unwrap().frobenius() / left.frobenius().max(1e-300);
            assert!(rel < 1e-9, "{rel}");
        }
    }

    #[test]
    fn transposed_products_agree() {
        let mut rng = Rng::new(3);
        let a = random(&mut rng, 6, 4);
        let b = random(&mut rng, 6, 5);
        let c = random(&mut rng, 3, 4);
        let direct = matmul(&a.transpose(), &b).unwrap();
        assert!(a.t_matmul(&b).unwrap().max_abs_diff(&direct) < 1e-14);
        let direct = matmul(&a, &c.transpose()).unwrap();
        assert!(a.matmul_t(&c).unwrap().max_abs_diff(&direct) < 1e-14);
    }

    #[test]
    fn relu_signs() {
        let m = Mat::from_rows(&[&[-1.0, 0.0, 2.0]]);
        assert_eq!(relu(&m), Mat::from_rows(&[&[0.0, 0.0, 2.0]]));
    }

    #[test]
    fn softmax_cases() {
        let s = softmax_rows(&Mat::from_rows(&[&[0.0, 0.0]]));
        assert_eq!(s.as_slice(), &[0.5, 0.5]);
        let s = softmax_rows(&Mat::from_rows(&[&[1f64.ln(), 3f64.ln()]]));
        assert!((s[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((s[(0, 1)] - 0.75).abs() < 1e-15);
        let big = softmax_rows(&Mat::from_rows(&[&[1000.0, -1000.0, 999.0]]));
        assert!(big.is_finite());
        assert!((big.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
