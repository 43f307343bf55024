//! Dense row-major matrices (rank ≤ 2 is all the models need) with the raw
//! multiply kernels used by the tape's forward and backward passes.

use alloc::vec;
use alloc::vec::Vec;

use super::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Real> Tensor<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::ZERO; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor size mismatch");
        Self { rows, cols, data }
    }

    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor size mismatch");
        Self {
            rows,
            cols,
            data: data.iter().map(|&x| S::from_f64(x)).collect(),
        }
    }

    pub fn scalar(v: S) -> Self {
        Self::from_vec(1, 1, vec![v])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn at(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> S {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.to_f64()).collect()
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn add_assign(&mut self, o: &Tensor<S>) {
        debug_assert_eq!(self.shape(), o.shape());
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += *b;
        }
    }

    /// 64-bit accumulated sum of all entries.
    pub fn sum_f64(&self) -> f64 {
        let mut acc = 0.0f64;
        for x in &self.data {
            acc += x.to_f64();
        }
        acc
    }

    /// `self · otherᵀ` is not needed; this is plain `self @ other`.
    /// The k-inner loop runs over contiguous rows of `other`, which lets the
    /// compiler vectorize the accumulation into `out` rows.
    pub fn matmul(&self, other: &Tensor<S>) -> Tensor<S> {
        debug_assert_eq!(self.cols, other.rows);
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Tensor::zeros(m, n);
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            let orow = &mut out.data[i * n..(i + 1) * n];
            for (l, &av) in arow.iter().enumerate() {
                let brow = &other.data[l * n..(l + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        out
    }

    /// `self @ otherᵀ` without materializing the transpose.
    pub fn matmul_nt(&self, other: &Tensor<S>) -> Tensor<S> {
        debug_assert_eq!(self.cols, other.cols);
        let (m, k, n) = (self.rows, self.cols, other.rows);
        let mut out = Tensor::zeros(m, n);
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &other.data[j * k..(j + 1) * k];
                let mut acc = S::ZERO;
                for (&a, &b) in arow.iter().zip(brow) {
                    acc += a * b;
                }
                out.data[i * n + j] = acc;
            }
        }
        out
    }

    /// `selfᵀ @ other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &Tensor<S>) -> Tensor<S> {
        debug_assert_eq!(self.rows, other.rows);
        let (k, m, n) = (self.rows, self.cols, other.cols);
        let mut out = Tensor::zeros(m, n);
        for l in 0..k {
            let arow = &self.data[l * m..(l + 1) * m];
            let brow = &other.data[l * n..(l + 1) * n];
            for (i, &av) in arow.iter().enumerate() {
                let orow = &mut out.data[i * n..(i + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    fn random_tensor(s: &mut SeedStream, rows: usize, cols: usize) -> Tensor<f64> {
        let data: Vec<f64> = (0..rows * cols).map(|_| s.range(-2.0, 2.0)).collect();
        Tensor::from_vec(rows, cols, data)
    }

    fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let mut out = Tensor::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for l in 0..a.cols() {
                    acc += a.at(i, l) * b.at(l, j);
                }
                out.data_mut()[i * b.cols() + j] = acc;
            }
        }
        out
    }

    #[test]
    fn matmul_variants_agree_with_naive() {
        let mut s = SeedStream::new(8, "tensor");
        for _ in 0..50 {
            let (m, k, n) = (1 + s.below(6), 1 + s.below(6), 1 + s.below(6));
            let a = random_tensor(&mut s, m, k);
            let b = random_tensor(&mut s, k, n);
            let expect = naive_matmul(&a, &b);
            let got = a.matmul(&b);
            for (x, y) in got.data().iter().zip(expect.data()) {
                assert!((x - y).abs() < 1e-12);
            }
            let got_nt = a.matmul_nt(&b.transpose());
            for (x, y) in got_nt.data().iter().zip(expect.data()) {
                assert!((x - y).abs() < 1e-12);
            }
            let got_tn = a.transpose().matmul_tn(&b);
            for (x, y) in got_tn.data().iter().zip(expect.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transpose_round_trips() {
        let mut s = SeedStream::new(9, "tensor-t");
        let a = random_tensor(&mut s, 3, 5);
        assert_eq!(a.transpose().transpose(), a);
    }
}
