//! Dense row-major matrices generic over the float scalar, plus numerically
//! stable softmax / cross-entropy. All summations run in a fixed row-major
//! order so results are bitwise reproducible within one build.

use num_traits::Float;

use crate::error::{Error, Result};

/// Row-major rectangular array of floats. The universal numeric carrier.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Float> DenseMatrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "data length {} != {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid_input("non-finite matrix entry"));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::shape("ragged rows"));
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(r, c, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> F) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { F::one() } else { F::zero() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> F {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: F) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// C = A * B with a fixed i-k-j loop order.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "matmul {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == F::zero() {
                    continue;
                }
                let brow = other.row(k);
                let orow = out.row_mut(i);
                for j in 0..other.cols {
                    orow[j] = orow[j] + a * brow[j];
                }
            }
        }
        Ok(out)
    }

    /// A * Bᵀ, the layer-application shape (batch x in) * (out x in)ᵀ.
    pub fn matmul_transpose(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::shape(format!(
                "matmul_transpose {}x{} * ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            for j in 0..other.rows {
                let brow = other.row(j);
                let mut acc = F::zero();
                for k in 0..self.cols {
                    acc = acc + arow[k] * brow[k];
                }
                out.set(i, j, acc);
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// self += alpha * other, elementwise.
    pub fn axpy(&mut self, alpha: F, other: &Self) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::shape("axpy shape mismatch"));
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + alpha * *b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: F) {
        for a in self.data.iter_mut() {
            *a = *a * alpha;
        }
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> F {
        let mut acc = F::zero();
        for &x in &self.data {
            acc = acc + x * x;
        }
        acc.sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> F {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut m = F::zero();
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            let d = (*a - *b).abs();
            if d > m {
                m = d;
            }
        }
        m
    }

    /// Flat dot product over all entries; shapes must match.
    pub fn dot(&self, other: &Self) -> F {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut acc = F::zero();
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            acc = acc + *a * *b;
        }
        acc
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Stable softmax with max-subtraction. Output entries lie in (0,1] and sum
/// to 1; invariant under adding a constant to every logit.
pub fn softmax<F: Float>(logits: &[F]) -> Result<Vec<F>> {
    if logits.is_empty() {
        return Err(Error::invalid_input("softmax of empty vector"));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid_input("non-finite logit"));
    }
    let max = logits.iter().cloned().fold(logits[0], F::max);
    let mut out: Vec<F> = logits.iter().map(|&x| (x - max).exp()).collect();
    let mut sum = F::zero();
    for &e in &out {
        sum = sum + e;
    }
    for e in out.iter_mut() {
        *e = *e / sum;
    }
    Ok(out)
}

/// Softmax applied in place to each row of `m`.
pub fn softmax_rows<F: Float>(m: &mut DenseMatrix<F>) -> Result<()> {
    for i in 0..m.rows() {
        let sm = softmax(m.row(i))?;
        m.row_mut(i).copy_from_slice(&sm);
    }
    Ok(())
}

/// −log(max(probs[label], eps)). Nonnegative and finite for eps > 0.
pub fn cross_entropy<F: Float>(probs: &[F], label: usize, eps: F) -> Result<F> {
    if label >= probs.len() {
        return Err(Error::invalid_input(format!(
            "label {} out of range for {} classes",
            label,
            probs.len()
        )));
    }
    if probs.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid_input("non-finite probability"));
    }
    Ok(-probs[label].max(eps).ln())
}

pub fn logsumexp<F: Float>(v: &[F]) -> F {
    let max = v.iter().cloned().fold(v[0], F::max);
    let mut acc = F::zero();
    for &x in v {
        acc = acc + (x - max).exp();
    }
    max + acc.ln()
}
