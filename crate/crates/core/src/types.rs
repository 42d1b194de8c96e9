//! Shared containers: matrix-form feature sets, label matrices, binary codes
//! (both ±1 and bit-packed) and the trained bilinear hashing model.
//!
//! Conventions used throughout the crate:
//!
//! * every real computation is `f64`;
//! * `sign(0) = +1`;
//! * vectorization is column-major, `vec(M)[i + j * rows] = M[(i, j)]`;
//! * code matrices are `c x n` with one sample per column.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Sign with the zero convention `sign(0) = +1`.
pub fn sign(x: f64) -> Result<i8> {
    if !x.is_finite() {
        return Err(Error::InvalidValue(format!("sign of non-finite value {x}")));
    }
    Ok(if x >= 0.0 { 1 } else { -1 })
}

/// Column-major stacking of a matrix into a vector.
pub fn vectorize(m: &DMatrix<f64>) -> DVector<f64> {
    // nalgebra storage is already column-major
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vectorize`].
pub fn unvectorize(v: &DVector<f64>, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if v.len() != rows * cols {
        return Err(Error::shape(
            "unvectorize",
            format!("{} entries", rows * cols),
            format!("{} entries", v.len()),
        ));
    }
    Ok(DMatrix::from_column_slice(rows, cols, v.as_slice()))
}

/// `n` samples, each a `d1 x d2` real matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    samples: Vec<DMatrix<f64>>,
    d1: usize,
    d2: usize,
}

impl FeatureTensor {
    pub fn new(samples: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidValue("feature tensor needs at least one sample".into()))?;
        let (d1, d2) = first.shape();
        if d1 == 0 || d2 == 0 {
            return Err(Error::InvalidValue(format!("empty sample shape {d1}x{d2}")));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.shape() != (d1, d2) {
                return Err(Error::shape(
                    "feature tensor sample",
                    format!("{d1}x{d2}"),
                    format!("{}x{} at sample {i}", s.nrows(), s.ncols()),
                ));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidValue(format!("non-finite entry in sample {i}")));
            }
        }
        Ok(Self { samples, d1, d2 })
    }

    /// Builds from `n` consecutive row-major `d1 x d2` blocks.
    pub fn from_row_major(n: usize, d1: usize, d2: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * d1 * d2 {
            return Err(Error::shape(
                "feature tensor data",
                format!("{} values", n * d1 * d2),
                format!("{} values", data.len()),
            ));
        }
        let block = d1 * d2;
        let samples = (0..n)
            .map(|i| DMatrix::from_row_slice(d1, d2, &data[i * block..(i + 1) * block]))
            .collect();
        Self::new(samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.d1, self.d2)
    }

    pub fn sample(&self, i: usize) -> &DMatrix<f64> {
        &self.samples[i]
    }

    pub fn samples(&self) -> &[DMatrix<f64>] {
        &self.samples
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.samples[i].clone()).collect())
    }

    /// `(d1*d2) x n` matrix of vectorized samples.
    pub fn vectorized(&self) -> DMatrix<f64> {
        let dim = self.d1 * self.d2;
        let mut out = DMatrix::zeros(dim, self.len());
        for (i, s) in self.samples.iter().enumerate() {
            out.column_mut(i).copy_from_slice(s.as_slice());
        }
        out
    }
}

/// `l x n` binary label matrix; every sample carries at least one label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    l: usize,
    n: usize,
    // sample-major: labels of sample i live at [i*l, (i+1)*l)
    data: Vec<u8>,
}

impl LabelMatrix {
    /// `columns[i]` is the label vector of sample `i`.
    pub fn from_columns(l: usize, columns: &[Vec<u8>]) -> Result<Self> {
        if l == 0 {
            return Err(Error::InvalidValue("label dimension must be positive".into()));
        }
        if columns.is_empty() {
            return Err(Error::InvalidValue("label matrix needs at least one sample".into()));
        }
        let mut data = Vec::with_capacity(l * columns.len());
        for (i, col) in columns.iter().enumerate() {
            if col.len() != l {
                return Err(Error::shape("label column", l, format!("{} at sample {i}", col.len())));
            }
            if let Some(bad) = col.iter().find(|&&v| v > 1) {
                return Err(Error::InvalidValue(format!("label entry {bad} at sample {i} is not 0/1")));
            }
            if col.iter().all(|&v| v == 0) {
                return Err(Error::InvalidValue(format!("sample {i} carries no label")));
            }
            data.extend_from_slice(col);
        }
        Ok(Self {
            l,
            n: columns.len(),
            data,
        })
    }

    pub fn one_hot(classes: &[usize], l: usize) -> Result<Self> {
        let cols: Vec<Vec<u8>> = classes
            .iter()
            .map(|&c| {
                if c >= l {
                    return Err(Error::InvalidValue(format!("class {c} out of range for {l} labels")));
                }
                let mut v = vec![0u8; l];
                v[c] = 1;
                Ok(v)
            })
            .collect::<Result<_>>()?;
        Self::from_columns(l, &cols)
    }

    pub fn label_dim(&self) -> usize {
        self.l
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn column(&self, i: usize) -> &[u8] {
        &self.data[i * self.l..(i + 1) * self.l]
    }

    pub fn get(&self, label: usize, sample: usize) -> u8 {
        self.data[sample * self.l + label]
    }

    /// Sample `i` shares at least one label with `other`.
    pub fn shares_label(&self, i: usize, other: &[u8]) -> bool {
        self.column(i).iter().zip(other).any(|(&a, &b)| a == 1 && b == 1)
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let cols: Vec<Vec<u8>> = indices.iter().map(|&i| self.column(i).to_vec()).collect();
        Self::from_columns(self.l, &cols)
    }

    /// Dense `l x n` real matrix `Y`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.l, self.n, |k, i| f64::from(self.get(k, i)))
    }
}

/// `c x n` matrix over {-1, +1}, one code per column.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CodeMatrix {
    bits: usize,
    n: usize,
    data: Vec<i8>,
}

impl CodeMatrix {
    pub fn from_columns(bits: usize, columns: &[Vec<i8>]) -> Result<Self> {
        if bits == 0 {
            return Err(Error::InvalidValue("code length must be positive".into()));
        }
        let mut data = Vec::with_capacity(bits * columns.len());
        for (i, col) in columns.iter().enumerate() {
            if col.len() != bits {
                return Err(Error::shape("code column", bits, format!("{} at sample {i}", col.len())));
            }
            if let Some(bad) = col.iter().find(|&&v| v != 1 && v != -1) {
                return Err(Error::InvalidValue(format!("code entry {bad} at sample {i} is not ±1")));
            }
            data.extend_from_slice(col);
        }
        Ok(Self {
            bits,
            n: columns.len(),
            data,
        })
    }

    /// Exact conversion from a real matrix whose entries are all ±1.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let (bits, n) = m.shape();
        let mut data = Vec::with_capacity(bits * n);
        for &v in m.iter() {
            if v == 1.0 {
                data.push(1);
            } else if v == -1.0 {
                data.push(-1);
            } else {
                return Err(Error::InvalidValue(format!("code entry {v} is not ±1")));
            }
        }
        if bits == 0 {
            return Err(Error::InvalidValue("code length must be positive".into()));
        }
        Ok(Self { bits, n, data })
    }

    /// Elementwise sign of a real `c x n` matrix.
    pub fn from_signs(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 {
            return Err(Error::InvalidValue("code length must be positive".into()));
        }
        let data = m.iter().map(|&v| sign(v)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            bits: m.nrows(),
            n: m.ncols(),
            data,
        })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn column(&self, i: usize) -> &[i8] {
        &self.data[i * self.bits..(i + 1) * self.bits]
    }

    pub fn get(&self, bit: usize, sample: usize) -> i8 {
        self.data[sample * self.bits + bit]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.bits, self.n, |b, i| f64::from(self.get(b, i)))
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.bits * indices.len());
        for &i in indices {
            data.extend_from_slice(self.column(i));
        }
        Self {
            bits: self.bits,
            n: indices.len(),
            data,
        }
    }

    /// Concatenates the columns of `other` after those of `self`.
    pub fn concat(&self, other: &CodeMatrix) -> Result<Self> {
        if self.bits != other.bits {
            return Err(Error::shape("code concat", self.bits, other.bits));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self {
            bits: self.bits,
            n: self.n + other.n,
            data,
        })
    }

    pub fn pack(&self) -> PackedCodes {
        PackedCodes::pack(self)
    }
}

/// Bit-packed codes: `+1 -> 1`, `-1 -> 0`, code bit `b` at bit `b % 64` of
/// word `b / 64`. Padding bits are zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PackedCodes {
    bits: usize,
    n: usize,
    words_per_code: usize,
    words: Vec<u64>,
}

impl PackedCodes {
    pub fn pack(codes: &CodeMatrix) -> Self {
        let bits = codes.bits();
        let words_per_code = bits.div_ceil(64);
        let mut words = vec![0u64; words_per_code * codes.len()];
        for i in 0..codes.len() {
            let dst = &mut words[i * words_per_code..(i + 1) * words_per_code];
            for (b, &v) in codes.column(i).iter().enumerate() {
                if v == 1 {
                    dst[b / 64] |= 1u64 << (b % 64);
                }
            }
        }
        Self {
            bits,
            n: codes.len(),
            words_per_code,
            words,
        }
    }

    /// Rebuilds from raw words, rejecting set padding bits.
    pub fn from_words(bits: usize, n: usize, words: Vec<u64>) -> Result<Self> {
        if bits == 0 {
            return Err(Error::InvalidValue("code length must be positive".into()));
        }
        let words_per_code = bits.div_ceil(64);
        if words.len() != words_per_code * n {
            return Err(Error::shape("packed codes", words_per_code * n, words.len()));
        }
        let tail = bits % 64;
        if tail != 0 {
            let mask = !((1u64 << tail) - 1);
            for i in 0..n {
                if words[(i + 1) * words_per_code - 1] & mask != 0 {
                    return Err(Error::InvalidValue(format!("padding bits set in code {i}")));
                }
            }
        }
        Ok(Self {
            bits,
            n,
            words_per_code,
            words,
        })
    }

    pub fn unpack(&self) -> CodeMatrix {
        let mut data = Vec::with_capacity(self.bits * self.n);
        for i in 0..self.n {
            let code = self.code(i);
            for b in 0..self.bits {
                let set = (code[b / 64] >> (b % 64)) & 1 == 1;
                data.push(if set { 1 } else { -1 });
            }
        }
        CodeMatrix {
            bits: self.bits,
            n: self.n,
            data,
        }
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn words_per_code(&self) -> usize {
        self.words_per_code
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn code(&self, i: usize) -> &[u64] {
        &self.words[i * self.words_per_code..(i + 1) * self.words_per_code]
    }
}

/// Hyper-parameters and bookkeeping recorded with a trained model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelHyper {
    pub lambda: f64,
    pub mu: f64,
    pub c1: usize,
    pub c2: usize,
    pub bits: usize,
    pub t1: usize,
    pub t2: usize,
    pub tol: f64,
    pub seed: u64,
}

/// Trained hash function `x -> sign(U (vec(Q1^T X Q2) - mean))` plus the
/// label regression `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearModel {
    pub q1: DMatrix<f64>,
    pub q2: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub w: DMatrix<f64>,
    /// Present only when projected features were centered before regression.
    pub feature_mean: Option<DVector<f64>>,
    pub hyper: ModelHyper,
    pub objective_trace: Vec<f64>,
}

impl BilinearModel {
    pub fn validate(&self) -> Result<()> {
        let h = &self.hyper;
        let (c1, c2) = (self.q1.ncols(), self.q2.ncols());
        if (c1, c2) != (h.c1, h.c2) {
            return Err(Error::shape("model projections", format!("{}x{}", h.c1, h.c2), format!("{c1}x{c2}")));
        }
        if self.u.shape() != (h.bits, c1 * c2) {
            return Err(Error::shape(
                "model U",
                format!("{}x{}", h.bits, c1 * c2),
                format!("{}x{}", self.u.nrows(), self.u.ncols()),
            ));
        }
        if self.w.nrows() != h.bits {
            return Err(Error::shape("model W rows", h.bits, self.w.nrows()));
        }
        if let Some(m) = &self.feature_mean {
            if m.len() != c1 * c2 {
                return Err(Error::shape("model feature mean", c1 * c2, m.len()));
            }
        }
        Ok(())
    }

    /// Input sizes `(d1, d2)` the model accepts.
    pub fn input_dims(&self) -> (usize, usize) {
        (self.q1.nrows(), self.q2.nrows())
    }

    pub fn label_dim(&self) -> usize {
        self.w.ncols()
    }
}
