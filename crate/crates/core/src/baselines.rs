//! Comparison hashers.
//!
//! * [`LshModel`]: sign of a Gaussian random projection of the vectorized input.
//! * [`BpbcModel`]: bilinear code `vec(sign(R1^T X R2))` with fixed random
//!   orthonormal `R1`, `R2`, optionally truncated to `k1 < d1`, `k2 < d2`
//!   columns for short codes.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::types::{unvectorize, vectorize, CodeMatrix, FeatureTensor};

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    // row-major draw order so the stream does not depend on storage layout
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = StandardNormal.sample(rng);
        }
    }
    m
}

/// `d x k` matrix with orthonormal columns: a seeded Gaussian matrix passed
/// through QR, with signs fixed so that `R` has a positive diagonal.
pub fn random_orthonormal(d: usize, k: usize, seed: u64) -> Result<DMatrix<f64>> {
    if k == 0 || k > d {
        return Err(Error::InvalidConfig(format!("need 1 <= k <= d, got d={d}, k={k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = gaussian_matrix(d, k, &mut rng);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpbcModel {
    pub r1: DMatrix<f64>,
    pub r2: DMatrix<f64>,
}

impl BpbcModel {
    pub fn new(r1: DMatrix<f64>, r2: DMatrix<f64>) -> Result<Self> {
        for (name, r) in [("R1", &r1), ("R2", &r2)] {
            let k = r.ncols();
            if k == 0 || k > r.nrows() {
                return Err(Error::InvalidConfig(format!("{name} must have 1..=rows columns")));
            }
            let gram = r.transpose() * r;
            let err = (gram - DMatrix::<f64>::identity(k, k)).amax();
            if err > 1e-10 {
                return Err(Error::InvalidValue(format!(
                    "{name} columns are not orthonormal (max deviation {err:e})"
                )));
            }
        }
        Ok(Self { r1, r2 })
    }

    /// Random rotations downsized to `k1 x k2` outputs.
    pub fn random(d1: usize, d2: usize, k1: usize, k2: usize, seed: u64) -> Result<Self> {
        let r1 = random_orthonormal(d1, k1, seed)?;
        let r2 = random_orthonormal(d2, k2, seed.wrapping_add(0x9E37_79B9_7F4A_7C15))?;
        Self::new(r1, r2)
    }

    pub fn bits(&self) -> usize {
        self.r1.ncols() * self.r2.ncols()
    }

    fn check_input(&self, x: &FeatureTensor) -> Result<()> {
        let dims = (self.r1.nrows(), self.r2.nrows());
        if x.dims() != dims {
            return Err(Error::shape(
                "bpbc input",
                format!("{}x{}", dims.0, dims.1),
                format!("{}x{}", x.dims().0, x.dims().1),
            ));
        }
        Ok(())
    }

    fn rotated(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        self.r1.transpose() * s * &self.r2
    }
}

/// Largest `k1 <= sqrt(bits)` dividing `bits` with `k1 <= d1` and `bits / k1 <= d2`.
pub fn bpbc_shape(bits: usize, d1: usize, d2: usize) -> Result<(usize, usize)> {
    (1..=bits)
        .filter(|k1| bits.is_multiple_of(*k1) && *k1 <= d1 && bits / k1 <= d2)
        .min_by_key(|k1| (bits / k1).abs_diff(*k1))
        .map(|k1| (k1, bits / k1))
        .ok_or_else(|| {
            Error::InvalidConfig(format!("{bits} bits cannot be arranged as k1*k2 within {d1}x{d2}"))
        })
}

/// Codes `vec(sign(R1^T X_i R2))`, length `k1 * k2`.
pub fn bpbc_encode(x: &FeatureTensor, model: &BpbcModel) -> Result<CodeMatrix> {
    model.check_input(x)?;
    let mut v = DMatrix::<f64>::zeros(model.bits(), x.len());
    for (i, s) in x.samples().iter().enumerate() {
        v.column_mut(i).copy_from(&vectorize(&model.rotated(s)));
    }
    CodeMatrix::from_signs(&v)
}

/// `sum_i tr(B_i R2^T X_i^T R1)` with `B_i` the `k1 x k2` reshaping of code `i`.
pub fn bpbc_objective(x: &FeatureTensor, codes: &CodeMatrix, model: &BpbcModel) -> Result<f64> {
    model.check_input(x)?;
    if codes.len() != x.len() || codes.bits() != model.bits() {
        return Err(Error::shape(
            "bpbc codes",
            format!("{} codes of {} bits", x.len(), model.bits()),
            format!("{} codes of {} bits", codes.len(), codes.bits()),
        ));
    }
    let (k1, k2) = (model.r1.ncols(), model.r2.ncols());
    let b = codes.to_matrix();
    let mut total = 0.0;
    for (i, s) in x.samples().iter().enumerate() {
        let bi = unvectorize(&b.column(i).into_owned(), k1, k2)?;
        total += (bi * model.r2.transpose() * s.transpose() * &model.r1).trace();
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LshModel {
    /// `c x (d1*d2)` standard-normal projection.
    pub projection: DMatrix<f64>,
    pub seed: u64,
}

impl LshModel {
    pub fn random(bits: usize, d1: usize, d2: usize, seed: u64) -> Result<Self> {
        if bits == 0 || d1 == 0 || d2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "LSH needs positive sizes, got bits={bits}, d1={d1}, d2={d2}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            projection: gaussian_matrix(bits, d1 * d2, &mut rng),
            seed,
        })
    }

    pub fn bits(&self) -> usize {
        self.projection.nrows()
    }
}

/// Codes `sign(P vec(X_i))`.
pub fn lsh_encode(x: &FeatureTensor, model: &LshModel) -> Result<CodeMatrix> {
    let (d1, d2) = x.dims();
    if model.projection.ncols() != d1 * d2 {
        return Err(Error::shape("lsh input", model.projection.ncols(), d1 * d2));
    }
    CodeMatrix::from_signs(&(&model.projection * x.vectorized()))
}
