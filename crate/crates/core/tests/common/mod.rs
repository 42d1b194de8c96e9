#![allow(dead_code)]

//! Shared fixtures and deliberately naive reference implementations used by
//! the integration tests. Nothing here calls into the library's numerical
//! routines; the oracles are plain loops over indices.

use std::path::{Path, PathBuf};

use bsdh_core::data::{load_idx, random_split, PixelScale};
use bsdh_core::{FeatureTensor, LabelMatrix};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller keeps the fixtures independent of rand_distr
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| gaussian(rng))
}

pub fn random_signs(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 })
}

pub fn random_tensor(n: usize, d1: usize, d2: usize, rng: &mut ChaCha8Rng) -> FeatureTensor {
    FeatureTensor::new((0..n).map(|_| random_matrix(d1, d2, rng)).collect()).unwrap()
}

/// Labels where sample `i` carries class `i % l` plus, with probability
/// `extra`, one more random class.
pub fn random_labels(n: usize, l: usize, extra: f64, rng: &mut ChaCha8Rng) -> LabelMatrix {
    let cols: Vec<Vec<u8>> = (0..n)
        .map(|i| {
            let mut c = vec![0u8; l];
            c[i % l] = 1;
            if rng.random::<f64>() < extra {
                c[rng.random_range(0..l)] = 1;
            }
            c
        })
        .collect();
    LabelMatrix::from_columns(l, &cols).unwrap()
}

pub fn random_orthonormal_columns(d: usize, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    // modified Gram-Schmidt on a Gaussian matrix
    let mut m = random_matrix(d, k, rng);
    for j in 0..k {
        for p in 0..j {
            let dot: f64 = (0..d).map(|r| m[(r, j)] * m[(r, p)]).sum();
            for r in 0..d {
                m[(r, j)] -= dot * m[(r, p)];
            }
        }
        let norm: f64 = (0..d).map(|r| m[(r, j)] * m[(r, j)]).sum::<f64>().sqrt();
        for r in 0..d {
            m[(r, j)] /= norm;
        }
    }
    m
}

pub fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist5k")
}

pub fn load_mnist() -> (FeatureTensor, LabelMatrix) {
    let dir = mnist_dir();
    load_idx(
        &dir.join("images-idx3-ubyte.gz"),
        &dir.join("labels-idx1-ubyte.gz"),
        PixelScale::Unit,
    )
    .expect("bundled MNIST subset")
}

pub struct MnistSplit {
    pub train_x: FeatureTensor,
    pub train_y: LabelMatrix,
    pub query_x: FeatureTensor,
    pub query_y: LabelMatrix,
}

pub fn mnist_split(n_train: usize, n_query: usize, seed: u64) -> MnistSplit {
    let (x, y) = load_mnist();
    let split = random_split(x.len(), n_query, n_train, seed).unwrap();
    MnistSplit {
        train_x: x.select(&split.train).unwrap(),
        train_y: y.select(&split.train).unwrap(),
        query_x: x.select(&split.query).unwrap(),
        query_y: y.select(&split.query).unwrap(),
    }
}

// ---- statistics and scatter ----

pub fn naive_class_means(x: &FeatureTensor, y: &LabelMatrix) -> (Vec<Option<DMatrix<f64>>>, DMatrix<f64>) {
    let (d1, d2) = x.dims();
    let n = x.len();
    let mut global = DMatrix::zeros(d1, d2);
    for r in 0..d1 {
        for c in 0..d2 {
            let mut s = 0.0;
            for i in 0..n {
                s += x.sample(i)[(r, c)];
            }
            global[(r, c)] = s / n as f64;
        }
    }
    let means = (0..y.label_dim())
        .map(|k| {
            let members: Vec<usize> = (0..n).filter(|&i| y.get(k, i) == 1).collect();
            if members.is_empty() {
                return None;
            }
            let mut m = DMatrix::zeros(d1, d2);
            for r in 0..d1 {
                for c in 0..d2 {
                    let mut s = 0.0;
                    for &i in &members {
                        s += x.sample(i)[(r, c)];
                    }
                    m[(r, c)] = s / members.len() as f64;
                }
            }
            Some(m)
        })
        .collect();
    (means, global)
}

/// `sum_t A[r,t] A[s,t]` style accumulation of `A Q Q^T A^T` (left side) or
/// `A^T Q Q^T A` (right side) into `acc` with weight `w`.
fn accumulate(acc: &mut DMatrix<f64>, a: &DMatrix<f64>, q: &DMatrix<f64>, w: f64, left: bool) {
    let dim = acc.nrows();
    for r in 0..dim {
        for s in 0..dim {
            let mut total = 0.0;
            for p in 0..q.ncols() {
                let mut u = 0.0;
                let mut v = 0.0;
                for t in 0..q.nrows() {
                    if left {
                        u += a[(r, t)] * q[(t, p)];
                        v += a[(s, t)] * q[(t, p)];
                    } else {
                        u += a[(t, r)] * q[(t, p)];
                        v += a[(t, s)] * q[(t, p)];
                    }
                }
                total += u * v;
            }
            acc[(r, s)] += w * total;
        }
    }
}

/// Returns `(S_b, S_w)`. `left = true` gives the pair used to solve for `Q1`
/// (with `q = Q2`); `left = false` the pair for `Q2` (with `q = Q1`).
pub fn naive_scatter(x: &FeatureTensor, y: &LabelMatrix, q: &DMatrix<f64>, left: bool) -> (DMatrix<f64>, DMatrix<f64>) {
    let (d1, d2) = x.dims();
    let dim = if left { d1 } else { d2 };
    let (means, global) = naive_class_means(x, y);
    let mut sb = DMatrix::zeros(dim, dim);
    let mut sw = DMatrix::zeros(dim, dim);
    for (k, mean) in means.iter().enumerate() {
        let Some(mean) = mean else { continue };
        let members: Vec<usize> = (0..x.len()).filter(|&i| y.get(k, i) == 1).collect();
        accumulate(&mut sb, &(mean - &global), q, members.len() as f64, left);
        for &i in &members {
            accumulate(&mut sw, &(x.sample(i) - mean), q, 1.0, left);
        }
    }
    (sb, sw)
}

pub fn naive_projection(x: &FeatureTensor, q1: &DMatrix<f64>, q2: &DMatrix<f64>) -> DMatrix<f64> {
    let (c1, c2) = (q1.ncols(), q2.ncols());
    let (d1, d2) = x.dims();
    let mut h = DMatrix::zeros(c1 * c2, x.len());
    for i in 0..x.len() {
        let s = x.sample(i);
        for a in 0..c1 {
            for b in 0..c2 {
                let mut v = 0.0;
                for r in 0..d1 {
                    for c in 0..d2 {
                        v += q1[(r, a)] * s[(r, c)] * q2[(c, b)];
                    }
                }
                h[(b * c1 + a, i)] = v;
            }
        }
    }
    h
}

// ---- dense linear algebra ----

/// Gaussian elimination with partial pivoting; solves `a x = b` column by column.
pub fn gauss_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = b.ncols();
    let mut aug = vec![vec![0.0; n + m]; n];
    for r in 0..n {
        for c in 0..n {
            aug[r][c] = a[(r, c)];
        }
        for c in 0..m {
            aug[r][n + c] = b[(r, c)];
        }
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| aug[i][col].abs().partial_cmp(&aug[j][col].abs()).unwrap())
            .unwrap();
        aug.swap(col, pivot);
        let (upper, lower) = aug.split_at_mut(col + 1);
        let pivot_row = &upper[col];
        for row in lower.iter_mut().take(n - col - 1) {
            let f = row[col] / pivot_row[col];
            for (v, p) in row.iter_mut().zip(pivot_row).skip(col) {
                *v -= f * p;
            }
        }
    }
    let mut x = DMatrix::zeros(n, m);
    for c in 0..m {
        for r in (0..n).rev() {
            let mut s = aug[r][n + c];
            for k in r + 1..n {
                s -= aug[r][k] * x[(k, c)];
            }
            x[(r, c)] = s / aug[r][r];
        }
    }
    x
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix, ascending.
pub fn jacobi_eigenvalues(s: &DMatrix<f64>) -> Vec<f64> {
    let n = s.nrows();
    let mut a = s.clone();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off < 1e-30 * (1.0 + a.norm_squared()) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

/// Generalized eigenvalues of `sb q = lambda sw q` by symmetric
/// whitening with `sw^{-1/2}` computed from Jacobi rotations of `sw`,
/// sorted descending.
pub fn generalized_eigenvalues(sb: &DMatrix<f64>, sw: &DMatrix<f64>) -> Vec<f64> {
    let n = sw.nrows();
    // eigenvectors of sw by Jacobi with accumulated rotations
    let mut a = sw.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
        }
        if off < 1e-30 * (1.0 + a.norm_squared()) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut inv_sqrt = DMatrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += v[(r, k)] * v[(c, k)] / a[(k, k)].sqrt();
            }
            inv_sqrt[(r, c)] = s;
        }
    }
    let mut c = &inv_sqrt * sb * &inv_sqrt;
    c = (&c + c.transpose()) * 0.5;
    let mut ev = jacobi_eigenvalues(&c);
    ev.reverse();
    ev
}

// ---- objective and metrics ----

pub fn naive_objective(
    y: &DMatrix<f64>,
    b: &DMatrix<f64>,
    w: &DMatrix<f64>,
    u: &DMatrix<f64>,
    h: &DMatrix<f64>,
    lambda: f64,
    mu: f64,
) -> f64 {
    let (c, n) = (b.nrows(), b.ncols());
    let l = y.nrows();
    let mut fit = 0.0;
    for j in 0..l {
        for i in 0..n {
            let mut pred = 0.0;
            for k in 0..c {
                pred += w[(k, j)] * b[(k, i)];
            }
            fit += (y[(j, i)] - pred).powi(2);
        }
    }
    let reg: f64 = w.iter().map(|v| v * v).sum();
    let mut quant = 0.0;
    for k in 0..c {
        for i in 0..n {
            let mut r = 0.0;
            for p in 0..h.nrows() {
                r += u[(k, p)] * h[(p, i)];
            }
            quant += (b[(k, i)] - r).powi(2);
        }
    }
    fit + lambda * reg + mu * quant
}

pub fn naive_hamming(a: &[i8], b: &[i8]) -> u32 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u32
}

pub fn naive_relevant(a: &[u8], b: &[u8]) -> bool {
    a.iter().zip(b).any(|(x, y)| *x == 1 && *y == 1)
}

/// Database order by (distance, index) and the relevance of each ranked item.
pub fn naive_rank(query: &[i8], db: &[Vec<i8>], query_labels: &[u8], db_labels: &[Vec<u8>]) -> (Vec<usize>, Vec<bool>) {
    let mut idx: Vec<(u32, usize)> = db.iter().enumerate().map(|(i, c)| (naive_hamming(query, c), i)).collect();
    // insertion sort, so nothing is shared with the library's counting sort
    for i in 1..idx.len() {
        let mut j = i;
        while j > 0 && idx[j - 1] > idx[j] {
            idx.swap(j - 1, j);
            j -= 1;
        }
    }
    let order: Vec<usize> = idx.iter().map(|p| p.1).collect();
    let rel = order.iter().map(|&i| naive_relevant(query_labels, &db_labels[i])).collect();
    (order, rel)
}

pub fn naive_precision(rel: &[bool], k: usize) -> f64 {
    rel[..k].iter().filter(|&&r| r).count() as f64 / k as f64
}

pub fn naive_recall(rel: &[bool], k: usize) -> f64 {
    let total = rel.iter().filter(|&&r| r).count();
    rel[..k].iter().filter(|&&r| r).count() as f64 / total as f64
}

pub fn naive_ap(rel: &[bool]) -> Option<f64> {
    let total = rel.iter().filter(|&&r| r).count();
    if total == 0 {
        return None;
    }
    let mut sum = 0.0;
    for k in 1..=rel.len() {
        if rel[k - 1] {
            sum += naive_precision(rel, k);
        }
    }
    Some(sum / total as f64)
}
