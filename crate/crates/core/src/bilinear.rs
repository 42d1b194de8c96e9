//! Bilinear discriminant projections.
//!
//! Learns `Q1 (d1 x c1)` and `Q2 (d2 x c2)` so that `Q1^T X Q2` separates
//! classes: between-class scatter is maximized relative to within-class
//! scatter, alternating between the two sides. Each side reduces to a
//! symmetric-definite generalized eigenproblem
//!
//! ```text
//! S_b q = lambda (S_w + eps I) q
//! ```
//!
//! which is solved by Cholesky-factoring `S_w + eps I = L L^T`, eigen-solving
//! the symmetric matrix `L^-1 S_b L^-T`, and mapping eigenvectors back with
//! `L^-T`. Returned directions are therefore orthonormal in the
//! `S_w + eps I` inner product.

use std::cmp::Ordering;

use log::{debug, warn};
use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::types::{vectorize, FeatureTensor, LabelMatrix};

/// Relative tolerance used to decide that two eigenvalues tie.
const TIE_TOL: f64 = 1e-12;

/// Per-class and global means of the training matrices.
#[derive(Debug, Clone)]
pub struct ClassStatistics {
    pub class_means: Vec<DMatrix<f64>>,
    pub global_mean: DMatrix<f64>,
    pub class_counts: Vec<usize>,
    /// Classes without members; they are left out of every scatter sum.
    pub empty_classes: Vec<usize>,
}

/// Between-class (`between`) and within-class (`within`) scatter for one side
/// of the bilinear projection.
#[derive(Debug, Clone)]
pub struct ScatterPair {
    pub between: DMatrix<f64>,
    pub within: DMatrix<f64>,
}

impl ScatterPair {
    pub fn dim(&self) -> usize {
        self.between.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct Discriminant {
    /// `dim x k`, columns ordered by descending eigenvalue.
    pub directions: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct BilinearConfig {
    pub c1: usize,
    pub c2: usize,
    /// Maximum alternation rounds.
    pub t1: usize,
    /// Ridge on the within-class scatter, relative to `trace(S_w) / dim`.
    pub ridge: f64,
    /// Early stop when the trace ratio changes by less than this (relative).
    pub tol: f64,
}

impl BilinearConfig {
    pub fn new(c1: usize, c2: usize) -> Self {
        Self {
            c1,
            c2,
            t1: 5,
            ridge: 1e-6,
            tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BilinearFit {
    pub q1: DMatrix<f64>,
    pub q2: DMatrix<f64>,
    pub rounds: usize,
    /// `D_b / D_w` after each round.
    pub trace_ratios: Vec<f64>,
    pub empty_classes: Vec<usize>,
}

fn check_pairing(x: &FeatureTensor, y: &LabelMatrix) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::shape("features vs labels", x.len(), y.len()));
    }
    Ok(())
}

pub fn compute_class_statistics(x: &FeatureTensor, y: &LabelMatrix) -> Result<ClassStatistics> {
    check_pairing(x, y)?;
    let (d1, d2) = x.dims();
    let l = y.label_dim();
    let mut sums = vec![DMatrix::<f64>::zeros(d1, d2); l];
    let mut counts = vec![0usize; l];
    let mut total = DMatrix::<f64>::zeros(d1, d2);
    for (i, s) in x.samples().iter().enumerate() {
        total += s;
        for (k, &flag) in y.column(i).iter().enumerate() {
            if flag == 1 {
                sums[k] += s;
                counts[k] += 1;
            }
        }
    }
    let global_mean = total / x.len() as f64;
    let mut empty_classes = Vec::new();
    let class_means = sums
        .into_iter()
        .zip(&counts)
        .enumerate()
        .map(|(k, (sum, &count))| {
            if count == 0 {
                empty_classes.push(k);
                sum
            } else {
                sum / count as f64
            }
        })
        .collect();
    if !empty_classes.is_empty() {
        warn!("classes without training samples excluded from scatter: {empty_classes:?}");
    }
    Ok(ClassStatistics {
        class_means,
        global_mean,
        class_counts: counts,
        empty_classes,
    })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

enum Side {
    /// Scatter over rows (d1 x d1) given Q2.
    Left,
    /// Scatter over columns (d2 x d2) given Q1.
    Right,
}

fn scatter(
    stats: &ClassStatistics,
    x: &FeatureTensor,
    y: &LabelMatrix,
    q: &DMatrix<f64>,
    side: Side,
) -> Result<ScatterPair> {
    check_pairing(x, y)?;
    let (d1, d2) = x.dims();
    if stats.class_means.len() != y.label_dim() {
        return Err(Error::shape("class statistics", y.label_dim(), stats.class_means.len()));
    }
    let (dim, other) = match side {
        Side::Left => (d1, d2),
        Side::Right => (d2, d1),
    };
    if q.nrows() != other || q.ncols() == 0 || q.ncols() > other {
        return Err(Error::shape(
            "scatter projection",
            format!("{other}xk with 1<=k<={other}"),
            format!("{}x{}", q.nrows(), q.ncols()),
        ));
    }
    // (A) projected to the fixed side: A Q2 for Left, A^T Q1 for Right
    let reduce = |a: &DMatrix<f64>| -> DMatrix<f64> {
        match side {
            Side::Left => a * q,
            Side::Right => a.transpose() * q,
        }
    };

    let mut between = DMatrix::<f64>::zeros(dim, dim);
    for (k, mean) in stats.class_means.iter().enumerate() {
        let count = stats.class_counts[k];
        if count == 0 {
            continue;
        }
        let d = reduce(&(mean - &stats.global_mean));
        between.gemm(count as f64, &d, &d.transpose(), 1.0);
    }

    let mut within = DMatrix::<f64>::zeros(dim, dim);
    for (j, s) in x.samples().iter().enumerate() {
        for (k, &flag) in y.column(j).iter().enumerate() {
            if flag == 1 {
                let e = reduce(&(s - &stats.class_means[k]));
                within.gemm(1.0, &e, &e.transpose(), 1.0);
            }
        }
    }
    symmetrize(&mut between);
    symmetrize(&mut within);
    Ok(ScatterPair { between, within })
}

/// `d1 x d1` scatter pair with the column side fixed by `q2`:
/// `S_b = sum_i a_i (M_i - M_0) Q2 Q2^T (M_i - M_0)^T`,
/// `S_w = sum_i sum_{j in class i} (X_j - M_i) Q2 Q2^T (X_j - M_i)^T`.
pub fn scatter_for_q1(
    stats: &ClassStatistics,
    x: &FeatureTensor,
    y: &LabelMatrix,
    q2: &DMatrix<f64>,
) -> Result<ScatterPair> {
    scatter(stats, x, y, q2, Side::Left)
}

/// `d2 x d2` scatter pair with the row side fixed by `q1`; the transposed
/// analogue of [`scatter_for_q1`].
pub fn scatter_for_q2(
    stats: &ClassStatistics,
    x: &FeatureTensor,
    y: &LabelMatrix,
    q1: &DMatrix<f64>,
) -> Result<ScatterPair> {
    scatter(stats, x, y, q1, Side::Right)
}

/// Default ridge for `S_w`: `ridge * trace(S_w) / dim`, falling back to
/// `ridge` itself when the within-class scatter vanishes.
pub fn within_ridge(within: &DMatrix<f64>, ridge: f64) -> f64 {
    let dim = within.nrows().max(1) as f64;
    let scale = within.trace() / dim;
    if scale > f64::MIN_POSITIVE {
        ridge * scale
    } else {
        ridge
    }
}

/// Flips `v` so its first non-negligible component is positive.
fn canonical_sign(v: &mut [f64]) {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > TIE_TOL * max) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

fn lexicographic_desc(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match y.partial_cmp(x).unwrap_or(Ordering::Equal) {
            Ordering::Equal => continue,
            ord => return ord,
        }
    }
    Ordering::Equal
}

/// Top-`k` solutions of `S_b q = lambda (S_w + eps I) q`.
pub fn top_discriminant_directions(pair: &ScatterPair, k: usize, eps: f64) -> Result<Discriminant> {
    let dim = pair.dim();
    if pair.between.shape() != (dim, dim) || pair.within.shape() != (dim, dim) {
        return Err(Error::shape(
            "scatter pair",
            format!("{dim}x{dim}"),
            format!("{:?} / {:?}", pair.between.shape(), pair.within.shape()),
        ));
    }
    if k == 0 || k > dim {
        return Err(Error::InvalidConfig(format!(
            "requested {k} discriminant directions from a {dim}-dimensional problem"
        )));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidConfig(format!("ridge eps must be finite and >= 0, got {eps}")));
    }
    let eigen_error = |reason: &str| Error::Eigen {
        reason: reason.to_string(),
        dim,
        within_trace: pair.within.trace(),
        eps,
        min_diag: pair.within.diagonal().min() + eps,
    };

    let regularized = &pair.within + DMatrix::<f64>::identity(dim, dim) * eps;
    let chol = regularized
        .cholesky()
        .ok_or_else(|| eigen_error("S_w + eps I is not positive definite"))?;
    let l = chol.l();
    // C = L^-1 S_b L^-T, using the symmetry of S_b
    let t = l
        .solve_lower_triangular(&pair.between)
        .ok_or_else(|| eigen_error("triangular solve failed"))?;
    let mut c = l
        .solve_lower_triangular(&t.transpose())
        .ok_or_else(|| eigen_error("triangular solve failed"))?;
    symmetrize(&mut c);
    if c.iter().any(|v| !v.is_finite()) {
        return Err(eigen_error("transformed matrix is not finite"));
    }
    let eig = SymmetricEigen::try_new(c, f64::EPSILON, 100_000)
        .ok_or_else(|| eigen_error("symmetric eigensolver did not converge"))?;
    let back = l
        .tr_solve_lower_triangular(&eig.eigenvectors)
        .ok_or_else(|| eigen_error("back-substitution failed"))?;

    let mut pairs: Vec<(f64, Vec<f64>)> = (0..dim)
        .map(|j| {
            let mut v = back.column(j).iter().copied().collect::<Vec<_>>();
            canonical_sign(&mut v);
            (eig.eigenvalues[j], v)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    // order runs of tied eigenvalues by their canonical vectors
    let scale = pairs.iter().fold(1.0f64, |m, p| m.max(p.0.abs()));
    let mut start = 0;
    while start < pairs.len() {
        let mut end = start + 1;
        while end < pairs.len() && (pairs[start].0 - pairs[end].0).abs() <= TIE_TOL * scale {
            end += 1;
        }
        if end - start > 1 {
            pairs[start..end].sort_by(|a, b| lexicographic_desc(&a.1, &b.1));
        }
        start = end;
    }

    let mut directions = DMatrix::<f64>::zeros(dim, k);
    let mut eigenvalues = Vec::with_capacity(k);
    for (j, (value, v)) in pairs.into_iter().take(k).enumerate() {
        directions.column_mut(j).copy_from_slice(&v);
        eigenvalues.push(value);
    }
    Ok(Discriminant {
        directions,
        eigenvalues,
    })
}

/// Generalized Rayleigh trace `tr((Q^T (S_w + eps I) Q)^-1 Q^T S_b Q)`.
pub fn rayleigh_trace(pair: &ScatterPair, q: &DMatrix<f64>, eps: f64) -> Result<f64> {
    let dim = pair.dim();
    if q.nrows() != dim {
        return Err(Error::shape("rayleigh trace", dim, q.nrows()));
    }
    let a = q.transpose() * (&pair.within + DMatrix::<f64>::identity(dim, dim) * eps) * q;
    let b = q.transpose() * &pair.between * q;
    let chol = a.cholesky().ok_or(Error::Singular {
        context: "rayleigh trace",
        hint: "projected within-class scatter is not positive definite".into(),
    })?;
    Ok(chol.solve(&b).trace())
}

/// `(D_b, D_w)`: between- and within-class spread of the projected samples.
pub fn discriminant_traces(
    stats: &ClassStatistics,
    x: &FeatureTensor,
    y: &LabelMatrix,
    q1: &DMatrix<f64>,
    q2: &DMatrix<f64>,
) -> Result<(f64, f64)> {
    let pair = scatter_for_q1(stats, x, y, q2)?;
    if q1.nrows() != pair.dim() {
        return Err(Error::shape("discriminant traces", pair.dim(), q1.nrows()));
    }
    let db = (q1.transpose() * &pair.between * q1).trace();
    let dw = (q1.transpose() * &pair.within * q1).trace();
    Ok((db, dw))
}

fn ratio(db: f64, dw: f64) -> f64 {
    if dw > 0.0 {
        db / dw
    } else if db > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Alternately solves for `Q1` (given `Q2`) and `Q2` (given `Q1`), starting
/// from `Q2` = leading `c2` columns of the identity.
pub fn fit_bilinear(x: &FeatureTensor, y: &LabelMatrix, config: &BilinearConfig) -> Result<BilinearFit> {
    let (d1, d2) = x.dims();
    let BilinearConfig { c1, c2, t1, ridge, tol } = *config;
    if c1 == 0 || c1 > d1 || c2 == 0 || c2 > d2 {
        return Err(Error::InvalidConfig(format!(
            "transition sizes c1={c1}, c2={c2} must satisfy 1<=c1<={d1}, 1<=c2<={d2}"
        )));
    }
    if t1 == 0 {
        return Err(Error::InvalidConfig("t1 must be at least 1".into()));
    }
    if !(ridge > 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidConfig(format!("ridge must be positive, got {ridge}")));
    }
    let stats = compute_class_statistics(x, y)?;
    let mut q2 = DMatrix::<f64>::identity(d2, c2);
    let mut q1 = DMatrix::<f64>::identity(d1, c1);
    let mut trace_ratios = Vec::with_capacity(t1);
    let mut rounds = 0;
    for round in 0..t1 {
        let left = scatter_for_q1(&stats, x, y, &q2)?;
        q1 = top_discriminant_directions(&left, c1, within_ridge(&left.within, ridge))?.directions;

        let right = scatter_for_q2(&stats, x, y, &q1)?;
        q2 = top_discriminant_directions(&right, c2, within_ridge(&right.within, ridge))?.directions;

        let db = (q2.transpose() * &right.between * &q2).trace();
        let dw = (q2.transpose() * &right.within * &q2).trace();
        let current = ratio(db, dw);
        rounds = round + 1;
        debug!("bilinear round {rounds}: D_b/D_w = {current:.6e}");
        let converged = trace_ratios.last().is_some_and(|&prev: &f64| {
            if prev.is_infinite() && current.is_infinite() {
                true
            } else {
                (current - prev).abs() <= tol * prev.abs().max(f64::MIN_POSITIVE)
            }
        });
        trace_ratios.push(current);
        if converged {
            break;
        }
    }
    Ok(BilinearFit {
        q1,
        q2,
        rounds,
        trace_ratios,
        empty_classes: stats.empty_classes,
    })
}

/// `(c1*c2) x n` matrix whose column `i` is `vec(Q1^T X_i Q2)`.
pub fn project_features(x: &FeatureTensor, q1: &DMatrix<f64>, q2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (d1, d2) = x.dims();
    if q1.nrows() != d1 || q2.nrows() != d2 {
        return Err(Error::shape(
            "project features",
            format!("Q1 with {d1} rows, Q2 with {d2} rows"),
            format!("{} and {}", q1.nrows(), q2.nrows()),
        ));
    }
    let dim = q1.ncols() * q2.ncols();
    let q1t = q1.transpose();
    let mut h = DMatrix::<f64>::zeros(dim, x.len());
    for (i, s) in x.samples().iter().enumerate() {
        let p = &q1t * s * q2;
        h.column_mut(i).copy_from(&vectorize(&p));
    }
    Ok(h)
}
