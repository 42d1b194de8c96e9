//! Alternating optimization of
//!
//! ```text
//! min_{B,W,U} ||Y - W^T B||^2 + lambda ||W||^2 + mu ||B - U H||^2,  B in {-1,+1}^{c x n}
//! ```
//!
//! `W` and `U` have closed forms. `B` is updated one row (one bit across all
//! samples) at a time: with the other rows fixed, the objective is linear in
//! the row because `z^T z = n` for every binary `z`, so the exact row minimizer
//! is a sign vector.

use log::debug;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bilinear::{fit_bilinear, project_features, BilinearConfig, BilinearFit};
use crate::error::{Error, Result};
use crate::types::{sign, BilinearModel, CodeMatrix, FeatureTensor, LabelMatrix, ModelHyper};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub mu: f64,
    pub bits: usize,
    /// Maximum outer iterations.
    pub t2: usize,
    /// Stop once the relative objective change drops below this.
    pub tol: f64,
    pub seed: u64,
    /// Row sweeps of the discrete update per outer iteration.
    pub max_sweeps: usize,
    /// Ridge on `H H^T`, relative to `trace(H H^T) / dim`.
    pub u_ridge: f64,
    /// Subtract the per-feature mean of `H` before the `U` regression.
    pub center_features: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-5,
            mu: 1e-1,
            bits: 32,
            t2: 10,
            tol: 1e-5,
            seed: 0,
            max_sweeps: 3,
            u_ridge: 1e-8,
            center_features: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return bad(format!("mu must be finite and >= 0, got {}", self.mu));
        }
        if self.bits == 0 {
            return bad("code length must be at least 1 bit".into());
        }
        if self.t2 == 0 {
            return bad("t2 must be at least 1".into());
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return bad(format!("tol must be >= 0, got {}", self.tol));
        }
        if self.max_sweeps == 0 {
            return bad("max_sweeps must be at least 1".into());
        }
        if !(self.u_ridge >= 0.0 && self.u_ridge.is_finite()) {
            return bad(format!("u_ridge must be finite and >= 0, got {}", self.u_ridge));
        }
        Ok(())
    }
}

/// The step that just completed, reported to an optimization observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    W,
    U,
    Row { sweep: usize, row: usize },
}

/// Callback invoked after every update with the current `(B, W, U)`.
pub type Observer<'a> = dyn FnMut(Step, &DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>) + 'a;

#[derive(Debug, Clone)]
pub struct TrainState {
    pub codes: CodeMatrix,
    pub w: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each outer iteration.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: BilinearModel,
    pub codes: CodeMatrix,
    pub bilinear: BilinearFit,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct DccOutcome {
    pub codes: DMatrix<f64>,
    pub sweeps: usize,
    /// Bits flipped in each sweep.
    pub flips: Vec<usize>,
}

fn expect_shape(context: &'static str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::shape(
            context,
            format!("{rows}x{cols}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

/// `||Y - W^T B||^2 + lambda ||W||^2 + mu ||B - U H||^2`.
pub fn objective_value(
    y: &DMatrix<f64>,
    b: &DMatrix<f64>,
    w: &DMatrix<f64>,
    u: &DMatrix<f64>,
    h: &DMatrix<f64>,
    lambda: f64,
    mu: f64,
) -> Result<f64> {
    let (c, n) = b.shape();
    let l = y.nrows();
    expect_shape("objective Y", y, l, n)?;
    expect_shape("objective W", w, c, l)?;
    expect_shape("objective H", h, h.nrows(), n)?;
    expect_shape("objective U", u, c, h.nrows())?;
    let fit = (y - w.transpose() * b).norm_squared();
    let quant = (b - u * h).norm_squared();
    Ok(fit + lambda * w.norm_squared() + mu * quant)
}

/// `W = (B B^T + lambda I)^-1 B Y^T`.
pub fn update_w(b: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let (c, n) = b.shape();
    expect_shape("update W labels", y, y.nrows(), n)?;
    let gram = b * b.transpose() + DMatrix::<f64>::identity(c, c) * lambda;
    let rhs = b * y.transpose();
    let scale = gram.diagonal().amax();
    if let Some(chol) = gram.clone().cholesky() {
        // a rank-deficient Gram can still factor with a rounding-level pivot
        let min_pivot = chol.l_dirty().diagonal().amin();
        if min_pivot * min_pivot > 1e-12 * scale {
            return Ok(chol.solve(&rhs));
        }
    }
    let lu = gram.lu();
    let well_posed = lu.u().diagonal().amin() > 1e-12 * scale;
    well_posed.then(|| lu.solve(&rhs)).flatten().ok_or_else(|| Error::Singular {
        context: "update W",
        hint: if lambda == 0.0 {
            "B B^T is singular; use lambda > 0".into()
        } else {
            format!("B B^T + {lambda:e} I could not be factored")
        },
    })
}

/// Absolute ridge added to `H H^T`.
pub fn u_ridge_value(gram: &DMatrix<f64>, relative: f64) -> f64 {
    relative * gram.trace() / gram.nrows().max(1) as f64
}

/// `U = B H^T (H H^T + eps_U I)^-1`, with `eps_U = ridge * trace(H H^T) / dim`.
pub fn update_u(b: &DMatrix<f64>, h: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    let n = b.ncols();
    expect_shape("update U features", h, h.nrows(), n)?;
    let p = h.nrows();
    let mut gram = h * h.transpose();
    let eps = u_ridge_value(&gram, ridge);
    gram += DMatrix::<f64>::identity(p, p) * eps;
    // solve G U^T = H B^T
    let rhs = h * b.transpose();
    let ut = match gram.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        None => {
            let pinv = gram.pseudo_inverse(1e-12).map_err(|e| Error::Singular {
                context: "update U",
                hint: e.to_string(),
            })?;
            pinv * rhs
        }
    };
    Ok(ut.transpose())
}

/// `M = Y^T W^T + mu H^T U^T` (`n x c`); column `k` drives row `k` of `B`.
pub fn dcc_target(
    y: &DMatrix<f64>,
    w: &DMatrix<f64>,
    u: &DMatrix<f64>,
    h: &DMatrix<f64>,
    mu: f64,
) -> Result<DMatrix<f64>> {
    let n = y.ncols();
    expect_shape("dcc target W", w, w.nrows(), y.nrows())?;
    expect_shape("dcc target H", h, h.nrows(), n)?;
    expect_shape("dcc target U", u, w.nrows(), h.nrows())?;
    Ok(y.transpose() * w.transpose() + (h.transpose() * u.transpose()) * mu)
}

/// Exact minimizer of the objective over row `row` of `B` with the other rows
/// fixed: `z = sign(m - B'^T W' v)`, `v` the matching row of `W`.
pub fn update_b_row(b: &DMatrix<f64>, w: &DMatrix<f64>, m: &DMatrix<f64>, row: usize) -> Result<DVector<f64>> {
    let (c, n) = b.shape();
    if row >= c {
        return Err(Error::InvalidValue(format!("row {row} out of range for {c}-bit codes")));
    }
    expect_shape("dcc W", w, c, w.ncols())?;
    expect_shape("dcc M", m, n, c)?;
    // coupling[j] = <W_j, W_row> for j != row
    let v = w.row(row);
    let mut coupling = w * v.transpose();
    coupling[row] = 0.0;
    let cross = b.transpose() * coupling;
    let mut z = DVector::<f64>::zeros(n);
    for i in 0..n {
        z[i] = f64::from(sign(m[(i, row)] - cross[i])?);
    }
    Ok(z)
}

/// Cyclic row sweeps (rows `0..c`) until a sweep flips nothing or
/// `max_sweeps` is reached.
pub fn update_b(
    b: &DMatrix<f64>,
    w: &DMatrix<f64>,
    u: &DMatrix<f64>,
    h: &DMatrix<f64>,
    y: &DMatrix<f64>,
    mu: f64,
    max_sweeps: usize,
) -> Result<DccOutcome> {
    run_dcc(b, w, u, h, y, mu, max_sweeps, &mut None)
}

#[allow(clippy::too_many_arguments)]
fn run_dcc(
    b: &DMatrix<f64>,
    w: &DMatrix<f64>,
    u: &DMatrix<f64>,
    h: &DMatrix<f64>,
    y: &DMatrix<f64>,
    mu: f64,
    max_sweeps: usize,
    observer: &mut Option<&mut Observer<'_>>,
) -> Result<DccOutcome> {
    let (c, n) = b.shape();
    expect_shape("dcc Y", y, y.nrows(), n)?;
    expect_shape("dcc W", w, c, y.nrows())?;
    let m = dcc_target(y, w, u, h, mu)?;
    let mut codes = b.clone();
    let mut flips = Vec::new();
    for sweep in 0..max_sweeps {
        let mut flipped = 0;
        for row in 0..c {
            let z = update_b_row(&codes, w, &m, row)?;
            for i in 0..n {
                if codes[(row, i)] != z[i] {
                    codes[(row, i)] = z[i];
                    flipped += 1;
                }
            }
            if let Some(obs) = observer.as_mut() {
                obs(Step::Row { sweep, row }, &codes, w, u);
            }
        }
        flips.push(flipped);
        if flipped == 0 {
            break;
        }
    }
    Ok(DccOutcome {
        codes,
        sweeps: flips.len(),
        flips,
    })
}

/// Uniform random ±1 matrix from a seeded ChaCha8 stream, filled sample by sample.
pub fn random_codes(bits: usize, n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = DMatrix::<f64>::zeros(bits, n);
    for i in 0..n {
        for k in 0..bits {
            b[(k, i)] = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
    }
    b
}

fn relative_change(prev: f64, current: f64) -> f64 {
    (prev - current).abs() / prev.abs().max(f64::MIN_POSITIVE)
}

/// Runs the `W -> U -> B` alternation on projected features `h`
/// (`p x n`) and dense labels `y` (`l x n`), starting from `W = 0`, `U = 0`
/// and seeded random codes.
pub fn optimize(
    h: &DMatrix<f64>,
    y: &DMatrix<f64>,
    config: &TrainConfig,
    mut observer: Option<&mut Observer<'_>>,
) -> Result<TrainState> {
    config.validate()?;
    let n = y.ncols();
    expect_shape("optimize features", h, h.nrows(), n)?;
    let (c, l, p) = (config.bits, y.nrows(), h.nrows());
    let mut b = random_codes(c, n, config.seed);
    let mut w = DMatrix::<f64>::zeros(c, l);
    let mut u = DMatrix::<f64>::zeros(c, p);
    let mut previous = objective_value(y, &b, &w, &u, h, config.lambda, config.mu)?;
    let mut trace = Vec::with_capacity(config.t2);
    let mut converged = false;

    for iteration in 1..=config.t2 {
        w = update_w(&b, y, config.lambda)?;
        if let Some(obs) = observer.as_mut() {
            obs(Step::W, &b, &w, &u);
        }
        u = update_u(&b, h, config.u_ridge)?;
        if let Some(obs) = observer.as_mut() {
            obs(Step::U, &b, &w, &u);
        }
        let dcc = run_dcc(&b, &w, &u, h, y, config.mu, config.max_sweeps, &mut observer)?;
        b = dcc.codes;

        let objective = objective_value(y, &b, &w, &u, h, config.lambda, config.mu)?;
        if !objective.is_finite() {
            return Err(Error::NonFiniteObjective { iteration, previous });
        }
        debug!(
            "iteration {iteration}: objective {objective:.9e}, dcc sweeps {} flips {:?}",
            dcc.sweeps, dcc.flips
        );
        trace.push(objective);
        let change = relative_change(previous, objective);
        previous = objective;
        if change < config.tol {
            converged = true;
            break;
        }
    }

    Ok(TrainState {
        codes: CodeMatrix::from_matrix(&b)?,
        w,
        u,
        objective: previous,
        iterations: trace.len(),
        converged,
        trace,
    })
}

/// Row means of `h` as a column vector.
pub fn feature_mean(h: &DMatrix<f64>) -> DVector<f64> {
    h.column_mean()
}

/// Full training: bilinear projections, projected features, then the
/// alternating discrete optimization.
pub fn train(
    x: &FeatureTensor,
    y: &LabelMatrix,
    projection: &BilinearConfig,
    config: &TrainConfig,
) -> Result<TrainOutput> {
    config.validate()?;
    if x.len() != y.len() {
        return Err(Error::shape("features vs labels", x.len(), y.len()));
    }
    let bilinear = fit_bilinear(x, y, projection)?;
    let mut h = project_features(x, &bilinear.q1, &bilinear.q2)?;
    let mean = config.center_features.then(|| feature_mean(&h));
    if let Some(mean) = &mean {
        for mut col in h.column_iter_mut() {
            col -= mean;
        }
    }
    let dense = y.to_dense();
    let state = optimize(&h, &dense, config, None)?;
    let model = BilinearModel {
        q1: bilinear.q1.clone(),
        q2: bilinear.q2.clone(),
        u: state.u,
        w: state.w,
        feature_mean: mean,
        hyper: ModelHyper {
            lambda: config.lambda,
            mu: config.mu,
            c1: projection.c1,
            c2: projection.c2,
            bits: config.bits,
            t1: projection.t1,
            t2: config.t2,
            tol: config.tol,
            seed: config.seed,
        },
        objective_trace: state.trace,
    };
    model.validate()?;
    Ok(TrainOutput {
        model,
        codes: state.codes,
        bilinear,
        iterations: state.iterations,
        converged: state.converged,
    })
}
