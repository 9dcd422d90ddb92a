//! Linear regressors for spectral property estimation.
//!
//! Five model kinds share one [`RegressionModel`] representation (a
//! coefficient vector plus intercept):
//!
//! * `Ols`: least squares, minimum-norm solution via SVD when rank deficient;
//! * `Svr`: linear epsilon-insensitive support vector regression, solved in
//!   the dual with pairwise coordinate descent;
//! * `Lasso`: L1-penalized least squares on a geometric lambda path with the
//!   penalty chosen by k-fold cross-validation;
//! * `LrBf`: univariate least squares on the single column most correlated
//!   with the target;
//! * `Plsr`: PLS1 regression (NIPALS) collapsed to coefficients.
//!
//! All fitters centre the columns of `X` and the target first, so intercepts
//! are never penalized.

use std::cell::RefCell;
use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::kfold_indices;
use crate::preprocess::{FeatureId, Standardization};
use crate::smo::{linear_gram, SmoProblem};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorKind {
    Ols,
    Svr,
    Lasso,
    LrBf,
    Plsr,
}

impl RegressorKind {
    pub fn name(self) -> &'static str {
        match self {
            RegressorKind::Ols => "ols",
            RegressorKind::Svr => "svr",
            RegressorKind::Lasso => "lasso",
            RegressorKind::LrBf => "lr_bf",
            RegressorKind::Plsr => "plsr",
        }
    }
}

impl std::fmt::Display for RegressorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for RegressorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ols" | "lr" => Ok(Self::Ols),
            "svr" => Ok(Self::Svr),
            "lasso" => Ok(Self::Lasso),
            "lr_bf" | "lrbf" => Ok(Self::LrBf),
            "plsr" | "pls" => Ok(Self::Plsr),
            other => Err(Error::invalid(format!("unknown regressor '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Hyperparams {
    Ols {
        rank: usize,
    },
    Svr {
        c: f64,
        epsilon: f64,
        tol: f64,
        max_iter: usize,
        iterations: usize,
        converged: bool,
    },
    Lasso {
        lambda_selected: f64,
        lambda_path: Vec<f64>,
        /// Mean held-out MSE per path entry.
        cv_mse: Vec<f64>,
        folds: usize,
        seed: u64,
    },
    LrBf {
        feature_index: usize,
        correlation: f64,
    },
    Plsr {
        n_components: usize,
        requested_components: usize,
        max_iter: usize,
        tol: f64,
        x_mean: Vec<f64>,
        y_mean: f64,
        /// Column-major `n_features x n_components` blocks.
        weights: Vec<Vec<f64>>,
        loadings: Vec<Vec<f64>>,
        y_loadings: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub kind: RegressorKind,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub hyperparams: Hyperparams,
    pub n_train: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_ids: Option<Vec<FeatureId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<Standardization>,
    pub toolkit_version: String,
}

impl RegressionModel {
    fn new(kind: RegressorKind, coefficients: Vec<f64>, intercept: f64, hyperparams: Hyperparams, n_train: usize) -> Self {
        Self {
            kind,
            coefficients,
            intercept,
            hyperparams,
            n_train,
            feature_ids: None,
            standardization: None,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    /// Attaches the feature provenance so the persisted model is self-describing.
    pub fn with_features(mut self, standardization: &Standardization) -> Self {
        self.feature_ids = Some(standardization.columns.clone());
        self.standardization = Some(standardization.clone());
        self
    }

    pub fn n_features(&self) -> usize {
        self.coefficients.len()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        predict(self, x)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// `X beta + b` for each row of `x`.
pub fn predict(model: &RegressionModel, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.ncols() != model.coefficients.len() {
        return Err(Error::DimensionMismatch {
            expected: model.coefficients.len(),
            found: x.ncols(),
        });
    }
    Ok(x.row_iter()
        .map(|row| {
            row.iter()
                .zip(&model.coefficients)
                .fold(model.intercept, |acc, (a, b)| acc + a * b)
        })
        .collect())
}

fn check_inputs(x: &DMatrix<f64>, y: &[f64], min_rows: usize) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if x.nrows() < min_rows {
        return Err(Error::invalid(format!(
            "need at least {min_rows} samples, got {}",
            x.nrows()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in regression inputs"));
    }
    Ok(())
}

/// Column-centred copy of `x` and its column means.
pub(crate) fn center_columns(x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let means: Vec<f64> = x.column_iter().map(|c| c.sum() / n).collect();
    let mut xc = x.clone();
    for (mut col, m) in xc.column_iter_mut().zip(&means) {
        col.add_scalar_mut(-m);
    }
    (xc, means)
}

fn center_target(y: &[f64]) -> (Vec<f64>, f64) {
    let m = stats::mean(y);
    (y.iter().map(|v| v - m).collect(), m)
}

fn intercept_from(x_mean: &[f64], y_mean: f64, beta: &[f64]) -> f64 {
    y_mean - x_mean.iter().zip(beta).map(|(m, b)| m * b).sum::<f64>()
}

// ---------------------------------------------------------------------------
// Ordinary least squares

pub fn fit_ols(x: &DMatrix<f64>, y: &[f64]) -> Result<RegressionModel> {
    check_inputs(x, y, 1)?;
    let (xc, x_mean) = center_columns(x);
    let (yc, y_mean) = center_target(y);
    let (beta, rank) = min_norm_lstsq(&xc, &yc)?;
    let intercept = intercept_from(&x_mean, y_mean, &beta);
    Ok(RegressionModel::new(
        RegressorKind::Ols,
        beta,
        intercept,
        Hyperparams::Ols { rank },
        x.nrows(),
    ))
}

/// Minimum-norm least-squares solution through a thin SVD; returns the
/// solution and the numerical rank.
pub fn min_norm_lstsq(a: &DMatrix<f64>, b: &[f64]) -> Result<(Vec<f64>, usize)> {
    let (n, p) = a.shape();
    if n == 0 || p == 0 {
        return Ok((vec![0.0; p], 0));
    }
    // Decompose the tall orientation; for wide problems work with A'.
    let wide = n < p;
    let m = if wide { a.transpose() } else { a.clone() };
    let svd = m.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Numeric("SVD did not converge".into())),
    };
    let s = svd.singular_values;
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let cutoff = smax * (n.max(p) as f64) * f64::EPSILON;
    let rank = s.iter().filter(|&&v| v > cutoff).count();
    let bv = DVector::from_column_slice(b);
    // A = U S V' (tall) or A' = U S V' i.e. A = V S U' (wide).
    let (left, right_t) = if wide { (vt.transpose(), u.transpose()) } else { (u, vt) };
    // x = V S^+ U' b with U=left, V'=right_t
    let utb = left.transpose() * bv;
    let mut z = DVector::zeros(s.len());
    for k in 0..s.len() {
        if s[k] > cutoff {
            z[k] = utb[k] / s[k];
        }
    }
    let x = right_t.transpose() * z;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("least-squares solution is not finite".into()));
    }
    Ok((x.iter().copied().collect(), rank))
}

// ---------------------------------------------------------------------------
// LASSO

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoParams {
    pub n_lambdas: usize,
    /// Ratio of the smallest to the largest penalty on the path.
    pub path_eps: f64,
    pub folds: usize,
    pub seed: u64,
    /// Path fits stop once no coordinate update moves the fitted values by a
    /// mean square above `tol` times the target variance.
    pub tol: f64,
    /// Tighter threshold for the final refit at the selected penalty.
    pub refit_tol: f64,
    /// The path is cut after the first penalty whose full-data fit explains
    /// more than this fraction of the target variance.
    pub max_dev_ratio: f64,
    pub max_sweeps: usize,
}

impl Default for LassoParams {
    fn default() -> Self {
        Self {
            n_lambdas: 100,
            path_eps: 1e-3,
            folds: 5,
            seed: 0,
            tol: 1e-7,
            refit_tol: 1e-12,
            max_dev_ratio: 0.999,
            max_sweeps: 100_000,
        }
    }
}

/// Smallest penalty at which every coefficient is zero:
/// `max_j |x_j'(y - mean(y))| / n` on column-centred `x`.
pub fn lambda_max(xc: &DMatrix<f64>, yc: &[f64]) -> f64 {
    let n = xc.nrows() as f64;
    xc.column_iter()
        .map(|c| c.iter().zip(yc).map(|(a, b)| a * b).sum::<f64>().abs() / n)
        .fold(0.0, f64::max)
}

/// Geometric sequence from `lambda_max` down to `path_eps * lambda_max`.
pub fn lambda_path(lambda_max: f64, n_lambdas: usize, path_eps: f64) -> Vec<f64> {
    if n_lambdas == 0 || lambda_max <= 0.0 {
        return Vec::new();
    }
    if n_lambdas == 1 {
        return vec![lambda_max];
    }
    let ratio = path_eps.ln() / (n_lambdas - 1) as f64;
    (0..n_lambdas)
        .map(|k| lambda_max * (ratio * k as f64).exp())
        .collect()
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on `(1/2n)||y - X b||^2 + lambda ||b||_1` for
/// centred data, holding the residual in place.
pub struct LassoSolver<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    col_sq: Vec<f64>,
    y_var: f64,
    /// `x_j'X` for every coordinate that has been nonzero so far.
    gram: RefCell<Vec<Option<Vec<f64>>>>,
}

#[derive(Debug, Clone)]
pub struct LassoState {
    pub beta: Vec<f64>,
    pub residual: Vec<f64>,
}

impl<'a> LassoSolver<'a> {
    pub fn new(xc: &'a DMatrix<f64>, yc: &'a [f64]) -> Self {
        let mut col_sq: Vec<f64> = xc.column_iter().map(|c| c.norm_squared()).collect();
        // Exact copies of an earlier column stay at zero so the solution is unique.
        let mut seen = HashSet::new();
        for (j, c) in xc.column_iter().enumerate() {
            let key: Vec<u64> = c.iter().map(|v| v.to_bits()).collect();
            if !seen.insert(key) {
                col_sq[j] = 0.0;
            }
        }
        let y_var = yc.iter().map(|v| v * v).sum::<f64>() / xc.nrows().max(1) as f64;
        Self {
            x: xc,
            y: yc,
            col_sq,
            y_var,
            gram: RefCell::new(vec![None; xc.ncols()]),
        }
    }

    pub fn zero_state(&self) -> LassoState {
        LassoState {
            beta: vec![0.0; self.x.ncols()],
            residual: self.y.to_vec(),
        }
    }

    pub fn objective(&self, state: &LassoState, lambda: f64) -> f64 {
        let n = self.x.nrows() as f64;
        state.residual.iter().map(|r| r * r).sum::<f64>() / (2.0 * n)
            + lambda * state.beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    /// Fraction of the target variance explained by the current fit.
    pub fn dev_ratio(&self, state: &LassoState) -> f64 {
        if self.y_var <= 0.0 {
            return 1.0;
        }
        let n = self.x.nrows() as f64;
        1.0 - state.residual.iter().map(|r| r * r).sum::<f64>() / n / self.y_var
    }

    fn update(&self, j: usize, lambda: f64, state: &mut LassoState) -> f64 {
        let sq = self.col_sq[j];
        if sq <= 0.0 {
            return 0.0;
        }
        let n = self.x.nrows() as f64;
        let col = self.x.column(j);
        let old = state.beta[j];
        let dot: f64 = col.iter().zip(&state.residual).map(|(a, r)| a * r).sum();
        let z = dot / n + (sq / n) * old;
        let new = soft_threshold(z, lambda) / (sq / n);
        let delta = new - old;
        if delta != 0.0 {
            for (r, a) in state.residual.iter_mut().zip(col.iter()) {
                *r -= a * delta;
            }
            state.beta[j] = new;
        }
        delta * delta * (sq / n)
    }

    fn sweep(&self, lambda: f64, state: &mut LassoState) -> f64 {
        let mut max_change: f64 = 0.0;
        for j in 0..self.x.ncols() {
            max_change = max_change.max(self.update(j, lambda, state));
        }
        max_change
    }

    /// Cyclic sweeps over the current support, tracking `x_k'r` through
    /// cached inner products; the residual is brought up to date at the end.
    fn active_sweeps(
        &self,
        lambda: f64,
        state: &mut LassoState,
        tol: f64,
        budget: usize,
        trace: &mut Option<&mut Vec<f64>>,
    ) -> usize {
        let active: Vec<usize> = (0..state.beta.len()).filter(|&j| state.beta[j] != 0.0).collect();
        if active.is_empty() {
            return 0;
        }
        {
            let mut cache = self.gram.borrow_mut();
            for &k in &active {
                if cache[k].is_none() {
                    let row = self.x.tr_mul(&self.x.column(k));
                    cache[k] = Some(row.iter().copied().collect());
                }
            }
        }
        let cache = self.gram.borrow();
        let n = self.x.nrows() as f64;
        let mut g: Vec<f64> = active
            .iter()
            .map(|&k| self.x.column(k).iter().zip(&state.residual).map(|(a, r)| a * r).sum())
            .collect();
        let mut moved = vec![0.0; active.len()];
        let mut sweeps = 0;
        while sweeps < budget {
            let mut max_change: f64 = 0.0;
            for (a, &k) in active.iter().enumerate() {
                let sq = self.col_sq[k] / n;
                let old = state.beta[k];
                let new = soft_threshold(g[a] / n + sq * old, lambda) / sq;
                let delta = new - old;
                if delta != 0.0 {
                    let row = cache[k].as_ref().expect("cached above");
                    for (gb, &m) in g.iter_mut().zip(&active) {
                        *gb -= delta * row[m];
                    }
                    state.beta[k] = new;
                    moved[a] += delta;
                }
                max_change = max_change.max(delta * delta * sq);
            }
            sweeps += 1;
            if let Some(t) = trace.as_deref_mut() {
                self.apply_moves(&active, &mut moved, state);
                t.push(self.objective(state, lambda));
            }
            if max_change < tol {
                break;
            }
        }
        self.apply_moves(&active, &mut moved, state);
        sweeps
    }

    fn apply_moves(&self, active: &[usize], moved: &mut [f64], state: &mut LassoState) {
        for (&k, d) in active.iter().zip(moved.iter_mut()) {
            if *d != 0.0 {
                for (r, a) in state.residual.iter_mut().zip(self.x.column(k).iter()) {
                    *r -= a * *d;
                }
                *d = 0.0;
            }
        }
    }

    /// Runs sweeps until no update in a full sweep changes the fitted values
    /// by a mean square above `tol` times the target variance; between full
    /// sweeps only the nonzero coordinates are cycled.
    /// `trace` receives the objective after every sweep. Returns the number
    /// of sweeps performed.
    pub fn solve(
        &self,
        lambda: f64,
        state: &mut LassoState,
        tol: f64,
        max_sweeps: usize,
        mut trace: Option<&mut Vec<f64>>,
    ) -> usize {
        let tol = tol * self.y_var;
        let mut sweeps = 0;
        while sweeps < max_sweeps {
            let change = self.sweep(lambda, state);
            sweeps += 1;
            if let Some(t) = trace.as_deref_mut() {
                t.push(self.objective(state, lambda));
            }
            if change < tol {
                break;
            }
            sweeps += self.active_sweeps(lambda, state, tol, max_sweeps - sweeps, &mut trace);
        }
        sweeps
    }
}

/// LASSO at a fixed penalty.
pub fn fit_lasso(x: &DMatrix<f64>, y: &[f64], lambda: f64, tol: f64, max_sweeps: usize) -> Result<RegressionModel> {
    check_inputs(x, y, 1)?;
    let (xc, x_mean) = center_columns(x);
    let (yc, y_mean) = center_target(y);
    let solver = LassoSolver::new(&xc, &yc);
    let mut state = solver.zero_state();
    solver.solve(lambda, &mut state, tol, max_sweeps, None);
    let intercept = intercept_from(&x_mean, y_mean, &state.beta);
    Ok(RegressionModel::new(
        RegressorKind::Lasso,
        state.beta,
        intercept,
        Hyperparams::Lasso {
            lambda_selected: lambda,
            lambda_path: vec![lambda],
            cv_mse: Vec::new(),
            folds: 0,
            seed: 0,
        },
        x.nrows(),
    ))
}

fn fold_path_mse(
    x: &DMatrix<f64>,
    y: &[f64],
    train: &[usize],
    test: &[usize],
    lambdas: &[f64],
    params: &LassoParams,
) -> Vec<f64> {
    let xt = x.select_rows(train.iter());
    let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let (xc, x_mean) = center_columns(&xt);
    let (yc, y_mean) = center_target(&yt);
    let solver = LassoSolver::new(&xc, &yc);
    let mut state = solver.zero_state();
    let mut mse = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        solver.solve(lambda, &mut state, params.tol, params.max_sweeps, None);
        let b0 = intercept_from(&x_mean, y_mean, &state.beta);
        let err: f64 = test
            .iter()
            .map(|&i| {
                let pred = x
                    .row(i)
                    .iter()
                    .zip(&state.beta)
                    .fold(b0, |acc, (a, b)| acc + a * b);
                (y[i] - pred).powi(2)
            })
            .sum();
        mse.push(err / test.len() as f64);
    }
    mse
}

/// LASSO with the penalty selected by k-fold cross-validation over a
/// geometric path, refit on all samples at the selected penalty.
pub fn fit_lasso_cv(x: &DMatrix<f64>, y: &[f64], params: &LassoParams) -> Result<RegressionModel> {
    check_inputs(x, y, 2)?;
    let n = x.nrows();
    if params.folds < 2 || params.folds > n {
        return Err(Error::invalid(format!(
            "LASSO CV needs 2 <= folds <= n_samples, got {} folds for {n} samples",
            params.folds
        )));
    }
    let (xc, x_mean) = center_columns(x);
    let (yc, y_mean) = center_target(y);
    let lmax = lambda_max(&xc, &yc);
    if lmax <= 0.0 {
        return Ok(RegressionModel::new(
            RegressorKind::Lasso,
            vec![0.0; x.ncols()],
            y_mean,
            Hyperparams::Lasso {
                lambda_selected: 0.0,
                lambda_path: Vec::new(),
                cv_mse: Vec::new(),
                folds: params.folds,
                seed: params.seed,
            },
            n,
        ));
    }
    let mut lambdas = lambda_path(lmax, params.n_lambdas.max(1), params.path_eps);
    let solver = LassoSolver::new(&xc, &yc);
    let mut state = solver.zero_state();
    let mut path_betas = Vec::with_capacity(lambdas.len());
    for (k, &lambda) in lambdas.iter().enumerate() {
        solver.solve(lambda, &mut state, params.tol, params.max_sweeps, None);
        path_betas.push(state.beta.clone());
        if solver.dev_ratio(&state) > params.max_dev_ratio {
            lambdas.truncate(k + 1);
            break;
        }
    }
    let folds = kfold_indices(n, params.folds, params.seed)?;
    let per_fold: Vec<Vec<f64>> = folds
        .par_iter()
        .map(|test| {
            let train = complement(n, test);
            fold_path_mse(x, y, &train, test, &lambdas, params)
        })
        .collect();
    let cv_mse: Vec<f64> = (0..lambdas.len())
        .map(|k| per_fold.iter().map(|f| f[k]).sum::<f64>() / per_fold.len() as f64)
        .collect();
    let mut best = 0;
    for (k, &m) in cv_mse.iter().enumerate() {
        if m < cv_mse[best] {
            best = k;
        }
    }
    let beta = path_betas.swap_remove(best);
    let residual = (0..n)
        .map(|i| yc[i] - xc.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let mut state = LassoState { beta, residual };
    solver.solve(lambdas[best], &mut state, params.refit_tol, params.max_sweeps, None);
    let intercept = intercept_from(&x_mean, y_mean, &state.beta);
    Ok(RegressionModel::new(
        RegressorKind::Lasso,
        state.beta,
        intercept,
        Hyperparams::Lasso {
            lambda_selected: lambdas[best],
            lambda_path: lambdas,
            cv_mse,
            folds: params.folds,
            seed: params.seed,
        },
        n,
    ))
}

pub(crate) fn complement(n: usize, held_out: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in held_out {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

/// Largest violation of the LASSO optimality conditions at `lambda`:
/// `x_j'r/n = lambda sign(b_j)` for nonzero `b_j`, `|x_j'r/n| <= lambda` otherwise.
pub fn lasso_kkt_violation(x: &DMatrix<f64>, y: &[f64], model: &RegressionModel, lambda: f64) -> f64 {
    let n = x.nrows() as f64;
    let pred = predict(model, x).expect("dimensions checked by caller");
    let r: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
    let (xc, _) = center_columns(x);
    model
        .coefficients
        .iter()
        .enumerate()
        .map(|(j, &b)| {
            let g: f64 = xc.column(j).iter().zip(&r).map(|(a, r)| a * r).sum::<f64>() / n;
            if b != 0.0 {
                (g - lambda * b.signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Linear epsilon-SVR

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvrParams {
    pub c: f64,
    pub epsilon: f64,
    /// Stopping threshold on the maximal KKT violation of the dual.
    pub tol: f64,
    /// Cap on pairwise dual updates.
    pub max_iter: usize,
}

impl Default for SvrParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            epsilon: 0.1,
            tol: 1e-3,
            max_iter: 10_000_000,
        }
    }
}

/// A fitted SVR together with its dual solution.
#[derive(Debug, Clone)]
pub struct SvrFit {
    pub model: RegressionModel,
    /// `alpha_i - alpha_i^*` per training sample, each in `[-C, C]`.
    pub dual_coef: Vec<f64>,
    /// The `2n` raw dual variables `(alpha, alpha^*)`, each in `[0, C]`.
    pub dual: Vec<f64>,
}

/// `0.5 ||w||^2 + C sum max(0, |y - w'x - b| - eps)`.
pub fn svr_primal_objective(model: &RegressionModel, x: &DMatrix<f64>, y: &[f64], c: f64, epsilon: f64) -> Result<f64> {
    let pred = predict(model, x)?;
    let loss: f64 = y
        .iter()
        .zip(&pred)
        .map(|(a, b)| ((a - b).abs() - epsilon).max(0.0))
        .sum();
    let w2: f64 = model.coefficients.iter().map(|w| w * w).sum();
    Ok(0.5 * w2 + c * loss)
}

pub fn fit_svr_linear(x: &DMatrix<f64>, y: &[f64], params: &SvrParams) -> Result<RegressionModel> {
    Ok(fit_svr_linear_dual(x, y, params)?.model)
}

pub fn fit_svr_linear_dual(x: &DMatrix<f64>, y: &[f64], params: &SvrParams) -> Result<SvrFit> {
    check_inputs(x, y, 2)?;
    if !(params.c > 0.0) || !(params.epsilon > 0.0) {
        return Err(Error::invalid(format!(
            "SVR needs C > 0 and epsilon > 0, got C={} epsilon={}",
            params.c, params.epsilon
        )));
    }
    let n = x.nrows();
    let (xc, x_mean) = center_columns(x);
    let (yc, y_mean) = center_target(y);
    let gram = linear_gram(&xc);
    let problem = SmoProblem {
        kernel: &gram,
        index: (0..2 * n).map(|t| t % n).collect(),
        sign: (0..2 * n).map(|t| if t < n { 1.0 } else { -1.0 }).collect(),
        linear: (0..2 * n)
            .map(|t| if t < n { params.epsilon - yc[t] } else { params.epsilon + yc[t - n] })
            .collect(),
        upper: vec![params.c; 2 * n],
    };
    let sol = problem.solve(params.tol, params.max_iter);
    if !sol.converged {
        log::warn!(
            "SVR stopped after {} updates with KKT gap {:.3e}",
            sol.iterations,
            sol.gap
        );
    }
    let dual_coef: Vec<f64> = (0..n).map(|i| sol.alpha[i] - sol.alpha[i + n]).collect();
    let w = xc.transpose() * DVector::from_column_slice(&dual_coef);
    let beta: Vec<f64> = w.iter().copied().collect();
    let intercept = y_mean - sol.rho - x_mean.iter().zip(&beta).map(|(m, b)| m * b).sum::<f64>();
    let model = RegressionModel::new(
        RegressorKind::Svr,
        beta,
        intercept,
        Hyperparams::Svr {
            c: params.c,
            epsilon: params.epsilon,
            tol: params.tol,
            max_iter: params.max_iter,
            iterations: sol.iterations,
            converged: sol.converged,
        },
        n,
    );
    Ok(SvrFit {
        model,
        dual_coef,
        dual: sol.alpha,
    })
}

// ---------------------------------------------------------------------------
// Best single feature

pub fn fit_lr_best_feature(x: &DMatrix<f64>, y: &[f64]) -> Result<RegressionModel> {
    check_inputs(x, y, 2)?;
    let mut best: Option<(usize, f64)> = None;
    for (j, col) in x.column_iter().enumerate() {
        let col: Vec<f64> = col.iter().copied().collect();
        if let Some(r) = stats::pearson(&col, y) {
            if best.is_none_or(|(_, b)| r.abs() > b.abs()) {
                best = Some((j, r));
            }
        }
    }
    let (j, r) = match best {
        Some(b) => b,
        None if x.column_iter().all(|c| c.iter().all(|&v| v == c[0])) => {
            return Err(Error::invalid("every feature column is constant"))
        }
        // non-constant columns but constant target
        None => (0, 0.0),
    };
    let col: Vec<f64> = x.column(j).iter().copied().collect();
    let mx = stats::mean(&col);
    let my = stats::mean(y);
    let sxx: f64 = col.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = col.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let mut coefficients = vec![0.0; x.ncols()];
    coefficients[j] = slope;
    Ok(RegressionModel::new(
        RegressorKind::LrBf,
        coefficients,
        my - slope * mx,
        Hyperparams::LrBf {
            feature_index: j,
            correlation: r,
        },
        x.nrows(),
    ))
}

// ---------------------------------------------------------------------------
// PLS1 via NIPALS

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlsParams {
    pub n_components: usize,
    /// Cap on inner NIPALS iterations per component.
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for PlsParams {
    fn default() -> Self {
        Self {
            n_components: 6,
            max_iter: 10_000,
            tol: 1e-9,
        }
    }
}

/// Components extracted by NIPALS, before collapsing to coefficients.
#[derive(Debug, Clone)]
pub struct PlsComponents {
    pub weights: Vec<Vec<f64>>,
    pub loadings: Vec<Vec<f64>>,
    pub y_loadings: Vec<f64>,
    pub scores: Vec<Vec<f64>>,
    pub x_mean: Vec<f64>,
    pub y_mean: f64,
}

/// Extracts up to `n_components` PLS1 components from centred copies of
/// `x` and `y`, deflating both after each component. Stops early when the
/// deflated covariance `X'y` vanishes.
pub fn nipals_pls1(x: &DMatrix<f64>, y: &[f64], params: &PlsParams) -> Result<PlsComponents> {
    check_inputs(x, y, 2)?;
    let (n, p) = x.shape();
    if params.n_components == 0 || params.n_components > (n - 1).min(p) {
        return Err(Error::invalid(format!(
            "n_components must lie in 1..={}, got {}",
            (n - 1).min(p),
            params.n_components
        )));
    }
    let (mut xr, x_mean) = center_columns(x);
    let (yc, y_mean) = center_target(y);
    let mut yr = DVector::from_vec(yc);
    let x_scale = xr.norm().max(f64::MIN_POSITIVE);
    let y_scale = yr.norm();
    let mut out = PlsComponents {
        weights: Vec::new(),
        loadings: Vec::new(),
        y_loadings: Vec::new(),
        scores: Vec::new(),
        x_mean,
        y_mean,
    };
    for _ in 0..params.n_components {
        if yr.norm() <= 1e-12 * y_scale.max(f64::MIN_POSITIVE) || xr.norm() <= 1e-12 * x_scale {
            break;
        }
        let mut u = yr.clone();
        let mut w = DVector::zeros(p);
        let mut t_old: Option<DVector<f64>> = None;
        let mut t = DVector::zeros(n);
        for _ in 0..params.max_iter.max(1) {
            let xtu = xr.transpose() * &u;
            let norm = xtu.norm();
            if norm <= 1e-12 * x_scale * u.norm().max(f64::MIN_POSITIVE) {
                w = DVector::zeros(p);
                break;
            }
            w = xtu / norm;
            t = &xr * &w;
            let tt = t.dot(&t);
            let q = yr.dot(&t) / tt;
            // y is univariate: u = y q / q^2
            u = if q != 0.0 { &yr / q } else { yr.clone() };
            let done = t_old
                .as_ref()
                .is_some_and(|prev| (&t - prev).norm() <= params.tol * t.norm());
            if done {
                break;
            }
            t_old = Some(t.clone());
        }
        if w.iter().all(|&v| v == 0.0) {
            break;
        }
        let tt = t.dot(&t);
        if tt <= 0.0 {
            break;
        }
        let pl = xr.transpose() * &t / tt;
        let q = yr.dot(&t) / tt;
        xr -= &t * pl.transpose();
        yr -= &t * q;
        out.weights.push(w.iter().copied().collect());
        out.loadings.push(pl.iter().copied().collect());
        out.y_loadings.push(q);
        out.scores.push(t.iter().copied().collect());
    }
    if out.weights.len() < params.n_components {
        log::warn!(
            "PLS extracted {} of {} requested components (deflated data exhausted)",
            out.weights.len(),
            params.n_components
        );
    }
    Ok(out)
}

/// `B = W (P'W)^-1 q`.
fn pls_coefficients(c: &PlsComponents, p: usize) -> Result<Vec<f64>> {
    let a = c.weights.len();
    if a == 0 {
        return Ok(vec![0.0; p]);
    }
    let w = DMatrix::from_fn(p, a, |i, k| c.weights[k][i]);
    let pl = DMatrix::from_fn(p, a, |i, k| c.loadings[k][i]);
    let ptw = pl.transpose() * &w;
    let inv = ptw
        .try_inverse()
        .ok_or_else(|| Error::Numeric("PLS loading/weight product is singular".into()))?;
    let q = DVector::from_column_slice(&c.y_loadings);
    let b = w * inv * q;
    Ok(b.iter().copied().collect())
}

pub fn fit_plsr(x: &DMatrix<f64>, y: &[f64], params: &PlsParams) -> Result<RegressionModel> {
    let comps = nipals_pls1(x, y, params)?;
    let beta = pls_coefficients(&comps, x.ncols())?;
    let intercept = intercept_from(&comps.x_mean, comps.y_mean, &beta);
    let n_components = comps.weights.len();
    Ok(RegressionModel::new(
        RegressorKind::Plsr,
        beta,
        intercept,
        Hyperparams::Plsr {
            n_components,
            requested_components: params.n_components,
            max_iter: params.max_iter,
            tol: params.tol,
            x_mean: comps.x_mean,
            y_mean: comps.y_mean,
            weights: comps.weights,
            loadings: comps.loadings,
            y_loadings: comps.y_loadings,
        },
        x.nrows(),
    ))
}

// ---------------------------------------------------------------------------

/// A regressor kind with its hyperparameters, as given in run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressorSpec {
    Ols,
    Svr(#[serde(default)] SvrParams),
    Lasso(#[serde(default)] LassoParams),
    LrBf,
    Plsr(#[serde(default)] PlsParams),
}

impl RegressorSpec {
    pub fn default_for(kind: RegressorKind) -> Self {
        match kind {
            RegressorKind::Ols => RegressorSpec::Ols,
            RegressorKind::Svr => RegressorSpec::Svr(SvrParams::default()),
            RegressorKind::Lasso => RegressorSpec::Lasso(LassoParams::default()),
            RegressorKind::LrBf => RegressorSpec::LrBf,
            RegressorKind::Plsr => RegressorSpec::Plsr(PlsParams::default()),
        }
    }

    pub fn kind(&self) -> RegressorKind {
        match self {
            RegressorSpec::Ols => RegressorKind::Ols,
            RegressorSpec::Svr(_) => RegressorKind::Svr,
            RegressorSpec::Lasso(_) => RegressorKind::Lasso,
            RegressorSpec::LrBf => RegressorKind::LrBf,
            RegressorSpec::Plsr(_) => RegressorKind::Plsr,
        }
    }

    pub fn fit(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<RegressionModel> {
        match self {
            RegressorSpec::Ols => fit_ols(x, y),
            RegressorSpec::Svr(p) => fit_svr_linear(x, y, p),
            RegressorSpec::Lasso(p) => fit_lasso_cv(x, y, p),
            RegressorSpec::LrBf => fit_lr_best_feature(x, y),
            RegressorSpec::Plsr(p) => {
                // shrink the component count for small folds
                let cap = (x.nrows().saturating_sub(1)).min(x.ncols()).max(1);
                let p = PlsParams {
                    n_components: p.n_components.min(cap),
                    ..p.clone()
                };
                fit_plsr(x, y, &p)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn ols_exact_line() {
        let x = DMatrix::from_column_slice(5, 1, &[0.0, 1.0, 2.0, 3.0, 4.0]);
        let y: Vec<f64> = (0..5).map(|i| 2.0 * i as f64 + 1.0).collect();
        let m = fit_ols(&x, &y).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((m.intercept - 1.0).abs() < 1e-12);
        let pred = m.predict(&x).unwrap();
        assert!(pred.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn ols_constant_target_gives_min_norm_zero() {
        let x = random_matrix(6, 9, 3);
        let m = fit_ols(&x, &[7.0; 6]).unwrap();
        assert!(m.coefficients.iter().all(|&b| b.abs() < 1e-12));
        assert!((m.intercept - 7.0).abs() < 1e-12);
    }

    #[test]
    fn ols_rank_deficient_is_min_norm() {
        // duplicated column: min-norm splits the weight evenly
        let base = random_matrix(10, 1, 5);
        let x = DMatrix::from_fn(10, 2, |i, _| base[(i, 0)]);
        let y: Vec<f64> = (0..10).map(|i| 4.0 * base[(i, 0)]).collect();
        let m = fit_ols(&x, &y).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 1e-9);
        assert!((m.coefficients[1] - 2.0).abs() < 1e-9);
        assert!(matches!(m.hyperparams, Hyperparams::Ols { rank: 1 }));
    }

    #[test]
    fn predict_rejects_wrong_width() {
        let m = fit_ols(&random_matrix(5, 2, 1), &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!(matches!(
            m.predict(&random_matrix(3, 3, 1)),
            Err(Error::DimensionMismatch { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn zero_model_predicts_intercept() {
        let mut m = fit_ols(&random_matrix(5, 2, 1), &[3.0; 5]).unwrap();
        m.coefficients = vec![0.0, 0.0];
        m.intercept = 3.5;
        assert_eq!(m.predict(&random_matrix(4, 2, 9)).unwrap(), vec![3.5; 4]);
    }

    #[test]
    fn lambda_path_is_geometric() {
        let path = lambda_path(2.0, 100, 1e-3);
        assert_eq!(path.len(), 100);
        assert_eq!(path[0], 2.0);
        assert!((path[99] - 2e-3).abs() < 1e-15);
        let r = path[1] / path[0];
        assert!(path.windows(2).all(|w| (w[1] / w[0] - r).abs() < 1e-12));
    }

    #[test]
    fn lasso_objective_never_increases() {
        let x = random_matrix(40, 15, 11);
        let y: Vec<f64> = (0..40).map(|i| x[(i, 0)] - 2.0 * x[(i, 3)] + 0.1 * x[(i, 7)]).collect();
        let (xc, _) = center_columns(&x);
        let (yc, _) = center_target(&y);
        let solver = LassoSolver::new(&xc, &yc);
        let mut state = solver.zero_state();
        let mut trace = vec![solver.objective(&state, 0.01)];
        solver.solve(0.01, &mut state, 1e-20, 10_000, Some(&mut trace));
        assert!(trace.len() > 2);
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn lasso_constant_target_is_intercept_only() {
        let x = random_matrix(20, 4, 2);
        let m = fit_lasso_cv(&x, &[1.5; 20], &LassoParams::default()).unwrap();
        assert!(m.coefficients.iter().all(|&b| b == 0.0));
        assert_eq!(m.intercept, 1.5);
    }

    #[test]
    fn lasso_rejects_too_many_folds() {
        let x = random_matrix(4, 2, 2);
        let p = LassoParams {
            folds: 5,
            ..Default::default()
        };
        assert!(fit_lasso_cv(&x, &[1.0, 2.0, 3.0, 4.0], &p).is_err());
    }

    #[test]
    fn svr_rejects_bad_params() {
        let x = random_matrix(4, 1, 2);
        let y = [1.0, 2.0, 3.0, 4.0];
        for (c, e) in [(0.0, 0.1), (1.0, 0.0), (-1.0, 0.1)] {
            let p = SvrParams {
                c,
                epsilon: e,
                ..Default::default()
            };
            assert!(fit_svr_linear(&x, &y, &p).is_err());
        }
    }

    #[test]
    fn svr_fits_inside_tube_on_exact_line() {
        let xs: Vec<f64> = (0..8).map(|i| i as f64 * 0.25).collect();
        let x = DMatrix::from_column_slice(8, 1, &xs);
        let y: Vec<f64> = xs.iter().map(|v| 3.0 * v).collect();
        let p = SvrParams {
            c: 100.0,
            epsilon: 0.1,
            tol: 1e-8,
            ..Default::default()
        };
        let fit = fit_svr_linear_dual(&x, &y, &p).unwrap();
        let pred = fit.model.predict(&x).unwrap();
        assert!(pred.iter().zip(&y).all(|(a, b)| (a - b).abs() <= 0.1 + 1e-6));
        let obj = svr_primal_objective(&fit.model, &x, &y, p.c, p.epsilon).unwrap();
        assert!(obj <= 0.5 * 9.0 + 1e-9);
        assert!(fit.dual.iter().all(|&a| (0.0..=p.c).contains(&a)));
    }

    #[test]
    fn lr_bf_picks_absolute_correlation_and_lowest_tie() {
        let y = [1.0, 2.0, 3.0, 5.0, 4.0];
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        let x = DMatrix::from_fn(5, 3, |i, j| match j {
            0 => [1.0, 0.0, 2.0, 1.0, 3.0][i],
            _ => neg[i],
        });
        let m = fit_lr_best_feature(&x, &y).unwrap();
        assert!(matches!(m.hyperparams, Hyperparams::LrBf { feature_index: 1, .. }));
        assert!((m.coefficients[1] + 1.0).abs() < 1e-12);
        assert_eq!(m.coefficients[0], 0.0);
        assert_eq!(m.coefficients[2], 0.0);
    }

    #[test]
    fn lr_bf_rejects_constant_features() {
        let x = DMatrix::from_element(4, 3, 1.0);
        assert!(fit_lr_best_feature(&x, &[1.0, 2.0, 3.0, 4.0]).is_err());
    }

    #[test]
    fn plsr_single_column_equals_univariate_ols() {
        let x = random_matrix(12, 1, 8);
        let y: Vec<f64> = (0..12).map(|i| 0.3 + 1.7 * x[(i, 0)] + 0.05 * (i as f64).sin()).collect();
        let p = PlsParams {
            n_components: 1,
            ..Default::default()
        };
        let pls = fit_plsr(&x, &y, &p).unwrap();
        let ols = fit_ols(&x, &y).unwrap();
        assert!((pls.coefficients[0] - ols.coefficients[0]).abs() < 1e-8);
        assert!((pls.intercept - ols.intercept).abs() < 1e-8);
    }

    #[test]
    fn plsr_orthogonal_target_gives_zero_model() {
        // columns centred; y centred and orthogonal to both columns
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0, -1.0]);
        let y = [5.0 + 1.0, 5.0 - 1.0, 5.0 - 1.0, 5.0 + 1.0];
        let m = fit_plsr(
            &x,
            &y,
            &PlsParams {
                n_components: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(m.coefficients.iter().all(|&b| b.abs() < 1e-12));
        assert!((m.intercept - 5.0).abs() < 1e-12);
    }

    #[test]
    fn plsr_rejects_too_many_components() {
        let x = random_matrix(5, 10, 1);
        let p = PlsParams {
            n_components: 5,
            ..Default::default()
        };
        assert!(fit_plsr(&x, &[1.0, 2.0, 3.0, 4.0, 6.0], &p).is_err());
    }

    #[test]
    fn model_json_round_trip_is_bit_exact() {
        let x = random_matrix(30, 6, 4);
        let y: Vec<f64> = (0..30).map(|i| x[(i, 1)] * 0.123456789 + 1.0 / 3.0).collect();
        let p = PlsParams {
            n_components: 3,
            ..Default::default()
        };
        for m in [fit_ols(&x, &y).unwrap(), fit_plsr(&x, &y, &p).unwrap()] {
            let back = RegressionModel::from_json(&m.to_json().unwrap()).unwrap();
            assert_eq!(back, m);
            let a = m.predict(&x).unwrap();
            let b = back.predict(&x).unwrap();
            assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }
}
