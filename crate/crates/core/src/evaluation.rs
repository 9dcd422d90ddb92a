//! Metrics, k-fold cross-validation, regressor comparison and the
//! misclassification-cost grid search.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classification::{
    check_labels, expected_cost_decision, fit_classifier, svm_class_weights, svm_kernel_matrix,
    svm_train_pairs, svm_votes, vote_decision, ClassifierConfig, CostMatrix, TrainOptions,
};
use crate::error::{Error, Result};
use crate::regression::{complement, RegressionModel, RegressorKind, RegressorSpec};
use crate::stats;

// ---------------------------------------------------------------------------
// Folds

/// Seeded k-fold partition of `0..n`. Fold sizes differ by at most one; each
/// fold's indices are sorted.
pub fn kfold_indices(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {folds}")));
    }
    if folds > n {
        return Err(Error::invalid(format!(
            "cannot make {folds} folds from {n} samples"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / folds;
    let extra = n % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        let mut fold = order[start..start + size].to_vec();
        fold.sort_unstable();
        out.push(fold);
        start += size;
    }
    Ok(out)
}

/// Seeded stratified k-fold partition: each class is shuffled and dealt
/// round-robin across folds, so every class with at least `folds` samples
/// appears in every fold.
pub fn stratified_kfold(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {folds}")));
    }
    if folds > labels.len() {
        return Err(Error::invalid(format!(
            "cannot make {folds} folds from {} samples",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let mut out = vec![Vec::new(); folds];
    let mut pos = 0;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            out[pos % folds].push(i);
            pos += 1;
        }
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Regression metrics

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    /// Undefined (None) when either vector is constant.
    pub pearson_rho: Option<f64>,
    /// `1 - SS_res / SS_tot`; undefined when `y_true` is constant.
    pub r_squared: Option<f64>,
    pub mse: f64,
}

pub fn regression_metrics(y_true: &[f64], y_pred: &[f64]) -> Result<RegressionMetrics> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len(),
            found: y_pred.len(),
        });
    }
    if y_true.len() < 2 {
        return Err(Error::invalid("regression metrics need at least 2 samples"));
    }
    let n = y_true.len() as f64;
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(a, b)| (a - b) * (a - b)).sum();
    let m = stats::mean(y_true);
    let ss_tot: f64 = y_true.iter().map(|a| (a - m) * (a - m)).sum();
    Ok(RegressionMetrics {
        pearson_rho: stats::pearson(y_true, y_pred),
        r_squared: (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot),
        mse: ss_res / n,
    })
}

// ---------------------------------------------------------------------------
// Confusion matrices and classification metrics

/// Counts with rows = true class and columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|r| r.len() != k) {
            return Err(Error::invalid("confusion matrix must be square and nonempty"));
        }
        Ok(Self { counts })
    }

    pub fn from_predictions(k: usize, truth: &[usize], predicted: &[usize]) -> Self {
        let mut cm = Self::new(k);
        for (&t, &p) in truth.iter().zip(predicted) {
            cm.counts[t][p] += 1;
        }
        cm
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.k())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        self.correct() as f64 / total as f64
    }

    pub fn mcc(&self) -> f64 {
        mcc(self)
    }

    /// One-vs-rest rates for class `c`.
    pub fn class_metrics(&self, c: usize) -> ClassMetrics {
        let s = self.total() as f64;
        let tp = self.counts[c][c] as f64;
        let fn_ = self.row_sums()[c] as f64 - tp;
        let fp = self.col_sums()[c] as f64 - tp;
        let tn = s - tp - fn_ - fp;
        let ratio = |a: f64, b: f64| (b > 0.0).then(|| a / b);
        ClassMetrics {
            tpr: ratio(tp, tp + fn_),
            tnr: ratio(tn, tn + fp),
            ppv: ratio(tp, tp + fp),
            npv: ratio(tn, tn + fn_),
            f1: ratio(2.0 * tp, 2.0 * tp + fp + fn_),
        }
    }

    pub fn metric_set(&self) -> ClassificationMetrics {
        let per_class: Vec<ClassMetrics> = (0..self.k()).map(|c| self.class_metrics(c)).collect();
        let avg = |f: fn(&ClassMetrics) -> Option<f64>| {
            let v: Vec<f64> = per_class.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let macro_avg = ClassMetrics {
            tpr: avg(|m| m.tpr),
            tnr: avg(|m| m.tnr),
            ppv: avg(|m| m.ppv),
            npv: avg(|m| m.npv),
            f1: avg(|m| m.f1),
        };
        ClassificationMetrics {
            per_class,
            macro_avg,
            accuracy: self.accuracy(),
            mcc: self.mcc(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub per_class: Vec<ClassMetrics>,
    pub macro_avg: ClassMetrics,
    pub accuracy: f64,
    pub mcc: f64,
}

/// Matthews correlation coefficient. Two classes use the binary formula with
/// class 1 as positive; more classes use Gorodkin's R_K. A zero denominator
/// yields 0.
pub fn mcc(cm: &ConfusionMatrix) -> f64 {
    let k = cm.k();
    if k == 2 {
        let tp = cm.counts[1][1] as f64;
        let tn = cm.counts[0][0] as f64;
        let fp = cm.counts[0][1] as f64;
        let fn_ = cm.counts[1][0] as f64;
        let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
        if den == 0.0 {
            return 0.0;
        }
        return (tp * tn - fp * fn_) / den;
    }
    let s = cm.total() as f64;
    let c = cm.correct() as f64;
    let p = cm.col_sums();
    let t = cm.row_sums();
    let pt: f64 = p.iter().zip(&t).map(|(&a, &b)| a as f64 * b as f64).sum();
    let pp: f64 = p.iter().map(|&a| (a as f64).powi(2)).sum();
    let tt: f64 = t.iter().map(|&a| (a as f64).powi(2)).sum();
    let den = ((s * s - pp) * (s * s - tt)).sqrt();
    if den == 0.0 {
        return 0.0;
    }
    (c * s - pt) / den
}

// ---------------------------------------------------------------------------
// Regression cross-validation and comparison

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: Option<f64>,
    /// Sample standard deviation across folds.
    pub std: Option<f64>,
}

impl Summary {
    fn of(values: impl Iterator<Item = Option<f64>>) -> Self {
        let v: Vec<f64> = values.flatten().collect();
        if v.is_empty() {
            return Self {
                median: None,
                std: None,
            };
        }
        Self {
            median: Some(stats::median(&v)),
            std: Some(stats::sample_std(&v)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionCv {
    pub kind: RegressorKind,
    pub per_fold: Vec<RegressionMetrics>,
    pub rho: Summary,
    pub r_squared: Summary,
    pub mse: Summary,
}

pub fn kfold_cv_regression(
    spec: &RegressorSpec,
    x: &DMatrix<f64>,
    y: &[f64],
    folds: usize,
    seed: u64,
) -> Result<RegressionCv> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    let n = y.len();
    let parts = kfold_indices(n, folds, seed)?;
    if parts.iter().any(|f| f.len() < 2) {
        return Err(Error::invalid(format!(
            "{folds} folds over {n} samples leaves a fold with fewer than 2 samples"
        )));
    }
    let per_fold = parts
        .par_iter()
        .map(|test| {
            let train = complement(n, test);
            let xt = x.select_rows(train.iter());
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let model = spec.fit(&xt, &yt)?;
            let xv = x.select_rows(test.iter());
            let yv: Vec<f64> = test.iter().map(|&i| y[i]).collect();
            regression_metrics(&yv, &model.predict(&xv)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RegressionCv {
        kind: spec.kind(),
        rho: Summary::of(per_fold.iter().map(|m| m.pearson_rho)),
        r_squared: Summary::of(per_fold.iter().map(|m| m.r_squared)),
        mse: Summary::of(per_fold.iter().map(|m| Some(m.mse))),
        per_fold,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareOptions {
    pub candidates: Vec<RegressorSpec>,
    pub baselines: Vec<RegressorSpec>,
    pub folds: usize,
    pub seed: u64,
    /// Candidates are considered only if the best median CV correlation exceeds this.
    pub gate_rho: f64,
    pub bootstrap_resamples: usize,
    pub confidence: f64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            candidates: vec![
                RegressorSpec::default_for(RegressorKind::Ols),
                RegressorSpec::default_for(RegressorKind::Svr),
                RegressorSpec::default_for(RegressorKind::Lasso),
            ],
            baselines: vec![
                RegressorSpec::default_for(RegressorKind::LrBf),
                RegressorSpec::default_for(RegressorKind::Plsr),
            ],
            folds: 5,
            seed: 0,
            gate_rho: 0.6,
            bootstrap_resamples: 1000,
            confidence: 0.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapIntervals {
    pub rho: Option<Interval>,
    pub r_squared: Option<Interval>,
    pub mse: Interval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Selected,
    Baseline,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestEvaluation {
    pub kind: RegressorKind,
    pub role: ModelRole,
    pub metrics: RegressionMetrics,
    pub intervals: BootstrapIntervals,
    pub predictions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ComparisonStatus {
    Selected { kind: RegressorKind },
    NotSuitable { best_median_rho: Option<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub status: ComparisonStatus,
    pub gate_rho: f64,
    pub cv: Vec<RegressionCv>,
    pub test: Vec<TestEvaluation>,
    pub y_test: Vec<f64>,
    #[serde(skip)]
    pub models: Vec<RegressionModel>,
}

impl ComparisonReport {
    pub fn selected(&self) -> Option<RegressorKind> {
        match self.status {
            ComparisonStatus::Selected { kind } => Some(kind),
            ComparisonStatus::NotSuitable { .. } => None,
        }
    }

    pub fn test_for(&self, kind: RegressorKind) -> Option<&TestEvaluation> {
        self.test.iter().find(|t| t.kind == kind)
    }
}

/// Train and test design matrices with their targets.
pub struct RegressionTask<'a> {
    pub x_train: &'a DMatrix<f64>,
    pub y_train: &'a [f64],
    pub x_test: &'a DMatrix<f64>,
    pub y_test: &'a [f64],
}

/// CV-selects among the candidates on the training part; if the best median
/// correlation passes the gate, fits the winner and the baselines on the full
/// training part and scores them on the test part with paired bootstrap
/// intervals.
pub fn compare_regressors(task: &RegressionTask<'_>, opts: &CompareOptions) -> Result<ComparisonReport> {
    if opts.candidates.is_empty() {
        return Err(Error::invalid("no candidate regressors"));
    }
    let cv = opts
        .candidates
        .iter()
        .map(|spec| kfold_cv_regression(spec, task.x_train, task.y_train, opts.folds, opts.seed))
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in cv.iter().enumerate() {
        if let Some(r) = c.rho.median {
            if best.is_none_or(|(_, b)| r > b) {
                best = Some((i, r));
            }
        }
    }
    let passes = best.is_some_and(|(_, r)| r > opts.gate_rho);
    if !passes {
        return Ok(ComparisonReport {
            status: ComparisonStatus::NotSuitable {
                best_median_rho: best.map(|(_, r)| r),
            },
            gate_rho: opts.gate_rho,
            cv,
            test: Vec::new(),
            y_test: task.y_test.to_vec(),
            models: Vec::new(),
        });
    }
    let (winner, _) = best.expect("gate passed");
    let mut specs = vec![(opts.candidates[winner].clone(), ModelRole::Selected)];
    for b in &opts.baselines {
        if b.kind() != opts.candidates[winner].kind() {
            specs.push((b.clone(), ModelRole::Baseline));
        }
    }
    let fitted = specs
        .par_iter()
        .map(|(spec, _)| spec.fit(task.x_train, task.y_train))
        .collect::<Result<Vec<_>>>()?;
    let predictions = fitted
        .iter()
        .map(|m| m.predict(task.x_test))
        .collect::<Result<Vec<_>>>()?;
    let intervals = bootstrap_intervals(task.y_test, &predictions, opts.bootstrap_resamples, opts.confidence, opts.seed)?;
    let mut test = Vec::new();
    for (((spec, role), pred), ci) in specs.iter().zip(predictions).zip(intervals) {
        test.push(TestEvaluation {
            kind: spec.kind(),
            role: *role,
            metrics: regression_metrics(task.y_test, &pred)?,
            intervals: ci,
            predictions: pred,
        });
    }
    Ok(ComparisonReport {
        status: ComparisonStatus::Selected {
            kind: opts.candidates[winner].kind(),
        },
        gate_rho: opts.gate_rho,
        cv,
        test,
        y_test: task.y_test.to_vec(),
        models: fitted,
    })
}

/// Percentile intervals from resampling test pairs with replacement; every
/// model is scored on the same resamples.
pub fn bootstrap_intervals(
    y_true: &[f64],
    predictions: &[Vec<f64>],
    resamples: usize,
    confidence: f64,
    seed: u64,
) -> Result<Vec<BootstrapIntervals>> {
    let n = y_true.len();
    if n < 2 {
        return Err(Error::invalid("bootstrap needs at least 2 test samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB007_57A9);
    let draws: Vec<Vec<usize>> = (0..resamples)
        .map(|_| (0..n).map(|_| rng.random_range(0..n)).collect())
        .collect();
    let lo_q = (1.0 - confidence) / 2.0;
    let hi_q = 1.0 - lo_q;
    let interval = |v: &[f64]| {
        (!v.is_empty()).then(|| Interval {
            lower: stats::quantile(v, lo_q),
            upper: stats::quantile(v, hi_q),
        })
    };
    predictions
        .iter()
        .map(|pred| {
            let (mut rho, mut r2, mut mse) = (Vec::new(), Vec::new(), Vec::new());
            for d in &draws {
                let yt: Vec<f64> = d.iter().map(|&i| y_true[i]).collect();
                let yp: Vec<f64> = d.iter().map(|&i| pred[i]).collect();
                let m = regression_metrics(&yt, &yp)?;
                rho.extend(m.pearson_rho);
                r2.extend(m.r_squared);
                mse.push(m.mse);
            }
            Ok(BootstrapIntervals {
                rho: interval(&rho),
                r_squared: interval(&r2),
                mse: interval(&mse).unwrap_or(Interval {
                    lower: f64::NAN,
                    upper: f64::NAN,
                }),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Classification cross-validation

/// Stratified folds when every present class has at least `folds` samples,
/// plain folds (with a warning) otherwise. The flag reports which was used.
pub fn classification_folds(labels: &[usize], folds: usize, seed: u64) -> Result<(Vec<Vec<usize>>, bool)> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in labels {
        *counts.entry(c).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(Error::invalid("classification needs at least 2 classes"));
    }
    if counts.values().all(|&c| c >= folds) {
        Ok((stratified_kfold(labels, folds, seed)?, true))
    } else {
        warn!("a class has fewer than {folds} samples; using unstratified folds");
        Ok((kfold_indices(labels.len(), folds, seed)?, false))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationCv {
    pub config: ClassifierConfig,
    pub confusion: ConfusionMatrix,
    pub metrics: ClassificationMetrics,
    pub stratified: bool,
    /// Held-out prediction for every sample.
    pub predictions: Vec<usize>,
}

fn fold_split(x: &DMatrix<f64>, labels: &[usize], test: &[usize]) -> (DMatrix<f64>, Vec<usize>, DMatrix<f64>) {
    let train = complement(labels.len(), test);
    let xt = x.select_rows(train.iter());
    let yt = train.iter().map(|&i| labels[i]).collect();
    (xt, yt, x.select_rows(test.iter()))
}

/// Held-out predictions from every fold aggregated into one confusion matrix.
pub fn kfold_cv_classification(
    config: &ClassifierConfig,
    cost: &CostMatrix,
    x: &DMatrix<f64>,
    labels: &[usize],
    folds: usize,
    seed: u64,
    opts: &TrainOptions,
) -> Result<ClassificationCv> {
    check_labels(x, labels, cost.k())?;
    let (parts, stratified) = classification_folds(labels, folds, seed)?;
    let fold_preds = parts
        .par_iter()
        .map(|test| {
            let (xt, yt, xv) = fold_split(x, labels, test);
            fit_classifier(config, cost, &xt, &yt, opts)?.predict(&xv)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut predictions = vec![0; labels.len()];
    for (test, preds) in parts.iter().zip(fold_preds) {
        for (&i, p) in test.iter().zip(preds) {
            predictions[i] = p;
        }
    }
    let confusion = ConfusionMatrix::from_predictions(cost.k(), labels, &predictions);
    Ok(ClassificationCv {
        config: *config,
        metrics: confusion.metric_set(),
        confusion,
        stratified,
        predictions,
    })
}

/// Cross-validates each configuration at the given cost. The winner is the
/// highest MCC, ties going to the earlier configuration.
pub fn sweep_classifiers(
    configs: &[ClassifierConfig],
    cost: &CostMatrix,
    x: &DMatrix<f64>,
    labels: &[usize],
    folds: usize,
    seed: u64,
    opts: &TrainOptions,
) -> Result<(Vec<ClassificationCv>, usize)> {
    if configs.is_empty() {
        return Err(Error::invalid("no classifier configurations to sweep"));
    }
    let results = configs
        .par_iter()
        .map(|c| kfold_cv_classification(c, cost, x, labels, folds, seed, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.metrics.mcc > results[best].metrics.mcc {
            best = i;
        }
    }
    Ok((results, best))
}

// ---------------------------------------------------------------------------
// Cost grid search

/// Value sets for each off-diagonal cost cell, in row-major cell order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_classes: usize,
    pub cells: Vec<Vec<f64>>,
}

impl GridSpec {
    pub fn new(n_classes: usize, cells: Vec<Vec<f64>>) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::invalid("cost grid needs at least 2 classes"));
        }
        let want = n_classes * (n_classes - 1);
        if cells.len() != want {
            return Err(Error::invalid(format!(
                "{n_classes} classes need {want} cost cells, got {}",
                cells.len()
            )));
        }
        let mut cells = cells;
        for c in &mut cells {
            if c.is_empty() {
                return Err(Error::invalid("empty cost grid"));
            }
            if c.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::invalid("cost grid values must be finite and non-negative"));
            }
            c.sort_by(f64::total_cmp);
            c.dedup();
        }
        Ok(Self { n_classes, cells })
    }

    /// The same value set for every cell.
    pub fn uniform(n_classes: usize, values: Vec<f64>) -> Result<Self> {
        let cells = vec![values; n_classes * n_classes.saturating_sub(1)];
        Self::new(n_classes, cells)
    }

    /// Desk-scale grid `{1, 3, 5, 7}` per cell.
    pub fn coarse(n_classes: usize) -> Self {
        Self::uniform(n_classes, vec![1.0, 3.0, 5.0, 7.0]).expect("valid coarse grid")
    }

    /// Full grid `{1, ..., 7}` per cell.
    pub fn full(n_classes: usize) -> Self {
        Self::uniform(n_classes, (1..=7).map(f64::from).collect()).expect("valid full grid")
    }

    /// Parses `a..b` (inclusive integer range), `a..b:step`, or a comma list.
    /// Cells may be given separately, joined by `;`; a single set applies to
    /// every cell.
    pub fn parse(n_classes: usize, spec: &str) -> Result<Self> {
        let sets = spec
            .split(';')
            .map(parse_value_set)
            .collect::<Result<Vec<_>>>()?;
        if sets.len() == 1 {
            Self::uniform(n_classes, sets.into_iter().next().expect("one set"))
        } else {
            Self::new(n_classes, sets)
        }
    }

    pub fn cardinality(&self) -> u64 {
        self.cells
            .iter()
            .try_fold(1u64, |acc, c| acc.checked_mul(c.len() as u64))
            .unwrap_or(u64::MAX)
    }

    /// Cost vector of the `index`-th point in lexicographic order.
    pub fn point(&self, index: u64) -> Vec<f64> {
        let mut out = vec![0.0; self.cells.len()];
        let mut rest = index;
        for (slot, cell) in out.iter_mut().zip(&self.cells).rev() {
            let r = cell.len() as u64;
            *slot = cell[(rest % r) as usize];
            rest /= r;
        }
        out
    }

    pub fn contains(&self, cost: &[f64]) -> bool {
        cost.len() == self.cells.len() && self.cells.iter().zip(cost).all(|(c, v)| c.contains(v))
    }

    /// Column names of the off-diagonal cells, `cost_<true>_<pred>`.
    pub fn cell_names(&self) -> Vec<String> {
        let k = self.n_classes;
        let mut out = Vec::new();
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    out.push(format!("cost_{i}_{j}"));
                }
            }
        }
        out
    }
}

fn parse_value_set(s: &str) -> Result<Vec<f64>> {
    let s = s.trim();
    let bad = || Error::invalid(format!("cannot parse grid value set '{s}'"));
    if let Some((lo, rest)) = s.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((h, st)) => (h, st.trim().parse::<u64>().map_err(|_| bad())?),
            None => (rest, 1),
        };
        let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
        if step == 0 || hi < lo {
            return Err(bad());
        }
        return Ok((lo..=hi).step_by(step as usize).map(|v| v as f64).collect());
    }
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub cost: Vec<f64>,
    pub confusion: ConfusionMatrix,
    pub mcc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub config: ClassifierConfig,
    pub grid: GridSpec,
    pub folds: usize,
    pub seed: u64,
    pub stratified: bool,
    pub best_index: u64,
    pub best_cost: CostMatrix,
    pub best_mcc: f64,
    pub points: Vec<GridPoint>,
}

impl GridSearchResult {
    /// Plot-ready MCC surface: one row per grid point.
    pub fn write_surface_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?;
        let mut header = self.grid.cell_names();
        header.push("mcc".into());
        w.write_record(&header)?;
        for p in &self.points {
            let mut rec: Vec<String> = p.cost.iter().map(|v| v.to_string()).collect();
            rec.push(p.mcc.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GridSearchOptions {
    pub folds: usize,
    pub seed: u64,
    /// Worker threads; 0 uses the global pool.
    pub jobs: usize,
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_every: usize,
    pub train: TrainOptions,
}

impl Default for GridSearchOptions {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 0,
            jobs: 0,
            checkpoint: None,
            checkpoint_every: 5000,
            train: TrainOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    config: ClassifierConfig,
    grid: GridSpec,
    folds: usize,
    seed: u64,
    done: Vec<ConfusionMatrix>,
}

fn load_checkpoint(path: &Path, config: &ClassifierConfig, grid: &GridSpec, opts: &GridSearchOptions) -> Vec<ConfusionMatrix> {
    let Ok(text) = fs::read_to_string(path) else {
        return Vec::new();
    };
    match serde_json::from_str::<Checkpoint>(&text) {
        Ok(c) if c.config == *config && c.grid == *grid && c.folds == opts.folds && c.seed == opts.seed => {
            info!("resuming grid search from {} completed points", c.done.len());
            c.done
        }
        _ => {
            warn!("ignoring checkpoint {} from a different search", path.display());
            Vec::new()
        }
    }
}

fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, serde_json::to_vec(ck)?).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Per-fold state reused across grid points: the cost only changes the
/// decision rule (probabilistic families) or the SVM box weights.
enum FoldCache {
    Posterior {
        post: Vec<DMatrix<f64>>,
        present: Vec<Vec<bool>>,
    },
    Svm {
        /// Vote matrices keyed by fold and the bit patterns of the class weights.
        votes: HashMap<(usize, Vec<u64>), DMatrix<f64>>,
        present: Vec<Vec<bool>>,
        train_labels: Vec<Vec<usize>>,
    },
}

/// Exhaustive search over the off-diagonal costs. Every point is scored by
/// cross-validation over the same folds; the best MCC wins and ties go to
/// the lexicographically smallest cost vector. Results do not depend on
/// `jobs`.
pub fn cost_grid_search(
    config: &ClassifierConfig,
    x: &DMatrix<f64>,
    labels: &[usize],
    grid: &GridSpec,
    opts: &GridSearchOptions,
) -> Result<GridSearchResult> {
    let total = grid.cardinality();
    if total == 0 {
        return Err(Error::invalid("empty cost grid"));
    }
    let k = grid.n_classes;
    check_labels(x, labels, k)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| grid_search_inner(config, x, labels, grid, opts, total))
}

fn grid_search_inner(
    config: &ClassifierConfig,
    x: &DMatrix<f64>,
    labels: &[usize],
    grid: &GridSpec,
    opts: &GridSearchOptions,
    total: u64,
) -> Result<GridSearchResult> {
    let k = grid.n_classes;
    let (parts, stratified) = classification_folds(labels, opts.folds, opts.seed)?;
    let splits: Vec<_> = parts.iter().map(|t| fold_split(x, labels, t)).collect();
    let presence = |yt: &[usize]| {
        let mut p = vec![false; k];
        for &c in yt {
            p[c] = true;
        }
        p
    };
    let present: Vec<Vec<bool>> = splits.iter().map(|(_, yt, _)| presence(yt)).collect();

    let cache = if config.is_probabilistic() {
        let uniform = CostMatrix::uniform(k);
        let post = splits
            .par_iter()
            .map(|(xt, yt, xv)| {
                let m = fit_classifier(config, &uniform, xt, yt, &opts.train)?;
                Ok(m.posteriors(xv)?.expect("probabilistic family"))
            })
            .collect::<Result<Vec<_>>>()?;
        FoldCache::Posterior { post, present }
    } else {
        let ClassifierConfig::Svm { kernel } = *config else {
            unreachable!("only SVMs are non-probabilistic")
        };
        let kernels: Vec<(DMatrix<f64>, DMatrix<f64>)> = splits
            .par_iter()
            .map(|(xt, _, xv)| (svm_kernel_matrix(kernel, xt, xt), svm_kernel_matrix(kernel, xv, xt)))
            .collect();
        let mut jobs: BTreeMap<(usize, Vec<u64>), Vec<f64>> = BTreeMap::new();
        for idx in 0..total {
            let cost = CostMatrix::from_off_diagonal(k, &grid.point(idx))?;
            for (f, (_, yt, _)) in splits.iter().enumerate() {
                let w = svm_class_weights(&cost, yt);
                let key: Vec<u64> = w.iter().map(|v| v.to_bits()).collect();
                jobs.entry((f, key)).or_insert(w);
            }
        }
        info!("grid search trains {} distinct SVM fold models", jobs.len());
        let votes = jobs
            .into_par_iter()
            .map(|((f, key), w)| {
                let (gram, cross) = &kernels[f];
                let pairs = svm_train_pairs(gram, &splits[f].1, &present[f], &w, &opts.train);
                ((f, key), svm_votes(&pairs, cross, k))
            })
            .collect();
        FoldCache::Svm {
            votes,
            present,
            train_labels: splits.iter().map(|s| s.1.clone()).collect(),
        }
    };

    let evaluate = |idx: u64| -> Result<ConfusionMatrix> {
        let cost = CostMatrix::from_off_diagonal(k, &grid.point(idx))?;
        let mut cm = ConfusionMatrix::new(k);
        for (f, test) in parts.iter().enumerate() {
            for (r, &i) in test.iter().enumerate() {
                let pred = match &cache {
                    FoldCache::Posterior { post, present } => {
                        let row: Vec<f64> = post[f].row(r).iter().copied().collect();
                        expected_cost_decision(&row, &cost, &present[f])
                    }
                    FoldCache::Svm {
                        votes,
                        present,
                        train_labels,
                    } => {
                        let w = svm_class_weights(&cost, &train_labels[f]);
                        let key: Vec<u64> = w.iter().map(|v| v.to_bits()).collect();
                        let v = &votes[&(f, key)];
                        let row: Vec<f64> = v.row(r).iter().copied().collect();
                        vote_decision(&row, &cost, &present[f])
                    }
                };
                cm.counts[labels[i]][pred] += 1;
            }
        }
        Ok(cm)
    };

    let mut done = match &opts.checkpoint {
        Some(p) => load_checkpoint(p, config, grid, opts),
        None => Vec::new(),
    };
    done.truncate(total as usize);
    let chunk = opts.checkpoint_every.max(1) as u64;
    while (done.len() as u64) < total {
        let start = done.len() as u64;
        let end = (start + chunk).min(total);
        let batch = (start..end)
            .into_par_iter()
            .map(&evaluate)
            .collect::<Result<Vec<_>>>()?;
        done.extend(batch);
        if let Some(p) = &opts.checkpoint {
            save_checkpoint(
                p,
                &Checkpoint {
                    config: *config,
                    grid: grid.clone(),
                    folds: opts.folds,
                    seed: opts.seed,
                    done: done.clone(),
                },
            )?;
        }
    }

    let points: Vec<GridPoint> = done
        .into_iter()
        .enumerate()
        .map(|(i, confusion)| GridPoint {
            cost: grid.point(i as u64),
            mcc: confusion.mcc(),
            confusion,
        })
        .collect();
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.mcc > points[best].mcc {
            best = i;
        }
    }
    Ok(GridSearchResult {
        config: *config,
        grid: grid.clone(),
        folds: opts.folds,
        seed: opts.seed,
        stratified,
        best_index: best as u64,
        best_cost: CostMatrix::from_off_diagonal(k, &points[best].cost)?,
        best_mcc: points[best].mcc,
        points,
    })
}
