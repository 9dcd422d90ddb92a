//! Class schemes, cost matrices and the six cost-sensitive classifier
//! families.
//!
//! Probabilistic families (trees, discriminants, kernel naive Bayes, KNN and
//! ensembles) are trained without reference to the cost matrix and predict
//! with the expected-cost rule `argmin_k sum_j P(j|x) cost[j][k]`. The SVM
//! family instead scales each sample's box constraint by its class's row sum
//! of the cost matrix (normalized to mean 1) and combines one-vs-one votes.

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{Cholesky, DMatrix};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Property;
use crate::error::{Error, Result};
use crate::smo::SmoProblem;
use crate::stats;

const TIE_TOL: f64 = 1e-12;

macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($var:ident => $s:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $s)] $var),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$var),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$var => $s),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                Self::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str().eq_ignore_ascii_case(s.trim()))
                    .ok_or_else(|| Error::invalid(format!(concat!("unknown ", stringify!($name), " '{}'"), s)))
            }
        }
    };
}

// ---------------------------------------------------------------------------
// Class schemes

/// Thresholds `t1 < t2 < ...` partition the real line into
/// `(-inf, t1), [t1, t2), ..., [t_last, inf)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScheme {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub property: Option<Property>,
    pub thresholds: Vec<f64>,
    pub class_names: Vec<String>,
}

impl ClassScheme {
    pub fn new(property: Option<Property>, thresholds: Vec<f64>, class_names: Vec<String>) -> Result<Self> {
        let scheme = Self {
            property,
            thresholds,
            class_names,
        };
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::invalid("class scheme needs at least one threshold"));
        }
        if self.thresholds.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("class scheme thresholds must be finite"));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("class scheme thresholds must be strictly increasing"));
        }
        if self.class_names.len() != self.thresholds.len() + 1 {
            return Err(Error::invalid(format!(
                "class scheme with {} thresholds needs {} class names, got {}",
                self.thresholds.len(),
                self.thresholds.len() + 1,
                self.class_names.len()
            )));
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.thresholds.len() + 1
    }

    pub fn assign(&self, value: f64) -> usize {
        self.thresholds.partition_point(|&t| t <= value)
    }

    pub fn class_name(&self, class: usize) -> &str {
        &self.class_names[class]
    }

    pub fn default_for(property: Property) -> Self {
        let lmh = || vec!["Low".to_string(), "Medium".to_string(), "High".to_string()];
        let (thresholds, names) = match property {
            Property::Ph => (
                vec![6.0, 7.3],
                vec![
                    "acidity correction".to_string(),
                    "none correction".to_string(),
                    "alkalinity correction".to_string(),
                ],
            ),
            Property::Om => (vec![3.0, 5.0], lmh()),
            Property::Ca => (vec![3.0, 6.0], lmh()),
            Property::Mg => (vec![1.5, 5.0], lmh()),
            Property::K => (vec![0.2, 0.4], lmh()),
            Property::Na => (
                vec![1.0],
                vec!["Acceptable".to_string(), "Not acceptable".to_string()],
            ),
        };
        Self {
            property: Some(property),
            thresholds,
            class_names: names,
        }
    }
}

pub fn assign_class(scheme: &ClassScheme, value: f64) -> usize {
    scheme.assign(value)
}

// ---------------------------------------------------------------------------
// Cost matrices

/// `costs[true][predicted]`, zero diagonal, non-negative entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct CostMatrix {
    costs: Vec<Vec<f64>>,
}

impl CostMatrix {
    pub fn new(costs: Vec<Vec<f64>>) -> Result<Self> {
        let k = costs.len();
        if k < 2 || costs.iter().any(|r| r.len() != k) {
            return Err(Error::invalid("cost matrix must be square with at least 2 classes"));
        }
        for (i, row) in costs.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if !c.is_finite() || c < 0.0 {
                    return Err(Error::invalid(format!("cost[{i}][{j}] = {c} is not a finite non-negative value")));
                }
                if i == j && c != 0.0 {
                    return Err(Error::invalid(format!("cost[{i}][{i}] must be 0")));
                }
            }
        }
        Ok(Self { costs })
    }

    pub fn uniform(k: usize) -> Self {
        let costs = (0..k)
            .map(|i| (0..k).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
            .collect();
        Self { costs }
    }

    /// Builds a matrix from its off-diagonal cells in row-major order.
    pub fn from_off_diagonal(k: usize, values: &[f64]) -> Result<Self> {
        if values.len() != k * (k - 1) {
            return Err(Error::DimensionMismatch {
                expected: k * (k - 1),
                found: values.len(),
            });
        }
        let mut it = values.iter();
        let costs = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| if i == j { 0.0 } else { *it.next().expect("length checked") })
                    .collect()
            })
            .collect();
        Self::new(costs)
    }

    pub fn off_diagonal(&self) -> Vec<f64> {
        let k = self.k();
        let mut out = Vec::with_capacity(k * (k - 1));
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    out.push(self.costs[i][j]);
                }
            }
        }
        out
    }

    pub fn k(&self) -> usize {
        self.costs.len()
    }

    pub fn get(&self, truth: usize, predicted: usize) -> f64 {
        self.costs[truth][predicted]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.costs
    }

    pub fn row_sum(&self, truth: usize) -> f64 {
        self.costs[truth].iter().sum()
    }

    pub fn max_cost(&self) -> f64 {
        self.costs.iter().flatten().copied().fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<Vec<f64>>> for CostMatrix {
    type Error = Error;

    fn try_from(costs: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(costs)
    }
}

impl From<CostMatrix> for Vec<Vec<f64>> {
    fn from(c: CostMatrix) -> Self {
        c.costs
    }
}

/// Expected-cost decision over the allowed classes; near-ties go to the lower index.
pub fn expected_cost_decision(posterior: &[f64], cost: &CostMatrix, allowed: &[bool]) -> usize {
    let tol = TIE_TOL * cost.max_cost().max(1.0);
    let mut best: Option<(usize, f64)> = None;
    for k in 0..cost.k() {
        if !allowed[k] {
            continue;
        }
        let e: f64 = posterior.iter().enumerate().map(|(j, p)| p * cost.costs[j][k]).sum();
        if best.is_none_or(|(_, b)| e < b - tol) {
            best = Some((k, e));
        }
    }
    best.map_or(0, |(k, _)| k)
}

/// Index of the largest posterior; near-ties go to the lower index.
pub fn posterior_argmax(posterior: &[f64]) -> usize {
    let mut best = 0;
    for (k, &p) in posterior.iter().enumerate().skip(1) {
        if p > posterior[best] + TIE_TOL {
            best = k;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Configurations

named_enum!(DiscriminantKind { Linear => "linear", Quadratic => "quadratic" });
named_enum!(NbKernel {
    Gaussian => "gaussian",
    Box => "box",
    Epanechnikov => "epanechnikov",
    Triangle => "triangle",
});
named_enum!(SvmKernel {
    Linear => "linear",
    Quadratic => "quadratic",
    Cubic => "cubic",
    Gaussian => "gaussian",
});
named_enum!(KnnMetric {
    Cityblock => "cityblock",
    Chebyshev => "chebyshev",
    Euclidean => "euclidean",
    Minkowski => "minkowski",
    Hamming => "hamming",
    Jaccard => "jaccard",
});
named_enum!(EnsembleKind {
    BoostedTrees => "boosted_trees",
    BaggedTrees => "bagged_trees",
    SubspaceDiscriminant => "subspace_discriminant",
    SubspaceKnn => "subspace_knn",
    RusboostedTrees => "rusboosted_trees",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ClassifierConfig {
    Tree { max_splits: usize },
    Discriminant { kind: DiscriminantKind },
    KernelNb { kernel: NbKernel },
    Svm { kernel: SvmKernel },
    Knn { metric: KnnMetric },
    Ensemble { kind: EnsembleKind },
}

pub const TREE_MAX_SPLITS: [usize; 3] = [4, 20, 100];

impl ClassifierConfig {
    /// The 24 standard configurations.
    pub fn all() -> Vec<ClassifierConfig> {
        let mut out: Vec<ClassifierConfig> = TREE_MAX_SPLITS
            .iter()
            .map(|&max_splits| ClassifierConfig::Tree { max_splits })
            .collect();
        out.extend(DiscriminantKind::ALL.iter().map(|&kind| ClassifierConfig::Discriminant { kind }));
        out.extend(NbKernel::ALL.iter().map(|&kernel| ClassifierConfig::KernelNb { kernel }));
        out.extend(SvmKernel::ALL.iter().map(|&kernel| ClassifierConfig::Svm { kernel }));
        out.extend(KnnMetric::ALL.iter().map(|&metric| ClassifierConfig::Knn { metric }));
        out.extend(EnsembleKind::ALL.iter().map(|&kind| ClassifierConfig::Ensemble { kind }));
        out
    }

    pub fn name(&self) -> String {
        match self {
            Self::Tree { max_splits } => format!("tree_{max_splits}"),
            Self::Discriminant { kind } => format!("discriminant_{kind}"),
            Self::KernelNb { kernel } => format!("kernel_nb_{kernel}"),
            Self::Svm { kernel } => format!("svm_{kernel}"),
            Self::Knn { metric } => format!("knn_{metric}"),
            Self::Ensemble { kind } => format!("ensemble_{kind}"),
        }
    }

    pub fn is_probabilistic(&self) -> bool {
        !matches!(self, Self::Svm { .. })
    }
}

impl fmt::Display for ClassifierConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for ClassifierConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let bad = || Error::invalid(format!("unknown classifier configuration '{s}'"));
        if let Some(rest) = s.strip_prefix("tree_") {
            let max_splits: usize = rest.parse().map_err(|_| bad())?;
            if max_splits == 0 {
                return Err(bad());
            }
            return Ok(Self::Tree { max_splits });
        }
        if let Some(rest) = s.strip_prefix("discriminant_") {
            return Ok(Self::Discriminant { kind: rest.parse()? });
        }
        if let Some(rest) = s.strip_prefix("kernel_nb_") {
            return Ok(Self::KernelNb { kernel: rest.parse()? });
        }
        if let Some(rest) = s.strip_prefix("svm_") {
            return Ok(Self::Svm { kernel: rest.parse()? });
        }
        if let Some(rest) = s.strip_prefix("knn_") {
            return Ok(Self::Knn { metric: rest.parse()? });
        }
        if let Some(rest) = s.strip_prefix("ensemble_") {
            return Ok(Self::Ensemble { kind: rest.parse()? });
        }
        Err(bad())
    }
}

/// Hyperparameters shared by the families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub seed: u64,
    pub knn_k: usize,
    pub minkowski_p: f64,
    pub svm_c: f64,
    pub svm_tol: f64,
    pub svm_max_iter: usize,
    pub ensemble_members: usize,
    pub boost_max_splits: usize,
    /// Bootstrap resampling of rows for bagged trees.
    pub bootstrap: bool,
    /// Features per subspace member; `None` means ceil(sqrt(d)).
    pub subspace_dim: Option<usize>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            knn_k: 10,
            minkowski_p: 3.0,
            svm_c: 1.0,
            svm_tol: 1e-3,
            svm_max_iter: 1_000_000,
            ensemble_members: 30,
            boost_max_splits: 20,
            bootstrap: true,
            subspace_dim: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Trees

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf { posterior: Vec<f64> },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Binary CART tree with Gini impurity, grown best-first up to `max_splits`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

struct SplitCandidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct FrontierLeaf {
    node: usize,
    /// Per feature, the leaf's entries sorted by feature value.
    sorted: Vec<Vec<u32>>,
    class_w: Vec<f64>,
    best: Option<SplitCandidate>,
}

fn gini_mass(class_w: &[f64]) -> f64 {
    let total: f64 = class_w.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    total - class_w.iter().map(|w| w * w).sum::<f64>() / total
}

impl Tree {
    /// Fits on the sample rows `entries` (duplicates allowed) with per-entry weights.
    pub fn fit(
        x: &DMatrix<f64>,
        labels: &[usize],
        n_classes: usize,
        entries: &[usize],
        weights: &[f64],
        max_splits: usize,
    ) -> Tree {
        let m = entries.len();
        let d = x.ncols();
        let y: Vec<usize> = entries.iter().map(|&i| labels[i]).collect();
        let value = |f: usize, e: u32| x[(entries[e as usize], f)];
        let mut class_w = vec![0.0; n_classes];
        for (e, &c) in y.iter().enumerate() {
            class_w[c] += weights[e];
        }
        let sorted: Vec<Vec<u32>> = (0..d)
            .map(|f| {
                let mut order: Vec<u32> = (0..m as u32).collect();
                order.sort_by(|&a, &b| value(f, a).total_cmp(&value(f, b)).then(a.cmp(&b)));
                order
            })
            .collect();

        let find_best = |sorted: &[Vec<u32>], class_w: &[f64]| -> Option<SplitCandidate> {
            let parent = gini_mass(class_w);
            let total: f64 = class_w.iter().sum();
            if parent <= TIE_TOL * total {
                return None;
            }
            let mut best: Option<SplitCandidate> = None;
            let mut left = vec![0.0; n_classes];
            let mut right = vec![0.0; n_classes];
            for (f, list) in sorted.iter().enumerate() {
                left.iter_mut().for_each(|v| *v = 0.0);
                for w in 0..list.len().saturating_sub(1) {
                    let e = list[w];
                    left[y[e as usize]] += weights[e as usize];
                    let v = value(f, e);
                    let vn = value(f, list[w + 1]);
                    if vn <= v {
                        continue;
                    }
                    for c in 0..n_classes {
                        right[c] = class_w[c] - left[c];
                    }
                    let gain = parent - gini_mass(&left) - gini_mass(&right);
                    let threshold_ok = best.as_ref().is_none_or(|b| gain > b.gain + TIE_TOL * total);
                    if gain > TIE_TOL * total && threshold_ok {
                        let mut threshold = 0.5 * (v + vn);
                        if threshold >= vn {
                            threshold = v;
                        }
                        best = Some(SplitCandidate {
                            gain,
                            feature: f,
                            threshold,
                        });
                    }
                }
            }
            best
        };

        let normalized = |w: &[f64]| {
            let t: f64 = w.iter().sum();
            w.iter().map(|v| if t > 0.0 { v / t } else { 0.0 }).collect::<Vec<f64>>()
        };

        let mut nodes = vec![TreeNode::Leaf {
            posterior: normalized(&class_w),
        }];
        let root_best = find_best(&sorted, &class_w);
        let mut frontier = vec![FrontierLeaf {
            node: 0,
            sorted,
            class_w,
            best: root_best,
        }];
        let mut go_left = vec![false; m];
        let mut splits = 0;
        while splits < max_splits {
            let mut pick: Option<usize> = None;
            for (i, leaf) in frontier.iter().enumerate() {
                if let Some(b) = &leaf.best {
                    let better = pick.is_none_or(|p| {
                        let pb = frontier[p].best.as_ref().expect("picked leaf has a split");
                        b.gain > pb.gain || (b.gain == pb.gain && leaf.node < frontier[p].node)
                    });
                    if better {
                        pick = Some(i);
                    }
                }
            }
            let Some(p) = pick else { break };
            let leaf = frontier.swap_remove(p);
            let split = leaf.best.expect("picked leaf has a split");
            for &e in &leaf.sorted[0] {
                go_left[e as usize] = value(split.feature, e) <= split.threshold;
            }
            let mut ls = Vec::with_capacity(d);
            let mut rs = Vec::with_capacity(d);
            for list in &leaf.sorted {
                let (l, r): (Vec<u32>, Vec<u32>) = list.iter().partition(|&&e| go_left[e as usize]);
                ls.push(l);
                rs.push(r);
            }
            let mut lw = vec![0.0; n_classes];
            for &e in &ls[0] {
                lw[y[e as usize]] += weights[e as usize];
            }
            let rw: Vec<f64> = leaf.class_w.iter().zip(&lw).map(|(a, b)| a - b).collect();
            let li = nodes.len();
            nodes.push(TreeNode::Leaf {
                posterior: normalized(&lw),
            });
            nodes.push(TreeNode::Leaf {
                posterior: normalized(&rw),
            });
            nodes[leaf.node] = TreeNode::Split {
                feature: split.feature,
                threshold: split.threshold,
                left: li,
                right: li + 1,
            };
            splits += 1;
            let lb = find_best(&ls, &lw);
            let rb = find_best(&rs, &rw);
            frontier.push(FrontierLeaf {
                node: li,
                sorted: ls,
                class_w: lw,
                best: lb,
            });
            frontier.push(FrontierLeaf {
                node: li + 1,
                sorted: rs,
                class_w: rw,
                best: rb,
            });
        }
        Tree { nodes }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }

    pub fn posterior_row(&self, x: &DMatrix<f64>, row: usize) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { posterior } => return posterior,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[(row, *feature)] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn posteriors(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self
            .nodes
            .iter()
            .find_map(|n| match n {
                TreeNode::Leaf { posterior } => Some(posterior.len()),
                TreeNode::Split { .. } => None,
            })
            .expect("tree has leaves");
        let mut out = DMatrix::zeros(x.nrows(), k);
        for r in 0..x.nrows() {
            for (c, &p) in self.posterior_row(x, r).iter().enumerate() {
                out[(r, c)] = p;
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Discriminant analysis

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discriminant {
    pub kind: DiscriminantKind,
    pub log_prior: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Lower Cholesky factors; one shared factor for the linear kind.
    pub factors: Vec<DMatrix<f64>>,
    pub log_det: Vec<f64>,
    pub present: Vec<bool>,
}

/// Cholesky factor of `s`, adding `1e-6 * trace / d` (then tenfold more) to
/// the diagonal while the matrix is ill-conditioned.
fn regularized_cholesky(mut s: DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let d = s.nrows();
    let trace = s.trace();
    let base = if trace > 0.0 { 1e-6 * trace / d as f64 } else { 1e-6 };
    let mut added = 0.0;
    for attempt in 0..10 {
        if let Some(ch) = Cholesky::new(s.clone()) {
            let l = ch.l();
            let diag = l.diagonal();
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for v in diag.iter() {
                lo = lo.min(v * v);
                hi = hi.max(v * v);
            }
            if lo > 1e-12 * hi {
                let log_det = 2.0 * diag.iter().map(|v| v.ln()).sum::<f64>();
                return Ok((l, log_det));
            }
        }
        let target = base * 10f64.powi(attempt);
        for i in 0..d {
            s[(i, i)] += target - added;
        }
        added = target;
    }
    Err(Error::Numeric("covariance matrix could not be regularized".into()))
}

impl Discriminant {
    pub fn fit(kind: DiscriminantKind, x: &DMatrix<f64>, labels: &[usize], n_classes: usize) -> Result<Self> {
        let (n, d) = x.shape();
        let mut counts = vec![0usize; n_classes];
        for &c in labels {
            counts[c] += 1;
        }
        let present: Vec<bool> = counts.iter().map(|&c| c > 0).collect();
        let mut means = vec![vec![0.0; d]; n_classes];
        for (i, &c) in labels.iter().enumerate() {
            for f in 0..d {
                means[c][f] += x[(i, f)];
            }
        }
        for c in 0..n_classes {
            if counts[c] > 0 {
                means[c].iter_mut().for_each(|v| *v /= counts[c] as f64);
            }
        }
        let centered = DMatrix::from_fn(n, d, |i, f| x[(i, f)] - means[labels[i]][f]);
        let log_prior: Vec<f64> = counts
            .iter()
            .map(|&c| if c > 0 { (c as f64 / n as f64).ln() } else { f64::NEG_INFINITY })
            .collect();
        let (factors, log_det) = match kind {
            DiscriminantKind::Linear => {
                let k_present = present.iter().filter(|&&p| p).count();
                let dof = n.saturating_sub(k_present).max(1) as f64;
                let s = centered.tr_mul(&centered) / dof;
                let (l, ld) = regularized_cholesky(s)?;
                (vec![l], vec![ld])
            }
            DiscriminantKind::Quadratic => {
                let mut fs = Vec::with_capacity(n_classes);
                let mut lds = Vec::with_capacity(n_classes);
                for c in 0..n_classes {
                    if counts[c] == 0 {
                        fs.push(DMatrix::zeros(0, 0));
                        lds.push(0.0);
                        continue;
                    }
                    let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
                    let xc = centered.select_rows(rows.iter());
                    let dof = (counts[c].saturating_sub(1)).max(1) as f64;
                    let (l, ld) = regularized_cholesky(xc.tr_mul(&xc) / dof)?;
                    fs.push(l);
                    lds.push(ld);
                }
                (fs, lds)
            }
        };
        Ok(Self {
            kind,
            log_prior,
            means,
            factors,
            log_det,
            present,
        })
    }

    pub fn posteriors(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.present.len();
        let n = x.nrows();
        let mut scores = DMatrix::from_element(n, k, f64::NEG_INFINITY);
        for c in 0..k {
            if !self.present[c] {
                continue;
            }
            let fi = if self.kind == DiscriminantKind::Linear { 0 } else { c };
            let diff_t = DMatrix::from_fn(x.ncols(), n, |f, i| x[(i, f)] - self.means[c][f]);
            let z = self.factors[fi]
                .solve_lower_triangular(&diff_t)
                .expect("Cholesky factor has a positive diagonal");
            for i in 0..n {
                let maha = z.column(i).norm_squared();
                scores[(i, c)] = self.log_prior[c] - 0.5 * maha - 0.5 * self.log_det[fi];
            }
        }
        softmax_rows(scores)
    }
}

fn softmax_rows(mut scores: DMatrix<f64>) -> DMatrix<f64> {
    for i in 0..scores.nrows() {
        let mut row = scores.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = if v.is_finite() { (*v - max).exp() } else { 0.0 };
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    scores
}

// ---------------------------------------------------------------------------
// Kernel naive Bayes

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelNb {
    pub kernel: NbKernel,
    pub log_prior: Vec<f64>,
    /// Per class, the training values feature-major: `values[c][f]`.
    pub values: Vec<Vec<Vec<f64>>>,
    pub bandwidth: Vec<Vec<f64>>,
    pub present: Vec<bool>,
}

const NB_MIN_BANDWIDTH: f64 = 1e-3;
const NB_MIN_DENSITY: f64 = 1e-10;

fn silverman(values: &[f64]) -> f64 {
    let n = values.len();
    let std = if n > 1 { stats::sample_std(values) } else { 0.0 };
    let iqr = stats::quantile(values, 0.75) - stats::quantile(values, 0.25);
    let mut s = std.min(iqr / 1.349);
    if s <= 0.0 {
        s = std;
    }
    (1.06 * s * (n as f64).powf(-0.2)).max(NB_MIN_BANDWIDTH)
}

fn nb_kernel(kind: NbKernel, u: f64) -> f64 {
    let a = u.abs();
    match kind {
        NbKernel::Gaussian => (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt(),
        NbKernel::Box => {
            if a <= 1.0 {
                0.5
            } else {
                0.0
            }
        }
        NbKernel::Epanechnikov => {
            if a <= 1.0 {
                0.75 * (1.0 - u * u)
            } else {
                0.0
            }
        }
        NbKernel::Triangle => (1.0 - a).max(0.0),
    }
}

impl KernelNb {
    pub fn fit(kernel: NbKernel, x: &DMatrix<f64>, labels: &[usize], n_classes: usize) -> Self {
        let (n, d) = x.shape();
        let mut counts = vec![0usize; n_classes];
        for &c in labels {
            counts[c] += 1;
        }
        let present: Vec<bool> = counts.iter().map(|&c| c > 0).collect();
        let mut values = vec![vec![Vec::new(); d]; n_classes];
        for (i, &c) in labels.iter().enumerate() {
            for f in 0..d {
                values[c][f].push(x[(i, f)]);
            }
        }
        let bandwidth = values
            .iter()
            .map(|per_f| {
                per_f
                    .iter()
                    .map(|v| if v.is_empty() { 1.0 } else { silverman(v) })
                    .collect()
            })
            .collect();
        let log_prior = counts
            .iter()
            .map(|&c| if c > 0 { (c as f64 / n as f64).ln() } else { f64::NEG_INFINITY })
            .collect();
        Self {
            kernel,
            log_prior,
            values,
            bandwidth,
            present,
        }
    }

    pub fn posteriors(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.present.len();
        let mut scores = DMatrix::from_element(x.nrows(), k, f64::NEG_INFINITY);
        for c in 0..k {
            if !self.present[c] {
                continue;
            }
            for i in 0..x.nrows() {
                let mut s = self.log_prior[c];
                for (f, vals) in self.values[c].iter().enumerate() {
                    let h = self.bandwidth[c][f];
                    let q = x[(i, f)];
                    let dens: f64 = vals.iter().map(|&v| nb_kernel(self.kernel, (q - v) / h)).sum::<f64>()
                        / (vals.len() as f64 * h);
                    s += dens.max(NB_MIN_DENSITY).ln();
                }
                scores[(i, c)] = s;
            }
        }
        softmax_rows(scores)
    }
}

// ---------------------------------------------------------------------------
// Support vector machines

/// Kernel matrix between the rows of `a` and the rows of `b`.
pub fn svm_kernel_matrix(kind: SvmKernel, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let g = a * b.transpose();
    match kind {
        SvmKernel::Linear => g,
        SvmKernel::Quadratic => g.map(|v| (v + 1.0).powi(2)),
        SvmKernel::Cubic => g.map(|v| (v + 1.0).powi(3)),
        SvmKernel::Gaussian => {
            let p = a.ncols().max(1) as f64;
            let na: Vec<f64> = a.row_iter().map(|r| r.norm_squared()).collect();
            let nb: Vec<f64> = b.row_iter().map(|r| r.norm_squared()).collect();
            DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
                (-(na[i] + nb[j] - 2.0 * g[(i, j)]).max(0.0) / p).exp()
            })
        }
    }
}

/// Per-class sample weights: each class's cost row sum, scaled so the mean
/// weight over the training samples is 1.
pub fn svm_class_weights(cost: &CostMatrix, labels: &[usize]) -> Vec<f64> {
    let k = cost.k();
    let raw: Vec<f64> = (0..k).map(|c| cost.row_sum(c)).collect();
    let mean = labels.iter().map(|&c| raw[c]).sum::<f64>() / labels.len().max(1) as f64;
    if mean <= 0.0 {
        return vec![1.0; k];
    }
    raw.iter().map(|w| w / mean).collect()
}

/// One binary machine: class `a` on the non-negative side, class `b` on the negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmPair {
    pub a: usize,
    pub b: usize,
    pub support: Vec<usize>,
    pub coef: Vec<f64>,
    pub rho: f64,
}

pub(crate) fn svm_train_pairs(
    gram: &DMatrix<f64>,
    labels: &[usize],
    present: &[bool],
    class_weight: &[f64],
    opts: &TrainOptions,
) -> Vec<SvmPair> {
    let classes: Vec<usize> = (0..present.len()).filter(|&c| present[c]).collect();
    let mut pairs = Vec::new();
    for (ai, &a) in classes.iter().enumerate() {
        for &b in &classes[ai + 1..] {
            let index: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == a || labels[i] == b).collect();
            let sign: Vec<f64> = index.iter().map(|&i| if labels[i] == a { 1.0 } else { -1.0 }).collect();
            let upper: Vec<f64> = index.iter().map(|&i| opts.svm_c * class_weight[labels[i]]).collect();
            let problem = SmoProblem {
                kernel: gram,
                linear: vec![-1.0; index.len()],
                index,
                sign,
                upper,
            };
            let sol = problem.solve(opts.svm_tol, opts.svm_max_iter);
            if !sol.converged {
                warn!(
                    "SVM pair ({a}, {b}) stopped after {} iterations with KKT gap {:.3e}",
                    sol.iterations, sol.gap
                );
            }
            let mut support = Vec::new();
            let mut coef = Vec::new();
            for (t, &alpha) in sol.alpha.iter().enumerate() {
                if alpha > 0.0 {
                    support.push(problem.index[t]);
                    coef.push(problem.sign[t] * alpha);
                }
            }
            pairs.push(SvmPair {
                a,
                b,
                support,
                coef,
                rho: sol.rho,
            });
        }
    }
    pairs
}

/// One-vs-one vote counts from the kernel between query rows and training rows.
pub(crate) fn svm_votes(pairs: &[SvmPair], cross: &DMatrix<f64>, n_classes: usize) -> DMatrix<f64> {
    let n = cross.nrows();
    let mut votes = DMatrix::zeros(n, n_classes);
    for p in pairs {
        for i in 0..n {
            let f: f64 = p.support.iter().zip(&p.coef).map(|(&s, &c)| c * cross[(i, s)]).sum::<f64>() - p.rho;
            let winner = if f >= 0.0 { p.a } else { p.b };
            votes[(i, winner)] += 1.0;
        }
    }
    votes
}

/// Majority vote; ties between the top classes are settled by the
/// vote-weighted expected cost, then by the lower index.
pub(crate) fn vote_decision(votes: &[f64], cost: &CostMatrix, allowed: &[bool]) -> usize {
    let top = votes
        .iter()
        .zip(allowed)
        .filter(|(_, &a)| a)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<bool> = votes.iter().zip(allowed).map(|(&v, &a)| a && v == top).collect();
    expected_cost_decision(votes, cost, &tied)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Svm {
    pub kernel: SvmKernel,
    pub train: DMatrix<f64>,
    pub pairs: Vec<SvmPair>,
}

impl Svm {
    pub fn fit(
        kernel: SvmKernel,
        x: &DMatrix<f64>,
        labels: &[usize],
        present: &[bool],
        cost: &CostMatrix,
        opts: &TrainOptions,
    ) -> Self {
        let gram = svm_kernel_matrix(kernel, x, x);
        let weights = svm_class_weights(cost, labels);
        let pairs = svm_train_pairs(&gram, labels, present, &weights, opts);
        Self {
            kernel,
            train: x.clone(),
            pairs,
        }
    }

    pub fn votes(&self, x: &DMatrix<f64>, n_classes: usize) -> DMatrix<f64> {
        let cross = svm_kernel_matrix(self.kernel, x, &self.train);
        svm_votes(&self.pairs, &cross, n_classes)
    }
}

// ---------------------------------------------------------------------------
// Nearest neighbours

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    pub metric: KnnMetric,
    pub k: usize,
    pub p: f64,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

fn knn_distance(metric: KnnMetric, p: f64, a: &[f64], b: &[f64]) -> f64 {
    let pairs = a.iter().zip(b);
    match metric {
        KnnMetric::Cityblock => pairs.map(|(x, y)| (x - y).abs()).sum(),
        KnnMetric::Chebyshev => pairs.map(|(x, y)| (x - y).abs()).fold(0.0, f64::max),
        KnnMetric::Euclidean => pairs.map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        KnnMetric::Minkowski => pairs.map(|(x, y)| (x - y).abs().powf(p)).sum::<f64>().powf(1.0 / p),
        KnnMetric::Hamming => {
            let diff = pairs.filter(|(x, y)| (**x > 0.0) != (**y > 0.0)).count();
            diff as f64 / a.len().max(1) as f64
        }
        KnnMetric::Jaccard => {
            let (mut union, mut diff) = (0usize, 0usize);
            for (x, y) in pairs {
                let (bx, by) = (*x > 0.0, *y > 0.0);
                if bx || by {
                    union += 1;
                    if bx != by {
                        diff += 1;
                    }
                }
            }
            if union == 0 {
                0.0
            } else {
                diff as f64 / union as f64
            }
        }
    }
}

impl Knn {
    pub fn fit(metric: KnnMetric, x: &DMatrix<f64>, labels: &[usize], n_classes: usize, opts: &TrainOptions) -> Self {
        Self {
            metric,
            k: opts.knn_k.max(1),
            p: opts.minkowski_p,
            rows: x.row_iter().map(|r| r.iter().copied().collect()).collect(),
            labels: labels.to_vec(),
            n_classes,
        }
    }

    pub fn posteriors(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.k.min(self.rows.len());
        let mut out = DMatrix::zeros(x.nrows(), self.n_classes);
        let mut dist: Vec<(f64, usize)> = Vec::with_capacity(self.rows.len());
        for i in 0..x.nrows() {
            let q: Vec<f64> = x.row(i).iter().copied().collect();
            dist.clear();
            dist.extend(
                self.rows
                    .iter()
                    .enumerate()
                    .map(|(t, r)| (knn_distance(self.metric, self.p, &q, r), t)),
            );
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < dist.len() {
                dist.select_nth_unstable_by(k - 1, cmp);
            }
            for &(_, t) in &dist[..k] {
                out[(i, self.labels[t])] += 1.0 / k as f64;
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Ensembles

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "learner", rename_all = "snake_case")]
pub enum Member {
    Tree { tree: Tree },
    Discriminant { features: Vec<usize>, model: Discriminant },
    Knn { features: Vec<usize>, model: Knn },
}

impl Member {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<usize> {
        let post = match self {
            Member::Tree { tree } => tree.posteriors(x),
            Member::Discriminant { features, model } => model.posteriors(&x.select_columns(features.iter())),
            Member::Knn { features, model } => model.posteriors(&x.select_columns(features.iter())),
        };
        post.row_iter()
            .map(|r| posterior_argmax(r.clone_owned().as_slice()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub kind: EnsembleKind,
    pub members: Vec<Member>,
    pub weights: Vec<f64>,
    pub n_classes: usize,
}

impl Ensemble {
    pub fn fit(kind: EnsembleKind, x: &DMatrix<f64>, labels: &[usize], n_classes: usize, opts: &TrainOptions) -> Result<Self> {
        let (n, d) = x.shape();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let rounds = opts.ensemble_members.max(1);
        let mut members = Vec::new();
        let mut weights = Vec::new();
        match kind {
            EnsembleKind::BaggedTrees => {
                for _ in 0..rounds {
                    let mut entries: Vec<usize> = if opts.bootstrap {
                        (0..n).map(|_| rng.random_range(0..n)).collect()
                    } else {
                        (0..n).collect()
                    };
                    entries.sort_unstable();
                    let w = vec![1.0; entries.len()];
                    let tree = Tree::fit(x, labels, n_classes, &entries, &w, n.saturating_sub(1).max(1));
                    members.push(Member::Tree { tree });
                    weights.push(1.0);
                }
            }
            EnsembleKind::SubspaceDiscriminant | EnsembleKind::SubspaceKnn => {
                let dim = opts
                    .subspace_dim
                    .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
                    .clamp(1, d);
                for _ in 0..rounds {
                    let mut features: Vec<usize> = if dim == d {
                        (0..d).collect()
                    } else {
                        sample(&mut rng, d, dim).into_vec()
                    };
                    features.sort_unstable();
                    let xs = x.select_columns(features.iter());
                    let member = if kind == EnsembleKind::SubspaceDiscriminant {
                        Member::Discriminant {
                            model: Discriminant::fit(DiscriminantKind::Linear, &xs, labels, n_classes)?,
                            features,
                        }
                    } else {
                        Member::Knn {
                            model: Knn::fit(KnnMetric::Euclidean, &xs, labels, n_classes, opts),
                            features,
                        }
                    };
                    members.push(member);
                    weights.push(1.0);
                }
            }
            EnsembleKind::BoostedTrees | EnsembleKind::RusboostedTrees => {
                let rus = kind == EnsembleKind::RusboostedTrees;
                let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
                for (i, &c) in labels.iter().enumerate() {
                    by_class[c].push(i);
                }
                let k_present = by_class.iter().filter(|v| !v.is_empty()).count() as f64;
                let minority = by_class.iter().map(Vec::len).filter(|&c| c > 0).min().unwrap_or(0);
                let mut w = vec![1.0; n];
                for _ in 0..rounds {
                    let entries: Vec<usize> = if rus {
                        let mut e = Vec::with_capacity(minority * n_classes);
                        for members in by_class.iter().filter(|v| !v.is_empty()) {
                            if members.len() == minority {
                                e.extend_from_slice(members);
                            } else {
                                e.extend(sample(&mut rng, members.len(), minority).into_iter().map(|j| members[j]));
                            }
                        }
                        e.sort_unstable();
                        e
                    } else {
                        (0..n).collect()
                    };
                    let ew: Vec<f64> = entries.iter().map(|&i| w[i]).collect();
                    let tree = Tree::fit(x, labels, n_classes, &entries, &ew, opts.boost_max_splits);
                    let pred: Vec<usize> = (0..n).map(|r| posterior_argmax(tree.posterior_row(x, r))).collect();
                    let total: f64 = w.iter().sum();
                    let err = (0..n).filter(|&i| pred[i] != labels[i]).map(|i| w[i]).sum::<f64>() / total;
                    if err >= 1.0 - 1.0 / k_present {
                        if members.is_empty() {
                            members.push(Member::Tree { tree });
                            weights.push(1.0);
                        }
                        break;
                    }
                    let alpha = ((1.0 - err) / err.max(1e-10)).ln() + (k_present - 1.0).ln();
                    members.push(Member::Tree { tree });
                    weights.push(alpha);
                    if err <= 1e-10 {
                        break;
                    }
                    for i in 0..n {
                        if pred[i] != labels[i] {
                            w[i] *= alpha.exp();
                        }
                    }
                    let scale = n as f64 / w.iter().sum::<f64>();
                    w.iter_mut().for_each(|v| *v *= scale);
                }
            }
        }
        Ok(Self {
            kind,
            members,
            weights,
            n_classes,
        })
    }

    /// Weighted fractions of member votes.
    pub fn posteriors(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.nrows(), self.n_classes);
        let total: f64 = self.weights.iter().sum();
        for (m, &w) in self.members.iter().zip(&self.weights) {
            for (i, c) in m.predict(x).into_iter().enumerate() {
                out[(i, c)] += w / total;
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Trained classifiers

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelState {
    Tree(Tree),
    Discriminant(Discriminant),
    KernelNb(KernelNb),
    Svm(Svm),
    Knn(Knn),
    Ensemble(Ensemble),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    pub config: ClassifierConfig,
    pub cost: CostMatrix,
    pub n_features: usize,
    /// Classes seen during training; others are never predicted.
    pub present: Vec<bool>,
    pub state: ModelState,
}

pub(crate) fn check_labels(x: &DMatrix<f64>, labels: &[usize], n_classes: usize) -> Result<Vec<bool>> {
    if x.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= n_classes) {
        return Err(Error::invalid(format!("label {bad} is not a class index below {n_classes}")));
    }
    let mut present = vec![false; n_classes];
    for &c in labels {
        present[c] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::invalid("training labels contain fewer than 2 classes"));
    }
    Ok(present)
}

pub fn fit_classifier(
    config: &ClassifierConfig,
    cost: &CostMatrix,
    x: &DMatrix<f64>,
    labels: &[usize],
    opts: &TrainOptions,
) -> Result<TrainedClassifier> {
    let k = cost.k();
    let present = check_labels(x, labels, k)?;
    for (c, p) in present.iter().enumerate() {
        if !p {
            warn!("class {c} has no training samples and will not be predicted");
        }
    }
    let state = match *config {
        ClassifierConfig::Tree { max_splits } => {
            let entries: Vec<usize> = (0..labels.len()).collect();
            ModelState::Tree(Tree::fit(x, labels, k, &entries, &vec![1.0; entries.len()], max_splits))
        }
        ClassifierConfig::Discriminant { kind } => ModelState::Discriminant(Discriminant::fit(kind, x, labels, k)?),
        ClassifierConfig::KernelNb { kernel } => ModelState::KernelNb(KernelNb::fit(kernel, x, labels, k)),
        ClassifierConfig::Svm { kernel } => ModelState::Svm(Svm::fit(kernel, x, labels, &present, cost, opts)),
        ClassifierConfig::Knn { metric } => ModelState::Knn(Knn::fit(metric, x, labels, k, opts)),
        ClassifierConfig::Ensemble { kind } => ModelState::Ensemble(Ensemble::fit(kind, x, labels, k, opts)?),
    };
    Ok(TrainedClassifier {
        config: *config,
        cost: cost.clone(),
        n_features: x.ncols(),
        present,
        state,
    })
}

impl TrainedClassifier {
    pub fn n_classes(&self) -> usize {
        self.cost.k()
    }

    fn check_dims(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                found: x.ncols(),
            });
        }
        Ok(())
    }

    /// Class posteriors (n x K) for probabilistic families, `None` for SVMs.
    pub fn posteriors(&self, x: &DMatrix<f64>) -> Result<Option<DMatrix<f64>>> {
        self.check_dims(x)?;
        Ok(match &self.state {
            ModelState::Tree(t) => Some(t.posteriors(x)),
            ModelState::Discriminant(m) => Some(m.posteriors(x)),
            ModelState::KernelNb(m) => Some(m.posteriors(x)),
            ModelState::Knn(m) => Some(m.posteriors(x)),
            ModelState::Ensemble(m) => Some(m.posteriors(x)),
            ModelState::Svm(_) => None,
        })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        self.check_dims(x)?;
        if let ModelState::Svm(svm) = &self.state {
            let votes = svm.votes(x, self.n_classes());
            return Ok(votes
                .row_iter()
                .map(|r| vote_decision(r.clone_owned().as_slice(), &self.cost, &self.present))
                .collect());
        }
        let post = self.posteriors(x)?.expect("probabilistic family");
        Ok(post
            .row_iter()
            .map(|r| expected_cost_decision(r.clone_owned().as_slice(), &self.cost, &self.present))
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub fn predict_class(model: &TrainedClassifier, x: &DMatrix<f64>) -> Result<Vec<usize>> {
    model.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheme_boundaries_are_lower_inclusive() {
        let ph = ClassScheme::default_for(Property::Ph);
        assert_eq!(ph.class_name(ph.assign(5.0)), "acidity correction");
        assert_eq!(ph.class_name(ph.assign(6.0)), "none correction");
        assert_eq!(ph.assign(7.3), 2);
        let k = ClassScheme::default_for(Property::K);
        assert_eq!(k.class_name(k.assign(0.4)), "High");
        assert_eq!(k.assign(0.19), 0);
    }

    #[test]
    fn scheme_validation() {
        assert!(ClassScheme::new(None, vec![2.0, 1.0], vec!["a".into(), "b".into(), "c".into()]).is_err());
        assert!(ClassScheme::new(None, vec![1.0], vec!["a".into()]).is_err());
    }

    #[test]
    fn cost_matrix_round_trips_off_diagonal() {
        let c = CostMatrix::from_off_diagonal(3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(c.get(0, 2), 2.0);
        assert_eq!(c.get(2, 1), 6.0);
        assert_eq!(c.off_diagonal(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(CostMatrix::new(vec![vec![1.0, 1.0], vec![1.0, 0.0]]).is_err());
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<CostMatrix>(&json).unwrap(), c);
    }

    #[test]
    fn twenty_four_configs_with_unique_names() {
        let all = ClassifierConfig::all();
        assert_eq!(all.len(), 24);
        let mut names: Vec<String> = all.iter().map(|c| c.name()).collect();
        for (c, n) in all.iter().zip(&names) {
            assert_eq!(&n.parse::<ClassifierConfig>().unwrap(), c);
        }
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 24);
    }

    #[test]
    fn expected_cost_prefers_cheap_mistakes() {
        let p = [0.6, 0.4];
        let allowed = [true, true];
        assert_eq!(expected_cost_decision(&p, &CostMatrix::uniform(2), &allowed), 0);
        let c = CostMatrix::from_off_diagonal(2, &[1.0, 5.0]).unwrap();
        assert_eq!(expected_cost_decision(&p, &c, &allowed), 1);
        assert_eq!(expected_cost_decision(&[0.5, 0.5], &CostMatrix::uniform(2), &allowed), 0);
    }

    #[test]
    fn single_training_point_knn() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        let knn = Knn::fit(KnnMetric::Euclidean, &x.rows(0, 1).into(), &[1], 2, &TrainOptions::default());
        let post = knn.posteriors(&x);
        for i in 0..3 {
            assert_eq!(posterior_argmax(post.row(i).clone_owned().as_slice()), 1);
        }
    }

    #[test]
    fn tree_separates_two_clusters_with_one_split() {
        let x = DMatrix::from_row_slice(4, 1, &[0.0, 1.0, 10.0, 11.0]);
        let labels = [0, 0, 1, 1];
        let t = Tree::fit(&x, &labels, 2, &[0, 1, 2, 3], &[1.0; 4], 10);
        assert_eq!(t.n_leaves(), 2);
        match &t.nodes[0] {
            TreeNode::Split { threshold, .. } => assert_eq!(*threshold, 5.5),
            TreeNode::Leaf { .. } => panic!("expected split"),
        }
    }
}
