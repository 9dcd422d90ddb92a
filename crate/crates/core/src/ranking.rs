//! Composite ranking of derivative features: absolute correlation, LASSO
//! coefficient magnitude, univariate F-statistic and raw variance, each
//! min-max normalized and summed.

use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dataset::WavelengthGrid;
use crate::error::{Error, Result};
use crate::preprocess::{FeatureBlock, FeatureId, FeatureMatrix};
use crate::regression::{fit_lasso_cv, LassoParams};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingEntry {
    pub feature: FeatureId,
    pub corr_score: f64,
    pub lasso_score: f64,
    pub f_score: f64,
    pub var_score: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub property: String,
    /// Sorted by total, highest first.
    pub entries: Vec<RankingEntry>,
}

impl FeatureRanking {
    pub fn top(&self, n: usize) -> &[RankingEntry] {
        &self.entries[..n.min(self.entries.len())]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Min-max normalization to [0, 1]; a constant column maps to all zeros.
pub fn min_max(values: &[f64], what: &str) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        warn!("{what} scores are constant; normalizing to zero");
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Univariate linear-regression F-statistic from a correlation.
pub fn f_statistic(r: f64, n: usize) -> f64 {
    let r2 = r * r;
    (n as f64 - 2.0) * r2 / (1.0 - r2).max(f64::EPSILON)
}

/// Ranks the D1/D2 columns of `x` against `y`. Variance scores use the
/// column statistics recorded before standardization.
pub fn rank_features(property: &str, x: &FeatureMatrix, y: &[f64], lasso: &LassoParams) -> Result<FeatureRanking> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if y.len() < 3 {
        return Err(Error::invalid("ranking needs at least 3 samples"));
    }
    if stats::variance(y) <= 0.0 {
        return Err(Error::invalid(format!("target {property} is constant")));
    }
    let derivative = x.restrict_blocks(&[FeatureBlock::D1, FeatureBlock::D2]);
    if derivative.ncols() == 0 {
        return Err(Error::invalid("ranking needs D1 or D2 feature columns"));
    }
    let n = y.len();
    let m = &derivative.values;
    let corr: Vec<f64> = (0..m.ncols())
        .map(|j| {
            let col: Vec<f64> = m.column(j).iter().copied().collect();
            stats::pearson(&col, y).unwrap_or(0.0)
        })
        .collect();
    let model = fit_lasso_cv(m, y, lasso)?;
    let lasso_raw: Vec<f64> = model.coefficients.iter().map(|b| b.abs()).collect();
    let f_raw: Vec<f64> = corr.iter().map(|&r| f_statistic(r, n)).collect();
    let var_raw: Vec<f64> = derivative.stats().iter().map(|s| s.std * s.std).collect();
    let corr_raw: Vec<f64> = corr.iter().map(|r| r.abs()).collect();

    let corr_s = min_max(&corr_raw, "correlation");
    let lasso_s = min_max(&lasso_raw, "LASSO");
    let f_s = min_max(&f_raw, "F-statistic");
    let var_s = min_max(&var_raw, "variance");
    let mut entries: Vec<RankingEntry> = derivative
        .columns()
        .iter()
        .enumerate()
        .map(|(j, id)| RankingEntry {
            feature: id.clone(),
            corr_score: corr_s[j],
            lasso_score: lasso_s[j],
            f_score: f_s[j],
            var_score: var_s[j],
            total: corr_s[j] + lasso_s[j] + f_s[j] + var_s[j],
        })
        .collect();
    entries.sort_by(|a, b| {
        b.total
            .total_cmp(&a.total)
            .then_with(|| a.feature.partial_cmp(&b.feature).expect("feature ids are ordered"))
    });
    Ok(FeatureRanking {
        property: property.to_string(),
        entries,
    })
}

/// Wavelength by property score table; each cell is the larger of the D1 and
/// D2 totals at that band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub wavelengths: Vec<f64>,
    pub properties: Vec<String>,
    /// `scores[band][property]`
    pub scores: Vec<Vec<f64>>,
}

pub fn ranking_heatmap(grid: &WavelengthGrid, rankings: &[FeatureRanking]) -> Result<Heatmap> {
    let mut scores = vec![vec![0.0; rankings.len()]; grid.count];
    for (p, r) in rankings.iter().enumerate() {
        for e in &r.entries {
            if !e.feature.block.is_derivative() {
                continue;
            }
            if e.feature.index >= grid.count {
                return Err(Error::invalid(format!(
                    "ranking for {} does not match a {}-band grid",
                    r.property, grid.count
                )));
            }
            let cell: &mut f64 = &mut scores[e.feature.index][p];
            *cell = cell.max(e.total);
        }
    }
    Ok(Heatmap {
        wavelengths: grid.wavelengths(),
        properties: rankings.iter().map(|r| r.property.clone()).collect(),
        scores,
    })
}

impl Heatmap {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let mut header = vec!["wavelength_nm".to_string()];
        header.extend(self.properties.iter().cloned());
        w.write_record(&header)?;
        for (nm, row) in self.wavelengths.iter().zip(&self.scores) {
            let mut rec = vec![format!("{nm:.1}")];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("heatmap", e))?;
        Ok(())
    }
}
