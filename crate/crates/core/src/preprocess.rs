//! Spectral transforms and the standardized feature matrix.
//!
//! Each spectrum of `N` bands contributes up to four blocks of `N` columns,
//! always concatenated in the order RAW, D1, D2, FFT:
//!
//! * RAW: reflectance as measured;
//! * D1: first derivative, central differences inside and one-sided
//!   differences at both ends;
//! * D2: second derivative, three-point stencil inside, each end copying its
//!   nearest interior value;
//! * FFT: magnitudes of the full-length DFT (bins `0..N`, the mirrored half
//!   included so the block is exactly `N` wide).
//!
//! Every column is then z-scored with the population standard deviation.
//! Columns whose deviation is zero become all-zero columns so column indices
//! stay stable.
//!
//! Column names are `raw_400.0`, `d1_408.5`, `d2_417.0` and `fft_bin_12`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dataset::{SpectralDataset, WavelengthGrid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureBlock {
    Raw,
    D1,
    D2,
    Fft,
}

impl FeatureBlock {
    pub const ALL: [FeatureBlock; 4] = [
        FeatureBlock::Raw,
        FeatureBlock::D1,
        FeatureBlock::D2,
        FeatureBlock::Fft,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            FeatureBlock::Raw => "raw",
            FeatureBlock::D1 => "d1",
            FeatureBlock::D2 => "d2",
            FeatureBlock::Fft => "fft",
        }
    }

    pub fn is_derivative(self) -> bool {
        matches!(self, FeatureBlock::D1 | FeatureBlock::D2)
    }

    /// Parses a comma-separated list such as `raw,d1,d2,fft` into the
    /// canonical block order, dropping duplicates.
    pub fn parse_list(s: &str) -> Result<Vec<FeatureBlock>> {
        let mut blocks = s
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<FeatureBlock>>>()?;
        blocks.sort();
        blocks.dedup();
        if blocks.is_empty() {
            return Err(Error::invalid("no feature blocks selected"));
        }
        Ok(blocks)
    }
}

impl fmt::Display for FeatureBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prefix())
    }
}

impl FromStr for FeatureBlock {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "raw" => Ok(FeatureBlock::Raw),
            "d1" => Ok(FeatureBlock::D1),
            "d2" => Ok(FeatureBlock::D2),
            "fft" => Ok(FeatureBlock::Fft),
            other => Err(Error::invalid(format!("unknown feature block '{other}'"))),
        }
    }
}

/// Provenance of one feature column: its block and band (or frequency bin) index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureId {
    pub block: FeatureBlock,
    pub index: usize,
    /// Band wavelength; `None` for the FFT block, which is indexed by bin.
    pub wavelength_nm: Option<f64>,
}

impl FeatureId {
    pub fn new(block: FeatureBlock, index: usize, grid: &WavelengthGrid) -> Self {
        let wavelength_nm = match block {
            FeatureBlock::Fft => None,
            _ => Some(grid.wavelength(index)),
        };
        Self {
            block,
            index,
            wavelength_nm,
        }
    }

    pub fn column_name(&self) -> String {
        match self.wavelength_nm {
            Some(nm) => format!("{}_{nm:.1}", self.block.prefix()),
            None => format!("fft_bin_{}", self.index),
        }
    }

    /// Inverse of [`FeatureId::column_name`] for a given grid.
    pub fn parse(name: &str, grid: &WavelengthGrid) -> Result<Self> {
        let bad = || Error::invalid(format!("unrecognized feature column '{name}'"));
        if let Some(bin) = name.strip_prefix("fft_bin_") {
            let index: usize = bin.parse().map_err(|_| bad())?;
            if index >= grid.count {
                return Err(bad());
            }
            return Ok(Self::new(FeatureBlock::Fft, index, grid));
        }
        let (prefix, nm) = name.split_once('_').ok_or_else(bad)?;
        let block: FeatureBlock = prefix.parse()?;
        if block == FeatureBlock::Fft {
            return Err(bad());
        }
        let nm: f64 = nm.parse().map_err(|_| bad())?;
        let index = grid.nearest_index(nm).ok_or_else(bad)?;
        if (grid.wavelength(index) - nm).abs() > 0.05 + 1e-9 {
            return Err(bad());
        }
        Ok(Self::new(block, index, grid))
    }

    fn order_key(&self) -> (FeatureBlock, usize) {
        (self.block, self.index)
    }
}

impl PartialOrd for FeatureId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.order_key().cmp(&other.order_key()))
    }
}

fn check_len(n: usize) -> Result<()> {
    if n < 3 {
        return Err(Error::invalid(format!(
            "derivatives need at least 3 points, got {n}"
        )));
    }
    Ok(())
}

/// First derivative with respect to wavelength.
pub fn derivative1(spectrum: &[f64], step_nm: f64) -> Result<Vec<f64>> {
    let n = spectrum.len();
    check_len(n)?;
    let f = spectrum;
    let mut out = Vec::with_capacity(n);
    out.push((f[1] - f[0]) / step_nm);
    for i in 1..n - 1 {
        out.push((f[i + 1] - f[i - 1]) / (2.0 * step_nm));
    }
    out.push((f[n - 1] - f[n - 2]) / step_nm);
    Ok(out)
}

/// Second derivative with respect to wavelength.
pub fn derivative2(spectrum: &[f64], step_nm: f64) -> Result<Vec<f64>> {
    let n = spectrum.len();
    check_len(n)?;
    let f = spectrum;
    let h2 = step_nm * step_nm;
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        out[i] = (f[i + 1] - 2.0 * f[i] + f[i - 1]) / h2;
    }
    out[0] = out[1];
    out[n - 1] = out[n - 2];
    Ok(out)
}

fn magnitudes(plan: &dyn Fft<f64>, spectrum: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = spectrum.iter().map(|&v| Complex::new(v, 0.0)).collect();
    plan.process(&mut buf);
    buf.iter().map(|c| c.norm()).collect()
}

/// `|DFT_k|` for `k = 0..N`, any length `N >= 1`.
pub fn fft_magnitude(spectrum: &[f64]) -> Result<Vec<f64>> {
    if spectrum.is_empty() {
        return Err(Error::invalid("cannot transform an empty spectrum"));
    }
    if spectrum.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("spectrum contains non-finite values"));
    }
    let plan = FftPlanner::<f64>::new().plan_fft_forward(spectrum.len());
    Ok(magnitudes(plan.as_ref(), spectrum))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizationMode {
    /// Statistics from every sample being transformed.
    #[default]
    #[serde(alias = "whole")]
    WholeDataset,
    /// Statistics from a training split, re-applied unchanged to other splits.
    #[serde(alias = "train")]
    TrainOnly,
}

impl FromStr for StandardizationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "whole" | "whole_dataset" => Ok(Self::WholeDataset),
            "train" | "train_only" => Ok(Self::TrainOnly),
            other => Err(Error::invalid(format!("unknown standardization mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    /// Population standard deviation of the untransformed column.
    pub std: f64,
}

impl ColumnStats {
    pub fn is_degenerate(&self) -> bool {
        !(self.std > 1e-12 * self.mean.abs().max(1.0))
    }

    fn apply(&self, v: f64) -> f64 {
        if self.is_degenerate() {
            0.0
        } else {
            (v - self.mean) / self.std
        }
    }
}

/// Per-column statistics and the columns they belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mode: StandardizationMode,
    pub columns: Vec<FeatureId>,
    pub stats: Vec<ColumnStats>,
}

impl Standardization {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Standardized design matrix (samples in rows) with column provenance.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub values: DMatrix<f64>,
    pub sample_ids: Vec<String>,
    pub standardization: Standardization,
}

impl FeatureMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn columns(&self) -> &[FeatureId] {
        &self.standardization.columns
    }

    pub fn stats(&self) -> &[ColumnStats] {
        &self.standardization.stats
    }

    /// Indices of the columns that were zeroed for having no variance.
    pub fn zero_variance_columns(&self) -> Vec<usize> {
        self.stats()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_degenerate())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            values: self.values.select_rows(rows.iter()),
            sample_ids: rows.iter().map(|&r| self.sample_ids[r].clone()).collect(),
            standardization: self.standardization.clone(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            values: self.values.select_columns(cols.iter()),
            sample_ids: self.sample_ids.clone(),
            standardization: Standardization {
                mode: self.standardization.mode,
                columns: cols.iter().map(|&c| self.columns()[c].clone()).collect(),
                stats: cols.iter().map(|&c| self.stats()[c]).collect(),
            },
        }
    }

    /// Keeps only the columns of the given blocks.
    pub fn restrict_blocks(&self, blocks: &[FeatureBlock]) -> FeatureMatrix {
        let cols: Vec<usize> = self
            .columns()
            .iter()
            .enumerate()
            .filter(|(_, id)| blocks.contains(&id.block))
            .map(|(i, _)| i)
            .collect();
        self.select_columns(&cols)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let mut header = vec!["id".to_string()];
        header.extend(self.columns().iter().map(FeatureId::column_name));
        wtr.write_record(&header)?;
        for (r, id) in self.sample_ids.iter().enumerate() {
            let mut row = Vec::with_capacity(self.ncols() + 1);
            row.push(id.clone());
            row.extend(self.values.row(r).iter().map(|v| v.to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| Error::io("<features>", e))?;
        Ok(())
    }
}

fn block_row(
    block: FeatureBlock,
    spectrum: &[f64],
    step: f64,
    plan: &dyn Fft<f64>,
) -> Result<Vec<f64>> {
    match block {
        FeatureBlock::Raw => Ok(spectrum.to_vec()),
        FeatureBlock::D1 => derivative1(spectrum, step),
        FeatureBlock::D2 => derivative2(spectrum, step),
        FeatureBlock::Fft => Ok(magnitudes(plan, spectrum)),
    }
}

fn normalize_blocks(blocks: &[FeatureBlock]) -> Result<Vec<FeatureBlock>> {
    let mut b = blocks.to_vec();
    b.sort();
    b.dedup();
    if b.is_empty() {
        return Err(Error::invalid("no feature blocks selected"));
    }
    Ok(b)
}

/// Unstandardized transforms of every sample, blocks in canonical order.
pub fn transform_spectra(
    ds: &SpectralDataset,
    blocks: &[FeatureBlock],
) -> Result<(DMatrix<f64>, Vec<FeatureId>)> {
    let blocks = normalize_blocks(blocks)?;
    let grid = *ds.grid();
    let plan: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(grid.count);
    let rows: Vec<Vec<f64>> = ds
        .samples()
        .par_iter()
        .map(|s| {
            let mut row = Vec::with_capacity(blocks.len() * grid.count);
            for &b in &blocks {
                row.extend(block_row(b, &s.reflectance, grid.step_nm, plan.as_ref())?);
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let ncols = blocks.len() * grid.count;
    let values = DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]);
    let columns = blocks
        .iter()
        .flat_map(|&b| (0..grid.count).map(move |i| FeatureId::new(b, i, &grid)))
        .collect();
    Ok((values, columns))
}

/// Population mean and standard deviation of each column.
pub fn column_stats(values: &DMatrix<f64>) -> Vec<ColumnStats> {
    let n = values.nrows() as f64;
    values
        .column_iter()
        .map(|col| {
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            ColumnStats {
                mean,
                std: var.sqrt(),
            }
        })
        .collect()
}

/// Builds the standardized feature matrix.
///
/// With `reference` set (train-only mode only), its statistics are applied
/// unchanged; otherwise they are computed from `ds`.
pub fn assemble_features(
    ds: &SpectralDataset,
    blocks: &[FeatureBlock],
    mode: StandardizationMode,
    reference: Option<&Standardization>,
) -> Result<FeatureMatrix> {
    if ds.is_empty() {
        return Err(Error::invalid("cannot build features for an empty dataset"));
    }
    let (mut values, columns) = transform_spectra(ds, blocks)?;
    let stats = match (mode, reference) {
        (StandardizationMode::WholeDataset, Some(_)) => {
            return Err(Error::invalid(
                "reference statistics only apply in train-only mode",
            ))
        }
        (_, None) => column_stats(&values),
        (StandardizationMode::TrainOnly, Some(r)) => {
            if r.stats.len() != columns.len() {
                return Err(Error::DimensionMismatch {
                    expected: r.stats.len(),
                    found: columns.len(),
                });
            }
            if r.columns != columns {
                return Err(Error::invalid(
                    "reference statistics were computed for different feature columns",
                ));
            }
            r.stats.clone()
        }
    };
    let degenerate: Vec<String> = stats
        .iter()
        .zip(&columns)
        .filter(|(s, _)| s.is_degenerate())
        .map(|(_, id)| id.column_name())
        .collect();
    if !degenerate.is_empty() {
        log::warn!(
            "{} zero-variance feature column(s) standardized to zero: {}",
            degenerate.len(),
            degenerate.join(", ")
        );
    }
    for (mut col, s) in values.column_iter_mut().zip(&stats) {
        col.apply(|v| *v = s.apply(*v));
    }
    Ok(FeatureMatrix {
        values,
        sample_ids: ds.samples().iter().map(|s| s.id.clone()).collect(),
        standardization: Standardization {
            mode,
            columns,
            stats,
        },
    })
}
