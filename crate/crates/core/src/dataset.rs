//! Spectral datasets: wavelength grids, soil samples with lab-measured
//! properties, CSV ingestion/persistence and seeded train/test splitting.
//!
//! Two CSV files describe a dataset:
//!
//! * spectra: header `id,<wl_1>,<wl_2>,...` with wavelengths in nm, strictly
//!   increasing and uniformly spaced (1e-6 nm tolerance), one row per sample;
//! * labels: header `id,pH,OM,Ca,Mg,K,Na` (any subset, any order), an empty
//!   cell meaning "not measured".
//!
//! Labels are joined to spectra by id, never by row position.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance (nm) on the uniform spacing of header wavelengths.
pub const GRID_TOLERANCE_NM: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavelengthGrid {
    pub start_nm: f64,
    pub step_nm: f64,
    pub count: usize,
}

impl WavelengthGrid {
    pub fn new(start_nm: f64, step_nm: f64, count: usize) -> Result<Self> {
        let grid = Self {
            start_nm,
            step_nm,
            count,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// 400 nm to 2491 nm in 8.5 nm steps (247 bands).
    pub fn canonical() -> Self {
        Self {
            start_nm: 400.0,
            step_nm: 8.5,
            count: 247,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count < 3 {
            return Err(Error::invalid(format!(
                "wavelength grid needs at least 3 bands, got {}",
                self.count
            )));
        }
        if !(self.step_nm > 0.0) || !self.step_nm.is_finite() || !self.start_nm.is_finite() {
            return Err(Error::invalid(format!(
                "wavelength grid step must be positive and finite, got {}",
                self.step_nm
            )));
        }
        Ok(())
    }

    pub fn wavelength(&self, index: usize) -> f64 {
        self.start_nm + index as f64 * self.step_nm
    }

    pub fn end_nm(&self) -> f64 {
        self.wavelength(self.count - 1)
    }

    pub fn wavelengths(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.wavelength(i)).collect()
    }

    /// Index of the band closest to `nm`, if `nm` lies within half a step of the grid.
    pub fn nearest_index(&self, nm: f64) -> Option<usize> {
        let pos = (nm - self.start_nm) / self.step_nm;
        if pos < -0.5 || pos > self.count as f64 - 0.5 {
            return None;
        }
        Some((pos.round().max(0.0) as usize).min(self.count - 1))
    }

    pub fn contains(&self, nm: f64) -> bool {
        nm >= self.start_nm && nm <= self.end_nm()
    }

    /// Infers a grid from header wavelengths.
    pub fn from_wavelengths(wavelengths: &[f64]) -> Result<Self> {
        if wavelengths.len() < 3 {
            return Err(Error::invalid(format!(
                "spectra header needs at least 3 wavelengths, got {}",
                wavelengths.len()
            )));
        }
        if wavelengths.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("header wavelengths must be strictly increasing"));
        }
        let n = wavelengths.len();
        let start = wavelengths[0];
        let step = (wavelengths[n - 1] - start) / (n - 1) as f64;
        for (i, &wl) in wavelengths.iter().enumerate() {
            let expected = start + i as f64 * step;
            if (wl - expected).abs() > GRID_TOLERANCE_NM {
                return Err(Error::invalid(format!(
                    "header wavelengths are not uniformly spaced: column {} is {wl} nm, expected {expected} nm",
                    i + 1
                )));
            }
        }
        Self::new(start, step, n)
    }
}

/// The six soil chemical properties handled by the toolkit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Property {
    #[serde(rename = "pH")]
    Ph,
    #[serde(rename = "OM")]
    Om,
    Ca,
    Mg,
    K,
    Na,
}

impl Property {
    pub const ALL: [Property; 6] = [
        Property::Ph,
        Property::Om,
        Property::Ca,
        Property::Mg,
        Property::K,
        Property::Na,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Property::Ph => "pH",
            Property::Om => "OM",
            Property::Ca => "Ca",
            Property::Mg => "Mg",
            Property::K => "K",
            Property::Na => "Na",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Property {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Property::ALL
            .iter()
            .copied()
            .find(|p| p.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown property '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoilSample {
    pub id: String,
    pub reflectance: Vec<f64>,
    properties: [Option<f64>; 6],
}

impl SoilSample {
    pub fn new(id: impl Into<String>, reflectance: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            reflectance,
            properties: [None; 6],
        }
    }

    pub fn with_property(mut self, property: Property, value: f64) -> Self {
        self.set_property(property, Some(value));
        self
    }

    pub fn property(&self, property: Property) -> Option<f64> {
        self.properties[property.index()]
    }

    pub fn set_property(&mut self, property: Property, value: Option<f64>) {
        self.properties[property.index()] = value;
    }
}

/// An immutable, validated collection of spectra sharing one wavelength grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDataset {
    grid: WavelengthGrid,
    samples: Vec<SoilSample>,
}

impl SpectralDataset {
    pub fn new(grid: WavelengthGrid, samples: Vec<SoilSample>) -> Result<Self> {
        grid.validate()?;
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if s.reflectance.len() != grid.count {
                return Err(Error::invalid(format!(
                    "sample '{}' has {} reflectance values, grid has {}",
                    s.id,
                    s.reflectance.len(),
                    grid.count
                )));
            }
            if let Some(i) = s.reflectance.iter().position(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "sample '{}' has a non-finite reflectance at band {i}",
                    s.id
                )));
            }
            if s.properties.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "sample '{}' has a non-finite property value",
                    s.id
                )));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::invalid(format!("duplicate sample id '{}'", s.id)));
            }
        }
        Ok(Self { grid, samples })
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn samples(&self) -> &[SoilSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.id.as_str()).collect()
    }

    /// Property values in sample order; `None` where not measured.
    pub fn target(&self, property: Property) -> Vec<Option<f64>> {
        self.samples.iter().map(|s| s.property(property)).collect()
    }

    /// Indices and values of the samples that have `property` measured.
    pub fn observed(&self, property: Property) -> (Vec<usize>, Vec<f64>) {
        self.samples
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.property(property).map(|v| (i, v)))
            .unzip()
    }

    /// A new dataset holding the given samples, in the given order.
    pub fn subset(&self, indices: &[usize]) -> SpectralDataset {
        SpectralDataset {
            grid: self.grid,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

/// Loads and joins a spectra CSV and a labels CSV.
pub fn load_dataset(spectra_path: &Path, labels_path: &Path) -> Result<SpectralDataset> {
    let spectra = File::open(spectra_path).map_err(|e| Error::io(spectra_path, e))?;
    let labels = File::open(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let (grid, mut samples) = read_spectra(spectra)?;
    let labels = read_labels(labels)?;
    join_labels(&mut samples, labels);
    SpectralDataset::new(grid, samples)
}

/// Writes the dataset as a spectra CSV and a labels CSV.
pub fn save_dataset(ds: &SpectralDataset, spectra_path: &Path, labels_path: &Path) -> Result<()> {
    let mut f = File::create(spectra_path).map_err(|e| Error::io(spectra_path, e))?;
    write_spectra(ds, &mut f)?;
    f.flush().map_err(|e| Error::io(spectra_path, e))?;
    let mut f = File::create(labels_path).map_err(|e| Error::io(labels_path, e))?;
    write_labels(ds, &mut f)?;
    f.flush().map_err(|e| Error::io(labels_path, e))?;
    Ok(())
}

fn parse_number(cell: &str, line: usize, column: usize) -> Result<f64> {
    cell.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("non-numeric cell '{cell}' in column {}", column + 1),
    })
}

/// Parses a spectra CSV into its grid and label-free samples.
pub fn read_spectra<R: Read>(reader: R) -> Result<(WavelengthGrid, Vec<SoilSample>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() || !header[0].trim().eq_ignore_ascii_case("id") {
        return Err(Error::Parse {
            line: 1,
            message: "spectra header must start with 'id'".into(),
        });
    }
    let wavelengths = header
        .iter()
        .enumerate()
        .skip(1)
        .map(|(c, cell)| parse_number(cell, 1, c))
        .collect::<Result<Vec<_>>>()?;
    let grid = WavelengthGrid::from_wavelengths(&wavelengths)?;

    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let line = r + 2;
        if record.len() != grid.count + 1 {
            return Err(Error::Parse {
                line,
                message: format!(
                    "row length mismatch: {} values under a {}-band header",
                    record.len().saturating_sub(1),
                    grid.count
                ),
            });
        }
        let id = record[0].trim().to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Parse {
                line,
                message: format!("duplicate id '{id}'"),
            });
        }
        let reflectance = record
            .iter()
            .enumerate()
            .skip(1)
            .map(|(c, cell)| {
                let v = parse_number(cell, line, c)?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Parse {
                        line,
                        message: format!("non-finite reflectance in column {}", c + 1),
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        samples.push(SoilSample::new(id, reflectance));
    }
    Ok((grid, samples))
}

/// Parsed labels keyed by sample id, preserving file order.
pub type LabelTable = Vec<(String, [Option<f64>; 6])>;

pub fn read_labels<R: Read>(reader: R) -> Result<LabelTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Ok(Vec::new()),
        Some(h) => h?,
    };
    if header.is_empty() || !header[0].trim().eq_ignore_ascii_case("id") {
        return Err(Error::Parse {
            line: 1,
            message: "labels header must start with 'id'".into(),
        });
    }
    let columns = header
        .iter()
        .skip(1)
        .map(|name| name.parse::<Property>())
        .collect::<Result<Vec<_>>>()?;
    let mut table = Vec::new();
    let mut seen = HashSet::new();
    for (r, record) in records.enumerate() {
        let record = record?;
        let line = r + 2;
        if record.len() != columns.len() + 1 {
            return Err(Error::Parse {
                line,
                message: format!(
                    "row length mismatch: {} cells under a {}-column header",
                    record.len(),
                    columns.len() + 1
                ),
            });
        }
        let id = record[0].trim().to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Parse {
                line,
                message: format!("duplicate id '{id}'"),
            });
        }
        let mut values = [None; 6];
        for (c, property) in columns.iter().enumerate() {
            let cell = record[c + 1].trim();
            if !cell.is_empty() {
                let v = parse_number(cell, line, c + 1)?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        message: format!("non-finite {property} value"),
                    });
                }
                values[property.index()] = Some(v);
            }
        }
        table.push((id, values));
    }
    Ok(table)
}

/// Attaches labels to samples by id. Label ids without a spectrum are skipped
/// with a warning; samples without a label row keep all properties missing.
pub fn join_labels(samples: &mut [SoilSample], labels: LabelTable) {
    let index: HashMap<&str, usize> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    let mut assignments = Vec::with_capacity(labels.len());
    for (id, values) in labels {
        match index.get(id.as_str()) {
            Some(&i) => assignments.push((i, values)),
            None => log::warn!("labels id '{id}' has no spectrum; skipped"),
        }
    }
    for (i, values) in assignments {
        samples[i].properties = values;
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_spectra<W: Write>(ds: &SpectralDataset, writer: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let mut header = vec!["id".to_string()];
    header.extend(ds.grid.wavelengths().iter().map(|w| w.to_string()));
    wtr.write_record(&header)?;
    for s in &ds.samples {
        let mut row = Vec::with_capacity(s.reflectance.len() + 1);
        row.push(s.id.clone());
        row.extend(s.reflectance.iter().map(|v| v.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io("<spectra>", e))?;
    Ok(())
}

pub fn write_labels<W: Write>(ds: &SpectralDataset, writer: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let mut header = vec!["id".to_string()];
    header.extend(Property::ALL.iter().map(|p| p.name().to_string()));
    wtr.write_record(&header)?;
    for s in &ds.samples {
        let mut row = vec![s.id.clone()];
        row.extend(Property::ALL.iter().map(|&p| fmt_opt(s.property(p))));
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io("<labels>", e))?;
    Ok(())
}

/// Number of training samples for a fraction of `n` (floor, guarded against
/// representation error such as `0.7 * 10 = 6.999...`).
pub fn train_size(n: usize, train_fraction: f64) -> usize {
    ((train_fraction * n as f64) + 1e-9).floor() as usize
}

/// Seeded random partition into train and test parts. Each part keeps the
/// original sample order.
pub fn split_train_test(
    ds: &SpectralDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(SpectralDataset, SpectralDataset)> {
    let (train, test) = split_indices(ds.len(), train_fraction, seed)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Index form of [`split_train_test`].
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if n == 0 {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    let k = train_size(n, train_fraction);
    if k == 0 || k == n {
        return Err(Error::invalid(format!(
            "train fraction {train_fraction} leaves an empty part for {n} samples"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = order[..k].to_vec();
    let mut test = order[k..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spectra_csv(rows: usize, bands: usize) -> String {
        let grid = WavelengthGrid::new(400.0, 8.5, bands).unwrap();
        let mut s = String::from("id");
        for w in grid.wavelengths() {
            s.push_str(&format!(",{w}"));
        }
        s.push('\n');
        for r in 0..rows {
            s.push_str(&format!("s{r}"));
            for b in 0..bands {
                s.push_str(&format!(",{}", 0.1 + 0.001 * (r * bands + b) as f64));
            }
            s.push('\n');
        }
        s
    }

    fn join(spectra: &str, labels: &str) -> Result<SpectralDataset> {
        let (grid, mut samples) = read_spectra(spectra.as_bytes())?;
        join_labels(&mut samples, read_labels(labels.as_bytes())?);
        SpectralDataset::new(grid, samples)
    }

    #[test]
    fn canonical_grid_ends_at_2491() {
        let g = WavelengthGrid::canonical();
        assert_eq!(g.count, 247);
        assert_eq!(g.end_nm(), 2491.0);
    }

    #[test]
    fn loads_full_size_dataset() {
        let ds = join(&spectra_csv(653, 247), "id,pH,OM,Ca,Mg,K,Na\ns0,5.5,,,,,\n").unwrap();
        assert_eq!(ds.len(), 653);
        assert_eq!(ds.grid().count, 247);
        assert_eq!(ds.samples()[0].property(Property::Ph), Some(5.5));
        assert_eq!(ds.samples()[0].property(Property::Om), None);
        assert_eq!(ds.samples()[1].property(Property::Ph), None);
    }

    #[test]
    fn empty_labels_leave_everything_missing() {
        let ds = join(&spectra_csv(4, 5), "").unwrap();
        assert!(ds
            .samples()
            .iter()
            .all(|s| Property::ALL.iter().all(|&p| s.property(p).is_none())));
    }

    #[test]
    fn short_row_is_rejected() {
        let mut csv = spectra_csv(0, 247);
        csv.push_str("bad");
        for _ in 0..246 {
            csv.push_str(",0.5");
        }
        csv.push('\n');
        let err = read_spectra(csv.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("row length mismatch"), "{err}");
    }

    #[test]
    fn duplicate_and_non_numeric_cells_are_rejected() {
        let csv = "id,400,408.5,417\na,1,2,3\na,1,2,3\n";
        assert!(read_spectra(csv.as_bytes()).unwrap_err().to_string().contains("duplicate"));
        let csv = "id,400,408.5,417\na,1,x,3\n";
        assert!(read_spectra(csv.as_bytes()).unwrap_err().to_string().contains("non-numeric"));
    }

    #[test]
    fn non_uniform_header_is_rejected() {
        let csv = "id,400,408.5,418\na,1,2,3\n";
        assert!(read_spectra(csv.as_bytes()).is_err());
        let csv = "id,400,399,398\na,1,2,3\n";
        assert!(read_spectra(csv.as_bytes()).is_err());
    }

    #[test]
    fn crlf_input_is_accepted() {
        let csv = "id,400,408.5,417\r\na,1,2,3\r\n";
        let (grid, samples) = read_spectra(csv.as_bytes()).unwrap();
        assert_eq!(grid.count, 3);
        assert_eq!(samples[0].reflectance, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn labels_join_by_id_not_position() {
        let ds = join(
            "id,400,408.5,417\na,1,2,3\nb,4,5,6\n",
            "id,Na,pH\nb,0.5,7.1\nghost,1,1\na,,6.0\n",
        )
        .unwrap();
        assert_eq!(ds.samples()[0].property(Property::Ph), Some(6.0));
        assert_eq!(ds.samples()[0].property(Property::Na), None);
        assert_eq!(ds.samples()[1].property(Property::Na), Some(0.5));
    }

    #[test]
    fn unknown_label_column_is_rejected() {
        assert!(read_labels("id,pH,Zn\n".as_bytes()).is_err());
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let (tr, te) = split_indices(653, 0.7, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (457, 196));
        let (tr, te) = split_indices(10, 0.7, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (7, 3));
    }

    #[test]
    fn split_is_deterministic_and_a_partition() {
        let a = split_indices(10, 0.5, 42).unwrap();
        let b = split_indices(10, 0.5, 42).unwrap();
        assert_eq!(a, b);
        for seed in 0..20 {
            let (tr, te) = split_indices(10, 0.5, seed).unwrap();
            let mut all: Vec<_> = tr.iter().chain(te.iter()).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn split_rejects_bad_fraction() {
        assert!(split_indices(10, 0.0, 0).is_err());
        assert!(split_indices(10, 1.0, 0).is_err());
        assert!(split_indices(10, 1.5, 0).is_err());
    }
}
