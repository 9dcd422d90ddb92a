//! Synthetic spectral datasets with planted absorption bands.
//!
//! Each spectrum is a linear baseline minus Gaussian absorption bands whose
//! depths are drawn per sample. Properties are linear combinations of the
//! band depths plus Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::classification::ClassScheme;
use crate::dataset::{Property, SoilSample, SpectralDataset, WavelengthGrid};
use crate::error::{Error, Result};

const MIN_REFLECTANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    /// Reflectance at the first band, drawn uniformly per sample.
    pub level: [f64; 2],
    /// Change in reflectance per 1000 nm, drawn uniformly per sample.
    pub slope_per_um: [f64; 2],
}

impl Default for Baseline {
    fn default() -> Self {
        Self {
            level: [0.45, 0.65],
            slope_per_um: [0.05, 0.15],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub center_nm: f64,
    /// Standard deviation of the Gaussian shape.
    pub width_nm: f64,
    /// Depth range, drawn uniformly per sample.
    pub depth: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    Absolute(f64),
    /// Multiple of the noiseless signal's standard deviation.
    Relative(f64),
}

impl Default for Noise {
    fn default() -> Self {
        Noise::Absolute(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyRule {
    pub property: Property,
    #[serde(default)]
    pub intercept: f64,
    /// One weight per band.
    pub weights: Vec<f64>,
    #[serde(default)]
    pub noise: Noise,
}

impl PropertyRule {
    /// Standard deviation of the noiseless value under uniform depths.
    pub fn signal_std(&self, bands: &[BandSpec]) -> f64 {
        self.weights
            .iter()
            .zip(bands)
            .map(|(w, b)| w * w * (b.depth[1] - b.depth[0]).powi(2) / 12.0)
            .sum::<f64>()
            .sqrt()
    }

    fn noise_sd(&self, bands: &[BandSpec]) -> f64 {
        match self.noise {
            Noise::Absolute(s) => s,
            Noise::Relative(f) => f * self.signal_std(bands),
        }
    }
}

/// Exact class counts for one property, reached by rejection sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceRule {
    pub property: Property,
    pub thresholds: Vec<f64>,
    pub counts: Vec<usize>,
    #[serde(default = "default_max_attempts")]
    pub max_attempts_per_sample: usize,
}

fn default_max_attempts() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub grid: WavelengthGrid,
    #[serde(default)]
    pub baseline: Baseline,
    pub bands: Vec<BandSpec>,
    pub properties: Vec<PropertyRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imbalance: Option<ImbalanceRule>,
    /// Gaussian noise added to every reflectance value.
    #[serde(default)]
    pub reflectance_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SynthSpec {
    /// Canonical grid, three bands (600, 1450 and 2200 nm) and all six
    /// properties with noise at 5% of the signal.
    pub fn demo(n_samples: usize, seed: u64) -> Self {
        let band = |center_nm: f64, width_nm: f64| BandSpec {
            center_nm,
            width_nm,
            depth: [0.0, 0.2],
        };
        let rule = |property, intercept, weights: Vec<f64>| PropertyRule {
            property,
            intercept,
            weights,
            noise: Noise::Relative(0.05),
        };
        Self {
            n_samples,
            grid: WavelengthGrid::canonical(),
            baseline: Baseline::default(),
            bands: vec![band(600.0, 40.0), band(1450.0, 60.0), band(2200.0, 50.0)],
            properties: vec![
                rule(Property::Ph, 5.0, vec![12.0, 3.0, 0.0]),
                rule(Property::Om, 2.0, vec![0.0, 20.0, 5.0]),
                rule(Property::Ca, 1.0, vec![5.0, 0.0, 40.0]),
                rule(Property::Mg, 0.5, vec![10.0, 10.0, 10.0]),
                rule(Property::K, 0.1, vec![0.0, 0.0, 2.0]),
                rule(Property::Na, 0.2, vec![2.0, 4.0, 0.0]),
            ],
            imbalance: None,
            reflectance_noise: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples must be positive"));
        }
        for b in &self.bands {
            if !self.grid.contains(b.center_nm) {
                return Err(Error::invalid(format!(
                    "band center {} nm lies outside the grid [{}, {}] nm",
                    b.center_nm,
                    self.grid.start_nm,
                    self.grid.end_nm()
                )));
            }
            if !(b.width_nm > 0.0) || !b.width_nm.is_finite() {
                return Err(Error::invalid(format!("band at {} nm needs a positive width", b.center_nm)));
            }
            if !(0.0 <= b.depth[0] && b.depth[0] <= b.depth[1] && b.depth[1].is_finite()) {
                return Err(Error::invalid(format!("band at {} nm has an invalid depth range", b.center_nm)));
            }
        }
        check_range(self.baseline.level, "baseline level")?;
        check_range(self.baseline.slope_per_um, "baseline slope")?;
        let mut seen = Vec::new();
        for r in &self.properties {
            if seen.contains(&r.property) {
                return Err(Error::invalid(format!("duplicate rule for {}", r.property)));
            }
            seen.push(r.property);
            if r.weights.len() != self.bands.len() {
                return Err(Error::invalid(format!(
                    "rule for {} has {} weights for {} bands",
                    r.property,
                    r.weights.len(),
                    self.bands.len()
                )));
            }
            let sd = r.noise_sd(&self.bands);
            if !(sd >= 0.0) || !sd.is_finite() {
                return Err(Error::invalid(format!("rule for {} has invalid noise", r.property)));
            }
        }
        if !(self.reflectance_noise >= 0.0) {
            return Err(Error::invalid("reflectance noise must be non-negative"));
        }
        if let Some(im) = &self.imbalance {
            if !seen.contains(&im.property) {
                return Err(Error::invalid(format!("imbalance rule for {} has no property rule", im.property)));
            }
            ClassScheme::new(None, im.thresholds.clone(), vec![String::new(); im.thresholds.len() + 1])?;
            if im.counts.len() != im.thresholds.len() + 1 {
                return Err(Error::invalid("imbalance counts must have one entry per class"));
            }
            if im.counts.iter().sum::<usize>() != self.n_samples {
                return Err(Error::invalid("imbalance counts must sum to n_samples"));
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn check_range(r: [f64; 2], what: &str) -> Result<()> {
    if r[0] <= r[1] && r[0].is_finite() && r[1].is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} range must be finite and ordered")))
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

struct Candidate {
    reflectance: Vec<f64>,
    values: Vec<f64>,
}

fn draw(spec: &SynthSpec, rng: &mut ChaCha8Rng, noise: &[Normal<f64>], refl_noise: Option<&Normal<f64>>) -> Candidate {
    let depths: Vec<f64> = spec.bands.iter().map(|b| uniform(rng, b.depth)).collect();
    let level = uniform(rng, spec.baseline.level);
    let slope = uniform(rng, spec.baseline.slope_per_um);
    let reflectance = (0..spec.grid.count)
        .map(|i| {
            let nm = spec.grid.wavelength(i);
            let mut r = level + slope * (nm - spec.grid.start_nm) / 1000.0;
            for (b, d) in spec.bands.iter().zip(&depths) {
                let z = (nm - b.center_nm) / b.width_nm;
                r -= d * (-0.5 * z * z).exp();
            }
            if let Some(n) = refl_noise {
                r += n.sample(rng);
            }
            r.clamp(MIN_REFLECTANCE, 1.0)
        })
        .collect();
    let values = spec
        .properties
        .iter()
        .zip(noise)
        .map(|(rule, n)| {
            let signal: f64 = rule.intercept + rule.weights.iter().zip(&depths).map(|(w, d)| w * d).sum::<f64>();
            signal + n.sample(rng)
        })
        .collect();
    Candidate { reflectance, values }
}

/// Generates the dataset; identical specs give bit-identical output.
pub fn generate(spec: &SynthSpec) -> Result<SpectralDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise: Vec<Normal<f64>> = spec
        .properties
        .iter()
        .map(|r| Normal::new(0.0, r.noise_sd(&spec.bands)).map_err(|e| Error::invalid(e.to_string())))
        .collect::<Result<_>>()?;
    let refl_noise = if spec.reflectance_noise > 0.0 {
        Some(Normal::new(0.0, spec.reflectance_noise).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };

    let mut accepted = Vec::with_capacity(spec.n_samples);
    match &spec.imbalance {
        None => {
            for _ in 0..spec.n_samples {
                accepted.push(draw(spec, &mut rng, &noise, refl_noise.as_ref()));
            }
        }
        Some(im) => {
            let slot = spec
                .properties
                .iter()
                .position(|r| r.property == im.property)
                .expect("validated");
            let mut remaining = im.counts.clone();
            let budget = im.max_attempts_per_sample.saturating_mul(spec.n_samples);
            let mut attempts = 0usize;
            while accepted.len() < spec.n_samples {
                if attempts >= budget {
                    return Err(Error::invalid(format!(
                        "imbalance rule for {} is infeasible: still need {:?} samples per class after {attempts} draws",
                        im.property, remaining
                    )));
                }
                attempts += 1;
                let c = draw(spec, &mut rng, &noise, refl_noise.as_ref());
                let class = im.thresholds.partition_point(|&t| t <= c.values[slot]);
                if remaining[class] > 0 {
                    remaining[class] -= 1;
                    accepted.push(c);
                }
            }
        }
    }

    let width = spec.n_samples.to_string().len().max(4);
    let samples = accepted
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let mut s = SoilSample::new(format!("S{:0width$}", i + 1), c.reflectance);
            for (rule, v) in spec.properties.iter().zip(c.values) {
                s.set_property(rule.property, Some(v));
            }
            s
        })
        .collect();
    SpectralDataset::new(spec.grid.clone(), samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_spec_is_valid_and_deterministic() {
        let spec = SynthSpec::demo(20, 3);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.len(), 20);
        for (x, y) in a.samples().iter().zip(b.samples()) {
            assert_eq!(x.reflectance, y.reflectance);
            assert_eq!(x.property(Property::Ph), y.property(Property::Ph));
        }
        for s in a.samples() {
            assert!(s.reflectance.iter().all(|&r| r > 0.0 && r <= 1.0));
        }
    }

    #[test]
    fn band_outside_grid_is_rejected() {
        let mut spec = SynthSpec::demo(5, 0);
        spec.bands[0].center_nm = 3000.0;
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn imbalance_counts_are_exact() {
        let mut spec = SynthSpec::demo(60, 1);
        spec.imbalance = Some(ImbalanceRule {
            property: Property::Na,
            thresholds: vec![1.0],
            counts: vec![52, 8],
            max_attempts_per_sample: 10_000,
        });
        let ds = generate(&spec).unwrap();
        let high = ds
            .samples()
            .iter()
            .filter(|s| s.property(Property::Na).unwrap() >= 1.0)
            .count();
        assert_eq!(high, 8);
    }

    #[test]
    fn infeasible_imbalance_is_an_error() {
        let mut spec = SynthSpec::demo(10, 1);
        spec.imbalance = Some(ImbalanceRule {
            property: Property::Na,
            thresholds: vec![100.0],
            counts: vec![5, 5],
            max_attempts_per_sample: 10,
        });
        assert!(generate(&spec).is_err());
    }
}
