//! Batch command-line front end: preprocess, regress, classify, rank and synth.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::classification::{fit_classifier, ClassScheme, ClassifierConfig, CostMatrix, TrainOptions};
use crate::dataset::{load_dataset, save_dataset, split_indices, Property, SpectralDataset};
use crate::error::{Error, Result};
use crate::evaluation::{
    compare_regressors, cost_grid_search, sweep_classifiers, ClassificationCv, CompareOptions, ComparisonReport,
    ComparisonStatus, ConfusionMatrix, GridSearchOptions, GridSpec, RegressionTask,
};
use crate::preprocess::{assemble_features, FeatureBlock, FeatureMatrix, StandardizationMode};
use crate::ranking::{rank_features, ranking_heatmap};
use crate::regression::{LassoParams, RegressorSpec};
use crate::synthgen::{generate, SynthSpec};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SOILSPEC_OUT";

#[derive(Debug, Parser)]
#[command(name = "soilspec", version, about = "Soil property estimation from vis-NIR spectra")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Spectra CSV (overrides the configuration).
    #[arg(long, global = true)]
    pub spectra: Option<PathBuf>,
    /// Labels CSV (overrides the configuration).
    #[arg(long, global = true)]
    pub labels: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub folds: Option<usize>,
    /// Worker threads; outputs do not depend on this.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Feature blocks, e.g. `raw,d1,d2,fft`.
    #[arg(long, global = true)]
    pub blocks: Option<String>,
    /// Standardization statistics: `whole` or `train`.
    #[arg(long = "std-mode", global = true)]
    pub std_mode: Option<String>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the standardized feature matrix.
    Preprocess,
    /// Select and evaluate a regressor for one property.
    Regress {
        property: Property,
        /// Fit the natural log of the target.
        #[arg(long)]
        log_target: bool,
    },
    /// Sweep the classifier configurations and search misclassification costs.
    Classify {
        property: Property,
        /// Cost grid: `1..7`, `1,3,5`, or per-cell sets joined by `;`.
        #[arg(long)]
        grid: Option<String>,
        /// Use the `{1,3,5,7}` grid.
        #[arg(long)]
        coarse: bool,
    },
    /// Rank derivative features for one or more properties.
    Rank { properties: Vec<Property> },
    /// Generate a synthetic dataset from a JSON spec.
    Synth { spec: PathBuf },
}

/// Everything a run depends on besides the input files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub spectra: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub blocks: Vec<FeatureBlock>,
    pub std_mode: StandardizationMode,
    pub train_fraction: f64,
    pub seed: u64,
    pub folds: usize,
    pub jobs: usize,
    pub class_schemes: BTreeMap<Property, ClassScheme>,
    pub regression: CompareOptions,
    pub classifiers: Vec<ClassifierConfig>,
    pub train_options: TrainOptions,
    pub grid: Option<String>,
    pub coarse: bool,
    pub checkpoint_every: usize,
    pub log_target: Vec<Property>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            spectra: None,
            labels: None,
            out_dir: None,
            blocks: vec![FeatureBlock::Raw, FeatureBlock::D1, FeatureBlock::D2, FeatureBlock::Fft],
            std_mode: StandardizationMode::WholeDataset,
            train_fraction: 0.7,
            seed: 0,
            folds: 5,
            jobs: 0,
            class_schemes: BTreeMap::new(),
            regression: CompareOptions::default(),
            classifiers: ClassifierConfig::all(),
            train_options: TrainOptions::default(),
            grid: None,
            coarse: false,
            checkpoint_every: 5000,
            log_target: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Applies command-line overrides.
    pub fn merge(mut self, args: &CommonArgs) -> Result<Self> {
        if let Some(p) = &args.spectra {
            self.spectra = Some(p.clone());
        }
        if let Some(p) = &args.labels {
            self.labels = Some(p.clone());
        }
        if let Some(s) = args.seed {
            self.seed = s;
        }
        if let Some(f) = args.folds {
            self.folds = f;
        }
        if let Some(j) = args.jobs {
            self.jobs = j;
        }
        if let Some(b) = &args.blocks {
            self.blocks = FeatureBlock::parse_list(b)?;
        }
        if let Some(m) = &args.std_mode {
            self.std_mode = m.parse()?;
        }
        if let Some(o) = &args.out {
            self.out_dir = Some(o.clone());
        }
        self.blocks.sort();
        self.blocks.dedup();
        if self.blocks.is_empty() {
            return Err(Error::invalid("no feature blocks enabled"));
        }
        if self.folds < 2 {
            return Err(Error::invalid("folds must be at least 2"));
        }
        Ok(self)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("soilspec-out"))
    }

    pub fn scheme(&self, property: Property) -> Result<ClassScheme> {
        let s = self
            .class_schemes
            .get(&property)
            .cloned()
            .unwrap_or_else(|| ClassScheme::default_for(property));
        s.validate()?;
        Ok(s)
    }

    fn load_dataset(&self) -> Result<SpectralDataset> {
        let spectra = self
            .spectra
            .as_ref()
            .ok_or_else(|| Error::invalid("no spectra file given (use --spectra or the config)"))?;
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::invalid("no labels file given (use --labels or the config)"))?;
        load_dataset(spectra, labels)
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let base = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = base.merge(&cli.common)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Preprocess => cmd_preprocess(&cfg),
        Command::Regress { property, log_target } => {
            cmd_regress(&cfg, *property, *log_target || cfg.log_target.contains(property))
        }
        Command::Classify { property, grid, coarse } => {
            cmd_classify(&cfg, *property, grid.as_deref().or(cfg.grid.as_deref()), *coarse || cfg.coarse)
        }
        Command::Rank { properties } => cmd_rank(&cfg, properties),
        Command::Synth { spec } => cmd_synth(&cfg, spec, cli.common.seed),
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

/// Samples with an observed value of `property`, and those values.
fn observed_subset(ds: &SpectralDataset, property: Property) -> Result<(SpectralDataset, Vec<f64>)> {
    let (idx, values) = ds.observed(property);
    if idx.is_empty() {
        return Err(Error::invalid(format!("no samples have a value for {property}")));
    }
    Ok((ds.subset(&idx), values))
}

pub fn cmd_preprocess(cfg: &RunConfig) -> Result<()> {
    let ds = cfg.load_dataset()?;
    let out = cfg.out_dir();
    create_dir(&out)?;
    let features = match cfg.std_mode {
        StandardizationMode::WholeDataset => assemble_features(&ds, &cfg.blocks, cfg.std_mode, None)?,
        StandardizationMode::TrainOnly => {
            let (train, _) = split_indices(ds.len(), cfg.train_fraction, cfg.seed)?;
            let reference = assemble_features(&ds.subset(&train), &cfg.blocks, cfg.std_mode, None)?;
            assemble_features(&ds, &cfg.blocks, cfg.std_mode, Some(&reference.standardization))?
        }
    };
    let path = out.join("features.csv");
    let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    features.write_csv(&mut w)?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    let mut stats = features.standardization.to_json()?;
    stats.push('\n');
    write_text(&out.join("standardization.json"), &stats)?;
    info!(
        "wrote {} x {} features to {}",
        features.nrows(),
        features.ncols(),
        path.display()
    );
    Ok(())
}

/// Train and test feature matrices under the configured standardization.
fn split_features(cfg: &RunConfig, ds: &SpectralDataset, train: &[usize], test: &[usize]) -> Result<(FeatureMatrix, FeatureMatrix)> {
    match cfg.std_mode {
        StandardizationMode::WholeDataset => {
            let all = assemble_features(ds, &cfg.blocks, cfg.std_mode, None)?;
            Ok((all.select_rows(train), all.select_rows(test)))
        }
        StandardizationMode::TrainOnly => {
            let tr = assemble_features(&ds.subset(train), &cfg.blocks, cfg.std_mode, None)?;
            let te = assemble_features(&ds.subset(test), &cfg.blocks, cfg.std_mode, Some(&tr.standardization))?;
            Ok((tr, te))
        }
    }
}

#[derive(Debug, Serialize)]
struct RegressionRun<'a> {
    property: Property,
    target_transform: &'static str,
    train_fraction: f64,
    seed: u64,
    folds: usize,
    n_train: usize,
    n_test: usize,
    #[serde(flatten)]
    report: &'a ComparisonReport,
}

fn seeded_regression(cfg: &RunConfig) -> CompareOptions {
    let mut opts = cfg.regression.clone();
    opts.folds = cfg.folds;
    opts.seed = cfg.seed;
    for spec in opts.candidates.iter_mut().chain(opts.baselines.iter_mut()) {
        if let RegressorSpec::Lasso(p) = spec {
            p.seed = cfg.seed;
            p.folds = cfg.folds;
        }
    }
    opts
}

pub fn cmd_regress(cfg: &RunConfig, property: Property, log_target: bool) -> Result<()> {
    let ds = cfg.load_dataset()?;
    let (ds, mut y) = observed_subset(&ds, property)?;
    if log_target {
        if let Some(v) = y.iter().find(|v| **v <= 0.0) {
            return Err(Error::invalid(format!("log target needs positive {property} values, found {v}")));
        }
        y.iter_mut().for_each(|v| *v = v.ln());
    }
    let (train, test) = split_indices(ds.len(), cfg.train_fraction, cfg.seed)?;
    let (x_train, x_test) = split_features(cfg, &ds, &train, &test)?;
    let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let y_test: Vec<f64> = test.iter().map(|&i| y[i]).collect();
    let task = RegressionTask {
        x_train: &x_train.values,
        y_train: &y_train,
        x_test: &x_test.values,
        y_test: &y_test,
    };
    let report = compare_regressors(&task, &seeded_regression(cfg))?;

    let dir = cfg.out_dir().join(format!("regress_{}", property.name()));
    create_dir(&dir)?;
    write_json(
        &dir.join("report.json"),
        &RegressionRun {
            property,
            target_transform: if log_target { "log" } else { "none" },
            train_fraction: cfg.train_fraction,
            seed: cfg.seed,
            folds: cfg.folds,
            n_train: train.len(),
            n_test: test.len(),
            report: &report,
        },
    )?;

    let mut w = csv_writer(&dir.join("cv.csv"))?;
    w.write_record(["model", "fold", "rho", "r_squared", "mse"])?;
    for cv in &report.cv {
        for (f, m) in cv.per_fold.iter().enumerate() {
            w.write_record([
                cv.kind.name().to_string(),
                f.to_string(),
                opt(m.pearson_rho),
                opt(m.r_squared),
                m.mse.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&dir, e))?;

    if let ComparisonStatus::Selected { kind } = report.status {
        info!("{property}: selected {kind}");
        let mut w = csv_writer(&dir.join("predictions.csv"))?;
        let mut header = vec!["id".to_string(), "y_true".to_string()];
        header.extend(report.test.iter().map(|t| t.kind.name().to_string()));
        w.write_record(&header)?;
        for (r, id) in x_test.sample_ids.iter().enumerate() {
            let mut rec = vec![id.clone(), y_test[r].to_string()];
            rec.extend(report.test.iter().map(|t| t.predictions[r].to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(&dir, e))?;
        let models = dir.join("models");
        create_dir(&models)?;
        for m in &report.models {
            let m = m.clone().with_features(&x_train.standardization);
            write_text(&models.join(format!("{}.json", m.kind.name())), &(m.to_json()? + "\n"))?;
        }
    } else {
        info!("{property}: regression not suitable");
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Class labels with empty classes removed, and the surviving class names.
fn compact_classes(scheme: &ClassScheme, y: &[f64]) -> (Vec<usize>, Vec<String>) {
    let raw: Vec<usize> = y.iter().map(|&v| scheme.assign(v)).collect();
    let mut counts = vec![0usize; scheme.n_classes()];
    for &c in &raw {
        counts[c] += 1;
    }
    let mut remap = vec![usize::MAX; counts.len()];
    let mut names = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        if n == 0 {
            warn!("class '{}' has no samples and is dropped", scheme.class_name(c));
        } else {
            remap[c] = names.len();
            names.push(scheme.class_name(c).to_string());
        }
    }
    (raw.iter().map(|&c| remap[c]).collect(), names)
}

#[derive(Debug, Serialize)]
struct SweepRow<'a> {
    config: String,
    #[serde(flatten)]
    cv: &'a ClassificationCv,
}

#[derive(Debug, Serialize)]
struct GridSummary<'a> {
    property: Property,
    config: String,
    class_names: &'a [String],
    grid: &'a GridSpec,
    points: u64,
    stratified: bool,
    best_cost: &'a CostMatrix,
    best_mcc: f64,
    best_confusion: &'a ConfusionMatrix,
    uniform_mcc: Option<f64>,
}

fn write_confusion(path: &Path, names: &[String], cm: &ConfusionMatrix) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["true\\predicted".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (name, row) in names.iter().zip(&cm.counts) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|c| c.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn cmd_classify(cfg: &RunConfig, property: Property, grid: Option<&str>, coarse: bool) -> Result<()> {
    let ds = cfg.load_dataset()?;
    let (ds, y) = observed_subset(&ds, property)?;
    let scheme = cfg.scheme(property)?;
    let (labels, names) = compact_classes(&scheme, &y);
    let k = names.len();
    if k < 2 {
        return Err(Error::invalid(format!("{property} values fall in a single class")));
    }
    if cfg.std_mode == StandardizationMode::TrainOnly {
        warn!("classification cross-validates the whole dataset; using whole-dataset standardization");
    }
    let x = assemble_features(&ds, &cfg.blocks, StandardizationMode::WholeDataset, None)?;
    let mut train = cfg.train_options.clone();
    train.seed = cfg.seed;
    let uniform = CostMatrix::uniform(k);

    let (sweep, best) = sweep_classifiers(&cfg.classifiers, &uniform, &x.values, &labels, cfg.folds, cfg.seed, &train)?;
    let dir = cfg.out_dir().join(format!("classify_{}", property.name()));
    create_dir(&dir)?;
    let rows: Vec<SweepRow> = sweep
        .iter()
        .map(|cv| SweepRow {
            config: cv.config.name(),
            cv,
        })
        .collect();
    write_json(&dir.join("sweep.json"), &rows)?;
    let mut w = csv_writer(&dir.join("sweep.csv"))?;
    w.write_record(["config", "tpr", "tnr", "ppv", "npv", "f1", "acc", "mcc"])?;
    for cv in &sweep {
        let m = &cv.metrics;
        w.write_record([
            cv.config.name(),
            opt(m.macro_avg.tpr),
            opt(m.macro_avg.tnr),
            opt(m.macro_avg.ppv),
            opt(m.macro_avg.npv),
            opt(m.macro_avg.f1),
            m.accuracy.to_string(),
            m.mcc.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&dir, e))?;

    let config = sweep[best].config;
    info!("{property}: best configuration at uniform cost is {config}");
    let grid = match grid {
        Some(spec) => GridSpec::parse(k, spec)?,
        None if coarse => GridSpec::coarse(k),
        None => GridSpec::full(k),
    };
    info!("{property}: searching {} cost points", grid.cardinality());
    let opts = GridSearchOptions {
        folds: cfg.folds,
        seed: cfg.seed,
        jobs: cfg.jobs,
        checkpoint: Some(dir.join("grid_checkpoint.json")),
        checkpoint_every: cfg.checkpoint_every,
        train: train.clone(),
    };
    let result = cost_grid_search(&config, &x.values, &labels, &grid, &opts)?;
    let best_point = &result.points[result.best_index as usize];
    let uniform_vec = uniform.off_diagonal();
    let uniform_mcc = result.points.iter().find(|p| p.cost == uniform_vec).map(|p| p.mcc);
    write_json(
        &dir.join("grid_search.json"),
        &GridSummary {
            property,
            config: config.name(),
            class_names: &names,
            grid: &result.grid,
            points: result.points.len() as u64,
            stratified: result.stratified,
            best_cost: &result.best_cost,
            best_mcc: result.best_mcc,
            best_confusion: &best_point.confusion,
            uniform_mcc,
        },
    )?;
    result.write_surface_csv(&dir.join("grid_surface.csv"))?;
    write_confusion(&dir.join("confusion_uniform.csv"), &names, &sweep[best].confusion)?;
    write_confusion(&dir.join("confusion_best.csv"), &names, &best_point.confusion)?;

    let mut w = csv_writer(&dir.join("metrics_best.csv"))?;
    w.write_record(["class", "tpr", "tnr", "ppv", "npv", "f1"])?;
    let ms = best_point.confusion.metric_set();
    for (name, m) in names.iter().zip(&ms.per_class) {
        w.write_record([name.clone(), opt(m.tpr), opt(m.tnr), opt(m.ppv), opt(m.npv), opt(m.f1)])?;
    }
    w.write_record([
        "macro".to_string(),
        opt(ms.macro_avg.tpr),
        opt(ms.macro_avg.tnr),
        opt(ms.macro_avg.ppv),
        opt(ms.macro_avg.npv),
        opt(ms.macro_avg.f1),
    ])?;
    w.flush().map_err(|e| Error::io(&dir, e))?;

    let model = fit_classifier(&config, &result.best_cost, &x.values, &labels, &train)?;
    write_text(&dir.join("model.json"), &(model.to_json()? + "\n"))?;
    Ok(())
}

pub fn cmd_rank(cfg: &RunConfig, properties: &[Property]) -> Result<()> {
    use rayon::prelude::*;

    let ds = cfg.load_dataset()?;
    let properties: Vec<Property> = if properties.is_empty() {
        Property::ALL
            .iter()
            .copied()
            .filter(|&p| !ds.observed(p).0.is_empty())
            .collect()
    } else {
        properties.to_vec()
    };
    if properties.is_empty() {
        return Err(Error::invalid("no labelled properties to rank"));
    }
    let blocks: Vec<FeatureBlock> = cfg.blocks.iter().copied().filter(|b| b.is_derivative()).collect();
    if blocks.is_empty() {
        return Err(Error::invalid("ranking needs the d1 or d2 block"));
    }
    let lasso = LassoParams {
        seed: cfg.seed,
        folds: cfg.folds,
        ..LassoParams::default()
    };
    let rankings = properties
        .par_iter()
        .map(|&p| {
            let (sub, y) = observed_subset(&ds, p)?;
            let x = assemble_features(&sub, &blocks, StandardizationMode::WholeDataset, None)?;
            rank_features(p.name(), &x, &y, &lasso)
        })
        .collect::<Result<Vec<_>>>()?;
    let dir = cfg.out_dir().join("rank");
    create_dir(&dir)?;
    for r in &rankings {
        write_text(&dir.join(format!("ranking_{}.json", r.property)), &(r.to_json()? + "\n"))?;
    }
    let heat = ranking_heatmap(ds.grid(), &rankings)?;
    let path = dir.join("heatmap.csv");
    let mut f = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    heat.write_csv(&mut f)?;
    f.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Generates a dataset; `seed` overrides the spec's own seed.
pub fn cmd_synth(cfg: &RunConfig, spec_path: &Path, seed: Option<u64>) -> Result<()> {
    let text = fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let mut spec = SynthSpec::from_json(&text)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let ds = generate(&spec)?;
    let out = cfg.out_dir();
    create_dir(&out)?;
    save_dataset(&ds, &out.join("spectra.csv"), &out.join("labels.csv"))?;
    write_text(&out.join("synth_spec.json"), &(spec.to_json()? + "\n"))?;
    info!("wrote {} synthetic samples to {}", ds.len(), out.display());
    Ok(())
}
