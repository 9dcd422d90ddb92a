//! Five-fold cross-validation of all 24 classifier configurations on a
//! three-class pH scheme.

use soilspec::classification::{ClassScheme, ClassifierConfig, CostMatrix, TrainOptions};
use soilspec::dataset::Property;
use soilspec::evaluation::sweep_classifiers;
use soilspec::preprocess::{assemble_features, FeatureBlock, StandardizationMode};
use soilspec::synthgen::{generate, SynthSpec};

fn main() -> soilspec::Result<()> {
    let ds = generate(&SynthSpec::demo(150, 5))?;
    let scheme = ClassScheme::default_for(Property::Ph);
    let (rows, y) = ds.observed(Property::Ph);
    let labels: Vec<usize> = y.iter().map(|&v| scheme.assign(v)).collect();
    let x = assemble_features(&ds.subset(&rows), &[FeatureBlock::D1, FeatureBlock::D2], StandardizationMode::WholeDataset, None)?;

    let configs = ClassifierConfig::all();
    let cost = CostMatrix::uniform(scheme.n_classes());
    let (results, best) = sweep_classifiers(&configs, &cost, &x.values, &labels, 5, 0, &TrainOptions::default())?;
    for r in &results {
        println!("{:<32} acc {:.3}  mcc {:.3}", r.config.name(), r.metrics.accuracy, r.metrics.mcc);
    }
    println!("best: {}", results[best].config.name());
    Ok(())
}
