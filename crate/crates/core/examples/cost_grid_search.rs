//! Search misclassification costs for an imbalanced two-class problem and
//! compare the best cost matrix with uniform costs.

use soilspec::classification::{ClassScheme, ClassifierConfig, DiscriminantKind};
use soilspec::dataset::Property;
use soilspec::evaluation::{cost_grid_search, GridSearchOptions, GridSpec};
use soilspec::preprocess::{assemble_features, FeatureBlock, StandardizationMode};
use soilspec::synthgen::{generate, SynthSpec};

fn main() -> soilspec::Result<()> {
    let ds = generate(&SynthSpec::demo(200, 11))?;
    let scheme = ClassScheme::default_for(Property::Na);
    let (rows, y) = ds.observed(Property::Na);
    let labels: Vec<usize> = y.iter().map(|&v| scheme.assign(v)).collect();
    let counts: Vec<usize> = (0..2).map(|c| labels.iter().filter(|&&l| l == c).count()).collect();
    println!("class counts {counts:?}");
    let x = assemble_features(&ds.subset(&rows), &[FeatureBlock::D1, FeatureBlock::D2], StandardizationMode::WholeDataset, None)?;

    let config = ClassifierConfig::Discriminant {
        kind: DiscriminantKind::Linear,
    };
    let grid = GridSpec::parse(2, "1..25")?;
    let res = cost_grid_search(&config, &x.values, &labels, &grid, &GridSearchOptions::default())?;
    println!("{} grid points", res.points.len());
    println!("uniform cost MCC {:.3}", res.points[0].mcc);
    println!("best cost {:?} MCC {:.3}", res.best_cost.off_diagonal(), res.best_mcc);
    Ok(())
}
