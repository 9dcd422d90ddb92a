//! Cross-validated model selection among OLS, SVR and LASSO, then test-set
//! scores with bootstrap intervals against the LR-bf and PLSR baselines.

use soilspec::dataset::{split_indices, Property};
use soilspec::evaluation::{compare_regressors, CompareOptions, RegressionTask};
use soilspec::preprocess::{assemble_features, FeatureBlock, StandardizationMode};
use soilspec::synthgen::{generate, SynthSpec};

fn main() -> soilspec::Result<()> {
    let ds = generate(&SynthSpec::demo(200, 3))?;
    let x = assemble_features(&ds, &FeatureBlock::ALL, StandardizationMode::WholeDataset, None)?;
    let (train, test) = split_indices(ds.len(), 0.7, 0)?;
    let (_, y) = ds.observed(Property::Ph);
    let xtr = x.values.select_rows(train.iter());
    let xte = x.values.select_rows(test.iter());
    let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let yte: Vec<f64> = test.iter().map(|&i| y[i]).collect();

    let opts = CompareOptions {
        bootstrap_resamples: 200,
        ..Default::default()
    };
    let task = RegressionTask {
        x_train: &xtr,
        y_train: &ytr,
        x_test: &xte,
        y_test: &yte,
    };
    let report = compare_regressors(&task, &opts)?;
    for cv in &report.cv {
        println!("{:>6}: median CV rho {:.3}", cv.kind.name(), cv.rho.median.unwrap_or(f64::NAN));
    }
    match report.selected() {
        Some(kind) => println!("selected {}", kind.name()),
        None => println!("no candidate passed the gate"),
    }
    for t in &report.test {
        let rho = t.metrics.pearson_rho.unwrap_or(f64::NAN);
        let ci = t.intervals.rho.as_ref().map(|i| format!("[{:.3}, {:.3}]", i.lower, i.upper)).unwrap_or_default();
        println!("{:>6} ({:?}): test rho {rho:.3} {ci}, mse {:.4}", t.kind.name(), t.role, t.metrics.mse);
    }
    Ok(())
}
