mod common;

use common::*;
use soilspec::classification::ClassScheme;
use soilspec::dataset::{split_indices, write_labels, write_spectra, Property};
use soilspec::evaluation::regression_metrics;
use soilspec::preprocess::{assemble_features, FeatureBlock, StandardizationMode};
use soilspec::regression::fit_lr_best_feature;
use soilspec::synthgen::{generate, Noise};

#[test]
fn imbalance_rule_hits_exact_class_counts() {
    let spec = imbalanced_spec(645, 8, 31);
    let ds = generate(&spec).unwrap();
    assert_eq!(ds.len(), 653);
    let scheme = ClassScheme::new(Some(Property::Na), vec![0.95], vec!["low".into(), "high".into()]).unwrap();
    let mut counts = [0usize; 2];
    for v in ds.target(Property::Na) {
        counts[scheme.assign(v.unwrap())] += 1;
    }
    assert_eq!(counts, [645, 8]);
}

#[test]
fn generated_csv_is_byte_identical_for_a_seed() {
    let render = |seed| {
        let ds = generate(&pipeline_spec(40, seed)).unwrap();
        let (mut s, mut l) = (Vec::new(), Vec::new());
        write_spectra(&ds, &mut s).unwrap();
        write_labels(&ds, &mut l).unwrap();
        (s, l)
    };
    assert_eq!(render(8), render(8));
    assert_ne!(render(8).0, render(9).0);
}

#[test]
fn noiseless_single_band_gives_perfect_lr_bf() {
    let mut spec = pipeline_spec(120, 32);
    spec.properties[0].weights = vec![10.0, 0.0];
    spec.properties[0].noise = Noise::Absolute(0.0);
    let ds = generate(&spec).unwrap();
    let (train, test) = split_indices(ds.len(), 0.7, 0).unwrap();
    let blocks = FeatureBlock::ALL;
    let xtr = assemble_features(&ds.subset(&train), &blocks, StandardizationMode::TrainOnly, None).unwrap();
    let xte = assemble_features(&ds.subset(&test), &blocks, StandardizationMode::TrainOnly, Some(&xtr.standardization)).unwrap();
    let (_, y) = ds.observed(Property::Ph);
    let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let yte: Vec<f64> = test.iter().map(|&i| y[i]).collect();
    let model = fit_lr_best_feature(&xtr.values, &ytr).unwrap();
    let pred = model.predict(&xte.values).unwrap();
    let rho = regression_metrics(&yte, &pred).unwrap().pearson_rho.unwrap();
    assert!((rho - 1.0).abs() < 1e-6, "rho {rho}");
}
