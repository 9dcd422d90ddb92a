mod common;

use common::*;
use nalgebra::DMatrix;
use soilspec::dataset::{Property, SpectralDataset, WavelengthGrid};
use soilspec::preprocess::{
    assemble_features, ColumnStats, FeatureBlock, FeatureId, FeatureMatrix, Standardization, StandardizationMode,
};
use soilspec::ranking::*;
use soilspec::regression::LassoParams;
use soilspec::synthgen::{generate, SynthSpec};

fn derivative_features(ds: &SpectralDataset) -> FeatureMatrix {
    assemble_features(ds, &[FeatureBlock::D1, FeatureBlock::D2], StandardizationMode::WholeDataset, None).unwrap()
}

fn column(x: &FeatureMatrix, j: usize) -> Vec<f64> {
    x.values.column(j).iter().copied().collect()
}

#[test]
fn target_equal_to_a_column_ranks_it_first() {
    let ds = generate(&SynthSpec::demo(80, 1)).unwrap();
    let x = derivative_features(&ds);
    let j = 40;
    let y = column(&x, j);
    let r = rank_features("planted", &x, &y, &LassoParams::default()).unwrap();
    assert_eq!(r.entries[0].feature, x.columns()[j]);
    assert!((r.entries[0].corr_score - 1.0).abs() < 1e-12);
    assert_eq!(r.entries.len(), x.ncols());
    for e in &r.entries {
        assert!(e.feature.block.is_derivative());
        assert!((0.0..=4.0).contains(&e.total));
    }
}

#[test]
fn independent_noise_scores_stay_low() {
    let ds = generate(&SynthSpec::demo(200, 2)).unwrap();
    let x = derivative_features(&ds);
    let y = gaussian_vec(&mut rng(2), 200);
    let r = rank_features("noise", &x, &y, &LassoParams::default()).unwrap();
    let top = r.entries[0].total;
    assert!(top <= 2.5, "top total {top} for {:?}", r.entries[0]);
}

#[test]
fn duplicate_columns_share_filter_scores_but_not_lasso() {
    let grid = WavelengthGrid::canonical();
    let mut r = rng(3);
    let base = gaussian_matrix(&mut r, 100, 40);
    let j = 5;
    let values = DMatrix::from_fn(100, 41, |i, c| base[(i, if c == 40 { j } else { c })]);
    let mut columns: Vec<FeatureId> = (0..40).map(|c| FeatureId::new(FeatureBlock::D1, c, &grid)).collect();
    columns.push(columns[j].clone());
    let x = FeatureMatrix {
        values,
        sample_ids: (0..100).map(|i| format!("S{i}")).collect(),
        standardization: Standardization {
            mode: StandardizationMode::WholeDataset,
            columns,
            stats: vec![ColumnStats { mean: 0.0, std: 1.0 }; 41],
        },
    };
    let noise = gaussian_vec(&mut r, 100);
    let y: Vec<f64> = (0..100).map(|i| 2.0 * base[(i, j)] + 0.5 * base[(i, 12)] + 0.3 * noise[i]).collect();
    let ranking = rank_features("dup", &x, &y, &LassoParams::default()).unwrap();
    let copies: Vec<&RankingEntry> = ranking.entries.iter().filter(|e| e.feature == x.columns()[j]).collect();
    assert_eq!(copies.len(), 2);
    let (a, b) = (copies[0], copies[1]);
    assert_eq!(a.corr_score, b.corr_score);
    assert_eq!(a.f_score, b.f_score);
    assert_eq!(a.var_score, b.var_score);
    assert_ne!(a.lasso_score, b.lasso_score);
    assert_eq!(a.lasso_score.min(b.lasso_score), 0.0);
}

#[test]
fn positive_affine_target_rescaling_keeps_the_order() {
    let ds = generate(&SynthSpec::demo(90, 4)).unwrap();
    let x = derivative_features(&ds);
    let (rows, y) = ds.observed(Property::Om);
    assert_eq!(rows.len(), 90);
    let y2: Vec<f64> = y.iter().map(|v| 3.0 * v + 7.0).collect();
    let a = rank_features("om", &x, &y, &LassoParams::default()).unwrap();
    let b = rank_features("om", &x, &y2, &LassoParams::default()).unwrap();
    let order = |r: &FeatureRanking| r.entries.iter().map(|e| e.feature.clone()).collect::<Vec<_>>();
    assert_eq!(order(&a), order(&b));
    for (p, q) in a.entries.iter().zip(&b.entries) {
        assert!((p.corr_score - q.corr_score).abs() < 1e-9);
    }
}

#[test]
fn heatmap_has_one_row_per_band_and_one_column_per_property() {
    let ds = generate(&SynthSpec::demo(60, 5)).unwrap();
    let x = derivative_features(&ds);
    let rankings: Vec<FeatureRanking> = Property::ALL
        .iter()
        .map(|&p| {
            let (rows, y) = ds.observed(p);
            assert_eq!(rows.len(), 60);
            rank_features(p.name(), &x, &y, &LassoParams::default()).unwrap()
        })
        .collect();
    let heat = ranking_heatmap(ds.grid(), &rankings).unwrap();
    let mut buf = Vec::new();
    heat.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 248);
    assert!(lines.iter().all(|l| l.split(',').count() == 7));
    assert!(lines[0].starts_with("wavelength_nm,"));
}

#[test]
fn empty_rankings_give_an_all_zero_table() {
    let ds = generate(&SynthSpec::demo(10, 6)).unwrap();
    let empty = FeatureRanking {
        property: "none".into(),
        entries: Vec::new(),
    };
    let heat = ranking_heatmap(ds.grid(), &[empty]).unwrap();
    assert!(heat.scores.iter().flatten().all(|&v| v == 0.0));
}
