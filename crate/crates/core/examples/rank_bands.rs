//! Composite ranking of derivative bands for every property, summarized as a
//! wavelength by property heatmap.

use soilspec::dataset::Property;
use soilspec::preprocess::{assemble_features, FeatureBlock, StandardizationMode};
use soilspec::ranking::{rank_features, ranking_heatmap};
use soilspec::regression::LassoParams;
use soilspec::synthgen::{generate, SynthSpec};

fn main() -> soilspec::Result<()> {
    let ds = generate(&SynthSpec::demo(120, 2))?;
    let x = assemble_features(&ds, &[FeatureBlock::D1, FeatureBlock::D2], StandardizationMode::WholeDataset, None)?;
    let mut rankings = Vec::new();
    for p in Property::ALL {
        let (_, y) = ds.observed(p);
        let r = rank_features(p.name(), &x, &y, &LassoParams::default())?;
        let top: Vec<String> = r.top(3).iter().map(|e| format!("{} ({:.2})", e.feature.column_name(), e.total)).collect();
        println!("{:>3}: {}", p.name(), top.join(", "));
        rankings.push(r);
    }
    let heat = ranking_heatmap(ds.grid(), &rankings)?;
    let mut csv = Vec::new();
    heat.write_csv(&mut csv)?;
    println!("heatmap: {} bands x {} properties, {} bytes of CSV", heat.wavelengths.len(), heat.properties.len(), csv.len());
    Ok(())
}
