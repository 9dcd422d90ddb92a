//! Derivative and Fourier features for a single spectrum, then the full
//! standardized feature matrix for a dataset.

use soilspec::preprocess::{assemble_features, derivative1, derivative2, fft_magnitude, FeatureBlock, StandardizationMode};
use soilspec::synthgen::{generate, SynthSpec};

fn main() -> soilspec::Result<()> {
    let ds = generate(&SynthSpec::demo(50, 1))?;
    let step = ds.grid().step_nm;
    let spectrum = &ds.samples()[0].reflectance;
    let d1 = derivative1(spectrum, step)?;
    let d2 = derivative2(spectrum, step)?;
    let fft = fft_magnitude(spectrum)?;
    println!("reflectance[100] = {:.4}, d1 = {:.3e}, d2 = {:.3e}, |F_1| = {:.4}", spectrum[100], d1[100], d2[100], fft[1]);

    for mode in [StandardizationMode::WholeDataset, StandardizationMode::TrainOnly] {
        let fm = assemble_features(&ds, &FeatureBlock::ALL, mode, None)?;
        println!(
            "{mode:?}: {} x {} features, {} zero-variance columns",
            fm.nrows(),
            fm.ncols(),
            fm.zero_variance_columns().len()
        );
    }
    let d_only = assemble_features(&ds, &[FeatureBlock::D1, FeatureBlock::D2], StandardizationMode::WholeDataset, None)?;
    println!("first derivative columns: {:?}", &d_only.columns()[..3].iter().map(|c| c.column_name()).collect::<Vec<_>>());
    Ok(())
}
