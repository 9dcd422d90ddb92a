//! Generate a synthetic spectral dataset, write it as CSV and load it back.
//! The spec is saved next to the data for use with `soilspec synth`.

use soilspec::dataset::{load_dataset, save_dataset, Property};
use soilspec::synthgen::{generate, SynthSpec};

fn main() -> soilspec::Result<()> {
    let spec = SynthSpec::demo(120, 7);
    let ds = generate(&spec)?;
    let dir = std::env::temp_dir().join("soilspec-example-synth");
    std::fs::create_dir_all(&dir).map_err(|e| soilspec::Error::io(&dir, e))?;
    let (spectra, labels) = (dir.join("spectra.csv"), dir.join("labels.csv"));
    save_dataset(&ds, &spectra, &labels)?;
    let spec_path = dir.join("synth_spec.json");
    std::fs::write(&spec_path, spec.to_json()? + "\n").map_err(|e| soilspec::Error::io(&spec_path, e))?;

    let back = load_dataset(&spectra, &labels)?;
    println!("{} samples on {} bands ({} to {} nm)", back.len(), back.grid().count, back.grid().start_nm, back.grid().end_nm());
    for p in Property::ALL {
        let (_, y) = back.observed(p);
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        println!("{:>3}: {} values, mean {mean:.3}", p.name(), y.len());
    }
    println!("written to {}", dir.display());
    Ok(())
}
