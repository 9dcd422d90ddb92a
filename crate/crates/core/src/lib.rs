//! Chemometrics toolkit for estimating soil chemical properties from
//! visible and near-infrared reflectance spectra.

pub mod classification;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod preprocess;
pub mod ranking;
pub mod regression;
pub mod smo;
pub mod stats;
pub mod synthgen;

pub use error::{Error, Result};
