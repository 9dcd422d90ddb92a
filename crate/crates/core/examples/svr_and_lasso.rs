//! Individual regressors on a small problem: the LASSO path, a linear SVR and
//! PLS regression.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use soilspec::regression::{fit_lasso, fit_lasso_cv, fit_plsr, fit_svr_linear, lambda_max, LassoParams, PlsParams, SvrParams};

fn main() -> soilspec::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = DMatrix::from_fn(80, 10, |_, _| rng.random_range(-1.0..1.0));
    let y: Vec<f64> = (0..80).map(|i| 3.0 * x[(i, 2)] - x[(i, 7)] + 0.05 * rng.random_range(-1.0..1.0)).collect();

    let means: Vec<f64> = x.column_iter().map(|c| c.mean()).collect();
    let xc = DMatrix::from_fn(80, 10, |i, j| x[(i, j)] - means[j]);
    let ym = y.iter().sum::<f64>() / 80.0;
    let yc: Vec<f64> = y.iter().map(|v| v - ym).collect();
    let lmax = lambda_max(&xc, &yc);
    for frac in [1.0, 0.5, 0.1, 0.01] {
        let m = fit_lasso(&x, &y, frac * lmax, 1e-10, 100_000)?;
        let nz = m.coefficients.iter().filter(|&&b| b != 0.0).count();
        println!("lambda = {:.4}: {nz} nonzero", frac * lmax);
    }
    let cv = fit_lasso_cv(&x, &y, &LassoParams::default())?;
    println!("CV LASSO: beta_2 {:.3}, beta_7 {:.3}", cv.coefficients[2], cv.coefficients[7]);

    let svr = fit_svr_linear(&x, &y, &SvrParams::default())?;
    println!("SVR: beta_2 {:.3}, beta_7 {:.3}", svr.coefficients[2], svr.coefficients[7]);

    let pls = fit_plsr(&x, &y, &PlsParams { n_components: 2, ..Default::default() })?;
    println!("PLSR(2): beta_2 {:.3}, beta_7 {:.3}", pls.coefficients[2], pls.coefficients[7]);
    Ok(())
}
