//! fBM sampling and the evaluation metrics: autocorrelation, cross
//! correlation and nearest-neighbour distance between two sample sets.
//!
//! cargo run --release --example fbm_metrics

use adev::data::{acf, eval_metrics, fgn_autocov, simulate_fbm_with, FbmMethod, Grid};

fn main() -> adev::Result<()> {
    for h in [0.25, 0.5, 0.75] {
        let x = simulate_fbm_with(h, 1, 50, 4000, 1, Grid::Integer, FbmMethod::Hosking)?;
        let inc: Vec<f64> = x.samples().iter().flat_map(|s| s.increments()).collect();
        let lag1 = inc.chunks(50).map(|c| c.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / 49.0).sum::<f64>() / 4000.0;
        println!("H {h:.2}: lag-1 increment covariance {lag1:+.4} (exact {:+.4})", fgn_autocov(h, 1));
    }

    let a = simulate_fbm_with(0.5, 2, 20, 500, 2, Grid::UnitInterval, FbmMethod::Hosking)?;
    let b = simulate_fbm_with(0.5, 2, 20, 500, 3, Grid::UnitInterval, FbmMethod::Cholesky)?;
    let c = simulate_fbm_with(0.8, 2, 20, 500, 4, Grid::UnitInterval, FbmMethod::Hosking)?;
    println!("path ACF of BM, dim 0, first lags: {:.3?}", &acf(&a)[0][..4]);
    println!("BM vs BM:      {:?}", eval_metrics(&a, &b, None)?);
    println!("BM vs fBM 0.8: {:?}", eval_metrics(&a, &c, None)?);
    Ok(())
}
