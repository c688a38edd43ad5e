//! Fits the conditional development regression on samples of a finite
//! process and compares it with the exact conditional expectation.
//!
//! cargo run --release --example train_regression

use adev::data::{aldous_family, simulate_ar1, Grid};
use adev::regression::{mean_cond_path_error, oracle_for_samples, predict_cond_dev, rloss, train_regression, RegressionConfig};
use adev::sample_map_ensemble;

fn main() -> adev::Result<()> {
    let (data, spec) = aldous_family(Some(4), 2000, 1)?;
    let m = sample_map_ensemble(1, 3, 1, 1.0, 2)?.maps()[0].clone();
    let cfg = RegressionConfig { hidden: vec![16], iterations: 1500, lr: 3e-3, patience: 200, ..Default::default() };
    let (model, curve) = train_regression(&data, &m, &cfg)?;
    println!("best validation RLoss {:.5} at iteration {}", curve.best_val, curve.best_iter);

    let pred = predict_cond_dev(&model, &data, &m)?;
    let exact = oracle_for_samples(&spec, &m, &data)?;
    println!("mean HS error against the oracle: {:.4}", mean_cond_path_error(&pred, &exact)?);

    // a continuous example: no oracle, only the loss
    let ar = simulate_ar1(0.8, 0.3, 2, 10, 1000, 3, Grid::Integer)?;
    let m2 = sample_map_ensemble(2, 3, 1, 0.5, 4)?.maps()[0].clone();
    let (model, curve) = train_regression(&ar, &m2, &RegressionConfig { iterations: 300, ..Default::default() })?;
    println!("AR(1): RLoss {:.4} (best val {:.4})", rloss(&model, &ar, &m2)?, curve.best_val);
    Ok(())
}
