//! A toy conditional generator for an AR(1) series, trained first against
//! PCFD and then against HRPCFD, evaluated on held-out windows.
//!
//! cargo run --release --example hrpcf_gan

use adev::data::{simulate_ar1, Grid};
use adev::generator::{evaluate_generator, train_hrpcf_gan, GanConfig};
use adev::regression::RegressionConfig;

fn main() -> adev::Result<()> {
    let data = simulate_ar1(0.8, 0.5, 1, 10, 1200, 1, Grid::Integer)?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let (train, held) = (data.subset(&idx[..1000])?, data.subset(&idx[1000..])?);
    let cfg = GanConfig {
        p: 3,
        n: 3,
        m: 5,
        k1: 2,
        k2: 3,
        iters_a: 300,
        iters_c: 150,
        iter_r: 75,
        lr_g: 2e-3,
        regression: RegressionConfig { hidden: vec![16], iterations: 300, ..Default::default() },
        finetune: RegressionConfig { hidden: vec![16], iterations: 50, patience: 50, ..Default::default() },
        seed: 2,
        ..Default::default()
    };
    let t0 = std::time::Instant::now();
    let out = train_hrpcf_gan(&train, &cfg)?;
    println!("trained in {:.1}s", t0.elapsed().as_secs_f64());
    println!("PCF phase:    {:?}", evaluate_generator(&out.phase_a_model, &held, 20, 9)?);
    println!("HRPCF phase:  {:?}", evaluate_generator(&out.model, &held, 20, 9)?);
    Ok(())
}
