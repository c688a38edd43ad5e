//! One permutation test of BM against fBM(H) with a trained statistic.
//!
//! cargo run --release --example permutation_test [H] [pcfd|hrpcfd]

use adev::data::simulate_fbm;
use adev::regression::RegressionConfig;
use adev::stats::{fit_test_statistic, permutation_test, StatConfig, StatisticKind};
use adev::train::DiscConfig;

fn main() -> adev::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let h: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.3);
    let kind = match args.get(2).map(String::as_str) {
        Some("hrpcfd") => StatisticKind::Hrpcfd,
        _ => StatisticKind::Pcfd,
    };
    let disc = DiscConfig {
        m: 5,
        k2: 4,
        iter1: 1000,
        lr1: 0.05,
        iter3: 30,
        batch: 256,
        regression: RegressionConfig { hidden: vec![16], iterations: 200, ..Default::default() },
        seed: 5,
        ..Default::default()
    };
    // fit on one draw, test on another
    let stat = fit_test_statistic(&simulate_fbm(0.5, 3, 10, 2000, 1)?, &simulate_fbm(h, 3, 10, 2000, 2)?, &StatConfig { kind, disc })?;
    let x = simulate_fbm(0.5, 3, 10, 200, 3)?;
    let y = simulate_fbm(h, 3, 10, 200, 4)?;
    let report = permutation_test(&stat, &x, &y, 200, 0.05, 6)?;
    print!("{}", report.summary());
    Ok(())
}
