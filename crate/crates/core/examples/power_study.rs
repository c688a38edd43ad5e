//! BM against fBM: train a test statistic per run and estimate power and the
//! matched-null Type-I error with a permutation test.
//!
//! cargo run --release --example power_study -- [H] [runs] [hrpcfd|pcfd] [n_train] [DiscConfig JSON]
//!
//! Defaults are the desk settings of the acceptance run: about four minutes per run on one core.

use std::time::Instant;

use adev::data::{ProcessKind, ProcessSpec};
use adev::regression::RegressionConfig;
use adev::stats::{power_study, PowerConfig, Side, StatConfig, StatisticKind};
use adev::train::DiscConfig;

fn main() -> adev::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let hurst: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.4);
    let runs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let kind = match args.get(3).map(String::as_str) {
        Some("pcfd") => StatisticKind::Pcfd,
        _ => StatisticKind::Hrpcfd,
    };
    let n_train: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(8000);
    // m = 13 had no power at this scale; stage 1 needs the long run
    let disc: DiscConfig = match args.get(5) {
        Some(j) => serde_json::from_str(j).expect("invalid DiscConfig JSON"),
        None => DiscConfig {
            m: 5,
            iter1: 3000,
            lr1: 0.05,
            iter3: 60,
            batch: 256,
            regression: RegressionConfig { iterations: 500, ..Default::default() },
            ..Default::default()
        },
    };
    let bm = ProcessSpec::new(ProcessKind::Bm, 3, 10);
    let fbm = ProcessSpec::new(ProcessKind::Fbm { hurst }, 3, 10);
    let cfg = PowerConfig { n_runs: runs, n_train, null_side: Side::X, stat: StatConfig { kind, disc }, seed: 1, ..Default::default() };
    let start = Instant::now();
    let rep = power_study(&bm, &fbm, &cfg)?;
    print!("{}", rep.summary());
    println!("H = {hurst}: {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}
