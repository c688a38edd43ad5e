//! CSV ingestion: one long multivariate series cut into overlapping windows,
//! a chronological train/test split, and a bit-exact CSV round trip.
//!
//! cargo run --release --example csv_windows

use adev::data::{ingest_csv, read_dataset_csv, simulate_ar1, write_dataset_csv, Grid};
use std::io::Write;

fn main() -> adev::Result<()> {
    let dir = tempfile::tempdir()?;
    let series = dir.path().join("series.csv");
    let ar = simulate_ar1(0.9, 0.1, 2, 300, 1, 7, Grid::Integer)?;
    let path = &ar.samples()[0];
    let mut f = std::fs::File::create(&series)?;
    writeln!(f, "time_index,dim_0,dim_1")?;
    for i in 0..path.len() {
        let p = path.point(i);
        writeln!(f, "{i},{},{}", p[0], p[1])?;
    }
    drop(f);

    let w = ingest_csv(&series, 20, 5)?;
    let test = w.test().map(|t| t.len()).unwrap_or(0);
    println!("{} windows of length 20, {} train / {} test", w.windows.len(), w.n_train, test);

    let out = dir.path().join("train.csv");
    let train = w.train()?;
    write_dataset_csv(&train, &out)?;
    let back = read_dataset_csv(&out)?;
    println!("round trip exact: {}", back == train);
    Ok(())
}
