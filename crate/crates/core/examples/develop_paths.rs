//! Unitary developments of Brownian paths, their mean (the PCF) and the
//! empirical PCFD between BM and a rough fBM.
//!
//! cargo run --release --example develop_paths

use adev::data::simulate_fbm;
use adev::path::develop_all;
use adev::unitary::unitarity_defect;
use adev::{epcfd, pcf, sample_map_ensemble};

fn main() -> adev::Result<()> {
    let bm = simulate_fbm(0.5, 2, 20, 1000, 1)?.time_augment();
    let rough = simulate_fbm(0.3, 2, 20, 1000, 2)?.time_augment();
    let ens = sample_map_ensemble(bm.dim(), 4, 8, 0.5, 3)?;

    let m = &ens.maps()[0];
    let devs = develop_all(m, &bm)?;
    let worst = devs.iter().map(unitarity_defect).fold(0.0, f64::max);
    println!("max ‖U*U − I‖ over {} developments: {worst:.2e}", devs.len());
    println!("PCF of BM under the first map:\n{:.4}", pcf(m, &bm)?);

    let half = bm.subset(&(0..500).collect::<Vec<_>>())?;
    let other = bm.subset(&(500..1000).collect::<Vec<_>>())?;
    println!("EPCFD(BM, BM')       = {:.4}", epcfd(&ens, &half, &other)?);
    println!("EPCFD(BM, fBM 0.3)   = {:.4}", epcfd(&ens, &bm, &rough)?);
    println!("bound 2√n            = {:.4}", 2.0 * 2.0);
    Ok(())
}
