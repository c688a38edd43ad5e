//! The two-path family `(1, 1 ± 1/n, 2 | 0)` converges weakly to `(1, 1, 2 | 0)`
//! but not in the adapted sense. Population PCFD of the time-augmented paths
//! shrinks like `1/n`, HRPCFD does not. (Without the time channel a scalar
//! development only sees the total increment and the PCFD is exactly 0.)
//!
//! cargo run --release --example aldous_separation

use adev::data::aldous_spec;
use adev::hrpcf::{hrpcf_weighted, sample_rank2_ensemble, CondDevSource, TimeChannel};
use adev::regression::FiniteProcessSpec;
use adev::unitary::{hs_distance_sq, sample_map_ensemble};
use adev::{develop, time_augment, CMat, MapEnsemble};
use num_complex::Complex64;

fn population_pcf(spec: &FiniteProcessSpec, m: &adev::DevMap) -> adev::Result<CMat> {
    let n = m.lie_dim();
    let mut out = CMat::zeros(n, n);
    for (p, w) in spec.paths().iter().zip(spec.probs()) {
        out += develop(m, p)?.into_matrix() * Complex64::new(*w, 0.0);
    }
    Ok(out)
}

fn augmented(n: Option<u32>) -> adev::Result<FiniteProcessSpec> {
    let s = aldous_spec(n)?;
    FiniteProcessSpec::new(s.paths().iter().map(time_augment).collect(), s.probs().to_vec())
}

fn main() -> adev::Result<()> {
    let ens: MapEnsemble = sample_map_ensemble(2, 3, 4, 1.0, 11)?;
    let ens2 = sample_rank2_ensemble(3, 5, 4, TimeChannel::Normalized, 1.0, 12)?;
    let limit = augmented(None)?;

    println!("{:>6} {:>12} {:>12}", "n", "PCFD", "HRPCFD");
    for n in [1u32, 2, 5, 10, 100, 1000] {
        let xn = augmented(Some(n))?;
        let (mut pcfd, mut hr) = (0.0, 0.0);
        for m in ens.maps() {
            pcfd += hs_distance_sq(&population_pcf(&xn, m)?, &population_pcf(&limit, m)?)?;
            let (cx, wx) = xn.cond_paths(m)?;
            let (cy, wy) = limit.cond_paths(m)?;
            for m2 in ens2.maps() {
                hr += hs_distance_sq(&hrpcf_weighted(m2, &cx, &wx)?, &hrpcf_weighted(m2, &cy, &wy)?)?;
            }
        }
        let pcfd = (pcfd / ens.len() as f64).sqrt();
        let hr = (hr / (ens.len() * ens2.len()) as f64).sqrt();
        println!("{n:>6} {pcfd:>12.6} {hr:>12.6}");
    }
    Ok(())
}
