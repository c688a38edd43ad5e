#![allow(dead_code)]

use adev::hrpcf::CondDevPath;
use adev::seed::rng_from_seed;
use adev::{CMat, Dataset, PiecewisePath};
use num_complex::Complex64;
use rand::Rng;

pub fn random_dataset(n: usize, len: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = rng_from_seed(seed);
    let paths = (0..n)
        .map(|_| {
            let rows: Vec<Vec<f64>> = (0..len).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            PiecewisePath::from_rows(&rows).unwrap()
        })
        .collect();
    Dataset::new(paths).unwrap()
}

pub fn random_cond_path(n: usize, len: usize, seed: u64) -> CondDevPath {
    let mut rng = rng_from_seed(seed);
    let steps = (0..len)
        .map(|_| CMat::from_fn(n, n, |_, _| Complex64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5))))
        .collect();
    CondDevPath::new(steps).unwrap()
}

/// Scaling and squaring with a Taylor series; independent of the library's spectral exponential.
pub fn expm_taylor(a: &CMat) -> CMat {
    let norm = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let b = a / Complex64::new(2f64.powi(s as i32), 0.0);
    let n = a.nrows();
    let mut term = CMat::identity(n, n);
    let mut sum = CMat::identity(n, n);
    for k in 1..30 {
        term = &term * &b / Complex64::new(k as f64, 0.0);
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// Binary-tree paths from 0 with ±1 steps, so samples share prefixes.
pub fn random_tree_dataset(n: usize, len: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = rng_from_seed(seed);
    let paths = (0..n)
        .map(|_| {
            let mut cur = vec![0.0; d];
            let mut rows = vec![cur.clone()];
            for _ in 1..len {
                for c in cur.iter_mut() {
                    *c += if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                }
                rows.push(cur.clone());
            }
            PiecewisePath::from_rows(&rows).unwrap()
        })
        .collect();
    Dataset::new(paths).unwrap()
}
