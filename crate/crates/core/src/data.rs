//! Synthetic processes, CSV datasets and evaluation metrics.

use std::path::Path;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::write_atomic;
use crate::error::{arg_err, shape_err, AdevError, Result};
use crate::path::{Dataset, PiecewisePath};
use crate::regression::FiniteProcessSpec;
use crate::seed::{derive_seed, rng_from_seed};

/// Time grid of simulated paths with `T` steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grid {
    /// Times `i/T`; Gaussian increments scaled to that step size.
    #[default]
    UnitInterval,
    /// Times `i`; unit-variance increments.
    Integer,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FbmMethod {
    /// Durbin–Levinson recursion; falls back to Cholesky for `T ≤ 64` if it breaks down.
    #[default]
    Hosking,
    Cholesky,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessKind {
    Bm,
    Fbm { hurst: f64 },
    /// Two-path family `(1, 1 ± 1/n, 2 | 0)`; `n = None` is the limit `(1, 1, 2 | 0)`.
    Aldous { n: Option<u32> },
    Ar1 { phi: f64, sigma: f64 },
    #[serde(skip)]
    Finite(FiniteProcessSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    #[serde(flatten)]
    pub kind: ProcessKind,
    pub d: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default)]
    pub method: FbmMethod,
}

impl ProcessSpec {
    pub fn new(kind: ProcessKind, d: usize, t: usize) -> Self {
        ProcessSpec { kind, d, t, grid: Grid::default(), method: FbmMethod::default() }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            ProcessKind::Fbm { hurst } if !(*hurst > 0.0 && *hurst < 1.0) => {
                return arg_err(format!("Hurst parameter {hurst} outside (0, 1)"));
            }
            ProcessKind::Aldous { n: Some(0) } => return arg_err("Aldous family index must be at least 1"),
            ProcessKind::Ar1 { phi, sigma } if !phi.is_finite() || !(*sigma >= 0.0) => {
                return arg_err("AR(1) needs finite phi and sigma ≥ 0");
            }
            _ => {}
        }
        if self.d == 0 || self.t == 0 {
            return arg_err("d and T must be positive");
        }
        Ok(())
    }

    /// `N` sample paths.
    pub fn simulate(&self, n: usize, seed: u64) -> Result<Dataset> {
        self.validate()?;
        match &self.kind {
            ProcessKind::Bm => simulate_fbm_with(0.5, self.d, self.t, n, seed, self.grid, self.method),
            ProcessKind::Fbm { hurst } => simulate_fbm_with(*hurst, self.d, self.t, n, seed, self.grid, self.method),
            ProcessKind::Aldous { n: k } => Ok(aldous_family(*k, n, seed)?.0),
            ProcessKind::Ar1 { phi, sigma } => simulate_ar1(*phi, *sigma, self.d, self.t, n, seed, self.grid),
            ProcessKind::Finite(spec) => spec.sample(n, seed),
        }
    }
}

/// Autocovariance of unit-variance fractional Gaussian noise.
pub fn fgn_autocov(h: f64, k: usize) -> f64 {
    let k = k as f64;
    0.5 * ((k + 1.0).powf(2.0 * h) - 2.0 * k.powf(2.0 * h) + (k - 1.0).abs().powf(2.0 * h))
}

/// Durbin–Levinson coefficients: `phi[t]` predicts step `t` from steps `t-1, ..., 0`.
struct Hosking {
    phi: Vec<Vec<f64>>,
    sd: Vec<f64>,
}

impl Hosking {
    fn new(h: f64, steps: usize) -> Result<Self> {
        let gamma: Vec<f64> = (0..steps).map(|k| fgn_autocov(h, k)).collect();
        let mut phi = vec![Vec::new()];
        let mut v = gamma[0];
        let mut sd = vec![v.sqrt()];
        for t in 1..steps {
            let prev = &phi[t - 1];
            let num = gamma[t] - (1..t).map(|j| prev[j - 1] * gamma[t - j]).sum::<f64>();
            let ptt = num / v;
            let mut row: Vec<f64> = (1..t).map(|j| prev[j - 1] - ptt * prev[t - j - 1]).collect();
            row.push(ptt);
            v *= 1.0 - ptt * ptt;
            if !(v > 0.0) || !v.is_finite() {
                return Err(AdevError::Generation(format!("fGn conditional variance not positive at step {t}")));
            }
            sd.push(v.sqrt());
            phi.push(row);
        }
        Ok(Hosking { phi, sd })
    }

    fn sample(&self, z: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(z.len());
        for t in 0..z.len() {
            let mean: f64 = self.phi[t].iter().enumerate().map(|(j, p)| p * x[t - 1 - j]).sum();
            x.push(mean + self.sd[t] * z[t]);
        }
        x
    }
}

struct CholeskyFgn {
    l: DMatrix<f64>,
}

impl CholeskyFgn {
    fn new(h: f64, steps: usize) -> Result<Self> {
        let cov = DMatrix::from_fn(steps, steps, |i, j| fgn_autocov(h, i.abs_diff(j)));
        let chol = cov
            .cholesky()
            .ok_or_else(|| AdevError::Generation("fGn covariance matrix is not positive definite".into()))?;
        Ok(CholeskyFgn { l: chol.l() })
    }

    fn sample(&self, z: &[f64]) -> Vec<f64> {
        let zv = nalgebra::DVector::from_column_slice(z);
        (&self.l * zv).iter().copied().collect()
    }
}

enum FgnSampler {
    Hosking(Hosking),
    Cholesky(CholeskyFgn),
}

impl FgnSampler {
    fn new(h: f64, steps: usize, method: FbmMethod) -> Result<Self> {
        match method {
            FbmMethod::Cholesky => Ok(FgnSampler::Cholesky(CholeskyFgn::new(h, steps)?)),
            FbmMethod::Hosking => match Hosking::new(h, steps) {
                Ok(hk) => Ok(FgnSampler::Hosking(hk)),
                Err(_) if steps <= 64 => Ok(FgnSampler::Cholesky(CholeskyFgn::new(h, steps)?)),
                Err(e) => Err(e),
            },
        }
    }

    fn sample(&self, z: &[f64]) -> Vec<f64> {
        match self {
            FgnSampler::Hosking(s) => s.sample(z),
            FgnSampler::Cholesky(s) => s.sample(z),
        }
    }
}

fn grid_times(t: usize, grid: Grid) -> Vec<f64> {
    match grid {
        Grid::UnitInterval => (0..=t).map(|i| i as f64 / t as f64).collect(),
        Grid::Integer => (0..=t).map(|i| i as f64).collect(),
    }
}

/// `N` paths of `d` independent fBM coordinates with `T` steps, starting at 0.
pub fn simulate_fbm(h: f64, d: usize, t: usize, n: usize, seed: u64) -> Result<Dataset> {
    simulate_fbm_with(h, d, t, n, seed, Grid::UnitInterval, FbmMethod::Hosking)
}

pub fn simulate_fbm_with(h: f64, d: usize, t: usize, n: usize, seed: u64, grid: Grid, method: FbmMethod) -> Result<Dataset> {
    if !(h > 0.0 && h < 1.0) {
        return arg_err(format!("Hurst parameter {h} outside (0, 1)"));
    }
    if d == 0 || t == 0 || n == 0 {
        return arg_err("d, T and N must be positive");
    }
    let sampler = FgnSampler::new(h, t, method)?;
    let scale = match grid {
        Grid::UnitInterval => (1.0 / t as f64).powf(h),
        Grid::Integer => 1.0,
    };
    let times = grid_times(t, grid);
    let samples: Vec<PiecewisePath> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, i as u64));
            let mut values = vec![0.0; (t + 1) * d];
            for c in 0..d {
                let z: Vec<f64> = (0..t).map(|_| StandardNormal.sample(&mut rng)).collect();
                let inc = sampler.sample(&z);
                let mut acc = 0.0;
                for (k, dx) in inc.iter().enumerate() {
                    acc += scale * dx;
                    values[(k + 1) * d + c] = acc;
                }
            }
            PiecewisePath::new(times.clone(), values, d)
        })
        .collect::<Result<_>>()?;
    Dataset::new(samples)
}

/// `x_0 = 0`, `x_{t+1} = φ x_t + σ ε_t`, independent coordinates.
pub fn simulate_ar1(phi: f64, sigma: f64, d: usize, t: usize, n: usize, seed: u64, grid: Grid) -> Result<Dataset> {
    if d == 0 || t == 0 || n == 0 {
        return arg_err("d, T and N must be positive");
    }
    let times = grid_times(t, grid);
    let samples: Vec<PiecewisePath> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, i as u64));
            let mut values = vec![0.0; (t + 1) * d];
            for c in 0..d {
                let mut x = 0.0;
                for k in 1..=t {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    x = phi * x + sigma * e;
                    values[k * d + c] = x;
                }
            }
            PiecewisePath::new(times.clone(), values, d)
        })
        .collect::<Result<_>>()?;
    Dataset::new(samples)
}

/// Exact two-path law of the family member `n` (or of the limit).
pub fn aldous_spec(n_param: Option<u32>) -> Result<FiniteProcessSpec> {
    let mid = match n_param {
        Some(0) => return arg_err("Aldous family index must be at least 1"),
        Some(k) => 1.0 / k as f64,
        None => 0.0,
    };
    FiniteProcessSpec::new(
        vec![PiecewisePath::scalar(&[1.0, 1.0 + mid, 2.0])?, PiecewisePath::scalar(&[1.0, 1.0 - mid, 0.0])?],
        vec![0.5, 0.5],
    )
}

pub fn aldous_family(n_param: Option<u32>, n: usize, seed: u64) -> Result<(Dataset, FiniteProcessSpec)> {
    let spec = aldous_spec(n_param)?;
    Ok((spec.sample(n, seed)?, spec))
}

/// Windows cut from a CSV file, in window order.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvWindows {
    pub windows: Dataset,
    pub n_train: usize,
}

impl CsvWindows {
    pub fn train(&self) -> Result<Dataset> {
        self.windows.subset(&(0..self.n_train).collect::<Vec<_>>())
    }

    /// `None` when every window went to the training split.
    pub fn test(&self) -> Option<Dataset> {
        (self.n_train < self.windows.len())
            .then(|| self.windows.subset(&(self.n_train..self.windows.len()).collect::<Vec<_>>()).ok())
            .flatten()
    }
}

pub const TRAIN_FRACTION: f64 = 0.8;

fn parse_err<T>(row: usize, msg: impl Into<String>) -> Result<T> {
    Err(AdevError::Parse { row, msg: msg.into() })
}

/// Reads `sample_id,time_index,dim_0..` (or `time_index,dim_0..` for one long
/// series) and cuts windows of `window_len` rows advancing by `stride`.
/// Rows are numbered as file lines, the header being row 1.
pub fn ingest_csv(path: &Path, window_len: usize, stride: usize) -> Result<CsvWindows> {
    let file = std::fs::File::open(path)?;
    ingest_csv_reader(file, window_len, stride)
}

pub fn ingest_csv_reader(reader: impl std::io::Read, window_len: usize, stride: usize) -> Result<CsvWindows> {
    if window_len < 2 || stride == 0 {
        return arg_err("window length must be at least 2 and stride positive");
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| AdevError::Parse { row: 1, msg: e.to_string() })?.clone();
    let cols: Vec<&str> = headers.iter().map(|h| h.trim()).collect();
    let has_id = cols.first() == Some(&"sample_id");
    let off = if has_id { 1 } else { 0 };
    if cols.get(off) != Some(&"time_index") {
        return parse_err(1, "missing column `time_index`");
    }
    let d = cols.len() - off - 1;
    if d == 0 {
        return parse_err(1, "missing column `dim_0`");
    }
    for (c, name) in cols[off + 1..].iter().enumerate() {
        if *name != format!("dim_{c}") {
            return parse_err(1, format!("missing column `dim_{c}` (found `{name}`)"));
        }
    }
    // series in order of first appearance
    let mut series: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| AdevError::Parse { row, msg: e.to_string() })?;
        if rec.len() != cols.len() {
            return parse_err(row, format!("expected {} fields, found {}", cols.len(), rec.len()));
        }
        let id = if has_id { rec[0].trim().to_string() } else { String::new() };
        let num = |k: usize| -> Result<f64> {
            let s = rec[k].trim();
            let v: f64 = s.parse().map_err(|_| AdevError::Parse { row, msg: format!("non-numeric cell `{s}` in column `{}`", cols[k]) })?;
            if !v.is_finite() {
                return parse_err(row, format!("non-finite cell in column `{}`", cols[k]));
            }
            Ok(v)
        };
        let t = num(off)?;
        let vals = (off + 1..cols.len()).map(num).collect::<Result<Vec<_>>>()?;
        match series.last_mut() {
            Some((last_id, times, values)) if *last_id == id => {
                if t <= *times.last().unwrap() {
                    return parse_err(row, "time_index is not strictly increasing");
                }
                times.push(t);
                values.extend(vals);
            }
            _ => {
                if series.iter().any(|(s, _, _)| *s == id) {
                    return parse_err(row, format!("rows of sample_id `{id}` are not contiguous"));
                }
                series.push((id, vec![t], vals));
            }
        }
    }
    if series.is_empty() {
        return parse_err(2, "no data rows");
    }
    let times: Vec<f64> = (0..window_len).map(|i| i as f64).collect();
    let mut windows = Vec::new();
    for (_, ts, values) in &series {
        let mut start = 0;
        while start + window_len <= ts.len() {
            windows.push(PiecewisePath::new(times.clone(), values[start * d..(start + window_len) * d].to_vec(), d)?);
            start += stride;
        }
    }
    if windows.is_empty() {
        return arg_err(format!("no series has {window_len} rows"));
    }
    let total = windows.len();
    let n_train = ((total as f64 * TRAIN_FRACTION).floor() as usize).clamp(1, total);
    Ok(CsvWindows { windows: Dataset::new(windows)?, n_train })
}

/// Serializes in the `sample_id,time_index,dim_*` schema (shortest round-trip floats).
pub fn dataset_to_csv(data: &Dataset) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["sample_id".to_string(), "time_index".to_string()];
    header.extend((0..data.dim()).map(|c| format!("dim_{c}")));
    w.write_record(&header).map_err(|e| AdevError::Io(e.into()))?;
    for (i, s) in data.samples().iter().enumerate() {
        for (k, t) in s.times().iter().enumerate() {
            let mut rec = vec![i.to_string(), t.to_string()];
            rec.extend(s.point(k).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| AdevError::Io(e.into()))?;
        }
    }
    w.into_inner().map_err(|e| AdevError::Io(e.into_error()))
}

pub fn write_dataset_csv(data: &Dataset, path: &Path) -> Result<()> {
    write_atomic(path, &dataset_to_csv(data)?)
}

/// Reads a dataset written by [`write_dataset_csv`] (one window per sample).
pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    let mut rdr = csv::Reader::from_reader(&bytes[..]);
    let mut rows = 0usize;
    let mut first_id = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| AdevError::Parse { row: rows + 2, msg: e.to_string() })?;
        match &first_id {
            None => first_id = Some(rec.get(0).unwrap_or_default().to_string()),
            Some(id) if rec.get(0) != Some(id.as_str()) => break,
            _ => {}
        }
        rows += 1;
    }
    let w = ingest_csv_reader(&bytes[..], rows.max(2), rows.max(1))?;
    Ok(w.windows)
}

/// Real futures and Monte Carlo draws of generated futures over shared pasts.
#[derive(Clone, Debug, PartialEq)]
pub struct CondPairs {
    /// Flattened real future per conditioning past.
    pub real_future: Vec<Vec<f64>>,
    /// Flattened generated futures, several draws per past.
    pub fake_draws: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub acf_score: f64,
    pub cross_corr_score: f64,
    /// Absent when no conditional pairs were supplied.
    pub cond_exp_score: Option<f64>,
    pub onnd: f64,
}

/// `Ĉ(τ)` for every dimension `i` and lag `τ = 1..L-1`, with global mean and variance per dimension.
pub fn acf(data: &Dataset) -> Vec<Vec<f64>> {
    let d = data.dim();
    let l = data.path_len();
    (0..d)
        .map(|c| {
            let vals: Vec<&[f64]> = data.samples().iter().map(|s| s.values()).collect();
            let count = (data.len() * l) as f64;
            let mean = vals.iter().flat_map(|v| (0..l).map(move |t| v[t * d + c])).sum::<f64>() / count;
            let var = vals.iter().flat_map(|v| (0..l).map(move |t| (v[t * d + c] - mean).powi(2))).sum::<f64>() / count;
            (1..l)
                .map(|tau| {
                    if var <= 0.0 {
                        return 0.0;
                    }
                    let s: f64 = vals
                        .iter()
                        .map(|v| (0..l - tau).map(|t| (v[t * d + c] - mean) * (v[(t + tau) * d + c] - mean)).sum::<f64>())
                        .sum();
                    s / ((data.len() * (l - tau)) as f64 * var)
                })
                .collect()
        })
        .collect()
}

/// Correlation of every pair of coordinates `(t, i)`, `(s, j)` across samples; `None` for constant coordinates.
fn coordinate_correlations(data: &Dataset) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let d = data.dim();
    let k = data.path_len() * d;
    let n = data.len() as f64;
    let mut mean = vec![0.0; k];
    for s in data.samples() {
        for (m, v) in mean.iter_mut().zip(s.values()) {
            *m += v / n;
        }
    }
    let mut cov = vec![0.0; k * k];
    for s in data.samples() {
        let c: Vec<f64> = s.values().iter().zip(&mean).map(|(v, m)| v - m).collect();
        for a in 0..k {
            for b in a..k {
                cov[a * k + b] += c[a] * c[b] / n;
            }
        }
    }
    let sd: Vec<f64> = (0..k).map(|a| cov[a * k + a].sqrt()).collect();
    let ok: Vec<bool> = sd.iter().map(|s| *s > 1e-12).collect();
    let mut corr = vec![0.0; k * k];
    for a in 0..k {
        for b in a..k {
            if ok[a] && ok[b] {
                corr[a * k + b] = cov[a * k + b] / (sd[a] * sd[b]);
                corr[b * k + a] = corr[a * k + b];
            }
        }
    }
    (corr, sd, ok)
}

pub fn eval_metrics(real: &Dataset, fake: &Dataset, cond: Option<&CondPairs>) -> Result<MetricReport> {
    if real.dim() != fake.dim() || real.path_len() != fake.path_len() {
        return shape_err("real and generated data must share dimension and length");
    }
    let (ar, af) = (acf(real), acf(fake));
    let acf_score = ar.iter().zip(&af).flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs())).sum();

    let (cr, _, okr) = coordinate_correlations(real);
    let (cf, _, okf) = coordinate_correlations(fake);
    let k = okr.len();
    let mut cross_corr_score = 0.0;
    for a in 0..k {
        for b in 0..k {
            if okr[a] && okr[b] && okf[a] && okf[b] {
                cross_corr_score += (cr[a * k + b] - cf[a * k + b]).abs();
            }
        }
    }

    let cond_exp_score = match cond {
        None => None,
        Some(c) => {
            if c.real_future.len() != c.fake_draws.len() || c.real_future.is_empty() {
                return shape_err("conditional pairs must be non-empty and aligned");
            }
            let mut total = 0.0;
            for (real, draws) in c.real_future.iter().zip(&c.fake_draws) {
                if draws.is_empty() || draws.iter().any(|f| f.len() != real.len()) {
                    return shape_err("generated futures must match the real future length");
                }
                let mut mean = vec![0.0; real.len()];
                for f in draws {
                    for (m, v) in mean.iter_mut().zip(f) {
                        *m += v / draws.len() as f64;
                    }
                }
                total += mean.iter().zip(real).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            }
            Some(total / c.real_future.len() as f64)
        }
    };

    let dists: Vec<f64> = real
        .samples()
        .par_iter()
        .map(|r| {
            fake.samples()
                .iter()
                .map(|f| r.values().iter().zip(f.values()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let onnd = dists.iter().sum::<f64>() / dists.len() as f64;
    Ok(MetricReport { acf_score, cross_corr_score, cond_exp_score, onnd })
}
