//! Rank-2 developments of conditional development paths, the HRPCF, its
//! empirical distance, the truncated metric series and the associated kernel.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, AdevError, Result};
use crate::path::{develop_increments_raw, mean_matrix, tape_increments, DevMap, DevTape, MapEnsemble};
use crate::seed::derive_seed;
use crate::unitary::{hs_distance_sq, hs_inner, sample_map_ensemble, AntiHermitian, CMat, UnitaryMatrix};

/// How the matrix-valued path is time-augmented before the rank-2 development.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeChannel {
    None,
    /// Extra channel `t / T`.
    #[default]
    Normalized,
    /// Extra channel `t` (integer step index).
    Raw,
}

impl TimeChannel {
    pub fn channels(self) -> usize {
        match self {
            TimeChannel::None => 0,
            _ => 1,
        }
    }

    fn increment(self, steps: usize) -> f64 {
        match self {
            TimeChannel::None => 0.0,
            TimeChannel::Normalized => 1.0 / steps as f64,
            TimeChannel::Raw => 1.0,
        }
    }
}

/// Estimated conditional development path `t ↦ Φ_{X̂_t}(M)`, `t = 0..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct CondDevPath {
    steps: Vec<CMat>,
}

impl CondDevPath {
    pub fn new(steps: Vec<CMat>) -> Result<Self> {
        let Some(first) = steps.first() else {
            return arg_err("conditional development path is empty");
        };
        let n = first.nrows();
        if steps.len() < 2 {
            return arg_err("conditional development path needs at least 2 steps");
        }
        if steps.iter().any(|s| s.nrows() != n || s.ncols() != n) {
            return shape_err("conditional development path steps must be n×n");
        }
        if steps.iter().flat_map(|s| s.iter()).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(AdevError::NumericInput("conditional development path has non-finite entries".into()));
        }
        Ok(CondDevPath { steps })
    }

    pub fn steps(&self) -> &[CMat] {
        &self.steps
    }

    pub fn n(&self) -> usize {
        self.steps[0].nrows()
    }

    /// Number of increments `T`.
    pub fn horizon(&self) -> usize {
        self.steps.len() - 1
    }

    /// Largest `‖P_t‖_HS`; conditional expectations of unitaries stay below `√n`.
    pub fn max_hs_norm(&self) -> f64 {
        self.steps.iter().map(|s| s.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }
}

/// A real-linear map `ℂ^{n×n} → 𝔲(m)`, optionally preceded by a time channel.
///
/// Input coordinates: time channel (if any), then `(Re, Im)` of every entry in
/// row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct DevMap2 {
    n: usize,
    time: TimeChannel,
    map: DevMap,
}

impl DevMap2 {
    pub fn new(n: usize, time: TimeChannel, generators: Vec<AntiHermitian>) -> Result<Self> {
        if generators.len() != Self::input_dim(n, time) {
            return shape_err(format!(
                "rank-2 map on C^{{{n}x{n}}} needs {} generators, got {}",
                Self::input_dim(n, time),
                generators.len()
            ));
        }
        Ok(DevMap2 { n, time, map: DevMap::new(generators)? })
    }

    pub fn from_map(n: usize, time: TimeChannel, map: DevMap) -> Result<Self> {
        if map.d_in() != Self::input_dim(n, time) {
            return shape_err("underlying map has the wrong input dimension");
        }
        Ok(DevMap2 { n, time, map })
    }

    pub fn input_dim(n: usize, time: TimeChannel) -> usize {
        2 * n * n + time.channels()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lie_dim(&self) -> usize {
        self.map.lie_dim()
    }

    pub fn time_channel(&self) -> TimeChannel {
        self.time
    }

    /// The underlying map on the realified input.
    pub fn as_map(&self) -> &DevMap {
        &self.map
    }

    pub fn as_map_mut(&mut self) -> &mut DevMap {
        &mut self.map
    }

    /// Row-major `T × input_dim` increments of the realified path.
    pub fn realify_increments(&self, path: &CondDevPath) -> Result<Vec<f64>> {
        if path.n() != self.n {
            return shape_err(format!("rank-2 map expects {0}x{0} inputs, path has {1}x{1}", self.n, path.n()));
        }
        let t_len = path.horizon();
        let dt = self.time.increment(t_len);
        let dim = Self::input_dim(self.n, self.time);
        let mut out = Vec::with_capacity(t_len * dim);
        for w in path.steps.windows(2) {
            if self.time != TimeChannel::None {
                out.push(dt);
            }
            for j in 0..self.n {
                for k in 0..self.n {
                    let dz = w[1][(j, k)] - w[0][(j, k)];
                    out.push(dz.re);
                    out.push(dz.im);
                }
            }
        }
        Ok(out)
    }

    /// Splits per-coordinate increment gradients into `∂L/∂P_t` for
    /// `t = 0..=T`, as complex matrices `G` with `dL = Re⟨G, dP⟩`.
    pub fn path_gradient(&self, inc_grads: &[f64]) -> Vec<CMat> {
        let dim = Self::input_dim(self.n, self.time);
        let off = self.time.channels();
        let t_len = inc_grads.len() / dim;
        let n = self.n;
        let mut out = vec![CMat::zeros(n, n); t_len + 1];
        for (t, g) in inc_grads.chunks(dim).enumerate() {
            for j in 0..n {
                for k in 0..n {
                    let idx = off + 2 * (j * n + k);
                    let z = Complex64::new(g[idx], g[idx + 1]);
                    out[t + 1][(j, k)] += z;
                    out[t][(j, k)] -= z;
                }
            }
        }
        out
    }
}

/// A rank-1 map together with a rank-2 map on its output space.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmissiblePair {
    pub m: DevMap,
    pub m2: DevMap2,
}

impl AdmissiblePair {
    pub fn new(m: DevMap, m2: DevMap2) -> Result<Self> {
        if m.lie_dim() != m2.n() {
            return shape_err(format!("rank-1 map lands in u({}), rank-2 map expects C^{{{}x{}}}", m.lie_dim(), m2.n(), m2.n()));
        }
        Ok(AdmissiblePair { m, m2 })
    }
}

pub(crate) fn develop_rank2_raw(m2: &DevMap2, path: &CondDevPath) -> Result<CMat> {
    develop_increments_raw(&m2.map, &m2.realify_increments(path)?)
}

pub(crate) fn tape_rank2(m2: &DevMap2, path: &CondDevPath) -> Result<DevTape> {
    tape_increments(&m2.map, &m2.realify_increments(path)?)
}

/// `𝒰_𝓜(t ↦ P_t) = Π_t exp(𝓜(ΔP_t))`.
pub fn develop_rank2(m2: &DevMap2, path: &CondDevPath) -> Result<UnitaryMatrix> {
    UnitaryMatrix::new(develop_rank2_raw(m2, path)?)
}

/// Rank-2 developments of every path, in order.
pub fn develop_rank2_all(m2: &DevMap2, paths: &[CondDevPath]) -> Result<Vec<CMat>> {
    paths.par_iter().map(|p| develop_rank2_raw(m2, p)).collect()
}

pub fn hrpcf_with(m2: &DevMap2, paths: &[CondDevPath]) -> Result<CMat> {
    if paths.is_empty() {
        return arg_err("HRPCF of an empty sample");
    }
    Ok(mean_matrix(&develop_rank2_all(m2, paths)?, m2.lie_dim()))
}

/// Empirical HRPCF: the mean rank-2 development of the conditional paths.
pub fn hrpcf(pair: &AdmissiblePair, paths: &[CondDevPath]) -> Result<CMat> {
    if let Some(p) = paths.iter().find(|p| p.n() != pair.m.lie_dim()) {
        return shape_err(format!("conditional path is {0}x{0}, pair expects n = {1}", p.n(), pair.m.lie_dim()));
    }
    hrpcf_with(&pair.m2, paths)
}

/// HRPCF with probability weights (finite-support processes).
pub fn hrpcf_weighted(m2: &DevMap2, paths: &[CondDevPath], weights: &[f64]) -> Result<CMat> {
    if paths.is_empty() || paths.len() != weights.len() {
        return shape_err("weights must match the non-empty list of paths");
    }
    let devs = develop_rank2_all(m2, paths)?;
    let m = m2.lie_dim();
    let mut out = CMat::zeros(m, m);
    for (u, &w) in devs.iter().zip(weights) {
        out += u * Complex64::new(w, 0.0);
    }
    Ok(out)
}

fn check_alignment(m_ens: &MapEnsemble, cond: &[Vec<CondDevPath>], label: &str) -> Result<()> {
    if cond.len() != m_ens.len() {
        return shape_err(format!("{label}: {} conditional path sets for {} rank-1 maps", cond.len(), m_ens.len()));
    }
    for (i, (m, set)) in m_ens.maps().iter().zip(cond).enumerate() {
        if set.is_empty() {
            return arg_err(format!("{label}: empty conditional path set for map {i}"));
        }
        if set.iter().any(|p| p.n() != m.lie_dim()) {
            return shape_err(format!("{label}: conditional paths for map {i} do not match its dimension"));
        }
    }
    Ok(())
}

/// `(1/(K_1 K_2)) Σ_i Σ_j d²_HS(Φ²_X(M_i, 𝓜_j), Φ²_Y(M_i, 𝓜_j))`.
pub fn ehrpcfd_sq(
    m_ens: &MapEnsemble,
    m2_ens: &MapEnsemble<DevMap2>,
    cond_x: &[Vec<CondDevPath>],
    cond_y: &[Vec<CondDevPath>],
) -> Result<f64> {
    check_alignment(m_ens, cond_x, "X")?;
    check_alignment(m_ens, cond_y, "Y")?;
    let mut total = 0.0;
    for (i, m) in m_ens.maps().iter().enumerate() {
        for m2 in m2_ens.maps() {
            if m2.n() != m.lie_dim() {
                return shape_err("rank-2 ensemble does not match the rank-1 ensemble");
            }
            total += hs_distance_sq(&hrpcf_with(m2, &cond_x[i])?, &hrpcf_with(m2, &cond_y[i])?)?;
        }
    }
    Ok(total / (m_ens.len() * m2_ens.len()) as f64)
}

/// Empirical HRPCFD; bounded by `2√m`.
pub fn ehrpcfd(
    m_ens: &MapEnsemble,
    m2_ens: &MapEnsemble<DevMap2>,
    cond_x: &[Vec<CondDevPath>],
    cond_y: &[Vec<CondDevPath>],
) -> Result<f64> {
    ehrpcfd_sq(m_ens, m2_ens, cond_x, cond_y).map(f64::sqrt)
}

/// Draws `K` rank-2 maps on `ℂ^{n×n}` into `𝔲(m)`.
pub fn sample_rank2_ensemble(
    n: usize,
    m: usize,
    k: usize,
    time: TimeChannel,
    init_std: f64,
    seed: u64,
) -> Result<MapEnsemble<DevMap2>> {
    let ens = sample_map_ensemble(DevMap2::input_dim(n, time), m, k, init_std, seed)?;
    let maps = ens.maps().iter().map(|mp| DevMap2::from_map(n, time, mp.clone())).collect::<Result<Vec<_>>>()?;
    MapEnsemble::new(maps)
}

/// Anything that yields (weighted) conditional development paths for a map.
pub trait CondDevSource {
    fn cond_paths(&self, m: &DevMap) -> Result<(Vec<CondDevPath>, Vec<f64>)>;
}

/// Adapts a closure returning equally weighted paths.
pub struct FnSource<F>(pub F);

impl<F: Fn(&DevMap) -> Result<Vec<CondDevPath>>> CondDevSource for FnSource<F> {
    fn cond_paths(&self, m: &DevMap) -> Result<(Vec<CondDevPath>, Vec<f64>)> {
        let paths = (self.0)(m)?;
        let w = vec![1.0 / paths.len().max(1) as f64; paths.len()];
        Ok((paths, w))
    }
}

/// One term of the truncated series: ensembles of admissible pairs.
#[derive(Clone, Debug)]
pub struct TruncationTerm {
    pub m_ens: MapEnsemble,
    pub m2_ens: MapEnsemble<DevMap2>,
}

/// Dimensions for term `j ≥ 1`: `n = 2 + ⌈j/2⌉`, `m = 3 + j`.
pub fn truncation_dims(j: usize) -> (usize, usize) {
    (2 + j.div_ceil(2), 3 + j)
}

/// Samples `J` terms with the schedule of [`truncation_dims`].
pub fn sample_truncation_schedule(
    d: usize,
    terms: usize,
    k1: usize,
    k2: usize,
    time: TimeChannel,
    init_std: f64,
    seed: u64,
) -> Result<Vec<TruncationTerm>> {
    (1..=terms)
        .map(|j| {
            let (n, m) = truncation_dims(j);
            Ok(TruncationTerm {
                m_ens: sample_map_ensemble(d, n, k1, init_std, derive_seed(seed, 2 * j as u64))?,
                m2_ens: sample_rank2_ensemble(n, m, k2, time, init_std, derive_seed(seed, 2 * j as u64 + 1))?,
            })
        })
        .collect()
}

fn weighted_ehrpcfd(term: &TruncationTerm, x: &dyn CondDevSource, y: &dyn CondDevSource) -> Result<f64> {
    let mut total = 0.0;
    for m in term.m_ens.maps() {
        let (px, wx) = x.cond_paths(m)?;
        let (py, wy) = y.cond_paths(m)?;
        for m2 in term.m2_ens.maps() {
            total += hs_distance_sq(&hrpcf_weighted(m2, &px, &wx)?, &hrpcf_weighted(m2, &py, &wy)?)?;
        }
    }
    Ok((total / (term.m_ens.len() * term.m2_ens.len()) as f64).sqrt())
}

/// `Σ_{j=1}^{J} min(1, HRPCFD_j) / 2^j`.
pub fn truncated_hrpcfd(schedule: &[TruncationTerm], x: &dyn CondDevSource, y: &dyn CondDevSource) -> Result<f64> {
    if schedule.is_empty() {
        return arg_err("truncated series needs J ≥ 1 terms");
    }
    let mut total = 0.0;
    for (j, term) in schedule.iter().enumerate() {
        total += weighted_ehrpcfd(term, x, y)?.min(1.0) / 2f64.powi(j as i32 + 1);
    }
    Ok(total)
}

/// `κ̂(p, q) = (1/(K_1 K_2)) Σ_{i,j} Re⟨𝒰_{𝓜_j}(p_i), 𝒰_{𝓜_j}(q_i)⟩_HS`, where
/// `p_i`, `q_i` are the conditional paths under `M_i`.
pub fn hrpcf_kernel(
    m_ens: &MapEnsemble,
    m2_ens: &MapEnsemble<DevMap2>,
    p: &[CondDevPath],
    q: &[CondDevPath],
) -> Result<f64> {
    if p.len() != m_ens.len() || q.len() != m_ens.len() {
        return shape_err("kernel arguments need one conditional path per rank-1 map");
    }
    let mut total = 0.0;
    for i in 0..m_ens.len() {
        for m2 in m2_ens.maps() {
            let up = develop_rank2_raw(m2, &p[i])?;
            let uq = develop_rank2_raw(m2, &q[i])?;
            total += hs_inner(&up, &uq).re;
        }
    }
    Ok(total / (m_ens.len() * m2_ens.len()) as f64)
}
