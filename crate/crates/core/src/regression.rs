//! Conditional development paths: exact enumeration for finite-support
//! processes and a causal sequence regression estimating them from samples.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::error::{arg_err, shape_err, AdevError, Result};
use crate::hrpcf::{CondDevPath, CondDevSource};
use crate::nn::{clip_grad_norm, Optimizer, OptimizerKind, SeqCache, SeqModel};
use crate::path::{develop_increments_raw, Dataset, DevMap, PiecewisePath};
use crate::seed::{derive_seed, rng_from_seed};
use crate::unitary::CMat;

/// A process with finitely many paths under the natural filtration.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteProcessSpec {
    paths: Vec<PiecewisePath>,
    probs: Vec<f64>,
}

impl FiniteProcessSpec {
    pub fn new(paths: Vec<PiecewisePath>, probs: Vec<f64>) -> Result<Self> {
        if paths.len() != probs.len() {
            return shape_err("one probability per support path");
        }
        Dataset::new(paths.clone())?;
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return arg_err("probabilities must be finite and non-negative");
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return arg_err(format!("probabilities sum to {total}, not 1"));
        }
        Ok(FiniteProcessSpec { paths, probs })
    }

    /// A single deterministic path.
    pub fn dirac(path: PiecewisePath) -> Self {
        FiniteProcessSpec { paths: vec![path], probs: vec![1.0] }
    }

    pub fn paths(&self) -> &[PiecewisePath] {
        &self.paths
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `N` i.i.d. draws.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return arg_err("sample size must be positive");
        }
        let mut rng = rng_from_seed(seed);
        let mut cdf = Vec::with_capacity(self.probs.len());
        let mut acc = 0.0;
        for p in &self.probs {
            acc += p;
            cdf.push(acc);
        }
        let samples = (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * acc;
                let k = cdf.iter().position(|&c| u < c).unwrap_or(self.paths.len() - 1);
                self.paths[k].clone()
            })
            .collect();
        Dataset::new(samples)
    }

    /// Index of the support path matching `path` exactly, if any.
    pub fn atom_of(&self, path: &PiecewisePath) -> Option<usize> {
        self.paths.iter().position(|p| p == path)
    }
}

/// `𝒰_M(x_{[t,T]})` for every `t = 0..=T`.
fn suffix_developments(m: &DevMap, path: &PiecewisePath) -> Result<Vec<CMat>> {
    let n = m.lie_dim();
    let incs = path.increments();
    let steps = path.len() - 1;
    let mut out = vec![CMat::identity(n, n); steps + 1];
    for t in (0..steps).rev() {
        let e = develop_increments_raw(m, &incs[t * m.d_in()..(t + 1) * m.d_in()])?;
        out[t] = e * &out[t + 1];
    }
    Ok(out)
}

/// `𝒰_M(x_{[0,t]})` for every `t = 0..=T`.
fn prefix_developments(m: &DevMap, path: &PiecewisePath) -> Result<Vec<CMat>> {
    let n = m.lie_dim();
    let incs = path.increments();
    let mut out = vec![CMat::identity(n, n)];
    for inc in incs.chunks(m.d_in()) {
        let e = develop_increments_raw(m, inc)?;
        let next = out.last().unwrap() * e;
        out.push(next);
    }
    Ok(out)
}

/// Exact `𝔼[𝒰_M(X) | 𝓕_t]` along every support path, by enumerating the
/// atoms of `𝓕_t` (paths agreeing on points `0..=t`).
pub fn oracle_cond_dev(spec: &FiniteProcessSpec, m: &DevMap) -> Result<Vec<CondDevPath>> {
    m.check_input(spec.paths[0].dim())?;
    let n = m.lie_dim();
    let len = spec.paths[0].len();
    let d = spec.paths[0].dim();
    let suffixes = spec.paths.iter().map(|p| suffix_developments(m, p)).collect::<Result<Vec<_>>>()?;
    let prefixes = spec.paths.iter().map(|p| prefix_developments(m, p)).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(spec.paths.len());
    for (k, path) in spec.paths.iter().enumerate() {
        let mut steps = Vec::with_capacity(len);
        for t in 0..len {
            let head = &path.values()[..(t + 1) * d];
            let mut mass = 0.0;
            let mut fut = CMat::zeros(n, n);
            for (j, other) in spec.paths.iter().enumerate() {
                if &other.values()[..(t + 1) * d] == head {
                    mass += spec.probs[j];
                    fut += &suffixes[j][t] * Complex64::new(spec.probs[j], 0.0);
                }
            }
            if mass <= 0.0 {
                return Err(AdevError::UndefinedConditional(format!(
                    "support path {k} sits in a zero-probability atom at t = {t}"
                )));
            }
            steps.push(&prefixes[k][t] * fut.map(|z| z / mass));
        }
        out.push(CondDevPath::new(steps)?);
    }
    Ok(out)
}

impl CondDevSource for FiniteProcessSpec {
    fn cond_paths(&self, m: &DevMap) -> Result<(Vec<CondDevPath>, Vec<f64>)> {
        Ok((oracle_cond_dev(self, m)?, self.probs.clone()))
    }
}

/// Causal regression `x_{[0,t]} ↦ F(x)_t ≈ 𝔼[𝒰_M(x_{[t,T]}) | 𝓕_t]`.
///
/// The recurrent input at step `t` is `(t/T, x_t)`; the read-out gives `2n²`
/// reals, `(Re, Im)` of each entry in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionModel {
    pub net: SeqModel,
    n: usize,
    d: usize,
    horizon: usize,
}

/// Forward record for one sample.
pub struct RegressionTrace {
    pub outputs: Vec<CMat>,
    cache: SeqCache,
}

impl RegressionModel {
    pub fn new(d: usize, n: usize, horizon: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if d == 0 || n == 0 || horizon == 0 {
            return arg_err("regression dimensions must be positive");
        }
        let mut rng = rng_from_seed(seed);
        Ok(RegressionModel { net: SeqModel::new(d + 1, hidden, 2 * n * n, &mut rng), n, d, horizon })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    fn check(&self, path: &PiecewisePath) -> Result<()> {
        if path.dim() != self.d || path.len() != self.horizon + 1 {
            return shape_err(format!(
                "regression expects paths of dimension {} with {} points, got {} / {}",
                self.d,
                self.horizon + 1,
                path.dim(),
                path.len()
            ));
        }
        Ok(())
    }

    fn inputs(&self, values: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity((self.horizon + 1) * (self.d + 1));
        for (t, x) in values.chunks(self.d).enumerate() {
            out.push(t as f64 / self.horizon as f64);
            out.extend_from_slice(x);
        }
        out
    }

    /// Runs the network on raw row-major path values (`(T+1) × d`).
    pub fn forward_values(&self, values: &[f64]) -> RegressionTrace {
        let (raw, cache) = self.net.forward(&self.inputs(values));
        let n = self.n;
        let outputs = raw
            .chunks(2 * n * n)
            .map(|c| CMat::from_fn(n, n, |j, k| Complex64::new(c[2 * (j * n + k)], c[2 * (j * n + k) + 1])))
            .collect();
        RegressionTrace { outputs, cache }
    }

    pub fn forward(&self, path: &PiecewisePath) -> Result<RegressionTrace> {
        self.check(path)?;
        Ok(self.forward_values(path.values()))
    }

    /// Backpropagates `d_out[t]` (with `dL = Re Σ ⟨d_out[t], dF_t⟩`) into
    /// `grad` and returns the gradient w.r.t. the path values.
    pub fn backward(&self, trace: &RegressionTrace, d_out: &[CMat], grad: &mut [f64]) -> Vec<f64> {
        let mut flat = Vec::with_capacity(d_out.len() * 2 * self.n * self.n);
        for g in d_out {
            for j in 0..self.n {
                for k in 0..self.n {
                    flat.push(g[(j, k)].re);
                    flat.push(g[(j, k)].im);
                }
            }
        }
        let d_in = self.net.backward(&trace.cache, &flat, grad);
        d_in.chunks(self.d + 1).flat_map(|c| c[1..].to_vec()).collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: CheckpointKind::Regression,
            n: self.n as u32,
            d: self.d as u32,
            t: self.horizon as u32,
            hidden: self.net.hidden_sizes().iter().map(|&h| h as u32).collect(),
            blocks: vec![self.net.params.clone()],
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.kind != CheckpointKind::Regression || c.blocks.len() != 1 {
            return Err(AdevError::Checkpoint("not a regression checkpoint".into()));
        }
        let (n, d) = (c.n as usize, c.d as usize);
        let hidden: Vec<usize> = c.hidden.iter().map(|&h| h as usize).collect();
        let net = SeqModel::with_params(d + 1, &hidden, 2 * n * n, c.blocks[0].clone())
            .ok_or_else(|| AdevError::Checkpoint("parameter block does not match the architecture".into()))?;
        Ok(RegressionModel { net, n, d, horizon: c.t as usize })
    }
}

/// Per-sample regression targets for a fixed map.
struct Prepared {
    targets: Vec<CMat>,
}

fn prepare(m: &DevMap, data: &Dataset) -> Result<Vec<Prepared>> {
    data.samples().par_iter().map(|s| Ok(Prepared { targets: suffix_developments(m, s)? })).collect()
}

/// Loss and output gradients for one sample (unnormalized).
fn sample_loss(outputs: &[CMat], targets: &[CMat]) -> (f64, Vec<CMat>) {
    let mut loss = 0.0;
    let grads = outputs
        .iter()
        .zip(targets)
        .map(|(f, s)| {
            let diff = f - s;
            loss += diff.iter().map(|z| z.norm_sqr()).sum::<f64>();
            diff * Complex64::new(2.0, 0.0)
        })
        .collect();
    (loss, grads)
}

/// `(1/(B(T+1))) Σ_x Σ_t d²_HS(F(x)_t, 𝒰_M(x_{[t,T]}))`.
pub fn rloss(model: &RegressionModel, batch: &Dataset, m: &DevMap) -> Result<f64> {
    m.check_input(batch.dim())?;
    if m.lie_dim() != model.n {
        return shape_err("map dimension does not match the regression output");
    }
    let prepared = prepare(m, batch)?;
    let losses: Vec<f64> = batch
        .samples()
        .par_iter()
        .zip(&prepared)
        .map(|(s, p)| {
            let tr = model.forward(s)?;
            Ok(sample_loss(&tr.outputs, &p.targets).0)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / (batch.len() * batch.path_len()) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub val_frac: f64,
    pub patience: usize,
    pub eval_every: usize,
    pub optimizer: OptimizerKind,
    pub clip: Option<f64>,
    pub seed: u64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig {
            hidden: vec![32, 32],
            lr: 1e-3,
            iterations: 500,
            batch_size: 64,
            val_frac: 0.1,
            patience: 50,
            eval_every: 10,
            optimizer: OptimizerKind::adam(),
            clip: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainCurve {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<(usize, f64)>,
    pub best_iter: usize,
    pub best_val: f64,
}

const CHUNK: usize = 8;

/// Mean loss and gradient over `idx`, accumulated in fixed chunk order.
fn batch_grad(model: &RegressionModel, data: &Dataset, prep: &[Prepared], idx: &[usize]) -> Result<(f64, Vec<f64>)> {
    let parts: Vec<(f64, Vec<f64>)> = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; model.net.param_count()];
            let mut l = 0.0;
            for &i in chunk {
                let tr = model.forward_values(data.samples()[i].values());
                let (li, dout) = sample_loss(&tr.outputs, &prep[i].targets);
                l += li;
                model.backward(&tr, &dout, &mut g);
            }
            (l, g)
        })
        .collect();
    let scale = 1.0 / (idx.len() * data.path_len()) as f64;
    let mut grad = vec![0.0; model.net.param_count()];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grad))
}

fn eval_loss(model: &RegressionModel, data: &Dataset, prep: &[Prepared], idx: &[usize]) -> f64 {
    let parts: Vec<f64> = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|&i| sample_loss(&model.forward_values(data.samples()[i].values()).outputs, &prep[i].targets).0)
                .sum()
        })
        .collect();
    parts.iter().sum::<f64>() / (idx.len() * data.path_len()) as f64
}

/// Runs the optimizer on `model` in place, returning the curve. The model ends
/// at the parameters with the best validation loss.
pub fn fit_regression(model: &mut RegressionModel, data: &Dataset, m: &DevMap, cfg: &RegressionConfig) -> Result<TrainCurve> {
    m.check_input(data.dim())?;
    if m.lie_dim() != model.n || data.dim() != model.d || data.path_len() != model.horizon + 1 {
        return shape_err("regression model, map and data are inconsistent");
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) || !(0.0..1.0).contains(&cfg.val_frac) {
        return arg_err("invalid regression configuration");
    }
    let prep = prepare(m, data)?;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 1));
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((data.len() as f64) * cfg.val_frac).ceil() as usize;
    let (val_idx, train_idx) = if n_val == 0 || n_val >= data.len() {
        (order.clone(), order.clone())
    } else {
        let (v, t) = order.split_at(n_val);
        (v.to_vec(), t.to_vec())
    };
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, model.net.param_count());
    let mut curve = TrainCurve { best_val: f64::INFINITY, ..Default::default() };
    let mut best = model.net.params.clone();
    let mut since_best = 0usize;
    let mut perm = train_idx.clone();
    let mut cursor = perm.len();
    for it in 0..cfg.iterations {
        let bs = cfg.batch_size.min(perm.len());
        if cursor + bs > perm.len() {
            perm.shuffle(&mut rng);
            cursor = 0;
        }
        let batch = &perm[cursor..cursor + bs];
        cursor += bs;
        let (loss, mut grad) = batch_grad(model, data, &prep, batch)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            model.net.params = best;
            return Err(AdevError::TrainingFailure(format!("regression loss became non-finite at iteration {it}")));
        }
        curve.train_loss.push(loss);
        if let Some(c) = cfg.clip {
            clip_grad_norm(&mut grad, c);
        }
        opt.step(&mut model.net.params, &grad);
        let last = it + 1 == cfg.iterations;
        if (it + 1) % cfg.eval_every.max(1) == 0 || last {
            let v = eval_loss(model, data, &prep, &val_idx);
            curve.val_loss.push((it + 1, v));
            if v < curve.best_val {
                curve.best_val = v;
                curve.best_iter = it + 1;
                best.copy_from_slice(&model.net.params);
                since_best = 0;
            } else {
                since_best += cfg.eval_every.max(1);
                if since_best >= cfg.patience {
                    break;
                }
            }
        }
    }
    if cfg.iterations == 0 {
        curve.best_val = eval_loss(model, data, &prep, &val_idx);
    } else {
        model.net.params = best;
    }
    Ok(curve)
}

/// Trains a fresh regression for map `m` on `data`.
pub fn train_regression(data: &Dataset, m: &DevMap, cfg: &RegressionConfig) -> Result<(RegressionModel, TrainCurve)> {
    let mut model = RegressionModel::new(data.dim(), m.lie_dim(), data.path_len() - 1, &cfg.hidden, derive_seed(cfg.seed, 0))?;
    let curve = fit_regression(&mut model, data, m, cfg)?;
    Ok((model, curve))
}

/// `p̂_t = 𝒰_M(x_{[0,t]}) · F(x)_t` from precomputed outputs; `F_T` is replaced by `I`.
pub(crate) fn assemble_cond_path(prefixes: &[CMat], outputs: &[CMat]) -> Result<CondDevPath> {
    let n = prefixes[0].nrows();
    let last = outputs.len() - 1;
    let steps = prefixes
        .iter()
        .zip(outputs)
        .enumerate()
        .map(|(t, (p, f))| if t == last { p.clone() } else { p * f })
        .collect::<Vec<_>>();
    debug_assert_eq!(steps[0].nrows(), n);
    CondDevPath::new(steps)
}

/// Conditional development paths of every sample.
pub fn predict_cond_dev(model: &RegressionModel, data: &Dataset, m: &DevMap) -> Result<Vec<CondDevPath>> {
    m.check_input(data.dim())?;
    if m.lie_dim() != model.n {
        return shape_err("map dimension does not match the regression output");
    }
    data.samples()
        .par_iter()
        .map(|s| {
            let tr = model.forward(s)?;
            assemble_cond_path(&prefix_developments(m, s)?, &tr.outputs)
        })
        .collect()
}

/// Mean over samples and times of `‖p̂_t − p_t‖_HS`.
pub fn mean_cond_path_error(a: &[CondDevPath], b: &[CondDevPath]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return shape_err("cond path lists must have equal non-zero length");
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, q) in a.iter().zip(b) {
        if p.steps().len() != q.steps().len() {
            return shape_err("cond paths of different lengths");
        }
        for (x, y) in p.steps().iter().zip(q.steps()) {
            total += crate::unitary::hs_distance(x, y)?;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Oracle conditional paths for every sample of `data` drawn from `spec`.
pub fn oracle_for_samples(spec: &FiniteProcessSpec, m: &DevMap, data: &Dataset) -> Result<Vec<CondDevPath>> {
    let oracle = oracle_cond_dev(spec, m)?;
    data.samples()
        .iter()
        .map(|s| {
            spec.atom_of(s)
                .map(|k| oracle[k].clone())
                .ok_or_else(|| AdevError::Argument("sample is not a support path of the process".into()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::develop;
    use crate::unitary::{hs_distance, sample_map_ensemble, AntiHermitian, I};
    use std::f64::consts::FRAC_PI_2;

    fn quarter_turn() -> DevMap {
        DevMap::new(vec![AntiHermitian::new(CMat::from_element(1, 1, I * FRAC_PI_2)).unwrap()]).unwrap()
    }

    fn aldous_limit() -> FiniteProcessSpec {
        FiniteProcessSpec::new(
            vec![PiecewisePath::scalar(&[1.0, 1.0, 2.0]).unwrap(), PiecewisePath::scalar(&[1.0, 1.0, 0.0]).unwrap()],
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    /// Two-state chain on {0, 1}: start 0, flip with probability q each step.
    pub(crate) fn markov_spec(steps: usize, q: f64) -> FiniteProcessSpec {
        let mut paths = Vec::new();
        let mut probs = Vec::new();
        for bits in 0..(1u32 << steps) {
            let mut v = vec![0.0];
            let mut p = 1.0;
            let mut state = 0.0;
            for s in 0..steps {
                let flip = (bits >> s) & 1 == 1;
                p *= if flip { q } else { 1.0 - q };
                if flip {
                    state = 1.0 - state;
                }
                v.push(state);
            }
            paths.push(PiecewisePath::scalar(&v).unwrap());
            probs.push(p);
        }
        FiniteProcessSpec::new(paths, probs).unwrap()
    }

    #[test]
    fn oracle_on_aldous_limit() {
        let c = oracle_cond_dev(&aldous_limit(), &quarter_turn()).unwrap();
        for t in 0..2 {
            assert!(c[0].steps()[t][(0, 0)].norm() < 1e-15);
        }
        assert!((c[0].steps()[2][(0, 0)] - I).norm() < 1e-15);
        assert!((c[1].steps()[2][(0, 0)] + I).norm() < 1e-15);
    }

    #[test]
    fn oracle_dirac_is_constant_development() {
        let p = PiecewisePath::from_rows(&[vec![0.0, 1.0], vec![0.5, -1.0], vec![0.2, 0.3], vec![1.0, 1.0]]).unwrap();
        let m = sample_map_ensemble(2, 3, 1, 0.5, 1).unwrap().maps()[0].clone();
        let c = oracle_cond_dev(&FiniteProcessSpec::dirac(p.clone()), &m).unwrap();
        let u = develop(&m, &p).unwrap().into_matrix();
        for s in c[0].steps() {
            assert!(hs_distance(s, &u).unwrap() < 1e-12);
        }
    }

    #[test]
    fn oracle_martingale_endpoint_and_tower() {
        let spec = markov_spec(4, 0.3);
        let m = sample_map_ensemble(1, 2, 1, 0.8, 2).unwrap().maps()[0].clone();
        let c = oracle_cond_dev(&spec, &m).unwrap();
        let mut phi = CMat::zeros(2, 2);
        for (p, w) in spec.paths().iter().zip(spec.probs()) {
            phi += develop(&m, p).unwrap().into_matrix() * Complex64::new(*w, 0.0);
        }
        for (k, p) in spec.paths().iter().enumerate() {
            assert_eq!(c[k].steps()[4], develop(&m, p).unwrap().into_matrix());
        }
        for t in 0..=4 {
            let mut mean = CMat::zeros(2, 2);
            for (k, w) in spec.probs().iter().enumerate() {
                mean += &c[k].steps()[t] * Complex64::new(*w, 0.0);
            }
            assert!(hs_distance(&mean, &phi).unwrap() < 1e-12);
        }
    }

    #[test]
    fn zero_probability_atom_is_undefined() {
        let spec = FiniteProcessSpec::new(
            vec![PiecewisePath::scalar(&[0.0, 1.0]).unwrap(), PiecewisePath::scalar(&[1.0, 1.0]).unwrap()],
            vec![1.0, 0.0],
        )
        .unwrap();
        assert!(matches!(oracle_cond_dev(&spec, &quarter_turn()), Err(AdevError::UndefinedConditional(_))));
    }

    #[test]
    fn rloss_matches_brute_force() {
        let m = sample_map_ensemble(2, 2, 1, 0.5, 3).unwrap().maps()[0].clone();
        let data = crate::regression::tests::random_dataset(5, 4, 2, 4);
        let model = RegressionModel::new(2, 2, 3, &[4], 5).unwrap();
        let mut total = 0.0;
        for s in data.samples() {
            let out = model.forward(s).unwrap().outputs;
            for t in 0..4 {
                let fut = if t == 3 { CMat::identity(2, 2) } else { develop(&m, &s.slice(t, 3).unwrap()).unwrap().into_matrix() };
                total += hs_distance(&out[t], &fut).unwrap().powi(2);
            }
        }
        let brute = total / (5.0 * 4.0);
        assert!((brute - rloss(&model, &data, &m).unwrap()).abs() < 1e-12);
    }

    pub(crate) fn random_dataset(n: usize, len: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = rng_from_seed(seed);
        Dataset::new(
            (0..n)
                .map(|_| {
                    let rows: Vec<Vec<f64>> = (0..len).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
                    PiecewisePath::from_rows(&rows).unwrap()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rloss_zero_on_constant_paths_with_identity_output() {
        // zero read-out weights and bias = identity
        let mut model = RegressionModel::new(1, 2, 3, &[3], 1).unwrap();
        let np = model.net.param_count();
        let ro = np - 8 - 8 * 3;
        model.net.params[ro..].iter_mut().for_each(|v| *v = 0.0);
        model.net.params[np - 8] = 1.0;
        model.net.params[np - 2] = 1.0;
        let data = Dataset::new(vec![PiecewisePath::scalar(&[2.0; 4]).unwrap(); 3]).unwrap();
        let m = sample_map_ensemble(1, 2, 1, 0.5, 3).unwrap().maps()[0].clone();
        assert!(rloss(&model, &data, &m).unwrap() < 1e-24);
    }

    #[test]
    fn dirac_training_converges() {
        let p = PiecewisePath::from_rows(&[vec![0.0], vec![0.4], vec![-0.3], vec![0.8], vec![0.1]]).unwrap();
        let data = FiniteProcessSpec::dirac(p).sample(64, 0).unwrap();
        let m = sample_map_ensemble(1, 2, 1, 1.0, 4).unwrap().maps()[0].clone();
        let cfg = RegressionConfig { iterations: 500, hidden: vec![16, 16], lr: 1e-2, batch_size: 16, ..Default::default() };
        let (model, curve) = train_regression(&data, &m, &cfg).unwrap();
        assert!(rloss(&model, &data, &m).unwrap() < 1e-3, "best val {}", curve.best_val);
    }

    #[test]
    fn markov_regression_matches_oracle() {
        let spec = markov_spec(4, 0.3);
        let m = sample_map_ensemble(1, 2, 1, 0.8, 6).unwrap().maps()[0].clone();
        let data = spec.sample(1000, 1).unwrap();
        let cfg = RegressionConfig { iterations: 600, hidden: vec![16, 16], lr: 1e-2, batch_size: 64, ..Default::default() };
        let (model, _) = train_regression(&data, &m, &cfg).unwrap();
        let pred = predict_cond_dev(&model, &data, &m).unwrap();
        let oracle = oracle_for_samples(&spec, &m, &data).unwrap();
        let err = mean_cond_path_error(&pred, &oracle).unwrap();
        assert!(err < 0.05, "mean HS error {err}");
    }

    #[test]
    fn shuffled_order_changes_loss_little() {
        let spec = markov_spec(3, 0.4);
        let m = sample_map_ensemble(1, 2, 1, 0.8, 7).unwrap().maps()[0].clone();
        let data = spec.sample(300, 2).unwrap();
        let mut rev = data.samples().to_vec();
        rev.reverse();
        let shuffled = Dataset::new(rev).unwrap();
        let cfg = RegressionConfig { iterations: 300, hidden: vec![8, 8], lr: 1e-2, batch_size: 32, ..Default::default() };
        let (a, _) = train_regression(&data, &m, &cfg).unwrap();
        let (b, _) = train_regression(&shuffled, &m, &cfg).unwrap();
        let la = rloss(&a, &data, &m).unwrap();
        let lb = rloss(&b, &data, &m).unwrap();
        assert!((la - lb).abs() / la < 0.1, "{la} vs {lb}");
    }

    #[test]
    fn perfect_model_prediction_matches_oracle() {
        // assemble from oracle future expectations directly
        let spec = markov_spec(3, 0.25);
        let m = sample_map_ensemble(1, 3, 1, 0.6, 8).unwrap().maps()[0].clone();
        let oracle = oracle_cond_dev(&spec, &m).unwrap();
        for (k, p) in spec.paths().iter().enumerate() {
            let pre = prefix_developments(&m, p).unwrap();
            let fut: Vec<CMat> = (0..=3).map(|t| pre[t].adjoint() * &oracle[k].steps()[t]).collect();
            let c = assemble_cond_path(&pre, &fut).unwrap();
            assert!(mean_cond_path_error(&[c.clone()], &oracle[k..k + 1]).unwrap() < 1e-8);
            assert!(c.max_hs_norm() <= 3f64.sqrt() + 1e-12);
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let model = RegressionModel::new(3, 2, 10, &[5, 4], 1).unwrap();
        let back = RegressionModel::from_checkpoint(&Checkpoint::from_bytes(&model.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(model, back);
    }
}
