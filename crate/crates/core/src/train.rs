//! Gradients through developments and the three-stage discriminator training.

use num_complex::Complex64;
use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::error::{arg_err, shape_err, AdevError, Result};
use crate::hrpcf::{ehrpcfd, sample_rank2_ensemble, CondDevPath, DevMap2, TimeChannel};
use crate::nn::{Optimizer, OptimizerKind};
use crate::path::{tape_increments, Dataset, DevMap, DevTape, MapEnsemble};
use crate::regression::{predict_cond_dev, train_regression, RegressionConfig, RegressionModel, TrainCurve};
use crate::seed::{derive_seed, rng_from_seed, Rng};
use crate::unitary::{hs_inner, param_gradient, sample_map_ensemble, AntiHermitian, CMat, SpectralExp};

/// `D exp(A)[E]` by the Daleckii–Krein formula on the eigenbasis of `−iA`.
pub fn expm_differential(a: &AntiHermitian, e: &AntiHermitian) -> Result<CMat> {
    if a.dim() != e.dim() {
        return shape_err("expm_differential needs equal dimensions");
    }
    Ok(SpectralExp::new(a.matrix())?.differential(e.matrix()))
}

/// Analytic versus central finite-difference gradient (five-point stencil).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub analytic: Vec<f64>,
    pub finite_difference: Vec<f64>,
    /// `max_i |a_i − f_i| / max(|a_i|, |f_i|, 1e-6)`.
    pub max_rel_error: f64,
}

pub fn check_gradient(f: impl Fn(&[f64]) -> Result<f64>, params: &[f64], analytic: Vec<f64>, h: f64) -> Result<GradReport> {
    if analytic.len() != params.len() {
        return shape_err("gradient length differs from parameter count");
    }
    let mut p = params.to_vec();
    let mut fd = Vec::with_capacity(params.len());
    // fourth-order central stencil
    for i in 0..params.len() {
        let mut at = |s: f64| {
            p[i] = params[i] + s * h;
            f(&p)
        };
        let (a2, a1, b1, b2) = (at(2.0)?, at(1.0)?, at(-1.0)?, at(-2.0)?);
        p[i] = params[i];
        fd.push((8.0 * (a1 - b1) - (a2 - b2)) / (12.0 * h));
    }
    let max_rel_error = analytic
        .iter()
        .zip(&fd)
        .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(1e-6))
        .fold(0.0, f64::max);
    Ok(GradReport { analytic, finite_difference: fd, max_rel_error })
}

pub(crate) fn tapes_for(map: &DevMap, incs: &[Vec<f64>]) -> Result<Vec<DevTape>> {
    incs.par_iter().map(|i| tape_increments(map, i)).collect()
}

pub(crate) fn tape_mean(tapes: &[DevTape], n: usize) -> CMat {
    let mut s = CMat::zeros(n, n);
    for t in tapes {
        s += t.result();
    }
    s / Complex64::new(tapes.len() as f64, 0.0)
}

/// Per-generator weight matrices `W_c = Σ_t Δx_{t,c} ∂L/∂A_t` when every
/// sample's final development receives the output gradient `g`.
pub(crate) fn generator_weights(map: &DevMap, tapes: &[DevTape], incs: &[Vec<f64>], g: &CMat) -> Vec<CMat> {
    let d = map.d_in();
    let n = map.lie_dim();
    let parts: Vec<Vec<CMat>> = tapes
        .par_chunks(8)
        .zip(incs.par_chunks(8))
        .map(|(tc, ic)| {
            let mut w = vec![CMat::zeros(n, n); d];
            for (tape, inc) in tc.iter().zip(ic) {
                let ga = tape.backward_final(g);
                for (t, a) in ga.iter().enumerate() {
                    for (c, wc) in w.iter_mut().enumerate() {
                        let x = inc[t * d + c];
                        if x != 0.0 {
                            *wc += a * Complex64::new(x, 0.0);
                        }
                    }
                }
            }
            w
        })
        .collect();
    let mut w = vec![CMat::zeros(n, n); d];
    for p in parts {
        for (a, b) in w.iter_mut().zip(p) {
            *a += b;
        }
    }
    w
}

/// Gradient of `Re⟨G, 𝒰⟩` w.r.t. the increments, from step-generator gradients.
pub(crate) fn increment_grads(map: &DevMap, ga: &[CMat]) -> Vec<f64> {
    let mut out = Vec::with_capacity(ga.len() * map.d_in());
    for a in ga {
        for g in map.generators() {
            out.push(hs_inner(a, g.matrix()).re);
        }
    }
    out
}

fn flat_param_grad(w: &[CMat]) -> Vec<f64> {
    w.iter().flat_map(param_gradient).collect()
}

/// Gradient contribution of one map to `‖Φ_X − Φ_Y‖² · scale`.
fn pair_map_grad(map: &DevMap, ix: &[Vec<f64>], iy: &[Vec<f64>], scale: f64) -> Result<(f64, Vec<f64>)> {
    let tx = tapes_for(map, ix)?;
    let ty = tapes_for(map, iy)?;
    let n = map.lie_dim();
    let diff = tape_mean(&tx, n) - tape_mean(&ty, n);
    let val = diff.iter().map(|z| z.norm_sqr()).sum::<f64>() * scale;
    let gx = &diff * Complex64::new(2.0 * scale / tx.len() as f64, 0.0);
    let gy = &diff * Complex64::new(-2.0 * scale / ty.len() as f64, 0.0);
    let wx = generator_weights(map, &tx, ix, &gx);
    let wy = generator_weights(map, &ty, iy, &gy);
    let w: Vec<CMat> = wx.into_iter().zip(wy).map(|(a, b)| a + b).collect();
    Ok((val, flat_param_grad(&w)))
}

fn dataset_increments(data: &Dataset) -> Vec<Vec<f64>> {
    data.samples().iter().map(|s| s.increments()).collect()
}

/// `EPCFD²` and its gradient w.r.t. every map's parameters.
pub fn epcfd_sq_and_grad(ens: &MapEnsemble, x: &Dataset, y: &Dataset) -> Result<(f64, Vec<Vec<f64>>)> {
    if x.dim() != y.dim() {
        return shape_err("datasets have different dimensions");
    }
    let (ix, iy) = (dataset_increments(x), dataset_increments(y));
    let scale = 1.0 / ens.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(ens.len());
    for m in ens.maps() {
        m.check_input(x.dim())?;
        let (v, g) = pair_map_grad(m, &ix, &iy, scale)?;
        total += v;
        grads.push(g);
    }
    Ok((total, grads))
}

/// Gradient of `EPCFD²` w.r.t. each map's parameters (layout of [`DevMap::params`]).
pub fn grad_epcfd(ens: &MapEnsemble, x: &Dataset, y: &Dataset) -> Result<Vec<Vec<f64>>> {
    epcfd_sq_and_grad(ens, x, y).map(|r| r.1)
}

fn realified(m2: &DevMap2, paths: &[CondDevPath]) -> Result<Vec<Vec<f64>>> {
    paths.iter().map(|p| m2.realify_increments(p)).collect()
}

/// `EHRPCFD²` and its gradient w.r.t. every rank-2 map, with conditional paths fixed.
pub fn ehrpcfd_sq_and_grad(
    m2_ens: &MapEnsemble<DevMap2>,
    cond_x: &[Vec<CondDevPath>],
    cond_y: &[Vec<CondDevPath>],
) -> Result<(f64, Vec<Vec<f64>>)> {
    if cond_x.len() != cond_y.len() || cond_x.is_empty() {
        return shape_err("conditional path sets must align with the rank-1 ensemble");
    }
    let k1 = cond_x.len();
    let scale = 1.0 / (k1 * m2_ens.len()) as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(m2_ens.len());
    for m2 in m2_ens.maps() {
        let mut g = vec![0.0; m2.as_map().param_count()];
        for i in 0..k1 {
            let ix = realified(m2, &cond_x[i])?;
            let iy = realified(m2, &cond_y[i])?;
            let (v, gi) = pair_map_grad(m2.as_map(), &ix, &iy, scale)?;
            total += v;
            for (a, b) in g.iter_mut().zip(gi) {
                *a += b;
            }
        }
        grads.push(g);
    }
    Ok((total, grads))
}

/// Gradient of `EHRPCFD²` w.r.t. each rank-2 map (regression outputs held fixed).
pub fn grad_ehrpcfd(
    m2_ens: &MapEnsemble<DevMap2>,
    cond_x: &[Vec<CondDevPath>],
    cond_y: &[Vec<CondDevPath>],
) -> Result<Vec<Vec<f64>>> {
    ehrpcfd_sq_and_grad(m2_ens, cond_x, cond_y).map(|r| r.1)
}

/// Gradient-ascent settings shared by both discriminator stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AscentConfig {
    pub lr: f64,
    pub iterations: usize,
    pub optimizer: OptimizerKind,
    pub backtracking: bool,
    pub max_halvings: usize,
}

/// Maximizes `obj` over `params`. `grad_fn(params, it)` returns the batch
/// objective and gradient; `eval(params, it)` re-evaluates on the same batch.
/// Returns the objective after every iteration.
pub(crate) fn ascend(
    params: &mut Vec<f64>,
    cfg: &AscentConfig,
    mut grad_fn: impl FnMut(&[f64], usize) -> Result<(f64, Vec<f64>)>,
    mut eval: impl FnMut(&[f64], usize) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, params.len());
    let mut curve = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let (f0, g) = grad_fn(params, it)?;
        if !f0.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(AdevError::TrainingFailure(format!("discriminator objective became non-finite at iteration {it}")));
        }
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut cand = params.clone();
        opt.step(&mut cand, &neg);
        if !cfg.backtracking {
            *params = cand;
            curve.push(f0);
            continue;
        }
        let delta: Vec<f64> = cand.iter().zip(params.iter()).map(|(c, p)| c - p).collect();
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let trial: Vec<f64> = params.iter().zip(&delta).map(|(p, d)| p + step * d).collect();
            let f1 = eval(&trial, it)?;
            if f1 >= f0 {
                accepted = Some((trial, f1));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((trial, f1)) => {
                *params = trial;
                curve.push(f1);
            }
            None => curve.push(f0),
        }
    }
    Ok(curve)
}

fn ensemble_params<M>(ens: &MapEnsemble<M>, f: impl Fn(&M) -> Vec<f64>) -> Vec<f64> {
    ens.maps().iter().flat_map(f).collect()
}

fn set_rank1_params(ens: &mut MapEnsemble, flat: &[f64]) -> Result<()> {
    let mut off = 0;
    for m in ens.maps_mut() {
        let k = m.param_count();
        m.set_params(&flat[off..off + k])?;
        off += k;
    }
    Ok(())
}

fn set_rank2_params(ens: &mut MapEnsemble<DevMap2>, flat: &[f64]) -> Result<()> {
    let mut off = 0;
    for m in ens.maps_mut() {
        let k = m.as_map().param_count();
        m.as_map_mut().set_params(&flat[off..off + k])?;
        off += k;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscConfig {
    pub n: usize,
    pub m: usize,
    pub k1: usize,
    pub k2: usize,
    pub init_std: f64,
    pub lr1: f64,
    pub lr3: f64,
    pub iter1: usize,
    pub iter3: usize,
    /// Samples drawn per group for each ascent iteration.
    pub batch: usize,
    pub optimizer: OptimizerKind,
    pub backtracking: bool,
    pub max_halvings: usize,
    /// Prepend the normalized time channel to input paths.
    pub time_augment: bool,
    pub rank2_time: TimeChannel,
    pub regression: RegressionConfig,
    pub seed: u64,
}

impl Default for DiscConfig {
    fn default() -> Self {
        DiscConfig {
            n: 3,
            m: 13,
            k1: 1,
            k2: 10,
            init_std: 0.2,
            lr1: 0.02,
            lr3: 0.02,
            iter1: 300,
            iter3: 300,
            batch: 256,
            optimizer: OptimizerKind::adam(),
            backtracking: false,
            max_halvings: 10,
            time_augment: true,
            rank2_time: TimeChannel::Normalized,
            regression: RegressionConfig::default(),
            seed: 0,
        }
    }
}

impl DiscConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.k1 == 0 || self.k2 == 0 || self.batch == 0 {
            return arg_err("n, m, k1, k2 and batch must be positive");
        }
        if !(self.init_std >= 0.0) || !(self.lr1 > 0.0) || !(self.lr3 > 0.0) {
            return arg_err("init_std must be non-negative and learning rates positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscReport {
    pub stage1: Vec<f64>,
    pub stage2_x: Vec<TrainCurve>,
    pub stage2_y: Vec<TrainCurve>,
    pub stage3: Vec<f64>,
}

/// Trained rank-1 maps, per-map regressions for both measures and rank-2 maps.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub m_ens: MapEnsemble,
    pub reg_x: Vec<RegressionModel>,
    pub reg_y: Vec<RegressionModel>,
    pub m2_ens: MapEnsemble<DevMap2>,
    pub time_augment: bool,
    pub report: DiscReport,
}

fn batch_indices(rng: &mut Rng, n: usize, b: usize) -> Vec<usize> {
    if b >= n {
        (0..n).collect()
    } else {
        let mut v = sample_indices(rng, n, b).into_vec();
        v.sort_unstable();
        v
    }
}

impl Discriminator {
    pub fn prepare(&self, data: &Dataset) -> Dataset {
        if self.time_augment {
            data.time_augment()
        } else {
            data.clone()
        }
    }

    /// Conditional paths under every `M_i` using the given regressions.
    pub fn cond_paths(&self, data: &Dataset, regs: &[RegressionModel]) -> Result<Vec<Vec<CondDevPath>>> {
        let data = self.prepare(data);
        self.m_ens.maps().iter().zip(regs).map(|(m, r)| predict_cond_dev(r, &data, m)).collect()
    }

    /// EHRPCFD with `X` passed through the X-regressions and `Y` through the Y-regressions.
    pub fn statistic(&self, x: &Dataset, y: &Dataset) -> Result<f64> {
        let cx = self.cond_paths(x, &self.reg_x)?;
        let cy = self.cond_paths(y, &self.reg_y)?;
        ehrpcfd(&self.m_ens, &self.m2_ens, &cx, &cy)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut blocks: Vec<Vec<f64>> = self.m_ens.maps().iter().map(|m| m.params()).collect();
        blocks.extend(self.m2_ens.maps().iter().map(|m| m.as_map().params()));
        blocks.extend(self.reg_x.iter().chain(&self.reg_y).map(|r| r.net.params.clone()));
        let r = &self.reg_x[0];
        let m0 = &self.m2_ens.maps()[0];
        // header meta block: k1, k2, m, time flags
        blocks.insert(
            0,
            vec![
                self.m_ens.len() as f64,
                self.m2_ens.len() as f64,
                m0.lie_dim() as f64,
                self.time_augment as u8 as f64,
                match m0.time_channel() {
                    TimeChannel::None => 0.0,
                    TimeChannel::Normalized => 1.0,
                    TimeChannel::Raw => 2.0,
                },
            ],
        );
        Checkpoint {
            kind: CheckpointKind::Discriminator,
            n: r.n() as u32,
            d: r.d() as u32,
            t: r.horizon() as u32,
            hidden: r.net.hidden_sizes().iter().map(|&h| h as u32).collect(),
            blocks,
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let bad = || AdevError::Checkpoint("malformed discriminator checkpoint".into());
        if c.kind != CheckpointKind::Discriminator || c.blocks.is_empty() || c.blocks[0].len() != 5 {
            return Err(bad());
        }
        let h = &c.blocks[0];
        let (k1, k2, m) = (h[0] as usize, h[1] as usize, h[2] as usize);
        let time_augment = h[3] != 0.0;
        let time = match h[4] as u8 {
            0 => TimeChannel::None,
            1 => TimeChannel::Normalized,
            _ => TimeChannel::Raw,
        };
        let (n, d, t) = (c.n as usize, c.d as usize, c.t as usize);
        if c.blocks.len() != 1 + k1 + k2 + 2 * k1 {
            return Err(bad());
        }
        let maps = (0..k1).map(|i| DevMap::from_params(d, n, &c.blocks[1 + i])).collect::<Result<Vec<_>>>()?;
        let maps2 = (0..k2)
            .map(|j| {
                let mp = DevMap::from_params(DevMap2::input_dim(n, time), m, &c.blocks[1 + k1 + j])?;
                DevMap2::from_map(n, time, mp)
            })
            .collect::<Result<Vec<_>>>()?;
        let regs = (0..2 * k1)
            .map(|i| {
                RegressionModel::from_checkpoint(&Checkpoint {
                    kind: CheckpointKind::Regression,
                    n: c.n,
                    d: c.d,
                    t: t as u32,
                    hidden: c.hidden.clone(),
                    blocks: vec![c.blocks[1 + k1 + k2 + i].clone()],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (reg_x, reg_y) = regs.split_at(k1);
        Ok(Discriminator {
            m_ens: MapEnsemble::new(maps)?,
            reg_x: reg_x.to_vec(),
            reg_y: reg_y.to_vec(),
            m2_ens: MapEnsemble::new(maps2)?,
            time_augment,
            report: DiscReport::default(),
        })
    }
}

/// Stage 1 on its own: gradient ascent of `EPCFD²` over the rank-1 ensemble.
pub fn train_rank1(x: &Dataset, y: &Dataset, ens: &mut MapEnsemble, cfg: &AscentConfig, batch: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = rng_from_seed(seed);
    let batches: Vec<(Vec<usize>, Vec<usize>)> =
        (0..cfg.iterations).map(|_| (batch_indices(&mut rng, x.len(), batch), batch_indices(&mut rng, y.len(), batch))).collect();
    let mut params = ensemble_params(ens, |m| m.params());
    let template = ens.clone();
    let with = |p: &[f64]| -> Result<MapEnsemble> {
        let mut e = template.clone();
        set_rank1_params(&mut e, p)?;
        Ok(e)
    };
    let curve = ascend(
        &mut params,
        cfg,
        |p, it| {
            let (bx, by) = &batches[it];
            let (v, g) = epcfd_sq_and_grad(&with(p)?, &x.subset(bx)?, &y.subset(by)?)?;
            Ok((v, g.concat()))
        },
        |p, it| {
            let (bx, by) = &batches[it];
            crate::path::epcfd_sq(&with(p)?, &x.subset(bx)?, &y.subset(by)?)
        },
    )?;
    set_rank1_params(ens, &params)?;
    Ok(curve)
}

fn pick<T: Clone>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i].clone()).collect()
}

/// Stage 3 on its own: gradient ascent of `EHRPCFD²` over the rank-2 ensemble.
pub fn train_rank2(
    cx: &[Vec<CondDevPath>],
    cy: &[Vec<CondDevPath>],
    ens: &mut MapEnsemble<DevMap2>,
    cfg: &AscentConfig,
    batch: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let (nx, ny) = (cx[0].len(), cy[0].len());
    let mut rng = rng_from_seed(seed);
    let batches: Vec<(Vec<usize>, Vec<usize>)> =
        (0..cfg.iterations).map(|_| (batch_indices(&mut rng, nx, batch), batch_indices(&mut rng, ny, batch))).collect();
    let mut params = ensemble_params(ens, |m| m.as_map().params());
    let template = ens.clone();
    let with = |p: &[f64]| -> Result<MapEnsemble<DevMap2>> {
        let mut e = template.clone();
        set_rank2_params(&mut e, p)?;
        Ok(e)
    };
    let sub = |c: &[Vec<CondDevPath>], idx: &[usize]| -> Vec<Vec<CondDevPath>> { c.iter().map(|s| pick(s, idx)).collect() };
    let curve = ascend(
        &mut params,
        cfg,
        |p, it| {
            let (bx, by) = &batches[it];
            let (v, g) = ehrpcfd_sq_and_grad(&with(p)?, &sub(cx, bx), &sub(cy, by))?;
            Ok((v, g.concat()))
        },
        |p, it| {
            let (bx, by) = &batches[it];
            let e = with(p)?;
            let (sx, sy) = (sub(cx, bx), sub(cy, by));
            let mut total = 0.0;
            for m2 in e.maps() {
                for i in 0..sx.len() {
                    let fx = crate::hrpcf::hrpcf_with(m2, &sx[i])?;
                    let fy = crate::hrpcf::hrpcf_with(m2, &sy[i])?;
                    total += crate::unitary::hs_distance_sq(&fx, &fy)?;
                }
            }
            Ok(total / (sx.len() * e.len()) as f64)
        },
    )?;
    set_rank2_params(ens, &params)?;
    Ok(curve)
}

/// Three-stage training: rank-1 ascent, per-map regressions on `X` and `Y`,
/// rank-2 ascent with the regressions frozen.
pub fn train_discriminator(x: &Dataset, y: &Dataset, cfg: &DiscConfig) -> Result<Discriminator> {
    cfg.validate()?;
    if x.dim() != y.dim() || x.path_len() != y.path_len() {
        return shape_err("X and Y must share dimension and length");
    }
    let (xa, ya) = if cfg.time_augment { (x.time_augment(), y.time_augment()) } else { (x.clone(), y.clone()) };
    let d_in = xa.dim();
    let mut m_ens = sample_map_ensemble(d_in, cfg.n, cfg.k1, cfg.init_std, derive_seed(cfg.seed, 10))?;
    let asc = |lr, iterations| AscentConfig {
        lr,
        iterations,
        optimizer: cfg.optimizer,
        backtracking: cfg.backtracking,
        max_halvings: cfg.max_halvings,
    };
    let stage1 = train_rank1(&xa, &ya, &mut m_ens, &asc(cfg.lr1, cfg.iter1), cfg.batch, derive_seed(cfg.seed, 12))?;

    let mut reg_x = Vec::with_capacity(cfg.k1);
    let mut reg_y = Vec::with_capacity(cfg.k1);
    let mut report = DiscReport { stage1, ..Default::default() };
    for (i, m) in m_ens.maps().iter().enumerate() {
        let rc = RegressionConfig { seed: derive_seed(cfg.seed, 100 + i as u64), ..cfg.regression.clone() };
        let (rx, cx) = train_regression(&xa, m, &rc)?;
        let (ry, cy) = train_regression(&ya, m, &rc)?;
        reg_x.push(rx);
        reg_y.push(ry);
        report.stage2_x.push(cx);
        report.stage2_y.push(cy);
    }

    let cond_x: Vec<Vec<CondDevPath>> =
        m_ens.maps().iter().zip(&reg_x).map(|(m, r)| predict_cond_dev(r, &xa, m)).collect::<Result<_>>()?;
    let cond_y: Vec<Vec<CondDevPath>> =
        m_ens.maps().iter().zip(&reg_y).map(|(m, r)| predict_cond_dev(r, &ya, m)).collect::<Result<_>>()?;
    let mut m2_ens = sample_rank2_ensemble(cfg.n, cfg.m, cfg.k2, cfg.rank2_time, cfg.init_std, derive_seed(cfg.seed, 11))?;
    report.stage3 = train_rank2(&cond_x, &cond_y, &mut m2_ens, &asc(cfg.lr3, cfg.iter3), cfg.batch, derive_seed(cfg.seed, 13))?;

    Ok(Discriminator { m_ens, reg_x, reg_y, m2_ens, time_augment: cfg.time_augment, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hrpcf::ehrpcfd_sq;
    use crate::path::{epcfd_sq, PiecewisePath};
    use crate::seed::rng_from_seed;
    use crate::unitary::{expm_anti_hermitian, hs_distance};
    use rand::Rng;

    fn random_dataset(n: usize, len: usize, d: usize, seed: u64) -> Dataset {
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

    fn random_ah(m: usize, seed: u64, std: f64) -> AntiHermitian {
        sample_map_ensemble(1, m, 1, std, seed).unwrap().maps()[0].generators()[0].clone()
    }

    #[test]
    fn differential_at_zero_is_identity_map() {
        let e = random_ah(3, 1, 1.0);
        let d = expm_differential(&AntiHermitian::zeros(3), &e).unwrap();
        assert!(hs_distance(&d, e.matrix()).unwrap() < 1e-14);
    }

    #[test]
    fn differential_matches_finite_differences() {
        for seed in 0..10 {
            let a = random_ah(3, seed, 1.0);
            let e = random_ah(3, 100 + seed, 1.0);
            let d = expm_differential(&a, &e).unwrap();
            let h = 1e-5;
            let shifted = |s: f64| {
                let m = a.matrix() + e.matrix() * Complex64::new(s, 0.0);
                expm_anti_hermitian(&AntiHermitian::new(m).unwrap()).unwrap().into_matrix()
            };
            let fd = (shifted(h) - shifted(-h)) / Complex64::new(2.0 * h, 0.0);
            let rel = hs_distance(&fd, &d).unwrap() / crate::unitary::hs_norm_sq(&d).sqrt();
            assert!(rel < 1e-6, "relative error {rel}");
        }
    }

    #[test]
    fn differential_commuting_direction() {
        let a = random_ah(4, 7, 0.8);
        let d = expm_differential(&a, &a).unwrap();
        let u = expm_anti_hermitian(&a).unwrap().into_matrix();
        assert!(hs_distance(&d, &(a.matrix() * &u)).unwrap() < 1e-12);
        assert!(hs_distance(&d, &(&u * a.matrix())).unwrap() < 1e-12);
    }

    #[test]
    fn differential_degenerate_spectrum() {
        // repeated eigenvalues use the confluent limit
        let a = AntiHermitian::new(CMat::identity(3, 3) * Complex64::new(0.0, 0.7)).unwrap();
        let e = random_ah(3, 8, 1.0);
        let d = expm_differential(&a, &e).unwrap();
        let expect = e.matrix() * Complex64::new(0.7f64.cos(), 0.7f64.sin());
        assert!(hs_distance(&d, &expect).unwrap() < 1e-12);
    }

    #[test]
    fn epcfd_gradient_matches_finite_differences() {
        let ens = sample_map_ensemble(2, 3, 2, 0.5, 1).unwrap();
        let x = random_dataset(4, 5, 2, 2);
        let y = random_dataset(3, 5, 2, 3);
        let grads = grad_epcfd(&ens, &x, &y).unwrap();
        let flat = ens.maps().iter().flat_map(|m| m.params()).collect::<Vec<_>>();
        let f = |p: &[f64]| {
            let mut e = ens.clone();
            set_rank1_params(&mut e, p)?;
            epcfd_sq(&e, &x, &y)
        };
        let rep = check_gradient(f, &flat, grads.concat(), 1e-5).unwrap();
        assert!(rep.max_rel_error < 1e-5, "{}", rep.max_rel_error);
    }

    #[test]
    fn epcfd_gradient_vanishes_for_equal_data_and_zero_maps() {
        let ens = sample_map_ensemble(2, 3, 2, 0.5, 1).unwrap();
        let x = random_dataset(4, 5, 2, 2);
        assert!(grad_epcfd(&ens, &x, &x).unwrap().concat().iter().all(|g| g.abs() < 1e-15));
        let zero = sample_map_ensemble(2, 3, 2, 0.0, 1).unwrap();
        let y = random_dataset(4, 5, 2, 9);
        assert!(grad_epcfd(&zero, &x, &y).unwrap().concat().iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn ehrpcfd_gradient_matches_finite_differences() {
        let m_ens = sample_map_ensemble(2, 2, 2, 0.5, 4).unwrap();
        let m2_ens = sample_rank2_ensemble(2, 4, 2, TimeChannel::Normalized, 0.5, 5).unwrap();
        let cp = |seed: u64, k: usize| -> Vec<Vec<CondDevPath>> {
            (0..2).map(|i| (0..k).map(|s| crate::hrpcf::tests::random_cond_path(2, 5, seed + 10 * i + s as u64)).collect()).collect()
        };
        let (cx, cy) = (cp(100, 3), cp(200, 4));
        let grads = grad_ehrpcfd(&m2_ens, &cx, &cy).unwrap();
        let flat = m2_ens.maps().iter().flat_map(|m| m.as_map().params()).collect::<Vec<_>>();
        let f = |p: &[f64]| {
            let mut e = m2_ens.clone();
            set_rank2_params(&mut e, p)?;
            ehrpcfd_sq(&m_ens, &e, &cx, &cy)
        };
        let rep = check_gradient(f, &flat, grads.concat(), 1e-5).unwrap();
        assert!(rep.max_rel_error < 1e-5, "{}", rep.max_rel_error);
    }

    #[test]
    fn full_batch_stage1_is_monotone() {
        let x = random_dataset(20, 6, 2, 11);
        let y = Dataset::new(x.samples().iter().map(|s| {
            let v: Vec<f64> = s.values().iter().map(|v| 0.6 * v).collect();
            PiecewisePath::new(s.times().to_vec(), v, 2).unwrap()
        }).collect()).unwrap();
        let mut ens = sample_map_ensemble(2, 3, 2, 0.2, 12).unwrap();
        let cfg = AscentConfig { lr: 0.5, iterations: 30, optimizer: OptimizerKind::Sgd, backtracking: true, max_halvings: 10 };
        let curve = train_rank1(&x, &y, &mut ens, &cfg, 1000, 1).unwrap();
        let start = epcfd_sq(&sample_map_ensemble(2, 3, 2, 0.2, 12).unwrap(), &x, &y).unwrap();
        assert!(curve[0] >= start);
        for w in curve.windows(2) {
            assert!(w[1] >= w[0] - 1e-15, "{curve:?}");
        }
        assert!(curve.last().unwrap() > &start);
    }

    #[test]
    fn equal_data_pipeline_gives_zero() {
        let x = random_dataset(24, 5, 1, 13);
        let cfg = DiscConfig {
            n: 2,
            m: 3,
            k2: 2,
            iter1: 5,
            iter3: 5,
            batch: 32,
            regression: RegressionConfig { iterations: 20, hidden: vec![4], ..Default::default() },
            ..Default::default()
        };
        let disc = train_discriminator(&x, &x, &cfg).unwrap();
        assert!(disc.report.stage1.iter().all(|v| *v == 0.0));
        assert_eq!(disc.statistic(&x, &x).unwrap(), 0.0);
        let back = Discriminator::from_checkpoint(&disc.to_checkpoint()).unwrap();
        assert_eq!(back.statistic(&x, &x).unwrap(), 0.0);
        assert_eq!(back.m2_ens, disc.m2_ens);
    }
}
