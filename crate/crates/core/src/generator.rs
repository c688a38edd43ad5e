//! Conditional autoregressive generator and its HRPCF-GAN training loop.

use std::path::PathBuf;

use num_complex::Complex64;
use rand::seq::index::sample as sample_indices;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::data::{eval_metrics, CondPairs, MetricReport};
use crate::error::{arg_err, shape_err, AdevError, Result};
use crate::hrpcf::{hrpcf_with, sample_rank2_ensemble, tape_rank2, CondDevPath, DevMap2, TimeChannel};
use crate::nn::{clip_grad_norm, Mlp, MlpCache, Optimizer, OptimizerKind, SeqCache, SeqModel};
use crate::path::{pcf, tape_increments, Dataset, DevMap, DevTape, MapEnsemble, PiecewisePath};
use crate::regression::{assemble_cond_path, fit_regression, rloss, train_regression, RegressionConfig, RegressionModel, RegressionTrace, TrainCurve};
use crate::seed::{derive_seed, rng_from_seed, Rng};
use crate::train::{ehrpcfd_sq_and_grad, epcfd_sq_and_grad, increment_grads};
use crate::unitary::{sample_map_ensemble, CMat};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorArch {
    pub embed_hidden: Vec<usize>,
    pub latent: usize,
    pub head_hidden: Vec<usize>,
}

impl Default for GeneratorArch {
    fn default() -> Self {
        GeneratorArch { embed_hidden: vec![16], latent: 8, head_hidden: vec![32] }
    }
}

/// `o_{t+1} = W o_t + F_a([F_e(o_{t-p+1..t} − o_t)]_p, z_t)`.
///
/// The embedding LSTM reads the last `p` values relative to the latest one;
/// the head maps the final latent and the noise to `ℝ^d`. `W` starts at `I`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorModel {
    pub embed: SeqModel,
    pub head: Mlp,
    pub skip: Vec<f64>,
    d: usize,
    p: usize,
    t: usize,
    noise_dim: usize,
}

pub struct StepCache {
    seq: SeqCache,
    mlp: MlpCache,
    last: Vec<f64>,
}

/// Joint path values `(T+1) × d` and per-step caches of one rollout.
pub struct RolloutTrace {
    pub joint: Vec<f64>,
    steps: Vec<StepCache>,
}

impl GeneratorModel {
    pub fn new(d: usize, p: usize, t: usize, noise_dim: usize, arch: &GeneratorArch, seed: u64) -> Result<Self> {
        if d == 0 || p == 0 || p >= t || arch.latent == 0 {
            return arg_err("generator needs d > 0, 0 < p < T and a positive latent size");
        }
        let mut rng = rng_from_seed(seed);
        let embed = SeqModel::new(d, &arch.embed_hidden, arch.latent, &mut rng);
        let mut sizes = vec![arch.latent + noise_dim];
        sizes.extend(&arch.head_hidden);
        sizes.push(d);
        let mut head = Mlp::new(&sizes, &mut rng);
        // small head so the initial model is close to the skip connection
        head.params.iter_mut().for_each(|w| *w *= 0.1);
        let skip = (0..d * d).map(|k| if k / d == k % d { 1.0 } else { 0.0 }).collect();
        Ok(GeneratorModel { embed, head, skip, d, p, t, noise_dim })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn horizon(&self) -> usize {
        self.t
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn latent(&self) -> usize {
        self.embed.out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.embed.params.len() + self.head.params.len() + self.skip.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v = self.embed.params.clone();
        v.extend(&self.head.params);
        v.extend(&self.skip);
        v
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return shape_err("generator parameter vector has the wrong length");
        }
        let (e, rest) = p.split_at(self.embed.params.len());
        let (h, s) = rest.split_at(self.head.params.len());
        self.embed.params.copy_from_slice(e);
        self.head.params.copy_from_slice(h);
        self.skip.copy_from_slice(s);
        Ok(())
    }

    fn step_forward(&self, window: &[f64], z: &[f64]) -> (Vec<f64>, StepCache) {
        let d = self.d;
        let last = window[(self.p - 1) * d..].to_vec();
        let rel: Vec<f64> = window.iter().enumerate().map(|(k, v)| v - last[k % d]).collect();
        let (hs, seq) = self.embed.forward(&rel);
        let lat = self.latent();
        let mut x = hs[(self.p - 1) * lat..].to_vec();
        x.extend_from_slice(z);
        let (mut o, mlp) = self.head.forward(&x);
        for (r, out) in o.iter_mut().enumerate() {
            *out += (0..d).map(|c| self.skip[r * d + c] * last[c]).sum::<f64>();
        }
        (o, StepCache { seq, mlp, last })
    }

    /// Accumulates parameter gradients and returns `∂L/∂window`.
    fn step_backward(&self, cache: &StepCache, d_o: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let d = self.d;
        let (ge, rest) = grad.split_at_mut(self.embed.params.len());
        let (gh, gs) = rest.split_at_mut(self.head.params.len());
        let mut d_last = vec![0.0; d];
        for r in 0..d {
            for c in 0..d {
                gs[r * d + c] += d_o[r] * cache.last[c];
                d_last[c] += self.skip[r * d + c] * d_o[r];
            }
        }
        let dx = self.head.backward(&cache.mlp, d_o, gh);
        let lat = self.latent();
        let mut d_seq = vec![0.0; self.p * lat];
        d_seq[(self.p - 1) * lat..].copy_from_slice(&dx[..lat]);
        let mut d_win = self.embed.backward(&cache.seq, &d_seq, ge);
        for k in 0..self.p * d {
            d_last[k % d] -= d_win[k];
        }
        for c in 0..d {
            d_win[(self.p - 1) * d + c] += d_last[c];
        }
        d_win
    }

    /// One next value from the last `p` values (`p × d`, row-major).
    pub fn generate_step(&self, past_window: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        if past_window.len() != self.p * self.d || z.len() != self.noise_dim {
            return shape_err(format!("generate_step expects a {}x{} window and {} noise values", self.p, self.d, self.noise_dim));
        }
        Ok(self.step_forward(past_window, z).0)
    }

    pub fn rollout_trace(&self, past: &[f64], noise: &[Vec<f64>]) -> Result<RolloutTrace> {
        let d = self.d;
        if past.len() != (self.p + 1) * d || noise.len() != self.t - self.p {
            return shape_err(format!(
                "rollout expects {} past points and {} noise vectors",
                self.p + 1,
                self.t - self.p
            ));
        }
        if noise.iter().any(|z| z.len() != self.noise_dim) {
            return shape_err("noise vectors have the wrong dimension");
        }
        let mut joint = past.to_vec();
        let mut steps = Vec::with_capacity(noise.len());
        for (s, z) in noise.iter().enumerate() {
            let k = self.p + 1 + s;
            let (o, c) = self.step_forward(&joint[(k - self.p) * d..k * d], z);
            joint.extend(o);
            steps.push(c);
        }
        Ok(RolloutTrace { joint, steps })
    }

    /// Future values (`(T − p) × d`) given past points `0..=p` and per-step noise.
    pub fn rollout(&self, past: &[f64], noise: &[Vec<f64>]) -> Result<Vec<f64>> {
        let tr = self.rollout_trace(past, noise)?;
        Ok(tr.joint[(self.p + 1) * self.d..].to_vec())
    }

    /// Backpropagates `∂L/∂joint` through the autoregressive rollout into `grad`.
    pub fn rollout_backward(&self, trace: &RolloutTrace, d_joint: &[f64], grad: &mut [f64]) {
        let d = self.d;
        let mut dj = d_joint.to_vec();
        for (s, c) in trace.steps.iter().enumerate().rev() {
            let k = self.p + 1 + s;
            let d_o = dj[k * d..(k + 1) * d].to_vec();
            if d_o.iter().all(|g| *g == 0.0) {
                continue;
            }
            let dw = self.step_backward(c, &d_o, grad);
            for (a, b) in dj[(k - self.p) * d..k * d].iter_mut().zip(dw) {
                *a += b;
            }
        }
    }

    pub fn sample_noise(&self, rng: &mut Rng) -> Vec<Vec<f64>> {
        (0..self.t - self.p).map(|_| (0..self.noise_dim).map(|_| StandardNormal.sample(rng)).collect()).collect()
    }

    /// One generated joint path per sample of `data`, conditioned on its past.
    pub fn generate(&self, data: &Dataset, seed: u64) -> Result<Dataset> {
        self.check_data(data)?;
        let paths: Vec<PiecewisePath> = data
            .samples()
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let noise = self.sample_noise(&mut rng_from_seed(derive_seed(seed, i as u64)));
                let tr = self.rollout_trace(&s.values()[..(self.p + 1) * self.d], &noise)?;
                PiecewisePath::new(s.times().to_vec(), tr.joint, self.d)
            })
            .collect::<Result<_>>()?;
        Dataset::new(paths)
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.dim() != self.d || data.path_len() != self.t + 1 {
            return shape_err(format!("generator expects paths of dimension {} with {} points", self.d, self.t + 1));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let eh = self.embed.hidden_sizes();
        let hh = &self.head.sizes()[1..self.head.sizes().len() - 1];
        let mut hidden = vec![self.p as u32, self.latent() as u32, eh.len() as u32];
        hidden.extend(eh.iter().map(|&h| h as u32));
        hidden.extend(hh.iter().map(|&h| h as u32));
        Checkpoint {
            kind: CheckpointKind::Generator,
            n: self.noise_dim as u32,
            d: self.d as u32,
            t: self.t as u32,
            hidden,
            blocks: vec![self.embed.params.clone(), self.head.params.clone(), self.skip.clone()],
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let bad = || AdevError::Checkpoint("malformed generator checkpoint".into());
        if c.kind != CheckpointKind::Generator || c.blocks.len() != 3 || c.hidden.len() < 3 {
            return Err(bad());
        }
        let h: Vec<usize> = c.hidden.iter().map(|&v| v as usize).collect();
        let (p, latent, ne) = (h[0], h[1], h[2]);
        if h.len() < 3 + ne {
            return Err(bad());
        }
        let arch = GeneratorArch { embed_hidden: h[3..3 + ne].to_vec(), latent, head_hidden: h[3 + ne..].to_vec() };
        let (d, t, nz) = (c.d as usize, c.t as usize, c.n as usize);
        let mut g = GeneratorModel::new(d, p, t, nz, &arch, 0)?;
        let flat: Vec<f64> = c.blocks.concat();
        if c.blocks[2].len() != d * d || flat.len() != g.param_count() {
            return Err(bad());
        }
        g.set_params(&flat)?;
        Ok(g)
    }
}

/// Conditional-expectation pairs and metrics of `model` on held-out data.
pub fn evaluate_generator(model: &GeneratorModel, held_out: &Dataset, draws: usize, seed: u64) -> Result<MetricReport> {
    if draws == 0 {
        return arg_err("at least one draw per past is needed");
    }
    let fake = model.generate(held_out, derive_seed(seed, 0))?;
    let (p, d) = (model.p, model.d);
    let cut = (p + 1) * d;
    let per: Vec<Vec<Vec<f64>>> = held_out
        .samples()
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = rng_from_seed(derive_seed(derive_seed(seed, 1), i as u64));
            (0..draws)
                .map(|_| model.rollout(&s.values()[..cut], &model.sample_noise(&mut rng)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let cond = CondPairs { real_future: held_out.samples().iter().map(|s| s.values()[cut..].to_vec()).collect(), fake_draws: per };
    eval_metrics(held_out, &fake, Some(&cond))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub p: usize,
    pub noise_dim: usize,
    pub arch: GeneratorArch,
    pub n: usize,
    pub m: usize,
    pub k1: usize,
    pub k2: usize,
    pub init_std: f64,
    pub iters_a: usize,
    pub iters_c: usize,
    pub batch: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub optimizer: OptimizerKind,
    pub clip: f64,
    pub decay: f64,
    pub decay_every: usize,
    /// Generator steps between fake-regression fine-tunes.
    pub iter_r: usize,
    pub finetune_samples: usize,
    pub finetune: RegressionConfig,
    pub regression: RegressionConfig,
    pub rank2_time: TimeChannel,
    /// Where to write the last good generator if training diverges.
    pub failure_checkpoint: Option<PathBuf>,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            p: 5,
            noise_dim: 3,
            arch: GeneratorArch::default(),
            n: 5,
            m: 13,
            k1: 5,
            k2: 10,
            init_std: 0.2,
            iters_a: 2000,
            iters_c: 1000,
            batch: 64,
            lr_g: 1e-4,
            lr_d: 2e-3,
            optimizer: OptimizerKind::adam(),
            clip: 10.0,
            decay: 0.97,
            decay_every: 500,
            iter_r: 500,
            finetune_samples: 256,
            finetune: RegressionConfig { iterations: 100, patience: 100, ..Default::default() },
            regression: RegressionConfig::default(),
            rank2_time: TimeChannel::Normalized,
            failure_checkpoint: None,
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.k1 == 0 || self.k2 == 0 || self.batch == 0 || self.iter_r == 0 || self.decay_every == 0 {
            return arg_err("n, m, k1, k2, batch, iter_r and decay_every must be positive");
        }
        if !(self.lr_g > 0.0) || !(self.lr_d > 0.0) || !(self.clip > 0.0) || !(self.decay > 0.0 && self.decay <= 1.0) {
            return arg_err("learning rates and clip must be positive, decay in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub iteration: usize,
    pub rloss_before: Vec<f64>,
    pub rloss_after: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GanReport {
    /// EPCFD² per phase-A iteration, before the discriminator update.
    pub phase_a: Vec<f64>,
    pub phase_b: Vec<TrainCurve>,
    /// EHRPCFD² per phase-C iteration, before the discriminator update.
    pub phase_c: Vec<f64>,
    pub finetune: Vec<FinetuneRecord>,
}

pub struct GanOutcome {
    pub model: GeneratorModel,
    /// Snapshot after phase A.
    pub phase_a_model: GeneratorModel,
    pub m_ens: MapEnsemble,
    pub m2_ens: MapEnsemble<DevMap2>,
    pub real_regs: Vec<RegressionModel>,
    pub fake_regs: Vec<RegressionModel>,
    pub report: GanReport,
}

/// Time channel `(t_i − t_0)/span` prepended to `(T+1) × d` values.
fn augment(times: &[f64], values: &[f64], d: usize) -> Vec<f64> {
    let span = times[times.len() - 1] - times[0];
    let mut out = Vec::with_capacity(times.len() * (d + 1));
    for (t, x) in times.iter().zip(values.chunks(d)) {
        out.push((t - times[0]) / span);
        out.extend_from_slice(x);
    }
    out
}

fn increments(values: &[f64], d: usize) -> Vec<f64> {
    values.windows(2 * d).step_by(d).flat_map(|w| (0..d).map(move |c| w[d + c] - w[c])).collect()
}

/// Gradients on increments of an augmented path mapped to the `(T+1) × d` values.
fn add_increment_grads(ig: &[f64], d: usize, out: &mut [f64]) {
    for (t, g) in ig.chunks(d + 1).enumerate() {
        for c in 0..d {
            out[(t + 1) * d + c] += g[1 + c];
            out[t * d + c] -= g[1 + c];
        }
    }
}

/// `EPCFD²(real, fake)` with `∂/∂fake values` per sample; `phi_real[i]` is the real PCF under `M_i`.
fn pcf_loss_and_grads(m_ens: &MapEnsemble, phi_real: &[CMat], fake_aug: &[Vec<f64>], d: usize) -> Result<(f64, Vec<Vec<f64>>)> {
    let scale = 1.0 / m_ens.len() as f64;
    let nf = fake_aug.len() as f64;
    let len = fake_aug[0].len() / (d + 1);
    let mut loss = 0.0;
    let mut grads = vec![vec![0.0; len * d]; fake_aug.len()];
    for (m, pr) in m_ens.maps().iter().zip(phi_real) {
        let tapes: Vec<DevTape> = fake_aug.par_iter().map(|v| tape_increments(m, &increments(v, d + 1))).collect::<Result<_>>()?;
        let n = m.lie_dim();
        let mut mean = CMat::zeros(n, n);
        for t in &tapes {
            mean += t.result();
        }
        mean /= Complex64::new(nf, 0.0);
        let diff = pr - mean;
        loss += scale * diff.iter().map(|z| z.norm_sqr()).sum::<f64>();
        let g = diff * Complex64::new(-2.0 * scale / nf, 0.0);
        grads.par_iter_mut().zip(&tapes).for_each(|(out, tape)| {
            let ig = increment_grads(m, &tape.backward_final(&g));
            add_increment_grads(&ig, d, out);
        });
    }
    Ok((loss, grads))
}

struct FakeCond {
    tape: DevTape,
    trace: RegressionTrace,
    cond: CondDevPath,
    rank2: Vec<DevTape>,
}

fn fake_cond_forward(m: &DevMap, reg: &RegressionModel, m2_ens: &MapEnsemble<DevMap2>, aug: &[f64], d: usize) -> Result<FakeCond> {
    let tape = tape_increments(m, &increments(aug, d + 1))?;
    let trace = reg.forward_values(aug);
    let cond = assemble_cond_path(&tape.prefixes, &trace.outputs)?;
    let rank2 = m2_ens.maps().iter().map(|m2| tape_rank2(m2, &cond)).collect::<Result<_>>()?;
    Ok(FakeCond { tape, trace, cond, rank2 })
}

/// `EHRPCFD²(real, fake)` with `∂/∂fake values` per sample through the fake
/// regressions, the prefix developments and the rank-2 developments.
fn hrpcf_loss_and_grads(
    m_ens: &MapEnsemble,
    fake_regs: &[RegressionModel],
    m2_ens: &MapEnsemble<DevMap2>,
    phi2_real: &[Vec<CMat>],
    fake_aug: &[Vec<f64>],
    d: usize,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let (k1, k2) = (m_ens.len(), m2_ens.len());
    let scale = 1.0 / (k1 * k2) as f64;
    let nf = fake_aug.len() as f64;
    let len = fake_aug[0].len() / (d + 1);
    let fwd: Vec<Vec<FakeCond>> = fake_aug
        .par_iter()
        .map(|v| m_ens.maps().iter().zip(fake_regs).map(|(m, r)| fake_cond_forward(m, r, m2_ens, v, d)).collect())
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut g_out = vec![vec![CMat::zeros(0, 0); k2]; k1];
    for i in 0..k1 {
        for (j, m2) in m2_ens.maps().iter().enumerate() {
            let mm = m2.lie_dim();
            let mut mean = CMat::zeros(mm, mm);
            for f in &fwd {
                mean += f[i].rank2[j].result();
            }
            mean /= Complex64::new(nf, 0.0);
            let diff = &phi2_real[i][j] - mean;
            loss += scale * diff.iter().map(|z| z.norm_sqr()).sum::<f64>();
            g_out[i][j] = diff * Complex64::new(-2.0 * scale / nf, 0.0);
        }
    }
    let grads: Vec<Vec<f64>> = fwd
        .par_iter()
        .map(|per_map| {
            let mut out = vec![0.0; len * d];
            for (i, f) in per_map.iter().enumerate() {
                let n = f.cond.n();
                let mut gp = vec![CMat::zeros(n, n); len];
                for (j, m2) in m2_ens.maps().iter().enumerate() {
                    let ig = increment_grads(m2.as_map(), &f.rank2[j].backward_final(&g_out[i][j]));
                    for (a, b) in gp.iter_mut().zip(m2.path_gradient(&ig)) {
                        *a += b;
                    }
                }
                let last = len - 1;
                let mut g_prefix = Vec::with_capacity(len);
                let mut g_f = Vec::with_capacity(len);
                for t in 0..len {
                    if t == last {
                        g_prefix.push(gp[t].clone());
                        g_f.push(CMat::zeros(n, n));
                    } else {
                        g_prefix.push(&gp[t] * f.trace.outputs[t].adjoint());
                        g_f.push(f.tape.prefixes[t].adjoint() * &gp[t]);
                    }
                }
                let refs: Vec<Option<&CMat>> = g_prefix.iter().map(Some).collect();
                let ig = increment_grads(&m_ens.maps()[i], &f.tape.backward(&refs));
                add_increment_grads(&ig, d, &mut out);
                let mut scratch = vec![0.0; fake_regs[i].net.params.len()];
                let gv = fake_regs[i].backward(&f.trace, &g_f, &mut scratch);
                for (t, g) in gv.chunks(d + 1).enumerate() {
                    for c in 0..d {
                        out[t * d + c] += g[1 + c];
                    }
                }
            }
            out
        })
        .collect();
    Ok((loss, grads))
}

/// Sums per-sample rollout gradients in fixed chunks of 8.
fn rollout_param_grad(model: &GeneratorModel, traces: &[RolloutTrace], d_joint: &[Vec<f64>]) -> Vec<f64> {
    let np = model.param_count();
    let parts: Vec<Vec<f64>> = traces
        .par_chunks(8)
        .zip(d_joint.par_chunks(8))
        .map(|(tc, gc)| {
            let mut g = vec![0.0; np];
            for (tr, dj) in tc.iter().zip(gc) {
                model.rollout_backward(tr, dj, &mut g);
            }
            g
        })
        .collect();
    let mut g = vec![0.0; np];
    for p in parts {
        for (a, b) in g.iter_mut().zip(p) {
            *a += b;
        }
    }
    g
}

struct FakeBatch {
    traces: Vec<RolloutTrace>,
    aug: Vec<Vec<f64>>,
}

fn fake_batch(model: &GeneratorModel, real: &Dataset, idx: &[usize], noise: &[Vec<Vec<f64>>]) -> Result<FakeBatch> {
    let cut = (model.p + 1) * model.d;
    let traces: Vec<RolloutTrace> = idx
        .par_iter()
        .zip(noise)
        .map(|(&i, z)| model.rollout_trace(&real.samples()[i].values()[..cut], z))
        .collect::<Result<_>>()?;
    let aug = traces.iter().map(|t| augment(real.times(), &t.joint, model.d)).collect();
    Ok(FakeBatch { traces, aug })
}

fn aug_dataset(times: &[f64], aug: &[Vec<f64>], d: usize) -> Result<Dataset> {
    Dataset::new(aug.iter().map(|v| PiecewisePath::new(times.to_vec(), v.clone(), d + 1)).collect::<Result<_>>()?)
}

fn flat_params<M>(ens: &MapEnsemble<M>, f: impl Fn(&M) -> Vec<f64>) -> Vec<f64> {
    ens.maps().iter().flat_map(f).collect()
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Phase A: PCF-GAN on `EPCFD²`. Phase B: real regressions per `M_i`, copied
/// as fake regressions. Phase C: min–max on `EHRPCFD²` with the fake
/// regressions re-fitted every `iter_r` generator steps.
pub fn train_hrpcf_gan(data: &Dataset, cfg: &GanConfig) -> Result<GanOutcome> {
    cfg.validate()?;
    let d = data.dim();
    let t = data.path_len() - 1;
    if cfg.p == 0 || cfg.p >= t {
        return arg_err(format!("past length p = {} must lie in 1..T (T = {t})", cfg.p));
    }
    let seed = cfg.seed;
    let mut model = GeneratorModel::new(d, cfg.p, t, cfg.noise_dim, &cfg.arch, derive_seed(seed, 30))?;
    let real_aug = data.time_augment();
    let mut m_ens = sample_map_ensemble(d + 1, cfg.n, cfg.k1, cfg.init_std, derive_seed(seed, 31))?;
    let mut m2_ens = sample_rank2_ensemble(cfg.n, cfg.m, cfg.k2, cfg.rank2_time, cfg.init_std, derive_seed(seed, 32))?;
    let mut rng = rng_from_seed(derive_seed(seed, 33));
    let mut opt_g = Optimizer::new(cfg.optimizer, cfg.lr_g, model.param_count());
    let np1 = m_ens.maps()[0].param_count();
    let mut opt_d1 = Optimizer::new(cfg.optimizer, cfg.lr_d, np1 * cfg.k1);
    let np2 = m2_ens.maps()[0].as_map().param_count();
    let mut opt_d2 = Optimizer::new(cfg.optimizer, cfg.lr_d, np2 * cfg.k2);
    let mut report = GanReport::default();
    let mut last_good = model.clone();
    let b = cfg.batch.min(data.len());

    let fail = |good: &GeneratorModel, phase: &str, it: usize| -> AdevError {
        if let Some(p) = &cfg.failure_checkpoint {
            let _ = good.to_checkpoint().save(p);
        }
        AdevError::TrainingFailure(format!("non-finite loss in phase {phase} at iteration {it}"))
    };
    let draw = |rng: &mut Rng, model: &GeneratorModel| -> (Vec<usize>, Vec<Vec<Vec<f64>>>) {
        let mut idx = sample_indices(rng, data.len(), b).into_vec();
        idx.sort_unstable();
        let noise = (0..b).map(|_| model.sample_noise(rng)).collect();
        (idx, noise)
    };
    let decay = |global: usize, opts: &mut [&mut Optimizer]| {
        if (global + 1) % cfg.decay_every == 0 {
            for o in opts {
                o.lr *= cfg.decay;
            }
        }
    };

    for it in 0..cfg.iters_a {
        let (idx, noise) = draw(&mut rng, &model);
        let fb = fake_batch(&model, data, &idx, &noise)?;
        let real_b = real_aug.subset(&idx)?;
        let fake_b = aug_dataset(data.times(), &fb.aug, d)?;
        let (obj, g) = epcfd_sq_and_grad(&m_ens, &real_b, &fake_b)?;
        let mut gd: Vec<f64> = g.concat().iter().map(|v| -v).collect();
        if !obj.is_finite() || !all_finite(&gd) {
            return Err(fail(&last_good, "A", it));
        }
        report.phase_a.push(obj);
        clip_grad_norm(&mut gd, cfg.clip);
        let mut p = flat_params(&m_ens, |m| m.params());
        opt_d1.step(&mut p, &gd);
        for (m, c) in m_ens.maps_mut().iter_mut().zip(p.chunks(np1)) {
            m.set_params(c)?;
        }
        let phi_real = m_ens.maps().iter().map(|m| pcf(m, &real_b)).collect::<Result<Vec<_>>>()?;
        let (loss, dj) = pcf_loss_and_grads(&m_ens, &phi_real, &fb.aug, d)?;
        let mut gg = rollout_param_grad(&model, &fb.traces, &dj);
        if !loss.is_finite() || !all_finite(&gg) {
            return Err(fail(&last_good, "A", it));
        }
        clip_grad_norm(&mut gg, cfg.clip);
        let mut p = model.params();
        opt_g.step(&mut p, &gg);
        model.set_params(&p)?;
        last_good = model.clone();
        decay(it, &mut [&mut opt_g, &mut opt_d1, &mut opt_d2]);
    }
    let phase_a_model = model.clone();

    let mut real_regs = Vec::with_capacity(cfg.k1);
    for (i, m) in m_ens.maps().iter().enumerate() {
        let rc = RegressionConfig { seed: derive_seed(seed, 100 + i as u64), ..cfg.regression.clone() };
        let (r, curve) = train_regression(&real_aug, m, &rc)?;
        real_regs.push(r);
        report.phase_b.push(curve);
    }
    let mut fake_regs = real_regs.clone();
    let cond_real: Vec<Vec<CondDevPath>> = m_ens
        .maps()
        .iter()
        .zip(&real_regs)
        .map(|(m, r)| crate::regression::predict_cond_dev(r, &real_aug, m))
        .collect::<Result<_>>()?;

    for it in 0..cfg.iters_c {
        if it % cfg.iter_r == 0 && cfg.finetune.iterations > 0 {
            let n_ft = cfg.finetune_samples.max(2);
            let mut ft_rng = rng_from_seed(derive_seed(seed, 1000 + it as u64));
            let idx: Vec<usize> = (0..n_ft).map(|k| k % data.len()).collect();
            let noise: Vec<_> = (0..n_ft).map(|_| model.sample_noise(&mut ft_rng)).collect();
            let fb = fake_batch(&model, data, &idx, &noise)?;
            let fake_ds = aug_dataset(data.times(), &fb.aug, d)?;
            let mut rec = FinetuneRecord { iteration: it, rloss_before: Vec::new(), rloss_after: Vec::new() };
            for (i, (m, r)) in m_ens.maps().iter().zip(fake_regs.iter_mut()).enumerate() {
                rec.rloss_before.push(rloss(r, &fake_ds, m)?);
                let rc = RegressionConfig { seed: derive_seed(seed, 2000 + (it * cfg.k1 + i) as u64), ..cfg.finetune.clone() };
                fit_regression(r, &fake_ds, m, &rc)?;
                rec.rloss_after.push(rloss(r, &fake_ds, m)?);
            }
            report.finetune.push(rec);
        }
        let (idx, noise) = draw(&mut rng, &model);
        let fb = fake_batch(&model, data, &idx, &noise)?;
        let fake_b = aug_dataset(data.times(), &fb.aug, d)?;
        let cx: Vec<Vec<CondDevPath>> = cond_real.iter().map(|c| idx.iter().map(|&s| c[s].clone()).collect()).collect();
        let cy: Vec<Vec<CondDevPath>> = m_ens
            .maps()
            .iter()
            .zip(&fake_regs)
            .map(|(m, r)| crate::regression::predict_cond_dev(r, &fake_b, m))
            .collect::<Result<_>>()?;
        let (obj, g) = ehrpcfd_sq_and_grad(&m2_ens, &cx, &cy)?;
        let mut gd: Vec<f64> = g.concat().iter().map(|v| -v).collect();
        if !obj.is_finite() || !all_finite(&gd) {
            return Err(fail(&last_good, "C", it));
        }
        report.phase_c.push(obj);
        clip_grad_norm(&mut gd, cfg.clip);
        let mut p = flat_params(&m2_ens, |m| m.as_map().params());
        opt_d2.step(&mut p, &gd);
        for (m, c) in m2_ens.maps_mut().iter_mut().zip(p.chunks(np2)) {
            m.as_map_mut().set_params(c)?;
        }
        let phi2_real: Vec<Vec<CMat>> =
            cx.iter().map(|c| m2_ens.maps().iter().map(|m2| hrpcf_with(m2, c)).collect::<Result<Vec<_>>>()).collect::<Result<_>>()?;
        let (loss, dj) = hrpcf_loss_and_grads(&m_ens, &fake_regs, &m2_ens, &phi2_real, &fb.aug, d)?;
        let mut gg = rollout_param_grad(&model, &fb.traces, &dj);
        if !loss.is_finite() || !all_finite(&gg) {
            return Err(fail(&last_good, "C", it));
        }
        clip_grad_norm(&mut gg, cfg.clip);
        let mut p = model.params();
        opt_g.step(&mut p, &gg);
        model.set_params(&p)?;
        last_good = model.clone();
        decay(cfg.iters_a + it, &mut [&mut opt_g, &mut opt_d1, &mut opt_d2]);
    }

    Ok(GanOutcome { model, phase_a_model, m_ens, m2_ens, real_regs, fake_regs, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{simulate_ar1, simulate_fbm, Grid};
    use crate::regression::predict_cond_dev;
    use crate::train::check_gradient;

    /// `max |a − f| / max |f|`; entry-wise ratios are dominated by roundoff on tiny entries here.
    fn norm_rel_error(rep: &crate::train::GradReport) -> f64 {
        let err = rep.analytic.iter().zip(&rep.finite_difference).map(|(a, f)| (a - f).abs()).fold(0.0, f64::max);
        err / rep.finite_difference.iter().map(|f| f.abs()).fold(0.0, f64::max)
    }

    fn tiny_model(d: usize, p: usize, t: usize, seed: u64) -> GeneratorModel {
        GeneratorModel::new(d, p, t, 2, &GeneratorArch { embed_hidden: vec![4], latent: 3, head_hidden: vec![5] }, seed).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_and_step_is_deterministic() {
        let mut g = tiny_model(2, 3, 6, 1);
        let w = [0.3, -0.1, 0.5, 0.2, 0.9, 1.0];
        let z = [0.4, -1.2];
        assert_eq!(g.generate_step(&w, &z).unwrap(), g.generate_step(&w, &z).unwrap());
        g.set_params(&vec![0.0; g.param_count()]).unwrap();
        assert_eq!(g.generate_step(&w, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let fut = g.rollout(&[0.0; 8], &g.sample_noise(&mut rng_from_seed(2))).unwrap();
        assert!(fut.iter().all(|v| *v == 0.0));
        assert!(g.generate_step(&w[..4], &z).is_err());
    }

    #[test]
    fn single_step_rollout_and_shapes() {
        let g = tiny_model(1, 4, 5, 3);
        let past = [0.0, 0.1, -0.2, 0.3, 0.05];
        let z = vec![vec![0.7, -0.3]];
        assert_eq!(g.rollout(&past, &z).unwrap(), g.generate_step(&past[1..], &z[0]).unwrap());
        let data = simulate_fbm(0.3, 1, 5, 4, 1).unwrap();
        let fake = g.generate(&data, 9).unwrap();
        assert_eq!(fake.path_len(), 6);
        for (r, f) in data.samples().iter().zip(fake.samples()) {
            assert_eq!(&r.values()[..5], &f.values()[..5]);
        }
    }

    #[test]
    fn output_moments_match_monte_carlo_reference() {
        let g = tiny_model(1, 2, 4, 5);
        let w = [0.2, -0.4];
        let draws = |seed: u64, n: usize| -> (f64, f64) {
            let mut rng = rng_from_seed(seed);
            let v: Vec<f64> = (0..n)
                .map(|_| {
                    let z: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
                    g.generate_step(&w, &z).unwrap()[0]
                })
                .collect();
            let mean = v.iter().sum::<f64>() / n as f64;
            (mean, v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64)
        };
        let (m_ref, v_ref) = draws(1, 10_000);
        let (m, v) = draws(2, 2_000);
        assert!(v_ref.is_finite() && v_ref > 0.0);
        assert!((m - m_ref).abs() < 4.0 * (v_ref / 2_000.0).sqrt());
        assert!((v / v_ref - 1.0).abs() < 0.2);
    }

    #[test]
    fn rollout_gradient_matches_finite_differences() {
        let g = tiny_model(2, 2, 5, 7);
        let mut rng = rng_from_seed(3);
        let past = [0.0, 0.0, 0.2, -0.1, 0.3, 0.4];
        let noise = g.sample_noise(&mut rng);
        let weights: Vec<f64> = (0..12).map(|k| ((k * 7 % 5) as f64 - 2.0) * 0.3).collect();
        let f = |p: &[f64]| {
            let mut m = g.clone();
            m.set_params(p)?;
            let tr = m.rollout_trace(&past, &noise)?;
            Ok(tr.joint.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>())
        };
        let tr = g.rollout_trace(&past, &noise).unwrap();
        let mut grad = vec![0.0; g.param_count()];
        g.rollout_backward(&tr, &weights, &mut grad);
        let rep = check_gradient(f, &g.params(), grad, 1e-6).unwrap();
        assert!(norm_rel_error(&rep) < 1e-6, "{}", norm_rel_error(&rep));
    }

    fn tiny_setup() -> (Dataset, GeneratorModel, MapEnsemble, MapEnsemble<DevMap2>, Vec<RegressionModel>) {
        let data = simulate_fbm(0.3, 1, 4, 6, 2).unwrap();
        let g = tiny_model(1, 2, 4, 4);
        let m_ens = sample_map_ensemble(2, 2, 2, 0.5, 5).unwrap();
        let m2 = sample_rank2_ensemble(2, 3, 2, TimeChannel::Normalized, 0.5, 6).unwrap();
        let regs = (0..2).map(|i| RegressionModel::new(2, 2, 4, &[4], 10 + i).unwrap()).collect();
        (data, g, m_ens, m2, regs)
    }

    #[test]
    fn pcf_generator_gradient_matches_finite_differences() {
        let (data, g, m_ens, _, _) = tiny_setup();
        let idx: Vec<usize> = (0..6).collect();
        let mut rng = rng_from_seed(8);
        let noise: Vec<_> = idx.iter().map(|_| g.sample_noise(&mut rng)).collect();
        let real = data.time_augment();
        let phi: Vec<CMat> = m_ens.maps().iter().map(|m| pcf(m, &real).unwrap()).collect();
        let f = |p: &[f64]| {
            let mut m = g.clone();
            m.set_params(p)?;
            let fb = fake_batch(&m, &data, &idx, &noise)?;
            Ok(pcf_loss_and_grads(&m_ens, &phi, &fb.aug, 1)?.0)
        };
        let fb = fake_batch(&g, &data, &idx, &noise).unwrap();
        let (loss, dj) = pcf_loss_and_grads(&m_ens, &phi, &fb.aug, 1).unwrap();
        let direct = crate::path::epcfd_sq(&m_ens, &real, &aug_dataset(data.times(), &fb.aug, 1).unwrap()).unwrap();
        assert!((loss - direct).abs() < 1e-12);
        let grad = rollout_param_grad(&g, &fb.traces, &dj);
        let rep = check_gradient(f, &g.params(), grad, 1e-6).unwrap();
        assert!(norm_rel_error(&rep) < 1e-6, "{}", norm_rel_error(&rep));
    }

    #[test]
    fn hrpcf_generator_gradient_matches_finite_differences() {
        let (data, g, m_ens, m2, regs) = tiny_setup();
        let idx: Vec<usize> = (0..6).collect();
        let mut rng = rng_from_seed(9);
        let noise: Vec<_> = idx.iter().map(|_| g.sample_noise(&mut rng)).collect();
        let real = data.time_augment();
        let phi2: Vec<Vec<CMat>> = m_ens
            .maps()
            .iter()
            .zip(&regs)
            .map(|(m, r)| {
                let c = predict_cond_dev(r, &real, m).unwrap();
                m2.maps().iter().map(|m2| hrpcf_with(m2, &c).unwrap()).collect()
            })
            .collect();
        let f = |p: &[f64]| {
            let mut m = g.clone();
            m.set_params(p)?;
            let fb = fake_batch(&m, &data, &idx, &noise)?;
            Ok(hrpcf_loss_and_grads(&m_ens, &regs, &m2, &phi2, &fb.aug, 1)?.0)
        };
        let fb = fake_batch(&g, &data, &idx, &noise).unwrap();
        let (loss, dj) = hrpcf_loss_and_grads(&m_ens, &regs, &m2, &phi2, &fb.aug, 1).unwrap();
        // loss agrees with the library distance on the same conditional paths
        let fake_ds = aug_dataset(data.times(), &fb.aug, 1).unwrap();
        let cx: Vec<_> = m_ens.maps().iter().zip(&regs).map(|(m, r)| predict_cond_dev(r, &real, m).unwrap()).collect();
        let cy: Vec<_> = m_ens.maps().iter().zip(&regs).map(|(m, r)| predict_cond_dev(r, &fake_ds, m).unwrap()).collect();
        let direct = crate::hrpcf::ehrpcfd_sq(&m_ens, &m2, &cx, &cy).unwrap();
        assert!((loss - direct).abs() < 1e-10, "{loss} vs {direct}");
        let grad = rollout_param_grad(&g, &fb.traces, &dj);
        let rep = check_gradient(f, &g.params(), grad, 1e-6).unwrap();
        assert!(norm_rel_error(&rep) < 1e-6, "{}", norm_rel_error(&rep));
    }

    #[test]
    fn teacher_forced_objective_is_zero() {
        // fake = real and fake regressions = real regressions
        let (data, _, m_ens, m2, regs) = tiny_setup();
        let real = data.time_augment();
        let aug: Vec<Vec<f64>> = real.samples().iter().map(|s| s.values().to_vec()).collect();
        let phi: Vec<CMat> = m_ens.maps().iter().map(|m| pcf(m, &real).unwrap()).collect();
        assert!(pcf_loss_and_grads(&m_ens, &phi, &aug, 1).unwrap().0 < 1e-28);
        let cx: Vec<_> = m_ens.maps().iter().zip(&regs).map(|(m, r)| predict_cond_dev(r, &real, m).unwrap()).collect();
        let phi2: Vec<Vec<CMat>> = cx.iter().map(|c| m2.maps().iter().map(|m2| hrpcf_with(m2, c).unwrap()).collect()).collect();
        assert!(hrpcf_loss_and_grads(&m_ens, &regs, &m2, &phi2, &aug, 1).unwrap().0 < 1e-20);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let g = tiny_model(2, 3, 6, 11);
        let back = GeneratorModel::from_checkpoint(&Checkpoint::from_bytes(&g.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn ar1_training_improves_conditional_expectation() {
        let data = simulate_ar1(0.8, 0.5, 1, 10, 400, 1, Grid::Integer).unwrap();
        let held = simulate_ar1(0.8, 0.5, 1, 10, 200, 2, Grid::Integer).unwrap();
        let cfg = GanConfig {
            n: 3,
            m: 4,
            k1: 2,
            k2: 2,
            iters_a: 150,
            iters_c: 30,
            batch: 32,
            lr_g: 3e-3,
            lr_d: 5e-3,
            iter_r: 15,
            finetune_samples: 64,
            finetune: RegressionConfig { hidden: vec![8], iterations: 20, ..Default::default() },
            regression: RegressionConfig { hidden: vec![8], iterations: 100, ..Default::default() },
            seed: 3,
            ..Default::default()
        };
        let init = GeneratorModel::new(1, cfg.p, 10, cfg.noise_dim, &cfg.arch, derive_seed(cfg.seed, 30)).unwrap();
        let before = evaluate_generator(&init, &held, 20, 5).unwrap().cond_exp_score.unwrap();
        let out = train_hrpcf_gan(&data, &cfg).unwrap();
        let after = evaluate_generator(&out.model, &held, 20, 5).unwrap().cond_exp_score.unwrap();
        assert!(after < before, "{after} vs {before}");
        assert_eq!(out.report.phase_a.len(), 150);
        assert_eq!(out.report.phase_c.len(), 30);
        assert_eq!(out.report.finetune.len(), 2);
        // conditioning fidelity and non-collapse
        let a = out.model.generate(&held, 1).unwrap();
        let b = out.model.generate(&held, 2).unwrap();
        let mut distinct = 0;
        for ((r, x), y) in held.samples().iter().zip(a.samples()).zip(b.samples()) {
            assert_eq!(&r.values()[..6], &x.values()[..6]);
            distinct += (x.values()[6..] != y.values()[6..]) as usize;
        }
        assert!(distinct as f64 >= 0.9 * held.len() as f64);
    }
}
