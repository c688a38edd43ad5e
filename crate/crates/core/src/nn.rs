//! Small dense networks with hand-derived gradients: a stacked LSTM with a
//! linear read-out, a tanh MLP, and first-order optimizers over flat
//! parameter vectors.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::seed::Rng;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out += W x` for row-major `W` (`rows × x.len()`).
fn gemv_acc(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `gw += dz xᵀ`, `dx += Wᵀ dz`.
fn gemv_back(w: &[f64], x: &[f64], dz: &[f64], gw: &mut [f64], dx: Option<&mut [f64]>) {
    let cols = x.len();
    for (r, &g) in dz.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let grow = &mut gw[r * cols..(r + 1) * cols];
        for (a, &b) in grow.iter_mut().zip(x) {
            *a += g * b;
        }
    }
    if let Some(dx) = dx {
        for (r, &g) in dz.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &w[r * cols..(r + 1) * cols];
            for (a, &b) in dx.iter_mut().zip(row) {
                *a += g * b;
            }
        }
    }
}

fn uniform_init(rng: &mut Rng, n: usize, bound: f64) -> impl Iterator<Item = f64> + '_ {
    (0..n).map(move |_| rng.random_range(-bound..bound))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct LstmShape {
    input: usize,
    hidden: usize,
    offset: usize,
}

impl LstmShape {
    fn w_len(&self) -> usize {
        4 * self.hidden * self.input
    }
    fn u_len(&self) -> usize {
        4 * self.hidden * self.hidden
    }
    fn len(&self) -> usize {
        self.w_len() + self.u_len() + 4 * self.hidden
    }
}

/// Stacked LSTM (gates `i, f, g, o`) followed by a linear read-out applied at
/// every step. Output at step `t` depends on inputs `0..=t` only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeqModel {
    in_dim: usize,
    out_dim: usize,
    layers: Vec<LstmShape>,
    readout_offset: usize,
    pub params: Vec<f64>,
}

/// Per-sequence activations kept for the backward pass.
pub struct SeqCache {
    steps: usize,
    // per layer, per step: inputs, gates (i,f,g,o post-activation), c, h
    inputs: Vec<Vec<f64>>,
    gates: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    hiddens: Vec<Vec<f64>>,
}

impl SeqModel {
    pub fn new(in_dim: usize, hidden: &[usize], out_dim: usize, rng: &mut Rng) -> Self {
        let mut layers = Vec::new();
        let mut offset = 0;
        let mut input = in_dim;
        for &h in hidden {
            let shape = LstmShape { input, hidden: h, offset };
            offset += shape.len();
            layers.push(shape);
            input = h;
        }
        let readout_offset = offset;
        let total = offset + out_dim * (input + 1);
        let mut params = Vec::with_capacity(total);
        for l in &layers {
            let bound = 1.0 / (l.hidden as f64).sqrt();
            params.extend(uniform_init(rng, l.w_len() + l.u_len(), bound));
            // forget-gate bias starts at 1
            for gate in 0..4 {
                params.extend(std::iter::repeat_n(if gate == 1 { 1.0 } else { 0.0 }, l.hidden));
            }
        }
        let bound = 1.0 / (input as f64).sqrt();
        params.extend(uniform_init(rng, out_dim * input, bound));
        params.extend(std::iter::repeat_n(0.0, out_dim));
        SeqModel { in_dim, out_dim, layers, readout_offset, params }
    }

    /// Rebuilds a model of the given architecture around existing parameters.
    pub fn with_params(in_dim: usize, hidden: &[usize], out_dim: usize, params: Vec<f64>) -> Option<Self> {
        let mut rng = crate::seed::rng_from_seed(0);
        let mut m = SeqModel::new(in_dim, hidden, out_dim, &mut rng);
        if m.params.len() != params.len() {
            return None;
        }
        m.params = params;
        Some(m)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.hidden).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn last_width(&self) -> usize {
        self.layers.last().map(|l| l.hidden).unwrap_or(self.in_dim)
    }

    /// Runs the model over row-major `L × in_dim` inputs, returning `L × out_dim`.
    pub fn forward(&self, xs: &[f64]) -> (Vec<f64>, SeqCache) {
        let steps = xs.len() / self.in_dim;
        let mut cache = SeqCache {
            steps,
            inputs: Vec::with_capacity(self.layers.len()),
            gates: Vec::with_capacity(self.layers.len()),
            cells: Vec::with_capacity(self.layers.len()),
            hiddens: Vec::with_capacity(self.layers.len()),
        };
        let mut seq = xs.to_vec();
        for l in &self.layers {
            let h = l.hidden;
            let p = &self.params[l.offset..l.offset + l.len()];
            let (w, rest) = p.split_at(l.w_len());
            let (u, b) = rest.split_at(l.u_len());
            let mut gates = vec![0.0; steps * 4 * h];
            let mut cells = vec![0.0; steps * h];
            let mut hs = vec![0.0; steps * h];
            let mut h_prev = vec![0.0; h];
            let mut c_prev = vec![0.0; h];
            for t in 0..steps {
                let z = &mut gates[t * 4 * h..(t + 1) * 4 * h];
                z.copy_from_slice(b);
                gemv_acc(w, &seq[t * l.input..(t + 1) * l.input], z);
                gemv_acc(u, &h_prev, z);
                for k in 0..h {
                    z[k] = sigmoid(z[k]);
                    z[h + k] = sigmoid(z[h + k]);
                    z[2 * h + k] = z[2 * h + k].tanh();
                    z[3 * h + k] = sigmoid(z[3 * h + k]);
                    let c = z[h + k] * c_prev[k] + z[k] * z[2 * h + k];
                    cells[t * h + k] = c;
                    hs[t * h + k] = z[3 * h + k] * c.tanh();
                }
                c_prev.copy_from_slice(&cells[t * h..(t + 1) * h]);
                h_prev.copy_from_slice(&hs[t * h..(t + 1) * h]);
            }
            cache.inputs.push(seq);
            cache.gates.push(gates);
            cache.cells.push(cells);
            seq = hs.clone();
            cache.hiddens.push(hs);
        }
        let width = self.last_width();
        let (rw, rb) = self.params[self.readout_offset..].split_at(self.out_dim * width);
        let mut out = vec![0.0; steps * self.out_dim];
        for t in 0..steps {
            let o = &mut out[t * self.out_dim..(t + 1) * self.out_dim];
            o.copy_from_slice(rb);
            gemv_acc(rw, &seq[t * width..(t + 1) * width], o);
        }
        if self.layers.is_empty() {
            cache.hiddens.push(seq);
        }
        (out, cache)
    }

    /// Accumulates parameter gradients into `grad` and returns the input
    /// gradient (`L × in_dim`), given `d_out` (`L × out_dim`).
    pub fn backward(&self, cache: &SeqCache, d_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let steps = cache.steps;
        let width = self.last_width();
        let top = cache.hiddens.last().unwrap();
        let (rw, _) = self.params[self.readout_offset..].split_at(self.out_dim * width);
        let (grw, grb) = grad[self.readout_offset..].split_at_mut(self.out_dim * width);
        let mut d_seq = vec![0.0; steps * width];
        for t in 0..steps {
            let dz = &d_out[t * self.out_dim..(t + 1) * self.out_dim];
            for (a, b) in grb.iter_mut().zip(dz) {
                *a += b;
            }
            gemv_back(rw, &top[t * width..(t + 1) * width], dz, grw, Some(&mut d_seq[t * width..(t + 1) * width]));
        }
        for (li, l) in self.layers.iter().enumerate().rev() {
            let h = l.hidden;
            let p = &self.params[l.offset..l.offset + l.len()];
            let (w, rest) = p.split_at(l.w_len());
            let (u, _) = rest.split_at(l.u_len());
            let g = &mut grad[l.offset..l.offset + l.len()];
            let (gw, grest) = g.split_at_mut(l.w_len());
            let (gu, gb) = grest.split_at_mut(l.u_len());
            let inputs = &cache.inputs[li];
            let gates = &cache.gates[li];
            let cells = &cache.cells[li];
            let hs = &cache.hiddens[li];
            let mut d_in = vec![0.0; steps * l.input];
            let mut dh_next = vec![0.0; h];
            let mut dc_next = vec![0.0; h];
            let mut dz = vec![0.0; 4 * h];
            let zero = vec![0.0; h];
            for t in (0..steps).rev() {
                let z = &gates[t * 4 * h..(t + 1) * 4 * h];
                let c_prev = if t > 0 { &cells[(t - 1) * h..t * h] } else { &zero[..] };
                let h_prev = if t > 0 { &hs[(t - 1) * h..t * h] } else { &zero[..] };
                for k in 0..h {
                    let dh = d_seq[t * h + k] + dh_next[k];
                    let c = cells[t * h + k];
                    let tc = c.tanh();
                    let (ig, fg, gg, og) = (z[k], z[h + k], z[2 * h + k], z[3 * h + k]);
                    let dc = dh * og * (1.0 - tc * tc) + dc_next[k];
                    dz[k] = dc * gg * ig * (1.0 - ig);
                    dz[h + k] = dc * c_prev[k] * fg * (1.0 - fg);
                    dz[2 * h + k] = dc * ig * (1.0 - gg * gg);
                    dz[3 * h + k] = dh * tc * og * (1.0 - og);
                    dc_next[k] = dc * fg;
                }
                for (a, b) in gb.iter_mut().zip(&dz) {
                    *a += b;
                }
                gemv_back(w, &inputs[t * l.input..(t + 1) * l.input], &dz, gw, Some(&mut d_in[t * l.input..(t + 1) * l.input]));
                dh_next.iter_mut().for_each(|v| *v = 0.0);
                gemv_back(u, h_prev, &dz, gu, Some(&mut dh_next));
            }
            d_seq = d_in;
        }
        d_seq
    }
}

/// Fully connected network with tanh hidden activations and a linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    pub params: Vec<f64>,
}

pub struct MlpCache {
    acts: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new(sizes: &[usize], rng: &mut Rng) -> Self {
        let mut params = Vec::new();
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            params.extend(uniform_init(rng, w[0] * w[1], bound));
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Mlp { sizes: sizes.to_vec(), params }
    }

    pub fn with_params(sizes: &[usize], params: Vec<f64>) -> Option<Self> {
        let expect: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        (expect == params.len()).then(|| Mlp { sizes: sizes.to_vec(), params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, MlpCache) {
        let mut acts = vec![x.to_vec()];
        let mut off = 0;
        let last = self.sizes.len() - 2;
        for (li, w) in self.sizes.windows(2).enumerate() {
            let (wm, b) = self.params[off..off + w[0] * w[1] + w[1]].split_at(w[0] * w[1]);
            let mut z = b.to_vec();
            gemv_acc(wm, acts.last().unwrap(), &mut z);
            if li < last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(z);
            off += w[0] * w[1] + w[1];
        }
        (acts.last().unwrap().clone(), MlpCache { acts })
    }

    pub fn backward(&self, cache: &MlpCache, d_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let layers: Vec<(usize, usize)> = self.sizes.windows(2).map(|w| (w[0], w[1])).collect();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut off = 0;
        for &(a, b) in &layers {
            offsets.push(off);
            off += a * b + b;
        }
        let mut d = d_out.to_vec();
        let last = layers.len() - 1;
        for li in (0..layers.len()).rev() {
            let (a, b) = layers[li];
            if li < last {
                let y = &cache.acts[li + 1];
                for (dv, yv) in d.iter_mut().zip(y) {
                    *dv *= 1.0 - yv * yv;
                }
            }
            let o = offsets[li];
            let (wm, _) = self.params[o..o + a * b + b].split_at(a * b);
            let (gw, gb) = grad[o..o + a * b + b].split_at_mut(a * b);
            for (x, y) in gb.iter_mut().zip(&d) {
                *x += y;
            }
            let mut dx = vec![0.0; a];
            gemv_back(wm, &cache.acts[li], &d, gw, Some(&mut dx));
            d = dx;
        }
        d
    }
}

/// Rescales `grad` so its Euclidean norm is at most `max_norm`; returns the original norm.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Momentum { beta: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First-order optimizer state for one flat parameter vector. Steps descend;
/// negate the gradient to ascend.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n: usize) -> Self {
        Optimizer { kind, lr, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Momentum { beta } => {
                for ((p, g), m) in params.iter_mut().zip(grad).zip(self.m.iter_mut()) {
                    *m = beta * *m + g;
                    *p -= self.lr * *m;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for i in 0..params.len() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    params[i] -= self.lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
}
