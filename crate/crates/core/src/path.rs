//! Paths, rank-1 developments, the empirical PCF and PCFD.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{arg_err, shape_err, AdevError, Result};
use crate::unitary::{hs_distance_sq, AntiHermitian, CMat, SpectralExp, UnitaryMatrix};

/// A sampled path, linear between its time stamps. `values` is row-major `L × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewisePath {
    times: Vec<f64>,
    values: Vec<f64>,
    dim: usize,
}

impl PiecewisePath {
    pub fn new(times: Vec<f64>, values: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return arg_err("path dimension must be positive");
        }
        if times.len() < 2 {
            return arg_err(format!("a path needs at least 2 points, got {}", times.len()));
        }
        if values.len() != times.len() * dim {
            return shape_err(format!(
                "expected {} values for {} points of dimension {dim}, got {}",
                times.len() * dim,
                times.len(),
                values.len()
            ));
        }
        if times.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(AdevError::NumericInput("path contains non-finite values".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return arg_err("path times must be strictly increasing");
        }
        Ok(PiecewisePath { times, values, dim })
    }

    /// Path on the integer grid `0, 1, ..., L-1`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return shape_err("ragged path rows");
        }
        let times = (0..rows.len()).map(|i| i as f64).collect();
        Self::new(times, rows.concat(), dim)
    }

    /// One-dimensional path on the integer grid.
    pub fn scalar(values: &[f64]) -> Result<Self> {
        let times = (0..values.len()).map(|i| i as f64).collect();
        Self::new(times, values.to_vec(), 1)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Row-major `(L-1) × d` increments.
    pub fn increments(&self) -> Vec<f64> {
        let d = self.dim;
        let mut out = Vec::with_capacity((self.len() - 1) * d);
        for i in 1..self.len() {
            for c in 0..d {
                out.push(self.values[i * d + c] - self.values[(i - 1) * d + c]);
            }
        }
        out
    }

    /// Sub-path on points `start..=end`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end >= self.len() {
            return arg_err(format!("invalid slice {start}..={end} of a path with {} points", self.len()));
        }
        Ok(PiecewisePath {
            times: self.times[start..=end].to_vec(),
            values: self.values[start * self.dim..(end + 1) * self.dim].to_vec(),
            dim: self.dim,
        })
    }
}

/// Prepends the channel `(t_i - t_0) / (t_{L-1} - t_0)`.
pub fn time_augment(path: &PiecewisePath) -> PiecewisePath {
    let t0 = path.times[0];
    let span = path.times[path.len() - 1] - t0;
    let d = path.dim;
    let mut values = Vec::with_capacity(path.len() * (d + 1));
    for i in 0..path.len() {
        values.push((path.times[i] - t0) / span);
        values.extend_from_slice(path.point(i));
    }
    PiecewisePath { times: path.times.clone(), values, dim: d + 1 }
}

/// `N ≥ 1` paths sharing their time grid and dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<PiecewisePath>,
}

impl Dataset {
    pub fn new(samples: Vec<PiecewisePath>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return arg_err("dataset must contain at least one sample");
        };
        for (i, s) in samples.iter().enumerate() {
            if s.dim != first.dim || s.times != first.times {
                return shape_err(format!("sample {i} does not share the grid/dimension of sample 0"));
            }
        }
        Ok(Dataset { samples })
    }

    pub fn samples(&self) -> &[PiecewisePath] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<PiecewisePath> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].dim
    }

    /// Number of points per path (`T + 1`).
    pub fn path_len(&self) -> usize {
        self.samples[0].len()
    }

    pub fn times(&self) -> &[f64] {
        &self.samples[0].times
    }

    pub fn time_augment(&self) -> Dataset {
        Dataset { samples: self.samples.iter().map(time_augment).collect() }
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        Dataset::new(idx.iter().map(|&i| self.samples[i].clone()).collect())
    }

    /// Concatenates samples of two compatible datasets.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        let mut s = self.samples.clone();
        s.extend(other.samples.iter().cloned());
        Dataset::new(s)
    }
}

/// A linear map `ℝ^{d_in} → 𝔲(n)`, `v ↦ Σ_j v_j G_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct DevMap {
    generators: Vec<AntiHermitian>,
    lie_dim: usize,
}

impl DevMap {
    pub fn new(generators: Vec<AntiHermitian>) -> Result<Self> {
        let Some(first) = generators.first() else {
            return arg_err("a development map needs at least one generator");
        };
        let lie_dim = first.dim();
        if generators.iter().any(|g| g.dim() != lie_dim) {
            return shape_err("generators of one map must share their dimension");
        }
        Ok(DevMap { generators, lie_dim })
    }

    pub fn d_in(&self) -> usize {
        self.generators.len()
    }

    pub fn lie_dim(&self) -> usize {
        self.lie_dim
    }

    pub fn generators(&self) -> &[AntiHermitian] {
        &self.generators
    }

    pub fn apply(&self, v: &[f64]) -> CMat {
        let n = self.lie_dim;
        let mut out = CMat::zeros(n, n);
        for (g, &x) in self.generators.iter().zip(v) {
            if x != 0.0 {
                for (o, z) in out.iter_mut().zip(g.matrix().iter()) {
                    *o += z * x;
                }
            }
        }
        out
    }

    /// Flattened parameters, generator by generator.
    pub fn params(&self) -> Vec<f64> {
        self.generators.iter().flat_map(|g| g.params()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.d_in() * self.lie_dim * self.lie_dim
    }

    pub fn from_params(d_in: usize, lie_dim: usize, params: &[f64]) -> Result<Self> {
        let per = lie_dim * lie_dim;
        if params.len() != d_in * per {
            return shape_err(format!("expected {} map parameters, got {}", d_in * per, params.len()));
        }
        let gens = params
            .chunks(per)
            .map(|c| AntiHermitian::from_params(lie_dim, c))
            .collect::<Result<Vec<_>>>()?;
        DevMap::new(gens)
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        *self = DevMap::from_params(self.d_in(), self.lie_dim, params)?;
        Ok(())
    }

    /// Block-diagonal direct sum `M_1 ⊕ M_2`.
    pub fn direct_sum(&self, other: &DevMap) -> Result<DevMap> {
        if self.d_in() != other.d_in() {
            return shape_err("direct sum needs equal input dimensions");
        }
        let (a, b) = (self.lie_dim, other.lie_dim);
        let gens = self
            .generators
            .iter()
            .zip(&other.generators)
            .map(|(g, h)| {
                let mut m = CMat::zeros(a + b, a + b);
                m.view_mut((0, 0), (a, a)).copy_from(g.matrix());
                m.view_mut((a, a), (b, b)).copy_from(h.matrix());
                AntiHermitian::from_matrix_unchecked(m)
            })
            .collect();
        DevMap::new(gens)
    }

    pub(crate) fn check_input(&self, d: usize) -> Result<()> {
        if d != self.d_in() {
            return shape_err(format!("map expects {}-dimensional input, path has dimension {d}", self.d_in()));
        }
        Ok(())
    }
}

/// K development maps representing an empirical law on the map space.
#[derive(Clone, Debug, PartialEq)]
pub struct MapEnsemble<M = DevMap> {
    maps: Vec<M>,
}

impl<M> MapEnsemble<M> {
    pub fn new(maps: Vec<M>) -> Result<Self> {
        if maps.is_empty() {
            return arg_err("ensemble must contain at least one map");
        }
        Ok(MapEnsemble { maps })
    }

    pub fn maps(&self) -> &[M] {
        &self.maps
    }

    pub fn maps_mut(&mut self) -> &mut [M] {
        &mut self.maps
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

/// Forward record of a development: spectral data of every step and all
/// prefix products `P_0 = I, P_t = P_{t-1} exp(A_t)`.
#[derive(Clone, Debug)]
pub struct DevTape {
    pub steps: Vec<SpectralExp>,
    pub prefixes: Vec<CMat>,
}

impl DevTape {
    /// Builds the tape from the step generators `A_1, ..., A_T`.
    pub fn from_generators(gens: impl IntoIterator<Item = CMat>, n: usize) -> Result<Self> {
        let mut steps = Vec::new();
        let mut prefixes = vec![CMat::identity(n, n)];
        for a in gens {
            let s = SpectralExp::new(&a)?;
            let next = prefixes.last().unwrap() * &s.exp;
            prefixes.push(next);
            steps.push(s);
        }
        Ok(DevTape { steps, prefixes })
    }

    pub fn result(&self) -> &CMat {
        self.prefixes.last().unwrap()
    }

    /// Given `dL = Re Σ_t ⟨G_t, dP_t⟩` (`grads[t]` for prefix `t`, index 0
    /// ignored), returns `∂L/∂A_t` for every step generator.
    pub fn backward(&self, grads: &[Option<&CMat>]) -> Vec<CMat> {
        let t_len = self.steps.len();
        let n = self.prefixes[0].nrows();
        let mut acc = CMat::zeros(n, n);
        let mut out = vec![CMat::zeros(n, n); t_len];
        for t in (1..=t_len).rev() {
            if let Some(Some(g)) = grads.get(t) {
                acc += *g;
            }
            let g_e = self.prefixes[t - 1].adjoint() * &acc;
            out[t - 1] = self.steps[t - 1].differential_adjoint(&g_e);
            acc = &acc * self.steps[t - 1].exp.adjoint();
        }
        out
    }

    /// Backward pass for a gradient on the final product only.
    pub fn backward_final(&self, g: &CMat) -> Vec<CMat> {
        let mut grads: Vec<Option<&CMat>> = vec![None; self.steps.len() + 1];
        grads[self.steps.len()] = Some(g);
        self.backward(&grads)
    }
}

/// Develops row-major increments (`T × d`) without validating unitarity.
pub(crate) fn develop_increments_raw(map: &DevMap, incs: &[f64]) -> Result<CMat> {
    let n = map.lie_dim;
    let d = map.d_in();
    let mut out = CMat::identity(n, n);
    for inc in incs.chunks(d) {
        if inc.iter().all(|&v| v == 0.0) {
            continue;
        }
        let s = SpectralExp::new(&map.apply(inc))?;
        out = out * s.exp;
    }
    Ok(out)
}

pub(crate) fn tape_increments(map: &DevMap, incs: &[f64]) -> Result<DevTape> {
    DevTape::from_generators(incs.chunks(map.d_in()).map(|v| map.apply(v)), map.lie_dim)
}

/// `𝒰_M(x) = exp(M(Δx_1)) ⋯ exp(M(Δx_{L-1}))`.
pub fn develop(map: &DevMap, path: &PiecewisePath) -> Result<UnitaryMatrix> {
    map.check_input(path.dim)?;
    UnitaryMatrix::new(develop_increments_raw(map, &path.increments())?)
}

/// Developments of every sample, in sample order.
pub fn develop_all(map: &DevMap, data: &Dataset) -> Result<Vec<CMat>> {
    map.check_input(data.dim())?;
    data.samples
        .par_iter()
        .map(|s| develop_increments_raw(map, &s.increments()))
        .collect()
}

/// Index-ordered mean of matrices.
pub(crate) fn mean_matrix<'a>(mats: impl IntoIterator<Item = &'a CMat>, n: usize) -> CMat {
    let mut sum = CMat::zeros(n, n);
    let mut count = 0usize;
    for m in mats {
        sum += m;
        count += 1;
    }
    sum / Complex64::new(count.max(1) as f64, 0.0)
}

/// Empirical PCF `(1/N) Σ 𝒰_M(x_i)`.
pub fn pcf(map: &DevMap, data: &Dataset) -> Result<CMat> {
    let devs = develop_all(map, data)?;
    Ok(mean_matrix(&devs, map.lie_dim))
}

pub fn epcfd_sq(ens: &MapEnsemble, x: &Dataset, y: &Dataset) -> Result<f64> {
    if x.dim() != y.dim() {
        return shape_err(format!("datasets have dimensions {} and {}", x.dim(), y.dim()));
    }
    let mut total = 0.0;
    for m in &ens.maps {
        total += hs_distance_sq(&pcf(m, x)?, &pcf(m, y)?)?;
    }
    Ok(total / ens.len() as f64)
}

/// `√((1/K) Σ_i d²_HS(Φ_X(M_i), Φ_Y(M_i)))`.
pub fn epcfd(ens: &MapEnsemble, x: &Dataset, y: &Dataset) -> Result<f64> {
    epcfd_sq(ens, x, y).map(f64::sqrt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unitary::{hs_distance, sample_map_ensemble, unitarity_defect, I};
    use crate::seed::rng_from_seed;
    use rand::Rng;
    use std::f64::consts::FRAC_PI_2;

    fn quarter_turn_map() -> DevMap {
        DevMap::new(vec![AntiHermitian::new(CMat::from_element(1, 1, I * FRAC_PI_2)).unwrap()]).unwrap()
    }

    fn random_path(len: usize, d: usize, seed: u64) -> PiecewisePath {
        let mut rng = rng_from_seed(seed);
        let rows: Vec<Vec<f64>> = (0..len).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        PiecewisePath::from_rows(&rows).unwrap()
    }

    #[test]
    fn time_augment_example() {
        let p = PiecewisePath::scalar(&[5.0, 5.0, 5.0]).unwrap();
        let a = time_augment(&p);
        assert_eq!(a.values(), &[0.0, 5.0, 0.5, 5.0, 1.0, 5.0]);
        let aa = time_augment(&a);
        assert_eq!(aa.dim(), 3);
        assert_eq!(aa.point(1), &[0.5, 0.5, 5.0]);
        let x1 = time_augment(&PiecewisePath::scalar(&[1.0, 1.0, 2.0]).unwrap());
        assert_eq!(x1.increments(), vec![0.5, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn develop_examples() {
        let m = quarter_turn_map();
        let c = PiecewisePath::scalar(&[3.0, 3.0, 3.0]).unwrap();
        assert_eq!(develop(&m, &c).unwrap().matrix(), &CMat::identity(1, 1));
        let x1 = PiecewisePath::scalar(&[1.0, 1.0, 2.0]).unwrap();
        let u = develop(&m, &x1).unwrap();
        assert!((u.matrix()[(0, 0)] - I).norm() < 1e-15);
        let x2 = PiecewisePath::scalar(&[1.0, 1.0, 0.0]).unwrap();
        assert!((develop(&m, &x2).unwrap().matrix()[(0, 0)] + I).norm() < 1e-15);
    }

    #[test]
    fn rejects_short_and_bad_paths() {
        assert!(PiecewisePath::scalar(&[1.0]).is_err());
        assert!(PiecewisePath::new(vec![0.0, 0.0], vec![1.0, 2.0], 1).is_err());
        assert!(matches!(
            PiecewisePath::new(vec![0.0, 1.0], vec![1.0, f64::INFINITY], 1),
            Err(AdevError::NumericInput(_))
        ));
        assert!(PiecewisePath::scalar(&[1.0, 2.0]).is_ok());
    }

    #[test]
    fn develop_shape_error() {
        let ens = sample_map_ensemble(2, 3, 1, 0.2, 0).unwrap();
        let p = random_path(4, 3, 1);
        assert!(matches!(develop(&ens.maps()[0], &p), Err(AdevError::Shape(_))));
    }

    #[test]
    fn concatenation_is_multiplicative() {
        let ens = sample_map_ensemble(2, 4, 1, 0.5, 2).unwrap();
        let m = &ens.maps()[0];
        for seed in 0..100 {
            let p = random_path(9, 2, seed);
            let s = 1 + (seed as usize % 7);
            let full = develop(m, &p).unwrap().into_matrix();
            let prod = develop(m, &p.slice(0, s).unwrap()).unwrap().into_matrix()
                * develop(m, &p.slice(s, 8).unwrap()).unwrap().into_matrix();
            assert!(hs_distance(&full, &prod).unwrap() < 1e-10);
            assert!(unitarity_defect(&full) < 1e-10);
        }
    }

    #[test]
    fn direct_sum_is_block_diagonal() {
        let a = sample_map_ensemble(3, 2, 1, 0.6, 3).unwrap().maps()[0].clone();
        let b = sample_map_ensemble(3, 3, 1, 0.6, 4).unwrap().maps()[0].clone();
        let s = a.direct_sum(&b).unwrap();
        let p = random_path(6, 3, 5);
        let u = develop(&s, &p).unwrap().into_matrix();
        let mut expect = CMat::zeros(5, 5);
        expect.view_mut((0, 0), (2, 2)).copy_from(develop(&a, &p).unwrap().matrix());
        expect.view_mut((2, 2), (3, 3)).copy_from(develop(&b, &p).unwrap().matrix());
        assert!(hs_distance(&u, &expect).unwrap() < 1e-10);
    }

    #[test]
    fn translation_invariance_exact() {
        let m = sample_map_ensemble(2, 3, 1, 0.4, 6).unwrap().maps()[0].clone();
        let p = PiecewisePath::from_rows(&[vec![0.0, 0.5], vec![1.0, -0.5], vec![0.25, 0.75]]).unwrap();
        let q = PiecewisePath::from_rows(&[vec![1.0, 1.5], vec![2.0, 0.5], vec![1.25, 1.75]]).unwrap();
        assert_eq!(develop(&m, &p).unwrap(), develop(&m, &q).unwrap());
    }

    #[test]
    fn pcf_of_aldous_limit_is_zero() {
        let m = quarter_turn_map();
        let data = Dataset::new(vec![
            PiecewisePath::scalar(&[1.0, 1.0, 2.0]).unwrap(),
            PiecewisePath::scalar(&[1.0, 1.0, 0.0]).unwrap(),
        ])
        .unwrap();
        assert!(pcf(&m, &data).unwrap()[(0, 0)].norm() < 1e-15);
        let single = Dataset::new(vec![data.samples()[0].clone()]).unwrap();
        assert_eq!(&pcf(&m, &single).unwrap(), develop(&m, &single.samples()[0]).unwrap().matrix());
    }

    #[test]
    fn epcfd_examples() {
        let ens = MapEnsemble::new(vec![quarter_turn_map()]).unwrap();
        let x = Dataset::new(vec![PiecewisePath::scalar(&[1.0, 1.0, 2.0]).unwrap()]).unwrap();
        let y = Dataset::new(vec![PiecewisePath::scalar(&[1.0, 1.0, 0.0]).unwrap()]).unwrap();
        assert!((epcfd(&ens, &x, &y).unwrap() - 2.0).abs() < 1e-14);
        assert_eq!(epcfd(&ens, &x, &x).unwrap(), 0.0);
    }

    #[test]
    fn epcfd_matches_brute_force() {
        let ens = sample_map_ensemble(2, 3, 3, 0.5, 8).unwrap();
        let x = Dataset::new((0..5).map(|s| random_path(5, 2, 100 + s)).collect()).unwrap();
        let y = Dataset::new((0..4).map(|s| random_path(5, 2, 200 + s)).collect()).unwrap();
        let mut total = 0.0;
        for m in ens.maps() {
            let mut px = CMat::zeros(3, 3);
            for s in x.samples() {
                let mut u = CMat::identity(3, 3);
                for i in 1..s.len() {
                    let v: Vec<f64> = (0..2).map(|c| s.point(i)[c] - s.point(i - 1)[c]).collect();
                    u *= crate::unitary::expm_anti_hermitian(&AntiHermitian::new(m.apply(&v)).unwrap())
                        .unwrap()
                        .into_matrix();
                }
                px += u / Complex64::new(x.len() as f64, 0.0);
            }
            let py = pcf(m, &y).unwrap();
            total += (px - py).iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        let brute = (total / 3.0).sqrt();
        let fast = epcfd(&ens, &x, &y).unwrap();
        assert!((brute - fast).abs() < 1e-12);
        assert_eq!(fast, epcfd(&ens, &y, &x).unwrap());
    }

    #[test]
    fn tape_backward_matches_finite_difference() {
        // L = Re<W, P_2> + Re<V, P_T> against a perturbation of step 1's generator
        let m = sample_map_ensemble(2, 3, 1, 0.7, 9).unwrap().maps()[0].clone();
        let p = random_path(5, 2, 10);
        let incs = p.increments();
        let tape = tape_increments(&m, &incs).unwrap();
        let w = CMat::from_fn(3, 3, |j, k| Complex64::new(j as f64 - 0.3 * k as f64, 0.2 * (j + k) as f64));
        let v = CMat::from_fn(3, 3, |j, k| Complex64::new(0.5 - k as f64, j as f64 * 0.1));
        let mut grads: Vec<Option<&CMat>> = vec![None; 5];
        grads[2] = Some(&w);
        grads[4] = Some(&v);
        let ga = tape.backward(&grads);
        let dir = AntiHermitian::project(&CMat::from_fn(3, 3, |j, k| Complex64::new((j * k) as f64 + 0.1, j as f64 - k as f64)));
        let loss = |h: f64| {
            let gens: Vec<CMat> = incs
                .chunks(2)
                .enumerate()
                .map(|(t, inc)| if t == 1 { m.apply(inc) + dir.matrix() * Complex64::new(h, 0.0) } else { m.apply(inc) })
                .collect();
            let t = DevTape::from_generators(gens, 3).unwrap();
            crate::unitary::hs_inner(&w, &t.prefixes[2]).re + crate::unitary::hs_inner(&v, &t.prefixes[4]).re
        };
        let h = 1e-5;
        let fd = (loss(h) - loss(-h)) / (2.0 * h);
        let an = crate::unitary::hs_inner(&ga[1], dir.matrix()).re;
        assert!((fd - an).abs() < 1e-7 * (1.0 + fd.abs()), "fd {fd} analytic {an}");
    }
}
