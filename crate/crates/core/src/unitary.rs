//! Complex matrix primitives on the unitary group and its Lie algebra.
//!
//! Anti-Hermitian generators `A` (with `A + A* = 0`) are exponentiated through
//! the Hermitian eigendecomposition of `-iA = V diag(λ) V*`, so that
//! `exp(A) = V diag(e^{iλ}) V*` is unitary up to the eigensolver's rounding.
//! The spectral data is kept around ([`SpectralExp`]) because the
//! Daleckii–Krein differential used for training needs it.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{arg_err, shape_err, AdevError, Result};
use crate::path::{DevMap, MapEnsemble};
use crate::seed::rng_from_seed;

pub type CMat = DMatrix<Complex64>;

pub const UNITARITY_TOL: f64 = 1e-10;
const ANTI_HERMITIAN_TOL: f64 = 1e-12;

pub(crate) const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// An element of 𝔲(m).
#[derive(Clone, Debug, PartialEq)]
pub struct AntiHermitian(CMat);

impl AntiHermitian {
    /// Checks `A + A* = 0` entrywise (relative tolerance 1e-12).
    pub fn new(m: CMat) -> Result<Self> {
        if !m.is_square() {
            return shape_err(format!("generator must be square, got {}x{}", m.nrows(), m.ncols()));
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(AdevError::NumericInput("generator has non-finite entries".into()));
        }
        let scale = m.iter().map(|z| z.norm()).fold(1.0_f64, f64::max);
        let n = m.nrows();
        for j in 0..n {
            for k in j..n {
                let s = m[(j, k)] + m[(k, j)].conj();
                if s.norm() > ANTI_HERMITIAN_TOL * scale {
                    return arg_err(format!("matrix is not anti-Hermitian at ({j},{k})"));
                }
            }
        }
        Ok(AntiHermitian(m))
    }

    pub fn zeros(m: usize) -> Self {
        AntiHermitian(CMat::zeros(m, m))
    }

    /// `(G - G*) / 2`.
    pub fn project(g: &CMat) -> Self {
        let mut a = (g - g.adjoint()) * Complex64::new(0.5, 0.0);
        // force exact symmetry of the rounding
        let n = a.nrows();
        for j in 0..n {
            a[(j, j)].re = 0.0;
            for k in (j + 1)..n {
                a[(k, j)] = -a[(j, k)].conj();
            }
        }
        AntiHermitian(a)
    }

    /// Number of real parameters of 𝔲(m).
    pub fn param_count(m: usize) -> usize {
        m * m
    }

    /// Builds a generator from `m` imaginary diagonal entries followed by
    /// `(re, im)` pairs for the strict upper triangle in row-major order.
    pub fn from_params(m: usize, params: &[f64]) -> Result<Self> {
        if params.len() != m * m {
            return shape_err(format!("expected {} parameters for u({m}), got {}", m * m, params.len()));
        }
        let mut a = CMat::zeros(m, m);
        for j in 0..m {
            a[(j, j)] = Complex64::new(0.0, params[j]);
        }
        let mut idx = m;
        for j in 0..m {
            for k in (j + 1)..m {
                let z = Complex64::new(params[idx], params[idx + 1]);
                a[(j, k)] = z;
                a[(k, j)] = -z.conj();
                idx += 2;
            }
        }
        Ok(AntiHermitian(a))
    }

    pub fn params(&self) -> Vec<f64> {
        let m = self.dim();
        let mut out = Vec::with_capacity(m * m);
        for j in 0..m {
            out.push(self.0[(j, j)].im);
        }
        for j in 0..m {
            for k in (j + 1)..m {
                out.push(self.0[(j, k)].re);
                out.push(self.0[(j, k)].im);
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_matrix(self) -> CMat {
        self.0
    }

    pub(crate) fn from_matrix_unchecked(m: CMat) -> Self {
        AntiHermitian(m)
    }
}

/// Gradient of `θ ↦ Re⟨W, A(θ)⟩_HS` for the parametrization of
/// [`AntiHermitian::from_params`].
pub fn param_gradient(w: &CMat) -> Vec<f64> {
    let m = w.nrows();
    let mut out = Vec::with_capacity(m * m);
    for j in 0..m {
        out.push(w[(j, j)].im);
    }
    for j in 0..m {
        for k in (j + 1)..m {
            out.push(w[(j, k)].re - w[(k, j)].re);
            out.push(w[(j, k)].im + w[(k, j)].im);
        }
    }
    out
}

/// An element of U(m), validated against [`UNITARITY_TOL`].
#[derive(Clone, Debug, PartialEq)]
pub struct UnitaryMatrix(CMat);

impl UnitaryMatrix {
    pub fn new(m: CMat) -> Result<Self> {
        if !m.is_square() {
            return shape_err("unitary matrix must be square");
        }
        let err = unitarity_defect(&m);
        if err.is_nan() || err > UNITARITY_TOL {
            return Err(AdevError::Numeric(format!("unitarity defect {err:e} exceeds {UNITARITY_TOL:e}")));
        }
        Ok(UnitaryMatrix(m))
    }

    pub fn identity(m: usize) -> Self {
        UnitaryMatrix(CMat::identity(m, m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_matrix(self) -> CMat {
        self.0
    }
}

/// `‖U U* − I‖_HS`.
pub fn unitarity_defect(u: &CMat) -> f64 {
    let n = u.nrows();
    let prod = u * u.adjoint() - CMat::identity(n, n);
    hs_norm_sq(&prod).sqrt()
}

/// Spectral form of `exp(A)` for anti-Hermitian `A`:
/// `-iA = V diag(λ) V*` and `exp(A) = V diag(e^{iλ}) V*`.
#[derive(Clone, Debug)]
pub struct SpectralExp {
    pub vectors: CMat,
    pub eigenvalues: Vec<f64>,
    pub exp: CMat,
}

impl SpectralExp {
    pub fn new(a: &CMat) -> Result<Self> {
        let m = a.nrows();
        if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(AdevError::NumericInput("cannot exponentiate a matrix with non-finite entries".into()));
        }
        if m == 1 {
            let lambda = a[(0, 0)].im;
            let e = Complex64::new(lambda.cos(), lambda.sin());
            return Ok(SpectralExp {
                vectors: CMat::identity(1, 1),
                eigenvalues: vec![lambda],
                exp: CMat::from_element(1, 1, e),
            });
        }
        let h = a * (-I);
        let eig = SymmetricEigen::try_new(h, f64::EPSILON, 0)
            .ok_or_else(|| AdevError::NumericInput("Hermitian eigendecomposition did not converge".into()))?;
        let vectors = eig.eigenvectors;
        let eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let mut scaled = vectors.clone();
        for (k, &l) in eigenvalues.iter().enumerate() {
            let phase = Complex64::new(l.cos(), l.sin());
            scaled.column_mut(k).scale_mut(1.0);
            for j in 0..m {
                scaled[(j, k)] *= phase;
            }
        }
        let exp = &scaled * vectors.adjoint();
        Ok(SpectralExp { vectors, eigenvalues, exp })
    }

    /// Divided differences of `z ↦ e^z` at the eigenvalues `iλ`.
    pub(crate) fn divided_differences(&self) -> CMat {
        let m = self.eigenvalues.len();
        let phases: Vec<Complex64> =
            self.eigenvalues.iter().map(|&l| Complex64::new(l.cos(), l.sin())).collect();
        CMat::from_fn(m, m, |j, k| {
            let (lj, lk) = (self.eigenvalues[j], self.eigenvalues[k]);
            if j == k || (lj - lk).abs() < DEGENERATE_EIGEN_GAP {
                phases[j]
            } else {
                (phases[j] - phases[k]) / (I * (lj - lk))
            }
        })
    }

    /// `D exp(A)[E] = V (F ∘ (V* E V)) V*`.
    pub fn differential(&self, e: &CMat) -> CMat {
        let f = self.divided_differences();
        let inner = self.vectors.adjoint() * e * &self.vectors;
        let had = inner.component_mul(&f);
        &self.vectors * had * self.vectors.adjoint()
    }

    /// Adjoint of the differential under `⟨X, Y⟩ = Re tr(X* Y)`:
    /// `V (conj(F) ∘ (V* W V)) V*`.
    pub fn differential_adjoint(&self, w: &CMat) -> CMat {
        let f = self.divided_differences();
        let inner = self.vectors.adjoint() * w * &self.vectors;
        let had = inner.component_mul(&f.map(|z| z.conj()));
        &self.vectors * had * self.vectors.adjoint()
    }
}

/// Eigenvalue gaps below this use the confluent limit in divided differences.
pub const DEGENERATE_EIGEN_GAP: f64 = 1e-9;

pub fn expm_anti_hermitian(a: &AntiHermitian) -> Result<UnitaryMatrix> {
    let s = SpectralExp::new(a.matrix())?;
    UnitaryMatrix::new(s.exp)
}

/// `tr(A* B)`.
pub fn hs_inner(a: &CMat, b: &CMat) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

pub fn hs_norm_sq(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

pub fn hs_distance_sq(a: &CMat, b: &CMat) -> Result<f64> {
    if a.shape() != b.shape() {
        return shape_err(format!("HS distance between {:?} and {:?}", a.shape(), b.shape()));
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm_sqr()).sum())
}

/// `√tr((A−B)(A−B)*)`.
pub fn hs_distance(a: &CMat, b: &CMat) -> Result<f64> {
    hs_distance_sq(a, b).map(f64::sqrt)
}

/// Draws `k` independent maps `ℝ^{d_in} → 𝔲(lie_dim)`; each generator is the
/// anti-Hermitian projection of a matrix with i.i.d. `N(0, init_std²)` real and
/// imaginary parts.
pub fn sample_map_ensemble(d_in: usize, lie_dim: usize, k: usize, init_std: f64, seed: u64) -> Result<MapEnsemble> {
    if k == 0 {
        return arg_err("ensemble size K must be at least 1");
    }
    if lie_dim == 0 || d_in == 0 {
        return arg_err("d_in and lie_dim must be positive");
    }
    if !(init_std >= 0.0) || !init_std.is_finite() {
        return arg_err("init_std must be finite and non-negative");
    }
    let mut rng = rng_from_seed(seed);
    let mut maps = Vec::with_capacity(k);
    for _ in 0..k {
        let mut gens = Vec::with_capacity(d_in);
        for _ in 0..d_in {
            let g = CMat::from_fn(lie_dim, lie_dim, |_, _| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(init_std * re, init_std * im)
            });
            gens.push(AntiHermitian::project(&g));
        }
        maps.push(DevMap::new(gens)?);
    }
    Ok(MapEnsemble::new(maps)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn taylor_exp(a: &CMat, terms: usize) -> CMat {
        let n = a.nrows();
        let mut sum = CMat::identity(n, n);
        let mut term = CMat::identity(n, n);
        for k in 1..=terms {
            term = &term * a / c(k as f64, 0.0);
            sum += &term;
        }
        sum
    }

    fn random_generator(m: usize, std: f64, seed: u64) -> AntiHermitian {
        sample_map_ensemble(1, m, 1, std, seed).unwrap().maps()[0].generators()[0].clone()
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let u = expm_anti_hermitian(&AntiHermitian::zeros(2)).unwrap();
        assert_eq!(u.matrix(), &CMat::identity(2, 2));
    }

    #[test]
    fn exp_quarter_turn_is_i() {
        let a = AntiHermitian::new(CMat::from_element(1, 1, c(0.0, std::f64::consts::FRAC_PI_2))).unwrap();
        let u = expm_anti_hermitian(&a).unwrap();
        assert!((u.matrix()[(0, 0)] - c(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn exp_inverse_pair() {
        let a = random_generator(4, 0.7, 11);
        let neg = AntiHermitian::new(-a.matrix().clone()).unwrap();
        let prod = expm_anti_hermitian(&a).unwrap().into_matrix() * expm_anti_hermitian(&neg).unwrap().into_matrix();
        assert!(hs_distance(&prod, &CMat::identity(4, 4)).unwrap() < 1e-12);
    }

    #[test]
    fn agrees_with_taylor_series() {
        for seed in 0..20 {
            let mut a = random_generator(5, 1.0, seed).into_matrix();
            // rescale to HS norm 2
            let norm = hs_norm_sq(&a).sqrt();
            a *= c(2.0 / norm, 0.0);
            let a = AntiHermitian::new(a).unwrap();
            let exact = taylor_exp(a.matrix(), 40);
            let u = expm_anti_hermitian(&a).unwrap();
            assert!(hs_distance(u.matrix(), &exact).unwrap() < 1e-10);
            // eigenvalues on the unit circle
            let eig = nalgebra::linalg::Schur::new(u.matrix().clone()).eigenvalues().unwrap();
            for z in eig.iter() {
                assert!((z.norm() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn hs_distance_examples() {
        let i2 = CMat::identity(2, 2);
        assert_eq!(hs_distance(&i2, &i2).unwrap(), 0.0);
        assert!((hs_distance(&i2, &(-i2.clone())).unwrap() - 2.0 * 2f64.sqrt()).abs() < 1e-15);
        let a = CMat::from_element(1, 1, c(0.0, 1.0));
        let b = CMat::from_element(1, 1, c(0.0, -1.0));
        assert!((hs_distance(&a, &b).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(hs_distance(&a, &i2), Err(AdevError::Shape(_))));
    }

    #[test]
    fn zero_std_gives_zero_generators() {
        let ens = sample_map_ensemble(3, 4, 2, 0.0, 1).unwrap();
        for m in ens.maps() {
            for g in m.generators() {
                assert!(g.matrix().iter().all(|z| z.norm() == 0.0));
            }
        }
    }

    #[test]
    fn sampled_generators_are_exactly_anti_hermitian() {
        let ens = sample_map_ensemble(3, 5, 3, 0.3, 9).unwrap();
        for m in ens.maps() {
            for g in m.generators() {
                let s = g.matrix() + g.matrix().adjoint();
                assert!(s.iter().all(|z| z.norm() == 0.0));
            }
        }
    }

    #[test]
    fn offdiagonal_variance_matches_projection() {
        // Re A_jk = (Re G_jk − Re G_kj)/2 has variance 1/2 for unit-variance parts.
        let ens = sample_map_ensemble(1, 2, 100_000, 1.0, 5).unwrap();
        let vals: Vec<f64> = ens.maps().iter().map(|m| m.generators()[0].matrix()[(0, 1)].re).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!((var - 0.5).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn params_roundtrip_and_gradient() {
        let a = random_generator(4, 0.5, 3);
        let p = a.params();
        let b = AntiHermitian::from_params(4, &p).unwrap();
        assert_eq!(a, b);
        // d/dθ Re<W, A(θ)> is linear, so a single difference is exact
        let w = CMat::from_fn(4, 4, |j, k| c((j * 3 + k) as f64 * 0.1, (k as f64) - 0.7 * j as f64));
        let g = param_gradient(&w);
        for idx in 0..p.len() {
            let mut q = vec![0.0; p.len()];
            q[idx] = 1.0;
            let e = AntiHermitian::from_params(4, &q).unwrap();
            assert!((hs_inner(&w, e.matrix()).re - g[idx]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_anti_hermitian() {
        let m = CMat::from_element(2, 2, c(1.0, 0.0));
        assert!(AntiHermitian::new(m).is_err());
        let m = CMat::from_element(1, 1, c(f64::NAN, 0.0));
        assert!(matches!(AntiHermitian::new(m), Err(AdevError::NumericInput(_))));
    }
}
