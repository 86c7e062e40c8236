//! Truncated Fock-space linear algebra.
//!
//! Operators and states are dense. A single bosonic mode truncated at
//! `n_levels` photons is small enough (tens of levels) that dense kernels
//! are both the simplest and the fastest option; composite two-mode spaces
//! are built with [`OperatorMatrix::kron`].

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

/// Number of Fock levels kept in a truncated single-mode space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FockDim(usize);

impl FockDim {
    /// Default truncation for coherent amplitudes around 2.8.
    pub const DEFAULT: FockDim = FockDim(40);

    pub fn new(n_levels: usize) -> Result<Self> {
        if n_levels < 2 {
            return Err(Error::InvalidParams(format!(
                "a Fock space needs at least 2 levels, got {n_levels}"
            )));
        }
        Ok(FockDim(n_levels))
    }

    #[inline]
    pub fn get(self) -> usize {
        self.0
    }
}

impl Default for FockDim {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl fmt::Display for FockDim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Dense square complex matrix acting on a truncated Fock space (or a
/// tensor product of such spaces).
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix(DMatrix<C64>);

impl OperatorMatrix {
    pub fn from_matrix(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        Ok(OperatorMatrix(m))
    }

    pub fn zeros(dim: usize) -> Self {
        OperatorMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        OperatorMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[C64]) -> Self {
        OperatorMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    #[inline]
    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.0
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.0[(row, col)]
    }

    pub fn dagger(&self) -> Self {
        OperatorMatrix(self.0.adjoint())
    }

    pub fn scale(&self, c: C64) -> Self {
        OperatorMatrix(&self.0 * c)
    }

    pub fn scale_re(&self, c: f64) -> Self {
        self.scale(C64::new(c, 0.0))
    }

    pub fn commutator(&self, other: &Self) -> Self {
        OperatorMatrix(&self.0 * &other.0 - &other.0 * &self.0)
    }

    /// Kronecker product `self ⊗ other`; the left factor is the slow index.
    pub fn kron(&self, other: &Self) -> Self {
        OperatorMatrix(self.0.kronecker(&other.0))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `‖H − H†‖_F / ‖H‖_F`, or the absolute deviation for the zero matrix.
    pub fn hermiticity_deviation(&self) -> f64 {
        let n = self.dim();
        let mut dev = 0.0;
        for i in 0..n {
            for j in 0..n {
                dev += (self.0[(i, j)] - self.0[(j, i)].conj()).norm_sqr();
            }
        }
        let dev = dev.sqrt();
        let norm = self.frobenius_norm();
        if norm > 0.0 {
            dev / norm
        } else {
            dev
        }
    }

    pub fn is_hermitian(&self, rel_tol: f64) -> bool {
        self.hermiticity_deviation() <= rel_tol
    }

    /// Largest `|i − j|` with a nonzero entry.
    pub fn half_bandwidth(&self) -> usize {
        let n = self.dim();
        let mut b = 0;
        for j in 0..n {
            for i in 0..n {
                if self.0[(i, j)] != ZERO {
                    b = b.max(i.abs_diff(j));
                }
            }
        }
        b
    }

    pub fn apply(&self, v: &StateVector) -> Result<StateVector> {
        check_dim(self.dim(), v.dim())?;
        Ok(StateVector(&self.0 * &v.0))
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }
}

impl Add for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn add(self, rhs: Self) -> OperatorMatrix {
        OperatorMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn sub(self, rhs: Self) -> OperatorMatrix {
        OperatorMatrix(&self.0 - &rhs.0)
    }
}

impl Mul for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn mul(self, rhs: Self) -> OperatorMatrix {
        OperatorMatrix(&self.0 * &rhs.0)
    }
}

/// Normalized pure state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(DVector<C64>);

impl StateVector {
    /// Normalizes `amps`; fails on the zero vector.
    pub fn from_amplitudes(amps: Vec<C64>) -> Result<Self> {
        let v = DVector::from_vec(amps);
        let norm = v.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidParams("state vector has zero or non-finite norm".into()));
        }
        Ok(StateVector(v / C64::new(norm, 0.0)))
    }

    pub(crate) fn from_normalized(v: DVector<C64>) -> Self {
        StateVector(v)
    }

    pub fn fock(dim: FockDim, k: usize) -> Result<Self> {
        if k >= dim.get() {
            return Err(Error::Index(format!("Fock level {k} outside dimension {dim}")));
        }
        let mut v = DVector::zeros(dim.get());
        v[k] = ONE;
        Ok(StateVector(v))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Self) -> Result<C64> {
        check_dim(self.dim(), other.dim())?;
        Ok(self.0.dotc(&other.0))
    }

    pub fn expectation(&self, op: &OperatorMatrix) -> Result<C64> {
        check_dim(op.dim(), self.dim())?;
        Ok(self.0.dotc(&(&op.0 * &self.0)))
    }

    /// Normalized superposition `a·self + b·other`.
    pub fn superpose(&self, a: C64, other: &Self, b: C64) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        let v = &self.0 * a + &other.0 * b;
        StateVector::from_amplitudes(v.iter().copied().collect())
    }

    pub fn mean_photon_number(&self) -> f64 {
        self.0
            .iter()
            .enumerate()
            .map(|(n, c)| n as f64 * c.norm_sqr())
            .sum()
    }
}

/// Density matrix on a truncated Fock space.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityState(DMatrix<C64>);

impl DensityState {
    pub const HERMITICITY_TOL: f64 = 1e-10;
    pub const TRACE_TOL: f64 = 1e-8;
    pub const NEGATIVITY_TOL: f64 = -1e-6;

    pub fn from_pure(psi: &StateVector) -> Self {
        DensityState(&psi.0 * psi.0.adjoint())
    }

    /// Wraps a matrix without validation; call [`DensityState::validate`]
    /// where the invariants matter.
    pub fn from_matrix_unchecked(m: DMatrix<C64>) -> Self {
        DensityState(m)
    }

    /// Wraps a matrix and checks Hermiticity, trace and positivity.
    pub fn from_matrix(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        let rho = DensityState(m);
        rho.validate()?;
        Ok(rho)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    /// Absolute Frobenius deviation `‖ρ − ρ†‖`.
    pub fn hermiticity_deviation(&self) -> f64 {
        let n = self.dim();
        let mut dev = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                dev += 2.0 * (self.0[(i, j)] - self.0[(j, i)].conj()).norm_sqr();
            }
            dev += self.0[(i, i)].im.powi(2) * 4.0;
        }
        dev.sqrt()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.0 + self.0.adjoint()) * C64::new(0.5, 0.0);
        herm.symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// `Tr[ρ O]`.
    pub fn expectation(&self, op: &OperatorMatrix) -> Result<C64> {
        check_dim(op.dim(), self.dim())?;
        Ok(trace_of_product(&self.0, &op.0))
    }

    /// Population of Fock level `k`.
    pub fn population(&self, k: usize) -> f64 {
        self.0[(k, k)].re
    }

    pub fn validate(&self) -> Result<()> {
        let herm = self.hermiticity_deviation();
        if herm > Self::HERMITICITY_TOL {
            return Err(Error::NotHermitian(herm));
        }
        let tr = self.trace();
        if (tr - ONE).norm() > Self::TRACE_TOL {
            return Err(Error::InvalidParams(format!("density matrix trace {tr} differs from 1")));
        }
        let min = self.min_eigenvalue();
        if min < Self::NEGATIVITY_TOL {
            return Err(Error::InvalidParams(format!(
                "density matrix eigenvalue {min:e} below tolerance"
            )));
        }
        Ok(())
    }
}

/// `Tr[A B]` without forming the product.
pub(crate) fn trace_of_product(a: &DMatrix<C64>, b: &DMatrix<C64>) -> C64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(Error::DimensionMismatch { expected, got })
    } else {
        Ok(())
    }
}

/// Photon annihilation operator, `⟨m|a|n⟩ = √n δ_{m,n−1}`.
pub fn annihilation(dim: FockDim) -> OperatorMatrix {
    let n = dim.get();
    let mut m = DMatrix::zeros(n, n);
    for k in 1..n {
        m[(k - 1, k)] = C64::new((k as f64).sqrt(), 0.0);
    }
    OperatorMatrix(m)
}

pub fn creation(dim: FockDim) -> OperatorMatrix {
    annihilation(dim).dagger()
}

/// `a†a`, built directly as `diag(0, 1, …, n−1)`.
pub fn number(dim: FockDim) -> OperatorMatrix {
    let diag: Vec<C64> = (0..dim.get()).map(|k| C64::new(k as f64, 0.0)).collect();
    OperatorMatrix::from_diagonal(&diag)
}

/// Photon-number parity `(−1)^{a†a}`.
pub fn parity_operator(dim: FockDim) -> OperatorMatrix {
    let diag: Vec<C64> = (0..dim.get())
        .map(|k| if k % 2 == 0 { ONE } else { -ONE })
        .collect();
    OperatorMatrix::from_diagonal(&diag)
}

/// Coherent state `|α⟩` projected on the truncated space and renormalized.
///
/// The truncation must hold a Poisson distribution of mean `|α|²` with room
/// to spare: `|α|² < n_levels / 4` is required, otherwise
/// [`Error::Truncation`] is returned.
pub fn coherent_state(dim: FockDim, alpha: C64) -> Result<StateVector> {
    let n = dim.get();
    let mean = alpha.norm_sqr();
    if !(mean < n as f64 / 4.0) && mean > 0.0 {
        return Err(Error::Truncation(format!(
            "|alpha|^2 = {mean} needs more than {n} Fock levels (requires |alpha|^2 < n/4)"
        )));
    }
    let mut amps = vec![ZERO; n];
    if mean == 0.0 {
        amps[0] = ONE;
        return Ok(StateVector(DVector::from_vec(amps)));
    }
    // log|c_n| = n log|α| − log(n!)/2 − |α|²/2, accumulated term by term.
    let log_abs = alpha.norm().ln();
    let arg = alpha.arg();
    let mut log_fact = 0.0;
    for (k, c) in amps.iter_mut().enumerate() {
        if k > 0 {
            log_fact += (k as f64).ln();
        }
        let log_mag = k as f64 * log_abs - 0.5 * log_fact - 0.5 * mean;
        *c = C64::from_polar(log_mag.exp(), k as f64 * arg);
    }
    StateVector::from_amplitudes(amps)
}

/// Analytic overlap `⟨α|β⟩` of untruncated coherent states.
pub fn coherent_overlap(alpha: C64, beta: C64) -> C64 {
    (-(alpha.norm_sqr() + beta.norm_sqr()) / 2.0 + alpha.conj() * beta).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dim(n: usize) -> FockDim {
        FockDim::new(n).unwrap()
    }

    #[test]
    fn fock_dim_rejects_single_level() {
        assert!(FockDim::new(1).is_err());
        assert!(FockDim::new(0).is_err());
        assert_eq!(FockDim::new(2).unwrap().get(), 2);
    }

    #[test]
    fn annihilation_smallest_space() {
        let a = annihilation(dim(2));
        assert_eq!(a.get(0, 1), ONE);
        assert_eq!(a.get(0, 0), ZERO);
        assert_eq!(a.get(1, 0), ZERO);
        assert_eq!(a.get(1, 1), ZERO);
    }

    #[test]
    fn annihilation_sqrt_rule() {
        let a = annihilation(dim(3));
        assert!((a.get(1, 2).re - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn number_operator_eigen_relation() {
        let d = dim(10);
        let a = annihilation(d);
        let n = &creation(d) * &a;
        for k in 0..9 {
            let psi = StateVector::fock(d, k).unwrap();
            let out = n.apply(&psi).unwrap();
            for (m, z) in out.amplitudes().iter().enumerate() {
                let expect = if m == k { k as f64 } else { 0.0 };
                assert!((z - C64::new(expect, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn canonical_commutator_away_from_edge() {
        let d = dim(15);
        let a = annihilation(d);
        let c = a.commutator(&a.dagger());
        for i in 0..14 {
            for j in 0..14 {
                let expect = if i == j { ONE } else { ZERO };
                assert!((c.get(i, j) - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn parity_is_involution() {
        let p2 = parity_operator(dim(2));
        assert_eq!(p2.get(0, 0), ONE);
        assert_eq!(p2.get(1, 1), -ONE);
        let p = parity_operator(dim(20));
        let sq = &p * &p;
        assert_eq!(sq, OperatorMatrix::identity(20));
    }

    #[test]
    fn coherent_vacuum() {
        let v = coherent_state(dim(5), ZERO).unwrap();
        assert_eq!(v, StateVector::fock(dim(5), 0).unwrap());
    }

    #[test]
    fn coherent_mean_photon_number() {
        let v = coherent_state(dim(60), C64::new(2.8, 0.0)).unwrap();
        assert!((v.mean_photon_number() - 7.84).abs() < 1e-4);
        assert!((v.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn coherent_rejects_overfull_truncation() {
        let err = coherent_state(dim(4), ONE).unwrap_err();
        assert!(matches!(err, Error::Truncation(_)));
    }

    #[test]
    fn coherent_eigen_residual() {
        let d = dim(40);
        let alpha = C64::new(2.8, 0.0);
        let psi = coherent_state(d, alpha).unwrap();
        let a_psi = annihilation(d).apply(&psi).unwrap();
        let resid = (a_psi.amplitudes() - psi.amplitudes() * alpha).norm();
        assert!(resid < 1e-6, "residual {resid}");
    }

    #[test]
    fn coherent_survives_large_photon_numbers() {
        // 200 levels pushes n! far past f64 range.
        let d = dim(200);
        let psi = coherent_state(d, C64::new(6.0, 0.0)).unwrap();
        assert!(psi.amplitudes().iter().all(|c| c.re.is_finite()));
        assert!((psi.mean_photon_number() - 36.0).abs() < 1e-8);
    }

    #[test]
    fn density_from_pure_is_valid() {
        let psi = coherent_state(dim(30), C64::new(1.2, -0.4)).unwrap();
        let rho = DensityState::from_pure(&psi);
        rho.validate().unwrap();
        let a = annihilation(dim(30));
        let ea = rho.expectation(&a).unwrap();
        assert!((ea - C64::new(1.2, -0.4)).norm() < 1e-8);
    }

    #[test]
    fn half_bandwidth_of_ladder_ops() {
        let a = annihilation(dim(6));
        assert_eq!(a.half_bandwidth(), 1);
        assert_eq!((&a * &a).half_bandwidth(), 2);
        assert_eq!(number(dim(6)).half_bandwidth(), 0);
    }
}
