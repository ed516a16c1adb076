//! Complex linear algebra on `T^{1,0}` with the normalisation used throughout
//! the crate.
//!
//! The Hermitian inner product is `<X, Y> = (1/2) sum X_j conj(Y_j)`, so the
//! Euclidean Kähler form `omega = (i/2) ddbar |z|^2` has coefficient matrix
//! `I/2` and `omega(X, conj X) = |X|^2`. A real (1,1)-form is stored through
//! its coefficient matrix `theta` in the frame `i dz_j ^ dzbar_k`; it acts by
//! `Theta(X, conj Y) = sum theta_jk X_j conj(Y_k)`. For a real function `f`,
//! `i ddbar f` has `theta_jk = d^2 f / dz_j dzbar_k`.

use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Absolute Hermitian-symmetry tolerance on unit-scaled matrices.
pub const HERMITIAN_TOL: f64 = 1e-14;

/// A point of `C^n` stored as `2n` reals `(x_1, y_1, ..., x_n, y_n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CPoint {
    coords: DVector<f64>,
}

impl CPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() || coords.len() % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "a point of C^n needs an even, nonzero number of real coordinates (got {})",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("non-finite coordinate".into()));
        }
        Ok(Self {
            coords: DVector::from_vec(coords),
        })
    }

    pub fn from_real(coords: DVector<f64>) -> Result<Self> {
        Self::new(coords.as_slice().to_vec())
    }

    pub fn from_complex(z: &[C64]) -> Self {
        let mut v = Vec::with_capacity(2 * z.len());
        for zj in z {
            v.push(zj.re);
            v.push(zj.im);
        }
        Self {
            coords: DVector::from_vec(v),
        }
    }

    pub fn origin(n: usize) -> Self {
        Self {
            coords: DVector::zeros(2 * n),
        }
    }

    /// Complex dimension `n`.
    pub fn dim(&self) -> usize {
        self.coords.len() / 2
    }

    pub fn real(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn z(&self, j: usize) -> C64 {
        C64::new(self.coords[2 * j], self.coords[2 * j + 1])
    }

    pub fn to_complex(&self) -> DVector<C64> {
        DVector::from_fn(self.dim(), |j, _| self.z(j))
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coords.norm_squared()
    }

    pub fn norm(&self) -> f64 {
        self.coords.norm()
    }

    /// `self + t * v` for a real direction `v`.
    pub fn offset(&self, v: &DVector<f64>, t: f64) -> CPoint {
        CPoint {
            coords: &self.coords + v * t,
        }
    }

    /// Overwrites `self` with `base + t * v` without allocating.
    pub fn shift_from(&mut self, base: &CPoint, v: &DVector<f64>, t: f64) {
        self.coords.copy_from(&base.coords);
        self.coords.axpy(t, v, 1.0);
    }

    pub fn distance(&self, other: &CPoint) -> f64 {
        (&self.coords - &other.coords).norm()
    }

    pub(crate) fn from_vector_unchecked(coords: DVector<f64>) -> Self {
        Self { coords }
    }
}

impl TryFrom<Vec<f64>> for CPoint {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        CPoint::new(v)
    }
}

impl From<CPoint> for Vec<f64> {
    fn from(p: CPoint) -> Vec<f64> {
        p.coords.as_slice().to_vec()
    }
}

/// A (1,0)-vector `X = sum X_j d/dz_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector(pub DVector<C64>);

impl TangentVector {
    pub fn new(components: Vec<C64>) -> Self {
        Self(DVector::from_vec(components))
    }

    /// The `j`-th coordinate vector `d/dz_j`, of length `1/sqrt(2)`.
    pub fn basis(n: usize, j: usize) -> Self {
        let mut v = DVector::zeros(n);
        v[j] = C64::new(1.0, 0.0);
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// `|X|^2 = (1/2) sum |X_j|^2`.
    pub fn norm_sqr(&self) -> f64 {
        0.5 * self.0.norm_squared()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn inner(&self, other: &TangentVector) -> C64 {
        0.5 * self
            .0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| a * b.conj())
            .sum::<C64>()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self(&self.0 / C64::new(n, 0.0))
    }

    pub fn scale(&self, c: C64) -> Self {
        Self(&self.0 * c)
    }

    /// The underlying real vector `X + conj X`, i.e. `(Re X_j, Im X_j)` interleaved.
    pub fn to_real(&self) -> DVector<f64> {
        let mut v = DVector::zeros(2 * self.dim());
        for (j, c) in self.0.iter().enumerate() {
            v[2 * j] = c.re;
            v[2 * j + 1] = c.im;
        }
        v
    }

    pub fn from_real(v: &DVector<f64>) -> Self {
        Self(DVector::from_fn(v.len() / 2, |j, _| {
            C64::new(v[2 * j], v[2 * j + 1])
        }))
    }
}

impl Add for &TangentVector {
    type Output = TangentVector;
    fn add(self, rhs: &TangentVector) -> TangentVector {
        TangentVector(&self.0 + &rhs.0)
    }
}

impl Sub for &TangentVector {
    type Output = TangentVector;
    fn sub(self, rhs: &TangentVector) -> TangentVector {
        TangentVector(&self.0 - &rhs.0)
    }
}

/// A (1,0)-form `sum a_j dz_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct OneForm10(pub DVector<C64>);

impl OneForm10 {
    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// `a(X) = sum a_j X_j`.
    pub fn apply(&self, x: &TangentVector) -> Result<C64> {
        check_dims(self.dim(), x.dim())?;
        Ok(self.0.iter().zip(x.0.iter()).map(|(a, b)| a * b).sum())
    }

    /// Dual norm squared, `2 sum |a_j|^2`.
    pub fn norm_sqr(&self) -> f64 {
        2.0 * self.0.norm_squared()
    }

    pub fn scale(&self, c: f64) -> Self {
        Self(&self.0 * C64::new(c, 0.0))
    }
}

impl Add for &OneForm10 {
    type Output = OneForm10;
    fn add(self, rhs: &OneForm10) -> OneForm10 {
        OneForm10(&self.0 + &rhs.0)
    }
}

/// A real (1,1)-form given by its Hermitian coefficient matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianForm {
    coeff: DMatrix<C64>,
}

impl HermitianForm {
    /// Validates Hermitian symmetry to [`HERMITIAN_TOL`] relative to the
    /// largest entry.
    pub fn new(coeff: DMatrix<C64>) -> Result<Self> {
        if !coeff.is_square() {
            return Err(Error::DimensionMismatch {
                expected: coeff.nrows(),
                found: coeff.ncols(),
            });
        }
        let asym = hermitian_asymmetry(&coeff);
        let scale = coeff.iter().map(|c| c.norm()).fold(1.0, f64::max);
        if asym > HERMITIAN_TOL * scale {
            return Err(Error::NotHermitian { asymmetry: asym });
        }
        Ok(Self::from_matrix(coeff))
    }

    /// Builds a form from a matrix that is Hermitian up to round-off; the
    /// stored coefficients are the Hermitian part.
    pub fn from_matrix(coeff: DMatrix<C64>) -> Self {
        let adj = coeff.adjoint();
        Self {
            coeff: (coeff + adj) * C64::new(0.5, 0.0),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            coeff: DMatrix::zeros(n, n),
        }
    }

    /// The Euclidean Kähler form, coefficient matrix `I/2`.
    pub fn omega(n: usize) -> Self {
        Self {
            coeff: DMatrix::identity(n, n) * C64::new(0.5, 0.0),
        }
    }

    /// `i a ^ conj(a)` for a (1,0)-form `a`; acts as `a(X) conj(a(Y))`.
    pub fn outer(a: &OneForm10) -> Self {
        Self {
            coeff: &a.0 * a.0.adjoint(),
        }
    }

    pub fn dim(&self) -> usize {
        self.coeff.nrows()
    }

    pub fn coeff(&self) -> &DMatrix<C64> {
        &self.coeff
    }

    pub fn action(&self, x: &TangentVector, y: &TangentVector) -> Result<C64> {
        hermitian_action(self, x, y)
    }

    /// Real value `Theta(X, conj X)`.
    pub fn quad(&self, x: &TangentVector) -> f64 {
        let v = &self.coeff.transpose() * &x.0;
        v.iter().zip(x.0.iter()).map(|(a, b)| a * b.conj()).sum::<C64>().re
    }

    pub fn min_eigenvalue_rel_omega(&self) -> f64 {
        2.0 * hermitian_eigen(&self.coeff).0[0]
    }

    /// Eigenvalues relative to `omega` (ascending) with eigenvectors as
    /// unit-length tangent vectors.
    pub fn eigen_rel_omega(&self) -> (Vec<f64>, Vec<TangentVector>) {
        let (vals, vecs) = hermitian_eigen(&self.coeff.transpose());
        let values = vals.iter().map(|v| 2.0 * v).collect();
        let vectors = (0..vecs.ncols())
            .map(|k| TangentVector(vecs.column(k).map(|c| c * std::f64::consts::SQRT_2)))
            .collect();
        (values, vectors)
    }

    /// Gram matrix `G_ij = Theta(e_i, conj e_j)` on a list of vectors.
    pub fn restrict(&self, basis: &[TangentVector]) -> DMatrix<C64> {
        let k = basis.len();
        DMatrix::from_fn(k, k, |i, j| {
            let v = &self.coeff * basis[j].0.conjugate();
            basis[i].0.iter().zip(v.iter()).map(|(a, b)| a * b).sum()
        })
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            coeff: &self.coeff * C64::new(c, 0.0),
        }
    }
}

impl Add for &HermitianForm {
    type Output = HermitianForm;
    fn add(self, rhs: &HermitianForm) -> HermitianForm {
        HermitianForm {
            coeff: &self.coeff + &rhs.coeff,
        }
    }
}

impl Sub for &HermitianForm {
    type Output = HermitianForm;
    fn sub(self, rhs: &HermitianForm) -> HermitianForm {
        HermitianForm {
            coeff: &self.coeff - &rhs.coeff,
        }
    }
}

impl Mul<f64> for &HermitianForm {
    type Output = HermitianForm;
    fn mul(self, rhs: f64) -> HermitianForm {
        self.scale(rhs)
    }
}

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// `Theta(X, conj Y) = sum theta_jk X_j conj(Y_k)`.
pub fn hermitian_action(theta: &HermitianForm, x: &TangentVector, y: &TangentVector) -> Result<C64> {
    check_dims(theta.dim(), x.dim())?;
    check_dims(theta.dim(), y.dim())?;
    let ybar = y.0.conjugate();
    let t = &theta.coeff * ybar;
    Ok(x.0.iter().zip(t.iter()).map(|(a, b)| a * b).sum())
}

/// `min_{|X| = 1} Theta(X, conj X)`, i.e. twice the smallest eigenvalue of the
/// coefficient matrix. `Theta >= c omega` iff the result is at least `c`.
pub fn min_eigenvalue_rel_omega(coeff: &DMatrix<C64>) -> Result<f64> {
    Ok(HermitianForm::new(coeff.clone())?.min_eigenvalue_rel_omega())
}

/// Slack in `|a+b|^2 >= eps |a|^2 - eps/(1-eps) |b|^2`; always nonnegative.
pub fn epsilon_split_slack(a: C64, b: C64, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must lie in (0, 1), got {eps}"
        )));
    }
    // equals |(1 - eps) a + b|^2 / (1 - eps), which avoids cancellation
    Ok((a * (1.0 - eps) + b).norm_sqr() / (1.0 - eps))
}

pub(crate) fn hermitian_asymmetry(m: &DMatrix<C64>) -> f64 {
    (m - m.adjoint()).iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Eigen-decomposition of a Hermitian matrix with ascending eigenvalues.
pub(crate) fn hermitian_eigen(m: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let n = m.nrows();
    if n == 0 {
        return (vec![], DMatrix::zeros(0, 0));
    }
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn omega_on_basis_vectors() {
        let omega = HermitianForm::omega(2);
        let e1 = TangentVector::basis(2, 0);
        let e2 = TangentVector::basis(2, 1);
        assert!((hermitian_action(&omega, &e1, &e1).unwrap() - c(0.5, 0.0)).norm() < 1e-15);
        assert_eq!(hermitian_action(&omega, &e1, &e2).unwrap(), c(0.0, 0.0));
    }

    #[test]
    fn hand_expanded_action() {
        let theta = HermitianForm::new(DMatrix::from_row_slice(
            2,
            2,
            &[c(1.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(1.0, 0.0)],
        ))
        .unwrap();
        let x = TangentVector::new(vec![c(1.0, 0.0), c(1.0, 0.0)]);
        let v = hermitian_action(&theta, &x, &x).unwrap();
        assert!((v - c(2.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn min_eigenvalue_examples() {
        let id = DMatrix::<C64>::identity(3, 3);
        assert!((min_eigenvalue_rel_omega(&id).unwrap() - 2.0).abs() < 1e-14);
        let om = HermitianForm::omega(3);
        assert!((om.min_eigenvalue_rel_omega() - 1.0).abs() < 1e-14);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![c(1.0, 0.0), c(-3.0, 0.0)]));
        assert!((min_eigenvalue_rel_omega(&d).unwrap() + 6.0).abs() < 1e-13);
    }

    #[test]
    fn rejects_non_hermitian() {
        let m = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(HermitianForm::new(m), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn dimension_mismatch() {
        let om = HermitianForm::omega(2);
        let x = TangentVector::basis(3, 0);
        assert!(matches!(
            hermitian_action(&om, &x, &x),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn split_slack_examples() {
        assert!((epsilon_split_slack(c(1.0, 0.0), c(0.0, 0.0), 0.5).unwrap() - 0.5).abs() < 1e-15);
        assert!((epsilon_split_slack(c(1.0, 0.0), c(-1.0, 0.0), 0.5).unwrap() - 0.5).abs() < 1e-15);
        assert!(epsilon_split_slack(c(1.0, 0.0), c(0.0, 0.0), 1.0).is_err());
        assert!(epsilon_split_slack(c(1.0, 0.0), c(0.0, 0.0), 0.0).is_err());
    }

    #[test]
    fn eigenvectors_are_unit_and_diagonalise() {
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[c(2.0, 0.0), c(0.5, 0.7), c(0.5, -0.7), c(-1.0, 0.0)],
        );
        let form = HermitianForm::new(m).unwrap();
        let (vals, vecs) = form.eigen_rel_omega();
        for (v, x) in vals.iter().zip(vecs.iter()) {
            assert!((x.norm() - 1.0).abs() < 1e-12);
            assert!((form.quad(x) - v).abs() < 1e-12);
        }
    }

    fn arb_c64() -> impl Strategy<Value = C64> {
        (-1e3..1e3f64, -1e3..1e3f64).prop_map(|(a, b)| C64::new(a, b))
    }

    proptest! {
        #[test]
        fn split_slack_is_nonnegative(a in arb_c64(), b in arb_c64(), eps in 1e-3..(1.0 - 1e-3)) {
            let s = epsilon_split_slack(a, b, eps).unwrap();
            let scale = 1.0 + a.norm_sqr() + b.norm_sqr() / (1.0 - eps);
            prop_assert!(s >= -1e-12);
            let expanded = (a + b).norm_sqr() - eps * a.norm_sqr() + eps / (1.0 - eps) * b.norm_sqr();
            prop_assert!((s - expanded).abs() <= 1e-12 * scale);
        }

        #[test]
        fn omega_reproduces_norm(re in prop::collection::vec(-10.0..10.0f64, 6)) {
            let x = TangentVector::new((0..3).map(|j| C64::new(re[2*j], re[2*j+1])).collect());
            let v = hermitian_action(&HermitianForm::omega(3), &x, &x).unwrap();
            prop_assert!((v.re - x.norm_sqr()).abs() <= 1e-14 * (1.0 + x.norm_sqr()));
            prop_assert!(v.im.abs() <= 1e-14 * (1.0 + x.norm_sqr()));
        }

        #[test]
        fn diagonal_action_is_real(entries in prop::collection::vec(-5.0..5.0f64, 9),
                                   re in prop::collection::vec(-3.0..3.0f64, 6)) {
            let m = DMatrix::from_fn(3, 3, |i, j| C64::new(entries[3*i+j], entries[3*j+i]));
            let theta = HermitianForm::from_matrix(m);
            let x = TangentVector::new((0..3).map(|j| C64::new(re[2*j], re[2*j+1])).collect());
            let v = hermitian_action(&theta, &x, &x).unwrap();
            let bound = 1e-12 * (1.0 + theta.coeff().norm() * x.norm_sqr());
            prop_assert!(v.im.abs() <= bound);
        }
    }
}
