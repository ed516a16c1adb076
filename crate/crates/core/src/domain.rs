//! Defining-function oracles, Wirtinger conversion, and the catalog of test
//! domains.
//!
//! Real coordinates are interleaved: index `2j` is `x_j = Re z_j` and index
//! `2j + 1` is `y_j = Im z_j`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermitian::{CPoint, HermitianForm, OneForm10, C64};
use crate::numdiff;
use crate::sampling;

/// Symmetry tolerance on real Hessians, relative to their largest entry.
pub const HESSIAN_SYMMETRY_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothness {
    Finite(u32),
    Infinite,
}

impl fmt::Display for Smoothness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Smoothness::Finite(k) => write!(f, "C^{k}"),
            Smoothness::Infinite => write!(f, "C^inf"),
        }
    }
}

/// A defining function `rho` with `Omega = {rho < 0}` and its derivatives.
///
/// Implementations without closed-form derivatives can rely on the default
/// methods, which use central differences with step `1e-5 (1 + |z|)`.
pub trait DefiningFunction: Send + Sync + fmt::Debug {
    /// Complex dimension.
    fn dim(&self) -> usize;

    fn rho(&self, z: &CPoint) -> Result<f64>;

    fn gradient(&self, z: &CPoint) -> Result<DVector<f64>> {
        numdiff::gradient(|p| self.rho(p), z, numdiff::default_step(z))
    }

    fn hessian(&self, z: &CPoint) -> Result<DMatrix<f64>> {
        numdiff::hessian_from_gradient(|p| self.gradient(p), z, numdiff::default_step(z))
    }

    /// `sup_Omega |z|`; infinite for unbounded test geometries.
    fn bounding_radius(&self) -> f64;

    fn smoothness(&self) -> Smoothness {
        Smoothness::Infinite
    }

    /// A known point with `rho < 0`.
    fn interior_point(&self) -> CPoint;

    /// Axis-aligned box containing the closure of the domain.
    fn sampling_box(&self) -> Vec<(f64, f64)> {
        let r = self.bounding_radius().min(1e3) * 1.05;
        vec![(-r, r); 2 * self.dim()]
    }

    /// Boundary points on known Levi-degenerate loci, used to stratify
    /// boundary sampling. Empty by default.
    fn feature_points(&self, _count: usize, _rng: &mut dyn RngCore) -> Vec<CPoint> {
        Vec::new()
    }

    fn has_analytic_derivatives(&self) -> bool {
        false
    }
}

/// Catalog entries understood by [`make_domain`] and the domain file schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    /// `|z|^2 < R^2` in `C^dim`.
    Ball {
        radius: f64,
        #[serde(default = "default_dim")]
        dim: usize,
    },
    /// `sum w_j |z_j|^2 < 1`.
    Ellipsoid { weights: Vec<f64> },
    /// Complete Hartogs domain `|w|^{2m} < 1 - |z|^2` in `C^2`.
    Hartogs { exponent: u32 },
    /// Worm domain `|z + exp(i log|w|^2)|^2 < 1 - eta(log|w|^2)`.
    Worm {
        beta: f64,
        #[serde(default = "default_worm_cutoff")]
        cutoff: f64,
    },
    /// The half-space `Re z_1 < 0`; unbounded, for flat-geometry checks.
    HalfSpace {
        #[serde(default = "default_dim")]
        dim: usize,
    },
}

fn default_dim() -> usize {
    2
}

fn default_worm_cutoff() -> f64 {
    100.0
}

/// A defining-function oracle with its catalog metadata.
#[derive(Clone)]
pub struct DomainOracle {
    name: String,
    spec: Option<DomainSpec>,
    function: Arc<dyn DefiningFunction>,
}

impl fmt::Debug for DomainOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DomainOracle")
            .field("name", &self.name)
            .field("spec", &self.spec)
            .finish()
    }
}

impl DomainOracle {
    pub fn custom(name: impl Into<String>, function: Arc<dyn DefiningFunction>) -> Self {
        Self {
            name: name.into(),
            spec: None,
            function,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn spec(&self) -> Option<&DomainSpec> {
        self.spec.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.function.dim()
    }

    pub fn bounding_radius(&self) -> f64 {
        self.function.bounding_radius()
    }

    pub fn smoothness(&self) -> Smoothness {
        self.function.smoothness()
    }

    pub fn function(&self) -> &Arc<dyn DefiningFunction> {
        &self.function
    }

    fn check_point(&self, z: &CPoint) -> Result<()> {
        if z.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: z.dim(),
            });
        }
        Ok(())
    }

    pub fn rho(&self, z: &CPoint) -> Result<f64> {
        self.check_point(z)?;
        let v = self.function.rho(z)?;
        if !v.is_finite() {
            return Err(Error::OracleFailure(format!("non-finite rho at {:?}", z.real().as_slice())));
        }
        Ok(v)
    }

    pub fn gradient(&self, z: &CPoint) -> Result<DVector<f64>> {
        self.check_point(z)?;
        self.function.gradient(z)
    }

    pub fn hessian(&self, z: &CPoint) -> Result<DMatrix<f64>> {
        self.check_point(z)?;
        self.function.hessian(z)
    }

    pub fn interior_point(&self) -> CPoint {
        self.function.interior_point()
    }

    pub fn sampling_box(&self) -> Vec<(f64, f64)> {
        self.function.sampling_box()
    }

    pub fn feature_points(&self, count: usize, rng: &mut dyn RngCore) -> Vec<CPoint> {
        self.function.feature_points(count, rng)
    }

    /// Diameter proxy `2 r`, or the sampling box diagonal for unbounded domains.
    pub fn diameter(&self) -> f64 {
        let r = self.bounding_radius();
        if r.is_finite() {
            2.0 * r
        } else {
            self.sampling_box()
                .iter()
                .map(|(a, b)| (b - a).powi(2))
                .sum::<f64>()
                .sqrt()
        }
    }
}

/// `(rho, grad rho, Hess rho)` at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct RealJet {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// Complex derivatives of a real function: `d rho`, the mixed Hessian
/// `M_jk = d^2 rho / dz_j dzbar_k` and the pure Hessian `P_jk = d^2 rho / dz_j dz_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexJet {
    pub value: f64,
    pub dz: OneForm10,
    pub mixed: HermitianForm,
    pub pure: DMatrix<C64>,
}

impl ComplexJet {
    /// Rebuilds the real Hessian from `(M, P)`.
    pub fn real_hessian(&self) -> DMatrix<f64> {
        real_hessian_from_blocks(self.mixed.coeff(), &self.pure)
    }
}

pub fn evaluate_jet(oracle: &DomainOracle, z: &CPoint) -> Result<RealJet> {
    Ok(RealJet {
        value: oracle.rho(z)?,
        gradient: oracle.gradient(z)?,
        hessian: oracle.hessian(z)?,
    })
}

pub(crate) fn symmetry_defect(h: &DMatrix<f64>) -> f64 {
    (h - h.transpose()).amax()
}

/// `d f / dz_j = (f_{x_j} - i f_{y_j}) / 2`.
pub fn complex_gradient(g: &DVector<f64>) -> OneForm10 {
    OneForm10(DVector::from_fn(g.len() / 2, |j, _| {
        C64::new(0.5 * g[2 * j], -0.5 * g[2 * j + 1])
    }))
}

/// Mixed and pure complex Hessian blocks `(M, P)` of a real symmetric matrix.
pub fn complex_hessian_blocks(h: &DMatrix<f64>) -> (DMatrix<C64>, DMatrix<C64>) {
    let n = h.nrows() / 2;
    let mixed = DMatrix::from_fn(n, n, |j, k| {
        let (xj, yj, xk, yk) = (2 * j, 2 * j + 1, 2 * k, 2 * k + 1);
        C64::new(h[(xj, xk)] + h[(yj, yk)], h[(xj, yk)] - h[(yj, xk)]) * 0.25
    });
    let pure = DMatrix::from_fn(n, n, |j, k| {
        let (xj, yj, xk, yk) = (2 * j, 2 * j + 1, 2 * k, 2 * k + 1);
        C64::new(h[(xj, xk)] - h[(yj, yk)], -(h[(xj, yk)] + h[(yj, xk)])) * 0.25
    });
    (mixed, pure)
}

pub fn real_hessian_from_blocks(mixed: &DMatrix<C64>, pure: &DMatrix<C64>) -> DMatrix<f64> {
    let n = mixed.nrows();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    for j in 0..n {
        for k in 0..n {
            let sum = mixed[(j, k)] + pure[(j, k)];
            let diff = mixed[(j, k)] - pure[(j, k)];
            h[(2 * j, 2 * k)] = 2.0 * sum.re;
            h[(2 * j + 1, 2 * k)] = -2.0 * sum.im;
            h[(2 * j + 1, 2 * k + 1)] = 2.0 * diff.re;
            h[(2 * j, 2 * k + 1)] = 2.0 * diff.im;
        }
    }
    h
}

/// Wirtinger conversion of a real jet.
pub fn to_complex_jet(jet: &RealJet) -> Result<ComplexJet> {
    let m = jet.hessian.nrows();
    if m % 2 != 0 || jet.hessian.ncols() != m || jet.gradient.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: jet.gradient.len(),
        });
    }
    let asym = symmetry_defect(&jet.hessian);
    if asym > HESSIAN_SYMMETRY_TOL * jet.hessian.amax().max(1.0) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let (mixed, pure) = complex_hessian_blocks(&jet.hessian);
    Ok(ComplexJet {
        value: jet.value,
        dz: complex_gradient(&jet.gradient),
        mixed: HermitianForm::from_matrix(mixed),
        pure: (&pure + pure.transpose()) * C64::new(0.5, 0.0),
    })
}

#[derive(Debug)]
struct Ball {
    radius: f64,
    dim: usize,
}

impl DefiningFunction for Ball {
    fn dim(&self) -> usize {
        self.dim
    }
    fn rho(&self, z: &CPoint) -> Result<f64> {
        Ok(z.norm_sqr() - self.radius * self.radius)
    }
    fn gradient(&self, z: &CPoint) -> Result<DVector<f64>> {
        Ok(z.real() * 2.0)
    }
    fn hessian(&self, _z: &CPoint) -> Result<DMatrix<f64>> {
        Ok(DMatrix::identity(2 * self.dim, 2 * self.dim) * 2.0)
    }
    fn bounding_radius(&self) -> f64 {
        self.radius
    }
    fn interior_point(&self) -> CPoint {
        CPoint::origin(self.dim)
    }
    fn has_analytic_derivatives(&self) -> bool {
        true
    }
}

#[derive(Debug)]
struct Ellipsoid {
    weights: Vec<f64>,
}

impl DefiningFunction for Ellipsoid {
    fn dim(&self) -> usize {
        self.weights.len()
    }
    fn rho(&self, z: &CPoint) -> Result<f64> {
        Ok(self
            .weights
            .iter()
            .enumerate()
            .map(|(j, w)| w * z.z(j).norm_sqr())
            .sum::<f64>()
            - 1.0)
    }
    fn gradient(&self, z: &CPoint) -> Result<DVector<f64>> {
        Ok(DVector::from_fn(2 * self.dim(), |i, _| {
            2.0 * self.weights[i / 2] * z.real()[i]
        }))
    }
    fn hessian(&self, _z: &CPoint) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_diagonal(&DVector::from_fn(2 * self.dim(), |i, _| {
            2.0 * self.weights[i / 2]
        })))
    }
    fn bounding_radius(&self) -> f64 {
        let wmin = self.weights.iter().cloned().fold(f64::INFINITY, f64::min);
        1.0 / wmin.sqrt()
    }
    fn interior_point(&self) -> CPoint {
        CPoint::origin(self.dim())
    }
    fn has_analytic_derivatives(&self) -> bool {
        true
    }
}

/// `|z|^2 + |w|^{2m} - 1` on `C^2`.
#[derive(Debug)]
struct Hartogs {
    exponent: u32,
}

impl DefiningFunction for Hartogs {
    fn dim(&self) -> usize {
        2
    }
    fn rho(&self, z: &CPoint) -> Result<f64> {
        let s = z.z(1).norm_sqr();
        Ok(z.z(0).norm_sqr() + s.powi(self.exponent as i32) - 1.0)
    }
    fn gradient(&self, z: &CPoint) -> Result<DVector<f64>> {
        let x = z.real();
        let m = self.exponent as i32;
        let s = x[2] * x[2] + x[3] * x[3];
        let c = 2.0 * m as f64 * s.powi(m - 1);
        Ok(DVector::from_vec(vec![2.0 * x[0], 2.0 * x[1], c * x[2], c * x[3]]))
    }
    fn hessian(&self, z: &CPoint) -> Result<DMatrix<f64>> {
        let x = z.real();
        let m = self.exponent as i32;
        let mf = m as f64;
        let s = x[2] * x[2] + x[3] * x[3];
        let c = 2.0 * mf * s.powi(m - 1);
        let d = if m >= 2 {
            4.0 * mf * (mf - 1.0) * s.powi(m - 2)
        } else {
            0.0
        };
        let mut h = DMatrix::zeros(4, 4);
        h[(0, 0)] = 2.0;
        h[(1, 1)] = 2.0;
        h[(2, 2)] = c + d * x[2] * x[2];
        h[(3, 3)] = c + d * x[3] * x[3];
        h[(2, 3)] = d * x[2] * x[3];
        h[(3, 2)] = h[(2, 3)];
        Ok(h)
    }
    fn bounding_radius(&self) -> f64 {
        // maximise 1 - s^m + s over s = |w|^2 in [0, 1]
        let m = self.exponent as f64;
        if self.exponent <= 1 {
            return 1.0;
        }
        let s = (1.0 / m).powf(1.0 / (m - 1.0));
        (1.0 + s - s.powf(m)).sqrt()
    }
    fn interior_point(&self) -> CPoint {
        CPoint::origin(2)
    }
    /// The circle `{|z| = 1, w = 0}`, Levi-null for `m >= 2`.
    fn feature_points(&self, count: usize, rng: &mut dyn RngCore) -> Vec<CPoint> {
        if self.exponent < 2 {
            return Vec::new();
        }
        let shift = rng.random::<f64>();
        (0..count)
            .map(|k| {
                let theta = std::f64::consts::TAU * (k as f64 + shift) / count as f64;
                CPoint::from_vector_unchecked(DVector::from_vec(vec![theta.cos(), theta.sin(), 0.0, 0.0]))
            })
            .collect()
    }
    fn has_analytic_derivatives(&self) -> bool {
        true
    }
}

/// Worm domain with the smooth convex cutoff `eta(x) = K exp(-1/(|x| - c))`
/// for `|x| > c = beta - pi/2`, zero otherwise.
///
/// The Levi-flat annulus is `{(0, w) : |log|w|^2| <= c}`.
#[derive(Debug)]
struct Worm {
    beta: f64,
    cutoff: f64,
    radius: f64,
}

impl Worm {
    fn new(beta: f64, cutoff: f64) -> Self {
        let mut w = Worm {
            beta,
            cutoff,
            radius: 0.0,
        };
        w.radius = w.compute_radius();
        w
    }

    fn flat_half_width(&self) -> f64 {
        self.beta - std::f64::consts::FRAC_PI_2
    }

    /// Largest `|log|w|^2|` reached by the closure, where `eta = 1`.
    fn log_extent(&self) -> f64 {
        self.flat_half_width() + 1.0 / self.cutoff.ln()
    }

    fn profile(&self, x: f64) -> (f64, f64, f64) {
        let d = x.abs() - self.flat_half_width();
        if d <= 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let e = (-1.0 / d).exp();
        let k = self.cutoff;
        let d2 = d * d;
        (
            k * e,
            x.signum() * k * e / d2,
            k * e * (1.0 / (d2 * d2) - 2.0 / (d2 * d)),
        )
    }

    fn compute_radius(&self) -> f64 {
        // sup of |z|^2 + |w|^2 = (1 + sqrt(1 - eta(x)))^2 + e^x over admissible x
        let ext = self.log_extent();
        let objective = |x: f64| {
            let (eta, _, _) = self.profile(x);
            (1.0 + (1.0 - eta).max(0.0).sqrt()).powi(2) + x.exp()
        };
        let steps = 20_000;
        let mut best = (f64::NEG_INFINITY, 0.0);
        for i in 0..=steps {
            let x = -ext + 2.0 * ext * i as f64 / steps as f64;
            let v = objective(x);
            if v > best.0 {
                best = (v, x);
            }
        }
        let h = 2.0 * ext / steps as f64;
        let (mut a, mut b) = ((best.1 - h).max(-ext), (best.1 + h).min(ext));
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if objective(c) > objective(d) {
                b = d;
            } else {
                a = c;
            }
        }
        best.0.max(objective(0.5 * (a + b))).sqrt()
    }

    fn log_modulus(&self, x: &DVector<f64>) -> Result<(f64, f64)> {
        let s = x[2] * x[2] + x[3] * x[3];
        if s < 1e-300 {
            return Err(Error::OracleFailure(
                "worm defining function is undefined at w = 0 (log|w|^2)".into(),
            ));
        }
        Ok((s, s.ln()))
    }
}

impl DefiningFunction for Worm {
    fn dim(&self) -> usize {
        2
    }

    fn rho(&self, z: &CPoint) -> Result<f64> {
        let x = z.real();
        let (_, l) = self.log_modulus(x)?;
        let (eta, _, _) = self.profile(l);
        Ok((x[0] + l.cos()).powi(2) + (x[1] + l.sin()).powi(2) - 1.0 + eta)
    }

    fn gradient(&self, z: &CPoint) -> Result<DVector<f64>> {
        let x = z.real();
        let (s, l) = self.log_modulus(x)?;
        let (c, sn) = (l.cos(), l.sin());
        let (_, d_eta, _) = self.profile(l);
        let rho_l = 2.0 * (x[1] * c - x[0] * sn) + d_eta;
        Ok(DVector::from_vec(vec![
            2.0 * (x[0] + c),
            2.0 * (x[1] + sn),
            rho_l * 2.0 * x[2] / s,
            rho_l * 2.0 * x[3] / s,
        ]))
    }

    fn hessian(&self, z: &CPoint) -> Result<DMatrix<f64>> {
        let x = z.real();
        let (s, l) = self.log_modulus(x)?;
        let (c, sn) = (l.cos(), l.sin());
        let (_, d_eta, dd_eta) = self.profile(l);
        let (u, v) = (x[2], x[3]);
        let rho_l = 2.0 * (x[1] * c - x[0] * sn) + d_eta;
        let rho_ll = -2.0 * (x[1] * sn + x[0] * c) + dd_eta;
        let (lu, lv) = (2.0 * u / s, 2.0 * v / s);
        let s2 = s * s;
        let luu = 2.0 * (v * v - u * u) / s2;
        let lvv = 2.0 * (u * u - v * v) / s2;
        let luv = -4.0 * u * v / s2;
        let mut h = DMatrix::zeros(4, 4);
        h[(0, 0)] = 2.0;
        h[(1, 1)] = 2.0;
        h[(0, 2)] = -2.0 * sn * lu;
        h[(0, 3)] = -2.0 * sn * lv;
        h[(1, 2)] = 2.0 * c * lu;
        h[(1, 3)] = 2.0 * c * lv;
        h[(2, 2)] = rho_ll * lu * lu + rho_l * luu;
        h[(3, 3)] = rho_ll * lv * lv + rho_l * lvv;
        h[(2, 3)] = rho_ll * lu * lv + rho_l * luv;
        for (i, j) in [(0, 2), (0, 3), (1, 2), (1, 3), (2, 3)] {
            h[(j, i)] = h[(i, j)];
        }
        Ok(h)
    }

    fn bounding_radius(&self) -> f64 {
        self.radius
    }

    fn interior_point(&self) -> CPoint {
        CPoint::new(vec![-1.0, 0.0, 1.0, 0.0]).expect("finite")
    }

    fn sampling_box(&self) -> Vec<(f64, f64)> {
        let rw = (0.5 * self.log_extent()).exp() * 1.02;
        vec![(-2.05, 2.05), (-2.05, 2.05), (-rw, rw), (-rw, rw)]
    }

    /// Stratified points on the Levi-flat annulus, one per stratum of `log|w|^2`.
    fn feature_points(&self, count: usize, rng: &mut dyn RngCore) -> Vec<CPoint> {
        let c = self.flat_half_width();
        (0..count)
            .map(|k| {
                let t = if count == 1 {
                    0.5
                } else {
                    (k as f64 + rng.random::<f64>()) / count as f64
                };
                let l = -c + 2.0 * c * t;
                let theta = std::f64::consts::TAU * rng.random::<f64>();
                let m = (0.5 * l).exp();
                CPoint::new(vec![0.0, 0.0, m * theta.cos(), m * theta.sin()]).expect("finite")
            })
            .collect()
    }

    fn has_analytic_derivatives(&self) -> bool {
        true
    }
}

/// `Re z_1 < 0`.
#[derive(Debug)]
struct HalfSpace {
    dim: usize,
}

impl DefiningFunction for HalfSpace {
    fn dim(&self) -> usize {
        self.dim
    }
    fn rho(&self, z: &CPoint) -> Result<f64> {
        Ok(z.real()[0])
    }
    fn gradient(&self, _z: &CPoint) -> Result<DVector<f64>> {
        let mut g = DVector::zeros(2 * self.dim);
        g[0] = 1.0;
        Ok(g)
    }
    fn hessian(&self, _z: &CPoint) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(2 * self.dim, 2 * self.dim))
    }
    fn bounding_radius(&self) -> f64 {
        f64::INFINITY
    }
    fn interior_point(&self) -> CPoint {
        let mut v = vec![0.0; 2 * self.dim];
        v[0] = -1.0;
        CPoint::new(v).expect("finite")
    }
    fn sampling_box(&self) -> Vec<(f64, f64)> {
        vec![(-1.0, 1.0); 2 * self.dim]
    }
    fn has_analytic_derivatives(&self) -> bool {
        true
    }
}

fn validate(spec: &DomainSpec) -> Result<()> {
    let bad = |msg: String| Err(Error::InvalidParameter(msg));
    match spec {
        DomainSpec::Ball { radius, dim } => {
            if !(radius.is_finite() && *radius > 0.0) {
                return bad(format!("ball radius must be positive, got {radius}"));
            }
            if *dim == 0 {
                return bad("ball dimension must be at least 1".into());
            }
        }
        DomainSpec::Ellipsoid { weights } => {
            if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                return bad(format!("ellipsoid weights must be positive, got {weights:?}"));
            }
        }
        DomainSpec::Hartogs { exponent } => {
            if *exponent == 0 {
                return bad("hartogs exponent must be at least 1".into());
            }
        }
        DomainSpec::Worm { beta, cutoff } => {
            if !(beta.is_finite() && *beta > std::f64::consts::FRAC_PI_2) {
                return bad(format!("worm winding beta must exceed pi/2, got {beta}"));
            }
            if !(cutoff.is_finite() && *cutoff > std::f64::consts::E.powi(2)) {
                return bad(format!(
                    "worm cutoff scale must exceed e^2 for a convex profile, got {cutoff}"
                ));
            }
        }
        DomainSpec::HalfSpace { dim } => {
            if *dim == 0 {
                return bad("half-space dimension must be at least 1".into());
            }
        }
    }
    Ok(())
}

fn spec_name(spec: &DomainSpec) -> String {
    match spec {
        DomainSpec::Ball { radius, dim } => format!("ball(R={radius}, n={dim})"),
        DomainSpec::Ellipsoid { weights } => format!("ellipsoid({weights:?})"),
        DomainSpec::Hartogs { exponent } => format!("hartogs(m={exponent})"),
        DomainSpec::Worm { beta, cutoff } => format!("worm(beta={beta}, K={cutoff})"),
        DomainSpec::HalfSpace { dim } => format!("half-space(n={dim})"),
    }
}

/// Builds a catalog oracle without the derivative self-test.
pub fn build_domain(spec: &DomainSpec) -> Result<DomainOracle> {
    validate(spec)?;
    let function: Arc<dyn DefiningFunction> = match spec {
        DomainSpec::Ball { radius, dim } => Arc::new(Ball {
            radius: *radius,
            dim: *dim,
        }),
        DomainSpec::Ellipsoid { weights } => Arc::new(Ellipsoid {
            weights: weights.clone(),
        }),
        DomainSpec::Hartogs { exponent } => Arc::new(Hartogs {
            exponent: *exponent,
        }),
        DomainSpec::Worm { beta, cutoff } => Arc::new(Worm::new(*beta, *cutoff)),
        DomainSpec::HalfSpace { dim } => Arc::new(HalfSpace { dim: *dim }),
    };
    Ok(DomainOracle {
        name: spec_name(spec),
        spec: Some(spec.clone()),
        function,
    })
}

/// Builds a catalog oracle and runs its derivative self-test at 20 collar points.
pub fn make_domain(spec: &DomainSpec) -> Result<DomainOracle> {
    let oracle = build_domain(spec)?;
    let report = self_test(&oracle, 20, 0x5eed)?;
    if !report.passed() {
        return Err(Error::CrossCheck {
            what: "oracle derivative self-test",
            discrepancy: report.max_gradient_error.max(report.max_hessian_error),
        });
    }
    Ok(oracle)
}

#[derive(Clone, Debug, Serialize)]
pub struct SelfTestReport {
    pub points: usize,
    pub interior_rho: f64,
    pub max_gradient_error: f64,
    pub max_hessian_error: f64,
    pub max_asymmetry: f64,
}

impl SelfTestReport {
    pub fn passed(&self) -> bool {
        self.interior_rho < 0.0
            && self.max_gradient_error <= 1e-6
            && self.max_hessian_error <= 1e-4
            && self.max_asymmetry <= HESSIAN_SYMMETRY_TOL
    }
}

/// Compares the oracle derivatives with central differences at random
/// points within `1e-2` of the boundary.
pub fn self_test(oracle: &DomainOracle, points: usize, seed: u64) -> Result<SelfTestReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let boundary = sampling::boundary_points(oracle, points, seed, false)?;
    let mut report = SelfTestReport {
        points: boundary.len(),
        interior_rho: oracle.rho(&oracle.interior_point())?,
        max_gradient_error: 0.0,
        max_hessian_error: 0.0,
        max_asymmetry: 0.0,
    };
    for p in boundary {
        let n = oracle.gradient(&p)?;
        let z = p.offset(&n.normalize(), 1e-2 * (rng.random::<f64>() - 0.5));
        let g = oracle.gradient(&z)?;
        let fd = numdiff::gradient(|q| oracle.rho(q), &z, numdiff::default_step(&z))?;
        let gerr = (&g - &fd).amax() / g.amax().max(1.0);
        let h = oracle.hessian(&z)?;
        let fdh = numdiff::jacobian(|q| oracle.gradient(q), &z, numdiff::default_step(&z))?;
        let herr = (&h - &fdh).amax() / h.amax().max(1.0);
        report.max_gradient_error = report.max_gradient_error.max(gerr);
        report.max_hessian_error = report.max_hessian_error.max(herr);
        report.max_asymmetry = report
            .max_asymmetry
            .max(symmetry_defect(&h) / h.amax().max(1.0));
    }
    Ok(report)
}
