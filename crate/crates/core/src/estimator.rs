//! Plurisubharmonicity checks for `lambda = -(-e^{-t|z|^2 - phi} b)^eta`,
//! where `b` is the signed distance or the defining function, together with
//! the tangential inequalities on a collar, index brackets by bisection and
//! the closed-form lower bounds in terms of `A`.

use std::f64::consts::SQRT_2;
use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cr::{beta_form, build_frame, constant_a, frame_at_foot, levi_null_basis, BoundaryFrame, ConstantA};
use crate::distance::{comparison_factor, distance_jet, project_unchecked};
use crate::domain::{to_complex_jet, ComplexJet, DomainOracle, RealJet};
use crate::error::{Error, Result};
use crate::hermitian::{CPoint, HermitianForm, OneForm10, TangentVector, C64};
use crate::numdiff;
use crate::sampling::{boundary_samples, collar_points, DEFAULT_COLLAR_LEVELS};

pub const LOWER_LABEL: &str = "LOWER(empirical)";
pub const UPPER_LABEL: &str = "UPPER(heuristic)";

/// Default PASS threshold on normalised eigenvalues.
pub const DEFAULT_MARGIN: f64 = 1e-8;

/// Random tangential directions tested per sample, on top of the basis.
pub const RANDOM_DIRECTIONS: usize = 8;

/// A real weight `phi` with first and second derivatives.
pub trait Weight: Send + Sync + Debug {
    fn value(&self, z: &CPoint) -> Result<f64>;

    fn gradient(&self, z: &CPoint) -> Result<DVector<f64>> {
        numdiff::gradient(|p| self.value(p), z, 1e-5 * (1.0 + z.norm()))
    }

    fn hessian(&self, z: &CPoint) -> Result<DMatrix<f64>> {
        numdiff::hessian(|p| self.value(p), z, 1e-4 * (1.0 + z.norm()))
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroWeight;

impl Weight for ZeroWeight {
    fn value(&self, _z: &CPoint) -> Result<f64> {
        Ok(0.0)
    }
    fn gradient(&self, z: &CPoint) -> Result<DVector<f64>> {
        Ok(DVector::zeros(z.real().len()))
    }
    fn hessian(&self, z: &CPoint) -> Result<DMatrix<f64>> {
        let m = z.real().len();
        Ok(DMatrix::zeros(m, m))
    }
}

/// `c |z|^2`.
#[derive(Clone, Copy, Debug)]
pub struct QuadraticWeight {
    pub coefficient: f64,
}

impl Weight for QuadraticWeight {
    fn value(&self, z: &CPoint) -> Result<f64> {
        Ok(self.coefficient * z.norm_sqr())
    }
    fn gradient(&self, z: &CPoint) -> Result<DVector<f64>> {
        Ok(z.real() * (2.0 * self.coefficient))
    }
    fn hessian(&self, z: &CPoint) -> Result<DMatrix<f64>> {
        let m = z.real().len();
        Ok(DMatrix::identity(m, m) * (2.0 * self.coefficient))
    }
}

/// A weight given only by values; derivatives by central differences.
pub struct FnWeight {
    f: Arc<dyn Fn(&CPoint) -> Result<f64> + Send + Sync>,
    step: f64,
}

impl FnWeight {
    pub fn new(f: Arc<dyn Fn(&CPoint) -> Result<f64> + Send + Sync>, step: f64) -> Self {
        Self { f, step }
    }
}

impl Debug for FnWeight {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FnWeight(step = {})", self.step)
    }
}

impl Weight for FnWeight {
    fn value(&self, z: &CPoint) -> Result<f64> {
        (self.f)(z)
    }
    fn gradient(&self, z: &CPoint) -> Result<DVector<f64>> {
        numdiff::gradient(|p| (self.f)(p), z, self.step)
    }
    fn hessian(&self, z: &CPoint) -> Result<DMatrix<f64>> {
        numdiff::hessian(|p| (self.f)(p), z, self.step)
    }
}

/// `phi_t(z) = phi(z - t grad delta~(z))`: moves a weight that is only
/// controlled inside the domain onto the boundary.
#[derive(Debug)]
pub struct PullbackWeight {
    pub inner: Arc<dyn Weight>,
    pub oracle: DomainOracle,
    pub t: f64,
}

impl Weight for PullbackWeight {
    fn value(&self, z: &CPoint) -> Result<f64> {
        let n = project_unchecked(&self.oracle, z)?.normal;
        self.inner.value(&z.offset(&n, -self.t))
    }
    fn gradient(&self, z: &CPoint) -> Result<DVector<f64>> {
        numdiff::gradient(|p| self.value(p), z, 1e-3 * self.t.min(1.0))
    }
    fn hessian(&self, z: &CPoint) -> Result<DMatrix<f64>> {
        numdiff::hessian(|p| self.value(p), z, 1e-2 * self.t.min(1.0))
    }
}

/// Weights selectable from a configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightSpec {
    Zero,
    /// `coefficient * |z|^2`.
    Quadratic { coefficient: f64 },
}

impl Default for WeightSpec {
    fn default() -> Self {
        WeightSpec::Zero
    }
}

impl WeightSpec {
    pub fn build(&self) -> Arc<dyn Weight> {
        match *self {
            WeightSpec::Zero => Arc::new(ZeroWeight),
            WeightSpec::Quadratic { coefficient } => Arc::new(QuadraticWeight { coefficient }),
        }
    }
}

/// Which function plays the role of `b` in `lambda`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// The signed distance `delta~`.
    #[default]
    Distance,
    /// The domain's own defining function `rho`.
    DefiningFunction,
}

/// Boundary inequality variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InequalityMode {
    /// At collar points, with the `(-delta~)^{-1}` Levi term and `N_s`.
    Collar,
    /// On the boundary, without the Levi term.
    Boundary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub eta: f64,
    pub s: f64,
    pub t: f64,
    pub m_eta: f64,
    pub n_s: f64,
    /// Collar depths as fractions of the diameter. Set from the sampling
    /// section of a run configuration.
    #[serde(skip)]
    pub collar_levels: Vec<f64>,
    /// Collar points per verification; boundary bases are spread evenly
    /// over the levels.
    #[serde(skip)]
    pub samples: usize,
    pub directions: usize,
    pub margin: f64,
    #[serde(skip)]
    pub seed: u64,
    pub comparison: Comparison,
    pub phi: WeightSpec,
    pub phi_b: Option<WeightSpec>,
    pub b: Option<f64>,
    /// Bisection tolerance.
    pub tol: f64,
    /// Initial pullback depth for boundary mode; `0` disables the pullback.
    pub pullback_t: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            eta: 0.5,
            s: 0.25,
            t: 0.0,
            m_eta: 0.0,
            n_s: 0.0,
            collar_levels: DEFAULT_COLLAR_LEVELS.to_vec(),
            samples: 1200,
            directions: RANDOM_DIRECTIONS,
            margin: DEFAULT_MARGIN,
            seed: 0,
            comparison: Comparison::Distance,
            phi: WeightSpec::Zero,
            phi_b: None,
            b: None,
            tol: 0.01,
            pullback_t: 0.0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        let open = |x: f64| x > 0.0 && x < 1.0;
        if !open(self.eta) {
            return Err(Error::InvalidParameter(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if !open(self.s) {
            return Err(Error::InvalidParameter(format!("s must lie in (0, 1), got {}", self.s)));
        }
        if self.collar_levels.is_empty() || self.collar_levels.iter().any(|&l| !(l > 0.0 && l < 0.5)) {
            return Err(Error::InvalidParameter("collar levels must lie in (0, 0.5)".into()));
        }
        if !(self.tol > 0.0 && self.tol < 0.5) {
            return Err(Error::InvalidParameter(format!("tol must lie in (0, 0.5), got {}", self.tol)));
        }
        if self.samples == 0 {
            return Err(Error::InvalidParameter("samples must be positive".into()));
        }
        if !(self.margin >= 0.0) || !self.t.is_finite() || !self.m_eta.is_finite() || !self.n_s.is_finite() {
            return Err(Error::InvalidParameter("margin, t, m_eta and n_s must be finite".into()));
        }
        if let Some(b) = self.b {
            if !(b > 0.0) {
                return Err(Error::InvalidParameter(format!("B must be positive, got {b}")));
            }
        }
        if !(self.pullback_t >= 0.0) {
            return Err(Error::InvalidParameter("pullback_t must be nonnegative".into()));
        }
        Ok(())
    }

    fn bases(&self) -> usize {
        self.samples.div_ceil(self.collar_levels.len())
    }
}

/// Complex jet of a weight.
pub fn weight_jet(w: &dyn Weight, z: &CPoint) -> Result<ComplexJet> {
    to_complex_jet(&RealJet {
        value: w.value(z)?,
        gradient: w.gradient(z)?,
        hessian: w.hessian(z)?,
    })
}

/// Everything `lambda` needs at a point, independent of `eta` and `t`.
#[derive(Clone, Debug)]
pub struct SamplePoint {
    pub z: CPoint,
    /// Requested collar depth, `0` for ad hoc points.
    pub depth: f64,
    /// Nearest boundary point in distance mode.
    pub foot: Option<CPoint>,
    pub base: ComplexJet,
    pub weight: ComplexJet,
}

pub fn prepare_point(
    oracle: &DomainOracle,
    comparison: Comparison,
    weight: &dyn Weight,
    z: &CPoint,
    depth: f64,
) -> Result<SamplePoint> {
    let (base, foot) = match comparison {
        Comparison::Distance => {
            let jet = distance_jet(oracle, z)?;
            (to_complex_jet(&jet.real_jet())?, Some(jet.projection.xi))
        }
        Comparison::DefiningFunction => (
            to_complex_jet(&RealJet {
                value: oracle.rho(z)?,
                gradient: oracle.gradient(z)?,
                hessian: oracle.hessian(z)?,
            })?,
            None,
        ),
    };
    if !(base.value < 0.0) {
        return Err(Error::CollarViolation(format!("comparison function is {:e}, not negative", base.value)));
    }
    Ok(SamplePoint {
        z: z.clone(),
        depth,
        foot,
        base,
        weight: weight_jet(weight, z)?,
    })
}

/// Value, `-lambda`, `d lambda` and `i d dbar lambda` at a prepared point.
#[derive(Clone, Debug)]
pub struct LambdaJet {
    pub value: f64,
    pub neg: f64,
    pub dz: OneForm10,
    pub hessian: HermitianForm,
}

fn conj_point(z: &CPoint) -> OneForm10 {
    OneForm10(z.to_complex().conjugate())
}

pub fn lambda_jet(p: &SamplePoint, eta: f64, t: f64) -> Result<LambdaJet> {
    let nb = -p.base.value;
    if !(nb > 0.0) {
        return Err(Error::CollarViolation("point is not inside the domain".into()));
    }
    let n = p.z.dim();
    let neg = (eta * (-t * p.z.norm_sqr() - p.weight.value + nb.ln())).exp();
    let inner = &(&conj_point(&p.z).scale(t) + &p.weight.dz) + &p.base.dz.scale(1.0 / nb);
    let g = inner.scale(eta * neg);
    let bracket = &(&(&HermitianForm::from_matrix(DMatrix::identity(n, n) * C64::new(t, 0.0)) + &p.weight.mixed)
        + &p.base.mixed.scale(1.0 / nb))
        + &HermitianForm::outer(&p.base.dz).scale(1.0 / (nb * nb));
    let hessian = &bracket.scale(eta * neg) - &HermitianForm::outer(&g).scale(1.0 / neg);
    Ok(LambdaJet {
        value: -neg,
        neg,
        dz: g,
        hessian,
    })
}

/// Value of `lambda` at a point, for finite-difference checks.
pub fn lambda_value(
    oracle: &DomainOracle,
    comparison: Comparison,
    weight: &dyn Weight,
    eta: f64,
    t: f64,
    z: &CPoint,
) -> Result<f64> {
    let b = match comparison {
        Comparison::Distance => crate::distance::signed_distance(oracle, z)?,
        Comparison::DefiningFunction => oracle.rho(z)?,
    };
    if !(b < 0.0) {
        return Err(Error::CollarViolation("point is not inside the domain".into()));
    }
    Ok(-((-t * z.norm_sqr() - weight.value(z)?).exp() * (-b)).powf(eta))
}

/// `i d dbar lambda` and `d lambda` at `z` for the configured `eta`, `t`, `phi`.
pub fn lambda_hessian(oracle: &DomainOracle, config: &EstimatorConfig, z: &CPoint) -> Result<(HermitianForm, OneForm10)> {
    let w = config.phi.build();
    let p = prepare_point(oracle, config.comparison, w.as_ref(), z, 0.0)?;
    let j = lambda_jet(&p, config.eta, config.t)?;
    Ok((j.hessian, j.dz))
}

/// Largest relative discrepancy between the analytic jet of `lambda` and
/// central differences with steps `h` and `h/2`, Richardson-extrapolated.
pub fn lambda_fd_check(oracle: &DomainOracle, config: &EstimatorConfig, z: &CPoint, h: f64) -> Result<f64> {
    let w = config.phi.build();
    let f = |p: &CPoint| lambda_value(oracle, config.comparison, w.as_ref(), config.eta, config.t, p);
    let extrapolate = |a: DVector<f64>, b: DVector<f64>| (b * 4.0 - a) / 3.0;
    let gradient = extrapolate(numdiff::gradient(f, z, h)?, numdiff::gradient(f, z, h / 2.0)?);
    let hessian = numdiff::hessian(f, z, h)?;
    let half = numdiff::hessian(f, z, h / 2.0)?;
    let fd = to_complex_jet(&RealJet {
        value: f(z)?,
        gradient,
        hessian: (half * 4.0 - hessian) / 3.0,
    })?;
    let (hess, dz) = lambda_hessian(oracle, config, z)?;
    let scale_h = hess.coeff().iter().map(|c| c.norm()).fold(0.0, f64::max);
    let scale_g = dz.0.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let eh = (fd.mixed.coeff() - hess.coeff()).iter().map(|c| c.norm()).fold(0.0, f64::max) / scale_h;
    let eg = (&fd.dz.0 - &dz.0).iter().map(|c| c.norm()).fold(0.0, f64::max) / scale_g;
    Ok(eh.max(eg))
}

/// Relative agreement required between `-delta~(p - d n(p))` and `d`.
pub const COLLAR_DEPTH_TOL: f64 = 1e-6;

/// Collar points `p - d n(p)` over boundary samples (features included) at
/// each depth `d = level * diameter`. Points whose nearest boundary point is
/// not `p` lie outside the tubular collar and are dropped; their count is
/// returned alongside.
pub fn collar_sample_points(
    oracle: &DomainOracle,
    bases: usize,
    seed: u64,
    levels: &[f64],
) -> Result<(Vec<(CPoint, f64)>, usize)> {
    let boundary: Vec<CPoint> = boundary_samples(oracle, bases, seed, true)?
        .into_iter()
        .map(|s| s.point)
        .collect();
    let kept: Vec<Option<(CPoint, f64)>> = collar_points(oracle, &boundary, levels)?
        .into_par_iter()
        .map(|c| {
            let d = crate::distance::signed_distance(oracle, &c.point).ok()?;
            ((-d - c.depth).abs() <= COLLAR_DEPTH_TOL * c.depth).then_some((c.point, c.depth))
        })
        .collect();
    let dropped = kept.iter().filter(|k| k.is_none()).count();
    Ok((kept.into_iter().flatten().collect(), dropped))
}

/// Prepared collar samples; points outside the collar or where the jet is
/// unavailable (focal or projection failures) are counted and skipped.
pub fn prepare_samples(
    oracle: &DomainOracle,
    config: &EstimatorConfig,
    weight: &dyn Weight,
) -> Result<(Vec<SamplePoint>, usize)> {
    let (pts, dropped) = collar_sample_points(oracle, config.bases(), config.seed, &config.collar_levels)?;
    let prepared: Vec<Option<SamplePoint>> = pts
        .par_iter()
        .map(|(z, d)| prepare_point(oracle, config.comparison, weight, z, *d).ok())
        .collect();
    let skipped = dropped + prepared.iter().filter(|p| p.is_none()).count();
    Ok((prepared.into_iter().flatten().collect(), skipped))
}

#[derive(Clone, Debug, Serialize)]
pub struct PshWitness {
    pub point: CPoint,
    pub foot: Option<CPoint>,
    pub depth: f64,
    /// Normalised margin at the point.
    pub margin: f64,
    /// Eigenvector of the smallest eigenvalue.
    pub direction: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PshVerdict {
    pub eta: f64,
    pub t: f64,
    pub m_eta: f64,
    pub samples: usize,
    pub skipped: usize,
    /// `min (mu_min - M (-lambda)) / (eta (-lambda))` over the samples.
    pub min_margin: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub witness: Option<PshWitness>,
}

fn psh_margin(p: &SamplePoint, eta: f64, t: f64, m_eta: f64) -> Result<(f64, TangentVector)> {
    let j = lambda_jet(p, eta, t)?;
    let (vals, vecs) = j.hessian.eigen_rel_omega();
    Ok(((vals[0] - m_eta * j.neg) / (eta * j.neg), vecs[0].clone()))
}

/// Sampled PSH verdict on prepared points.
pub fn verify_psh_on(points: &[SamplePoint], skipped: usize, eta: f64, t: f64, m_eta: f64, margin: f64) -> PshVerdict {
    let margins: Vec<Option<(f64, TangentVector)>> =
        points.par_iter().map(|p| psh_margin(p, eta, t, m_eta).ok()).collect();
    let mut best: Option<(usize, f64, TangentVector)> = None;
    let mut failed = 0;
    for (i, m) in margins.into_iter().enumerate() {
        match m {
            None => failed += 1,
            Some((v, dir)) => {
                if best.as_ref().is_none_or(|b| v < b.1) {
                    best = Some((i, v, dir));
                }
            }
        }
    }
    let min_margin = best.as_ref().map_or(f64::INFINITY, |b| b.1);
    let witness = best.map(|(i, v, dir)| PshWitness {
        point: points[i].z.clone(),
        foot: points[i].foot.clone(),
        depth: points[i].depth,
        margin: v,
        direction: dir.0.iter().map(|c| [c.re, c.im]).collect(),
    });
    PshVerdict {
        eta,
        t,
        m_eta,
        samples: points.len() - failed,
        skipped: skipped + failed,
        min_margin,
        tolerance: margin,
        passed: min_margin >= -margin && points.len() > failed,
        witness,
    }
}

/// Sampled check of `i d dbar lambda >= M (-lambda) omega` on the collar.
pub fn verify_psh(oracle: &DomainOracle, config: &EstimatorConfig) -> Result<PshVerdict> {
    config.validate()?;
    let w = config.phi.build();
    let (pts, skipped) = prepare_samples(oracle, config, w.as_ref())?;
    Ok(verify_psh_on(&pts, skipped, config.eta, config.t, config.m_eta, config.margin))
}

/// Both sides of the tangential Schur-complement identity for `lambda` built
/// on the signed distance.
#[derive(Clone, Debug, Serialize)]
pub struct DeterminantTerms {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub denominator: f64,
}

pub fn determinant_terms(
    oracle: &DomainOracle,
    weight: &dyn Weight,
    eta: f64,
    t: f64,
    m_eta: f64,
    z: &CPoint,
    tau: &TangentVector,
) -> Result<DeterminantTerms> {
    let jet = distance_jet(oracle, z)?;
    let frame = frame_at_foot(&jet)?;
    let dd = frame.partial_delta.apply(tau)?;
    if dd.norm() > 1e-10 * tau.norm().max(1.0) {
        return Err(Error::InvalidParameter("tau is not complex tangential".into()));
    }
    let p = prepare_point(oracle, Comparison::Distance, weight, z, -jet.delta())?;
    let lam = lambda_jet(&p, eta, t)?;
    let neg = lam.neg;
    let tau2 = tau.norm_sqr();
    let denominator = lam.hessian.quad(&frame.nu) - 2.0 * m_eta * neg;
    if !(denominator > 0.0) {
        return Err(Error::NonPositiveDenominator(denominator));
    }
    let cross = lam.hessian.action(tau, &frame.nu)?;
    let lhs = (lam.hessian.quad(tau) - m_eta * neg * tau2 - cross.norm_sqr() / denominator) / (eta * neg);
    let nb = -jet.delta();
    let twist = conj_point(z).scale(t).apply(tau)? + p.weight.dz.apply(tau)? - frame.alpha_levi(tau)? * 2.0;
    let rhs = (2.0 * t - m_eta / eta) * tau2
        + p.weight.mixed.quad(tau)
        + frame.levi.quad(tau) / nb
        + 2.0 * beta_form(&frame).quad(tau)
        - eta / (1.0 - eta) * twist.norm_sqr();
    Ok(DeterminantTerms {
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
        denominator,
    })
}

/// `|LHS - RHS|` of the identity at `z` for the tangential `tau`.
pub fn determinant_residual(oracle: &DomainOracle, config: &EstimatorConfig, z: &CPoint, tau: &TangentVector) -> Result<f64> {
    let w = config.phi.build();
    Ok(determinant_terms(oracle, w.as_ref(), config.eta, config.t, config.m_eta, z, tau)?.residual)
}

/// Orthonormal tangential basis followed by `extra` random unit combinations.
pub fn tangential_directions(frame: &BoundaryFrame, extra: usize, rng: &mut impl Rng) -> Vec<TangentVector> {
    let mut out = frame.tangent_basis.clone();
    if frame.tangent_basis.is_empty() {
        return out;
    }
    for _ in 0..extra {
        let mut v = TangentVector(DVector::zeros(frame.dim()));
        for e in &frame.tangent_basis {
            let c = C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            v = &v + &e.scale(c);
        }
        if v.norm() > 1e-6 {
            out.push(v.normalized());
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct InequalityWitness {
    pub point: CPoint,
    pub foot: CPoint,
    pub margin: f64,
    pub direction: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Serialize)]
pub struct InequalityReport {
    pub mode: InequalityMode,
    pub s: f64,
    pub n_s: f64,
    pub samples: usize,
    pub directions: usize,
    pub skipped: usize,
    /// `min (RHS - LHS)` over unit directions.
    pub min_margin: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Pullback depth used in boundary mode.
    pub pullback_t: Option<f64>,
    pub witness: Option<InequalityWitness>,
}

struct Margin {
    value: f64,
    directions: usize,
    tau: TangentVector,
}

fn inequality_at(
    frame: &BoundaryFrame,
    phi: &ComplexJet,
    nb: Option<f64>,
    s: f64,
    n_s: f64,
    dirs: &[TangentVector],
) -> Result<Margin> {
    let beta = beta_form(frame);
    let mut best = Margin {
        value: f64::INFINITY,
        directions: dirs.len(),
        tau: dirs.first().cloned().unwrap_or_else(|| TangentVector(DVector::zeros(frame.dim()))),
    };
    for tau in dirs {
        let twist = phi.dz.apply(tau)? - frame.alpha_levi(tau)? * 2.0;
        let mut rhs = phi.mixed.quad(tau) + 2.0 * beta.quad(tau);
        let mut lhs = s / (1.0 - s) * twist.norm_sqr();
        if let Some(nb) = nb {
            rhs += frame.levi.quad(tau) / nb;
            lhs += n_s * tau.norm_sqr();
        }
        let v = rhs - lhs;
        if v < best.value {
            best.value = v;
            best.tau = tau.clone();
        }
    }
    Ok(best)
}

fn point_rng(seed: u64, i: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn reduce_margins(
    items: Vec<Option<(CPoint, CPoint, Margin)>>,
) -> (usize, usize, usize, f64, Option<InequalityWitness>) {
    let mut samples = 0;
    let mut skipped = 0;
    let mut dirs = 0;
    let mut min = f64::INFINITY;
    let mut witness = None;
    for it in items {
        match it {
            None => skipped += 1,
            Some((z, foot, m)) => {
                samples += 1;
                dirs += m.directions;
                if m.value < min {
                    min = m.value;
                    witness = Some(InequalityWitness {
                        point: z,
                        foot,
                        margin: m.value,
                        direction: m.tau.0.iter().map(|c| [c.re, c.im]).collect(),
                    });
                }
            }
        }
    }
    (samples, skipped, dirs, min, witness)
}

/// Tangential inequality on the collar or on the boundary, minimised over
/// samples and unit directions (basis plus random combinations).
///
/// In boundary mode with `pullback_t > 0` the weight is replaced by its
/// pullback `phi(z - t grad delta~)`, halving `t` until the inequality holds
/// or ten halvings have been tried; the best depth is reported.
pub fn boundary_inequality_margin(
    oracle: &DomainOracle,
    config: &EstimatorConfig,
    mode: InequalityMode,
) -> Result<InequalityReport> {
    config.validate()?;
    let (s, n_s) = (config.s, config.n_s);
    let weight = config.phi.build();
    let report = |samples, skipped, dirs, min: f64, witness, pullback_t| InequalityReport {
        mode,
        s,
        n_s,
        samples,
        directions: dirs,
        skipped,
        min_margin: min,
        tolerance: config.margin,
        passed: samples > 0 && min >= -config.margin,
        pullback_t,
        witness,
    };
    match mode {
        InequalityMode::Collar => {
            let (pts, dropped) = collar_sample_points(oracle, config.bases(), config.seed, &config.collar_levels)?;
            let items: Vec<_> = pts
                .par_iter()
                .enumerate()
                .map(|(i, (z, _))| {
                    let jet = distance_jet(oracle, z).ok()?;
                    let frame = frame_at_foot(&jet).ok()?;
                    let phi = weight_jet(weight.as_ref(), z).ok()?;
                    let dirs = tangential_directions(&frame, config.directions, &mut point_rng(config.seed, i));
                    let m = inequality_at(&frame, &phi, Some(-jet.delta()), s, n_s, &dirs).ok()?;
                    Some((z.clone(), frame.p.clone(), m))
                })
                .collect();
            let (n, sk, d, min, w) = reduce_margins(items);
            Ok(report(n, sk + dropped, d, min, w, None))
        }
        InequalityMode::Boundary => {
            let boundary: Vec<CPoint> = boundary_samples(oracle, config.bases(), config.seed, true)?
                .into_iter()
                .map(|b| b.point)
                .collect();
            let frames: Vec<Option<BoundaryFrame>> = boundary.par_iter().map(|p| build_frame(oracle, p).ok()).collect();
            let run = |w: &dyn Weight| {
                let items: Vec<_> = frames
                    .par_iter()
                    .enumerate()
                    .map(|(i, f)| {
                        let frame = f.as_ref()?;
                        let phi = weight_jet(w, &frame.p).ok()?;
                        let dirs = tangential_directions(frame, config.directions, &mut point_rng(config.seed, i));
                        let m = inequality_at(frame, &phi, None, s, n_s, &dirs).ok()?;
                        Some((frame.p.clone(), frame.p.clone(), m))
                    })
                    .collect();
                reduce_margins(items)
            };
            if config.pullback_t == 0.0 {
                let (n, sk, d, min, w) = run(weight.as_ref());
                return Ok(report(n, sk, d, min, w, None));
            }
            let mut t = config.pullback_t;
            let mut best: Option<(f64, (usize, usize, usize, f64, Option<InequalityWitness>))> = None;
            for _ in 0..=10 {
                let pw = PullbackWeight {
                    inner: weight.clone(),
                    oracle: oracle.clone(),
                    t,
                };
                let r = run(&pw);
                let ok = r.0 > 0 && r.3 >= -config.margin;
                if best.as_ref().is_none_or(|b| r.0 > 0 && r.3 > b.1 .3) {
                    best = Some((t, r));
                }
                if ok {
                    break;
                }
                t *= 0.5;
            }
            let (t, (n, sk, d, min, w)) = best.expect("at least one pullback depth is tried");
            Ok(report(n, sk, d, min, w, Some(t)))
        }
    }
}

/// `1 / (1 + 4 sqrt 2 A r)`, exactly `1` when `A = 0`.
pub fn universal_bound(a: f64, r: f64) -> f64 {
    if a == 0.0 {
        1.0
    } else {
        1.0 / (1.0 + 4.0 * SQRT_2 * a * r)
    }
}

/// `B / (16 A^2 + B)`.
pub fn ptilde_bound(a: f64, b: f64) -> f64 {
    b / (16.0 * a * a + b)
}

/// The exponent `s = 1 / (1 + 2 sqrt 2 A r)` used with `phi = 0`.
pub fn universal_exponent(a: f64, r: f64) -> f64 {
    1.0 / (1.0 + 2.0 * SQRT_2 * a * r)
}

/// `t = (1 / (2 r^2)) (1 / eta - 1 / s)`.
pub fn weight_exponent(eta: f64, s: f64, r: f64) -> f64 {
    (1.0 / eta - 1.0 / s) / (2.0 * r * r)
}

#[derive(Clone, Debug, Serialize)]
pub struct HypothesisCheck {
    pub b: f64,
    pub null_points: usize,
    pub directions: usize,
    /// `min (i d dbar phi(tau, tau) - B |tau|^2)` over unit null directions.
    pub min_strength_margin: f64,
    /// `min (i d dbar phi(tau, tau) - |d phi(tau)|^2)`.
    pub min_gradient_margin: f64,
    pub passed: bool,
    pub witness: Option<CPoint>,
}

/// Checks the two weight hypotheses at every sampled Levi-null direction.
pub fn check_weight_hypotheses(
    oracle: &DomainOracle,
    weight: &dyn Weight,
    b: f64,
    samples: &[CPoint],
    margin: f64,
    seed: u64,
) -> Result<HypothesisCheck> {
    let items: Vec<Option<(usize, f64, f64)>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let frame = build_frame(oracle, p).ok()?;
            let null = levi_null_basis(&frame, None);
            if null.is_empty() {
                return None;
            }
            let phi = weight_jet(weight, p).ok()?;
            let mut dirs = null.clone();
            let mut rng = point_rng(seed, i);
            for _ in 0..RANDOM_DIRECTIONS.min(if null.len() > 1 { RANDOM_DIRECTIONS } else { 0 }) {
                let mut v = TangentVector(DVector::zeros(frame.dim()));
                for e in &null {
                    v = &v + &e.scale(C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
                }
                if v.norm() > 1e-6 {
                    dirs.push(v.normalized());
                }
            }
            let mut ms = f64::INFINITY;
            let mut mg = f64::INFINITY;
            for tau in &dirs {
                let h = phi.mixed.quad(tau);
                ms = ms.min(h - b * tau.norm_sqr());
                mg = mg.min(h - phi.dz.apply(tau).ok()?.norm_sqr());
            }
            Some((dirs.len(), ms, mg))
        })
        .collect();
    let mut out = HypothesisCheck {
        b,
        null_points: 0,
        directions: 0,
        min_strength_margin: f64::INFINITY,
        min_gradient_margin: f64::INFINITY,
        passed: true,
        witness: None,
    };
    for (p, it) in samples.iter().zip(items) {
        let Some((d, ms, mg)) = it else { continue };
        out.null_points += 1;
        out.directions += d;
        if ms.min(mg) < out.min_strength_margin.min(out.min_gradient_margin) {
            out.witness = Some(p.clone());
        }
        out.min_strength_margin = out.min_strength_margin.min(ms);
        out.min_gradient_margin = out.min_gradient_margin.min(mg);
    }
    out.passed = out.min_strength_margin >= -margin && out.min_gradient_margin >= -margin;
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct DfBounds {
    pub a: ConstantA,
    pub r: f64,
    pub universal: f64,
    pub universal_exponent: f64,
    pub ptilde: Option<f64>,
    pub hypotheses: Option<HypothesisCheck>,
}

/// Closed-form lower bounds from `A`, with the weight bound only when `phi_B`
/// and `B` are supplied and pass the null-direction hypotheses.
pub fn df_bounds(oracle: &DomainOracle, config: &EstimatorConfig, boundary_count: usize) -> Result<DfBounds> {
    config.validate()?;
    let pts: Vec<CPoint> = boundary_samples(oracle, boundary_count, config.seed, true)?
        .into_iter()
        .map(|b| b.point)
        .collect();
    let a = constant_a(oracle, &pts, None)?;
    let r = oracle.bounding_radius();
    let universal = universal_bound(a.value, r);
    let mut ptilde = None;
    let mut hypotheses = None;
    if let (Some(spec), Some(b)) = (&config.phi_b, config.b) {
        let w = spec.build();
        let check = check_weight_hypotheses(oracle, w.as_ref(), b, &pts, config.margin, config.seed)?;
        if check.passed {
            ptilde = Some(ptilde_bound(a.value, b));
        }
        hypotheses = Some(check);
    }
    Ok(DfBounds {
        universal_exponent: universal_exponent(a.value, r),
        a,
        r,
        universal,
        ptilde,
        hypotheses,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    UniversalBound,
    PtildeBound,
    Bisection,
}

#[derive(Clone, Debug, Serialize)]
pub struct BisectionStep {
    pub eta: f64,
    pub passed: bool,
    /// The member of the family with the best margin.
    pub t: f64,
    pub min_margin: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct IndexEstimate {
    pub lower_bracket: f64,
    pub lower_label: &'static str,
    pub upper_bracket: f64,
    pub upper_label: &'static str,
    pub tolerance: f64,
    pub methods: Vec<Method>,
    pub universal_bound: Option<f64>,
    pub ptilde_bound: Option<f64>,
    pub samples: usize,
    pub skipped: usize,
    pub steps: Vec<BisectionStep>,
    /// Worst point of the family at the upper bracket, if any member failed.
    pub witness: Option<PshWitness>,
}

/// `t` values tried at each exponent: `0`, a log grid `10^{-2..2}`, and the
/// value `(1/(2r^2))(1/eta - 1/s)` for `s` slightly above `eta` and for the
/// exponent `1 / (1 + 2 sqrt 2 A r)` when it exceeds `eta`.
pub fn t_family(eta: f64, r: f64, a: Option<f64>) -> Vec<f64> {
    let mut ts = vec![0.0];
    for k in -4..=4 {
        ts.push(10f64.powf(k as f64 * 0.5));
    }
    let s_near = 0.5 * (eta + 1.0);
    ts.push(weight_exponent(eta, s_near, r));
    if let Some(a) = a {
        let s = universal_exponent(a, r);
        if s > eta {
            ts.push(weight_exponent(eta, s, r));
        }
    }
    ts
}

/// Best verdict over the `t` family at one exponent.
pub fn verify_family(points: &[SamplePoint], skipped: usize, eta: f64, ts: &[f64], m_eta: f64, margin: f64) -> (PshVerdict, f64) {
    let mut best: Option<PshVerdict> = None;
    for &t in ts {
        let v = verify_psh_on(points, skipped, eta, t, m_eta, margin);
        if best.as_ref().is_none_or(|b| v.min_margin > b.min_margin) {
            best = Some(v);
        }
        if best.as_ref().is_some_and(|b| b.passed) {
            break;
        }
    }
    let b = best.expect("family is never empty");
    let t = b.t;
    (b, t)
}

/// Bisection over `eta` in `(0, 1)` with the `t` family and the configured
/// `phi`. The lower bracket is the largest exponent seen to pass; the upper
/// bracket is the smallest exponent at which every family member failed, or
/// `1`. Neither is certified.
pub fn bisect_index(oracle: &DomainOracle, config: &EstimatorConfig, a: Option<f64>) -> Result<IndexEstimate> {
    config.validate()?;
    let w = config.phi.build();
    let (pts, skipped) = prepare_samples(oracle, config, w.as_ref())?;
    let r = oracle.bounding_radius();
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut steps = Vec::new();
    let mut witness = None;
    while hi - lo > config.tol {
        let eta = 0.5 * (lo + hi);
        let (v, t) = verify_family(&pts, skipped, eta, &t_family(eta, r, a), config.m_eta, config.margin);
        steps.push(BisectionStep {
            eta,
            passed: v.passed,
            t,
            min_margin: v.min_margin,
        });
        if v.passed {
            lo = eta;
        } else {
            hi = eta;
            witness = v.witness;
        }
    }
    let mut methods = vec![Method::Bisection];
    let universal_bound = a.map(|a| {
        methods.insert(0, Method::UniversalBound);
        universal_bound(a, r)
    });
    Ok(IndexEstimate {
        lower_bracket: lo,
        lower_label: LOWER_LABEL,
        upper_bracket: hi,
        upper_label: UPPER_LABEL,
        tolerance: config.tol,
        methods,
        universal_bound,
        ptilde_bound: None,
        samples: pts.len(),
        skipped,
        steps,
        witness,
    })
}

/// Bounds and bisection together.
pub fn estimate_index(oracle: &DomainOracle, config: &EstimatorConfig, boundary_count: usize) -> Result<(DfBounds, IndexEstimate)> {
    let bounds = df_bounds(oracle, config, boundary_count)?;
    let mut est = bisect_index(oracle, config, Some(bounds.a.value))?;
    if let Some(p) = bounds.ptilde {
        est.ptilde_bound = Some(p);
        est.methods.insert(1, Method::PtildeBound);
    }
    Ok((bounds, est))
}

/// `eps * max(|phi|, |grad phi|, |Hess phi|)` over collar points at each
/// depth `eps = level * diameter`.
pub fn weight_norm_proxies(oracle: &DomainOracle, weight: &dyn Weight, boundary: &[CPoint], levels: &[f64]) -> Result<Vec<f64>> {
    let diam = oracle.diameter();
    levels
        .iter()
        .map(|&level| {
            let pts = collar_points(oracle, boundary, &[level])?;
            let mut m: f64 = 0.0;
            for c in pts {
                let v = weight.value(&c.point)?.abs();
                let g = weight.gradient(&c.point)?.norm();
                let h = weight.hessian(&c.point)?.norm();
                m = m.max(v).max(g).max(h);
            }
            Ok(level * diam * m)
        })
        .collect()
}

/// `(min, max)` of `rho / delta~` over collar points at each level.
pub fn comparison_profile(oracle: &DomainOracle, boundary: &[CPoint], levels: &[f64]) -> Result<Vec<(f64, f64)>> {
    levels
        .iter()
        .map(|&level| {
            let pts = collar_points(oracle, boundary, &[level])?;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for c in pts {
                let h = comparison_factor(oracle, &c.point)?;
                lo = lo.min(h);
                hi = hi.max(h);
            }
            Ok((lo, hi))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_domain, DomainSpec};

    fn ball(dim: usize) -> DomainOracle {
        build_domain(&DomainSpec::Ball { radius: 1.0, dim }).unwrap()
    }

    fn pt(v: &[f64]) -> CPoint {
        CPoint::new(v.to_vec()).unwrap()
    }

    #[test]
    fn ball_rho_hessian_closed_form() {
        let o = ball(2);
        let cfg = EstimatorConfig {
            eta: 0.7,
            t: 0.0,
            comparison: Comparison::DefiningFunction,
            ..Default::default()
        };
        let z = pt(&[0.3, -0.2, 0.1, 0.5]);
        let (h, _) = lambda_hessian(&o, &cfg, &z).unwrap();
        let u = 1.0 - z.norm_sqr();
        let zc = z.to_complex();
        let eta = cfg.eta;
        for j in 0..2 {
            for k in 0..2 {
                let delta = if j == k { u } else { 0.0 };
                let want = (zc[j].conj() * zc[k] * (1.0 - eta) + delta) * (eta * u.powf(eta - 2.0));
                assert!((h.coeff()[(j, k)] - want).norm() < 1e-12, "{j}{k}");
            }
        }
    }

    #[test]
    fn half_space_normal_entry() {
        let o = build_domain(&DomainSpec::HalfSpace { dim: 2 }).unwrap();
        let cfg = EstimatorConfig {
            eta: 0.4,
            ..Default::default()
        };
        let d: f64 = 0.2;
        let z = pt(&[-d, 0.3, 0.1, -0.4]);
        let (h, _) = lambda_hessian(&o, &cfg, &z).unwrap();
        let want = 0.4 * 0.6 * d.powf(0.4 - 2.0) * 0.25;
        let c = h.coeff();
        assert!((c[(0, 0)].re - want).abs() < 1e-12 * want);
        assert!(c[(0, 1)].norm() < 1e-12 && c[(1, 1)].norm() < 1e-12);
    }

    #[test]
    fn lambda_matches_finite_differences() {
        let o = build_domain(&DomainSpec::Ellipsoid { weights: vec![1.0, 4.0] }).unwrap();
        for (comparison, t) in [(Comparison::Distance, 0.7), (Comparison::DefiningFunction, 1.3)] {
            let cfg = EstimatorConfig {
                eta: 0.6,
                t,
                comparison,
                phi: WeightSpec::Quadratic { coefficient: 0.3 },
                ..Default::default()
            };
            let z = pt(&[0.5, 0.1, 0.1, 0.2]);
            let err = lambda_fd_check(&o, &cfg, &z, 1e-4).unwrap();
            assert!(err < 1e-5, "{comparison:?}: {err:e}");
        }
    }

    #[test]
    fn formulas() {
        assert_eq!(universal_bound(0.0, 3.0), 1.0);
        assert!((universal_bound(1.0, 1.0) - 1.0 / (1.0 + 4.0 * SQRT_2)).abs() < 1e-15);
        assert_eq!(ptilde_bound(1.0, 16.0), 0.5);
        let s = universal_exponent(0.7, 2.0);
        assert!((s / (1.0 - s) - 1.0 / (2.0 * SQRT_2 * 0.7 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn ball_passes_and_plane_fails_flat_direction() {
        let o = ball(2);
        let cfg = EstimatorConfig {
            samples: 60,
            ..Default::default()
        };
        let r = boundary_inequality_margin(&o, &cfg, InequalityMode::Collar).unwrap();
        assert!(r.passed, "{}", r.min_margin);
        let plane = build_domain(&DomainSpec::HalfSpace { dim: 2 }).unwrap();
        let cfg = EstimatorConfig {
            samples: 30,
            n_s: 0.5,
            ..Default::default()
        };
        let r = boundary_inequality_margin(&plane, &cfg, InequalityMode::Collar).unwrap();
        assert!(!r.passed);
        assert!((r.min_margin + 0.5).abs() < 1e-9);
    }

    #[test]
    fn determinant_residual_on_plane_vanishes() {
        let plane = build_domain(&DomainSpec::HalfSpace { dim: 2 }).unwrap();
        let cfg = EstimatorConfig::default();
        let z = pt(&[-0.01, 0.2, 0.3, -0.1]);
        let tau = TangentVector::basis(2, 1);
        let r = determinant_residual(&plane, &cfg, &z, &tau).unwrap();
        assert!(r < 1e-8, "{r:e}");
    }
}
