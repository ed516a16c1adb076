//! Smooth maximum, plurisubharmonic extension, and the mollify-and-patch
//! construction of a smooth defining function `rho_s` from a plurisubharmonic
//! `lambda` with `-C delta^eta <= lambda <= -delta^eta`.

use std::f64::consts::{SQRT_2, TAU};
use std::sync::{Arc, OnceLock};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::domain::complex_hessian_blocks;
use crate::error::{Error, Result};
use crate::hermitian::{min_eigenvalue_rel_omega, CPoint};
use crate::numdiff;
use crate::quadrature::{gauss_legendre, halton, integrate};

/// A pointwise real function on (part of) `C^n`.
pub type Evaluator = Arc<dyn Fn(&CPoint) -> Result<f64> + Send + Sync>;

const BUMP_DEGREE: usize = 96;

fn bump(t: f64) -> f64 {
    if t >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t)).exp()
    }
}

/// `int_{R^2} exp(-1/(1 - |v|^2)) dv`.
fn bump_mass_2d() -> f64 {
    static MASS: OnceLock<f64> = OnceLock::new();
    *MASS.get_or_init(|| TAU * integrate(BUMP_DEGREE * 2, 0.0, 1.0, |r| bump(r * r) * r))
}

/// Marginal density of the normalised planar bump along one axis.
fn marginal(tau: f64) -> f64 {
    let w = 1.0 - tau * tau;
    if w <= 0.0 {
        return 0.0;
    }
    let h = w.sqrt();
    let inner = integrate(BUMP_DEGREE, -1.0, 1.0, |q| (-1.0 / (w * (1.0 - q * q))).exp());
    h * inner / bump_mass_2d()
}

/// `int |mu - tau| m(tau) d tau - |mu|` for the unit marginal `m`; the
/// integrand is nonnegative, so the result is too.
fn abs_convolved_excess(mu: f64) -> f64 {
    let m = mu.abs();
    if m >= 1.0 {
        return 0.0;
    }
    2.0 * integrate(BUMP_DEGREE, m, 1.0, |t| (t - m) * marginal(t))
}

/// `psi_xi = max * chi_xi` with `chi_xi` the planar bump supported in the
/// disc of radius `xi / sqrt 2`. Equals `max(x, y)` once `|x - y| >= xi`.
pub fn smooth_max(xi: f64, x: f64, y: f64) -> f64 {
    let d = x - y;
    if d >= xi {
        return x;
    }
    if -d >= xi {
        return y;
    }
    let s = xi / SQRT_2;
    x.max(y) + s * abs_convolved_excess(d / xi) / SQRT_2
}

/// `psi_xi(0, 0)`; the largest excess of `psi_xi` over `max`.
pub fn smooth_max_excess(xi: f64) -> f64 {
    smooth_max(xi, 0.0, 0.0)
}

/// Glues `lambda` to `(|z|^2 / (3 r^2) - 2/3) delta0^eta` with `psi_xi`, using
/// the quadratic alone where `delta > delta0`.
pub fn extend_psh(
    lambda: Evaluator,
    dist: Evaluator,
    delta0: f64,
    eta: f64,
    r: f64,
    xi: f64,
) -> Result<Evaluator> {
    let cap = delta0.powf(eta) / 3.0;
    if !(xi > 0.0 && xi < cap) {
        return Err(Error::InvalidParameter(format!(
            "smooth-max width {xi} must lie in (0, delta0^eta / 3 = {cap})"
        )));
    }
    if !(eta > 0.0 && eta < 1.0 && delta0 > 0.0 && r > 0.0) {
        return Err(Error::InvalidParameter("need 0 < eta < 1, delta0 > 0, r > 0".into()));
    }
    let d0e = delta0.powf(eta);
    Ok(Arc::new(move |z: &CPoint| {
        let q = (z.norm_sqr() / (3.0 * r * r) - 2.0 / 3.0) * d0e;
        if dist(z)? > delta0 {
            return Ok(q);
        }
        Ok(smooth_max(xi, lambda(z)?, q))
    }))
}

/// Discrete normalised mollifier on the unit ball of `C^n`: nodes `y_k` and
/// weights `w_k` with `sum w_k = 1`, invariant under `y -> -y`.
#[derive(Clone, Debug)]
pub struct Mollifier {
    dim: usize,
    nodes: Vec<(DVector<f64>, f64)>,
    /// Description of the rule.
    pub rule: String,
}

impl Mollifier {
    /// Radial Gauss-Legendre rule against `exp(-1/(1 - r^2)) r^{2n-1}` times an
    /// angular rule: trapezoid on the circle (`n = 1`), a tensor rule in Hopf
    /// coordinates (`n = 2`), or Halton points pushed to the sphere (`n >= 3`).
    /// `resolution` scales the number of nodes in every direction.
    pub fn new(dim: usize, resolution: usize) -> Result<Self> {
        if dim == 0 || resolution == 0 {
            return Err(Error::InvalidParameter("mollifier needs dim >= 1 and resolution >= 1".into()));
        }
        let radial_deg = 4 * resolution;
        let radial: Vec<(f64, f64)> = gauss_legendre(radial_deg)
            .iter()
            .map(|&(x, w)| {
                let r = 0.5 * (x + 1.0);
                (r, 0.5 * w * bump(r * r) * r.powi(2 * dim as i32 - 1))
            })
            .collect();
        let (sphere, rule) = match dim {
            1 => {
                let k = 8 * resolution;
                let pts = (0..k)
                    .map(|i| {
                        let t = TAU * (i as f64 + 0.5) / k as f64;
                        DVector::from_vec(vec![t.cos(), t.sin()])
                    })
                    .collect::<Vec<_>>();
                let w = vec![1.0 / k as f64; k];
                (pts.into_iter().zip(w).collect::<Vec<_>>(), format!("gl{radial_deg} x trapezoid{k}"))
            }
            2 => {
                let ku = 2 * resolution;
                let ka = 3 * resolution;
                let mut pts = Vec::new();
                for &(x, wu) in gauss_legendre(ku).iter() {
                    let u = 0.5 * (x + 1.0);
                    let (a, b) = (u.sqrt(), (1.0 - u).sqrt());
                    for i in 0..ka {
                        let t1 = TAU * (i as f64 + 0.5) / ka as f64;
                        for j in 0..ka {
                            let t2 = TAU * (j as f64 + 0.5) / ka as f64;
                            pts.push((
                                DVector::from_vec(vec![a * t1.cos(), a * t1.sin(), b * t2.cos(), b * t2.sin()]),
                                0.5 * wu / (ka * ka) as f64,
                            ));
                        }
                    }
                }
                (pts, format!("gl{radial_deg} x hopf(gl{ku} x {ka}x{ka})"))
            }
            _ => {
                let k = 64 * resolution;
                let m = 2 * dim;
                let mut pts = Vec::with_capacity(2 * k);
                for i in 0..k {
                    let h = halton(i as u64, 2 * m.div_ceil(2));
                    let mut g = DVector::zeros(m);
                    for c in 0..m {
                        let (u1, u2) = (h[2 * (c / 2)].max(1e-300), h[2 * (c / 2) + 1]);
                        let rad = (-2.0 * u1.ln()).sqrt();
                        let ang = TAU * u2;
                        g[c] = if c % 2 == 0 { rad * ang.cos() } else { rad * ang.sin() };
                    }
                    let g = g.normalize();
                    pts.push((-&g, 0.5 / k as f64));
                    pts.push((g, 0.5 / k as f64));
                }
                (pts, format!("gl{radial_deg} x halton{}", 2 * k))
            }
        };
        let mut nodes = Vec::with_capacity(radial.len() * sphere.len());
        for &(r, wr) in &radial {
            for (p, wp) in &sphere {
                nodes.push((p * r, wr * wp));
            }
        }
        let total: f64 = nodes.iter().map(|n| n.1).sum();
        for n in &mut nodes {
            n.1 /= total;
        }
        Ok(Self { dim, nodes, rule })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `(lambda * chi_eps)(z)`.
    pub fn convolve(&self, lambda: &(dyn Fn(&CPoint) -> Result<f64> + Send + Sync), eps: f64, z: &CPoint) -> Result<f64> {
        if z.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: z.dim(),
            });
        }
        let mut acc = 0.0;
        let mut p = z.clone();
        for (y, w) in &self.nodes {
            p.shift_from(z, y, -eps);
            acc += w * lambda(&p)?;
        }
        Ok(acc)
    }
}

/// Closed-form distance to the sphere of radius `r`.
pub fn ball_distance(r: f64) -> Evaluator {
    Arc::new(move |z: &CPoint| Ok(r - z.norm()))
}

/// `-((R^2 - |z|^2)/R)^eta`, which satisfies the sandwich with `C = 2^eta`.
pub fn ball_lambda(r: f64, eta: f64) -> Evaluator {
    Arc::new(move |z: &CPoint| {
        let u = (r * r - z.norm_sqr()) / r;
        if u <= 0.0 {
            return Err(Error::OracleFailure(format!("|z| = {} lies outside the ball", z.norm())));
        }
        Ok(-u.powf(eta))
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineConstants {
    pub eta: f64,
    pub s: f64,
    pub c_eta: f64,
    pub r: f64,
    pub sup_delta: f64,
    pub a: f64,
    pub b: f64,
    /// Left side of the `b` condition at the returned `b`.
    pub ratio: f64,
    /// Required value of `ratio` (a margin above `c_eta`).
    pub ratio_target: f64,
    pub big_a: f64,
    pub big_b: f64,
    pub e_s_cap: f64,
    pub e_s: f64,
    pub xi: f64,
    pub eps0: f64,
    /// `sigma_s >= -c_s delta^s`.
    pub c_s: f64,
}

impl PipelineConstants {
    pub fn eps(&self, j: usize) -> f64 {
        self.eps0 * (self.a / self.b).powf(0.5 * j as f64)
    }

    /// Seam slacks `(ab)^{s/2} xi` and `a^s xi`.
    pub fn seam_slacks(&self) -> (f64, f64) {
        ((self.a * self.b).powf(0.5 * self.s) * self.xi, self.a.powf(self.s) * self.xi)
    }
}

/// Left side of the `b` condition.
pub fn b_ratio(eta: f64, s: f64, a: f64, b: f64) -> f64 {
    let num = (b - 1.0).powf(eta) * b.powf(-0.5 * s) + (a - 1.0).powf(eta) * a.powf(-0.5 * s);
    let den = (a * b).powf(0.5 * eta) * (a.powf(-0.5 * s) + b.powf(-0.5 * s));
    num / den
}

/// Margin factor on `C_eta` demanded of the `b` ratio.
pub const B_RATIO_MARGIN: f64 = 1.25;

/// Constants of the construction; `b` by doubling then bisection until the
/// ratio reaches `1.25 C_eta`, `E_s` at half its cap.
pub fn pipeline_constants(eta: f64, s: f64, c_eta: f64, r: f64, sup_delta: f64, a: f64) -> Result<PipelineConstants> {
    if !(0.0 < s && s < eta && eta < 1.0) {
        return Err(Error::InvalidParameter(format!("need 0 < s < eta < 1, got s = {s}, eta = {eta}")));
    }
    if !(c_eta > 1.0 && a > 1.0 && r > 0.0 && sup_delta > 0.0) {
        return Err(Error::InvalidParameter("need C_eta > 1, a > 1, r > 0 and sup delta > 0".into()));
    }
    let target = B_RATIO_MARGIN * c_eta;
    let f = |b: f64| b_ratio(eta, s, a, b);
    let mut lo = a;
    let mut hi = 2.0 * a;
    let mut guard = 0;
    while f(hi) <= target {
        lo = hi;
        hi *= 2.0;
        guard += 1;
        if guard > 2000 || !hi.is_finite() {
            return Err(Error::NonConvergence {
                iterations: guard,
                residual: target - f(hi),
            });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > target {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    let b = hi;
    let ratio = f(b);
    let big_a = eta.recip()
        * s.powf(s / eta)
        * (b.powf(eta) - a.powf(eta))
        / ((b - 1.0).powf(eta) - (a - 1.0).powf(eta))
        * ((eta - s) * (a.powf(-s) - b.powf(-s)) / (b.powf(eta - s) - a.powf(eta - s))).powf((eta - s) / eta);
    let big_b = big_a * ((b - 1.0).powf(eta) * b.powf(-s) - (a - 1.0).powf(eta) * a.powf(-s)) / (a.powf(-s) - b.powf(-s));
    let ab = a * b;
    let e_s_cap = 2.0 * big_a * (ratio - c_eta) * ab.powf(0.5 * eta) * b.powf(-s) / (r * r);
    let e_s = 0.5 * e_s_cap;
    let xi = ab.powf(-0.5 * s) * (big_a * (ratio - c_eta) * ab.powf(0.5 * eta) - 0.5 * b.powf(s) * r * r * e_s);
    let eps0 = 0.5 * (sup_delta / ab.sqrt() + sup_delta / a);
    let c_s = a.powf(-s) * (big_a * c_eta * b.powf(eta) + big_b + 0.5 * e_s * b.powf(s) * r * r);
    Ok(PipelineConstants {
        eta,
        s,
        c_eta,
        r,
        sup_delta,
        a,
        b,
        ratio,
        ratio_target: target,
        big_a,
        big_b,
        e_s_cap,
        e_s,
        xi,
        eps0,
        c_s,
    })
}

/// The patched functions `sigma_eps`, `sigma_s` and `rho_s`.
#[derive(Clone)]
pub struct Pipeline {
    pub consts: PipelineConstants,
    lambda: Evaluator,
    dist: Evaluator,
    mollifier: Arc<Mollifier>,
}

impl Pipeline {
    pub fn new(consts: PipelineConstants, lambda: Evaluator, dist: Evaluator, mollifier: Mollifier) -> Self {
        Self {
            consts,
            lambda,
            dist,
            mollifier: Arc::new(mollifier),
        }
    }

    pub fn mollifier(&self) -> &Mollifier {
        &self.mollifier
    }

    pub fn delta(&self, z: &CPoint) -> Result<f64> {
        (self.dist)(z)
    }

    /// `(lambda * chi_eps)(z)`, defined where `delta(z) > eps`.
    pub fn lambda_eps(&self, eps: f64, z: &CPoint) -> Result<f64> {
        let d = self.delta(z)?;
        if d <= eps {
            return Err(Error::OutsideShrunkDomain { distance: d, radius: eps });
        }
        self.mollifier.convolve(self.lambda.as_ref(), eps, z)
    }

    /// `A eps^{s-eta} lambda_eps - B eps^s + (1/2) E_s b^s eps^s (|z|^2 - r^2)`.
    pub fn sigma_eps(&self, eps: f64, z: &CPoint) -> Result<f64> {
        let c = &self.consts;
        let le = self.lambda_eps(eps, z)?;
        Ok(c.big_a * eps.powf(c.s - c.eta) * le - c.big_b * eps.powf(c.s)
            + 0.5 * c.e_s * c.b.powf(c.s) * eps.powf(c.s) * (z.norm_sqr() - c.r * c.r))
    }

    /// Patch index `j` with `a eps_j <= delta < sqrt(ab) eps_j`.
    pub fn patch_index(&self, delta: f64) -> usize {
        let c = &self.consts;
        if delta >= c.a * c.eps0 {
            return 0;
        }
        let j = (2.0 * (delta / (c.a * c.eps0)).ln() / (c.a / c.b).ln()).ceil().max(0.0) as usize;
        let mut j = j;
        while j > 0 && c.a * c.eps(j - 1) <= delta {
            j -= 1;
        }
        while c.a * c.eps(j) > delta {
            j += 1;
        }
        j
    }

    /// `(x, y)` fed to `psi_xi` at `z`, with the patch index.
    pub fn patch_inputs(&self, z: &CPoint) -> Result<(usize, f64, f64)> {
        let d = self.delta(z)?;
        if d <= 0.0 {
            return Err(Error::OutsideShrunkDomain { distance: d, radius: 0.0 });
        }
        let j = self.patch_index(d);
        let (e0, e1) = (self.consts.eps(j), self.consts.eps(j + 1));
        let scale = e0.powf(self.consts.s);
        Ok((j, self.sigma_eps(e0, z)? / scale, self.sigma_eps(e1, z)? / scale))
    }

    pub fn sigma_s(&self, z: &CPoint) -> Result<f64> {
        let (j, x, y) = self.patch_inputs(z)?;
        Ok(self.consts.eps(j).powf(self.consts.s) * smooth_max(self.consts.xi, x, y))
    }

    pub fn rho_s(&self, z: &CPoint) -> Result<f64> {
        let sig = self.sigma_s(z)?;
        if sig >= 0.0 {
            return Err(Error::BoundViolation(format!("sigma_s = {sig:e} is not negative")));
        }
        Ok(-(-sig).powf(1.0 / self.consts.s))
    }

    pub fn rho_s_evaluator(&self) -> Evaluator {
        let p = self.clone();
        Arc::new(move |z: &CPoint| p.rho_s(z))
    }
}

/// Builds the pipeline for `lambda` on a domain with distance `dist`.
pub fn assemble_rho_s(
    lambda: Evaluator,
    dist: Evaluator,
    consts: PipelineConstants,
    dim: usize,
    resolution: usize,
) -> Result<Pipeline> {
    Ok(Pipeline::new(consts, lambda, dist, Mollifier::new(dim, resolution)?))
}

/// Largest difference quotient over the pairs.
pub fn lipschitz_estimate(f: &Evaluator, pairs: &[(CPoint, CPoint)]) -> Result<f64> {
    let q: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|(z, w)| {
            let d = z.distance(w);
            if d == 0.0 {
                return Ok(0.0);
            }
            Ok((f(z)? - f(w)?).abs() / d)
        })
        .collect();
    let mut best = 0.0f64;
    for v in q {
        best = best.max(v?);
    }
    Ok(best)
}

/// Point of the ball of radius `r` at distance `delta` from the sphere, in a
/// uniformly random direction.
pub fn ball_point_at_depth(dim: usize, r: f64, delta: f64, rng: &mut impl Rng) -> CPoint {
    let mut v = DVector::from_fn(2 * dim, |_, _| {
        let (u1, u2): (f64, f64) = (rng.random::<f64>().max(1e-300), rng.random());
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    });
    v.normalize_mut();
    CPoint::new((v * (r - delta)).as_slice().to_vec()).expect("finite")
}

/// Pairs in the ball: half local (separation below the depth, so within one
/// annulus), half global (independent depths, across annuli).
pub fn ball_pairs(dim: usize, r: f64, count: usize, seed: u64) -> Vec<(CPoint, CPoint)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = |rng: &mut ChaCha8Rng| r * 10f64.powf(-4.0 + 4.0 * rng.random::<f64>()).min(0.999);
    (0..count)
        .map(|k| {
            let d = depth(&mut rng);
            let z = ball_point_at_depth(dim, r, d, &mut rng);
            let w = if k % 2 == 0 {
                let step = d * 10f64.powf(-3.0 + 2.5 * rng.random::<f64>());
                let dir = DVector::from_fn(2 * dim, |_, _| rng.random::<f64>() - 0.5).normalize();
                let w = z.offset(&dir, step);
                if w.norm() < r {
                    w
                } else {
                    z.offset(&dir, -step)
                }
            } else {
                let d2 = depth(&mut rng);
                ball_point_at_depth(dim, r, d2, &mut rng)
            };
            (z, w)
        })
        .collect()
}

/// Smallest eigenvalue (relative to `omega`) of `i ddbar f` from central
/// differences with step `h`.
pub fn fd_levi_min(f: &Evaluator, z: &CPoint, h: f64) -> Result<f64> {
    let hess = numdiff::hessian(|p| f(p), z, h)?;
    let (mixed, _) = complex_hessian_blocks(&hess);
    min_eigenvalue_rel_omega(&crate::hermitian::HermitianForm::from_matrix(mixed).coeff().clone())
}

/// Fitted `G_eps = max eps |grad lambda_eps| / (delta + eps)^eta` over the
/// samples with `delta > 2 eps`, for each `eps`.
pub fn gradient_constant_fit(p: &Pipeline, eps_list: &[f64], samples: &[CPoint]) -> Result<Vec<f64>> {
    let eta = p.consts.eta;
    eps_list
        .iter()
        .map(|&eps| {
            let mut g = 0.0f64;
            for z in samples {
                let d = p.delta(z)?;
                if d <= 2.0 * eps {
                    continue;
                }
                let h = 1e-3 * eps;
                let grad = numdiff::gradient(|q| p.lambda_eps(eps, q), z, h)?;
                g = g.max(eps * grad.norm() / (d + eps).powf(eta));
            }
            Ok(g)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct Witness {
    pub point: CPoint,
    pub delta: f64,
    pub margin: f64,
}

fn track(slot: &mut Option<Witness>, z: &CPoint, delta: f64, margin: f64) {
    if slot.as_ref().is_none_or(|w| margin < w.margin) {
        *slot = Some(Witness {
            point: z.clone(),
            delta,
            margin,
        });
    }
}

/// Sampled checks of the constructed `rho_s`.
#[derive(Clone, Debug, Serialize)]
pub struct PipelineReport {
    pub constants: PipelineConstants,
    pub mollifier_rule: String,
    pub mollifier_nodes: usize,
    pub quadrature_error: f64,
    pub samples: usize,
    /// Worst `(-delta - rho_s) / delta`; must be `>= -tol`.
    pub upper_sandwich: Option<Witness>,
    /// Worst `(rho_s + C_s^{1/s} delta) / delta`.
    pub lower_sandwich: Option<Witness>,
    /// Worst `-C_eta delta^eta <= lambda_eps <= -(delta - eps)^eta` margin, relative.
    pub lambda_eps_sandwich: Option<Witness>,
    pub hessian_samples: usize,
    /// Worst `(mu_min(i ddbar sigma_s) - E_s delta^s) / (E_s delta^s)`.
    pub hessian: Option<Witness>,
    pub hessian_tolerance: f64,
    /// Worst seam margins after subtracting the slacks.
    pub seam_outer: Option<Witness>,
    pub seam_inner: Option<Witness>,
    pub lipschitz: Option<(f64, f64)>,
    pub tolerance: f64,
}

impl PipelineReport {
    fn ok(w: &Option<Witness>, tol: f64) -> bool {
        w.as_ref().is_none_or(|w| w.margin >= -tol)
    }

    pub fn sandwich_passed(&self) -> bool {
        Self::ok(&self.upper_sandwich, self.tolerance) && Self::ok(&self.lower_sandwich, self.tolerance)
    }

    pub fn hessian_passed(&self) -> bool {
        Self::ok(&self.hessian, self.hessian_tolerance)
    }

    pub fn seams_passed(&self) -> bool {
        Self::ok(&self.seam_outer, self.tolerance) && Self::ok(&self.seam_inner, self.tolerance)
    }

    pub fn lipschitz_stable(&self) -> bool {
        self.lipschitz
            .is_none_or(|(a, b)| a.is_finite() && b.is_finite() && (b - a).abs() <= 0.1 * b.abs().max(a.abs()))
    }

    pub fn passed(&self) -> bool {
        self.sandwich_passed() && self.hessian_passed() && self.seams_passed() && self.lipschitz_stable()
    }
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub sandwich_samples: Vec<CPoint>,
    /// Points where the Hessian bound is checked by finite differences.
    pub hessian_samples: Vec<CPoint>,
    /// Relative fd step for the Hessian check, `h = step * delta`.
    pub hessian_step: f64,
    pub hessian_tolerance: f64,
    /// Points used for the seam inequalities; each is moved radially onto the seams.
    pub seam_directions: Vec<CPoint>,
    pub seam_levels: usize,
    pub lipschitz_pairs: Option<Vec<(CPoint, CPoint)>>,
    pub tolerance: f64,
}

/// Checks the sandwich, the Hessian bound, the seam inequalities and the
/// Lipschitz estimate at the given samples. Seam points are placed by moving
/// along `z / |z|`, which is the normal direction on balls.
pub fn verify_pipeline(p: &Pipeline, opts: &VerifyOptions) -> Result<PipelineReport> {
    let c = &p.consts;
    let cs_root = c.c_s.powf(1.0 / c.s);
    let sandwich: Vec<Result<(CPoint, f64, f64, f64, f64)>> = opts
        .sandwich_samples
        .par_iter()
        .map(|z| {
            let d = p.delta(z)?;
            let rho = p.rho_s(z)?;
            let upper = (-d - rho) / d;
            let lower = (rho + cs_root * d) / d;
            let j = p.patch_index(d);
            let eps = c.eps(j);
            let le = p.lambda_eps(eps, z)?;
            let lo = le + c.c_eta * d.powf(c.eta);
            let hi = -(d - eps).powf(c.eta) - le;
            let lam = lo.min(hi) / d.powf(c.eta);
            Ok((z.clone(), d, upper, lower, lam))
        })
        .collect();
    let mut report = PipelineReport {
        constants: c.clone(),
        mollifier_rule: p.mollifier.rule.clone(),
        mollifier_nodes: p.mollifier.len(),
        quadrature_error: 0.0,
        samples: opts.sandwich_samples.len(),
        upper_sandwich: None,
        lower_sandwich: None,
        lambda_eps_sandwich: None,
        hessian_samples: opts.hessian_samples.len(),
        hessian: None,
        hessian_tolerance: opts.hessian_tolerance,
        seam_outer: None,
        seam_inner: None,
        lipschitz: None,
        tolerance: opts.tolerance,
    };
    for r in sandwich {
        let (z, d, up, lo, lam) = r?;
        track(&mut report.upper_sandwich, &z, d, up);
        track(&mut report.lower_sandwich, &z, d, lo);
        track(&mut report.lambda_eps_sandwich, &z, d, lam);
    }

    let sigma: Evaluator = {
        let q = p.clone();
        Arc::new(move |z: &CPoint| q.sigma_s(z))
    };
    let hess: Vec<Result<(CPoint, f64, f64)>> = opts
        .hessian_samples
        .par_iter()
        .map(|z| {
            let d = p.delta(z)?;
            let mu = fd_levi_min(&sigma, z, opts.hessian_step * d)?;
            let target = c.e_s * d.powf(c.s);
            Ok((z.clone(), d, (mu - target) / target))
        })
        .collect();
    for r in hess {
        let (z, d, m) = r?;
        track(&mut report.hessian, &z, d, m);
    }

    let (outer_slack, inner_slack) = c.seam_slacks();
    let r = c.r;
    for dir in &opts.seam_directions {
        let u = dir.real().normalize();
        for j in 0..opts.seam_levels {
            let ej = c.eps(j);
            let ej1 = c.eps(j + 1);
            let scale = ej.powf(c.s);
            // delta = sqrt(ab) eps_j: sigma_{eps_j} dominates
            let d_out = (c.a * c.b).sqrt() * ej;
            if d_out < c.sup_delta {
                let z = CPoint::new((&u * (r - d_out)).as_slice().to_vec())?;
                let x = p.sigma_eps(ej, &z)? / scale;
                let y = p.sigma_eps(ej1, &z)? / scale;
                track(&mut report.seam_outer, &z, d_out, (x - y - outer_slack) / outer_slack);
            }
            // delta = a eps_j: sigma_{eps_{j+1}} dominates
            let d_in = c.a * ej;
            if d_in < c.sup_delta {
                let z = CPoint::new((&u * (r - d_in)).as_slice().to_vec())?;
                let x = p.sigma_eps(ej, &z)? / scale;
                let y = p.sigma_eps(ej1, &z)? / scale;
                track(&mut report.seam_inner, &z, d_in, (y - x - inner_slack) / inner_slack);
            }
        }
    }

    if let Some(pairs) = &opts.lipschitz_pairs {
        let f = p.rho_s_evaluator();
        let half = pairs.len() / 2;
        let l1 = lipschitz_estimate(&f, &pairs[..half])?;
        let l2 = lipschitz_estimate(&f, pairs)?;
        report.lipschitz = Some((l1, l2));
    }

    // quadrature error: compare against a rule of double resolution at a few samples
    if let Some(z) = opts.sandwich_samples.first() {
        let fine = Mollifier::new(p.mollifier.dim(), 2 * resolution_of(&p.mollifier))?;
        let d = p.delta(z)?;
        let eps = c.eps(p.patch_index(d));
        let coarse = p.lambda_eps(eps, z)?;
        let finer = fine.convolve(p.lambda.as_ref(), eps, z)?;
        report.quadrature_error = (coarse - finer).abs();
    }
    Ok(report)
}

/// Settings for the ball construction run.
#[derive(Clone, Debug, PartialEq, serde::Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub eta: f64,
    pub s: f64,
    pub a: f64,
    pub resolution: usize,
    /// Radial sandwich samples; every `hessian_every`-th one is also a
    /// Hessian sample.
    pub samples: usize,
    pub hessian_every: usize,
    pub hessian_step: f64,
    pub hessian_tolerance: f64,
    pub seam_directions: usize,
    pub seam_levels: usize,
    pub lipschitz_pairs: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            eta: 0.5,
            s: 0.25,
            a: 2.0,
            resolution: 6,
            samples: 1000,
            hessian_every: 5,
            hessian_step: 1e-2,
            hessian_tolerance: 1e-3,
            seam_directions: 20,
            seam_levels: 4,
            lipschitz_pairs: 4000,
            tolerance: 1e-10,
            seed: 1,
        }
    }
}

/// Runs the construction for `lambda = -((R^2 - |z|^2)/R)^eta` on the ball of
/// radius `r` in `C^dim` and verifies it. Samples are spread log-uniformly in
/// depth over `[1e-4 r, r)`.
pub fn ball_pipeline(dim: usize, r: f64, cfg: &PipelineConfig) -> Result<PipelineReport> {
    if cfg.samples == 0 || cfg.hessian_every == 0 {
        return Err(Error::InvalidParameter("samples and hessian_every must be positive".into()));
    }
    let consts = pipeline_constants(cfg.eta, cfg.s, 2f64.powf(cfg.eta), r, r, cfg.a)?;
    let p = assemble_rho_s(ball_lambda(r, cfg.eta), ball_distance(r), consts, dim, cfg.resolution)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.samples;
    let samples: Vec<CPoint> = (0..n)
        .map(|i| {
            let d = r * 10f64.powf(-4.0 + 4.0 * (i as f64 + 0.5) / n as f64).min(0.999);
            ball_point_at_depth(dim, r, d, &mut rng)
        })
        .collect();
    let opts = VerifyOptions {
        hessian_samples: samples.iter().step_by(cfg.hessian_every).cloned().collect(),
        seam_directions: samples.iter().take(cfg.seam_directions).cloned().collect(),
        sandwich_samples: samples,
        hessian_step: cfg.hessian_step,
        hessian_tolerance: cfg.hessian_tolerance,
        seam_levels: cfg.seam_levels,
        lipschitz_pairs: (cfg.lipschitz_pairs > 0).then(|| ball_pairs(dim, r, cfg.lipschitz_pairs, cfg.seed.wrapping_add(2))),
        tolerance: cfg.tolerance,
    };
    verify_pipeline(&p, &opts)
}

fn resolution_of(m: &Mollifier) -> usize {
    // recover the resolution from the radial degree recorded in the rule
    m.rule
        .strip_prefix("gl")
        .and_then(|s| s.split(' ').next())
        .and_then(|s| s.parse::<usize>().ok())
        .map(|d| (d / 4).max(1))
        .unwrap_or(1)
}

/// `psi(0, 0)` in closed form for the width-`xi` smooth max, used in tests.
pub fn expected_excess_quadrature(xi: f64) -> f64 {
    // (1/sqrt 2) * s * int |t| m(t) dt with s = xi / sqrt 2
    let s = xi / SQRT_2;
    let first_moment = 2.0 * integrate(BUMP_DEGREE * 2, 0.0, 1.0, |t| t * marginal(t));
    s * first_moment / SQRT_2
}
