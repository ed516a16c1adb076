//! Boundary frames and the CR invariants built from the signed distance:
//! the complex normal `nu`, the Levi form, the D'Angelo one-form `alpha`,
//! the form `beta`, Levi-null spaces and the constant `A`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::distance::{boundary_distance_hessian, DistanceJet};
use crate::domain::{complex_hessian_blocks, to_complex_jet, DomainOracle, RealJet};
use crate::error::{Error, Result};
use crate::hermitian::{hermitian_eigen, CPoint, HermitianForm, OneForm10, TangentVector, C64};

/// Accepted `|rho(p)|` at a frame base point, relative to `max(1, |grad rho|)`.
pub const FRAME_BOUNDARY_TOL: f64 = 1e-10;
/// Agreement required between the two `alpha` computations.
pub const ALPHA_CROSS_TOL: f64 = 1e-6;
/// Tolerance on the smallest tangential eigenvalue of `beta`.
pub const BETA_PSD_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct BoundaryFrame {
    pub p: CPoint,
    /// Unit outward normal `grad delta~(p)`.
    pub normal: DVector<f64>,
    /// Real Hessian of `delta~` at `p`.
    pub real_hessian: DMatrix<f64>,
    pub nu: TangentVector,
    pub partial_delta: OneForm10,
    pub levi: HermitianForm,
    pub pure: DMatrix<C64>,
    /// Orthonormal basis of `ker d delta~` in `T^{1,0}`.
    pub tangent_basis: Vec<TangentVector>,
    /// Smallest Levi eigenvalue on the complex tangent; `None` when `n = 1`.
    pub levi_min: Option<f64>,
    /// Tangential Levi eigenvalues, ascending.
    pub levi_eigenvalues: Vec<f64>,
}

/// Orthonormal basis of `{X : sum a_j X_j = 0}` for `|X|^2 = (1/2) sum |X_j|^2`.
fn kernel_basis(a: &DVector<C64>) -> Vec<TangentVector> {
    let n = a.len();
    let mut vecs: Vec<DVector<C64>> = vec![a.conjugate() / C64::new(a.norm(), 0.0)];
    for k in 0..n {
        if vecs.len() == n {
            break;
        }
        let mut v = DVector::<C64>::zeros(n);
        v[k] = C64::new(1.0, 0.0);
        for _ in 0..2 {
            for u in &vecs {
                let c = u.dotc(&v);
                v -= u * c;
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            vecs.push(v / C64::new(norm, 0.0));
        }
    }
    vecs.into_iter()
        .skip(1)
        .map(|v| TangentVector(v * C64::new(std::f64::consts::SQRT_2, 0.0)))
        .collect()
}

/// Hermitian eigen-decomposition of a Gram matrix `G_ij = Theta(e_i, conj e_j)`
/// in an orthonormal basis, returned as eigenvalues with tangent vectors.
fn gram_eigen(gram: &DMatrix<C64>, basis: &[TangentVector]) -> (Vec<f64>, Vec<TangentVector>) {
    if basis.is_empty() {
        return (vec![], vec![]);
    }
    let (vals, vecs) = hermitian_eigen(&gram.transpose());
    let n = basis[0].dim();
    let out = (0..vals.len())
        .map(|k| {
            let mut v = DVector::<C64>::zeros(n);
            for (i, e) in basis.iter().enumerate() {
                v += &e.0 * vecs[(i, k)];
            }
            TangentVector(v)
        })
        .collect();
    (vals, out)
}

fn frame_from_parts(p: CPoint, normal: DVector<f64>, real_hessian: DMatrix<f64>) -> Result<BoundaryFrame> {
    let cj = to_complex_jet(&RealJet {
        value: 0.0,
        gradient: normal.clone(),
        hessian: real_hessian.clone(),
    })?;
    let a = cj.dz.clone();
    let nu = TangentVector(a.0.map(|c| c.conj() * 4.0));
    let tangent_basis = kernel_basis(&a.0);
    let gram = cj.mixed.restrict(&tangent_basis);
    let (levi_eigenvalues, _) = gram_eigen(&gram, &tangent_basis);
    Ok(BoundaryFrame {
        p,
        normal,
        real_hessian,
        nu,
        partial_delta: a,
        levi: cj.mixed,
        pure: cj.pure,
        levi_min: levi_eigenvalues.first().copied(),
        levi_eigenvalues,
        tangent_basis,
    })
}

/// Frame at a boundary point `p`.
pub fn build_frame(oracle: &DomainOracle, p: &CPoint) -> Result<BoundaryFrame> {
    let rho = oracle.rho(p)?;
    let g = oracle.gradient(p)?;
    let gn = g.norm();
    if gn <= 1e-14 {
        return Err(Error::VanishingGradient);
    }
    if rho.abs() > FRAME_BOUNDARY_TOL * gn.max(1.0) {
        return Err(Error::OffBoundary { rho });
    }
    let h = boundary_distance_hessian(oracle, p)?;
    frame_from_parts(p.clone(), g / gn, h)
}

/// Frame at the nearest boundary point of a collar jet.
pub fn frame_at_foot(jet: &DistanceJet) -> Result<BoundaryFrame> {
    frame_from_parts(
        jet.projection.xi.clone(),
        jet.projection.normal.clone(),
        jet.hessian_xi.clone(),
    )
}

impl BoundaryFrame {
    pub fn dim(&self) -> usize {
        self.nu.dim()
    }

    /// Coefficients `c_k = 2 sum_j M_kj a_j` of `pi_{1,0} alpha`.
    pub fn alpha_form(&self) -> OneForm10 {
        let m = self.levi.coeff();
        OneForm10((m * &self.partial_delta.0) * C64::new(2.0, 0.0))
    }

    /// `alpha(tau) = (1/2) Levi(tau, conj nu)`.
    pub fn alpha_levi(&self, tau: &TangentVector) -> Result<C64> {
        Ok(self.levi.action(tau, &self.nu)? * 0.5)
    }

    /// `pi_{1,0}` of `4 sum Re(conj(a_j) dbar a_j)` evaluated from the real
    /// Hessian of `delta~`.
    pub fn alpha_direct(&self, tau: &TangentVector) -> Result<C64> {
        if tau.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: tau.dim(),
            });
        }
        let n = self.dim();
        let a: Vec<C64> = (0..n)
            .map(|j| C64::new(self.normal[2 * j], -self.normal[2 * j + 1]) * 0.5)
            .collect();
        let da = |w: &DVector<f64>| -> Vec<C64> {
            let hw = &self.real_hessian * w;
            (0..n)
                .map(|j| C64::new(hw[2 * j], -hw[2 * j + 1]) * 0.5)
                .collect()
        };
        let rotate = |v: &DVector<f64>| -> DVector<f64> {
            DVector::from_fn(v.len(), |i, _| if i % 2 == 0 { -v[i + 1] } else { v[i - 1] })
        };
        let real_alpha = |v: &DVector<f64>| -> f64 {
            let dv = da(v);
            let djv = da(&rotate(v));
            (0..n)
                .map(|j| {
                    let dbar = (dv[j] + C64::i() * djv[j]) * 0.5;
                    (a[j].conj() * dbar).re
                })
                .sum::<f64>()
                * 4.0
        };
        let v = tau.to_real();
        let jv = rotate(&v);
        Ok(C64::new(real_alpha(&v), -real_alpha(&jv)) * 0.5)
    }

    /// Both `alpha` computations with their discrepancy.
    pub fn alpha_paths(&self, tau: &TangentVector) -> Result<(C64, C64, f64)> {
        let x = self.alpha_levi(tau)?;
        let y = self.alpha_direct(tau)?;
        Ok((x, y, (x - y).norm()))
    }

    /// Tangential Levi form eigen-decomposition relative to `omega`.
    pub fn levi_tangential_eigen(&self) -> (Vec<f64>, Vec<TangentVector>) {
        let gram = self.levi.restrict(&self.tangent_basis);
        gram_eigen(&gram, &self.tangent_basis)
    }
}

/// `alpha(tau)`, cross-checked against the direct definition.
pub fn alpha_eval(frame: &BoundaryFrame, tau: &TangentVector) -> Result<C64> {
    let (x, _, d) = frame.alpha_paths(tau)?;
    let scale = tau.norm() * (1.0 + frame.levi.coeff().norm());
    if d > ALPHA_CROSS_TOL * scale.max(1.0) {
        return Err(Error::CrossCheck {
            what: "alpha",
            discrepancy: d,
        });
    }
    Ok(x)
}

/// `beta` with coefficient matrix `P conj(P) + M^2 - 2 c c^*`.
pub fn beta_form(frame: &BoundaryFrame) -> HermitianForm {
    let m = frame.levi.coeff();
    let p = &frame.pure;
    let c = frame.alpha_form();
    HermitianForm::from_matrix(p * p.conjugate() + m * m - (&c.0 * c.0.adjoint()) * C64::new(2.0, 0.0))
}

/// Smallest eigenvalue of `beta` on the complex tangent, relative to `omega`.
pub fn beta_tangential_min(frame: &BoundaryFrame) -> Option<f64> {
    let beta = beta_form(frame);
    let gram = beta.restrict(&frame.tangent_basis);
    gram_eigen(&gram, &frame.tangent_basis).0.first().copied()
}

/// `beta`, rejecting tangential negativity beyond [`BETA_PSD_TOL`].
pub fn beta_eval(frame: &BoundaryFrame) -> Result<HermitianForm> {
    if let Some(min) = beta_tangential_min(frame) {
        if min < -BETA_PSD_TOL {
            return Err(Error::PsdViolation { min_eigenvalue: min });
        }
    }
    Ok(beta_form(frame))
}

/// Default Levi-null threshold `1e-6 (largest tangential eigenvalue + 1)`.
pub fn default_null_tol(frame: &BoundaryFrame) -> f64 {
    let top = frame.levi_eigenvalues.last().copied().unwrap_or(0.0);
    1e-6 * (top.max(0.0) + 1.0)
}

/// Orthonormal basis of the tangential Levi eigenvectors with
/// `|eigenvalue| <= tol`.
pub fn levi_null_basis(frame: &BoundaryFrame, tol: Option<f64>) -> Vec<TangentVector> {
    let tol = tol.unwrap_or_else(|| default_null_tol(frame));
    let (vals, vecs) = frame.levi_tangential_eigen();
    vals.into_iter()
        .zip(vecs)
        .filter(|(v, _)| v.abs() <= tol)
        .map(|(_, x)| x)
        .collect()
}

/// `sup |alpha(tau)| / |tau|` over the span of an orthonormal family.
pub fn alpha_norm_on(frame: &BoundaryFrame, basis: &[TangentVector]) -> Result<f64> {
    let mut s = 0.0;
    for e in basis {
        s += alpha_eval(frame, e)?.norm_sqr();
    }
    Ok(s.sqrt())
}

#[derive(Clone, Debug, Serialize)]
pub struct ConstantA {
    pub value: f64,
    pub witness: Option<CPoint>,
    pub samples: usize,
    pub null_points: usize,
    pub skipped: usize,
}

/// `A = sup |alpha(tau)| / |tau|` over Levi-null `tau` at the samples; 0 when
/// no sample has a null direction.
pub fn constant_a(oracle: &DomainOracle, samples: &[CPoint], tol: Option<f64>) -> Result<ConstantA> {
    let per: Vec<Result<Option<f64>>> = samples
        .par_iter()
        .map(|p| {
            let frame = match build_frame(oracle, p) {
                Ok(f) => f,
                Err(Error::OffBoundary { .. }) | Err(Error::VanishingGradient) => return Ok(None),
                Err(e) => return Err(e),
            };
            let null = levi_null_basis(&frame, tol);
            if null.is_empty() {
                return Ok(Some(-1.0));
            }
            Ok(Some(alpha_norm_on(&frame, &null)?))
        })
        .collect();
    let mut out = ConstantA {
        value: 0.0,
        witness: None,
        samples: samples.len(),
        null_points: 0,
        skipped: 0,
    };
    for (p, r) in samples.iter().zip(per) {
        match r? {
            None => out.skipped += 1,
            Some(v) if v < 0.0 => {}
            Some(v) => {
                out.null_points += 1;
                if out.witness.is_none() || v > out.value {
                    out.value = v;
                    out.witness = Some(p.clone());
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct ARefinement {
    pub coarse: ConstantA,
    pub fine: ConstantA,
    /// `|A_2N - A_N| / A_2N`, zero when both vanish.
    pub relative_change: f64,
}

/// `constant_a` at `n` and `2n` boundary samples.
pub fn constant_a_refined(oracle: &DomainOracle, n: usize, seed: u64, tol: Option<f64>) -> Result<ARefinement> {
    let coarse_pts = crate::sampling::boundary_points(oracle, n, seed, true)?;
    let fine_pts = crate::sampling::boundary_points(oracle, 2 * n, seed.wrapping_add(1), true)?;
    let coarse = constant_a(oracle, &coarse_pts, tol)?;
    let fine = constant_a(oracle, &fine_pts, tol)?;
    let relative_change = if fine.value == 0.0 && coarse.value == 0.0 {
        0.0
    } else {
        (fine.value - coarse.value).abs() / fine.value.abs().max(coarse.value.abs())
    };
    Ok(ARefinement {
        coarse,
        fine,
        relative_change,
    })
}

/// `M(Hess delta~(z)) - M(H_xi) - 2 (-delta~) (beta + 2 c c^*)`, which is
/// `O(delta~^2)`; returns its max entry.
pub fn weinstock_complex_defect(jet: &DistanceJet) -> Result<f64> {
    let frame = frame_at_foot(jet)?;
    let (mz, _) = complex_hessian_blocks(&jet.hessian);
    let beta = beta_form(&frame);
    let c = frame.alpha_form();
    let corr = (beta.coeff() + (&c.0 * c.0.adjoint()) * C64::new(2.0, 0.0)) * C64::new(-2.0 * jet.delta(), 0.0);
    let diff = mz - frame.levi.coeff() - corr;
    Ok(diff.iter().map(|c| c.norm()).fold(0.0, f64::max))
}

/// Per-sample invariants, one row of the invariants table.
#[derive(Clone, Debug, Serialize)]
pub struct InvariantRow {
    pub index: usize,
    pub feature: bool,
    pub point: CPoint,
    pub levi_min: Option<f64>,
    pub beta_min: Option<f64>,
    pub null_dim: usize,
    /// `|alpha|` on the Levi-null space, when it is nontrivial.
    pub alpha_null: Option<f64>,
    /// Largest disagreement of the two `alpha` paths over the tangent basis and `nu`.
    pub alpha_discrepancy: f64,
    pub error: Option<String>,
}

fn invariant_row(oracle: &DomainOracle, index: usize, p: &CPoint, feature: bool, tol: Option<f64>) -> InvariantRow {
    let mut row = InvariantRow {
        index,
        feature,
        point: p.clone(),
        levi_min: None,
        beta_min: None,
        null_dim: 0,
        alpha_null: None,
        alpha_discrepancy: 0.0,
        error: None,
    };
    let result = (|| -> Result<()> {
        let frame = build_frame(oracle, p)?;
        row.levi_min = frame.levi_min;
        row.beta_min = beta_tangential_min(&frame);
        for tau in frame.tangent_basis.iter().chain(std::iter::once(&frame.nu)) {
            let (_, _, d) = frame.alpha_paths(tau)?;
            row.alpha_discrepancy = row.alpha_discrepancy.max(d);
        }
        let null = levi_null_basis(&frame, tol);
        row.null_dim = null.len();
        if !null.is_empty() {
            row.alpha_null = Some(alpha_norm_on(&frame, &null)?);
        }
        Ok(())
    })();
    if let Err(e) = result {
        row.error = Some(e.to_string());
    }
    row
}

/// Invariants at each boundary sample.
pub fn invariant_rows(oracle: &DomainOracle, samples: &[crate::sampling::BoundarySample], tol: Option<f64>) -> Vec<InvariantRow> {
    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| invariant_row(oracle, i, &s.point, s.feature, tol))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::distance_jet;
    use crate::domain::{build_domain, DomainSpec};

    fn pt(v: &[f64]) -> CPoint {
        CPoint::new(v.to_vec()).unwrap()
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn ball() -> DomainOracle {
        build_domain(&DomainSpec::Ball { radius: 1.0, dim: 2 }).unwrap()
    }

    #[test]
    fn ball_frame() {
        let f = build_frame(&ball(), &pt(&[1.0, 0.0, 0.0, 0.0])).unwrap();
        assert!((f.nu.0[0] - c(2.0, 0.0)).norm() < 1e-15);
        assert!(f.nu.0[1].norm() < 1e-15);
        assert!((f.partial_delta.0[0] - c(0.5, 0.0)).norm() < 1e-15);
        let m = f.levi.coeff();
        assert!((m[(0, 0)] - c(0.25, 0.0)).norm() < 1e-15);
        assert!((m[(1, 1)] - c(0.5, 0.0)).norm() < 1e-15);
        assert!(m[(0, 1)].norm() < 1e-15);
        assert!((f.levi_min.unwrap() - 1.0).abs() < 1e-14);
        let tau = TangentVector::new(vec![c(0.0, 0.0), c(1.0, 0.0)]);
        assert!((f.levi.quad(&tau) / tau.norm_sqr() - 1.0).abs() < 1e-14);
        assert!(alpha_eval(&f, &tau).unwrap().norm() < 1e-15);
        assert!((f.partial_delta.apply(&f.nu).unwrap() - c(1.0, 0.0)).norm() < 1e-14);
        assert!((f.nu.norm() - std::f64::consts::SQRT_2).abs() < 1e-14);
        assert!(levi_null_basis(&f, None).is_empty());
    }

    #[test]
    fn alpha_on_nu_is_half_levi() {
        let f = build_frame(&ball(), &pt(&[1.0, 0.0, 0.0, 0.0])).unwrap();
        let v = alpha_eval(&f, &f.nu.clone()).unwrap();
        let levi_nn = f.levi.action(&f.nu, &f.nu).unwrap();
        assert!((v - levi_nn * 0.5).norm() < 1e-14);
        assert!((v - c(0.5, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn plane_is_levi_flat() {
        let plane = build_domain(&DomainSpec::HalfSpace { dim: 2 }).unwrap();
        let f = build_frame(&plane, &pt(&[0.0, 0.3, -0.2, 0.1])).unwrap();
        assert_eq!(levi_null_basis(&f, None).len(), 1);
        assert!(beta_form(&f).coeff().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn worm_alpha_closed_form() {
        let worm = build_domain(&DomainSpec::Worm {
            beta: std::f64::consts::PI,
            cutoff: 100.0,
        })
        .unwrap();
        // on the annulus at w, |alpha(tau)|/|tau| = 1/(sqrt 2 |w|)
        let w = 0.8f64;
        let f = build_frame(&worm, &pt(&[0.0, 0.0, w, 0.0])).unwrap();
        let null = levi_null_basis(&f, None);
        assert_eq!(null.len(), 1);
        let a = alpha_norm_on(&f, &null).unwrap();
        assert!((a - 1.0 / (std::f64::consts::SQRT_2 * w)).abs() < 1e-12);
    }

    #[test]
    fn beta_psd_on_ball() {
        let f = build_frame(&ball(), &pt(&[0.6, 0.0, 0.0, 0.8])).unwrap();
        assert!(beta_tangential_min(&f).unwrap() >= -BETA_PSD_TOL);
        assert!(beta_eval(&f).is_ok());
    }

    #[test]
    fn complex_weinstock_order_two() {
        let e = build_domain(&DomainSpec::Ellipsoid { weights: vec![1.0, 4.0] }).unwrap();
        let p = crate::sampling::polish(&e, &pt(&[0.6, 0.1, 0.3, 0.2])).unwrap();
        let n = e.gradient(&p).unwrap().normalize();
        let d1 = weinstock_complex_defect(&distance_jet(&e, &p.offset(&n, -1e-2)).unwrap()).unwrap();
        let d2 = weinstock_complex_defect(&distance_jet(&e, &p.offset(&n, -5e-3)).unwrap()).unwrap();
        let ratio = d1 / d2;
        assert!((ratio - 4.0).abs() < 1.2, "ratio {ratio}");
    }
}
