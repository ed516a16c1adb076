//! Signed distance, nearest-point projection and the distance Hessian.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::domain::{DomainOracle, RealJet};
use crate::error::{Error, Result};
use crate::hermitian::CPoint;

pub const PROJECTION_TOL: f64 = 1e-12;
pub const PROJECTION_MAX_ITER: usize = 100;
/// Accept `z` only if `|delta| * ||Hess delta(xi)||_2` stays below this.
pub const FOCAL_MARGIN: f64 = 0.9;

#[derive(Clone, Debug, Serialize)]
pub struct ProjectionResult {
    pub xi: CPoint,
    pub delta_signed: f64,
    /// Unit outward normal at `xi`, equal to `grad delta~(z)`.
    pub normal: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
}

fn spectral_norm(h: &DMatrix<f64>) -> f64 {
    h.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0, |m, v| m.max(v.abs()))
}

fn kkt_residual(oracle: &DomainOracle, z: &DVector<f64>, y: &DVector<f64>, mu: f64) -> Result<(DVector<f64>, f64)> {
    let yp = CPoint::from_vector_unchecked(y.clone());
    let g = oracle.gradient(&yp)?;
    let r = oracle.rho(&yp)?;
    let mut f = DVector::zeros(y.len() + 1);
    f.rows_mut(0, y.len()).copy_from(&(y - z + &g * mu));
    f[y.len()] = r / g.norm().max(f64::MIN_POSITIVE);
    Ok((f, r))
}

/// KKT point of `min |z - y|^2` subject to `rho(y) = 0` by damped Newton
/// iterations, without the focal-distance check.
pub fn project_unchecked(oracle: &DomainOracle, z: &CPoint) -> Result<ProjectionResult> {
    let g0 = oracle.gradient(z)?;
    let r0 = oracle.rho(z)?;
    let gn2 = g0.norm_squared();
    if gn2 <= 1e-24 * (1.0 + r0.abs()) {
        return Err(Error::CollarViolation(
            "gradient of rho vanishes at z; the nearest boundary point is not unique".into(),
        ));
    }
    let zv = z.real().clone();
    let m = zv.len();
    let mut y = &zv - &g0 * (r0 / gn2);
    let mut mu = r0 / gn2;
    let (mut f, _) = kkt_residual(oracle, &zv, &y, mu)?;
    let mut norm = f.amax();
    let mut iterations = 0;
    let mut polished = false;
    while iterations < PROJECTION_MAX_ITER {
        let scale = 1.0 + zv.amax();
        if norm <= PROJECTION_TOL * scale {
            if polished {
                break;
            }
            polished = true;
        }
        iterations += 1;
        let yp = CPoint::from_vector_unchecked(y.clone());
        let g = oracle.gradient(&yp)?;
        let h = oracle.hessian(&yp)?;
        let gn = g.norm().max(f64::MIN_POSITIVE);
        let mut jac = DMatrix::zeros(m + 1, m + 1);
        let top = DMatrix::identity(m, m) + &h * mu;
        jac.view_mut((0, 0), (m, m)).copy_from(&top);
        for i in 0..m {
            jac[(i, m)] = g[i];
            jac[(m, i)] = g[i] / gn;
        }
        let Some(step) = jac.lu().solve(&(-&f)) else {
            return Err(Error::NonConvergence {
                iterations,
                residual: norm,
            });
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let yn = &y + step.rows(0, m) * t;
            let mun = mu + step[m] * t;
            if let Ok((fnew, _)) = kkt_residual(oracle, &zv, &yn, mun) {
                let nn = fnew.amax();
                if nn < norm || (polished && nn <= norm) || nn <= PROJECTION_TOL * scale * 1e-3 {
                    y = yn;
                    mu = mun;
                    f = fnew;
                    norm = nn;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            if polished || norm <= PROJECTION_TOL * scale {
                break;
            }
            return Err(Error::NonConvergence {
                iterations,
                residual: norm,
            });
        }
    }
    let scale = 1.0 + zv.amax();
    if norm > PROJECTION_TOL * scale {
        return Err(Error::NonConvergence {
            iterations,
            residual: norm,
        });
    }
    let xi = CPoint::from_vector_unchecked(y);
    let g = oracle.gradient(&xi)?;
    let n = g.norm();
    if n == 0.0 {
        return Err(Error::VanishingGradient);
    }
    let normal = g / n;
    let delta = (&zv - xi.real()).dot(&normal);
    Ok(ProjectionResult {
        xi,
        delta_signed: delta,
        normal,
        converged: true,
        iterations,
        residual: norm,
    })
}

/// Nearest boundary point, rejecting points beyond the focal margin.
pub fn project_to_boundary(oracle: &DomainOracle, z: &CPoint) -> Result<ProjectionResult> {
    let proj = project_unchecked(oracle, z)?;
    let hxi = boundary_distance_hessian(oracle, &proj.xi)?;
    let k = proj.delta_signed.abs() * spectral_norm(&hxi);
    if k >= FOCAL_MARGIN {
        return Err(Error::CollarViolation(format!(
            "|delta| * ||Hess delta(xi)|| = {k:.3} exceeds the focal margin {FOCAL_MARGIN}"
        )));
    }
    Ok(proj)
}

pub fn signed_distance(oracle: &DomainOracle, z: &CPoint) -> Result<f64> {
    Ok(project_unchecked(oracle, z)?.delta_signed)
}

/// `Hess delta~` at a boundary point: `P (Hess rho) P / |grad rho|` with
/// `P = I - n n^T`.
pub fn boundary_distance_hessian(oracle: &DomainOracle, xi: &CPoint) -> Result<DMatrix<f64>> {
    let g = oracle.gradient(xi)?;
    let gn = g.norm();
    if gn <= 1e-14 {
        return Err(Error::VanishingGradient);
    }
    let n = &g / gn;
    let m = g.len();
    let p = DMatrix::identity(m, m) - &n * n.transpose();
    let h = oracle.hessian(xi)?;
    let out = &p * h * &p / gn;
    Ok((&out + out.transpose()) * 0.5)
}

/// Everything known about `delta~` at a collar point.
#[derive(Clone, Debug, Serialize)]
pub struct DistanceJet {
    pub projection: ProjectionResult,
    pub hessian_xi: DMatrix<f64>,
    /// `Hess delta~(z)` by Weinstock's formula.
    pub hessian: DMatrix<f64>,
    /// 2-norm condition number of `I + delta~ Hess delta~(xi)`.
    pub condition: f64,
}

impl DistanceJet {
    pub fn delta(&self) -> f64 {
        self.projection.delta_signed
    }

    pub fn real_jet(&self) -> RealJet {
        RealJet {
            value: self.projection.delta_signed,
            gradient: self.projection.normal.clone(),
            hessian: self.hessian.clone(),
        }
    }
}

pub fn distance_jet(oracle: &DomainOracle, z: &CPoint) -> Result<DistanceJet> {
    let projection = project_to_boundary(oracle, z)?;
    let hxi = boundary_distance_hessian(oracle, &projection.xi)?;
    let m = hxi.nrows();
    let a = DMatrix::identity(m, m) + &hxi * projection.delta_signed;
    let sv = a.clone().singular_values();
    let smin = sv.min();
    let condition = if smin > 0.0 { sv.max() / smin } else { f64::INFINITY };
    if !condition.is_finite() || condition > 1e8 {
        return Err(Error::FocalPoint { condition });
    }
    let Some(inv) = a.try_inverse() else {
        return Err(Error::FocalPoint { condition });
    };
    let h = inv * &hxi;
    let hessian = (&h + h.transpose()) * 0.5;
    Ok(DistanceJet {
        projection,
        hessian_xi: hxi,
        hessian,
        condition,
    })
}

/// `Hess delta~(z) = (I + delta~ H_xi)^{-1} H_xi`.
pub fn weinstock_hessian(oracle: &DomainOracle, z: &CPoint) -> Result<DMatrix<f64>> {
    Ok(distance_jet(oracle, z)?.hessian)
}

/// Finite-difference step for the Hessian of `delta~` at depth `delta`.
pub fn fd_step(delta: f64) -> f64 {
    (delta.abs() / 20.0).max(1e-4)
}

/// Central second differences of the signed distance.
pub fn fd_distance_hessian(oracle: &DomainOracle, z: &CPoint, h: f64) -> Result<DMatrix<f64>> {
    crate::numdiff::hessian(|p| signed_distance(oracle, p), z, h)
}

/// Frobenius norm of `Hess delta~(z) - H_xi + delta~ H_xi^2`, with
/// `Hess delta~(z)` taken from finite differences of the signed distance.
pub fn weinstock_residual(oracle: &DomainOracle, z: &CPoint) -> Result<f64> {
    let proj = project_to_boundary(oracle, z)?;
    let d = proj.delta_signed;
    let hxi = boundary_distance_hessian(oracle, &proj.xi)?;
    let h = fd_step(d);
    if d.abs() > 0.0 && h >= 0.5 * d.abs() && d.abs() < 2e-4 {
        return Err(Error::FiniteDifference(format!(
            "depth {d:e} is comparable to the step {h:e}"
        )));
    }
    let hz = fd_distance_hessian(oracle, z, h)?;
    Ok((hz - &hxi + &hxi * &hxi * d).norm())
}

/// Same residual with the Weinstock Hessian in place of finite differences.
pub fn weinstock_residual_exact(oracle: &DomainOracle, z: &CPoint) -> Result<f64> {
    let jet = distance_jet(oracle, z)?;
    let d = jet.delta();
    let hxi = &jet.hessian_xi;
    Ok((&jet.hessian - hxi + hxi * hxi * d).norm())
}

/// Max entry of `D xi - (I - delta~ Hess delta~ - n n^T)` with `D xi` from
/// central differences of the projection.
pub fn projection_jacobian_defect(oracle: &DomainOracle, z: &CPoint) -> Result<f64> {
    let jet = distance_jet(oracle, z)?;
    let h = 1e-6 * (1.0 + z.norm());
    let fd = crate::numdiff::jacobian(
        |p| Ok(project_unchecked(oracle, p)?.xi.real().clone()),
        z,
        h,
    )?;
    let m = fd.nrows();
    let n = &jet.projection.normal;
    let expected = DMatrix::identity(m, m) - &jet.hessian * jet.delta() - n * n.transpose();
    Ok((fd - expected).amax())
}

/// Comparison factor `h = rho / delta~`, positive on a collar.
pub fn comparison_factor(oracle: &DomainOracle, z: &CPoint) -> Result<f64> {
    let d = signed_distance(oracle, z)?;
    if d == 0.0 {
        return Ok(oracle.gradient(z)?.norm());
    }
    Ok(oracle.rho(z)? / d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_domain, DomainSpec};

    fn pt(v: &[f64]) -> CPoint {
        CPoint::new(v.to_vec()).unwrap()
    }

    fn ball() -> DomainOracle {
        build_domain(&DomainSpec::Ball { radius: 1.0, dim: 2 }).unwrap()
    }

    #[test]
    fn ball_projection() {
        let p = project_to_boundary(&ball(), &pt(&[0.5, 0.0, 0.0, 0.0])).unwrap();
        assert!((p.xi.real() - DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0])).amax() < 1e-12);
        assert!((p.delta_signed + 0.5).abs() < 1e-12);
        assert!((p.normal[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ball_center_is_rejected() {
        let err = project_to_boundary(&ball(), &CPoint::origin(2)).unwrap_err();
        assert!(matches!(err, Error::CollarViolation(_)));
    }

    #[test]
    fn exterior_point_positive() {
        let p = project_to_boundary(&ball(), &pt(&[0.0, 0.0, 0.0, 1.2])).unwrap();
        assert!((p.delta_signed - 0.2).abs() < 1e-12);
    }

    #[test]
    fn ellipsoid_axis_projection() {
        let e = build_domain(&DomainSpec::Ellipsoid { weights: vec![1.0, 4.0] }).unwrap();
        let p = project_to_boundary(&e, &pt(&[0.0, 0.0, 0.49, 0.0])).unwrap();
        assert!((p.xi.real() - DVector::from_vec(vec![0.0, 0.0, 0.5, 0.0])).amax() < 1e-12);
        assert!((p.delta_signed + 0.01).abs() < 1e-12);
    }

    #[test]
    fn sphere_boundary_hessian() {
        let h = boundary_distance_hessian(&ball(), &pt(&[1.0, 0.0, 0.0, 0.0])).unwrap();
        let mut expected = DMatrix::identity(4, 4);
        expected[(0, 0)] = 0.0;
        assert!((h - expected).amax() < 1e-15);
    }

    #[test]
    fn plane_is_flat() {
        let plane = build_domain(&DomainSpec::HalfSpace { dim: 2 }).unwrap();
        let z = pt(&[-0.3, 0.2, 0.1, -0.4]);
        assert_eq!(weinstock_hessian(&plane, &z).unwrap(), DMatrix::zeros(4, 4));
        assert!(weinstock_residual(&plane, &z).unwrap() < 1e-6);
    }

    #[test]
    fn ball_weinstock_closed_form() {
        for r in [0.5, 0.99] {
            let h = weinstock_hessian(&ball(), &pt(&[0.0, r, 0.0, 0.0])).unwrap();
            let mut e: Vec<f64> = h.symmetric_eigen().eigenvalues.iter().cloned().collect();
            e.sort_by(f64::total_cmp);
            assert!(e[0].abs() < 1e-12);
            for v in &e[1..] {
                assert!((v - 1.0 / r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weinstock_matches_fd() {
        let e = build_domain(&DomainSpec::Ellipsoid { weights: vec![1.0, 4.0] }).unwrap();
        let far = project_to_boundary(&e, &pt(&[0.3, 0.2, 0.25, -0.2])).unwrap();
        let z = far.xi.offset(&far.normal, -0.01);
        let proj = project_to_boundary(&e, &z).unwrap();
        let hw = weinstock_hessian(&e, &z).unwrap();
        let hf = fd_distance_hessian(&e, &z, fd_step(proj.delta_signed)).unwrap();
        let diff = (hw - hf).amax();
        assert!(diff < 1e-6, "delta {} diff {diff:e}", proj.delta_signed);
    }

    #[test]
    fn projection_jacobian() {
        let e = build_domain(&DomainSpec::Ellipsoid { weights: vec![1.0, 4.0] }).unwrap();
        let z = pt(&[0.5, 0.3, 0.1, -0.1]);
        assert!(projection_jacobian_defect(&e, &z).unwrap() < 1e-4);
    }

    #[test]
    fn comparison_factor_ball() {
        // (|z|^2 - 1)/(|z| - 1) = |z| + 1
        let h = comparison_factor(&ball(), &pt(&[0.0, 0.0, 0.9, 0.0])).unwrap();
        assert!((h - 1.9).abs() < 1e-12);
    }
}
