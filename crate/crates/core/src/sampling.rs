//! Boundary and collar sampling.
//!
//! Boundary points come from bisecting the sign change of `rho` between an
//! interior anchor and an exterior point of the sampling box, followed by a
//! short Newton polish along the gradient. Exterior points follow a shifted
//! Halton sequence so the box is covered evenly; the anchor is the nearest
//! member of a pool of interior points, which keeps segments short on
//! non-convex domains.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::domain::DomainOracle;
use crate::error::{Error, Result};
use crate::hermitian::CPoint;
use crate::quadrature::halton;

/// Default boundary sample count.
pub const DEFAULT_SAMPLES: usize = 2000;

/// Collar depths, as fractions of the diameter.
pub const DEFAULT_COLLAR_LEVELS: [f64; 3] = [1e-2, 1e-3, 1e-4];

/// Accepted `|rho|` at a boundary point, relative to `|grad rho|`.
pub const BOUNDARY_TOL: f64 = 1e-12;

const POOL_SIZE: usize = 64;

#[derive(Clone, Debug, Serialize)]
pub struct BoundarySample {
    pub point: CPoint,
    /// Drawn from a Levi-degenerate locus of the catalog entry.
    pub feature: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CollarSample {
    pub point: CPoint,
    /// Index into the boundary sample list.
    pub base: usize,
    /// Requested depth `d`; the point is `p - d n(p)`.
    pub depth: f64,
}

/// Newton steps along the gradient until `|rho| / |grad rho| <= BOUNDARY_TOL`.
pub fn polish(oracle: &DomainOracle, p: &CPoint) -> Result<CPoint> {
    let mut y = p.clone();
    for _ in 0..8 {
        let r = oracle.rho(&y)?;
        let g = oracle.gradient(&y)?;
        let gn2 = g.norm_squared();
        if gn2 == 0.0 {
            return Err(Error::VanishingGradient);
        }
        if r.abs() <= 1e-3 * BOUNDARY_TOL * gn2.sqrt() {
            return Ok(y);
        }
        y = y.offset(&g, -r / gn2);
    }
    let r = oracle.rho(&y)?;
    let gn = oracle.gradient(&y)?.norm();
    if r.abs() > BOUNDARY_TOL * gn.max(1.0) {
        return Err(Error::OffBoundary { rho: r });
    }
    Ok(y)
}

fn bisect(oracle: &DomainOracle, inside: &CPoint, outside: &CPoint) -> Result<CPoint> {
    let (mut a, mut b) = (inside.real().clone(), outside.real().clone());
    for _ in 0..60 {
        let mid = (&a + &b) * 0.5;
        let r = oracle.rho(&CPoint::from_vector_unchecked(mid.clone()))?;
        if r < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(CPoint::from_vector_unchecked((a + b) * 0.5))
}

fn box_point(bounds: &[(f64, f64)], u: &[f64]) -> CPoint {
    CPoint::from_vector_unchecked(DVector::from_fn(bounds.len(), |i, _| {
        bounds[i].0 + (bounds[i].1 - bounds[i].0) * u[i]
    }))
}

/// `count` boundary samples; with `features`, a quarter of them (at least
/// one when available) lie on the catalog's Levi-degenerate loci.
pub fn boundary_samples(
    oracle: &DomainOracle,
    count: usize,
    seed: u64,
    features: bool,
) -> Result<Vec<BoundarySample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    if features && count > 0 {
        let want = (count / 4).max(1);
        for p in oracle.feature_points(want, &mut rng) {
            if let Ok(q) = polish(oracle, &p) {
                out.push(BoundarySample {
                    point: q,
                    feature: true,
                });
            }
        }
    }
    let bounds = oracle.sampling_box();
    let dim = bounds.len();
    if dim > 16 {
        return Err(Error::InvalidParameter(
            "boundary sampling supports at most 8 complex dimensions".into(),
        ));
    }
    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    let mut pool = vec![oracle.interior_point()];
    let mut index = 0u64;
    let max_draws = 1000 * count.max(1) as u64 + 10_000;
    while out.len() < count {
        if index >= max_draws {
            return Err(Error::OracleFailure(format!(
                "boundary sampling found only {} of {count} points",
                out.len()
            )));
        }
        let u: Vec<f64> = halton(index, dim)
            .iter()
            .zip(&shift)
            .map(|(h, s)| (h + s).fract())
            .collect();
        index += 1;
        let q = box_point(&bounds, &u);
        let r = match oracle.rho(&q) {
            Ok(r) => r,
            Err(_) => continue,
        };
        if r < 0.0 {
            if pool.len() < POOL_SIZE {
                pool.push(q);
            }
            continue;
        }
        let anchor = pool
            .iter()
            .min_by(|a, b| a.distance(&q).total_cmp(&b.distance(&q)))
            .expect("pool is never empty");
        let Ok(p) = bisect(oracle, anchor, &q) else {
            continue;
        };
        if let Ok(p) = polish(oracle, &p) {
            out.push(BoundarySample {
                point: p,
                feature: false,
            });
        }
    }
    Ok(out)
}

pub fn boundary_points(
    oracle: &DomainOracle,
    count: usize,
    seed: u64,
    features: bool,
) -> Result<Vec<CPoint>> {
    Ok(boundary_samples(oracle, count, seed, features)?
        .into_iter()
        .map(|s| s.point)
        .collect())
}

/// Interior points `p - d n(p)` for each boundary point and each depth
/// `d = level * diameter`.
pub fn collar_points(
    oracle: &DomainOracle,
    boundary: &[CPoint],
    levels: &[f64],
) -> Result<Vec<CollarSample>> {
    let diam = oracle.diameter();
    let mut out = Vec::with_capacity(boundary.len() * levels.len());
    for (i, p) in boundary.iter().enumerate() {
        let g = oracle.gradient(p)?;
        let n = g.norm();
        if n == 0.0 {
            return Err(Error::VanishingGradient);
        }
        for &level in levels {
            let d = level * diam;
            out.push(CollarSample {
                point: p.offset(&g, -d / n),
                base: i,
                depth: d,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_domain, DomainSpec};

    #[test]
    fn ball_samples_lie_on_sphere() {
        let ball = build_domain(&DomainSpec::Ball { radius: 1.0, dim: 2 }).unwrap();
        let pts = boundary_points(&ball, 200, 1, false).unwrap();
        assert_eq!(pts.len(), 200);
        for p in &pts {
            assert!((p.norm() - 1.0).abs() < 1e-12);
        }
        // coverage: every coordinate half-space is hit
        for i in 0..4 {
            assert!(pts.iter().any(|p| p.real()[i] > 0.5));
            assert!(pts.iter().any(|p| p.real()[i] < -0.5));
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let e = build_domain(&DomainSpec::Ellipsoid { weights: vec![1.0, 4.0] }).unwrap();
        let a = boundary_points(&e, 50, 9, false).unwrap();
        let b = boundary_points(&e, 50, 9, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn worm_features_on_annulus() {
        let worm = build_domain(&DomainSpec::Worm {
            beta: std::f64::consts::PI,
            cutoff: 100.0,
        })
        .unwrap();
        let s = boundary_samples(&worm, 40, 3, true).unwrap();
        let feats: Vec<_> = s.iter().filter(|s| s.feature).collect();
        assert_eq!(feats.len(), 10);
        for f in feats {
            assert!(f.point.z(0).norm() < 1e-12);
        }
        for b in &s {
            assert!(worm.rho(&b.point).unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn collar_depths() {
        let ball = build_domain(&DomainSpec::Ball { radius: 1.0, dim: 1 }).unwrap();
        let p = vec![CPoint::new(vec![0.0, 1.0]).unwrap()];
        let c = collar_points(&ball, &p, &[1e-2]).unwrap();
        assert!((c[0].point.norm() - 0.98).abs() < 1e-14);
    }
}
