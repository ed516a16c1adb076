use std::time::Instant;

use dfindex_core::cr::build_frame;
use dfindex_core::distance::{
    distance_jet, project_to_boundary, projection_jacobian_defect, signed_distance, weinstock_residual,
};
use dfindex_core::domain::build_domain;
use dfindex_core::estimator::comparison_profile;
use dfindex_core::sampling::{boundary_points, collar_points};
use dfindex_core::{DomainOracle, DomainSpec};

fn catalog() -> Vec<DomainOracle> {
    [
        DomainSpec::Ball { radius: 1.0, dim: 2 },
        DomainSpec::Ellipsoid { weights: vec![1.0, 4.0] },
        DomainSpec::Hartogs { exponent: 2 },
        DomainSpec::Worm {
            beta: std::f64::consts::PI,
            cutoff: 100.0,
        },
        DomainSpec::HalfSpace { dim: 2 },
    ]
    .iter()
    .map(|s| build_domain(s).unwrap())
    .collect()
}

/// Median over boundary points of residual(d) / residual(d / 2).
fn halving_ratios(o: &DomainOracle) -> Vec<f64> {
    let pts = boundary_points(o, 12, 5, false).unwrap();
    let levels = [1e-2, 5e-3, 2.5e-3];
    let mut per_level: Vec<Vec<f64>> = vec![Vec::new(); levels.len()];
    for p in &pts {
        let g = o.gradient(p).unwrap();
        let n = g.norm();
        for (k, d) in levels.iter().enumerate() {
            per_level[k].push(weinstock_residual(o, &p.offset(&g, -d / n)).unwrap());
        }
    }
    let mut ratios = Vec::new();
    for k in 0..levels.len() - 1 {
        let mut r: Vec<f64> = per_level[k].iter().zip(&per_level[k + 1]).map(|(a, b)| a / b).collect();
        r.sort_by(f64::total_cmp);
        ratios.push(r[r.len() / 2]);
    }
    ratios
}

#[test]
fn weinstock_residual_is_second_order() {
    let start = Instant::now();
    for spec in [DomainSpec::Ball { radius: 1.0, dim: 2 }, DomainSpec::Ellipsoid { weights: vec![1.0, 4.0] }] {
        let o = build_domain(&spec).unwrap();
        for r in halving_ratios(&o) {
            assert!((r - 4.0).abs() <= 1.2, "{}: ratio {r}", o.name());
        }
    }
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn sphere_closed_forms() {
    let start = Instant::now();
    let o = build_domain(&DomainSpec::Ball { radius: 1.0, dim: 2 }).unwrap();
    let bnd = boundary_points(&o, 34, 11, false).unwrap();
    let collar = collar_points(&o, &bnd, &[1e-1, 1e-2, 1e-3]).unwrap();
    assert!(collar.len() >= 100);
    for c in &collar {
        let z = &c.point;
        let r = z.norm();
        assert!((signed_distance(&o, z).unwrap() - (r - 1.0)).abs() < 1e-8);
        let proj = project_to_boundary(&o, z).unwrap();
        assert!((proj.xi.real() - z.real() / r).amax() < 1e-8);
        let jet = distance_jet(&o, z).unwrap();
        let mut ev: Vec<f64> = jet.hessian.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert!(ev[0].abs() < 1e-8);
        for e in &ev[1..] {
            assert!((e - 1.0 / r).abs() < 1e-8, "{e} vs {}", 1.0 / r);
        }
    }
    for p in &bnd {
        let f = build_frame(&o, p).unwrap();
        for j in 0..2 {
            assert!((f.nu.0[j] - p.z(j) * 2.0).norm() < 1e-8);
        }
        assert!((f.partial_delta.apply(&f.nu).unwrap() - 1.0).norm() < 1e-8);
        assert!((f.nu.norm() - std::f64::consts::SQRT_2).abs() < 1e-8);
        for e in &f.levi_eigenvalues {
            assert!((e - 1.0).abs() < 1e-8);
        }
        for tau in &f.tangent_basis {
            assert!(f.alpha_levi(tau).unwrap().norm() < 1e-8);
            assert!(f.alpha_direct(tau).unwrap().norm() < 1e-8);
        }
    }
    assert!(start.elapsed().as_secs_f64() < 2.0);
}

#[test]
fn hessian_annihilates_normal_on_catalog() {
    for o in catalog() {
        let bnd = boundary_points(&o, 100, 21, true).unwrap();
        let collar = collar_points(&o, &bnd, &[1e-3]).unwrap();
        let mut worst: f64 = 0.0;
        for c in &collar {
            let jet = distance_jet(&o, &c.point).unwrap();
            worst = worst.max((&jet.hessian * &jet.projection.normal).norm());
        }
        assert!(worst <= 1e-6, "{}: {worst:e}", o.name());
    }
}

#[test]
fn projection_jacobian_matches_differences() {
    for o in catalog() {
        let bnd = boundary_points(&o, 6, 2, false).unwrap();
        for c in collar_points(&o, &bnd, &[5e-3]).unwrap() {
            let d = projection_jacobian_defect(&o, &c.point).unwrap();
            assert!(d < 1e-5, "{}: {d:e}", o.name());
        }
    }
}

#[test]
fn comparison_factor_is_positive_and_settles() {
    let levels = [1e-3, 1e-4, 1e-5];
    for o in catalog() {
        let bnd = boundary_points(&o, 40, 4, true).unwrap();
        let prof = comparison_profile(&o, &bnd, &levels).unwrap();
        for (lo, _) in &prof {
            assert!(*lo > 0.0, "{}", o.name());
        }
        // consecutive levels move less and less
        let steps: Vec<f64> = prof.windows(2).map(|w| (w[0].0 - w[1].0).abs() + (w[0].1 - w[1].1).abs()).collect();
        assert!(steps[1] <= steps[0] + 1e-12, "{}: {steps:?}", o.name());
    }
}

#[test]
fn tangent_basis_is_complex_tangential() {
    for o in catalog() {
        for p in boundary_points(&o, 20, 8, true).unwrap() {
            let f = build_frame(&o, &p).unwrap();
            for tau in &f.tangent_basis {
                assert!(f.partial_delta.apply(tau).unwrap().norm() < 1e-12);
                assert!((tau.norm() - 1.0).abs() < 1e-12);
            }
        }
    }
}
