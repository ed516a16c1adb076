use dfindex_core::cr::{beta_tangential_min, build_frame, constant_a, constant_a_refined, invariant_rows, ALPHA_CROSS_TOL, BETA_PSD_TOL};
use dfindex_core::domain::build_domain;
use dfindex_core::sampling::{boundary_points, boundary_samples};
use dfindex_core::{DomainOracle, DomainSpec, TangentVector};
use num_complex::Complex64 as C64;

const WORM_BETA: f64 = std::f64::consts::PI;

fn worm() -> DomainOracle {
    build_domain(&DomainSpec::Worm {
        beta: WORM_BETA,
        cutoff: 100.0,
    })
    .unwrap()
}

fn convex_catalog() -> Vec<DomainOracle> {
    [
        DomainSpec::Ball { radius: 1.0, dim: 2 },
        DomainSpec::Ball { radius: 2.0, dim: 3 },
        DomainSpec::Ellipsoid { weights: vec![1.0, 4.0] },
        DomainSpec::Hartogs { exponent: 2 },
    ]
    .iter()
    .map(|s| build_domain(s).unwrap())
    .collect()
}

/// Sup of `|alpha| / |tau|` over the Levi-null direction `d/dw` on the
/// annulus `z = 0, |log|w|^2| <= beta - pi/2`.
fn worm_a_closed_form(beta: f64) -> f64 {
    ((beta - std::f64::consts::FRAC_PI_2) / 2.0).exp() / std::f64::consts::SQRT_2
}

#[test]
fn alpha_paths_agree_on_500_frames() {
    let mut all = convex_catalog();
    all.push(worm());
    for o in all {
        let pts = boundary_points(&o, 500, 3, true).unwrap();
        let mut worst: f64 = 0.0;
        for p in &pts {
            let f = build_frame(&o, p).unwrap();
            for tau in f.tangent_basis.iter().chain(std::iter::once(&f.nu)) {
                worst = worst.max(f.alpha_paths(tau).unwrap().2);
            }
        }
        assert!(worst <= ALPHA_CROSS_TOL, "{}: {worst:e}", o.name());
    }
}

#[test]
fn alpha_on_nu_is_half_levi_of_nu() {
    for o in convex_catalog() {
        for p in boundary_points(&o, 50, 9, false).unwrap() {
            let f = build_frame(&o, &p).unwrap();
            let lhs = f.alpha_levi(&f.nu).unwrap();
            let rhs = f.levi.action(&f.nu, &f.nu).unwrap() * 0.5;
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }
}

#[test]
fn beta_is_tangentially_psd_on_500_frames() {
    let mut all = convex_catalog();
    all.push(worm());
    for o in all {
        for p in boundary_points(&o, 500, 4, true).unwrap() {
            let f = build_frame(&o, &p).unwrap();
            let m = beta_tangential_min(&f).unwrap();
            assert!(m >= -BETA_PSD_TOL, "{} at {:?}: {m:e}", o.name(), p.real().as_slice());
        }
    }
}

#[test]
fn strongly_pseudoconvex_domains_have_zero_a() {
    for spec in [DomainSpec::Ball { radius: 1.0, dim: 2 }, DomainSpec::Ellipsoid { weights: vec![1.0, 4.0] }] {
        let o = build_domain(&spec).unwrap();
        let pts = boundary_points(&o, 300, 1, true).unwrap();
        let a = constant_a(&o, &pts, None).unwrap();
        assert_eq!(a.value, 0.0);
        assert_eq!(a.null_points, 0);
        assert!(a.witness.is_none());
    }
}

#[test]
fn hartogs_null_directions_carry_no_alpha() {
    let o = build_domain(&DomainSpec::Hartogs { exponent: 2 }).unwrap();
    let pts = boundary_points(&o, 300, 2, true).unwrap();
    let a = constant_a(&o, &pts, None).unwrap();
    assert!(a.null_points > 0);
    assert!(a.value < 1e-6, "{}", a.value);
}

#[test]
fn worm_a_matches_annulus_closed_form() {
    let o = worm();
    let exact = worm_a_closed_form(WORM_BETA);
    let refined = constant_a_refined(&o, 400, 11, None).unwrap();
    assert!(refined.relative_change <= 0.05, "{}", refined.relative_change);
    let a = refined.fine.value;
    assert!(a <= exact * (1.0 + 1e-6), "{a} vs {exact}");
    assert!(a >= exact * 0.97, "{a} vs {exact}");
    let w = refined.fine.witness.unwrap();
    assert!(w.z(0).norm() < 1e-6);
}

#[test]
fn worm_alpha_on_annulus_is_explicit() {
    let o = worm();
    for &(r, th) in &[(1.0, 0.0), (0.7, 1.0), (1.3, -2.0)] {
        let w = C64::from_polar(r, th);
        let p = dfindex_core::CPoint::from_complex(&[C64::new(0.0, 0.0), w]);
        let f = build_frame(&o, &p).unwrap();
        let tau = TangentVector::new(vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)]);
        assert!(f.levi.quad(&tau).abs() < 1e-10);
        let v = f.alpha_levi(&tau).unwrap();
        let expect = C64::i() / (w * 2.0);
        assert!((v - expect).norm() < 1e-9, "{v} vs {expect}");
    }
}

#[test]
fn invariant_rows_are_clean() {
    let o = worm();
    let samples = boundary_samples(&o, 200, 5, true).unwrap();
    let rows = invariant_rows(&o, &samples, None);
    assert_eq!(rows.len(), samples.len());
    assert!(rows.iter().all(|r| r.error.is_none()));
    assert!(rows.iter().any(|r| r.feature && r.null_dim == 1));
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.index, i);
    }
}
