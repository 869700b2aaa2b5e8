use nclab::basis::{BasisTruncation, HermiteBasis, OperatorMatrix, I};
use nclab::darboux::{darboux_factor, pfaffian4, sigma, M4};
use nclab::gauge::{monotone_until_saturation, CutoffProfile};
use nclab::kinematics::{dirac, hermitian_spectrum, landau_deviation, sort_by_modulus};
use nclab::moyal::{affine_left_mult_with, star, AffineSymbol, PolynomialFunction2D, StarConfig, StarOperand};
use nclab::{Check, ParameterSet, Report};
use num_complex::Complex64 as C64;
use proptest::prelude::*;

fn skew(v: [f64; 6]) -> M4 {
    let mut m = M4::zeros();
    let idx = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
    for (k, &(i, j)) in idx.iter().enumerate() {
        m[(i, j)] = v[k];
        m[(j, i)] = -v[k];
    }
    m
}

fn sector() -> impl Strategy<Value = ParameterSet> {
    (0.3f64..2.0, -1.5f64..1.5, 0.2f64..2.0)
        .prop_filter("nondegenerate", |(h, t, b)| (h - t * b).abs() > 0.05 * h && t.abs() > 1e-3)
        .prop_map(|(hbar0, theta0, b0)| ParameterSet { hbar0, theta0, b0, ..ParameterSet::canonical() })
}

fn poly() -> impl Strategy<Value = PolynomialFunction2D> {
    prop::collection::vec(((0usize..3, 0usize..3), -2.0f64..2.0, -2.0f64..2.0), 1..5).prop_map(|terms| {
        terms.into_iter().fold(PolynomialFunction2D::default(), |acc, ((a, b), re, im)| {
            acc.add(&PolynomialFunction2D::monomial(a, b, C64::new(re, im)))
        })
    })
}

fn series_star(a: &PolynomialFunction2D, b: &PolynomialFunction2D, cfg: &StarConfig) -> PolynomialFunction2D {
    match star(&StarOperand::Poly(a.clone()), &StarOperand::Poly(b.clone()), cfg).unwrap() {
        StarOperand::Poly(p) => p,
        _ => unreachable!(),
    }
}

fn max_coeff(p: &PolynomialFunction2D) -> f64 {
    p.coeffs.values().map(|v| v.norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pfaffian_squared_is_det(v in prop::array::uniform6(-3.0f64..3.0)) {
        let m = skew(v);
        let pf = pfaffian4(&m).unwrap();
        prop_assert!((pf * pf - m.determinant()).abs() <= 1e-10 * (1.0 + pf * pf));
    }

    #[test]
    fn darboux_residual_small(p in sector(), hbar_eff in 0.5f64..2.0) {
        let s = sigma(&p);
        let pf = pfaffian4(&s).unwrap();
        prop_assert!((pf + p.hbar0 * (p.hbar0 - p.theta0 * p.b0)).abs() <= 1e-12 * pf.abs());
        prop_assert!(darboux_factor(&s, hbar_eff).unwrap().residual < 1e-10);
    }

    #[test]
    fn darboux_scaling(p in sector(), c in 0.5f64..3.0) {
        let s = sigma(&p);
        let d = darboux_factor(&s, 1.0).unwrap();
        prop_assert!(nclab::darboux::residual(&(s * c), &d.s, c) < 1e-10 * c);
    }

    #[test]
    fn coordinate_commutator_rho_free(theta in -2.0f64..2.0, rho in 0.0f64..1.0) {
        let cfg = StarConfig::series(theta, rho);
        let (x, y) = (PolynomialFunction2D::x(), PolynomialFunction2D::y());
        let d = series_star(&x, &y, &cfg).sub(&series_star(&y, &x, &cfg)).sub(&PolynomialFunction2D::constant(I * theta));
        prop_assert!(max_coeff(&d) < 1e-15);
    }

    #[test]
    fn series_star_associative(a in poly(), b in poly(), c in poly(), rho in 0.0f64..1.0) {
        let cfg = StarConfig::series(0.7, rho);
        let l = series_star(&series_star(&a, &b, &cfg), &c, &cfg);
        let r = series_star(&a, &series_star(&b, &c, &cfg), &cfg);
        prop_assert!(max_coeff(&l.sub(&r)) < 1e-9 * (1.0 + max_coeff(&l)));
    }

    #[test]
    fn zero_theta_pointwise(a in poly(), b in poly(), rho in 0.0f64..1.0) {
        let cfg = StarConfig::series(0.0, rho);
        prop_assert!(max_coeff(&series_star(&a, &b, &cfg).sub(&a.mul(&b))) < 1e-12);
    }

    #[test]
    fn affine_ccr(theta in -2.0f64..2.0, rho in 0.0f64..1.0) {
        let basis = HermiteBasis::unit(8);
        let p = ParameterSet::canonical();
        let lx = affine_left_mult_with(AffineSymbol::X, theta, rho, &p, basis).unwrap();
        let ly = affine_left_mult_with(AffineSymbol::Y, theta, rho, &p, basis).unwrap();
        let target = OperatorMatrix::identity(basis, false).scale(I * theta);
        prop_assert!(lx.commutator(&ly).interior_residual(&target, 1) < 1e-10);
    }

    #[test]
    fn cutoff_is_a_plateau(radius in 0.5f64..6.0, x in -15.0f64..15.0, y in -15.0f64..15.0) {
        let u = CutoffProfile::new(radius).unwrap();
        let v = u.eval(x, y);
        let r = x.hypot(y);
        prop_assert!((0.0..=1.0).contains(&v));
        if r <= radius { prop_assert_eq!(v, 1.0); }
        if r >= 2.0 * radius { prop_assert_eq!(v, 0.0); }
        prop_assert!(u.eval(x * 0.9, y * 0.9) >= v);
    }

    #[test]
    fn modulus_order(mut v in prop::collection::vec(-10.0f64..10.0, 0..40)) {
        sort_by_modulus(&mut v);
        prop_assert!(v.windows(2).all(|w| w[0].abs() <= w[1].abs()));
    }

    #[test]
    fn non_increasing_is_monotone(mut v in prop::collection::vec(1e-16f64..1.0, 1..8), floor in 0.0f64..1e-12) {
        v.sort_by(|a, b| b.total_cmp(a));
        prop_assert!(monotone_until_saturation(&v, floor));
    }

    #[test]
    fn chunks_partition(n in 0usize..5000, chunk in 1usize..700) {
        let ch = nclab::par::chunks(n, chunk);
        let flat: Vec<usize> = ch.into_iter().flatten().collect();
        prop_assert_eq!(flat, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn par_map_preserves_order(n in 0usize..2000) {
        let v = nclab::par::map(n, |i| (i as f64).sqrt());
        prop_assert_eq!(v, (0..n).map(|i| (i as f64).sqrt()).collect::<Vec<_>>());
    }

    #[test]
    fn report_roundtrip(vals in prop::collection::vec(-1e6f64..1e6, 0..10), tol in 0.0f64..1.0) {
        let mut r = Report::new("prop");
        for (i, v) in vals.iter().enumerate() {
            r.put(format!("v{i}"), *v).check(Check::at_most(format!("c{i}"), v.abs(), tol));
        }
        let back: Report = serde_json::from_str(&r.to_json()).unwrap();
        prop_assert_eq!(back.to_json(), r.to_json());
        prop_assert_eq!(r.passed(), vals.iter().all(|v| v.abs() <= tol));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Every admissible presentation gives the Landau spectrum.
    #[test]
    fn landau_spectrum_any_presentation(r in -2.0f64..2.0, s in -2.0f64..2.0) {
        let p = ParameterSet::canonical().with_rs(r, s);
        prop_assume!(p.validate().is_ok());
        let eig = hermitian_spectrum(&dirac(&p, BasisTruncation::new(12)).unwrap());
        prop_assert!(landau_deviation(&eig, 7) < 1e-8);
    }
}
