//! Cross-module invariants on random S-arithmetic lattices.

use num_rational::BigRational;
use num_traits::{One, Zero};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sadic::dioph::{w_search, wp_search, Estimate, WSearchConfig};
use sadic::flows::FlowTime;
use sadic::geometry::{moment_curve, Ball};
use sadic::lattice::{
    apply_flow, covolume, delta_brute_force, delta_search, minkowski_search, DeltaBudget,
    LatticeDescription, PrimitiveModule,
};
use sadic::{content, PExact, PadicPoint, Prime};

fn lattice(p: u32, t: Vec<u32>, seed: u64, digits: u32) -> LatticeDescription {
    let p = Prime::new(p).unwrap();
    let n = t.len() - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = PadicPoint::haar(p, n, digits, &mut rng);
    LatticeDescription::new(y, FlowTime::new(t).unwrap()).unwrap()
}

fn arb_time() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0u32..3, 2..=3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // g_t u_y is unimodular over Q_S, so the full lattice has covolume 1
    #[test]
    fn full_lattice_is_unimodular(p in prop::sample::select(vec![2u32, 3, 5]), t in arb_time(), seed in 0u64..1000) {
        let l = lattice(p, t, seed, 24);
        let cov = covolume(&l, &PrimitiveModule::full(l.prime(), l.rank())).unwrap();
        prop_assert!(cov.certified());
        prop_assert_eq!(cov.value_sq(l.prime()), BigRational::one());
    }

    // δ is a minimum over the lattice, Minkowski gives one point of it
    #[test]
    fn delta_below_minkowski_below_one(p in prop::sample::select(vec![2u32, 3]), t in arb_time(), seed in 0u64..1000) {
        let l = lattice(p, t, seed, 24);
        let pr = l.prime();
        let cert = delta_search(&l, &DeltaBudget::default(), None).unwrap();
        prop_assert!(cert.is_exact(pr));
        let d = cert.upper(pr).unwrap();
        let mp = minkowski_search(&l, &PrimitiveModule::full(pr, l.rank())).unwrap();
        prop_assert!(d <= mp.content.upper(pr));
        prop_assert!(mp.content.upper(pr) <= BigRational::one());
        // the certificate's minimizer realizes δ
        let q = cert.minimizer.clone().unwrap();
        prop_assert_eq!(content(&apply_flow(&l, &q).unwrap()).unwrap().value(pr), d);
    }

    #[test]
    fn delta_matches_brute_force_on_tiny_lattices(t in prop::collection::vec(0u32..2, 2..=3), seed in 0u64..1000) {
        let l = lattice(2, t, seed, 16);
        let cert = delta_search(&l, &DeltaBudget::default(), None).unwrap();
        prop_assert_eq!(cert.upper(l.prime()), delta_brute_force(&l).unwrap());
    }

    // ball samples stay inside the ball and the curve maps them into Z_p^n
    #[test]
    fn curve_samples_are_integral(seed in 0u64..1000, r in 0u32..3) {
        let p = Prime::new(3).unwrap();
        let center = PadicPoint::exact(p, vec![PExact::from_int(p, 4)]).unwrap();
        let ball = Ball::new(center, r).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = ball.sample(20, &mut rng).unwrap();
        let ints: Vec<_> = x.coords().iter().map(|c| c.mantissa().clone()).collect();
        prop_assert!(ball.contains(&ints));
        let y = moment_curve(p, 3).unwrap().eval_point(&x).unwrap();
        prop_assert_eq!(y.denominator_exp(), 0);
        // inexact images are reduced mod p^N
        let pn = p.pow(20);
        let sq = x.coords()[0].mantissa() * x.coords()[0].mantissa();
        prop_assert!((y.coords()[1].mantissa() - sq) % &pn == 0.into());
    }
}

#[test]
fn exponent_relation_on_a_rational_point() {
    // y = -1 has the exact witness (1, 1): both exponents are infinite
    let p = Prime::new(3).unwrap();
    let y = PadicPoint::exact(p, vec![PExact::from_int(p, -1)]).unwrap();
    let cfg = WSearchConfig::new(1000.into());
    assert_eq!(w_search(&y, &cfg).unwrap().estimate, Estimate::Infinite);
    assert_eq!(wp_search(&y, &cfg).unwrap().estimate, Estimate::Infinite);
}

#[test]
fn haar_points_have_w_near_dirichlet() {
    // Dirichlet gives w(y) >= n + 1 with equality almost everywhere
    let p = Prime::new(2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..5 {
        let y = PadicPoint::haar(p, 1, 200, &mut rng);
        let e = w_search(&y, &WSearchConfig::new(num_traits::pow(2.into(), 40))).unwrap();
        let v = e.estimate.value().cloned().unwrap_or_else(BigRational::zero);
        let r = |a: i64, b: i64| BigRational::new(a.into(), b.into());
        assert!(v >= r(19, 10) && v <= r(5, 2), "w = {v}");
    }
}
