use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tomo_core::forward::dataset::equispaced_angles;
use tomo_core::forward::{quad_fourier_component, AxisSpec, QuadratureDataset, RadialProfile};
use rug::{Complex, Float};
use tomo_core::quadrature::GaussHermiteMp;
use tomo_core::specfun::mp;
use tomo_core::recon_quad::*;
use tomo_core::specfun;
use tomo_core::states::*;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn c_coefficient_examples() {
    assert_eq!(c_coefficient(0, 0, 0), 1.0);
    assert!((c_coefficient(1, 0, 0) + 2.0).abs() < 1e-14);
    assert!((c_coefficient(1, 1, 0) - 2.0).abs() < 1e-14);
    assert_eq!(c_coefficient(2, 3, 1), 0.0);
}

#[test]
fn c_coefficient_against_integrals() {
    // the integrands cancel to many digits, so the oracle runs in extended precision
    let prec = 192;
    let rule = GaussHermiteMp::new(200, prec);
    let mut acc = vec![vec![vec![Float::new(prec); 9]; 9]; 9];
    for (x, w) in rule.nodes.iter().zip(&rule.total_weights) {
        let y = mp::y_derivatives(24, x, prec);
        let h = mp::hermite_functions(16, x);
        for k in 0..=8usize {
            for l in 0..=8usize {
                for n in 0..=8usize {
                    let t = Float::with_val(prec, &y[k + 2 * l] * &h[n]) * &h[n + k] * w;
                    acc[k][l][n] += t;
                }
            }
        }
    }
    for k in 0..=8usize {
        for l in 0..=8usize {
            for n in 0..=8usize {
                let numeric = acc[k][l][n].to_f64();
                let closed = c_coefficient(l as u64, n as u64, k as u64);
                let scale = closed.abs().max(1.0);
                assert!((numeric - closed).abs() < 1e-9 * scale, "l={l} n={n} k={k}: {numeric} vs {closed}");
            }
        }
    }
}

#[test]
fn quad_moment_examples() {
    let vac = Arc::new(fock_state(3, 0).unwrap());
    let m = quad_moment(&RadialProfile::Quadrature { rho: vac.clone(), k: 0 }, 0).unwrap();
    assert!((m - c(1.0, 0.0)).norm() < 1e-14);
    let m = quad_moment(&RadialProfile::Quadrature { rho: vac, k: 3 }, 1).unwrap();
    assert_eq!(m, c(0.0, 0.0));
    let one = Arc::new(fock_state(4, 1).unwrap());
    let m = quad_moment(&RadialProfile::Quadrature { rho: one, k: 0 }, 1).unwrap();
    assert!((m - c(2.0, 0.0)).norm() < 1e-13, "{m}");
}

#[test]
fn quad_moment_rejects_uncovered_samples() {
    // a sampled profile that stops at x = 2 without decaying cannot feed the rule
    let grid: Vec<f64> = (0..100).map(|i| -2.0 + 4.0 * i as f64 / 99.0).collect();
    let vals = grid.iter().map(|&x| c(specfun::hermite_function(0, x).powi(2), 0.0)).collect();
    let p = tomo_core::forward::SampledProfile::new(0, grid, vals).unwrap();
    assert!(quad_moment(&RadialProfile::Sampled(p), 0).is_err());
}

fn moment_consistency(rho: DensityMatrix) {
    let d = rho.dim();
    let rho = Arc::new(rho);
    for k in 0..d {
        let profile = RadialProfile::Quadrature { rho: rho.clone(), k };
        // include orders past the last nonzero coefficient
        let lmax = d + 1 - k;
        let plan = MomentPlan::for_orders(k + 2 * lmax, 160);
        let table = MomentTable::compute(std::slice::from_ref(&profile), &[Some(lmax)], plan);
        for l in 0..=lmax {
            let numeric = table.get(0, l).unwrap();
            let analytic = analytic_moment(&rho, k, l);
            let scale = analytic.norm().max(1.0);
            assert!((numeric - analytic).norm() < 1e-8 * scale, "k={k} l={l}: {numeric} vs {analytic}");
        }
    }
}

#[test]
fn moments_match_finite_coefficient_sums() {
    moment_consistency(coherent_state_truncated(10, c(0.6, -0.4), 1e-9).unwrap());
    moment_consistency(random_state(6, &mut rng(3)).unwrap());
    moment_consistency(fock_state(5, 4).unwrap());
}

fn round_trip(rho: DensityMatrix, tol: f64) {
    let rho = Arc::new(rho);
    let r = reconstruct_from_state(&rho, rho.dim()).unwrap();
    let err = r.max_abs_deviation(rho.matrix());
    assert!(err < tol, "error {err:e}");
    assert!(r.flags.is_empty(), "{:?}", r.flags);
    assert!(r.max_residual() < tol);
}

#[test]
fn full_round_trip_fock() {
    for n in 0..=5 {
        round_trip(fock_state(8, n).unwrap(), 1e-8);
    }
}

#[test]
fn full_round_trip_coherent_and_thermal() {
    round_trip(coherent_state_truncated(12, c(0.8, 0.0), 1e-9).unwrap(), 1e-8);
    round_trip(coherent_state(20, c(1.0, 1.0)).unwrap(), 1e-8);
    round_trip(thermal_klambda_state_truncated(30, 0.6, 1e-6).unwrap(), 1e-8);
}

#[test]
fn full_reconstruction_of_zero_provider_is_flagged_invalid() {
    let r = reconstruct_full(|k| Ok(RadialProfile::Zero { k }), 3).unwrap();
    assert_eq!(r.matrix.matrix(), &DMatrix::from_element(3, 3, c(0.0, 0.0)));
    assert!(!r.validation.passes());
    assert!(!r.to_json().validation_problems.is_empty());
}

#[test]
fn provider_failures_are_flagged_not_fatal() {
    let rho = Arc::new(random_state(4, &mut rng(9)).unwrap());
    let r = reconstruct_full(
        |k| {
            if k == 2 {
                Err(tomo_core::Error::Domain("no data".into()))
            } else {
                Ok(RadialProfile::Quadrature { rho: rho.clone(), k })
            }
        },
        4,
    )
    .unwrap();
    assert!(r.is_flagged(2, 0) && r.is_flagged(0, 2) && r.is_flagged(3, 1));
    assert!(!r.is_flagged(1, 0));
    assert!((r.matrix.get(1, 0) - rho.get(1, 0)).norm() < 1e-8);
    assert!(r.flags.iter().all(|f| !f.reason.is_empty()));
}

#[test]
fn reconstruction_is_independent_of_thread_count() {
    let rho = Arc::new(random_state(5, &mut rng(11)).unwrap());
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| reconstruct_from_state(&rho, 5).unwrap().matrix)
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn finite_angle_component_examples() {
    let vac = Arc::new(fock_state(2, 0).unwrap());
    let ds = QuadratureDataset::from_state(vac.clone(), vec![0.0]).unwrap();
    for x in [-1.0, 0.2, 2.5] {
        let v = finite_angle_component(&ds, 0, x).unwrap();
        assert!((v.re - ds.density(0, x).unwrap()).abs() < 1e-15);
        for p in 1..6 {
            let ds = QuadratureDataset::equispaced(vac.clone(), p).unwrap();
            let v = finite_angle_component(&ds, 0, x).unwrap();
            assert!((v.re - specfun::hermite_function(0, x).powi(2)).abs() < 1e-14);
        }
    }
    let rho = Arc::new(coherent_state_truncated(4, c(0.3, 0.2), 1e-3).unwrap());
    let ds4 = QuadratureDataset::equispaced(rho.clone(), 4).unwrap();
    let ds7 = QuadratureDataset::equispaced(rho.clone(), 7).unwrap();
    for x in [-1.5, 0.0, 0.7] {
        let a = finite_angle_component(&ds4, 0, x).unwrap();
        assert!((a - quad_fourier_component(&rho, 0, x)).norm() < 1e-10);
        // with p >= 2 dim - 1 no other component aliases onto k
        for k in 0..4 {
            let b = finite_angle_component(&ds7, k, x).unwrap();
            assert!((b - quad_fourier_component(&rho, k, x)).norm() < 1e-10);
        }
    }
}

#[test]
fn finite_angle_component_needs_the_equispaced_grid() {
    let rho = Arc::new(fock_state(2, 0).unwrap());
    let ds = QuadratureDataset::from_state(rho, vec![0.0, 1.0, 2.0]).unwrap();
    assert!(finite_angle_component(&ds, 0, 0.0).is_err());
    assert!(reconstruct_finite(Arc::new(ds)).is_err());
}

#[test]
fn finite_reconstruction_p1_vacuum() {
    let ds = QuadratureDataset::equispaced(Arc::new(fock_state(1, 0).unwrap()), 1).unwrap();
    let r = reconstruct_finite(Arc::new(ds)).unwrap();
    assert_eq!(r.dim(), 1);
    assert!((r.matrix.get(0, 0) - c(1.0, 0.0)).norm() < 1e-14);
    assert!(r.assumptions.iter().any(|a| a == FINITE_ASSUMPTION));
}

#[test]
fn finite_reconstruction_round_trip_odd_p() {
    let mut g = rng(21);
    for p in [3, 5] {
        let rho = Arc::new(random_state(p, &mut g).unwrap());
        let ds = QuadratureDataset::equispaced(rho.clone(), p).unwrap();
        let r = reconstruct_finite(Arc::new(ds)).unwrap();
        assert!(r.max_abs_deviation(rho.matrix()) < 1e-8);
        assert!(r.flags.is_empty());
        // same as the full formula on the p x p block
        let full = reconstruct_from_state(&rho, p).unwrap();
        assert!(r.max_abs_deviation(full.matrix.matrix()) < 1e-10);
    }
}

#[test]
fn finite_reconstruction_even_p_recovers_diagonal_and_flags_the_rest() {
    let mut g = rng(22);
    for p in [2, 4] {
        let rho = Arc::new(random_state(p, &mut g).unwrap());
        let ds = QuadratureDataset::equispaced(rho.clone(), p).unwrap();
        let r = reconstruct_finite(Arc::new(ds)).unwrap();
        for n in 0..p {
            assert!((r.matrix.get(n, n) - rho.get(n, n)).norm() < 1e-8);
            assert!(!r.is_flagged(n, n));
        }
        assert!(r.is_flagged(1, 0));
    }
}

#[test]
fn finite_reconstruction_aliasing_is_visible() {
    let rho = random_state(6, &mut rng(5)).unwrap();
    let ds = QuadratureDataset::equispaced(Arc::new(rho.clone()), 3).unwrap();
    let r = reconstruct_finite(Arc::new(ds)).unwrap();
    let truncated = truncate_normalize(&rho, 3).unwrap();
    assert!(r.max_abs_deviation(truncated.matrix()) > 1e-2);
    assert!(r.assumptions.iter().any(|a| a == FINITE_ASSUMPTION));
}

#[test]
fn finite_reconstruction_from_samples_downgrades_tolerance() {
    let rho = random_state(3, &mut rng(8)).unwrap();
    let axis = AxisSpec { start: -9.0, end: 9.0, n: 901 };
    let ds = QuadratureDataset::sample(&rho, equispaced_angles(3), &axis).unwrap();
    let r = reconstruct_finite(Arc::new(ds)).unwrap();
    assert_eq!(r.advertised_tolerance, SAMPLED_TOLERANCE);
    assert!(r.max_abs_deviation(rho.matrix()) < SAMPLED_TOLERANCE);
}

#[test]
fn binomial_inverse_of_delta() {
    let mut y = vec![c(0.0, 0.0); 7];
    y[0] = c(1.0, 0.0);
    assert!(binomial_invert(&y).iter().all(|v| *v == c(1.0, 0.0)));
}

#[test]
fn formal_inverse_pathology() {
    let demo = formal_inverse_demo();
    assert_eq!(demo.formal_inverse_defect, 0.0);
    let a = &demo.cases[0];
    assert!(!a.converged);
    assert_eq!(a.oscillation, 2.0);
    assert_eq!(&a.partial_sums[..4], &[2.0, 0.0, 2.0, 0.0]);
    assert_eq!(a.verdict, "divergent");
    let b = &demo.cases[1];
    assert!(b.converged);
    assert!(b.inverse.iter().all(|v| *v == 0.0));
    assert_eq!(b.mismatch, 1.0);
    let cc = &demo.cases[2];
    assert!(cc.converged && cc.mismatch < 1e-12);
    assert_eq!(cc.verdict, "recovered");
}

fn seq() -> impl Strategy<Value = Vec<C64>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0).prop_map(|(a, b)| c(a, b)), 10)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn binomial_pair_round_trip(x in seq()) {
        let xm: Vec<Complex> = x.iter().map(|v| Complex::with_val(256, (v.re, v.im))).collect();
        let back = binomial_invert_mp(&binomial_invert_mp(&xm));
        for (b, v) in back.iter().zip(&x) {
            prop_assert!((C64::new(b.real().to_f64(), b.imag().to_f64()) - v).norm() < 1e-12);
        }
        // in double precision the rounding of y is amplified by at most 3^n
        let y = binomial_forward(&x);
        let again = binomial_invert(&y);
        for (n, (a, v)) in again.iter().zip(&x).enumerate() {
            prop_assert!((a - v).norm() <= 3f64.powi(n as i32) * 4.0 * f64::EPSILON);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn full_round_trip_random_states(seed in any::<u64>(), d in 1usize..=8) {
        let rho = Arc::new(random_state(d, &mut rng(seed)).unwrap());
        let r = reconstruct_from_state(&rho, d).unwrap();
        prop_assert!(r.max_abs_deviation(rho.matrix()) < 1e-8);
    }

    #[test]
    fn full_round_trip_coherent(r in 0.0f64..1.5, phi in 0.0f64..6.28) {
        let rho = Arc::new(coherent_state(22, C64::from_polar(r, phi)).unwrap());
        let r = reconstruct_from_state(&rho, 22).unwrap();
        prop_assert!(r.max_abs_deviation(rho.matrix()) < 1e-8);
    }
}
