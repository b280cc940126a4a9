mod common;

use common::{net_and_input, pert, NORMS};
use mondeq_core::ellipsoid::gram::pair_index;
use mondeq_core::ellipsoid::{
    assemble_gram, certify_via_ellipsoid, min_volume_ellipsoid, schur_lmi, EllipsoidSettings, MultiplierSet,
};
use mondeq_core::fixpoint::{EquilibriumSolver, FixedPointSettings};
use mondeq_core::norm::{lambda_max_sym, lambda_min_sym, sample_ball};
use mondeq_core::{MonDEQ, Norm, PerturbationSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_multipliers(net: &MonDEQ, q: Norm, slope: bool, rng: &mut ChaCha8Rng) -> MultiplierSet<f64> {
    let mut m = MultiplierSet::<f64>::zeros(net, q, slope).unwrap();
    for v in m.sigma_ball.iter_mut().chain(&mut m.sigma_affine).chain(&mut m.sigma_zpos).chain(&mut m.lambda) {
        *v = rng.gen_range(0.0..2.0);
    }
    for v in m.tau.iter_mut() {
        *v = rng.gen_range(-2.0..2.0);
    }
    m
}

/// Certificate polynomial evaluated term by term at an arbitrary point `(x, z)`.
fn certificate_polynomial(
    net: &MonDEQ,
    e: &PerturbationSpec,
    q: &DMatrix<f64>,
    b: &[f64],
    mult: &MultiplierSet<f64>,
    x: &[f64],
    z: &[f64],
) -> f64 {
    let xv = DVector::from_column_slice(x);
    let zv = DVector::from_column_slice(z);
    let out = q * (&net.c * &zv + &net.c_bias) + DVector::from_column_slice(b);
    let pre = &net.w * &zv + &net.u * &xv + &net.u_bias;
    let slack = &zv - &pre;

    let mut total = out.norm_squared() - 1.0;
    let eps2 = e.eps * e.eps;
    match e.q {
        Norm::Inf => {
            for (k, s) in mult.sigma_ball.iter().enumerate() {
                total += s * (eps2 - (x[k] - e.x0[k]).powi(2));
            }
        }
        _ => total += mult.sigma_ball[0] * (eps2 - Norm::L2.dist(x, &e.x0).powi(2)),
    }
    for i in 0..net.p() {
        total += mult.tau[i] * z[i] * slack[i];
        total += mult.sigma_affine[i] * slack[i];
        total += mult.sigma_zpos[i] * z[i];
    }
    for (l, &(i, j)) in pair_index(net.p()).iter().enumerate().take(mult.lambda.len()) {
        let dz = z[i] - z[j];
        total += 2.0 * mult.lambda[l] * ((pre[i] - pre[j]) * dz - dz * dz);
    }
    total
}

proptest! {
    #![proptest_config(common::cases(40))]

    #[test]
    fn gram_matrix_reproduces_the_certificate_polynomial(
        p0 in 1usize..5, p in 1usize..7, k in 1usize..4, seed in 0u64..10_000, slope in any::<bool>(),
    ) {
        let (net, x0) = net_and_input(p0, p, k, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for q in NORMS {
            let e = pert(&x0, rng.gen_range(0.01..1.0), q);
            let mult = random_multipliers(&net, q, slope, &mut rng);
            let qm = DMatrix::from_fn(k, k, |_, _| rng.gen_range(-2.0..2.0));
            let b: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m = assemble_gram(&net, &e, &qm, &b, &mult).unwrap();
            let mut worst = 0.0_f64;
            for _ in 0..25 {
                let x: Vec<f64> = (0..p0).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let z: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let mut basis = x.clone();
                basis.extend_from_slice(&z);
                basis.push(1.0);
                let v = DVector::from_vec(basis);
                let quad = (v.transpose() * &m * &v)[(0, 0)];
                let direct = certificate_polynomial(&net, &e, &qm, &b, &mult, &x, &z);
                worst = worst.max((quad - direct).abs());
            }
            prop_assert!(worst <= 1e-10, "q={q}: {worst}");
        }
    }

    #[test]
    fn schur_block_is_psd_exactly_when_gram_is_nsd(
        p0 in 1usize..4, p in 1usize..5, k in 1usize..4, seed in 0u64..10_000,
    ) {
        let (net, x0) = net_and_input(p0, p, k, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for q in NORMS {
            let e = pert(&x0, 0.2, q);
            let mult = random_multipliers(&net, q, true, &mut rng);
            let qm = DMatrix::from_fn(k, k, |_, _| rng.gen_range(-1.0..1.0));
            let b: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m = assemble_gram(&net, &e, &qm, &b, &mult).unwrap();
            let s = schur_lmi(&net, &e, &b, &mult, &qm).unwrap();
            // [v; -N v]ᵀ S [v; -N v] = -vᵀ M v
            let n = m.nrows();
            let nf = s.view((n, 0), (k, n)).clone_owned();
            let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let mut w = DVector::zeros(n + k);
            w.rows_mut(0, n).copy_from(&v);
            w.rows_mut(n, k).copy_from(&(-(&nf * &v)));
            let lhs = (w.transpose() * &s * &w)[(0, 0)];
            let rhs = -(v.transpose() * &m * &v)[(0, 0)];
            prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
            let gram_nsd = lambda_max_sym(&m).unwrap();
            let schur_psd = lambda_min_sym(&s).unwrap();
            if gram_nsd.abs() > 1e-8 && schur_psd.abs() > 1e-8 {
                prop_assert_eq!(gram_nsd < 0.0, schur_psd > 0.0);
            }
        }
    }

    #[test]
    fn fitted_ellipsoid_contains_sampled_outputs(
        p0 in 1usize..4, p in 1usize..6, k in 2usize..4, seed in 0u64..10_000, eps in 0.02f64..0.8,
    ) {
        let (net, x0) = net_and_input(p0, p, k, seed);
        let solver = EquilibriumSolver::new(&net, FixedPointSettings::default());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for q in NORMS {
            let e = pert(&x0, eps, q);
            let fit = min_volume_ellipsoid(&net, &e, &EllipsoidSettings::default()).unwrap();
            for _ in 0..1000 {
                let x = sample_ball(&mut rng, &x0, eps, q).unwrap();
                let y = solver.forward(&x).unwrap();
                let level = fit.ellipsoid.level(&y);
                prop_assert!(level <= 1.0 + 1e-6, "q={q}: level {level}");
            }
        }
    }
}

#[test]
fn solved_fit_reports_a_consistent_repair() {
    let (net, x0) = net_and_input(2, 4, 3, 5);
    for q in NORMS {
        let e = pert(&x0, 0.1, q);
        let fit = min_volume_ellipsoid(&net, &e, &EllipsoidSettings::default()).unwrap();
        assert!(fit.rescale <= 1.0 && fit.rescale > 0.0);
        assert!(fit.certificate_residual.is_finite());
        assert!(fit.ellipsoid.q.determinant() > 0.0);
    }
}

#[test]
fn flat_output_set_still_gets_a_bounded_ellipsoid() {
    // three outputs driven by two hidden units span a plane
    let (net, x0) = net_and_input(2, 2, 3, 3794);
    for q in NORMS {
        let e = pert(&x0, 0.05, q);
        let r = certify_via_ellipsoid(&net, &e, &EllipsoidSettings::default()).unwrap();
        let fit = r.fit.unwrap();
        assert!(fit.log_det.is_finite());
        assert!(fit.status.has_solution());
    }
}

#[test]
fn slope_restriction_never_loosens_the_fit() {
    let (net, x0) = net_and_input(2, 4, 2, 11);
    for q in NORMS {
        let e = pert(&x0, 0.3, q);
        let with = min_volume_ellipsoid(&net, &e, &EllipsoidSettings::default()).unwrap();
        let without =
            min_volume_ellipsoid(&net, &e, &EllipsoidSettings { slope_restriction: false, ..Default::default() })
                .unwrap();
        assert!(with.log_det >= without.log_det - 1e-4, "{} < {}", with.log_det, without.log_det);
    }
}
