mod common;

use common::net_and_input;
use mondeq_core::fixpoint::{EquilibriumSolver, FixedPointSettings, Scheme};
use nalgebra::DVector;
use proptest::prelude::*;

proptest! {
    #![proptest_config(common::cases(48))]

    #[test]
    fn converged_solves_meet_the_residual_tolerance(
        p0 in 1usize..5, p in 1usize..10, k in 1usize..4, seed in 0u64..10_000,
    ) {
        let (net, x0) = net_and_input(p0, p, k, seed);
        let solver = EquilibriumSolver::new(&net, FixedPointSettings::default());
        let eq = solver.solve(&x0).unwrap();
        prop_assert!(eq.converged);
        prop_assert!(eq.residual <= 1e-10, "residual {}", eq.residual);
    }

    #[test]
    fn equilibrium_does_not_depend_on_the_start(
        p0 in 1usize..5, p in 1usize..10, seed in 0u64..10_000, shift in -5.0f64..5.0,
    ) {
        let (net, x0) = net_and_input(p0, p, 2, seed);
        let init: Vec<f64> = (0..p).map(|i| shift * (i as f64 + 1.0).sin()).collect();
        for scheme in [Scheme::Auto, Scheme::ForwardBackward(None)] {
            let solver = EquilibriumSolver::new(&net, FixedPointSettings { scheme, ..Default::default() });
            let a = solver.solve(&x0).unwrap();
            let b = solver.solve_from(&x0, Some(&init)).unwrap();
            prop_assert!(a.converged && b.converged);
            let d = (DVector::from_vec(a.z) - DVector::from_vec(b.z)).amax();
            prop_assert!(d <= 1e-9, "start dependence {d}");
        }
    }

    #[test]
    fn implicit_jacobian_matches_central_differences(
        p0 in 1usize..5, p in 1usize..9, k in 1usize..4, seed in 0u64..10_000,
    ) {
        let (net, x0) = net_and_input(p0, p, k, seed);
        let solver = EquilibriumSolver::new(&net, FixedPointSettings::default());
        let z = DVector::from_vec(solver.solve(&x0).unwrap().z);
        let pre = net.preactivation(&z, &DVector::from_column_slice(&x0));
        let kink = pre.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
        prop_assume!(kink > 1e-4);

        let jac = solver.jacobian(&x0).unwrap();
        let h = 1e-7;
        let mut worst = 0.0_f64;
        for col in 0..p0 {
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp[col] += h;
            xm[col] -= h;
            let fp = solver.forward(&xp).unwrap();
            let fm = solver.forward(&xm).unwrap();
            for row in 0..k {
                let fd = (fp[row] - fm[row]) / (2.0 * h);
                let scale = jac[(row, col)].abs().max(1.0);
                worst = worst.max((fd - jac[(row, col)]).abs() / scale);
            }
        }
        prop_assert!(worst <= 1e-5, "relative error {worst}");
    }

    #[test]
    fn vjp_agrees_with_jacobian(p0 in 1usize..5, p in 1usize..9, seed in 0u64..10_000) {
        let (net, x0) = net_and_input(p0, p, 3, seed);
        let solver = EquilibriumSolver::new(&net, FixedPointSettings::default());
        let a = [0.5, -1.0, 2.0];
        let (_, g) = solver.vjp(&x0, &a).unwrap();
        let expect = solver.jacobian(&x0).unwrap().transpose() * DVector::from_column_slice(&a);
        for (u, v) in g.iter().zip(expect.iter()) {
            prop_assert!((u - v).abs() <= 1e-9 * v.abs().max(1.0));
        }
    }
}
