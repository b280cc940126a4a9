mod common;

use common::{net_and_input, pert, NORMS};
use mondeq_core::ellipsoid::build_ellipsoid_program;
use mondeq_core::lipschitz::{build_lipmon, InputBall};
use mondeq_core::robustness::build_certmon;
use mondeq_core::sdpcore::{model_sizes, shor_relax, Cone, ModelKind};
use mondeq_core::Norm;
use proptest::prelude::*;

proptest! {
    #![proptest_config(common::cases(40))]

    #[test]
    fn built_models_match_closed_form_sizes(
        p0 in 1usize..8, p in 1usize..10, k in 2usize..6, seed in 0u64..1000,
    ) {
        let (net, x0) = net_and_input(p0, p, k, seed);
        for q in NORMS {
            let e = pert(&x0, 0.1, q);
            let rob = model_sizes(ModelKind::Robustness, p0, p, k);
            let spec = build_certmon(&net, &e, 0, 1).unwrap();
            prop_assert_eq!(spec.n_vars(), rob.n_vars);
            prop_assert_eq!(shor_relax(&spec).unwrap().layout.side, rob.psd_side);

            let lip = model_sizes(ModelKind::Lipschitz, p0, p, k);
            let spec = build_lipmon(&net, &InputBall::new(x0.clone(), 1.0, q).unwrap(), q).unwrap();
            prop_assert_eq!(spec.n_vars(), lip.n_vars);
            prop_assert_eq!(shor_relax(&spec).unwrap().layout.side, lip.psd_side);

            let ell = model_sizes(ModelKind::Ellipsoid, p0, p, k);
            let prog = build_ellipsoid_program(&net, &e, true, None, None).unwrap();
            prop_assert_eq!(prog.layout.gram_side, ell.psd_side);
            prop_assert_eq!(&prog.problem.cones[0], &Cone::Psd(ell.psd_side + k));
            if q == Norm::Inf {
                prop_assert_eq!(prog.layout.certificate_unknowns(), ell.n_vars);
            }
        }
    }
}
