use gfspec::flow::FlowEngine;
use gfspec::lyapunov::lambda2_bound;
use gfspec::model::{GrowthSpec, ModelSpec, RelativeMeasure, WeightFunction};
use gfspec::pde::{build_discrete_operator, SizeGrid};
use gfspec::spectral::{lambda0_vs_bound, principal_eigen};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn flow_identity(c0 in 0.2f64..5.0, e in 0.0f64..1.0, x in 1e-2f64..10.0, t in 0.0f64..3.0) {
        let g = GrowthSpec::power(c0, e).unwrap();
        let eng = FlowEngine::new(&g, (1e-3, 1e4)).unwrap();
        let y = eng.flow_at(x, t).unwrap();
        let s = eng.s_of(x).unwrap();
        prop_assert!((eng.s_of(y).unwrap() - s - t).abs() <= 1e-10 * (1.0 + s.abs()));
        prop_assert!(y >= x);
        let back = eng.time_between(x, y).unwrap();
        prop_assert!((back - t).abs() <= 1e-9 * (1.0 + t));
    }

    #[test]
    fn operator_is_metzler(k in 0.1f64..3.0, gamma in 0.0f64..2.0, mitosis in any::<bool>()) {
        let p = if mitosis { RelativeMeasure::mitosis() } else { RelativeMeasure::uniform_binary() };
        let m = ModelSpec::relative(GrowthSpec::constant(1.0).unwrap(), p, move |x| k * x.powf(gamma), (1e-3, 8.0)).unwrap();
        let g = SizeGrid::uniform(8.0, 48).unwrap();
        let op = build_discrete_operator(&m, &g).unwrap();
        let d = op.to_dense();
        for (i, row) in d.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                prop_assert!(i == j || v >= 0.0);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    /// The Perron value of the discretized operator respects the drift bound
    /// with ψ′ = id for mass-conserving kernels.
    #[test]
    fn lambda0_below_lambda2(c0 in 0.5f64..2.0, k in 0.5f64..2.0, gamma in 0.5f64..2.0, mitosis in any::<bool>()) {
        let p = if mitosis { RelativeMeasure::mitosis() } else { RelativeMeasure::uniform_binary() };
        let m = ModelSpec::relative(GrowthSpec::constant(c0).unwrap(), p, move |x| k * x.powf(gamma), (1e-3, 16.0)).unwrap();
        let g = SizeGrid::uniform(16.0, 256).unwrap();
        let op = build_discrete_operator(&m, &g).unwrap();
        let id = WeightFunction::identity(&m.growth);
        let tri = principal_eigen(&op, &id).unwrap();
        let l2 = lambda2_bound(&m, &id).unwrap();
        prop_assert!(tri.lambda0 < 0.0);
        prop_assert!(lambda0_vs_bound(&tri, l2.lambda2, !l2.constant, 1e-6).is_ok(), "{} vs {}", tri.lambda0, l2.lambda2);
    }
}
