use proptest::prelude::*;

use fairthresh::bias::apply_underestimate_b;
use fairthresh::policy::{evaluate, solve_fair, solve_mu, Criterion, FairnessSpec};
use fairthresh::population::{Normal, SyntheticParams};

fn params() -> impl Strategy<Value = SyntheticParams> {
    (
        0.2f64..0.9,
        0.3f64..0.9,
        0.1f64..0.6,
        60.0f64..80.0,
        40.0f64..55.0,
        6.0f64..14.0,
    )
        .prop_map(|(n_a, alpha_a, alpha_b, mu1, mu0, sd)| SyntheticParams {
            n_a,
            alpha_a,
            alpha_b,
            qualified_a: Normal::new(mu1, sd),
            unqualified_a: Normal::new(mu0, sd),
            qualified_b: Normal::new(mu1 - 2.0, sd),
            unqualified_b: Normal::new(mu0, sd),
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fair_policies_are_feasible_and_dominated_by_mu(p in params(), eps in prop_oneof![Just(0.0), 0.001f64..0.05]) {
        let pop = p.build(1.0, 10.0).unwrap();
        let u_mu = evaluate(&pop, solve_mu(&pop).theta).total_utility;
        for c in Criterion::MEASURES {
            let pair = solve_fair(&pop, FairnessSpec::new(c, eps)).unwrap();
            let e = evaluate(&pop, pair.theta);
            prop_assert!(e.gap(c) <= eps + 1e-9, "{} gap {}", c, e.gap(c));
            prop_assert!(e.total_utility <= u_mu + 1e-9);
        }
    }

    #[test]
    fn dp_and_tpr_stay_fair_on_the_truth_under_underestimation(p in params(), beta in 0.3f64..1.0) {
        // both measures only depend on densities the label flips preserve
        let pop = p.build(1.0, 10.0).unwrap();
        let biased = apply_underestimate_b(&pop, beta).unwrap().biased;
        for c in [Criterion::Dp, Criterion::Tpr] {
            let pair = solve_fair(&biased, FairnessSpec::new(c, 0.01)).unwrap();
            let truth = evaluate(&pop, pair.theta).gap(c);
            prop_assert!(truth <= 0.01 + 1e-9, "{} truth gap {}", c, truth);
        }
    }

    #[test]
    fn looser_constraints_never_lose_utility(p in params(), e1 in 0.0f64..0.05, e2 in 0.0f64..0.05) {
        let pop = p.build(1.0, 10.0).unwrap();
        let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
        for c in Criterion::MEASURES {
            let u = |e| evaluate(&pop, solve_fair(&pop, FairnessSpec::new(c, e)).unwrap().theta).total_utility;
            prop_assert!(u(hi) >= u(lo) - 1e-7, "{}: {} < {}", c, u(hi), u(lo));
        }
    }
}
