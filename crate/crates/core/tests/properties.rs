//! Randomized invariants.

mod common;

use common::instance;
use nalgebra::DMatrix;
use proptest::prelude::*;
use treemax::gradient::{frobenius_envelope, tree_gradient};
use treemax::mdp::random_mdp;
use treemax::spectral::analyze_matrix;
use treemax::{
    analyze_spectrum, exact_pg_variance, grad_norm_bounds, induce_chain, power_remainder,
    solve_value, stationary_distribution, theorem1_bound, RewardMode, TreePolicyConfig, Variant,
};

fn variant_strategy() -> impl Strategy<Value = Variant> {
    prop_oneof![Just(Variant::Cumulative), Just(Variant::Exponentiated)]
}

/// Cyclic relabeling `i -> (i + shift) mod n`.
fn rotation(n: usize, shift: usize) -> Vec<usize> {
    (0..n).map(|i| (i + shift) % n).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn induced_rows_are_stochastic(seed in 0u64..10_000, s in 1usize..7, a in 1usize..4) {
        let (mdp, policy) = random_mdp(s, a, RewardMode::StateAction, 0.9, seed).unwrap();
        let chain = induce_chain(&mdp, &policy).unwrap();
        for row in chain.transition().row_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn value_is_bellman_fixed_point(seed in 0u64..10_000, s in 1usize..7, gamma in 0.05f64..0.99) {
        let (mdp, policy) = random_mdp(s, 2, RewardMode::StateAction, 0.9, seed).unwrap();
        let mdp = mdp.with_discount(gamma).unwrap();
        let v = solve_value(&mdp, &policy).unwrap();
        let chain = induce_chain(&mdp, &policy).unwrap();
        let residual = chain.reward() + chain.transition() * &v * gamma - &v;
        prop_assert!(residual.amax() < 1e-10);
    }

    #[test]
    fn stationary_law_matches_power_iteration(seed in 0u64..10_000, s in 2usize..7) {
        let (mdp, policy) = random_mdp(s, 2, RewardMode::StateAction, 0.9, seed).unwrap();
        let chain = induce_chain(&mdp, &policy).unwrap();
        let mu = stationary_distribution(&chain).unwrap();
        let p = chain.transition();
        prop_assert!((p.transpose() * &mu - &mu).amax() < 1e-10);
        let mut x = DMatrix::from_element(1, s, 1.0 / s as f64);
        for _ in 0..10_000 {
            x = &x * p;
        }
        prop_assert!((x.transpose() - &mu).amax() < 1e-8);
    }

    #[test]
    fn spectrum_is_relabel_invariant(seed in 0u64..10_000, s in 2usize..7, shift in 1usize..6) {
        let (mdp, policy) = random_mdp(s, 2, RewardMode::StateAction, 0.9, seed).unwrap();
        let p = induce_chain(&mdp, &policy).unwrap().transition().clone();
        let perm = rotation(s, shift % s);
        let q = DMatrix::from_fn(s, s, |i, j| p[(perm[i], perm[j])]);
        let a = analyze_matrix(&p).unwrap();
        let b = analyze_matrix(&q).unwrap();
        for (x, y) in a.eigenvalue_moduli.iter().zip(&b.eigenvalue_moduli) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn power_remainder_decays_geometrically(seed in 0u64..10_000, s in 2usize..6) {
        let (mdp, policy) = random_mdp(s, 2, RewardMode::StateAction, 0.9, seed).unwrap();
        let chain = induce_chain(&mdp, &policy).unwrap();
        let lambda2 = analyze_spectrum(&chain).unwrap().lambda2_modulus;
        let r: Vec<f64> = (10..=20).map(|d| power_remainder(&chain, d).unwrap()).collect();
        // Complex pairs make single steps oscillate, so the rate is averaged
        // over the window, cut where the remainder reaches rounding noise.
        let last = r.iter().rposition(|&x| x > 1e-12).unwrap_or(0);
        if last >= 5 {
            let rate = (r[last] / r[0]).powf(1.0 / last as f64);
            prop_assert!(rate <= lambda2 + 0.05, "rate {} vs {}", rate, lambda2);
        }
    }

    #[test]
    fn policies_live_on_the_simplex(
        seed in 0u64..10_000, s in 1usize..6, a in 1usize..4, d in 0usize..7,
        beta in 0.01f64..20.0, variant in variant_strategy(),
    ) {
        let (mdp, config) = instance(seed, s, a, d, beta, variant);
        for root in 0..s {
            let p = treemax::policy::tree_policy(&mdp, &config, root).unwrap().probs;
            prop_assert!((p.sum() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn score_identity(
        seed in 0u64..10_000, s in 1usize..6, a in 1usize..4, d in 0usize..7,
        beta in 0.01f64..5.0, variant in variant_strategy(),
    ) {
        let (mdp, config) = instance(seed, s, a, d, beta, variant);
        for root in 0..s {
            let p = treemax::policy::tree_policy(&mdp, &config, root).unwrap().probs;
            let g = tree_gradient(&mdp, &config, root).unwrap();
            prop_assert!((p.transpose() * &g.values).amax() < 1e-10);
            if variant == Variant::Cumulative {
                for row in g.values.row_iter() {
                    prop_assert!(row.sum().abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn variance_is_relabel_invariant(
        seed in 0u64..10_000, s in 2usize..6, d in 0usize..5,
        shift in 1usize..5, variant in variant_strategy(),
    ) {
        let (mdp, config) = instance(seed, s, 2, d, 1.0, variant);
        let perm = rotation(s, shift % s);
        let v = exact_pg_variance(&mdp, &config).unwrap().exact_variance;
        let w = exact_pg_variance(&mdp.permute_states(&perm).unwrap(), &config.permute_states(&perm))
            .unwrap()
            .exact_variance;
        prop_assert!(v >= 0.0);
        prop_assert!((v - w).abs() <= 1e-10 * v.max(1e-3), "{} vs {}", v, w);
    }

    #[test]
    fn gradient_norm_sandwich(seed in 0u64..10_000, s in 2usize..6, a in 2usize..4, beta in 0.1f64..3.0) {
        let (mdp, base) = instance(seed, s, a, 1, beta, Variant::Cumulative);
        let lambda2 = analyze_spectrum(&induce_chain(&mdp, &base.behavior).unwrap()).unwrap().lambda2_modulus;
        for d in 1..=8 {
            let config = base.with_depth(d);
            for root in 0..s {
                let b = grad_norm_bounds(&mdp, &config, root).unwrap();
                let slack = 1e-10 * b.upper.max(1.0);
                prop_assert!(b.lower <= b.frobenius + slack, "{:?}", b);
                prop_assert!(b.frobenius <= b.upper + slack, "{:?}", b);
                let env = frobenius_envelope(a, s, beta, 0.9, d, lambda2);
                prop_assert!(b.frobenius <= env + slack);
            }
        }
    }

    #[test]
    fn variance_bounds_dominate(
        seed in 0u64..10_000, s in 2usize..6, a in 2usize..4, beta in 0.1f64..3.0,
        variant in variant_strategy(),
    ) {
        let (mdp, base) = instance(seed, s, a, 0, beta, variant);
        for d in 0..=6 {
            let config: TreePolicyConfig = base.with_depth(d);
            let r = exact_pg_variance(&mdp, &config).unwrap();
            prop_assert!(r.exact_variance <= r.lemma1_bound + 1e-9);
            if variant == Variant::Cumulative {
                let bound = theorem1_bound(&mdp, &config).unwrap();
                prop_assert!(r.exact_variance <= bound + 1e-9);
            }
        }
    }
}
