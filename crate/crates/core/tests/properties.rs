use fl_tradeoff::attack::{privacy_leakage_empirical, AttackTrace};
use fl_tradeoff::bayesian_privacy::corpus::random_world;
use fl_tradeoff::bayesian_privacy::{
    bound_lemma_check, marginal_belief, verify_tradeoff, LemmaKind, ProtectionPair, TradeoffKind,
};
use fl_tradeoff::distributions::{am_gm_ratios, js_alpha, log_ratio_bound, root_e};
use fl_tradeoff::harness::output::format_g;
use fl_tradeoff::numerics::{norm, project_inside_ball, project_outside_ball};
use fl_tradeoff::seed::rng;
use fl_tradeoff::{Dataset, DiscreteDist};
use proptest::prelude::*;

fn dist(n: usize) -> impl Strategy<Value = DiscreteDist> {
    prop::collection::vec(1e-3f64..1.0, n).prop_map(move |w| {
        let s: f64 = w.iter().sum();
        DiscreteDist::new((0..n).map(|i| format!("a{i}")).collect(), w.iter().map(|v| v / s).collect()).unwrap()
    })
}

fn triple() -> impl Strategy<Value = (DiscreteDist, DiscreteDist, DiscreteDist)> {
    (2usize..=6).prop_flat_map(|n| (dist(n), dist(n), dist(n)))
}

fn alpha() -> impl Strategy<Value = f64> {
    prop::sample::select(vec![0.1, 0.25, 0.5, 0.75, 0.9])
}

fn pair_on(n: usize) -> impl Strategy<Value = ProtectionPair> {
    (dist(n), dist(n)).prop_map(move |(a, b)| {
        let atoms: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        ProtectionPair::new(
            DiscreteDist::new(atoms.clone(), a.probs().to_vec()).unwrap(),
            DiscreteDist::new(atoms, b.probs().to_vec()).unwrap(),
        )
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn root_e_js_triangle((p, q, r) in triple(), a in alpha()) {
        let d = |x: &DiscreteDist, y: &DiscreteDist| root_e(js_alpha(x, y, a).unwrap()).unwrap();
        prop_assert!(d(&p, &r) <= d(&p, &q) + d(&q, &r) + 1e-9);
    }

    #[test]
    fn sqrt_js_triangle((p, q, r) in triple()) {
        let d = |x: &DiscreteDist, y: &DiscreteDist| js_alpha(x, y, 0.5).unwrap().sqrt();
        prop_assert!(d(&p, &r) <= d(&p, &q) + d(&q, &r) + 1e-9);
    }

    #[test]
    fn am_gm_ratio_ordering((p, q, _) in triple()) {
        for (lo, hi) in am_gm_ratios(&p, &q).unwrap() {
            prop_assert!(lo <= hi + 1e-9);
        }
    }

    #[test]
    fn log_ratio_is_dominated(a in 1e-6f64..1e3, b in 1e-6f64..1e3) {
        let (lhs, rhs) = log_ratio_bound(a, b).unwrap();
        prop_assert!(lhs <= rhs + 1e-9);
    }

    #[test]
    fn marginal_is_a_convex_combination(seed in 0u64..10_000, nd in 2usize..=4, nw in 2usize..=5) {
        let mut r = rng(seed);
        let world = random_world(&mut r, nd, nw);
        let w = DiscreteDist::uniform(world.param_atoms().to_vec()).unwrap();
        let m = marginal_belief(&world, &w).unwrap();
        prop_assert!((m.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        for (d, &v) in m.probs().iter().enumerate() {
            let col = world.kernel().iter().map(|row| row[d]);
            let lo = col.clone().fold(f64::INFINITY, f64::min);
            let hi = col.fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn js_lemma_and_first_forms_hold(
        seed in 0u64..10_000,
        nd in 2usize..=4,
        pair in (2usize..=5).prop_flat_map(pair_on),
        a in alpha(),
    ) {
        let mut r = rng(seed);
        let world = random_world(&mut r, nd, pair.p_o.len());
        let c = bound_lemma_check(LemmaKind::Gjsd, &world, &pair, a).unwrap();
        prop_assert!(c.holds, "{c:?}");
        for kind in [TradeoffKind::JsAlpha, TradeoffKind::Tv] {
            let rep = verify_tradeoff(kind, std::slice::from_ref(&world), std::slice::from_ref(&pair), &pair, a).unwrap();
            prop_assert!(rep.holds);
        }
    }

    #[test]
    fn identical_pairs_have_slack_equal_to_zero_bound(seed in 0u64..10_000, p in dist(3), a in alpha()) {
        let mut r = rng(seed);
        let world = random_world(&mut r, 3, 3);
        let atoms = world.param_atoms().to_vec();
        let p = DiscreteDist::new(atoms, p.probs().to_vec()).unwrap();
        let pair = ProtectionPair::new(p.clone(), p).unwrap();
        let rep = verify_tradeoff(TradeoffKind::JsAlpha, &[world], std::slice::from_ref(&pair), &pair, a).unwrap();
        prop_assert_eq!(rep.bound_term, 0.0);
        prop_assert!((rep.slack - rep.bound_term).abs() <= 1e-12);
    }

    #[test]
    fn projections_respect_radii(v in prop::collection::vec(-3.0f64..3.0, 1..6), r in 0.0f64..2.0) {
        let fallback = {
            let mut f = vec![0.0; v.len()];
            f[0] = 1.0;
            f
        };
        let out = project_outside_ball(&v, r, &fallback).unwrap();
        prop_assert!(norm(&out) >= r - 1e-12);
        let inside = project_inside_ball(&v, r).unwrap();
        prop_assert!(norm(&inside) <= r + 1e-12);
        if norm(&v) > 1e-9 {
            for w in [&out, &inside] {
                if norm(w) > 1e-9 {
                    let cos = v.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>() / (norm(&v) * norm(w));
                    prop_assert!((cos - 1.0).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn empirical_leakage_is_a_fraction(
        xs in prop::collection::vec(prop::collection::vec(-1.0f64..2.0, 3), 1..5),
        truth in prop::collection::vec(0.0f64..1.0, 3),
    ) {
        let iterates: Vec<Dataset> = xs.iter().map(|x| Dataset::new(vec![x.clone()], vec![0.0]).unwrap()).collect();
        let mismatch = vec![0.0; iterates.len()];
        let trace = AttackTrace::from_parts(iterates, mismatch).unwrap();
        let truth = Dataset::new(vec![truth], vec![0.0]).unwrap();
        let l = privacy_leakage_empirical(&trace, &truth, 3f64.sqrt()).unwrap();
        prop_assert!((0.0..=1.0).contains(&l.eps_p));
    }

    #[test]
    fn nine_digit_output_round_trips(x in prop::num::f64::NORMAL) {
        let back: f64 = format_g(x).parse().unwrap();
        prop_assert!(((back - x) / x).abs() <= 5e-9);
    }
}
