use proptest::prelude::*;
use ptoda::coordinate_model::{PatternSet, PatternSpace};
use ptoda::homology_oracle::{
    betti_any, betti_closed_with, betti_open, euler_check, fixed_point_count, poset_betti_of, prune_lower_cones, pseudo_open,
    Engine,
};

fn random_closed() -> impl Strategy<Value = PatternSet> {
    prop::collection::vec(1usize..4, 1..4)
        .prop_flat_map(|dims| {
            let space = PatternSpace::projective(&dims);
            let tops: Vec<u64> = dims.iter().map(|d| (1u64 << (d + 1)) - 1).collect();
            let gen = tops.iter().map(|&t| 1..=t).collect::<Vec<_>>();
            (Just(space), prop::collection::vec(gen, 0..5))
        })
        .prop_map(|(space, gens)| PatternSet::closure_of(space, &gens).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn nerve_and_orbit_engines_agree(a in random_closed()) {
        let n = betti_closed_with(&a, Engine::Nerve, None).unwrap();
        let o = betti_closed_with(&a, Engine::Orbit, None).unwrap();
        prop_assert_eq!(&n, &o);
        prop_assert!(euler_check(&a).unwrap().ok());
    }

    #[test]
    fn duality_matches_orbit_engine_on_open_sets(a in random_closed()) {
        let v = a.complement().unwrap();
        let by_duality = pseudo_open(&v).unwrap();
        let direct = betti_open(&v).unwrap().pseudo();
        prop_assert_eq!(by_duality, direct);
    }
}

fn random_any() -> impl Strategy<Value = PatternSet> {
    prop::collection::vec(1usize..3, 1..3)
        .prop_flat_map(|dims| {
            let space = PatternSpace::projective(&dims);
            let n = space.all_patterns().unwrap().len();
            (Just(space), prop::collection::vec(any::<bool>(), n))
        })
        .prop_map(|(space, keep)| {
            let all = space.all_patterns().unwrap();
            let members: Vec<_> = all.into_iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| p).collect();
            PatternSet::from_patterns(space, members).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn poset_engine_agrees_where_others_apply(a in random_any()) {
        let p = betti_any(&a, None).unwrap();
        prop_assert_eq!(p.euler(), fixed_point_count(&a));
        if a.is_closed() {
            prop_assert_eq!(&p, &betti_closed_with(&a, Engine::Nerve, None).unwrap());
        }
        if a.is_open() {
            prop_assert_eq!(&p, &betti_open(&a).unwrap());
        }
    }

    #[test]
    fn poset_engine_is_multiplicative(a in random_any(), b in random_any()) {
        prop_assume!(a.space.total_coords() + b.space.total_coords() <= 8);
        let pa = betti_any(&a, None).unwrap().poincare();
        let pb = betti_any(&b, None).unwrap().poincare();
        let prod = betti_any(&a.product(&b), None).unwrap().poincare();
        prop_assert_eq!(prod, &pa * &pb);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn reductions_preserve_betti_numbers(a in random_mid()) {
        let direct = poset_betti_of(&a, None, 4_000_000).unwrap();
        let pruned = poset_betti_of(&prune_lower_cones(&a), None, 4_000_000).unwrap();
        prop_assert_eq!(&direct, &pruned);
        prop_assert_eq!(&direct, &betti_any(&a, None).unwrap());
    }
}

fn random_mid() -> impl Strategy<Value = PatternSet> {
    prop::collection::vec(1usize..4, 1..4)
        .prop_filter("size", |d| PatternSpace::projective(d).pattern_count() <= 100)
        .prop_flat_map(|dims| {
            let space = PatternSpace::projective(&dims);
            let n = space.all_patterns().unwrap().len();
            (Just(space), prop::collection::vec(0u8..4, n))
        })
        .prop_map(|(space, keep)| {
            let all = space.all_patterns().unwrap();
            let members: Vec<_> = all.into_iter().zip(keep).filter(|(_, k)| *k != 0).map(|(p, _)| p).collect();
            PatternSet::from_patterns(space, members).unwrap()
        })
}
