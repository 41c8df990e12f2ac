mod common;

use common::counted_mdp;
use popo::gap::{
    analyze, random_mdp, random_policy, sample_transitions, EmpiricalModel, GapError, TabularPolicy,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn arb_counts() -> impl Strategy<Value = (Vec<Vec<Vec<Vec<u32>>>>, Vec<f64>)> {
    (1usize..5, 1usize..4, 1usize..4).prop_flat_map(|(ns, na, nr)| {
        let row = prop::collection::vec(prop::collection::vec(0u32..4, nr), ns)
            .prop_filter("row needs data", |r| r.iter().flatten().any(|&c| c > 0));
        (
            prop::collection::vec(prop::collection::vec(row, na), ns),
            prop::collection::vec(-5.0f64..5.0, nr),
        )
    })
}

proptest! {
    #[test]
    fn recursive_gap_equals_direct_gap(
        seed in any::<u64>(),
        ns in 1usize..8,
        na in 1usize..4,
        nr in 1usize..4,
        gamma in 0.0f64..0.99,
        per_pair in 1usize..10,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = random_mdp(&mut rng, ns, na, nr, gamma);
        let pi = random_policy(&mut rng, ns, na);
        let data = sample_transitions(&mut rng, &mdp, per_pair);
        let m = EmpiricalModel::from_transitions(&mdp, &data).unwrap();
        let report = analyze(&mdp, &m, &pi).unwrap();
        prop_assert!(report.max_abs_discrepancy < 1e-8, "{}", report.max_abs_discrepancy);
    }

    #[test]
    fn exact_empirical_kernel_has_no_gap((counts, rewards) in arb_counts(), gamma in 0.0f64..0.95, seed in any::<u64>()) {
        let (mdp, data) = counted_mdp(&counts, rewards, gamma);
        let m = EmpiricalModel::from_transitions(&mdp, &data).unwrap();
        let pi = random_policy(&mut ChaCha8Rng::seed_from_u64(seed), mdp.states, mdp.actions);
        let report = analyze(&mdp, &m, &pi).unwrap();
        let worst = report.delta_direct.iter().chain(&report.delta_recursive).map(|d| d.abs()).fold(0.0, f64::max);
        prop_assert!(worst < 1e-10, "{worst}");
    }

    #[test]
    fn missing_pairs_are_reported(seed in any::<u64>(), ns in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = random_mdp(&mut rng, ns, 2, 2, 0.9);
        let data: Vec<_> = sample_transitions(&mut rng, &mdp, 3).into_iter().filter(|t| t.s != 0).collect();
        let m = EmpiricalModel::from_transitions(&mdp, &data).unwrap();
        match analyze(&mdp, &m, &TabularPolicy::uniform(ns, 2)) {
            Err(GapError::Uncovered { pairs }) => prop_assert_eq!(pairs, vec![(0, 0), (0, 1)]),
            other => prop_assert!(false, "unexpected {:?}", other),
        }
    }
}
