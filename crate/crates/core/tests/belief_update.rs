mod support;

use std::collections::BTreeMap;

use assayplan_core::belief::{
    compute_weights, update_weights_incremental, CandidateState, KernelConfig,
};
use assayplan_core::data::FeatureId;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn incremental_matches_scratch(seed in any::<u64>()) {
        let worst = support::bayes_update_case(seed);
        prop_assert!(worst <= 1e-12, "max deviation {worst:e}");
    }
}

#[test]
fn double_observation_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ds = support::random_dataset(&mut rng, 5, 1, 1, false);
    let kernel = KernelConfig::default();
    let obs: BTreeMap<FeatureId, f64> = [(FeatureId(0), 0.5)].into_iter().collect();
    let w = compute_weights(&CandidateState::default(), &ds, &kernel).unwrap();
    let w = update_weights_incremental(&w, &obs, &ds, &kernel).unwrap();
    assert!(update_weights_incremental(&w, &obs, &ds, &kernel).is_err());
}
