mod common;

use common::walk::{model_step, run_walks, Op, Walker, M};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn model_matches_documented_edges() {
    assert_eq!(model_step(M::Created, Op::Headset(true), false), Ok(M::Headset));
    assert_eq!(model_step(M::Created, Op::Headset(false), false), Ok(M::Created));
    assert_eq!(model_step(M::VrDone, Op::Headset(true), false), Err("WrongState"));
    assert_eq!(model_step(M::Created, Op::CompleteVr, false), Err("WrongState"));
    assert_eq!(model_step(M::Unlocked, Op::RedeemRight, true), Err("AlreadyRedeemed"));
}

#[test]
fn walks_follow_the_graph() {
    let stats = run_walks(17, 3_000).unwrap();
    assert!(stats.early_redeems > 0 && stats.second_redeems > 0 && stats.accepted > 0, "{stats:?}");
    assert_eq!(stats.walks, 3_000);
    assert!(stats.rejected > 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arbitrary_walks_are_safe(seed in any::<u64>(), len in 1usize..40) {
        let mut w = Walker::new(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stats = Default::default();
        for _ in 0..4 {
            w.walk(&mut rng, len, &mut stats).map_err(TestCaseError::fail)?;
        }
    }
}
