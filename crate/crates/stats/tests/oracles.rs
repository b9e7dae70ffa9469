//! Cross-checks against independent oracles: exact integer enumeration for
//! Fisher, the pooled t test for two-group Tukey, and invariance properties
//! for ANOVA.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vrlab_stats::dist::t_two_sided;
use vrlab_stats::{fisher_exact, one_way_anova, tukey_hsd, ContingencyTable2x2, GroupedSamples};

fn binom(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Exact hypergeometric enumeration in integers; the only float operation is
/// the final division.
fn fisher_brute_force(t: ContingencyTable2x2) -> f64 {
    let r1 = t.a + t.b;
    let r2 = t.c + t.d;
    let c1 = t.a + t.c;
    let n = r1 + r2;
    let denom = binom(n, c1);
    let weight = |k: u64| binom(r1, k) * binom(r2, c1 - k);
    let observed = weight(t.a);
    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    let tail: u128 = (lo..=hi).map(weight).filter(|&w| w <= observed).sum();
    tail as f64 / denom as f64
}

#[test]
fn fisher_matches_enumeration_for_small_margins() {
    let mut checked = 0;
    for a in 0..=8u64 {
        for b in 0..=8 - a {
            for c in 0..=8 - a {
                for d in 0..=(8 - b).min(8 - c) {
                    if a + b + c + d == 0 {
                        continue;
                    }
                    let t = ContingencyTable2x2::new(a, b, c, d);
                    let ours = fisher_exact(t).unwrap();
                    let oracle = fisher_brute_force(t);
                    assert!((ours - oracle).abs() <= 1e-10, "{t:?}: {ours} vs {oracle}");
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 1000);
}

#[test]
fn fisher_symmetric_under_row_and_column_swaps() {
    for &(a, b, c, d) in &[(1, 4, 4, 1), (3, 0, 2, 7), (10, 3, 4, 12), (0, 9, 6, 1)] {
        let t = ContingencyTable2x2::new(a, b, c, d);
        let p = fisher_exact(t).unwrap();
        assert!((p - fisher_exact(t.swap_rows()).unwrap()).abs() < 1e-14);
        assert!((p - fisher_exact(t.swap_cols()).unwrap()).abs() < 1e-14);
    }
}

fn pooled_t(a: &[f64], b: &[f64]) -> (f64, f64) {
    let ma = a.iter().sum::<f64>() / a.len() as f64;
    let mb = b.iter().sum::<f64>() / b.len() as f64;
    let ss: f64 = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() + b.iter().map(|x| (x - mb).powi(2)).sum::<f64>();
    let df = (a.len() + b.len() - 2) as f64;
    let sp2 = ss / df;
    let t = (ma - mb) / (sp2 * (1.0 / a.len() as f64 + 1.0 / b.len() as f64)).sqrt();
    (t, df)
}

#[test]
fn tukey_two_groups_equals_pooled_t_test() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..25 {
        let na = rng.random_range(2..15);
        let nb = rng.random_range(2..15);
        let shift = rng.random_range(-2.0..2.0);
        let a: Vec<f64> = (0..na).map(|_| rng.random_range(0.0..3.0)).collect();
        let b: Vec<f64> = (0..nb).map(|_| rng.random_range(0.0..3.0) + shift).collect();
        let (t, df) = pooled_t(&a, &b);
        let g = GroupedSamples::new().with("a", a).with("b", b);
        let r = tukey_hsd(&g, 0.05).unwrap();
        let pair = &r.pairs[0];
        assert!((pair.q - std::f64::consts::SQRT_2 * t.abs()).abs() < 1e-9);
        assert!((pair.p_adj - t_two_sided(t, df)).abs() < 1e-6, "t={t} df={df}");
    }
}

fn groups_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 2..8), 2..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn anova_f_is_affine_invariant(groups in groups_strategy(), scale in 0.1f64..10.0, neg in any::<bool>(), shift in -1e3f64..1e3) {
        let g: GroupedSamples = groups.into_iter().enumerate().map(|(i, v)| (format!("g{i}"), v)).collect();
        let scale = if neg { -scale } else { scale };
        let base = one_way_anova(&g).unwrap();
        let moved = one_way_anova(&g.map(|y| scale * y + shift)).unwrap();
        prop_assert!((base.f_stat - moved.f_stat).abs() <= 1e-8 * base.f_stat.max(1.0));
    }

    #[test]
    fn p_values_stay_in_unit_interval(groups in groups_strategy()) {
        let g: GroupedSamples = groups.into_iter().enumerate().map(|(i, v)| (format!("g{i}"), v)).collect();
        let r = one_way_anova(&g).unwrap();
        prop_assert!(r.p_value > 0.0 && r.p_value <= 1.0);
        let t = tukey_hsd(&g, 0.05).unwrap();
        for p in &t.pairs {
            prop_assert!(p.p_adj > 0.0 && p.p_adj <= 1.0);
        }
    }

    #[test]
    fn fisher_p_in_unit_interval(a in 0u64..40, b in 0u64..40, c in 0u64..40, d in 0u64..40) {
        prop_assume!(a + b + c + d > 0);
        let p = fisher_exact(ContingencyTable2x2::new(a, b, c, d)).unwrap();
        prop_assert!(p > 0.0 && p <= 1.0);
    }
}
