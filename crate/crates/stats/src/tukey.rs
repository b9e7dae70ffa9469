use serde::{Deserialize, Serialize};

use crate::anova::one_way_anova;
use crate::dist::studentized_range_sf;
use crate::grouped::mean;
use crate::{clamp_p, GroupedSamples, StatsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TukeyPair {
    pub label_a: String,
    pub label_b: String,
    /// `mean(a) - mean(b)`
    pub mean_diff: f64,
    pub q: f64,
    pub p_adj: f64,
    pub significant_at_alpha: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TukeyResult {
    pub alpha: f64,
    pub ms_within: f64,
    pub df_within: usize,
    pub pairs: Vec<TukeyPair>,
}

impl TukeyResult {
    /// Looks a pair up in either orientation.
    pub fn pair(&self, a: &str, b: &str) -> Option<&TukeyPair> {
        self.pairs
            .iter()
            .find(|p| (p.label_a == a && p.label_b == b) || (p.label_a == b && p.label_b == a))
    }
}

/// Tukey HSD (Tukey–Kramer for unequal sizes) over every unordered pair of
/// groups, in group order. A pair is significant when `p_adj <= alpha`.
pub fn tukey_hsd(grouped: &GroupedSamples, alpha: f64) -> Result<TukeyResult, StatsError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(StatsError::InvalidAlpha(alpha));
    }
    let anova = one_way_anova(grouped)?;
    let k = grouped.len();
    let df = anova.df_within as f64;
    let means: Vec<f64> = grouped.groups.iter().map(|g| mean(&g.values)).collect();

    let mut pairs = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in (i + 1)..k {
            let (a, b) = (&grouped.groups[i], &grouped.groups[j]);
            let diff = means[i] - means[j];
            let se = (anova.ms_within / 2.0 * (1.0 / a.values.len() as f64 + 1.0 / b.values.len() as f64)).sqrt();
            let q = if diff == 0.0 { 0.0 } else { diff.abs() / se };
            let p_adj = clamp_p(studentized_range_sf(q, k, df));
            pairs.push(TukeyPair {
                label_a: a.label.clone(),
                label_b: b.label.clone(),
                mean_diff: diff,
                q,
                p_adj,
                significant_at_alpha: p_adj <= alpha,
            });
        }
    }
    Ok(TukeyResult { alpha, ms_within: anova.ms_within, df_within: anova.df_within, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_groups_are_never_significant() {
        let g = GroupedSamples::new()
            .with("a", vec![1.0, 2.0, 3.0])
            .with("b", vec![1.0, 2.0, 3.0])
            .with("c", vec![1.0, 2.0, 3.0]);
        let r = tukey_hsd(&g, 0.999).unwrap();
        assert_eq!(r.pairs.len(), 3);
        assert!(r.pairs.iter().all(|p| !p.significant_at_alpha && p.p_adj == 1.0));
    }

    #[test]
    fn separated_third_group() {
        let g = GroupedSamples::new()
            .with("a", vec![0.0; 4])
            .with("b", vec![0.0; 4])
            .with("c", vec![10.0, 10.0, 10.0, 10.0001]);
        let r = tukey_hsd(&g, 0.05).unwrap();
        assert!(!r.pair("a", "b").unwrap().significant_at_alpha);
        assert!(r.pair("a", "c").unwrap().significant_at_alpha);
        assert!(r.pair("b", "c").unwrap().significant_at_alpha);
    }

    #[test]
    fn alpha_extremes() {
        let g = GroupedSamples::new()
            .with("a", vec![1.0, 2.0, 3.5])
            .with("b", vec![2.0, 2.5, 4.0])
            .with("c", vec![1.5, 3.0, 3.0]);
        assert!(tukey_hsd(&g, 1.0).unwrap().pairs.iter().all(|p| p.significant_at_alpha));
        assert!(tukey_hsd(&g, 0.0).unwrap().pairs.iter().all(|p| !p.significant_at_alpha));
        assert_eq!(tukey_hsd(&g, 1.5), Err(StatsError::InvalidAlpha(1.5)));
    }
}
