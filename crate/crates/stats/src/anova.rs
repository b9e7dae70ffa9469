use serde::{Deserialize, Serialize};

use crate::dist::f_sf;
use crate::grouped::mean;
use crate::{clamp_p, GroupedSamples, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f_stat: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub p_value: f64,
    pub ss_between: f64,
    pub ss_within: f64,
    pub ms_within: f64,
}

/// One-way ANOVA with the usual between/within sums-of-squares split.
///
/// When every group is internally constant but the groups differ, the F
/// statistic is infinite and the p value is clamped to [`crate::P_FLOOR`].
pub fn one_way_anova(grouped: &GroupedSamples) -> Result<AnovaResult, StatsError> {
    grouped.check_omnibus()?;
    let k = grouped.len();
    let n = grouped.total_count();
    let all: Vec<f64> = grouped.groups.iter().flat_map(|g| g.values.iter().copied()).collect();
    let grand = mean(&all);

    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in &grouped.groups {
        let m = mean(&g.values);
        ss_between += g.values.len() as f64 * (m - grand) * (m - grand);
        ss_within += g.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    }
    let df_between = k - 1;
    let df_within = n - k;
    let ms_between = ss_between / df_between as f64;
    let ms_within = ss_within / df_within as f64;

    let f_stat = if ss_between == 0.0 {
        0.0
    } else if ms_within == 0.0 {
        f64::INFINITY
    } else {
        ms_between / ms_within
    };
    let p_value = clamp_p(f_sf(f_stat, df_between as f64, df_within as f64));
    Ok(AnovaResult { f_stat, df_between, df_within, p_value, ss_between, ss_within, ms_within })
}
