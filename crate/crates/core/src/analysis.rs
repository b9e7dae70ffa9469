//! Per-experiment analyses: a measure is collected per session, grouped by
//! condition and run through descriptives, one-way ANOVA and Tukey HSD, or
//! through pairwise Fisher tests for the unfair-offer acceptance counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use vrlab_stats::{
    descriptives, fisher_exact, one_way_anova, tukey_hsd, AnovaResult, ContingencyTable2x2, Descriptives,
    GroupedSamples, TukeyResult,
};

use crate::experiment::QualityFilters;
use crate::ids::{ConditionId, ExperimentId, InstrumentId};
use crate::lab::{Lab, LabError, SessionEntry};
use crate::telemetry::ZonePartition;
use crate::ultimatum::{Outcome, Proposer};

/// Global rounds in which the bot offers the 75/25 split.
pub const UNFAIR_ROUNDS: [u32; 2] = [4, 8];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Measure {
    Subscale { instrument: InstrumentId, subscale: String },
    Zone1Share,
    /// Mean amount the participant kept in the rounds it proposed.
    Splits,
    UnfairAccepts,
}

impl FromStr for Measure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zone1_share" => Ok(Measure::Zone1Share),
            "splits" => Ok(Measure::Splits),
            "unfair_accepts" => Ok(Measure::UnfairAccepts),
            other => match other.split_once('.') {
                Some((i, sub)) if !i.is_empty() && !sub.is_empty() => {
                    Ok(Measure::Subscale { instrument: InstrumentId::from(i), subscale: sub.into() })
                }
                _ => Err(format!(
                    "unknown measure {other:?}; expected instrument.subscale, zone1_share, splits or unfair_accepts"
                )),
            },
        }
    }
}

impl std::fmt::Display for Measure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Measure::Subscale { instrument, subscale } => write!(f, "{instrument}.{subscale}"),
            Measure::Zone1Share => f.write_str("zone1_share"),
            Measure::Splits => f.write_str("splits"),
            Measure::UnfairAccepts => f.write_str("unfair_accepts"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub alpha: f64,
    pub fov_deg: f64,
    /// Overrides the experiment's configured quality filters.
    pub filters: Option<QualityFilters>,
    /// For `splits`: drop sessions whose value lies more than this many
    /// sample standard deviations from their condition mean.
    pub trim_sd: Option<f64>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self { alpha: 0.05, fov_deg: crate::telemetry::DEFAULT_FOV_DEG, filters: None, trim_sd: None }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Lab(#[from] LabError),
    #[error("invalid option: {0}")]
    Options(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub condition_id: ConditionId,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptives: Option<Descriptives>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherComparison {
    pub global_round: u32,
    pub condition_a: ConditionId,
    pub condition_b: ConditionId,
    /// Rows are conditions a and b; columns are accepted and rejected.
    pub table: [[u64; 2]; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub experiment_id: ExperimentId,
    pub measure: Measure,
    pub alpha: f64,
    pub groups: Vec<GroupSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anova: Option<AnovaResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tukey: Option<TukeyResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fisher: Vec<FisherComparison>,
    /// Tests that could not be run and why.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl AnalysisReport {
    pub fn group(&self, condition: &str) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.condition_id.as_str() == condition)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "experiment {}  measure {}  alpha {}", self.experiment_id, self.measure, self.alpha);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<16} {:>4} {:>10} {:>10} {:>10}", "condition", "n", "mean", "sd", "sem");
        for g in &self.groups {
            match &g.descriptives {
                Some(d) => {
                    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
                    let _ = writeln!(
                        out,
                        "{:<16} {:>4} {:>10.4} {:>10} {:>10}",
                        g.condition_id.as_str(),
                        d.n,
                        d.mean,
                        opt(d.sd),
                        opt(d.sem)
                    );
                }
                None => {
                    let _ = writeln!(out, "{:<16} {:>4} {:>10} {:>10} {:>10}", g.condition_id.as_str(), 0, "-", "-", "-");
                }
            }
        }
        if let Some(a) = &self.anova {
            let _ = writeln!(out);
            let _ = writeln!(out, "ANOVA: F({}, {}) = {:.4}, p {}", a.df_between, a.df_within, a.f_stat, fmt_p(a.p_value));
        }
        if let Some(t) = &self.tukey {
            let _ = writeln!(out);
            let _ = writeln!(out, "Tukey HSD");
            for p in &t.pairs {
                let _ = writeln!(
                    out,
                    "  {} vs {}: diff {:+.4}, p_adj {}{}",
                    p.label_a,
                    p.label_b,
                    p.mean_diff,
                    fmt_p(p.p_adj),
                    if p.significant_at_alpha { "  *" } else { "" }
                );
            }
        }
        if !self.fisher.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(out, "Fisher exact (accepted/rejected)");
            for c in &self.fisher {
                let p = c.p_value.map_or("n/a".to_string(), fmt_p);
                let _ = writeln!(
                    out,
                    "  round {}: {} {}/{} vs {} {}/{}: p {p}",
                    c.global_round, c.condition_a, c.table[0][0], c.table[0][1], c.condition_b, c.table[1][0], c.table[1][1]
                );
            }
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }
}

fn fmt_p(p: f64) -> String {
    if p < 0.001 {
        "< .001".to_string()
    } else {
        format!("= {p:.4}")
    }
}

/// Runs one measure over one experiment.
pub fn analyze(lab: &Lab, id: &ExperimentId, measure: &Measure, opts: &AnalysisOptions) -> Result<AnalysisReport, AnalysisError> {
    if !(0.0..=1.0).contains(&opts.alpha) {
        return Err(AnalysisError::Options(format!("alpha {} outside [0, 1]", opts.alpha)));
    }
    let entry = lab.experiment(id)?;
    let exp = &entry.experiment;
    let filters = opts.filters.clone().unwrap_or_else(|| exp.filters.clone());
    let order: Vec<ConditionId> = exp.conditions.iter().map(|c| c.condition_id.clone()).collect();

    let mut notes = Vec::new();
    let by_condition: BTreeMap<ConditionId, Vec<f64>> = match measure {
        Measure::Subscale { instrument, subscale } => lab.group_scores(id, instrument, subscale, &filters)?,
        Measure::Zone1Share => {
            let partition = ZonePartition::new(opts.fov_deg).map_err(|e| AnalysisError::Options(e.to_string()))?;
            lab.zone1_shares(id, &partition, &filters)?
        }
        Measure::Splits => {
            let mut m = game_values(lab, id, &filters, mean_keep)?;
            if let Some(k) = opts.trim_sd {
                if k.is_nan() || k <= 0.0 {
                    return Err(AnalysisError::Options(format!("trim_sd {k} must be positive")));
                }
                let dropped = trim(&mut m, k);
                notes.push(format!("trimmed {dropped} sessions beyond {k} sd of their condition mean"));
            }
            m
        }
        Measure::UnfairAccepts => game_values(lab, id, &filters, unfair_accept_rate)?,
    };

    let groups: Vec<GroupSummary> = order
        .iter()
        .map(|c| {
            let values = by_condition.get(c).cloned().unwrap_or_default();
            GroupSummary { condition_id: c.clone(), descriptives: descriptives(&values).ok(), values }
        })
        .collect();

    let mut report = AnalysisReport {
        experiment_id: id.clone(),
        measure: measure.clone(),
        alpha: opts.alpha,
        groups,
        anova: None,
        tukey: None,
        fisher: Vec::new(),
        notes,
    };

    if *measure == Measure::UnfairAccepts {
        report.fisher = fisher_comparisons(lab, id, &filters, &order)?;
        return Ok(report);
    }

    let grouped = report
        .groups
        .iter()
        .filter(|g| !g.values.is_empty())
        .fold(GroupedSamples::new(), |acc, g| acc.with(g.condition_id.as_str(), g.values.clone()));
    match one_way_anova(&grouped) {
        Ok(a) => report.anova = Some(a),
        Err(e) => report.notes.push(format!("ANOVA not computed: {e}")),
    }
    if report.anova.is_some() {
        match tukey_hsd(&grouped, opts.alpha) {
            Ok(t) => report.tukey = Some(t),
            Err(e) => report.notes.push(format!("Tukey HSD not computed: {e}")),
        }
    }
    Ok(report)
}

fn game_values(
    lab: &Lab,
    id: &ExperimentId,
    filters: &QualityFilters,
    f: fn(&SessionEntry) -> f64,
) -> Result<BTreeMap<ConditionId, Vec<f64>>, LabError> {
    let mut out: BTreeMap<ConditionId, Vec<f64>> = BTreeMap::new();
    for e in completed_games(lab, id, filters)? {
        out.entry(e.session.condition_id.clone()).or_default().push(f(e));
    }
    Ok(out)
}

fn completed_games<'a>(
    lab: &'a Lab,
    id: &ExperimentId,
    filters: &'a QualityFilters,
) -> Result<impl Iterator<Item = &'a SessionEntry> + 'a, LabError> {
    Ok(lab
        .sessions_of(id)?
        .filter(move |e| Lab::passes_filters(e, filters) && e.game.as_ref().is_some_and(|g| g.is_complete())))
}

fn mean_keep(e: &SessionEntry) -> f64 {
    let g = e.game.as_ref().expect("filtered to complete games");
    let keeps: Vec<f64> =
        g.history.iter().filter(|r| r.proposer == Proposer::Participant).map(|r| f64::from(r.offer.proposer_keep)).collect();
    keeps.iter().sum::<f64>() / keeps.len() as f64
}

fn unfair_accepted(e: &SessionEntry, round: u32) -> Option<bool> {
    let g = e.game.as_ref()?;
    g.history.iter().find(|r| r.global_round == round).map(|r| r.outcome == Outcome::Accepted)
}

fn unfair_accept_rate(e: &SessionEntry) -> f64 {
    let n = UNFAIR_ROUNDS.iter().filter(|&&r| unfair_accepted(e, r) == Some(true)).count();
    n as f64 / UNFAIR_ROUNDS.len() as f64
}

/// Drops values further than `k` sample sds from their group mean.
fn trim(groups: &mut BTreeMap<ConditionId, Vec<f64>>, k: f64) -> usize {
    let mut dropped = 0;
    for values in groups.values_mut() {
        let Ok(Descriptives { mean, sd: Some(sd), .. }) = descriptives(values) else { continue };
        let before = values.len();
        values.retain(|v| (v - mean).abs() <= k * sd);
        dropped += before - values.len();
    }
    dropped
}

fn fisher_comparisons(
    lab: &Lab,
    id: &ExperimentId,
    filters: &QualityFilters,
    order: &[ConditionId],
) -> Result<Vec<FisherComparison>, LabError> {
    // counts[condition][round] = [accepted, rejected]
    let mut counts: BTreeMap<&ConditionId, [[u64; 2]; UNFAIR_ROUNDS.len()]> = BTreeMap::new();
    for c in order {
        counts.insert(c, [[0; 2]; UNFAIR_ROUNDS.len()]);
    }
    for e in completed_games(lab, id, filters)? {
        let Some(slot) = counts.get_mut(&e.session.condition_id) else { continue };
        for (i, &r) in UNFAIR_ROUNDS.iter().enumerate() {
            if let Some(acc) = unfair_accepted(e, r) {
                slot[i][usize::from(!acc)] += 1;
            }
        }
    }
    let mut out = Vec::new();
    for (i, &round) in UNFAIR_ROUNDS.iter().enumerate() {
        for (ai, a) in order.iter().enumerate() {
            for b in &order[ai + 1..] {
                let table = [counts[a][i], counts[b][i]];
                let p = fisher_exact(ContingencyTable2x2::from_rows(table)).ok();
                out.push(FisherComparison {
                    global_round: round,
                    condition_a: a.clone(),
                    condition_b: b.clone(),
                    table,
                    p_value: p,
                });
            }
        }
    }
    Ok(out)
}
