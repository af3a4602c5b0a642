//! Evaluation metrics over simulation records: accuracy, macro-F1,
//! choice distributions, chi-square distance, stratified metrics and
//! ignored-factor frequencies.

mod report;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::response_codec::FactorBucket;
use crate::scenario_runner::SimulationRecord;
use crate::survey_data::{stratify, Criterion, Dataset};

pub use report::{build_report, TABLES, CellMetrics, GroupMetrics, MetricsReport, ScenarioAverages, StratumSizes};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("metric undefined on empty input")]
    Empty,
    #[error("length mismatch: {preds} predictions vs {truths} truths")]
    LengthMismatch { preds: usize, truths: usize },
    #[error("recorded count for option {0} is zero; chi-square expected value degenerate")]
    DegenerateExpected(usize),
    #[error("simulated counts are all zero")]
    ZeroSimulated,
    #[error("invalid count: {0}")]
    InvalidCount(String),
}

fn check(preds: &[u8], truths: &[u8]) -> Result<(), MetricsError> {
    if preds.len() != truths.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            truths: truths.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Share of matching predictions. A prediction of 0 (no valid answer) never matches.
pub fn accuracy(preds: &[u8], truths: &[u8]) -> Result<f64, MetricsError> {
    check(preds, truths)?;
    let hits = preds.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Unweighted mean of per-class F1 over classes 1..3; a class with no
/// predictions, no truths or no true positives scores 0.
pub fn f1_macro(preds: &[u8], truths: &[u8]) -> Result<f64, MetricsError> {
    check(preds, truths)?;
    let mut sum = 0.0;
    for c in 1..=3u8 {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fneg = 0usize;
        for (&p, &t) in preds.iter().zip(truths) {
            match (p == c, t == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
        if tp == 0 {
            continue;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / (tp + fneg) as f64;
        sum += 2.0 * precision * recall / (precision + recall);
    }
    Ok(sum / 3.0)
}

/// Pearson distance with recorded counts as expected values, after scaling
/// the simulated counts to the recorded total.
pub fn chi_square(simulated: &[f64; 3], recorded: &[f64; 3]) -> Result<f64, MetricsError> {
    if simulated.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(MetricsError::InvalidCount(format!("simulated {simulated:?}")));
    }
    if let Some(k) = recorded.iter().position(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(MetricsError::DegenerateExpected(k + 1));
    }
    let s_total: f64 = simulated.iter().sum();
    if s_total == 0.0 {
        return Err(MetricsError::ZeroSimulated);
    }
    let n: f64 = recorded.iter().sum();
    Ok(simulated
        .iter()
        .zip(recorded)
        .map(|(s, r)| {
            let scaled = s * n / s_total;
            (scaled - r).powi(2) / r
        })
        .sum())
}

/// Counts of choices 1..3 in one repeat; other values are skipped.
pub fn choice_counts(choices: &[u8]) -> [f64; 3] {
    let mut counts = [0.0; 3];
    for &c in choices {
        if (1..=3).contains(&c) {
            counts[c as usize - 1] += 1.0;
        }
    }
    counts
}

/// Per-repeat choice counts averaged across repeats.
pub fn choice_distribution(per_repeat: &[Vec<u8>]) -> [f64; 3] {
    if per_repeat.is_empty() {
        return [0.0; 3];
    }
    let mut total = [0.0; 3];
    for choices in per_repeat {
        let c = choice_counts(choices);
        for k in 0..3 {
            total[k] += c[k];
        }
    }
    total.map(|t| t / per_repeat.len() as f64)
}

/// Ignored-factor counts per bucket, averaged over repeats.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IgnoredFrequency {
    #[serde(rename = "SPC")]
    pub spc: f64,
    #[serde(rename = "SD")]
    pub sd: f64,
    #[serde(rename = "ST")]
    pub st: f64,
    #[serde(rename = "OTHER")]
    pub other: f64,
}

impl IgnoredFrequency {
    pub fn get(&self, b: FactorBucket) -> f64 {
        match b {
            FactorBucket::SPC => self.spc,
            FactorBucket::SD => self.sd,
            FactorBucket::ST => self.st,
            FactorBucket::OTHER => self.other,
        }
    }
}

/// Sums bucket multiplicities within each repeat, then averages over the
/// repeats present.
pub fn ignored_frequency(records: &[SimulationRecord]) -> IgnoredFrequency {
    let mut per_repeat: BTreeMap<u32, [u64; 4]> = BTreeMap::new();
    for r in records {
        let slot = per_repeat.entry(r.repeat_index).or_default();
        for (i, b) in FactorBucket::ALL.iter().enumerate() {
            slot[i] += r.response.ignored_canonical.get(*b) as u64;
        }
    }
    if per_repeat.is_empty() {
        return IgnoredFrequency::default();
    }
    let n = per_repeat.len() as f64;
    let mut sums = [0.0; 4];
    for counts in per_repeat.values() {
        for i in 0..4 {
            sums[i] += counts[i] as f64;
        }
    }
    IgnoredFrequency {
        spc: sums[0] / n,
        sd: sums[1] / n,
        st: sums[2] / n,
        other: sums[3] / n,
    }
}

/// Repeat indices present in `records`, ascending.
fn repeats(records: &[&SimulationRecord]) -> Vec<u32> {
    records.iter().map(|r| r.repeat_index).collect::<BTreeSet<_>>().into_iter().collect()
}

/// Mean over repeats of `metric` applied to the scored (non-excluded)
/// predictions of each repeat. Repeats without scored records are skipped.
pub fn repeat_mean(
    records: &[&SimulationRecord],
    metric: fn(&[u8], &[u8]) -> Result<f64, MetricsError>,
) -> (Vec<Option<f64>>, Option<f64>) {
    let mut per = Vec::new();
    for rep in repeats(records) {
        let (preds, truths): (Vec<u8>, Vec<u8>) = records
            .iter()
            .filter(|r| r.repeat_index == rep)
            .filter_map(|r| r.scored_prediction().map(|p| (p, r.truth)))
            .unzip();
        per.push(metric(&preds, &truths).ok());
    }
    let defined: Vec<f64> = per.iter().flatten().copied().collect();
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    (per, mean)
}

/// Accuracy and macro-F1 within each stratification group.
pub fn stratified_report(records: &[SimulationRecord], dataset: &Dataset, criteria: &[Criterion]) -> Vec<GroupMetrics> {
    let mut out = Vec::new();
    for &criterion in criteria {
        let s = stratify(dataset, criterion);
        for (label, members) in [(&s.without_label, &s.without), (&s.with_label, &s.with)] {
            let ids: BTreeSet<&str> = members.iter().map(String::as_str).collect();
            let in_group: Vec<&SimulationRecord> = records.iter().filter(|r| ids.contains(r.respondent_id.as_str())).collect();
            out.push(GroupMetrics {
                criterion,
                label: label.clone(),
                size: members.len(),
                accuracy: repeat_mean(&in_group, accuracy).1,
                f1_macro: repeat_mean(&in_group, f1_macro).1,
            });
        }
    }
    out
}
