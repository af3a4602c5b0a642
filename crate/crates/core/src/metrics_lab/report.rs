use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    accuracy, chi_square, choice_counts, f1_macro, ignored_frequency, repeat_mean, stratified_report,
    IgnoredFrequency,
};
use crate::prompt_forge::test_scenario;
use crate::response_codec::ResponseStatus;
use crate::scenario_runner::SimulationRecord;
use crate::survey_data::{stratify, Criterion, Dataset, ExperimentId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub criterion: Criterion,
    pub label: String,
    pub size: usize,
    pub accuracy: Option<f64>,
    pub f1_macro: Option<f64>,
}

/// Metrics for one (scenario, experiment) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub scenario_id: u8,
    pub code: String,
    pub experiment: ExperimentId,
    pub n_records: usize,
    pub n_scored: usize,
    pub repeats: usize,
    pub accuracy: Option<f64>,
    pub accuracy_per_repeat: Vec<Option<f64>>,
    pub f1_macro: Option<f64>,
    pub f1_per_repeat: Vec<Option<f64>>,
    pub invalid_rate: f64,
    pub choice_distribution: [f64; 3],
    pub chi_square: Option<f64>,
    pub chi_square_per_repeat: Vec<Option<f64>>,
    pub ignored_frequency: IgnoredFrequency,
    pub stratified: Vec<GroupMetrics>,
}

/// Means across the experiments of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioAverages {
    pub scenario_id: u8,
    pub code: String,
    pub accuracy: Option<f64>,
    pub f1_macro: Option<f64>,
    pub chi_square: Option<f64>,
    pub stratified: Vec<GroupMetrics>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumSizes {
    pub criterion: Criterion,
    pub without_label: String,
    pub without: usize,
    pub with_label: String,
    pub with: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub experiments: Vec<ExperimentId>,
    /// Scenario-6 recorded choice counts per experiment.
    pub recorded_distribution: BTreeMap<ExperimentId, [f64; 3]>,
    pub strata: Vec<StratumSizes>,
    pub cells: Vec<CellMetrics>,
    pub averages: Vec<ScenarioAverages>,
}

fn mean(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<Option<f64>> = values.into_iter().collect();
    if v.is_empty() || v.iter().any(Option::is_none) {
        return None;
    }
    Some(v.iter().flatten().sum::<f64>() / v.len() as f64)
}

fn scenario_code(id: u8) -> String {
    test_scenario(id).map(|c| c.code).unwrap_or_else(|| id.to_string())
}

/// Builds the full report from the records of one or more runs.
pub fn build_report(records: &[SimulationRecord], dataset: &Dataset, criteria: &[Criterion]) -> MetricsReport {
    let mut groups: BTreeMap<(u8, ExperimentId), Vec<&SimulationRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.scenario_id, r.experiment_id)).or_default().push(r);
    }
    let experiments: Vec<ExperimentId> = groups.keys().map(|k| k.1).collect::<BTreeSet<_>>().into_iter().collect();

    let mut recorded_distribution = BTreeMap::new();
    for exp in &experiments {
        let truths: Vec<u8> = dataset.respondents.iter().filter_map(|r| r.target_choice(*exp)).collect();
        recorded_distribution.insert(*exp, choice_counts(&truths));
    }

    let mut cells = Vec::new();
    for ((sid, exp), recs) in &groups {
        let reps: BTreeSet<u32> = recs.iter().map(|r| r.repeat_index).collect();
        let (accuracy_per_repeat, acc) = repeat_mean(recs, accuracy);
        let (f1_per_repeat, f1) = repeat_mean(recs, f1_macro);
        let mut chi_per = Vec::new();
        let mut dist = [0.0; 3];
        for rep in &reps {
            let choices: Vec<u8> = recs
                .iter()
                .filter(|r| r.repeat_index == *rep && r.response.status == ResponseStatus::Valid)
                .filter_map(|r| r.response.choice)
                .collect();
            let counts = choice_counts(&choices);
            for k in 0..3 {
                dist[k] += counts[k];
            }
            chi_per.push(chi_square(&counts, &recorded_distribution[exp]).ok());
        }
        let n_rep = reps.len().max(1) as f64;
        let defined: Vec<f64> = chi_per.iter().flatten().copied().collect();
        let owned: Vec<SimulationRecord> = recs.iter().map(|r| (*r).clone()).collect();
        cells.push(CellMetrics {
            scenario_id: *sid,
            code: scenario_code(*sid),
            experiment: *exp,
            n_records: recs.len(),
            n_scored: recs.iter().filter(|r| r.scored_prediction().is_some()).count(),
            repeats: reps.len(),
            accuracy: acc,
            accuracy_per_repeat,
            f1_macro: f1,
            f1_per_repeat,
            invalid_rate: recs.iter().filter(|r| !r.response.is_valid()).count() as f64 / recs.len() as f64,
            choice_distribution: dist.map(|d| d / n_rep),
            chi_square: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
            chi_square_per_repeat: chi_per,
            ignored_frequency: ignored_frequency(&owned),
            stratified: stratified_report(&owned, dataset, criteria),
        });
    }

    let scenario_ids: BTreeSet<u8> = groups.keys().map(|k| k.0).collect();
    let averages = scenario_ids
        .into_iter()
        .map(|sid| {
            let row: Vec<&CellMetrics> = cells.iter().filter(|c| c.scenario_id == sid).collect();
            let n_groups = row.first().map(|c| c.stratified.len()).unwrap_or(0);
            ScenarioAverages {
                scenario_id: sid,
                code: scenario_code(sid),
                accuracy: mean(row.iter().map(|c| c.accuracy)),
                f1_macro: mean(row.iter().map(|c| c.f1_macro)),
                chi_square: mean(row.iter().map(|c| c.chi_square)),
                stratified: (0..n_groups)
                    .map(|g| {
                        let first = &row[0].stratified[g];
                        GroupMetrics {
                            criterion: first.criterion,
                            label: first.label.clone(),
                            size: first.size,
                            accuracy: mean(row.iter().map(|c| c.stratified[g].accuracy)),
                            f1_macro: mean(row.iter().map(|c| c.stratified[g].f1_macro)),
                        }
                    })
                    .collect(),
            }
        })
        .collect();

    let strata = criteria
        .iter()
        .map(|c| {
            let s = stratify(dataset, *c);
            StratumSizes {
                criterion: *c,
                without_label: s.without_label,
                without: s.without.len(),
                with_label: s.with_label,
                with: s.with.len(),
                excluded: s.excluded.len(),
            }
        })
        .collect();

    MetricsReport {
        experiments,
        recorded_distribution,
        strata,
        cells,
        averages,
    }
}

fn fixed(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_else(|| "-".into())
}

/// Shortest representation that parses back to the same value.
fn exact(v: f64) -> String {
    format!("{v}")
}

fn exact_opt(v: Option<f64>) -> String {
    v.map(exact).unwrap_or_default()
}

fn render_rows(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width = vec![0; cols];
    for row in std::iter::once(header).chain(rows.iter().map(Vec::as_slice)) {
        for (i, cell) in row.iter().enumerate() {
            width[i] = width[i].max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for row in std::iter::once(header).chain(rows.iter().map(Vec::as_slice)) {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, c)| if i < 2 { format!("{c:<w$}", w = width[i]) } else { format!("{c:>w$}", w = width[i]) })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn csv_string(header: &[String], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for row in rows {
        w.write_record(row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

/// Table identifiers for [`MetricsReport::table`].
pub const TABLES: [&str; 5] = ["accuracy", "ignored", "distribution", "chi_square", "stratified"];

impl MetricsReport {
    fn cell(&self, sid: u8, exp: ExperimentId) -> Option<&CellMetrics> {
        self.cells.iter().find(|c| c.scenario_id == sid && c.experiment == exp)
    }

    fn exp_headers(&self, per_exp: &[&str], average: bool) -> Vec<String> {
        let mut h = vec!["Scenario".to_string(), "Code".to_string()];
        for e in &self.experiments {
            h.extend(per_exp.iter().map(|m| format!("{e} {m}")));
        }
        if average {
            h.extend(per_exp.iter().map(|m| format!("Average {m}")));
        }
        h
    }

    /// Header and rows of one table; `exact_values` keeps full precision.
    pub fn table(&self, name: &str, exact_values: bool) -> Option<(Vec<String>, Vec<Vec<String>>)> {
        let num = |v: Option<f64>| if exact_values { exact_opt(v) } else { fixed(v, 2) };
        let count = |v: f64| if exact_values { exact(v) } else { format!("{}", (v * 10.0).round() / 10.0) };
        let mut rows = Vec::new();
        let header = match name {
            "accuracy" => {
                for a in &self.averages {
                    let mut row = vec![a.scenario_id.to_string(), a.code.clone()];
                    for e in &self.experiments {
                        let c = self.cell(a.scenario_id, *e);
                        row.push(num(c.and_then(|c| c.accuracy)));
                        row.push(num(c.and_then(|c| c.f1_macro)));
                    }
                    row.push(num(a.accuracy));
                    row.push(num(a.f1_macro));
                    rows.push(row);
                }
                self.exp_headers(&["Acc", "F1"], true)
            }
            "ignored" => {
                for a in &self.averages {
                    let mut row = vec![a.scenario_id.to_string(), a.code.clone()];
                    for e in &self.experiments {
                        let f = self.cell(a.scenario_id, *e).map(|c| c.ignored_frequency).unwrap_or_default();
                        row.extend([f.spc, f.st, f.sd, f.other].map(count));
                    }
                    rows.push(row);
                }
                self.exp_headers(&["SPC", "ST", "SD", "OTHER"], false)
            }
            "distribution" => {
                let mut recorded = vec![String::new(), "Recorded".to_string()];
                for e in &self.experiments {
                    recorded.extend(self.recorded_distribution[e].map(count));
                }
                rows.push(recorded);
                for a in &self.averages {
                    let mut row = vec![a.scenario_id.to_string(), a.code.clone()];
                    for e in &self.experiments {
                        let d = self.cell(a.scenario_id, *e).map(|c| c.choice_distribution).unwrap_or_default();
                        row.extend(d.map(count));
                    }
                    rows.push(row);
                }
                self.exp_headers(&["A", "B", "C"], false)
            }
            "chi_square" => {
                for a in &self.averages {
                    let mut row = vec![a.scenario_id.to_string(), a.code.clone()];
                    for e in &self.experiments {
                        row.push(num(self.cell(a.scenario_id, *e).and_then(|c| c.chi_square)));
                    }
                    row.push(num(a.chi_square));
                    rows.push(row);
                }
                self.exp_headers(&["Chi2"], true)
            }
            "stratified" => {
                for a in &self.averages {
                    let mut row = vec![a.scenario_id.to_string(), a.code.clone()];
                    for e in &self.experiments {
                        let c = self.cell(a.scenario_id, *e);
                        row.push(num(c.and_then(|c| c.accuracy)));
                        row.push(num(c.and_then(|c| c.f1_macro)));
                    }
                    row.push(num(a.accuracy));
                    row.push(num(a.f1_macro));
                    rows.push(row);
                    for (g, avg) in a.stratified.iter().enumerate() {
                        let mut row = vec![String::new(), format!("{} [Size: {}]", avg.label, avg.size)];
                        for e in &self.experiments {
                            let m = self.cell(a.scenario_id, *e).and_then(|c| c.stratified.get(g));
                            row.push(num(m.and_then(|m| m.accuracy)));
                            row.push(num(m.and_then(|m| m.f1_macro)));
                        }
                        row.push(num(avg.accuracy));
                        row.push(num(avg.f1_macro));
                        rows.push(row);
                    }
                }
                self.exp_headers(&["Acc", "F1"], true)
            }
            _ => return None,
        };
        Some((header, rows))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let titles = [
            "Accuracy and F1 per experiment",
            "Ignored factors (mean count per repeat)",
            "Choice distribution",
            "Chi-square distance to recorded choices",
            "Stratified accuracy",
        ];
        let mut out = String::new();
        for (name, title) in TABLES.iter().zip(titles) {
            let (h, rows) = self.table(name, false).expect("known table");
            let _ = writeln!(out, "{title}\n");
            out.push_str(&render_rows(&h, &rows));
            out.push('\n');
        }
        let invalid: Vec<String> = self
            .cells
            .iter()
            .filter(|c| c.invalid_rate > 0.0)
            .map(|c| format!("{} {}: {:.3}", c.scenario_id, c.experiment, c.invalid_rate))
            .collect();
        if !invalid.is_empty() {
            let _ = writeln!(out, "Invalid-response rates\n\n{}", invalid.join("\n"));
        }
        out
    }

    /// One CSV document per table, keyed by table name.
    pub fn to_csv(&self) -> BTreeMap<String, String> {
        TABLES
            .iter()
            .map(|name| {
                let (h, rows) = self.table(name, true).expect("known table");
                (name.to_string(), csv_string(&h, &rows))
            })
            .collect()
    }
}
