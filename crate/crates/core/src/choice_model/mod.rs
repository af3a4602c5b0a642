//! Multinomial and panel mixed logit estimated by maximum simulated
//! likelihood, with history-conditioned prediction of the held-out scenario
//! and a significance-based factor filter.

mod halton;
mod likelihood;
mod optimize;
mod predict;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::prompt_forge::{sd_item, st_item, SPC};
use crate::survey_data::{
    builtin_design, column_names, encode_attributes, Criterion, Dataset, ExperimentId, Respondent,
};

pub use halton::{halton_draws, halton_sequence, radical_inverse, DEFAULT_SKIP, PRIMES};
pub use likelihood::{mnl_loglik_obs, mnl_loglik_panel, simulated_loglik, Mixing};
pub use predict::{predict_choices, Prediction, PredictionSet};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("halton draws support at most 10 dimensions, got {0}")]
    UnsupportedDimension(usize),
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("fit did not converge; refusing to derive significance from it")]
    NotConverged,
}

/// Respondent-level indicator interacted with a design column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Indicator {
    HasChildren,
    HasSeniors,
    HighIncome,
    /// 1 when statement `index` (1-based) has one of `levels` (case-insensitive).
    StatementLevel { index: usize, levels: Vec<String> },
}

impl Indicator {
    /// Missing or unmappable respondent fields evaluate to 0.
    pub fn value(&self, r: &Respondent) -> f64 {
        let hit = match self {
            Indicator::HasChildren => Criterion::Children.classify(r) == Some(true),
            Indicator::HasSeniors => Criterion::Seniors.classify(r) == Some(true),
            Indicator::HighIncome => Criterion::Income25k.classify(r) == Some(true),
            Indicator::StatementLevel { index, levels } => index
                .checked_sub(1)
                .and_then(|i| r.statements.get(i))
                .is_some_and(|s| levels.iter().any(|l| l.trim().eq_ignore_ascii_case(s.level.trim()))),
        };
        if hit {
            1.0
        } else {
            0.0
        }
    }

    /// Prompt factor item the indicator is read from.
    pub fn factor_item(&self) -> String {
        match self {
            Indicator::HasChildren | Indicator::HasSeniors => sd_item("household_members"),
            Indicator::HighIncome => sd_item("income"),
            Indicator::StatementLevel { index, .. } => st_item(*index),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CovariateSource {
    Column { column: String },
    Interaction { column: String, indicator: Indicator },
}

impl CovariateSource {
    pub fn column(&self) -> &str {
        match self {
            CovariateSource::Column { column } | CovariateSource::Interaction { column, .. } => column,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    pub source: CovariateSource,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Covariate {
    pub fn column(name: &str) -> Self {
        Covariate {
            name: name.to_string(),
            source: CovariateSource::Column { column: name.to_string() },
            scale: 1.0,
        }
    }

    pub fn interaction(name: &str, column: &str, indicator: Indicator) -> Self {
        Covariate {
            name: name.to_string(),
            source: CovariateSource::Interaction { column: column.to_string(), indicator },
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub experiment_id: ExperimentId,
    pub covariates: Vec<Covariate>,
    /// Covariate names with normally distributed coefficients.
    #[serde(default)]
    pub random_coefficients: Vec<String>,
    #[serde(default = "default_draws")]
    pub n_draws: usize,
    #[serde(default)]
    pub seed: u64,
    /// Bayes-weight draws by the respondent's scenario 1-5 choices at prediction.
    #[serde(default = "yes")]
    pub condition_on_history: bool,
}

fn default_draws() -> usize {
    200
}

fn yes() -> bool {
    true
}

fn cost_columns(exp: ExperimentId) -> &'static [&'static str] {
    match exp {
        ExperimentId::SP1 => &["fixed_cost", "operation_cost"],
        ExperimentId::SP2 => &["retrofit_cost"],
        ExperimentId::SP3 => &["upfront_cost", "operation_cost"],
    }
}

/// SP2 shows one equipment cost and one support scheme for all options of a
/// scenario, so their coefficients are not identified.
fn scenario_constant_sp2(column: &str) -> bool {
    column == "equipment_cost" || column.starts_with("support_scheme:")
}

impl ModelSpec {
    /// Every design column, random coefficients on costs and constants.
    pub fn default_for(exp: ExperimentId) -> Self {
        let covariates: Vec<Covariate> = column_names(exp)
            .iter()
            .filter(|c| !(exp == ExperimentId::SP2 && scenario_constant_sp2(c)))
            .map(|c| Covariate::column(c))
            .collect();
        let mut random: Vec<String> = cost_columns(exp).iter().map(|s| s.to_string()).collect();
        random.extend(["asc_2".to_string(), "asc_3".to_string()]);
        ModelSpec {
            experiment_id: exp,
            covariates,
            random_coefficients: random,
            n_draws: default_draws(),
            seed: 0,
            condition_on_history: true,
        }
    }

    /// Same covariates, all coefficients fixed.
    pub fn mnl_for(exp: ExperimentId) -> Self {
        ModelSpec { random_coefficients: vec![], ..Self::default_for(exp) }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.covariates.is_empty() {
            return Err(ModelError::Spec("no covariates".into()));
        }
        let cols = column_names(self.experiment_id);
        let mut names = BTreeSet::new();
        for c in &self.covariates {
            if !names.insert(c.name.as_str()) {
                return Err(ModelError::Spec(format!("duplicate covariate '{}'", c.name)));
            }
            if !cols.iter().any(|x| x == c.source.column()) {
                return Err(ModelError::Spec(format!(
                    "covariate '{}' uses unknown column '{}' for {}",
                    c.name,
                    c.source.column(),
                    self.experiment_id
                )));
            }
            if !c.scale.is_finite() || c.scale == 0.0 {
                return Err(ModelError::Spec(format!("covariate '{}' has scale {}", c.name, c.scale)));
            }
        }
        let mut seen = BTreeSet::new();
        for r in &self.random_coefficients {
            if !names.contains(r.as_str()) {
                return Err(ModelError::Spec(format!("random coefficient '{r}' is not a covariate")));
            }
            if !seen.insert(r) {
                return Err(ModelError::Spec(format!("random coefficient '{r}' listed twice")));
            }
        }
        if self.n_draws == 0 {
            return Err(ModelError::Config("n_draws must be at least 1".into()));
        }
        if self.random_coefficients.len() > PRIMES.len() {
            return Err(ModelError::UnsupportedDimension(self.random_coefficients.len()));
        }
        Ok(())
    }

    /// Covariate indices of the random coefficients, in listed order.
    pub fn random_index(&self) -> Vec<usize> {
        self.random_coefficients
            .iter()
            .filter_map(|r| self.covariates.iter().position(|c| &c.name == r))
            .collect()
    }

    /// Parameter names: covariate means, then `sd(name)` per random coefficient.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.covariates.iter().map(|c| c.name.clone()).collect();
        names.extend(self.random_coefficients.iter().map(|r| format!("sd({r})")));
        names
    }

    /// Standard-normal draws for every respondent position of a dataset
    /// with `n_positions` respondents.
    pub fn mixing(&self, n_positions: usize) -> Result<Mixing, ModelError> {
        if self.n_draws == 0 {
            return Err(ModelError::Config("n_draws must be at least 1".into()));
        }
        let dims = self.random_coefficients.len();
        let u = halton_draws(n_positions, dims, self.n_draws, self.seed)?;
        let std = Normal::standard();
        let z = u
            .into_iter()
            .map(|person| person.into_iter().map(|d| d.into_iter().map(|x| std.inverse_cdf(x)).collect()).collect())
            .collect();
        Ok(Mixing { random_index: self.random_index(), z })
    }
}

/// One choice situation: covariate rows of the three alternatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub rows: Vec<Vec<f64>>,
    /// 0-based index of the chosen alternative.
    pub choice: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonData {
    pub respondent_id: String,
    /// Position in the dataset; selects the respondent's draws.
    pub position: usize,
    pub observations: Vec<Observation>,
    /// Covariate rows of scenario 6 when present.
    pub target: Option<Vec<Vec<f64>>>,
    pub truth: Option<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceData {
    pub experiment: ExperimentId,
    pub covariate_names: Vec<String>,
    pub persons: Vec<PersonData>,
    pub n_positions: usize,
}

impl ChoiceData {
    /// Scenarios 1-5 of every respondent with choices in `spec.experiment_id`.
    pub fn from_dataset(dataset: &Dataset, spec: &ModelSpec) -> Result<Self, ModelError> {
        spec.validate()?;
        let exp = spec.experiment_id;
        let design = dataset.design(exp).cloned().unwrap_or_else(|| builtin_design(exp));
        let mut persons = Vec::new();
        for (position, r) in dataset.respondents.iter().enumerate() {
            let Some(scenarios) = r.scenarios(exp) else { continue };
            let indicator_values: Vec<f64> = spec
                .covariates
                .iter()
                .map(|c| match &c.source {
                    CovariateSource::Column { .. } => 1.0,
                    CovariateSource::Interaction { indicator, .. } => indicator.value(r),
                })
                .collect();
            let mut observations = Vec::new();
            let mut target = None;
            let mut truth = None;
            for s in scenarios {
                let encoded = encode_attributes(&design, s).map_err(|e| {
                    ModelError::Input(format!("respondent '{}' {exp} scenario {}: {e}", r.id, s.index))
                })?;
                let mut rows = Vec::with_capacity(encoded.rows.len());
                for row in &encoded.rows {
                    let mut out = Vec::with_capacity(spec.covariates.len());
                    for (c, ind) in spec.covariates.iter().zip(&indicator_values) {
                        let col = encoded.column(c.source.column()).ok_or_else(|| {
                            ModelError::Spec(format!("unknown column '{}'", c.source.column()))
                        })?;
                        let v = row[col] * ind * c.scale;
                        if !v.is_finite() {
                            return Err(ModelError::Input(format!(
                                "non-finite covariate '{}' for respondent '{}' scenario {}",
                                c.name, r.id, s.index
                            )));
                        }
                        out.push(v);
                    }
                    rows.push(out);
                }
                if rows.len() != 3 {
                    return Err(ModelError::Input(format!(
                        "respondent '{}' {exp} scenario {} has {} options",
                        r.id,
                        s.index,
                        rows.len()
                    )));
                }
                match s.index {
                    1..=5 => {
                        let Some(c) = s.recorded_choice.filter(|c| (1..=3).contains(c)) else {
                            return Err(ModelError::Input(format!(
                                "respondent '{}' {exp} scenario {} lacks a recorded choice",
                                r.id, s.index
                            )));
                        };
                        observations.push(Observation { rows, choice: c as usize - 1 });
                    }
                    6 => {
                        target = Some(rows);
                        truth = s.recorded_choice;
                    }
                    _ => {}
                }
            }
            persons.push(PersonData { respondent_id: r.id.clone(), position, observations, target, truth });
        }
        if persons.iter().all(|p| p.observations.is_empty()) {
            return Err(ModelError::Input(format!("no {exp} observations")));
        }
        Ok(ChoiceData {
            experiment: exp,
            covariate_names: spec.covariates.iter().map(|c| c.name.clone()).collect(),
            persons,
            n_positions: dataset.respondents.len(),
        })
    }

    pub fn n_observations(&self) -> usize {
        self.persons.iter().map(|p| p.observations.len()).sum()
    }

    pub fn observations(&self) -> impl Iterator<Item = &Observation> {
        self.persons.iter().flat_map(|p| &p.observations)
    }
}

/// Exact MNL log-likelihood and gradient; rejects non-finite covariates.
pub fn mnl_loglik(beta: &[f64], observations: &[Observation]) -> Result<(f64, Vec<f64>), ModelError> {
    for (i, o) in observations.iter().enumerate() {
        if o.choice >= o.rows.len() {
            return Err(ModelError::Input(format!("observation {i}: choice index {} out of range", o.choice)));
        }
        for row in &o.rows {
            if row.len() != beta.len() {
                return Err(ModelError::Input(format!(
                    "observation {i}: {} covariates for {} coefficients",
                    row.len(),
                    beta.len()
                )));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(ModelError::Input(format!("observation {i}: non-finite covariate")));
            }
        }
    }
    Ok(mnl_loglik_obs(beta, observations))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceModelFit {
    pub spec: ModelSpec,
    pub parameter_names: Vec<String>,
    /// Means, then mixing standard deviations as absolute values.
    pub estimates: Vec<f64>,
    /// `null` in JSON when a parameter is unidentified.
    #[serde(with = "nonfinite")]
    pub std_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub n_respondents: usize,
    pub n_observations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

mod nonfinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| x.is_finite().then_some(*x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(raw.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
    }
}

impl ChoiceModelFit {
    pub fn means(&self) -> &[f64] {
        &self.estimates[..self.spec.covariates.len()]
    }

    pub fn std_devs(&self) -> &[f64] {
        &self.estimates[self.spec.covariates.len()..]
    }

    pub fn estimate(&self, name: &str) -> Option<(f64, f64)> {
        let i = self.parameter_names.iter().position(|n| n == name)?;
        Some((self.estimates[i], self.std_errors[i]))
    }

    /// Aligned table of estimate, standard error and t statistic.
    pub fn summary_table(&self) -> String {
        let width = self.parameter_names.iter().map(String::len).max().unwrap_or(9).max(9);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} {} respondents, {} observations, log-likelihood {:.4}, converged {}, {} iterations",
            self.spec.experiment_id,
            self.n_respondents,
            self.n_observations,
            self.log_likelihood,
            self.converged,
            self.iterations
        );
        let _ = writeln!(out, "{:<width$}  {:>12}  {:>12}  {:>8}", "parameter", "estimate", "std_error", "t");
        for i in 0..self.estimates.len() {
            let _ = writeln!(
                out,
                "{:<width$}  {:>12.6}  {:>12.6}  {:>8.3}",
                self.parameter_names[i], self.estimates[i], self.std_errors[i], self.t_stats[i]
            );
        }
        if let Some(n) = &self.note {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }
}

fn t_stats(est: &[f64], se: &[f64]) -> Vec<f64> {
    est.iter()
        .zip(se)
        .map(|(e, s)| if *s > 0.0 && s.is_finite() { e / s } else { 0.0 })
        .collect()
}

/// Largest parameter magnitude accepted as a finite optimum.
const DIVERGENCE_BOUND: f64 = 1e3;

fn separation_note(theta: &[f64], loglik: f64, n_obs: usize) -> Option<String> {
    if theta.iter().any(|t| t.abs() > DIVERGENCE_BOUND) {
        return Some(format!("parameter magnitude exceeds {DIVERGENCE_BOUND}; estimates diverge"));
    }
    if n_obs > 0 && loglik / n_obs as f64 > -1e-6 {
        return Some("choices are perfectly predicted; estimates diverge (separation)".into());
    }
    None
}

struct RawFit {
    theta: Vec<f64>,
    se: Vec<f64>,
    loglik: f64,
    converged: bool,
    iterations: usize,
    note: Option<String>,
}

fn maximize<F>(objective: F, start: &[f64], n_obs: usize) -> RawFit
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let neg = |x: &[f64]| {
        let (v, g) = objective(x);
        (-v, g.into_iter().map(|x| -x).collect::<Vec<_>>())
    };
    let out = optimize::bfgs(neg, start, &optimize::Settings::default());
    let hess = optimize::numerical_hessian(|x| neg(x).1, &out.x);
    let se = optimize::standard_errors(&hess);
    let loglik = -out.value;
    let mut converged = out.converged;
    let mut note = out.note;
    if let Some(s) = separation_note(&out.x, loglik, n_obs) {
        converged = false;
        note = Some(s);
    }
    RawFit { theta: out.x, se, loglik, converged, iterations: out.iterations, note }
}

fn finish(spec: &ModelSpec, data: &ChoiceData, raw: RawFit) -> ChoiceModelFit {
    let k = spec.covariates.len();
    let mut estimates = raw.theta;
    for w in &mut estimates[k..] {
        *w = w.abs();
    }
    let t = t_stats(&estimates, &raw.se);
    ChoiceModelFit {
        spec: spec.clone(),
        parameter_names: spec.parameter_names(),
        estimates,
        std_errors: raw.se,
        t_stats: t,
        log_likelihood: raw.loglik,
        converged: raw.converged,
        iterations: raw.iterations,
        n_respondents: data.persons.iter().filter(|p| !p.observations.is_empty()).count(),
        n_observations: data.n_observations(),
        note: raw.note,
    }
}

fn fit_mnl(spec: &ModelSpec, data: &ChoiceData) -> RawFit {
    let k = spec.covariates.len();
    maximize(|b| mnl_loglik_panel(b, data), &vec![0.0; k], data.n_observations())
}

/// Fixed-coefficient logit from beta = 0.
pub fn estimate_mnl(spec: &ModelSpec, data: &ChoiceData) -> Result<ChoiceModelFit, ModelError> {
    spec.validate()?;
    if !spec.random_coefficients.is_empty() {
        return Err(ModelError::Spec("estimate_mnl takes a spec without random coefficients".into()));
    }
    check_data(spec, data)?;
    let raw = fit_mnl(spec, data);
    Ok(finish(spec, data, raw))
}

fn check_data(spec: &ModelSpec, data: &ChoiceData) -> Result<(), ModelError> {
    let names: Vec<&str> = spec.covariates.iter().map(|c| c.name.as_str()).collect();
    if data.experiment != spec.experiment_id || data.covariate_names != names {
        return Err(ModelError::Input("choice data was prepared for a different spec".into()));
    }
    Ok(())
}

/// Panel mixed logit by maximum simulated likelihood, started from the MNL
/// optimum with every mixing standard deviation at 0.1.
pub fn estimate_mixl(spec: &ModelSpec, data: &ChoiceData) -> Result<ChoiceModelFit, ModelError> {
    spec.validate()?;
    check_data(spec, data)?;
    if spec.random_coefficients.is_empty() {
        return estimate_mnl(spec, data);
    }
    let mixing = spec.mixing(data.n_positions)?;
    let start_fit = fit_mnl(spec, data);
    let mut start = start_fit.theta;
    start.extend(std::iter::repeat_n(0.1, spec.random_coefficients.len()));
    let raw = maximize(|t| simulated_loglik(t, data, &mixing), &start, data.n_observations());
    Ok(finish(spec, data, raw))
}

/// Critical value of a two-sided normal test at level `alpha`.
pub fn critical_value(alpha: f64) -> Result<f64, ModelError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ModelError::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(Normal::standard().inverse_cdf(1.0 - alpha / 2.0))
}

/// Indices whose |t| reaches the two-sided critical value.
pub fn significant_indices(t_stats: &[f64], alpha: f64) -> Result<Vec<usize>, ModelError> {
    let z = critical_value(alpha)?;
    Ok(t_stats.iter().enumerate().filter(|(_, t)| t.abs() >= z).map(|(i, _)| i).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSelection {
    pub experiment_id: ExperimentId,
    pub alpha: f64,
    pub critical_value: f64,
    pub retained_covariates: Vec<String>,
    /// Prompt factor items kept by the scenario-10 filter.
    pub factor_items: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Covariates with a significant mean or mixing deviation, mapped to prompt
/// factor items. Design columns map to the previous-choices component;
/// interactions map to the socio-demographic or statement item they read.
pub fn significant_factors(fit: &ChoiceModelFit, alpha: f64) -> Result<FactorSelection, ModelError> {
    if !fit.converged {
        return Err(ModelError::NotConverged);
    }
    let z = critical_value(alpha)?;
    let sig: BTreeSet<usize> = significant_indices(&fit.t_stats, alpha)?.into_iter().collect();
    let k = fit.spec.covariates.len();
    let random = fit.spec.random_index();
    let mut retained = Vec::new();
    let mut items = BTreeSet::new();
    for (i, c) in fit.spec.covariates.iter().enumerate() {
        let sd_sig = random.iter().position(|&r| r == i).is_some_and(|m| sig.contains(&(k + m)));
        if !(sig.contains(&i) || sd_sig) {
            continue;
        }
        retained.push(c.name.clone());
        items.insert(match &c.source {
            CovariateSource::Column { .. } => SPC.to_string(),
            CovariateSource::Interaction { indicator, .. } => indicator.factor_item(),
        });
    }
    let warning = retained.is_empty().then(|| {
        "no covariate is significant; the filtered prompt keeps only the background and question".to_string()
    });
    if let Some(w) = &warning {
        log::warn!("{}: {w}", fit.spec.experiment_id);
    }
    Ok(FactorSelection {
        experiment_id: fit.spec.experiment_id,
        alpha,
        critical_value: z,
        retained_covariates: retained,
        factor_items: items,
        warning,
    })
}

/// Retained factor items per experiment, as consumed by the run manifest.
pub fn factor_filter_map(selections: &[FactorSelection]) -> BTreeMap<ExperimentId, BTreeSet<String>> {
    selections.iter().map(|s| (s.experiment_id, s.factor_items.clone())).collect()
}
