//! Synthetic survey populations generated from a known random-utility
//! model, with an oracle of the true choice probabilities.

mod pools;

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gumbel, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::choice_model::{ChoiceModelFit, Covariate, ModelSpec};
use crate::survey_data::{
    builtin_design, column_names, encode_attributes, parse_level, ChoiceOption, ChoiceScenario, Dataset,
    ExperimentId, Respondent, SociodemValue, Statement,
};

pub use pools::{default_pools, default_sociodem, default_statements, default_true_params};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid population spec: {0}")]
    Spec(String),
}

/// Levels for one attribute, per option (or one list when `shared`).
/// `None` renders as a JSON null (attribute not applicable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributePool {
    pub attribute: String,
    /// One level drawn per scenario and shown for every option.
    #[serde(default)]
    pub shared: bool,
    pub levels: Vec<Vec<Option<String>>>,
}

/// Means `b*` and mixing standard deviations `w*` keyed by design column.
/// Columns absent from `means` have coefficient 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrueParams {
    pub means: BTreeMap<String, f64>,
    #[serde(default)]
    pub std_devs: BTreeMap<String, f64>,
}

impl TrueParams {
    pub fn without_mixing(&self) -> Self {
        TrueParams { means: self.means.clone(), std_devs: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedValue {
    pub value: SociodemValue,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SociodemSampler {
    pub fields: BTreeMap<String, Vec<WeightedValue>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatementSpec {
    /// Fragment with a `{{level}}` placeholder.
    pub text: String,
    pub levels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub n_respondents: usize,
    pub seed: u64,
    #[serde(default = "all_experiments")]
    pub experiments: Vec<ExperimentId>,
    /// Defaults per experiment when absent.
    #[serde(default)]
    pub true_params: BTreeMap<ExperimentId, TrueParams>,
    #[serde(default)]
    pub pools: BTreeMap<ExperimentId, Vec<AttributePool>>,
    #[serde(default = "default_sociodem")]
    pub sociodem: SociodemSampler,
    #[serde(default = "default_statements")]
    pub statements: Vec<StatementSpec>,
    /// Recorded choices maximize systematic utility without Gumbel noise.
    #[serde(default)]
    pub deterministic: bool,
}

fn all_experiments() -> Vec<ExperimentId> {
    ExperimentId::ALL.to_vec()
}

impl PopulationSpec {
    pub fn new(n_respondents: usize, seed: u64) -> Self {
        PopulationSpec {
            n_respondents,
            seed,
            experiments: all_experiments(),
            true_params: ExperimentId::ALL.iter().map(|&e| (e, default_true_params(e))).collect(),
            pools: ExperimentId::ALL.iter().map(|&e| (e, default_pools(e))).collect(),
            sociodem: default_sociodem(),
            statements: default_statements(),
            deterministic: false,
        }
    }

    pub fn params(&self, exp: ExperimentId) -> TrueParams {
        self.true_params.get(&exp).cloned().unwrap_or_else(|| default_true_params(exp))
    }

    pub fn pools_for(&self, exp: ExperimentId) -> Vec<AttributePool> {
        self.pools.get(&exp).cloned().unwrap_or_else(|| default_pools(exp))
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Spec(m));
        if self.n_respondents == 0 {
            return bad("n_respondents must be at least 1".into());
        }
        for &exp in &self.experiments {
            let design = builtin_design(exp);
            let pools = self.pools_for(exp);
            for name in &design.attribute_schema {
                let Some(p) = pools.iter().find(|p| &p.attribute == name) else {
                    return bad(format!("{exp}: no pool for attribute '{name}'"));
                };
                let expected = if p.shared { 1 } else { 3 };
                if p.levels.len() != expected {
                    return bad(format!("{exp} '{name}': expected {expected} level list(s), got {}", p.levels.len()));
                }
                if p.levels.iter().any(Vec::is_empty) {
                    return bad(format!("{exp} '{name}': empty level pool"));
                }
                for display in p.levels.iter().flatten().flatten() {
                    let level = parse_level(exp, name, Some(display));
                    if level.numeric_value.is_none() && level.categorical_code.is_none() {
                        return bad(format!("{exp} '{name}': level '{display}' does not parse"));
                    }
                }
            }
            let cols = column_names(exp);
            let params = self.params(exp);
            for (col, v) in params.means.iter().chain(&params.std_devs) {
                if !cols.contains(col) {
                    return bad(format!("{exp}: unknown column '{col}' in true params"));
                }
                if !v.is_finite() {
                    return bad(format!("{exp}: non-finite parameter for '{col}'"));
                }
            }
        }
        for (key, values) in &self.sociodem.fields {
            if values.is_empty() || values.iter().any(|w| !(w.weight >= 0.0 && w.weight.is_finite())) {
                return bad(format!("sociodem '{key}': needs non-empty, non-negative weights"));
            }
            if values.iter().all(|w| w.weight == 0.0) {
                return bad(format!("sociodem '{key}': all weights are zero"));
            }
        }
        for (i, s) in self.statements.iter().enumerate() {
            if s.levels.is_empty() || !s.text.contains("{{level}}") {
                return bad(format!("statement {}: needs levels and a {{{{level}}}} placeholder", i + 1));
            }
        }
        Ok(())
    }
}

/// True choice probabilities of one respondent, scenarios 1..6.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RespondentOracle {
    pub respondent_id: String,
    pub beta: BTreeMap<String, f64>,
    pub probabilities: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    pub seed: u64,
    pub deterministic: bool,
    pub true_params: BTreeMap<ExperimentId, TrueParams>,
    pub respondents: BTreeMap<ExperimentId, Vec<RespondentOracle>>,
}

impl Oracle {
    pub fn probabilities(&self, exp: ExperimentId, respondent_id: &str, scenario: u8) -> Option<[f64; 3]> {
        let r = self.respondents.get(&exp)?.iter().find(|r| r.respondent_id == respondent_id)?;
        r.probabilities.get(scenario.checked_sub(1)? as usize).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("oracle serializes")
    }
}

fn softmax(v: &[f64]) -> [f64; 3] {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    [e[0] / s, e[1] / s, e[2] / s]
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn sample_scenario(rng: &mut ChaCha8Rng, exp: ExperimentId, index: u8, pools: &[AttributePool]) -> ChoiceScenario {
    let design = builtin_design(exp);
    let mut options: Vec<ChoiceOption> = design
        .option_names
        .iter()
        .map(|n| ChoiceOption { name: n.clone(), attributes: Vec::new() })
        .collect();
    for name in &design.attribute_schema {
        let pool = pools.iter().find(|p| &p.attribute == name).expect("validated pool");
        let shared_pick = pool.shared.then(|| pool.levels[0][rng.random_range(0..pool.levels[0].len())].clone());
        for (i, option) in options.iter_mut().enumerate() {
            let display = match &shared_pick {
                Some(d) => d.clone(),
                None => pool.levels[i][rng.random_range(0..pool.levels[i].len())].clone(),
            };
            option.attributes.push(parse_level(exp, name, display.as_deref()));
        }
    }
    ChoiceScenario { index, options, recorded_choice: None }
}

/// Draws a population. Output is a pure function of `spec`.
pub fn generate_population(spec: &PopulationSpec) -> Result<(Dataset, Oracle), SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gumbel = Gumbel::new(0.0, 1.0).expect("unit gumbel");
    let width = spec.n_respondents.to_string().len().max(4);
    let samplers: Vec<(&String, &Vec<WeightedValue>, WeightedIndex<f64>)> = spec
        .sociodem
        .fields
        .iter()
        .map(|(k, v)| (k, v, WeightedIndex::new(v.iter().map(|w| w.weight)).expect("validated weights")))
        .collect();

    let mut respondents = Vec::with_capacity(spec.n_respondents);
    let mut oracle_rows: BTreeMap<ExperimentId, Vec<RespondentOracle>> = BTreeMap::new();
    for n in 0..spec.n_respondents {
        let id = format!("syn-{:0width$}", n + 1);
        let sociodem = samplers
            .iter()
            .map(|(k, values, dist)| ((*k).clone(), values[dist.sample(&mut rng)].value.clone()))
            .collect();
        let statements = spec
            .statements
            .iter()
            .map(|s| Statement { text: s.text.clone(), level: s.levels[rng.random_range(0..s.levels.len())].clone() })
            .collect();
        let mut experiments = BTreeMap::new();
        for &exp in &spec.experiments {
            let design = builtin_design(exp);
            let cols = column_names(exp);
            let params = spec.params(exp);
            let pools = spec.pools_for(exp);
            let beta: Vec<f64> = cols
                .iter()
                .map(|c| {
                    let b = params.means.get(c).copied().unwrap_or(0.0);
                    match params.std_devs.get(c) {
                        Some(w) if *w != 0.0 => {
                            let z: f64 = rng.sample(StandardNormal);
                            b + w * z
                        }
                        _ => b,
                    }
                })
                .collect();
            let mut scenarios = Vec::with_capacity(6);
            let mut probs = Vec::with_capacity(6);
            for index in 1..=6u8 {
                let mut s = sample_scenario(&mut rng, exp, index, &pools);
                let enc = encode_attributes(&design, &s).expect("pool levels encode");
                let v: Vec<f64> = enc.rows.iter().map(|x| x.iter().zip(&beta).map(|(a, b)| a * b).sum()).collect();
                let choice = if spec.deterministic {
                    let k = argmax(&v);
                    let mut one_hot = [0.0; 3];
                    one_hot[k] = 1.0;
                    probs.push(one_hot);
                    k
                } else {
                    probs.push(softmax(&v));
                    let noisy: Vec<f64> = v.iter().map(|x| x + gumbel.sample(&mut rng)).collect();
                    argmax(&noisy)
                };
                s.recorded_choice = Some(choice as u8 + 1);
                scenarios.push(s);
            }
            experiments.insert(exp, scenarios);
            oracle_rows.entry(exp).or_default().push(RespondentOracle {
                respondent_id: id.clone(),
                beta: cols.iter().cloned().zip(beta).collect(),
                probabilities: probs,
            });
        }
        respondents.push(Respondent { id, sociodem, statements, experiments });
    }
    let dataset = Dataset {
        respondents,
        designs: spec.experiments.iter().map(|&e| (e, builtin_design(e))).collect(),
    };
    let oracle = Oracle {
        seed: spec.seed,
        deterministic: spec.deterministic,
        true_params: spec.experiments.iter().map(|&e| (e, spec.params(e))).collect(),
        respondents: oracle_rows,
    };
    Ok((dataset, oracle))
}

/// Expected accuracy of the Bayes-optimal predictor on scenario 6: mean
/// over respondents of the largest true probability, for one experiment.
pub fn oracle_accuracy_bound_for(oracle: &Oracle, dataset: &Dataset, exp: ExperimentId) -> Option<f64> {
    let maxima: Vec<f64> = dataset
        .respondents
        .iter()
        .filter_map(|r| oracle.probabilities(exp, &r.id, 6))
        .map(|p| p.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    (!maxima.is_empty()).then(|| maxima.iter().sum::<f64>() / maxima.len() as f64)
}

/// Bound pooled over every (respondent, experiment) pair the oracle knows.
pub fn oracle_accuracy_bound(oracle: &Oracle, dataset: &Dataset) -> Option<f64> {
    let mut maxima = Vec::new();
    for &exp in oracle.respondents.keys() {
        for r in &dataset.respondents {
            if let Some(p) = oracle.probabilities(exp, &r.id, 6) {
                maxima.push(p.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            }
        }
    }
    (!maxima.is_empty()).then(|| maxima.iter().sum::<f64>() / maxima.len() as f64)
}

/// A fit carrying the true parameters, for prediction with the
/// data-generating model. Columns without a true mean get 0.
pub fn true_model_fit(params: &TrueParams, exp: ExperimentId, n_draws: usize, seed: u64) -> ChoiceModelFit {
    let cols = column_names(exp);
    let random: Vec<String> =
        cols.iter().filter(|c| params.std_devs.get(*c).is_some_and(|w| *w != 0.0)).cloned().collect();
    let spec = ModelSpec {
        experiment_id: exp,
        covariates: cols.iter().map(|c| Covariate::column(c)).collect(),
        random_coefficients: random.clone(),
        n_draws,
        seed,
        condition_on_history: true,
    };
    let mut estimates: Vec<f64> = cols.iter().map(|c| params.means.get(c).copied().unwrap_or(0.0)).collect();
    estimates.extend(random.iter().map(|c| params.std_devs[c].abs()));
    let n = estimates.len();
    ChoiceModelFit {
        parameter_names: spec.parameter_names(),
        spec,
        estimates,
        std_errors: vec![0.0; n],
        t_stats: vec![0.0; n],
        log_likelihood: 0.0,
        converged: true,
        iterations: 0,
        n_respondents: 0,
        n_observations: 0,
        note: Some("true data-generating parameters".into()),
    }
}

#[cfg(test)]
mod tests;
