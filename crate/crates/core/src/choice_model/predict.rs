use serde::{Deserialize, Serialize};

use super::likelihood::{draw_weights, probabilities};
use super::{ChoiceData, ChoiceModelFit, ModelError};
use crate::prompt_forge::CHOICE_MODEL_BACKEND;
use crate::response_codec::{IgnoredCounts, ResponseStatus, SimResponse};
use crate::scenario_runner::SimulationRecord;
use crate::survey_data::{Dataset, ExperimentId};

/// Scenario id under which choice-model predictions are reported.
pub const PREDICTION_SCENARIO: u8 = 13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub respondent_id: String,
    pub probabilities: [f64; 3],
    /// 1-based; ties go to the lowest option.
    pub choice: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub experiment_id: ExperimentId,
    pub predictions: Vec<Prediction>,
    /// Respondents without a scenario 6.
    pub skipped: Vec<String>,
}

impl PredictionSet {
    /// Records for the metrics report; predictions without a recorded truth
    /// are left out.
    pub fn to_records(&self, run_id: &str) -> Vec<SimulationRecord> {
        self.predictions
            .iter()
            .filter_map(|p| {
                let truth = p.truth?;
                let raw = serde_json::json!({"Choice": p.choice}).to_string();
                Some(SimulationRecord {
                    run_id: run_id.to_string(),
                    respondent_id: p.respondent_id.clone(),
                    experiment_id: self.experiment_id,
                    scenario_id: PREDICTION_SCENARIO,
                    repeat_index: 0,
                    response: SimResponse {
                        status: ResponseStatus::Valid,
                        choice: Some(p.choice),
                        explanation: None,
                        ignored_raw: vec![],
                        ignored_canonical: IgnoredCounts::default(),
                        raw_text: raw,
                    },
                    truth,
                    prompt_digest: String::new(),
                    backend_id: CHOICE_MODEL_BACKEND.to_string(),
                    attempts: 0,
                    content_attempts: 0,
                    latency_ms: 0,
                    excluded: false,
                    error: None,
                })
            })
            .collect()
    }

    pub fn accuracy(&self) -> Option<f64> {
        let scored: Vec<_> = self.predictions.iter().filter_map(|p| p.truth.map(|t| p.choice == t)).collect();
        (!scored.is_empty()).then(|| scored.iter().filter(|h| **h).count() as f64 / scored.len() as f64)
    }
}

fn argmax(p: &[f64; 3]) -> u8 {
    let mut best = 0;
    for k in 1..3 {
        if p[k] > p[best] {
            best = k;
        }
    }
    best as u8 + 1
}

/// Scenario-6 choice probabilities per respondent, averaged over the fit's
/// draws and, when the model specification asks for it, weighted by the likelihood of the
/// respondent's scenario 1-5 choices under each draw.
pub fn predict_choices(fit: &ChoiceModelFit, dataset: &Dataset) -> Result<PredictionSet, ModelError> {
    let spec = &fit.spec;
    let data = ChoiceData::from_dataset(dataset, spec)?;
    let k = spec.covariates.len();
    if fit.estimates.len() != k + spec.random_coefficients.len() {
        return Err(ModelError::Spec("fit estimates do not match its spec".into()));
    }
    let mixing = if spec.random_coefficients.is_empty() { None } else { Some(spec.mixing(data.n_positions)?) };
    let mut predictions = Vec::new();
    let mut skipped = Vec::new();
    for p in &data.persons {
        let Some(rows) = &p.target else {
            log::info!("respondent '{}' has no scenario 6; skipped", p.respondent_id);
            skipped.push(p.respondent_id.clone());
            continue;
        };
        let probs: Vec<f64> = match &mixing {
            None => probabilities(&fit.estimates[..k], rows),
            Some(mix) => {
                let r_count = mix.n_draws();
                let weights = if spec.condition_on_history {
                    draw_weights(&fit.estimates, k, mix, p)
                } else {
                    vec![1.0 / r_count as f64; r_count]
                };
                let mut acc = vec![0.0; rows.len()];
                for (r, w) in weights.iter().enumerate() {
                    let beta = mix.beta(&fit.estimates, k, p.position, r);
                    for (a, pr) in acc.iter_mut().zip(probabilities(&beta, rows)) {
                        *a += w * pr;
                    }
                }
                acc
            }
        };
        let probabilities = [probs[0], probs[1], probs[2]];
        predictions.push(Prediction {
            respondent_id: p.respondent_id.clone(),
            probabilities,
            choice: argmax(&probabilities),
            truth: p.truth,
        });
    }
    // Respondents with no scenarios at all in this experiment.
    for r in &dataset.respondents {
        if r.scenarios(spec.experiment_id).is_none() {
            skipped.push(r.id.clone());
        }
    }
    Ok(PredictionSet { experiment_id: spec.experiment_id, predictions, skipped })
}
