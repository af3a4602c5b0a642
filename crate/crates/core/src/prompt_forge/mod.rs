//! Deterministic rendering of system and user messages for each
//! (respondent, experiment, test scenario) triple.
//!
//! The system message is built from up to four sections separated by a
//! single blank line: background, previous choices, socio-demographics, and
//! personality/attitude statements. The user message carries the sixth
//! scenario's options JSON with `"Choice": null`, the list of provided
//! factors, and the output-format instruction. JSON blocks are pretty-printed
//! with two-space indentation.

mod scenarios;
mod templates;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::survey_data::{ChoiceScenario, ExperimentDesign, ExperimentId, Respondent};

pub use scenarios::{
    list_test_scenarios, test_scenario, FactorFilter, TestScenarioConfig, CHOICE_MODEL_BACKEND,
    CLOUD_BACKEND, LOCAL_BACKEND,
};
pub use templates::{fill, ExperimentTemplates, TemplateSet};

pub const SPC_LABEL: &str = "Your previous choices";
pub const SD_LABEL: &str = "Your socio-demographics";
pub const ST_LABEL: &str = "Your personality and attitudes";

/// Whole-component names used in factor filters.
pub const SPC: &str = "SPC";
pub const SD: &str = "SD";
pub const ST: &str = "ST";

pub fn sd_item(name: &str) -> String {
    format!("SD:{name}")
}

/// Statement items are numbered from 1 in dataset order.
pub fn st_item(number: usize) -> String {
    format!("ST:{number}")
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("missing template field '{0}'")]
    MissingField(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("scenario {0} is not an LLM scenario")]
    UnsupportedScenario(u8),
    #[error("scenario {scenario} needs a resolved factor filter for {experiment}")]
    UnresolvedFilter { scenario: u8, experiment: ExperimentId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_message: String,
    pub user_message: String,
    pub provided_factors: Vec<String>,
    pub response_code_legend: BTreeMap<u8, String>,
}

impl PromptBundle {
    /// Hex SHA-256 over both messages.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.system_message.as_bytes());
        h.update([0u8]);
        h.update(self.user_message.as_bytes());
        hex::encode(h.finalize())
    }
}

/// Renders prompts from a [`TemplateSet`].
#[derive(Debug, Clone)]
pub struct PromptForge {
    templates: TemplateSet,
}

impl Default for PromptForge {
    fn default() -> Self {
        PromptForge::new(TemplateSet::builtin())
    }
}

fn sociodem_lookup(r: &Respondent) -> impl Fn(&str) -> Option<String> + '_ {
    move |key| r.sociodem.get(key).map(|v| v.to_string())
}

fn options_json(scenario: &ChoiceScenario) -> Value {
    Value::Array(
        scenario
            .options
            .iter()
            .map(|o| json!({"name": o.name, "characteristics": o.characteristics()}))
            .collect(),
    )
}

fn pretty(value: &Value) -> String {
    serde_json::to_string_pretty(value).expect("json value serializes")
}

/// Python-list style rendering used in the question line, e.g. `[' Your previous choices']`.
fn factor_list(labels: &[String]) -> String {
    let items: Vec<String> = labels.iter().map(|l| format!("' {l}'")).collect();
    format!("[{}]", items.join(", "))
}

impl PromptForge {
    pub fn new(templates: TemplateSet) -> Self {
        PromptForge { templates }
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    /// Identity and experiment introduction, optional option explanations,
    /// attribute glossary and selection instruction.
    pub fn render_background(
        &self,
        r: &Respondent,
        design: &ExperimentDesign,
        include_explanations: bool,
    ) -> Result<String, PromptError> {
        let t = self.templates.get(design.id)?;
        let mut parts = vec![fill(&design.experiment_intro, sociodem_lookup(r))?];
        if include_explanations {
            if !t.explanations_header.is_empty() {
                parts.push(t.explanations_header.clone());
            }
            parts.extend(design.option_explanations.iter().cloned());
        }
        parts.push(t.characteristics.clone());
        Ok(parts.join("\n\n"))
    }

    /// The "previous choices" section: header plus a JSON array of the first
    /// five scenarios with their recorded choices.
    pub fn render_sp_choices(
        &self,
        design: &ExperimentDesign,
        scenarios: &[ChoiceScenario],
    ) -> Result<String, PromptError> {
        if scenarios.len() != 5 {
            return Err(PromptError::Precondition(format!(
                "expected the first five scenarios, got {}",
                scenarios.len()
            )));
        }
        let mut items = Vec::with_capacity(5);
        for (pos, s) in scenarios.iter().enumerate() {
            if s.index as usize != pos + 1 {
                return Err(PromptError::Precondition(format!(
                    "scenario {} passed where scenario {} was expected",
                    s.index,
                    pos + 1
                )));
            }
            let choice = s
                .recorded_choice
                .and_then(|c| design.option_name(c))
                .ok_or_else(|| {
                    PromptError::Precondition(format!("scenario {} has no recorded choice", s.index))
                })?;
            items.push(json!({"options": options_json(s), "Choice": choice}));
        }
        let t = self.templates.get(design.id)?;
        Ok(format!("{}\n\n{}", t.choices_header, pretty(&Value::Array(items))))
    }

    /// Statements section; empty when no statement survives.
    pub fn render_statements(
        &self,
        r: &Respondent,
        experiment: ExperimentId,
    ) -> Result<String, PromptError> {
        self.statements_section(r, experiment, None)
    }

    pub fn render_sociodemographics(
        &self,
        r: &Respondent,
        experiment: ExperimentId,
    ) -> Result<String, PromptError> {
        self.sociodem_section(r, experiment, None)
    }

    fn statements_section(
        &self,
        r: &Respondent,
        experiment: ExperimentId,
        retained: Option<&BTreeSet<String>>,
    ) -> Result<String, PromptError> {
        let t = self.templates.get(experiment)?;
        let keep_all = retained.is_none_or(|s| s.contains(ST));
        let mut sentences = Vec::new();
        for (i, st) in r.statements.iter().enumerate() {
            if !keep_all && !retained.is_some_and(|s| s.contains(&st_item(i + 1))) {
                continue;
            }
            if !st.text.contains("{{") {
                return Err(PromptError::Template(format!(
                    "statement {} lacks a {{{{level}}}} placeholder",
                    i + 1
                )));
            }
            sentences.push(fill(&st.text, |k| (k == "level").then(|| st.level.clone()))?);
        }
        if sentences.is_empty() {
            return Ok(String::new());
        }
        Ok(format!("{}\n\n{}", t.statements_header, sentences.join(" ")))
    }

    fn sociodem_section(
        &self,
        r: &Respondent,
        experiment: ExperimentId,
        retained: Option<&BTreeSet<String>>,
    ) -> Result<String, PromptError> {
        let t = self.templates.get(experiment)?;
        let keep_all = retained.is_none_or(|s| s.contains(SD));
        let mut sentences = Vec::new();
        for (item, template) in &t.sociodem_items {
            if !keep_all && !retained.is_some_and(|s| s.contains(&sd_item(item))) {
                continue;
            }
            sentences.push(fill(template, sociodem_lookup(r))?);
        }
        if sentences.is_empty() {
            return Ok(String::new());
        }
        Ok(format!("{}\n\n{}", t.sociodem_header, sentences.join(" ")))
    }

    /// Builds the full prompt for one respondent under one test scenario.
    pub fn assemble_prompt(
        &self,
        r: &Respondent,
        design: &ExperimentDesign,
        cfg: &TestScenarioConfig,
    ) -> Result<PromptBundle, PromptError> {
        if !cfg.is_llm_scenario {
            return Err(PromptError::UnsupportedScenario(cfg.id));
        }
        let retained: Option<&BTreeSet<String>> = match &cfg.factor_filter {
            None => None,
            Some(FactorFilter::ChoiceModel) => {
                return Err(PromptError::UnresolvedFilter {
                    scenario: cfg.id,
                    experiment: design.id,
                })
            }
            Some(FactorFilter::Retain(map)) => Some(map.get(&design.id).ok_or(
                PromptError::UnresolvedFilter {
                    scenario: cfg.id,
                    experiment: design.id,
                },
            )?),
        };
        let scenarios = r.scenarios(design.id).ok_or_else(|| {
            PromptError::Precondition(format!("respondent '{}' has no {} scenarios", r.id, design.id))
        })?;
        let target = scenarios.iter().find(|s| s.index == 6).ok_or_else(|| {
            PromptError::Precondition(format!("respondent '{}' lacks {} scenario 6", r.id, design.id))
        })?;

        let mut sections = vec![self.render_background(r, design, cfg.include_option_explanations)?];
        let mut provided = Vec::new();
        if cfg.include_spc && retained.is_none_or(|s| s.contains(SPC)) {
            let context: Vec<ChoiceScenario> = scenarios.iter().filter(|s| s.index <= 5).cloned().collect();
            sections.push(self.render_sp_choices(design, &context)?);
            provided.push(SPC_LABEL.to_string());
        }
        if cfg.include_sd {
            let text = self.sociodem_section(r, design.id, retained)?;
            if !text.is_empty() {
                sections.push(text);
                provided.push(SD_LABEL.to_string());
            }
        }
        if cfg.include_st {
            let text = self.statements_section(r, design.id, retained)?;
            if !text.is_empty() {
                sections.push(text);
                provided.push(ST_LABEL.to_string());
            }
        }

        let t = self.templates.get(design.id)?;
        let question_json = pretty(&json!({"options": options_json(target), "Choice": Value::Null}));
        let factors_line = fill(&t.factors, |k| (k == "factors").then(|| factor_list(&provided)))?;
        let output_format = if cfg.require_explanation {
            &t.output_format
        } else {
            &t.output_format_no_explanation
        };
        let user_message = [t.question.as_str(), &question_json, &factors_line, output_format].join("\n\n");

        Ok(PromptBundle {
            system_message: sections.join("\n\n"),
            user_message,
            provided_factors: provided,
            response_code_legend: design
                .option_names
                .iter()
                .enumerate()
                .map(|(i, n)| (i as u8 + 1, n.clone()))
                .collect(),
        })
    }
}
