use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::survey_data::ExperimentId;

pub const LOCAL_BACKEND: &str = "local";
pub const CLOUD_BACKEND: &str = "cloud";
pub const CHOICE_MODEL_BACKEND: &str = "choice_model";

/// Which prompt items survive choice-model screening (scenario 10).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorFilter {
    /// Placeholder: the retained set comes from a fitted choice model and must
    /// be resolved before prompts can be assembled.
    ChoiceModel,
    /// Retained item names per experiment. Names are whole components
    /// (`SPC`, `SD`, `ST`) or single items (`SD:income`, `ST:3`).
    Retain(BTreeMap<ExperimentId, BTreeSet<String>>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestScenarioConfig {
    pub id: u8,
    pub code: String,
    pub include_spc: bool,
    pub include_sd: bool,
    pub include_st: bool,
    pub include_option_explanations: bool,
    pub require_explanation: bool,
    pub factor_filter: Option<FactorFilter>,
    pub backend_id: String,
    pub is_llm_scenario: bool,
}

impl TestScenarioConfig {
    fn llm(id: u8, code: &str, spc: bool, sd: bool, st: bool) -> Self {
        TestScenarioConfig {
            id,
            code: code.to_string(),
            include_spc: spc,
            include_sd: sd,
            include_st: st,
            include_option_explanations: true,
            require_explanation: true,
            factor_filter: None,
            backend_id: LOCAL_BACKEND.to_string(),
            is_llm_scenario: true,
        }
    }

    /// Replaces a pending choice-model filter with concrete retained sets.
    pub fn with_resolved_filter(mut self, retained: BTreeMap<ExperimentId, BTreeSet<String>>) -> Self {
        if self.factor_filter.is_some() {
            self.factor_filter = Some(FactorFilter::Retain(retained));
        }
        self
    }
}

/// The thirteen-row ablation matrix, in order.
pub fn list_test_scenarios() -> Vec<TestScenarioConfig> {
    let full = |id, code: &str| TestScenarioConfig::llm(id, code, true, true, true);
    vec![
        TestScenarioConfig::llm(1, "N (default)", false, false, false),
        TestScenarioConfig::llm(2, "SPC", true, false, false),
        TestScenarioConfig::llm(3, "SD", false, true, false),
        TestScenarioConfig::llm(4, "ST", false, false, true),
        TestScenarioConfig::llm(5, "SPC+SD", true, true, false),
        TestScenarioConfig::llm(6, "SD+ST", false, true, true),
        TestScenarioConfig::llm(7, "SPC+ST", true, false, true),
        full(8, "SPC+SD+ST"),
        TestScenarioConfig {
            include_option_explanations: false,
            ..full(9, "SPC+SD+ST(-OP)")
        },
        TestScenarioConfig {
            factor_filter: Some(FactorFilter::ChoiceModel),
            ..full(10, "SPC+SD+ST(MLM)")
        },
        TestScenarioConfig {
            require_explanation: false,
            ..full(11, "SPC+SD+ST(-COT)")
        },
        TestScenarioConfig {
            backend_id: CLOUD_BACKEND.to_string(),
            ..full(12, "SPC+SD+ST (GPT)")
        },
        TestScenarioConfig {
            backend_id: CHOICE_MODEL_BACKEND.to_string(),
            is_llm_scenario: false,
            ..TestScenarioConfig::llm(13, "MLM", false, false, false)
        },
    ]
}

pub fn test_scenario(id: u8) -> Option<TestScenarioConfig> {
    list_test_scenarios().into_iter().find(|s| s.id == id)
}
