//! Survey dataset model: respondents, experiment designs, choice scenarios.
//!
//! The on-disk format is a single JSON document
//! `{"designs": {...}, "respondents": [...]}` whose scenario objects mirror
//! the options JSON shown to the model (`{"options": [...], "Choice": name}`).

mod attributes;
mod io;
mod model;
mod stratify;
mod validate;

pub use attributes::{
    attribute_spec, attribute_specs, column_names, encode_attributes, match_category,
    parse_level, parse_magnitude, AttributeKind, AttributeSpec, CategoryLevel, EncodedScenario,
};
pub use io::{
    dataset_digest, load_dataset, parse_dataset, parse_dataset_unchecked, scenario_from_options_json,
    to_json_string,
};
pub use model::{
    keys, AttributeLevel, ChoiceOption, ChoiceScenario, Dataset, ExperimentDesign, ExperimentId,
    Respondent, SociodemValue, Statement,
};
pub use stratify::{parse_income_band, stratify, Criterion, Stratification};
pub use validate::{validate_dataset, Violation};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SurveyError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {location}: {message}")]
    Format { location: String, message: String },
    #[error("dataset failed validation with {} violation(s); first: {}", .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    Validation(Vec<Violation>),
    #[error("encoding error: {message}")]
    Encoding { message: String },
}

pub(crate) mod builtin_text {
    use super::ExperimentId;

    pub struct ExperimentTexts {
        pub intro: &'static str,
        pub option_explanations: &'static str,
    }

    pub fn texts(id: ExperimentId) -> ExperimentTexts {
        match id {
            ExperimentId::SP1 => ExperimentTexts {
                intro: include_str!("../../templates/v1/SP1/intro.txt"),
                option_explanations: include_str!("../../templates/v1/SP1/option_explanations.txt"),
            },
            ExperimentId::SP2 => ExperimentTexts {
                intro: include_str!("../../templates/v1/SP2/intro.txt"),
                option_explanations: include_str!("../../templates/v1/SP2/option_explanations.txt"),
            },
            ExperimentId::SP3 => ExperimentTexts {
                intro: include_str!("../../templates/v1/SP3/intro.txt"),
                option_explanations: include_str!("../../templates/v1/SP3/option_explanations.txt"),
            },
        }
    }
}

/// Option names as they appear in the options JSON shown to respondents.
pub fn builtin_option_names(id: ExperimentId) -> [&'static str; 3] {
    match id {
        ExperimentId::SP1 => ["Gas boiler", "Hydrogen ready boiler", "Air source heat pump"],
        ExperimentId::SP2 => ["No retrofit", "Minor retrofit", "Major retrofit"],
        ExperimentId::SP3 => ["Full ownership", "Shared ownership", "Service-based"],
    }
}

/// The heating-survey design for an experiment, with intro and option
/// explanations taken from the bundled template files.
pub fn builtin_design(id: ExperimentId) -> ExperimentDesign {
    let texts = builtin_text::texts(id);
    ExperimentDesign {
        id,
        option_names: builtin_option_names(id).iter().map(|s| s.to_string()).collect(),
        attribute_schema: attribute_specs(id).iter().map(|s| s.name.to_string()).collect(),
        option_explanations: texts
            .option_explanations
            .split("\n\n")
            .map(|p| p.trim().to_string())
            .filter(|p| !p.is_empty())
            .collect(),
        experiment_intro: texts.intro.trim().to_string(),
    }
}

pub fn builtin_designs() -> std::collections::BTreeMap<ExperimentId, ExperimentDesign> {
    ExperimentId::ALL.iter().map(|&id| (id, builtin_design(id))).collect()
}
