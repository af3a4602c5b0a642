use std::collections::BTreeMap;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::attributes::parse_level;
use super::model::{
    ChoiceOption, ChoiceScenario, Dataset, ExperimentDesign, ExperimentId, Respondent,
    SociodemValue, Statement,
};
use super::validate::validate_dataset;
use super::SurveyError;

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    designs: BTreeMap<ExperimentId, ExperimentDesign>,
    respondents: Vec<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct RespondentFile {
    id: String,
    #[serde(default)]
    sociodem: BTreeMap<String, SociodemValue>,
    #[serde(default)]
    statements: Vec<Statement>,
    #[serde(default)]
    experiments: BTreeMap<ExperimentId, Vec<ScenarioFile>>,
}

#[derive(Serialize, Deserialize)]
struct ScenarioFile {
    options: Vec<OptionFile>,
    #[serde(rename = "Choice", default)]
    choice: Option<ChoiceField>,
}

#[derive(Serialize, Deserialize)]
struct OptionFile {
    name: String,
    characteristics: IndexMap<String, Option<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ChoiceField {
    Code(i64),
    Name(String),
}

/// Reads, parses and validates a dataset file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, SurveyError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SurveyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text)
}

/// Parses and validates dataset JSON text.
pub fn parse_dataset(text: &str) -> Result<Dataset, SurveyError> {
    let dataset = parse_dataset_unchecked(text)?;
    let violations = validate_dataset(&dataset);
    if violations.is_empty() {
        Ok(dataset)
    } else {
        Err(SurveyError::Validation(violations))
    }
}

/// Parses dataset JSON without running invariant checks, so that callers can
/// list every violation.
pub fn parse_dataset_unchecked(text: &str) -> Result<Dataset, SurveyError> {
    let file: DatasetFile = serde_json::from_str(text).map_err(|e| SurveyError::Format {
        location: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let designs = file.designs;
    let mut respondents = Vec::with_capacity(file.respondents.len());
    for (i, value) in file.respondents.into_iter().enumerate() {
        let hint = value
            .get("id")
            .and_then(|v| v.as_str())
            .map(|s| format!("respondent '{s}'"))
            .unwrap_or_else(|| format!("respondent #{i}"));
        let raw: RespondentFile = serde_json::from_value(value).map_err(|e| SurveyError::Format {
            location: hint.clone(),
            message: e.to_string(),
        })?;
        respondents.push(respondent_from_file(raw, &designs)?);
    }
    Ok(Dataset { respondents, designs })
}

fn respondent_from_file(
    raw: RespondentFile,
    designs: &BTreeMap<ExperimentId, ExperimentDesign>,
) -> Result<Respondent, SurveyError> {
    let mut experiments = BTreeMap::new();
    for (exp, scenarios) in raw.experiments {
        let design = designs.get(&exp);
        let mut out = Vec::with_capacity(scenarios.len());
        for (pos, scenario) in scenarios.into_iter().enumerate() {
            let index = pos as u8 + 1;
            let recorded_choice = match scenario.choice {
                None => None,
                Some(ChoiceField::Code(c)) => Some(c.clamp(0, u8::MAX as i64) as u8),
                Some(ChoiceField::Name(name)) => {
                    let code = design.and_then(|d| d.option_code(&name)).ok_or_else(|| {
                        SurveyError::Format {
                            location: format!("respondent '{}' {exp} scenario {index}", raw.id),
                            message: format!("recorded choice '{name}' is not an option name"),
                        }
                    })?;
                    Some(code)
                }
            };
            let options = scenario
                .options
                .into_iter()
                .map(|o| ChoiceOption {
                    attributes: o
                        .characteristics
                        .iter()
                        .map(|(attr, display)| parse_level(exp, attr, display.as_deref()))
                        .collect(),
                    name: o.name,
                })
                .collect();
            out.push(ChoiceScenario {
                index,
                options,
                recorded_choice,
            });
        }
        experiments.insert(exp, out);
    }
    Ok(Respondent {
        id: raw.id,
        sociodem: raw.sociodem,
        statements: raw.statements,
        experiments,
    })
}

fn scenario_to_file(scenario: &ChoiceScenario, design: Option<&ExperimentDesign>) -> ScenarioFile {
    ScenarioFile {
        options: scenario
            .options
            .iter()
            .map(|o| OptionFile {
                name: o.name.clone(),
                characteristics: o.characteristics(),
            })
            .collect(),
        choice: scenario.recorded_choice.map(|code| {
            match design.and_then(|d| d.option_name(code)) {
                Some(name) => ChoiceField::Name(name.to_string()),
                None => ChoiceField::Code(code as i64),
            }
        }),
    }
}

/// Rebuilds a scenario from an options block (`{"options": [...], ...}`),
/// inferring the experiment from the option names.
pub fn scenario_from_options_json(
    value: &serde_json::Value,
    index: u8,
) -> Result<(ExperimentId, ChoiceScenario), SurveyError> {
    let format = |message: String| SurveyError::Format {
        location: "options block".to_string(),
        message,
    };
    let options: Vec<OptionFile> = value
        .get("options")
        .cloned()
        .ok_or_else(|| format("missing 'options'".to_string()))
        .and_then(|v| serde_json::from_value(v).map_err(|e| format(e.to_string())))?;
    let names: Vec<&str> = options.iter().map(|o| o.name.as_str()).collect();
    let exp = ExperimentId::ALL
        .into_iter()
        .find(|e| super::builtin_option_names(*e).iter().zip(&names).all(|(a, b)| a.eq_ignore_ascii_case(b)) && names.len() == 3)
        .ok_or_else(|| format(format!("option names {names:?} match no experiment")))?;
    let options = options
        .into_iter()
        .map(|o| ChoiceOption {
            attributes: o
                .characteristics
                .iter()
                .map(|(attr, display)| parse_level(exp, attr, display.as_deref()))
                .collect(),
            name: o.name,
        })
        .collect();
    Ok((
        exp,
        ChoiceScenario {
            index,
            options,
            recorded_choice: None,
        },
    ))
}

/// Canonical pretty-printed JSON for a dataset.
pub fn to_json_string(dataset: &Dataset) -> String {
    let respondents = dataset
        .respondents
        .iter()
        .map(|r| {
            let file = RespondentFile {
                id: r.id.clone(),
                sociodem: r.sociodem.clone(),
                statements: r.statements.clone(),
                experiments: r
                    .experiments
                    .iter()
                    .map(|(exp, scenarios)| {
                        let design = dataset.designs.get(exp);
                        (*exp, scenarios.iter().map(|s| scenario_to_file(s, design)).collect())
                    })
                    .collect(),
            };
            serde_json::to_value(file).expect("respondent serializes")
        })
        .collect();
    let file = DatasetFile {
        designs: dataset.designs.clone(),
        respondents,
    };
    serde_json::to_string_pretty(&file).expect("dataset serializes")
}

/// Hex SHA-256 of the canonical JSON form.
pub fn dataset_digest(dataset: &Dataset) -> String {
    hex::encode(Sha256::digest(to_json_string(dataset).as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_RESPONDENT: &str = r#"{
      "designs": {},
      "respondents": [
        {"id": "r1", "sociodem": {"income": "£10,000-14,999", "age_0_5": 1},
         "statements": [{"text": "You {{level}} recycle.", "level": "Always"}],
         "experiments": {}}
      ]
    }"#;

    #[test]
    fn malformed_respondent_is_named_in_the_error() {
        let text = r#"{"designs": {}, "respondents": [{"id": "abc", "statements": 5}]}"#;
        let err = parse_dataset_unchecked(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("respondent 'abc'"), "{msg}");
    }

    #[test]
    fn syntax_errors_report_position() {
        let err = parse_dataset_unchecked("{\"designs\": ").unwrap_err();
        assert!(matches!(err, SurveyError::Format { .. }));
    }

    #[test]
    fn sociodem_values_keep_their_type() {
        let d = parse_dataset_unchecked(ONE_RESPONDENT).unwrap();
        let r = &d.respondents[0];
        assert_eq!(r.sociodem["age_0_5"], SociodemValue::Int(1));
        assert_eq!(
            r.sociodem["income"],
            SociodemValue::Text("£10,000-14,999".to_string())
        );
    }
}
