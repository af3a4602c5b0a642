use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

/// One of the three stated-preference experiments of the heating survey.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExperimentId {
    SP1,
    SP2,
    SP3,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 3] = [ExperimentId::SP1, ExperimentId::SP2, ExperimentId::SP3];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::SP1 => "SP1",
            ExperimentId::SP2 => "SP2",
            ExperimentId::SP3 => "SP3",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SP1" => Ok(ExperimentId::SP1),
            "SP2" => Ok(ExperimentId::SP2),
            "SP3" => Ok(ExperimentId::SP3),
            other => Err(format!("unknown experiment '{other}' (expected SP1, SP2 or SP3)")),
        }
    }
}

/// A parsed attribute cell. `display_value` is kept verbatim for prompt rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeLevel {
    pub attribute_name: String,
    pub display_value: Option<String>,
    pub numeric_value: Option<f64>,
    pub categorical_code: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceOption {
    pub name: String,
    pub attributes: Vec<AttributeLevel>,
}

impl ChoiceOption {
    pub fn attribute(&self, name: &str) -> Option<&AttributeLevel> {
        self.attributes.iter().find(|a| a.attribute_name == name)
    }

    /// Attribute display strings in stored order, as they appear in the options JSON.
    pub fn characteristics(&self) -> IndexMap<String, Option<String>> {
        self.attributes
            .iter()
            .map(|a| (a.attribute_name.clone(), a.display_value.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceScenario {
    /// 1-based position within the experiment (1..=6).
    pub index: u8,
    pub options: Vec<ChoiceOption>,
    /// 1-based option code.
    pub recorded_choice: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentDesign {
    pub id: ExperimentId,
    pub option_names: Vec<String>,
    pub attribute_schema: Vec<String>,
    pub option_explanations: Vec<String>,
    pub experiment_intro: String,
}

impl ExperimentDesign {
    /// 1-based code of an option name, exact match first, then case-insensitive.
    pub fn option_code(&self, name: &str) -> Option<u8> {
        let pos = self
            .option_names
            .iter()
            .position(|n| n == name)
            .or_else(|| {
                self.option_names
                    .iter()
                    .position(|n| n.eq_ignore_ascii_case(name.trim()))
            })?;
        Some(pos as u8 + 1)
    }

    pub fn option_name(&self, code: u8) -> Option<&str> {
        if code == 0 {
            return None;
        }
        self.option_names.get(code as usize - 1).map(String::as_str)
    }
}

/// Socio-demographic values are either counts or verbatim band labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SociodemValue {
    Int(i64),
    Text(String),
}

impl SociodemValue {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            SociodemValue::Int(v) => Some(*v),
            SociodemValue::Text(s) => s.trim().parse().ok(),
        }
    }
}

impl fmt::Display for SociodemValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SociodemValue::Int(v) => write!(f, "{v}"),
            SociodemValue::Text(s) => f.write_str(s),
        }
    }
}

/// An attitudinal statement. `text` is a sentence fragment containing a
/// `{{level}}` placeholder that receives the verbatim response level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub text: String,
    pub level: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Respondent {
    pub id: String,
    pub sociodem: BTreeMap<String, SociodemValue>,
    pub statements: Vec<Statement>,
    pub experiments: BTreeMap<ExperimentId, Vec<ChoiceScenario>>,
}

impl Respondent {
    pub fn scenarios(&self, experiment: ExperimentId) -> Option<&[ChoiceScenario]> {
        self.experiments.get(&experiment).map(Vec::as_slice)
    }

    /// Recorded choice in the held-out sixth scenario.
    pub fn target_choice(&self, experiment: ExperimentId) -> Option<u8> {
        self.scenarios(experiment)?
            .iter()
            .find(|s| s.index == 6)
            .and_then(|s| s.recorded_choice)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub respondents: Vec<Respondent>,
    pub designs: BTreeMap<ExperimentId, ExperimentDesign>,
}

impl Dataset {
    pub fn respondent(&self, id: &str) -> Option<&Respondent> {
        self.respondents.iter().find(|r| r.id == id)
    }

    pub fn design(&self, id: ExperimentId) -> Option<&ExperimentDesign> {
        self.designs.get(&id)
    }
}

/// Well-known socio-demographic keys used by the prompt templates and stratifiers.
pub mod keys {
    pub const INCOME: &str = "income";
    pub const AGE_0_5: &str = "age_0_5";
    pub const AGE_6_12: &str = "age_6_12";
    pub const AGE_13_17: &str = "age_13_17";
    pub const AGE_18_65: &str = "age_18_65";
    pub const AGE_65_PLUS: &str = "age_65_plus";
    pub const EMPLOYED: &str = "employed";
    pub const EDUCATION: &str = "education";
    pub const PROPERTY_TYPE: &str = "property_type";
    pub const ROOMS: &str = "rooms";
    pub const FLOOR_AREA: &str = "floor_area";
    pub const LIGHTING: &str = "lighting";
    pub const BUILT: &str = "built";
    pub const REGION: &str = "region";
    pub const EPC_RATING: &str = "epc_rating";
    pub const INSPECTION_SPEND: &str = "inspection_spend";
    pub const HEATING_SOURCE: &str = "heating_source";
    pub const HEATING_AGE: &str = "heating_age";
    pub const ELECTRICITY_TARIFF: &str = "electricity_tariff";
    pub const CONTEXT_DWELLING: &str = "context_dwelling";
    pub const CONTEXT_BUILT_PERIOD: &str = "context_built_period";
    pub const CONTEXT_FLOOR_AREA: &str = "context_floor_area";

    pub const AGE_COUNTS: [&str; 5] = [AGE_0_5, AGE_6_12, AGE_13_17, AGE_18_65, AGE_65_PLUS];
    pub const CHILD_COUNTS: [&str; 3] = [AGE_0_5, AGE_6_12, AGE_13_17];
}
