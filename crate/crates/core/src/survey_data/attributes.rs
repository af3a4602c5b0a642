//! Attribute schemas for the three heating experiments, display-string parsing,
//! and the numeric design rows consumed by the choice model.

use super::model::{AttributeLevel, ChoiceScenario, ExperimentDesign, ExperimentId};
use super::SurveyError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttributeKind {
    /// Leading amount of a "£ N ..." string, divided by `divisor`.
    Money { divisor: f64 },
    /// Leading number of a "N unit ..." string, divided by `divisor`.
    Quantity { divisor: f64 },
    /// Dummy-coded against `levels[0]`.
    Categorical { levels: &'static [CategoryLevel] },
}

/// A categorical level recognised by case-insensitive substring match.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CategoryLevel {
    pub code: &'static str,
    pub pattern: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttributeSpec {
    pub name: &'static str,
    /// Short identifier used in covariate names.
    pub code: &'static str,
    pub kind: AttributeKind,
}

const SUPPORT_SCHEME: &[CategoryLevel] = &[
    CategoryLevel { code: "none", pattern: "none" },
    CategoryLevel { code: "loan_4pct", pattern: "4% loan" },
    CategoryLevel { code: "interest_free", pattern: "interest-free" },
];

const ENERGY_PRICING: &[CategoryLevel] = &[
    CategoryLevel { code: "fixed", pattern: "constant across" },
    CategoryLevel { code: "notice_24h", pattern: "24 hours ahead" },
    CategoryLevel { code: "notice_1h", pattern: "1 hour ahead" },
];

// Compensation amounts in the display string are not encoded.
const CONTROL: &[CategoryLevel] = &[
    CategoryLevel { code: "full_control", pattern: "control the heating entirely" },
    CategoryLevel { code: "switch_off_7h", pattern: "notification 7 hours ahead" },
    CategoryLevel { code: "switch_off_1h", pattern: "notification 1 hour ahead" },
];

const THOUSANDS: f64 = 1000.0;

const SP1_SCHEMA: [AttributeSpec; 5] = [
    AttributeSpec {
        name: "Fixed cost",
        code: "fixed_cost",
        kind: AttributeKind::Money { divisor: THOUSANDS },
    },
    AttributeSpec {
        name: "Annual cost of operation (in £) and the equivalent average per month",
        code: "operation_cost",
        kind: AttributeKind::Money { divisor: THOUSANDS },
    },
    AttributeSpec {
        name: "Support scheme",
        code: "support_scheme",
        kind: AttributeKind::Categorical { levels: SUPPORT_SCHEME },
    },
    AttributeSpec {
        name: "Maintenance visits",
        code: "maintenance_visits",
        kind: AttributeKind::Quantity { divisor: 1.0 },
    },
    AttributeSpec {
        name: "CO2 emission (Equivalent number of single-person economy flights from London to Glasgow)",
        code: "co2",
        kind: AttributeKind::Quantity { divisor: THOUSANDS },
    },
];

const SP2_SCHEMA: [AttributeSpec; 5] = [
    AttributeSpec {
        name: "Equipment cost",
        code: "equipment_cost",
        kind: AttributeKind::Money { divisor: THOUSANDS },
    },
    AttributeSpec {
        name: "Retrofit cost",
        code: "retrofit_cost",
        kind: AttributeKind::Money { divisor: THOUSANDS },
    },
    AttributeSpec {
        name: "Nuisance duration",
        code: "nuisance_days",
        kind: AttributeKind::Quantity { divisor: 1.0 },
    },
    // Monthly savings in £100s.
    AttributeSpec {
        name: "Savings on monthly costs of heating & payback period",
        code: "monthly_savings",
        kind: AttributeKind::Money { divisor: 100.0 },
    },
    AttributeSpec {
        name: "Support scheme",
        code: "support_scheme",
        kind: AttributeKind::Categorical { levels: SUPPORT_SCHEME },
    },
];

const SP3_SCHEMA: [AttributeSpec; 5] = [
    AttributeSpec {
        name: "Upfront cost",
        code: "upfront_cost",
        kind: AttributeKind::Money { divisor: THOUSANDS },
    },
    AttributeSpec {
        name: "Annual cost of operation (Average per month)",
        code: "operation_cost",
        kind: AttributeKind::Money { divisor: THOUSANDS },
    },
    AttributeSpec {
        name: "Contract length",
        code: "contract_years",
        kind: AttributeKind::Quantity { divisor: 1.0 },
    },
    AttributeSpec {
        name: "Energy pricing",
        code: "energy_pricing",
        kind: AttributeKind::Categorical { levels: ENERGY_PRICING },
    },
    AttributeSpec {
        name: "Control and service flexibility",
        code: "control",
        kind: AttributeKind::Categorical { levels: CONTROL },
    },
];

pub fn attribute_specs(experiment: ExperimentId) -> &'static [AttributeSpec; 5] {
    match experiment {
        ExperimentId::SP1 => &SP1_SCHEMA,
        ExperimentId::SP2 => &SP2_SCHEMA,
        ExperimentId::SP3 => &SP3_SCHEMA,
    }
}

pub fn attribute_spec(experiment: ExperimentId, name: &str) -> Option<&'static AttributeSpec> {
    attribute_specs(experiment).iter().find(|s| s.name == name)
}

/// Extracts the leading magnitude of a display string.
///
/// Currency symbols and thousands separators are dropped and anything from the
/// first parenthesis onwards is ignored, so `"£ 3600 (£ 300 per month)"` gives
/// 3600 and `"4590 kg per year (26 flight(s))"` gives 4590.
pub fn parse_magnitude(display: &str) -> Option<f64> {
    let head = display.split('(').next().unwrap_or("");
    let start = head.find(|c: char| c.is_ascii_digit())?;
    let token: String = head[start..]
        .chars()
        .take_while(|c| c.is_ascii_digit() || *c == ',' || *c == '.')
        .filter(|c| *c != ',')
        .collect();
    let token = token.trim_end_matches('.');
    let value: f64 = token.parse().ok()?;
    value.is_finite().then_some(value)
}

pub fn match_category(levels: &[CategoryLevel], display: &str) -> Option<&'static str> {
    let lowered = display.to_lowercase();
    levels
        .iter()
        .find(|l| lowered.contains(l.pattern))
        .map(|l| l.code)
}

/// Builds an [`AttributeLevel`] from a display string. Unparseable strings
/// yield a level with neither numeric nor categorical value, which
/// validation reports.
pub fn parse_level(
    experiment: ExperimentId,
    attribute_name: &str,
    display: Option<&str>,
) -> AttributeLevel {
    let mut level = AttributeLevel {
        attribute_name: attribute_name.to_string(),
        display_value: display.map(str::to_string),
        numeric_value: None,
        categorical_code: None,
    };
    let (Some(display), Some(spec)) = (display, attribute_spec(experiment, attribute_name)) else {
        return level;
    };
    match spec.kind {
        AttributeKind::Money { .. } | AttributeKind::Quantity { .. } => {
            level.numeric_value = parse_magnitude(display);
        }
        AttributeKind::Categorical { levels } => {
            level.categorical_code = match_category(levels, display).map(str::to_string);
        }
    }
    level
}

/// Design-matrix column names for an experiment: attribute columns in schema
/// order (one per numeric attribute, one per non-reference categorical level),
/// followed by the alternative-specific constants `asc_2` and `asc_3`.
pub fn column_names(experiment: ExperimentId) -> Vec<String> {
    let mut cols = Vec::new();
    for spec in attribute_specs(experiment) {
        match spec.kind {
            AttributeKind::Categorical { levels } => {
                cols.extend(levels[1..].iter().map(|l| format!("{}:{}", spec.code, l.code)));
            }
            _ => cols.push(spec.code.to_string()),
        }
    }
    cols.push("asc_2".to_string());
    cols.push("asc_3".to_string());
    cols
}

/// Numeric design rows for one scenario: three alternatives by `column_names` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedScenario {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl EncodedScenario {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

pub fn encode_attributes(
    design: &ExperimentDesign,
    scenario: &ChoiceScenario,
) -> Result<EncodedScenario, SurveyError> {
    let specs = attribute_specs(design.id);
    let columns = column_names(design.id);
    let mut rows = Vec::with_capacity(scenario.options.len());
    for (alt, option) in scenario.options.iter().enumerate() {
        let mut row = Vec::with_capacity(columns.len());
        for spec in specs {
            let level = option.attribute(spec.name).ok_or_else(|| SurveyError::Encoding {
                message: format!(
                    "scenario {} option '{}' lacks attribute '{}'",
                    scenario.index, option.name, spec.name
                ),
            })?;
            let display = level.display_value.as_deref();
            match spec.kind {
                AttributeKind::Money { divisor } | AttributeKind::Quantity { divisor } => {
                    let value = match display {
                        None => 0.0,
                        Some(d) => parse_magnitude(d).ok_or_else(|| SurveyError::Encoding {
                            message: format!("unparseable {} value '{d}'", spec.name),
                        })?,
                    };
                    row.push(value / divisor);
                }
                AttributeKind::Categorical { levels } => {
                    let code = match display {
                        None => None,
                        Some(d) => Some(match_category(levels, d).ok_or_else(|| {
                            SurveyError::Encoding {
                                message: format!("unknown {} level '{d}'", spec.name),
                            }
                        })?),
                    };
                    row.extend(
                        levels[1..]
                            .iter()
                            .map(|l| if Some(l.code) == code { 1.0 } else { 0.0 }),
                    );
                }
            }
        }
        row.push(if alt == 1 { 1.0 } else { 0.0 });
        row.push(if alt == 2 { 1.0 } else { 0.0 });
        rows.push(row);
    }
    Ok(EncodedScenario { columns, rows })
}
