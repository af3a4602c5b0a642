use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::model::{keys, Dataset, ExperimentDesign, ExperimentId};
use super::{attribute_specs, builtin_option_names};

/// One broken invariant, located as precisely as possible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub respondent: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<u8>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(r) = &self.respondent {
            write!(f, "respondent '{r}' ")?;
        }
        if let Some(e) = self.experiment {
            write!(f, "{e} ")?;
        }
        if let Some(s) = self.scenario {
            write!(f, "scenario {s} ")?;
        }
        if self.respondent.is_some() || self.experiment.is_some() || self.scenario.is_some() {
            f.write_str(": ")?;
        }
        f.write_str(&self.message)
    }
}

struct Collector(Vec<Violation>);

impl Collector {
    fn push(
        &mut self,
        respondent: Option<&str>,
        experiment: Option<ExperimentId>,
        scenario: Option<u8>,
        message: impl Into<String>,
    ) {
        self.0.push(Violation {
            respondent: respondent.map(str::to_string),
            experiment,
            scenario,
            message: message.into(),
        });
    }
}

/// Checks every dataset invariant; an empty result means the dataset is valid.
pub fn validate_dataset(dataset: &Dataset) -> Vec<Violation> {
    let mut out = Collector(Vec::new());
    for (key, design) in &dataset.designs {
        check_design(&mut out, *key, design);
    }

    let mut seen = HashSet::new();
    for r in &dataset.respondents {
        let rid = Some(r.id.as_str());
        if r.id.is_empty() {
            out.push(rid, None, None, "empty respondent id");
        }
        if !seen.insert(r.id.as_str()) {
            out.push(rid, None, None, "duplicate respondent id");
        }
        for key in keys::AGE_COUNTS {
            if let Some(v) = r.sociodem.get(key) {
                match v.as_int() {
                    Some(n) if n >= 0 => {}
                    _ => out.push(
                        rid,
                        None,
                        None,
                        format!("age-group count '{key}' must be a non-negative integer, got '{v}'"),
                    ),
                }
            }
        }
        for (exp, scenarios) in &r.experiments {
            let exp = *exp;
            let Some(design) = dataset.designs.get(&exp) else {
                out.push(rid, Some(exp), None, "no design for this experiment");
                continue;
            };
            if scenarios.len() != 6 {
                out.push(
                    rid,
                    Some(exp),
                    None,
                    format!("expected 6 scenarios, found {}", scenarios.len()),
                );
            }
            for (pos, s) in scenarios.iter().enumerate() {
                let idx = Some(s.index);
                if s.index as usize != pos + 1 {
                    out.push(rid, Some(exp), idx, format!("scenario at position {} has index {}", pos + 1, s.index));
                }
                if s.options.len() != 3 {
                    out.push(
                        rid,
                        Some(exp),
                        idx,
                        format!("expected 3 options, found {}", s.options.len()),
                    );
                }
                match s.recorded_choice {
                    Some(c) if !(1..=3).contains(&c) => {
                        out.push(rid, Some(exp), idx, format!("recorded choice {c} out of range 1..3"))
                    }
                    None if s.index <= 5 => {
                        out.push(rid, Some(exp), idx, "missing recorded choice in a context scenario")
                    }
                    _ => {}
                }
                for (i, option) in s.options.iter().enumerate() {
                    if let Some(expected) = design.option_names.get(i) {
                        if &option.name != expected {
                            out.push(
                                rid,
                                Some(exp),
                                idx,
                                format!("option {} is '{}', design expects '{expected}'", i + 1, option.name),
                            );
                        }
                    }
                    if option.attributes.len() != 5 {
                        out.push(
                            rid,
                            Some(exp),
                            idx,
                            format!("option '{}' has {} attributes, expected 5", option.name, option.attributes.len()),
                        );
                    }
                    for name in &design.attribute_schema {
                        if option.attribute(name).is_none() {
                            out.push(rid, Some(exp), idx, format!("option '{}' lacks attribute '{name}'", option.name));
                        }
                    }
                    for level in &option.attributes {
                        if !design.attribute_schema.contains(&level.attribute_name) {
                            out.push(
                                rid,
                                Some(exp),
                                idx,
                                format!("option '{}' has unknown attribute '{}'", option.name, level.attribute_name),
                            );
                            continue;
                        }
                        match (&level.display_value, level.numeric_value, &level.categorical_code) {
                            (None, None, None) => {}
                            (Some(_), Some(v), None) if v.is_finite() && v >= 0.0 => {}
                            (Some(_), None, Some(_)) => {}
                            (display, _, _) => out.push(
                                rid,
                                Some(exp),
                                idx,
                                format!(
                                    "unparseable value {:?} for attribute '{}'",
                                    display.as_deref().unwrap_or("null"),
                                    level.attribute_name
                                ),
                            ),
                        }
                    }
                }
            }
        }
    }
    out.0
}

fn check_design(out: &mut Collector, key: ExperimentId, design: &ExperimentDesign) {
    if design.id != key {
        out.push(None, Some(key), None, format!("design keyed {key} declares id {}", design.id));
    }
    let names = builtin_option_names(design.id);
    if design.option_names.len() != 3 || design.option_names.iter().zip(names).any(|(a, b)| a != b) {
        out.push(
            None,
            Some(key),
            None,
            format!("option names {:?} do not match {:?}", design.option_names, names),
        );
    }
    let schema: Vec<&str> = attribute_specs(design.id).iter().map(|s| s.name).collect();
    if design.attribute_schema.len() != 5
        || design.attribute_schema.iter().zip(&schema).any(|(a, b)| a != b)
    {
        out.push(None, Some(key), None, "attribute schema does not match the experiment");
    }
    if design.option_explanations.len() != 3 {
        out.push(
            None,
            Some(key),
            None,
            format!("expected 3 option explanations, found {}", design.option_explanations.len()),
        );
    }
}
