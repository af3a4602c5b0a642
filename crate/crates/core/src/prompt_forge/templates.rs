use std::collections::BTreeMap;
use std::path::Path;

use crate::survey_data::ExperimentId;

use super::PromptError;

/// Fixed prompt wording for one experiment. Experiment intros and option
/// explanations live on the design instead, so that datasets carry them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentTemplates {
    pub explanations_header: String,
    pub characteristics: String,
    pub choices_header: String,
    pub sociodem_header: String,
    /// (item name, sentence template) in rendering order.
    pub sociodem_items: Vec<(String, String)>,
    pub statements_header: String,
    pub question: String,
    pub factors: String,
    pub output_format: String,
    pub output_format_no_explanation: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub version: String,
    pub experiments: BTreeMap<ExperimentId, ExperimentTemplates>,
}

const FILES: [&str; 9] = [
    "explanations_header.txt",
    "characteristics.txt",
    "choices_header.txt",
    "sociodemographics.txt",
    "statements_header.txt",
    "question.txt",
    "factors.txt",
    "output_format.txt",
    "output_format_no_explanation.txt",
];

macro_rules! bundled {
    ($exp:literal) => {
        [
            include_str!(concat!("../../templates/v1/", $exp, "/explanations_header.txt")),
            include_str!(concat!("../../templates/v1/", $exp, "/characteristics.txt")),
            include_str!(concat!("../../templates/v1/", $exp, "/choices_header.txt")),
            include_str!(concat!("../../templates/v1/", $exp, "/sociodemographics.txt")),
            include_str!(concat!("../../templates/v1/", $exp, "/statements_header.txt")),
            include_str!(concat!("../../templates/v1/", $exp, "/question.txt")),
            include_str!(concat!("../../templates/v1/", $exp, "/factors.txt")),
            include_str!(concat!("../../templates/v1/", $exp, "/output_format.txt")),
            include_str!(concat!("../../templates/v1/", $exp, "/output_format_no_explanation.txt")),
        ]
    };
}

impl TemplateSet {
    /// The `v1` templates compiled into the binary.
    pub fn builtin() -> Self {
        let mut experiments = BTreeMap::new();
        for (id, files) in [
            (ExperimentId::SP1, bundled!("SP1")),
            (ExperimentId::SP2, bundled!("SP2")),
            (ExperimentId::SP3, bundled!("SP3")),
        ] {
            experiments.insert(id, ExperimentTemplates::from_files(id, files.map(str::to_string)).expect("bundled templates parse"));
        }
        TemplateSet {
            version: "v1".to_string(),
            experiments,
        }
    }

    /// Loads `<dir>/<SPx>/<section>.txt` for all three experiments.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let mut experiments = BTreeMap::new();
        for id in ExperimentId::ALL {
            let files = FILES.map(|f| {
                let path = dir.join(id.as_str()).join(f);
                std::fs::read_to_string(&path)
                    .map_err(|e| PromptError::Template(format!("{}: {e}", path.display())))
            });
            let mut texts = Vec::with_capacity(FILES.len());
            for f in files {
                texts.push(f?);
            }
            let texts: [String; 9] = texts.try_into().expect("nine template files");
            experiments.insert(id, ExperimentTemplates::from_files(id, texts)?);
        }
        Ok(TemplateSet {
            version: dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            experiments,
        })
    }

    pub fn get(&self, id: ExperimentId) -> Result<&ExperimentTemplates, PromptError> {
        self.experiments
            .get(&id)
            .ok_or_else(|| PromptError::Template(format!("no templates for {id}")))
    }
}

impl ExperimentTemplates {
    fn from_files(id: ExperimentId, files: [String; 9]) -> Result<Self, PromptError> {
        let [explanations_header, characteristics, choices_header, sociodem, statements_header, question, factors, output_format, output_format_no_explanation] =
            files;
        let mut sociodem_header = String::new();
        let mut sociodem_items = Vec::new();
        for line in sociodem.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (item, sentence) = line.split_once('|').ok_or_else(|| {
                PromptError::Template(format!("{id} sociodemographics line lacks '|': {line}"))
            })?;
            if item == "header" {
                sociodem_header = sentence.trim().to_string();
            } else {
                sociodem_items.push((item.trim().to_string(), sentence.trim().to_string()));
            }
        }
        Ok(ExperimentTemplates {
            explanations_header: explanations_header.trim().to_string(),
            characteristics: characteristics.trim().to_string(),
            choices_header: choices_header.trim().to_string(),
            sociodem_header,
            sociodem_items,
            statements_header: statements_header.trim().to_string(),
            question: question.trim().to_string(),
            factors: factors.trim().to_string(),
            output_format: output_format.trim().to_string(),
            output_format_no_explanation: output_format_no_explanation.trim().to_string(),
        })
    }
}

/// Substitutes `{{name}}` placeholders; an unresolved name is an error.
pub fn fill(template: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or_else(|| PromptError::Template(format!("unterminated placeholder in '{template}'")))?;
        let name = after[..end].trim();
        let value = lookup(name).ok_or_else(|| PromptError::MissingField(name.to_string()))?;
        out.push_str(&value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}
