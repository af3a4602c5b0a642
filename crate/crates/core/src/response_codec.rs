//! Parsing and classification of raw model output.
//!
//! Every input string maps to a [`SimResponse`]; failures are statuses, not
//! errors.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseStatus {
    Valid,
    InvalidFormat,
    InvalidChoice,
    InconsistentSchema,
}

impl ResponseStatus {
    pub const ALL: [ResponseStatus; 4] = [
        ResponseStatus::Valid,
        ResponseStatus::InvalidFormat,
        ResponseStatus::InvalidChoice,
        ResponseStatus::InconsistentSchema,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResponseStatus::Valid => "valid",
            ResponseStatus::InvalidFormat => "invalid_format",
            ResponseStatus::InvalidChoice => "invalid_choice",
            ResponseStatus::InconsistentSchema => "inconsistent_schema",
        }
    }
}

impl fmt::Display for ResponseStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Factor group an ignored item refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FactorBucket {
    SPC,
    SD,
    ST,
    OTHER,
}

impl FactorBucket {
    pub const ALL: [FactorBucket; 4] = [FactorBucket::SPC, FactorBucket::SD, FactorBucket::ST, FactorBucket::OTHER];
}

impl fmt::Display for FactorBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Multiset over [`FactorBucket`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IgnoredCounts {
    #[serde(rename = "SPC")]
    pub spc: u32,
    #[serde(rename = "SD")]
    pub sd: u32,
    #[serde(rename = "ST")]
    pub st: u32,
    #[serde(rename = "OTHER")]
    pub other: u32,
}

impl IgnoredCounts {
    pub fn get(&self, b: FactorBucket) -> u32 {
        match b {
            FactorBucket::SPC => self.spc,
            FactorBucket::SD => self.sd,
            FactorBucket::ST => self.st,
            FactorBucket::OTHER => self.other,
        }
    }

    pub fn add(&mut self, b: FactorBucket, n: u32) {
        match b {
            FactorBucket::SPC => self.spc += n,
            FactorBucket::SD => self.sd += n,
            FactorBucket::ST => self.st += n,
            FactorBucket::OTHER => self.other += n,
        }
    }

    pub fn total(&self) -> u32 {
        self.spc + self.sd + self.st + self.other
    }
}

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("keyword table: {0}")]
    Table(String),
}

/// One bucket with its case-insensitive substrings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordRule {
    pub bucket: FactorBucket,
    pub keywords: Vec<String>,
}

/// Ordered keyword rules; the first rule with a matching keyword wins and
/// anything unmatched is OTHER.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordTable {
    pub rules: Vec<KeywordRule>,
}

impl Default for KeywordTable {
    fn default() -> Self {
        let rule = |bucket, words: &[&str]| KeywordRule {
            bucket,
            keywords: words.iter().map(|w| w.to_string()).collect(),
        };
        KeywordTable {
            rules: vec![
                rule(FactorBucket::SPC, &["previous choices", "previous sp", "prior choices", "choice history"]),
                rule(FactorBucket::SD, &["socio", "demograph", "income", "age", "education", "property"]),
                rule(FactorBucket::ST, &["personality", "attitude", "statement", "value", "pvq", "lifestyle"]),
            ],
        }
    }
}

impl KeywordTable {
    /// Reads a table from TOML (`[[rules]] bucket = "SD" keywords = [...]`).
    pub fn from_toml_str(text: &str) -> Result<Self, CodecError> {
        let mut table: KeywordTable = toml::from_str(text).map_err(|e| CodecError::Table(e.to_string()))?;
        for rule in &mut table.rules {
            for k in &mut rule.keywords {
                *k = k.to_lowercase();
            }
        }
        Ok(table)
    }

    pub fn bucket(&self, item: &str) -> FactorBucket {
        let lower = item.to_lowercase();
        self.rules
            .iter()
            .find(|r| r.keywords.iter().any(|k| lower.contains(k.as_str())))
            .map(|r| r.bucket)
            .unwrap_or(FactorBucket::OTHER)
    }

    pub fn canonicalize(&self, items: &[String]) -> IgnoredCounts {
        let mut counts = IgnoredCounts::default();
        for item in items {
            counts.add(self.bucket(item), 1);
        }
        counts
    }
}

/// Buckets ignored items with the default keyword table.
pub fn canonicalize_ignored(items: &[String]) -> IgnoredCounts {
    KeywordTable::default().canonicalize(items)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimResponse {
    pub status: ResponseStatus,
    pub choice: Option<u8>,
    pub explanation: Option<String>,
    pub ignored_raw: Vec<String>,
    pub ignored_canonical: IgnoredCounts,
    pub raw_text: String,
}

impl SimResponse {
    pub fn is_valid(&self) -> bool {
        self.status == ResponseStatus::Valid
    }

    /// The response as the JSON object a model would have produced.
    pub fn to_json_object(&self) -> Value {
        let mut m = Map::new();
        if let Some(e) = &self.explanation {
            m.insert("Explanation".into(), Value::String(e.clone()));
        }
        m.insert("Choice".into(), self.choice.map(Value::from).unwrap_or(Value::Null));
        m.insert(
            "Ignored".into(),
            Value::Array(self.ignored_raw.iter().cloned().map(Value::String).collect()),
        );
        Value::Object(m)
    }
}

/// Finds the first complete JSON object in `raw`. A candidate that runs off
/// the end of input ends the search, since every later brace sits inside it.
pub fn extract_json_object(raw: &str) -> Option<Map<String, Value>> {
    for (pos, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[pos..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => return Some(map),
            Some(Err(e)) if e.is_eof() => return None,
            _ => {}
        }
    }
    None
}

enum ChoiceField {
    Ok(u8),
    Missing,
    OutOfRange,
    WrongShape,
}

fn read_choice(v: Option<&Value>) -> ChoiceField {
    let n = match v {
        None | Some(Value::Null) => return ChoiceField::Missing,
        Some(Value::Number(n)) => match n.as_i64() {
            Some(i) => i,
            None => match n.as_f64() {
                Some(f) if f.fract() == 0.0 && f.abs() < 1e9 => f as i64,
                Some(_) => return ChoiceField::OutOfRange,
                None => return ChoiceField::WrongShape,
            },
        },
        Some(Value::String(s)) => {
            let t = s.trim();
            if t.is_empty() || !t.bytes().all(|b| b.is_ascii_digit()) {
                return ChoiceField::WrongShape;
            }
            match t.parse::<i64>() {
                Ok(i) => i,
                Err(_) => return ChoiceField::OutOfRange,
            }
        }
        Some(_) => return ChoiceField::WrongShape,
    };
    if (1..=3).contains(&n) {
        ChoiceField::Ok(n as u8)
    } else {
        ChoiceField::OutOfRange
    }
}

pub fn parse_response(raw: &str, require_explanation: bool) -> SimResponse {
    parse_response_with(raw, require_explanation, &KeywordTable::default())
}

pub fn parse_response_with(raw: &str, require_explanation: bool, table: &KeywordTable) -> SimResponse {
    let mut out = SimResponse {
        status: ResponseStatus::InvalidFormat,
        choice: None,
        explanation: None,
        ignored_raw: Vec::new(),
        ignored_canonical: IgnoredCounts::default(),
        raw_text: raw.to_string(),
    };
    let Some(obj) = extract_json_object(raw) else {
        return out;
    };

    let mut schema_ok = true;
    match obj.get("Ignored") {
        None | Some(Value::Null) => {}
        Some(Value::Array(items)) => {
            for item in items {
                match item {
                    Value::String(s) => out.ignored_raw.push(s.clone()),
                    _ => schema_ok = false,
                }
            }
        }
        Some(_) => schema_ok = false,
    }
    out.ignored_canonical = table.canonicalize(&out.ignored_raw);

    match obj.get("Explanation") {
        Some(Value::String(s)) => out.explanation = Some(s.clone()),
        None | Some(Value::Null) => schema_ok &= !require_explanation,
        Some(_) => schema_ok = false,
    }

    out.status = match read_choice(obj.get("Choice")) {
        ChoiceField::Missing | ChoiceField::OutOfRange => ResponseStatus::InvalidChoice,
        ChoiceField::WrongShape => ResponseStatus::InconsistentSchema,
        ChoiceField::Ok(c) if schema_ok => {
            out.choice = Some(c);
            ResponseStatus::Valid
        }
        ChoiceField::Ok(_) => ResponseStatus::InconsistentSchema,
    };
    out
}
