use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::model::{keys, Dataset, Respondent};

const INCOME_THRESHOLD: f64 = 25_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Children,
    Seniors,
    #[serde(rename = "income_25k")]
    Income25k,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::Children, Criterion::Seniors, Criterion::Income25k];

    /// Labels of (group without the trait, group with it).
    pub fn group_labels(self) -> (&'static str, &'static str) {
        match self {
            Criterion::Children => ("Child-Free", "With-Children"),
            Criterion::Seniors => ("No-Seniors", "With-Seniors"),
            Criterion::Income25k => ("Low-income", "High-income"),
        }
    }

    /// `Some(true)` for the "with"/high group, `None` when the field is missing or unmappable.
    pub fn classify(self, r: &Respondent) -> Option<bool> {
        match self {
            Criterion::Children => {
                let mut total = 0;
                for key in keys::CHILD_COUNTS {
                    let n = r.sociodem.get(key)?.as_int()?;
                    if n < 0 {
                        return None;
                    }
                    total += n;
                }
                Some(total > 0)
            }
            Criterion::Seniors => {
                let n = r.sociodem.get(keys::AGE_65_PLUS)?.as_int()?;
                (n >= 0).then_some(n > 0)
            }
            Criterion::Income25k => {
                let band = r.sociodem.get(keys::INCOME)?.to_string();
                let (lo, hi) = parse_income_band(&band)?;
                if lo >= INCOME_THRESHOLD {
                    Some(true)
                } else if hi < INCOME_THRESHOLD {
                    Some(false)
                } else {
                    None
                }
            }
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Children => "children",
            Criterion::Seniors => "seniors",
            Criterion::Income25k => "income_25k",
        })
    }
}

impl FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "children" => Ok(Criterion::Children),
            "seniors" => Ok(Criterion::Seniors),
            "income_25k" | "income" => Ok(Criterion::Income25k),
            other => Err(format!("unknown stratification criterion '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stratification {
    pub criterion: Criterion,
    pub without_label: String,
    pub with_label: String,
    pub without: Vec<String>,
    pub with: Vec<String>,
    pub excluded: Vec<String>,
}

pub fn stratify(dataset: &Dataset, criterion: Criterion) -> Stratification {
    let (without_label, with_label) = criterion.group_labels();
    let mut s = Stratification {
        criterion,
        without_label: without_label.to_string(),
        with_label: with_label.to_string(),
        without: Vec::new(),
        with: Vec::new(),
        excluded: Vec::new(),
    };
    for r in &dataset.respondents {
        let bucket = match criterion.classify(r) {
            Some(true) => &mut s.with,
            Some(false) => &mut s.without,
            None => &mut s.excluded,
        };
        bucket.push(r.id.clone());
    }
    s
}

/// Parses an income band label into inclusive (lower, upper) pound bounds.
///
/// Accepts ranges ("£10,000-14,999", "£10k to £15k"), open lower bands
/// ("Less than £10,000", "Under £10,000") and open upper bands
/// ("£100,000 or more", "Over £100,000", "£150,000+"). Anything else is
/// unmappable.
pub fn parse_income_band(band: &str) -> Option<(f64, f64)> {
    let lower = band.to_lowercase();
    let numbers = amounts(&lower);
    let open_low = ["less than", "under", "below", "up to"].iter().any(|p| lower.contains(p));
    let open_high = ["or more", "and above", "or above", "over", "more than", "+"]
        .iter()
        .any(|p| lower.contains(p));
    match numbers.as_slice() {
        [a, b] if a <= b => Some((*a, *b)),
        [a] if open_low => Some((0.0, *a - 1.0)),
        [a] if open_high => Some((*a, f64::INFINITY)),
        _ => None,
    }
}

fn amounts(text: &str) -> Vec<f64> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_ascii_digit() {
            let mut token = String::new();
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == ',' || chars[i] == '.') {
                if chars[i] != ',' {
                    token.push(chars[i]);
                }
                i += 1;
            }
            if let Ok(mut v) = token.trim_end_matches('.').parse::<f64>() {
                if i < chars.len() && chars[i] == 'k' {
                    v *= 1000.0;
                }
                out.push(v);
            }
        } else {
            i += 1;
        }
    }
    out
}
