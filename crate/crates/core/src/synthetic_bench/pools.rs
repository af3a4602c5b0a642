//! Default attribute pools, true parameters and respondent samplers.

use std::collections::BTreeMap;

use super::{AttributePool, SociodemSampler, StatementSpec, TrueParams, WeightedValue};
use crate::survey_data::{keys, ExperimentId, SociodemValue};

fn pool(attribute: &str, per_option: [&[&str]; 3]) -> AttributePool {
    AttributePool {
        attribute: attribute.to_string(),
        shared: false,
        levels: per_option
            .iter()
            .map(|lv| lv.iter().map(|s| (*s != "null").then(|| s.to_string())).collect())
            .collect(),
    }
}

fn shared(attribute: &str, levels: &[&str]) -> AttributePool {
    AttributePool {
        attribute: attribute.to_string(),
        shared: true,
        levels: vec![levels.iter().map(|s| Some(s.to_string())).collect()],
    }
}

const ANNUAL_SP1: &[&str] = &[
    "£ 1680 (£ 140 per month)",
    "£ 1920 (£ 160 per month)",
    "£ 2400 (£ 200 per month)",
    "£ 2880 (£ 240 per month)",
    "£ 3600 (£ 300 per month)",
    "£ 6240 (£ 520 per month)",
    "£ 6600 (£ 550 per month)",
];
const SUPPORT: &[&str] = &["None", "4% loan", "Interest-free loan"];
const LOW_CARBON: &[&str] = &["0 kg per year (0 flight(s))", "1000 kg per year (6 flight(s))", "2020 kg per year (12 flight(s))"];
const ANNUAL_SP3: &[&str] = &[
    "£ 2880 (£ 240 per month)",
    "£ 3000 (£ 250 per month)",
    "£ 3600 (£ 300 per month)",
    "£ 4920 (£ 410 per month)",
];
const PRICING: &[&str] = &[
    "Constant across hours and days",
    "Can change during the day and you are informed 24 hours ahead of any changes",
    "Can change during the day and you are informed 1 hour ahead of any changes",
];
const CONTROL: &[&str] = &[
    "You control the heating entirely",
    "Heating can be switched off for 1 hour a month. Notification 7 hours ahead. Compensation £14",
    "Heating can be switched off for 1 hour a month. Notification 1 hour ahead. Compensation £14",
];
const CONTRACT: &[&str] = &["1 year(s)", "4 year(s)", "8 year(s)"];

pub fn default_pools(exp: ExperimentId) -> Vec<AttributePool> {
    match exp {
        ExperimentId::SP1 => vec![
            pool("Fixed cost", [&["£ 1900", "£ 2500", "£ 3100"], &["£ 1900", "£ 2500", "£ 3100"], &["£ 9800", "£ 15300"]]),
            pool(
                "Annual cost of operation (in £) and the equivalent average per month",
                [ANNUAL_SP1, ANNUAL_SP1, ANNUAL_SP1],
            ),
            pool("Support scheme", [SUPPORT, SUPPORT, SUPPORT]),
            pool("Maintenance visits", [&["1 per year", "2 per year"], &["1 per year", "2 per year"], &["1 per year", "2 per year"]]),
            pool(
                "CO2 emission (Equivalent number of single-person economy flights from London to Glasgow)",
                [&["4080 kg per year (23 flight(s))", "4590 kg per year (26 flight(s))"], LOW_CARBON, LOW_CARBON],
            ),
        ],
        ExperimentId::SP2 => vec![
            shared("Equipment cost", &["£ 10400"]),
            pool("Retrofit cost", [&["null"], &["£ 250", "£ 430", "£ 860"], &["£ 12000", "£ 20000", "£ 41000"]]),
            pool(
                "Nuisance duration",
                [&["1 day(s)"], &["1 day(s)", "2 day(s)", "3 day(s)"], &["20 day(s)", "30 day(s)", "45 day(s)", "60 day(s)"]],
            ),
            pool(
                "Savings on monthly costs of heating & payback period",
                [
                    &["null"],
                    &["£ 20 (Over 1 year(s))", "£ 25 (Over 1 year(s))", "£ 30 (Over 1 year(s))", "£ 40 (Over 2 year(s))"],
                    &["£ 96 (Over 17 year(s))", "£ 116 (Over 9 year(s))", "£ 130 (Over 13 year(s))", "£ 150 (Over 7 year(s))"],
                ],
            ),
            shared("Support scheme", SUPPORT),
        ],
        // Upfront costs get neighbouring levels so they are not collinear
        // with the constants.
        ExperimentId::SP3 => vec![
            pool("Upfront cost", [&["£ 8300", "£ 10400", "£ 12500"], &["£ 4600", "£ 5700", "£ 6800"], &["null"]]),
            pool("Annual cost of operation (Average per month)", [ANNUAL_SP3, ANNUAL_SP3, ANNUAL_SP3]),
            pool("Contract length", [&["null"], CONTRACT, CONTRACT]),
            pool("Energy pricing", [PRICING, PRICING, PRICING]),
            pool("Control and service flexibility", [CONTROL, CONTROL, CONTROL]),
        ],
    }
}

fn params(means: &[(&str, f64)], sds: &[(&str, f64)]) -> TrueParams {
    TrueParams {
        means: means.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        std_devs: sds.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

/// Coefficients on the encoded column scale (costs in thousands of pounds).
pub fn default_true_params(exp: ExperimentId) -> TrueParams {
    match exp {
        ExperimentId::SP1 => params(
            &[
                ("fixed_cost", -0.25),
                ("operation_cost", -0.6),
                ("support_scheme:loan_4pct", 0.2),
                ("support_scheme:interest_free", 0.4),
                ("maintenance_visits", -0.2),
                ("co2", -0.15),
                ("asc_2", 0.3),
                ("asc_3", 1.0),
            ],
            &[("fixed_cost", 0.15), ("operation_cost", 0.3), ("asc_2", 0.5), ("asc_3", 0.8)],
        ),
        ExperimentId::SP2 => params(
            &[
                ("retrofit_cost", -0.05),
                ("nuisance_days", -0.02),
                ("monthly_savings", 1.0),
                ("asc_2", 0.3),
                ("asc_3", 0.5),
            ],
            &[("retrofit_cost", 0.03), ("asc_2", 0.5), ("asc_3", 0.7)],
        ),
        ExperimentId::SP3 => params(
            &[
                ("upfront_cost", -0.2),
                ("operation_cost", -0.5),
                ("contract_years", -0.1),
                ("energy_pricing:notice_24h", -0.2),
                ("energy_pricing:notice_1h", -0.4),
                ("control:switch_off_7h", -0.2),
                ("control:switch_off_1h", -0.4),
                ("asc_2", 0.2),
                ("asc_3", -0.3),
            ],
            &[("upfront_cost", 0.1), ("operation_cost", 0.2), ("asc_2", 0.5), ("asc_3", 0.6)],
        ),
    }
}

fn uniform_text(values: &[&str]) -> Vec<WeightedValue> {
    values
        .iter()
        .map(|v| WeightedValue { value: SociodemValue::Text(v.to_string()), weight: 1.0 })
        .collect()
}

fn counts(weights: &[f64]) -> Vec<WeightedValue> {
    weights
        .iter()
        .enumerate()
        .map(|(n, w)| WeightedValue { value: SociodemValue::Int(n as i64), weight: *w })
        .collect()
}

pub fn default_sociodem() -> SociodemSampler {
    let mut fields = BTreeMap::new();
    let mut put = |k: &str, v: Vec<WeightedValue>| {
        fields.insert(k.to_string(), v);
    };
    put(
        keys::INCOME,
        uniform_text(&[
            "Less than £10,000",
            "£10,000-14,999",
            "£15,000-24,999",
            "£25,000-34,999",
            "£35,000-49,999",
            "£50,000-74,999",
            "£75,000 or more",
        ]),
    );
    put(keys::AGE_0_5, counts(&[0.8, 0.15, 0.05]));
    put(keys::AGE_6_12, counts(&[0.75, 0.18, 0.07]));
    put(keys::AGE_13_17, counts(&[0.8, 0.15, 0.05]));
    put(keys::AGE_18_65, counts(&[0.05, 0.35, 0.45, 0.15]));
    put(keys::AGE_65_PLUS, counts(&[0.7, 0.2, 0.1]));
    put(keys::EMPLOYED, counts(&[0.2, 0.45, 0.35]));
    put(keys::EDUCATION, uniform_text(&["Secondary school", "College diploma", "Bachelor's degree", "Postgraduate degree"]));
    put(keys::PROPERTY_TYPE, uniform_text(&["Detached", "Semi-detached", "Terraced", "Flat"]));
    put(
        keys::ROOMS,
        (3..=9).map(|n| WeightedValue { value: SociodemValue::Int(n), weight: 1.0 }).collect(),
    );
    put(keys::FLOOR_AREA, uniform_text(&["50 m² or less", "51-100 m²", "101-150 m²", "151-200 m²"]));
    put(keys::LIGHTING, uniform_text(&["LED lights", "Halogen lights", "Mixed lighting"]));
    put(keys::BUILT, uniform_text(&["Before 1945", "Between 1945 and 1964", "Between 1965 and 1990", "After 1990"]));
    put(keys::REGION, uniform_text(&["London", "North West", "Scotland", "South East", "Wales", "Yorkshire and the Humber"]));
    put(keys::EPC_RATING, uniform_text(&["A", "B", "C", "D", "E"]));
    put(keys::INSPECTION_SPEND, uniform_text(&["£0-100", "£101-200", "£201-500", "More than £500"]));
    put(keys::HEATING_SOURCE, uniform_text(&["Gas boiler", "Electric storage heater", "Oil boiler", "Heat pump"]));
    put(keys::HEATING_AGE, uniform_text(&["1-3 years", "4-6 years", "7-10 years", "More than 10 years"]));
    put(
        keys::ELECTRICITY_TARIFF,
        uniform_text(&["Fixed price (Price of energy is fixed for 12 or 24 months)", "Variable price", "Economy 7"]),
    );
    put(keys::CONTEXT_DWELLING, uniform_text(&["small house", "large house", "flat"]));
    put(keys::CONTEXT_BUILT_PERIOD, uniform_text(&["before 1965", "after 1965"]));
    put(
        keys::CONTEXT_FLOOR_AREA,
        [60, 85, 110, 140].iter().map(|n| WeightedValue { value: SociodemValue::Int(*n), weight: 1.0 }).collect(),
    );
    SociodemSampler { fields }
}

const LIKE_YOU: &[&str] = &["Not like you at all", "A little like you", "Somewhat like you", "Mostly like you", "Very much like you"];

pub fn default_statements() -> Vec<StatementSpec> {
    [
        "You find a person who turns off heating in unused rooms, {{level}}.",
        "You find a person who cares about local air quality, {{level}}.",
        "You find a person who enjoys trying new home technology, {{level}}.",
        "You find a person who keeps household bills as low as possible, {{level}}.",
        "You find a person who values a warm and comfortable home, {{level}}.",
        "You find a person who prefers proven and familiar products, {{level}}.",
    ]
    .iter()
    .map(|t| StatementSpec { text: t.to_string(), levels: LIKE_YOU.iter().map(|s| s.to_string()).collect() })
    .collect()
}
