//! Deterministic in-process responders used for tests and desk-scale runs.
//!
//! Randomness is drawn from `(seed, sample_key)` only, so a replayed run
//! produces the same replies regardless of thread scheduling.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel};
use serde_json::Value;

use super::{ChatRequest, GatewayError, Transport, TransportError, TransportReply};
use crate::response_codec::extract_json_object;
use crate::survey_data::{builtin_design, encode_attributes, scenario_from_options_json, ExperimentId};

/// Per-experiment utility coefficients keyed by design-matrix column name.
pub type Coefficients = BTreeMap<ExperimentId, BTreeMap<String, f64>>;

#[derive(Debug, Clone, PartialEq)]
pub enum ScriptedPolicy {
    /// Replies with the user message verbatim.
    Echo,
    FixedChoice(u8),
    /// Uniformly random valid choice.
    Uniform { seed: u64 },
    /// Picks the option maximizing `beta · x`, plus Gumbel noise when a seed is given.
    UtilityArgmax { beta: Coefficients, noise_seed: Option<u64> },
    /// Truncated JSON with probability `rate`, otherwise a uniform valid reply.
    Malformed { rate: f64, seed: u64 },
}

pub struct ScriptedTransport {
    policy: ScriptedPolicy,
}

/// splitmix64 finalizer over a pair.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.rotate_left(32) ^ 0x9E37_79B9_7F4A_7C15;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn valid_reply(choice: u8) -> String {
    format!("{{\"Explanation\": \"Scripted response.\", \"Choice\": {choice}, \"Ignored\": []}}")
}

fn config_err(m: String) -> GatewayError {
    GatewayError::Config(m)
}

/// Reads coefficients from a JSON file: either `{"SP1": {"col": b, ...}}`
/// or a synthetic oracle sidecar (`true_params.<exp>.means`).
pub fn load_coefficients(path: &str) -> Result<Coefficients, GatewayError> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{path}: {e}")))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| config_err(format!("{path}: {e}")))?;
    let source = match value.get("true_params") {
        Some(Value::Object(params)) => Value::Object(
            params
                .iter()
                .map(|(k, v)| (k.clone(), v.get("means").cloned().unwrap_or(Value::Null)))
                .collect(),
        ),
        _ => value,
    };
    serde_json::from_value(source).map_err(|e| config_err(format!("{path}: {e}")))
}

/// Parses a policy string such as `fixed_choice:2`, `uniform:7`,
/// `malformed:0.05:7` or `utility_argmax:@beta.json[:noise_seed]`.
pub fn scripted_backend(spec: &str) -> Result<ScriptedTransport, GatewayError> {
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |s: &str| s.parse::<u64>().map_err(|_| config_err(format!("bad integer '{s}' in '{spec}'")));
    let policy = match parts.as_slice() {
        ["echo"] => ScriptedPolicy::Echo,
        ["fixed_choice", k] => match k.parse::<u8>() {
            Ok(k @ 1..=3) => ScriptedPolicy::FixedChoice(k),
            _ => return Err(config_err(format!("fixed_choice needs 1..3, got '{k}'"))),
        },
        ["uniform"] => ScriptedPolicy::Uniform { seed: 0 },
        ["uniform", s] => ScriptedPolicy::Uniform { seed: num(s)? },
        ["malformed", rate, rest @ ..] if rest.len() <= 1 => {
            let rate: f64 = rate.parse().map_err(|_| config_err(format!("bad rate '{rate}'")))?;
            if !(0.0..=1.0).contains(&rate) {
                return Err(config_err(format!("malformed rate {rate} outside [0, 1]")));
            }
            let seed = rest.first().map(|s| num(s)).transpose()?.unwrap_or(0);
            ScriptedPolicy::Malformed { rate, seed }
        }
        ["utility_argmax", file, rest @ ..] if rest.len() <= 1 => {
            let path = file.strip_prefix('@').unwrap_or(file);
            ScriptedPolicy::UtilityArgmax {
                beta: load_coefficients(path)?,
                noise_seed: rest.first().map(|s| num(s)).transpose()?,
            }
        }
        _ => return Err(config_err(format!("unknown scripted policy '{spec}'"))),
    };
    Ok(ScriptedTransport::new(policy))
}

impl ScriptedTransport {
    pub fn new(policy: ScriptedPolicy) -> Self {
        ScriptedTransport { policy }
    }

    pub fn policy(&self) -> &ScriptedPolicy {
        &self.policy
    }
}

fn argmax_reply(
    request: &ChatRequest,
    beta: &Coefficients,
    noise: Option<&mut ChaCha8Rng>,
) -> Result<String, TransportError> {
    let fatal = |message: String| TransportError::Fatal { status: None, message };
    let question = extract_json_object(request.user())
        .ok_or_else(|| fatal("user message has no options JSON".into()))?;
    let (exp, scenario) = scenario_from_options_json(&Value::Object(question), 6)
        .map_err(|e| fatal(e.to_string()))?;
    let encoded = encode_attributes(&builtin_design(exp), &scenario).map_err(|e| fatal(e.to_string()))?;
    let empty = BTreeMap::new();
    let coefs = beta.get(&exp).unwrap_or(&empty);
    let weights: Vec<f64> = encoded.columns.iter().map(|c| coefs.get(c).copied().unwrap_or(0.0)).collect();
    let gumbel = Gumbel::new(0.0, 1.0).expect("unit gumbel");
    let mut noise = noise;
    let mut best = (f64::NEG_INFINITY, 1u8);
    for (alt, row) in encoded.rows.iter().enumerate() {
        let mut u: f64 = row.iter().zip(&weights).map(|(x, b)| x * b).sum();
        if let Some(rng) = noise.as_deref_mut() {
            u += gumbel.sample(rng);
        }
        if u > best.0 {
            best = (u, alt as u8 + 1);
        }
    }
    Ok(valid_reply(best.1))
}

impl Transport for ScriptedTransport {
    fn send(&self, request: &ChatRequest, sample_key: u64) -> Result<TransportReply, TransportError> {
        let text = match &self.policy {
            ScriptedPolicy::Echo => request.user().to_string(),
            ScriptedPolicy::FixedChoice(k) => valid_reply(*k),
            ScriptedPolicy::Uniform { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(*seed, sample_key));
                valid_reply(rng.random_range(1..=3))
            }
            ScriptedPolicy::Malformed { rate, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(*seed, sample_key));
                let broken = rng.random_bool(*rate);
                let choice = rng.random_range(1..=3);
                if broken {
                    "{\"Explanation\": \"Scripted response.\", \"Choice\": ".to_string()
                } else {
                    valid_reply(choice)
                }
            }
            ScriptedPolicy::UtilityArgmax { beta, noise_seed } => {
                let mut rng = noise_seed.map(|s| ChaCha8Rng::seed_from_u64(mix_seed(s, sample_key)));
                argmax_reply(request, beta, rng.as_mut())?
            }
        };
        Ok(TransportReply::stop(text))
    }

    fn deterministic(&self) -> bool {
        true
    }
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn send(&self, request: &ChatRequest, sample_key: u64) -> Result<TransportReply, TransportError> {
        (**self).send(request, sample_key)
    }

    fn deterministic(&self) -> bool {
        (**self).deterministic()
    }
}

/// Fails the first `failures` calls with `error`, then replies `reply`.
pub struct FlakyTransport {
    remaining: AtomicU32,
    error: TransportError,
    reply: String,
    calls: AtomicU32,
}

impl FlakyTransport {
    pub fn new(failures: u32, error: TransportError, reply: &str) -> Self {
        FlakyTransport {
            remaining: AtomicU32::new(failures),
            error,
            reply: reply.to_string(),
            calls: AtomicU32::new(0),
        }
    }

    pub fn calls(&self) -> u32 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Transport for FlakyTransport {
    fn send(&self, _request: &ChatRequest, _sample_key: u64) -> Result<TransportReply, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let failing = self
            .remaining
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok();
        if failing {
            Err(self.error.clone())
        } else {
            Ok(TransportReply::stop(self.reply.clone()))
        }
    }

    fn deterministic(&self) -> bool {
        true
    }
}

/// Wraps a transport, keeping every request and the peak number of
/// concurrent calls.
pub struct RecordingTransport<T> {
    inner: T,
    delay: Duration,
    requests: Mutex<Vec<ChatRequest>>,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T, delay: Duration) -> Self {
        RecordingTransport {
            inner,
            delay,
            requests: Mutex::new(Vec::new()),
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        }
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().unwrap().clone()
    }

    pub fn max_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn send(&self, request: &ChatRequest, sample_key: u64) -> Result<TransportReply, TransportError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.requests.lock().unwrap().push(request.clone());
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let out = self.inner.send(request, sample_key);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        out
    }

    fn deterministic(&self) -> bool {
        self.inner.deterministic()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::response_codec::{parse_response, ResponseStatus};
    use serde_json::json;

    fn request(user: &str) -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            messages: vec![
                super::super::ChatMessage { role: "system".into(), content: "s".into() },
                super::super::ChatMessage { role: "user".into(), content: user.into() },
            ],
            temperature: 1.0,
            top_p: 1.0,
            max_tokens: 300,
        }
    }

    fn sp1_question(fixed: [&str; 3]) -> String {
        let names = ["Gas boiler", "Hydrogen ready boiler", "Air source heat pump"];
        let options: Vec<Value> = names
            .iter()
            .zip(fixed)
            .map(|(n, f)| {
                json!({"name": n, "characteristics": {
                    "Fixed cost": f,
                    "Annual cost of operation (in £) and the equivalent average per month": "£ 1000 (£ 83 per month)",
                    "Support scheme": "None",
                    "Maintenance visits": "1",
                    "CO2 emission (Equivalent number of single-person economy flights from London to Glasgow)": "1000 kg per year (5 flight(s))"
                }})
            })
            .collect();
        format!(
            "Now the options and their characteristics are provided below:\n\n{}\n\nRespond in valid JSON format only.",
            serde_json::to_string_pretty(&json!({"options": options, "Choice": null})).unwrap()
        )
    }

    #[test]
    fn fixed_choice_always_answers_k() {
        let t = scripted_backend("fixed_choice:2").unwrap();
        for key in 0..20 {
            let r = t.send(&request("x"), key).unwrap();
            assert_eq!(parse_response(&r.text, true).choice, Some(2));
        }
    }

    #[test]
    fn unknown_policies_are_config_errors() {
        for bad in ["nope", "fixed_choice:4", "malformed:1.5", "uniform:x"] {
            assert!(matches!(scripted_backend(bad), Err(GatewayError::Config(_))), "{bad}");
        }
    }

    #[test]
    fn malformed_rate_matches_direct_simulation() {
        let t = scripted_backend("malformed:0.05:11").unwrap();
        let mut invalid = 0;
        let mut oracle = 0;
        for key in 0..1000u64 {
            let r = t.send(&request("x"), key).unwrap();
            if parse_response(&r.text, true).status == ResponseStatus::InvalidFormat {
                invalid += 1;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(11, key));
            if rng.random_bool(0.05) {
                oracle += 1;
            }
        }
        assert_eq!(invalid, oracle);
        // 3 binomial SDs around 50.
        assert!((invalid as f64 - 50.0).abs() <= 3.0 * (1000.0f64 * 0.05 * 0.95).sqrt(), "{invalid}");
    }

    #[test]
    fn argmax_picks_cheapest_fixed_cost() {
        let mut beta = Coefficients::new();
        beta.insert(ExperimentId::SP1, [("fixed_cost".to_string(), -1.0)].into_iter().collect());
        let t = ScriptedTransport::new(ScriptedPolicy::UtilityArgmax { beta, noise_seed: None });
        for (costs, expected) in [
            (["£ 1900", "£ 15300", "£ 9000"], 1),
            (["£ 15300", "£ 1900", "£ 9000"], 2),
            (["£ 5000", "£ 4000", "£ 3000"], 3),
        ] {
            let r = t.send(&request(&sp1_question(costs)), 0).unwrap();
            assert_eq!(parse_response(&r.text, true).choice, Some(expected));
        }
    }

    #[test]
    fn same_seed_same_replies() {
        let a = scripted_backend("uniform:5").unwrap();
        let b = scripted_backend("uniform:5").unwrap();
        for key in 0..50 {
            assert_eq!(a.send(&request("x"), key).unwrap(), b.send(&request("x"), key).unwrap());
        }
    }
}
