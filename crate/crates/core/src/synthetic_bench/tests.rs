use super::*;
use crate::survey_data::{to_json_string, validate_dataset};

fn single(exp: ExperimentId, n: usize, seed: u64) -> PopulationSpec {
    PopulationSpec { experiments: vec![exp], ..PopulationSpec::new(n, seed) }
}

#[test]
fn same_seed_same_bytes() {
    let spec = PopulationSpec::new(20, 7);
    let (a, oa) = generate_population(&spec).unwrap();
    let (b, ob) = generate_population(&spec).unwrap();
    assert_eq!(to_json_string(&a), to_json_string(&b));
    assert_eq!(oa.to_json(), ob.to_json());
    let (c, _) = generate_population(&PopulationSpec::new(20, 8)).unwrap();
    assert_ne!(to_json_string(&a), to_json_string(&c));
}

#[test]
fn generated_data_is_valid_and_round_trips() {
    let (ds, _) = generate_population(&PopulationSpec::new(30, 1)).unwrap();
    assert!(validate_dataset(&ds).is_empty(), "{:?}", validate_dataset(&ds));
    let back = crate::survey_data::parse_dataset(&to_json_string(&ds)).unwrap();
    assert_eq!(to_json_string(&back), to_json_string(&ds));
}

#[test]
fn synthetic_prompts_render() {
    let (ds, _) = generate_population(&PopulationSpec::new(2, 3)).unwrap();
    let forge = crate::prompt_forge::PromptForge::new(crate::prompt_forge::TemplateSet::builtin());
    let cfg = crate::prompt_forge::test_scenario(8).unwrap();
    for r in &ds.respondents {
        for exp in ExperimentId::ALL {
            let b = forge.assemble_prompt(r, ds.design(exp).unwrap(), &cfg).unwrap();
            assert!(b.system_message.contains("Your socio-demographics"));
        }
    }
}

#[test]
fn deterministic_mode_picks_systematic_argmax() {
    let mut spec = single(ExperimentId::SP1, 40, 2);
    spec.deterministic = true;
    let (ds, oracle) = generate_population(&spec).unwrap();
    let design = builtin_design(ExperimentId::SP1);
    let means = spec.params(ExperimentId::SP1);
    let spec0 = PopulationSpec { true_params: [(ExperimentId::SP1, means.without_mixing())].into(), ..spec };
    let (ds0, _) = generate_population(&spec0).unwrap();
    for r in &ds0.respondents {
        for s in r.scenarios(ExperimentId::SP1).unwrap() {
            let enc = encode_attributes(&design, s).unwrap();
            let v: Vec<f64> = enc
                .rows
                .iter()
                .map(|x| enc.columns.iter().zip(x).map(|(c, a)| a * means.means.get(c).copied().unwrap_or(0.0)).sum())
                .collect();
            assert_eq!(s.recorded_choice, Some(argmax(&v) as u8 + 1));
        }
    }
    assert_eq!(oracle_accuracy_bound(&oracle, &ds), Some(1.0));
}

#[test]
fn null_model_gives_even_shares() {
    let mut spec = single(ExperimentId::SP3, 3000, 4);
    spec.true_params.insert(ExperimentId::SP3, TrueParams::default());
    let (ds, oracle) = generate_population(&spec).unwrap();
    let mut counts = [0.0; 3];
    for r in &ds.respondents {
        for s in r.scenarios(ExperimentId::SP3).unwrap() {
            counts[s.recorded_choice.unwrap() as usize - 1] += 1.0;
        }
    }
    let n: f64 = counts.iter().sum();
    let sd = (n * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
    for c in counts {
        assert!((c - n / 3.0).abs() < 3.0 * sd, "{counts:?}");
    }
    assert!((oracle_accuracy_bound(&oracle, &ds).unwrap() - 1.0 / 3.0).abs() < 1e-12);
}

/// Count of chosen cheapest options versus the oracle's expected count.
fn cheapest_share_check(n: usize, seed: u64) {
    let mut spec = single(ExperimentId::SP1, n, seed);
    let mut p = TrueParams::default();
    p.means.insert("fixed_cost".into(), -0.6);
    p.means.insert("operation_cost".into(), -0.8);
    spec.true_params.insert(ExperimentId::SP1, p.clone());
    let (ds, oracle) = generate_population(&spec).unwrap();
    let design = builtin_design(ExperimentId::SP1);
    let (mut hits, mut expected, mut var) = (0.0, 0.0, 0.0);
    for r in &ds.respondents {
        for s in r.scenarios(ExperimentId::SP1).unwrap() {
            let enc = encode_attributes(&design, s).unwrap();
            let cost: Vec<f64> = enc.rows.iter().map(|x| 0.6 * x[0] + 0.8 * x[1]).collect();
            let cheapest = (0..3).fold(0, |b, k| if cost[k] < cost[b] { k } else { b });
            let prob = oracle.probabilities(ExperimentId::SP1, &r.id, s.index).unwrap()[cheapest];
            expected += prob;
            var += prob * (1.0 - prob);
            if s.recorded_choice == Some(cheapest as u8 + 1) {
                hits += 1.0;
            }
        }
    }
    assert!((hits - expected).abs() < 3.0 * var.sqrt(), "hits {hits} expected {expected}");
}

#[test]
fn cheapest_share_matches_oracle() {
    cheapest_share_check(500, 5);
}

#[test]
fn empirical_shares_converge_at_scale() {
    cheapest_share_check(10_000 / 6 + 1, 6);
}

#[test]
fn oracle_bound_matches_monte_carlo() {
    use rand::{Rng, SeedableRng};
    let (ds, oracle) = generate_population(&single(ExperimentId::SP2, 400, 9)).unwrap();
    let bound = oracle_accuracy_bound_for(&oracle, &ds, ExperimentId::SP2).unwrap();
    let direct: f64 = oracle.respondents[&ExperimentId::SP2]
        .iter()
        .map(|r| r.probabilities[5].iter().copied().fold(0.0, f64::max))
        .sum::<f64>()
        / 400.0;
    assert!((bound - direct).abs() < 1e-12);
    // Simulate the truth process and score the max-probability predictor.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let trials = 200;
    let mut hits = 0usize;
    for r in &oracle.respondents[&ExperimentId::SP2] {
        let p = r.probabilities[5];
        let best = argmax(&p);
        for _ in 0..trials {
            let u: f64 = rng.random();
            let drawn = if u < p[0] { 0 } else if u < p[0] + p[1] { 1 } else { 2 };
            hits += usize::from(drawn == best);
        }
    }
    let n = (400 * trials) as f64;
    let mc = hits as f64 / n;
    assert!((mc - bound).abs() < 3.0 * (bound * (1.0 - bound) / n).sqrt() + 1e-3, "mc {mc} bound {bound}");
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(generate_population(&PopulationSpec::new(0, 1)).is_err());
    let mut spec = PopulationSpec::new(1, 1);
    spec.pools.get_mut(&ExperimentId::SP1).unwrap()[0].levels[0].clear();
    assert!(generate_population(&spec).is_err());
    let mut spec = PopulationSpec::new(1, 1);
    spec.true_params.get_mut(&ExperimentId::SP1).unwrap().means.insert("bogus".into(), 1.0);
    assert!(generate_population(&spec).is_err());
}

#[test]
fn spec_serializes_with_defaults() {
    let spec: PopulationSpec = serde_json::from_str(r#"{"n_respondents": 5, "seed": 2}"#).unwrap();
    assert_eq!(spec.experiments, ExperimentId::ALL.to_vec());
    let (ds, oracle) = generate_population(&spec).unwrap();
    assert_eq!(ds.respondents.len(), 5);
    let sidecar: serde_json::Value = serde_json::from_str(&oracle.to_json()).unwrap();
    assert!(sidecar["true_params"]["SP1"]["means"]["fixed_cost"].is_number());
}
