use std::collections::BTreeSet;
use std::path::PathBuf;

use spsim::prompt_forge::{list_test_scenarios, PromptForge, SD_LABEL, SPC_LABEL, ST_LABEL};
use spsim::survey_data::{load_dataset, Dataset, ExperimentId};

fn tests_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests")
}

fn fixture() -> Dataset {
    load_dataset(tests_dir().join("fixtures/reference_profile.json")).unwrap()
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(tests_dir().join("golden").join(name)).unwrap()
}

#[test]
fn scenario8_matches_golden_files() {
    let d = fixture();
    let r = d.respondent("reference-profile").unwrap();
    let forge = PromptForge::default();
    let cfg = &list_test_scenarios()[7];
    for exp in ExperimentId::ALL {
        let bundle = forge.assemble_prompt(r, d.design(exp).unwrap(), cfg).unwrap();
        let sys = golden(&format!("{exp}_scenario8_system.txt"));
        let user = golden(&format!("{exp}_scenario8_user.txt"));
        assert_eq!(normalize(&bundle.system_message), normalize(&sys), "{exp} system");
        assert_eq!(normalize(&bundle.user_message), normalize(&user), "{exp} user");
    }
}

#[test]
fn ablation_sections_follow_flags() {
    let d = fixture();
    let r = d.respondent("reference-profile").unwrap();
    let forge = PromptForge::default();
    let mut checked = 0;
    for cfg in list_test_scenarios().into_iter().filter(|c| c.is_llm_scenario) {
        let cfg = if cfg.factor_filter.is_some() {
            // Keep everything: a retained set naming all three components.
            let all: BTreeSet<String> = ["SPC", "SD", "ST"].iter().map(|s| s.to_string()).collect();
            cfg.with_resolved_filter(ExperimentId::ALL.iter().map(|e| (*e, all.clone())).collect())
        } else {
            cfg
        };
        for exp in ExperimentId::ALL {
            let b = forge.assemble_prompt(r, d.design(exp).unwrap(), &cfg).unwrap();
            let mut expected = Vec::new();
            for (on, label) in [(cfg.include_spc, SPC_LABEL), (cfg.include_sd, SD_LABEL), (cfg.include_st, ST_LABEL)] {
                assert_eq!(b.system_message.contains(&format!("{label}:")), on, "scenario {} {exp} {label}", cfg.id);
                if on {
                    expected.push(label.to_string());
                }
            }
            assert_eq!(b.provided_factors, expected);
            let listed: Vec<String> = expected.iter().map(|l| format!("' {l}'")).collect();
            assert!(b.user_message.contains(&format!("provided factors: [{}]", listed.join(", "))));
            assert_eq!(b.user_message.contains("\"Explanation\""), cfg.require_explanation);
            assert!(b.user_message.contains("\"Choice\": null"));
            let explained = match exp {
                ExperimentId::SP1 => "Hydrogen-ready boiler: A hydrogen-ready boiler",
                ExperimentId::SP2 => "Minor retrofit: In addition",
                ExperimentId::SP3 => "Shared ownership: You share ownership",
            };
            assert_eq!(b.system_message.contains(explained), cfg.include_option_explanations);
            checked += 1;
        }
    }
    assert_eq!(checked, 36);
}

#[test]
fn scenario_13_is_rejected() {
    let d = fixture();
    let r = d.respondent("reference-profile").unwrap();
    let cfg = &list_test_scenarios()[12];
    assert!(PromptForge::default().assemble_prompt(r, d.design(ExperimentId::SP1).unwrap(), cfg).is_err());
}
