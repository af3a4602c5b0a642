//! Simulation harness for stated-preference heating surveys answered by LLM
//! agents, benchmarked against a mixed logit choice model.

pub mod survey_data;
pub mod prompt_forge;
pub mod response_codec;
pub mod llm_gateway;
pub mod scenario_runner;
pub mod metrics_lab;
pub mod choice_model;
pub mod synthetic_bench;
