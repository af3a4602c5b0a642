use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use spsim::choice_model::{
    estimate_mixl, estimate_mnl, factor_filter_map, predict_choices, significant_factors, ChoiceData,
    ChoiceModelFit, ModelSpec,
};
use spsim::llm_gateway::{BackendConfig, Gateway};
use spsim::metrics_lab::build_report;
use spsim::prompt_forge::{test_scenario, PromptForge};
use spsim::scenario_runner::{
    read_records, run, Backends, InvalidPolicy, RunManifest, RunOptions, RunStore, SimulationRecord, RECORDS_FILE,
};
use spsim::survey_data::{
    load_dataset, parse_dataset_unchecked, to_json_string, validate_dataset, Criterion, Dataset, ExperimentId,
};
use spsim::synthetic_bench::{generate_population, PopulationSpec};

#[derive(Parser)]
#[command(name = "spsim", version, about = "Simulate stated-preference survey answers with LLM agents")]
struct Cli {
    /// TOML file with a backend registry and default paths.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Check a dataset against all schema invariants.
    Validate {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Print the prompt one respondent would receive.
    Render {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        respondent: String,
        #[arg(long, value_parser = parse_experiment)]
        experiment: ExperimentId,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=12))]
        scenario: u8,
        /// Factor-filter file (needed for scenario 10).
        #[arg(long)]
        filters: Option<PathBuf>,
    },
    /// Execute (or resume) a simulation run.
    Run(RunArgs),
    /// Fit a choice model on scenarios 1-5 of one experiment.
    Estimate {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_parser = parse_experiment)]
        experiment: ExperimentId,
        /// JSON model specification; defaults to the built-in one.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Fit a plain multinomial logit (no random coefficients).
        #[arg(long)]
        mnl: bool,
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Where to write the fitted model.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Derive scenario-10 factor filters from fitted models.
    Filter {
        #[arg(long = "fit", required = true)]
        fits: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict scenario-6 choices with a fitted model (scenario 13).
    Predict {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "choice-model")]
        run_id: String,
        /// JSONL output of prediction records.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Metrics over one or more run directories and prediction files.
    Report {
        #[arg(long = "run-dir")]
        run_dirs: Vec<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Prediction JSONL files from `predict`.
        #[arg(long = "predictions")]
        predictions: Vec<PathBuf>,
        /// Directory for CSV tables (with --format csv).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Generate a synthetic dataset with known utility parameters.
    Synth {
        /// JSON population specification.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        respondents: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Oracle sidecar path; defaults to `<out>.oracle.json`.
        #[arg(long)]
        oracle: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
    /// Scenario id; repeat for several. Defaults to all except 10.
    #[arg(long = "scenario", value_parser = clap::value_parser!(u8).range(1..=12))]
    scenarios: Vec<u8>,
    /// Experiment; repeat for several. Defaults to all.
    #[arg(long = "experiment", value_parser = parse_experiment)]
    experiments: Vec<ExperimentId>,
    #[arg(long)]
    repeats: Option<u32>,
    /// `id=spec` or a bare spec applied to every needed backend. A spec is a
    /// scripted policy (`uniform:7`, `fixed_choice:2`, `echo`, ...) or
    /// `http(s)://host/v1#model`.
    #[arg(long = "backend")]
    backends: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Stop after this many new records.
    #[arg(long)]
    stop_after: Option<usize>,
    /// Factor-filter file for scenario 10.
    #[arg(long)]
    filters: Option<PathBuf>,
    /// Score invalid responses as wrong instead of excluding them.
    #[arg(long)]
    invalid_as_wrong: bool,
    #[arg(long)]
    dump_prompts: bool,
}

fn parse_experiment(s: &str) -> Result<ExperimentId, String> {
    s.parse()
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    dataset: Option<PathBuf>,
    run_dir: Option<PathBuf>,
    seed: Option<u64>,
    repeats: Option<u32>,
    #[serde(default)]
    backends: BTreeMap<String, toml::Table>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(FileConfig::default()) };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    fn backend(&self, id: &str) -> Result<Option<BackendConfig>> {
        let Some(table) = self.backends.get(id) else { return Ok(None) };
        if table.keys().any(|k| k.eq_ignore_ascii_case("api_key")) {
            bail!("backend '{id}': API keys are read from the environment only; use api_key_ref");
        }
        let mut table = table.clone();
        table.insert("backend_id".into(), toml::Value::String(id.to_string()));
        let cfg: BackendConfig = table.try_into().with_context(|| format!("backend '{id}'"))?;
        Ok(Some(cfg))
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, what: &str) -> Result<T> {
    flag.or(file).ok_or_else(|| anyhow!("missing --{what}"))
}

fn backend_from_spec(id: &str, spec: &str) -> BackendConfig {
    if spec.starts_with("http://") || spec.starts_with("https://") {
        let (url, model) = spec.split_once('#').unwrap_or((spec, "default"));
        BackendConfig::new(id, url, model)
    } else {
        BackendConfig::mock(id, spec.strip_prefix("mock:").unwrap_or(spec))
    }
}

fn with_env_key(mut cfg: BackendConfig) -> BackendConfig {
    if cfg.api_key_ref.is_none() && !cfg.is_mock() {
        let var = format!("{}_API_KEY", cfg.backend_id.to_ascii_uppercase().replace('-', "_"));
        if std::env::var_os(&var).is_some() {
            cfg.api_key_ref = Some(var);
        }
    }
    cfg
}

fn resolve_backends(needed: &BTreeSet<String>, flags: &[String], file: &FileConfig) -> Result<BTreeMap<String, BackendConfig>> {
    let mut bare = None;
    let mut named = BTreeMap::new();
    for f in flags {
        match f.split_once('=') {
            Some((id, spec)) => {
                named.insert(id.to_string(), spec.to_string());
            }
            None => bare = Some(f.clone()),
        }
    }
    let mut out = BTreeMap::new();
    for id in needed {
        let cfg = if let Some(spec) = named.get(id).or(bare.as_ref()) {
            backend_from_spec(id, spec)
        } else if let Some(cfg) = file.backend(id)? {
            cfg
        } else {
            bail!("no backend configured for '{id}' (use --backend or the config file)");
        };
        out.insert(id.clone(), with_env_key(cfg));
    }
    Ok(out)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_filters(path: Option<&Path>) -> Result<Option<BTreeMap<ExperimentId, BTreeSet<String>>>> {
    path.map(read_json).transpose()
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn cmd_validate(dataset: &Path, format: Format) -> Result<ExitCode> {
    let text = fs::read_to_string(dataset).with_context(|| format!("reading {}", dataset.display()))?;
    let ds = parse_dataset_unchecked(&text)?;
    let violations = validate_dataset(&ds);
    match format {
        Format::Json => print_json(&json!({
            "respondents": ds.respondents.len(),
            "valid": violations.is_empty(),
            "violations": violations,
        }))?,
        _ => {
            for v in &violations {
                println!("{v}");
            }
            println!("{} respondent(s), {} violation(s)", ds.respondents.len(), violations.len());
        }
    }
    Ok(if violations.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_render(ds: &Dataset, rid: &str, exp: ExperimentId, sid: u8, filters: Option<&Path>, format: Format) -> Result<()> {
    let r = ds.respondent(rid).ok_or_else(|| anyhow!("no respondent '{rid}'"))?;
    let design = ds.design(exp).ok_or_else(|| anyhow!("dataset has no design for {exp}"))?;
    let mut cfg = test_scenario(sid).ok_or_else(|| anyhow!("unknown scenario {sid}"))?;
    if let Some(f) = read_filters(filters)? {
        cfg = cfg.with_resolved_filter(f);
    }
    let bundle = PromptForge::default().assemble_prompt(r, design, &cfg)?;
    match format {
        Format::Json => print_json(&bundle)?,
        _ => println!("=== system ===\n{}\n=== user ===\n{}", bundle.system_message, bundle.user_message),
    }
    Ok(())
}

fn cmd_run(a: RunArgs, file: &FileConfig, format: Format) -> Result<()> {
    let ds = load_dataset(pick(a.dataset, file.dataset.clone(), "dataset")?)?;
    let run_dir = pick(a.run_dir, file.run_dir.clone(), "run-dir")?;
    let scenarios = if a.scenarios.is_empty() {
        (1..=12).filter(|s| *s != 10).collect()
    } else {
        a.scenarios
    };
    let experiments = if a.experiments.is_empty() { ExperimentId::ALL.to_vec() } else { a.experiments };
    let run_id = a.run_id.unwrap_or_else(|| {
        run_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into())
    });
    let needed: BTreeSet<String> = scenarios
        .iter()
        .filter_map(|s| test_scenario(*s))
        .map(|c| c.backend_id)
        .collect();
    let configs = resolve_backends(&needed, &a.backends, file)?;

    let mut manifest = RunManifest::new(&run_id, &ds, scenarios, experiments);
    if let Some(r) = a.repeats.or(file.repeats) {
        manifest.repeats = r;
    }
    manifest.seed = a.seed.or(file.seed).unwrap_or(0);
    manifest.factor_filters = read_filters(a.filters.as_deref())?;
    if a.invalid_as_wrong {
        manifest.invalid_policy = InvalidPolicy::RetryThenWrong;
    }
    manifest.backends = configs.iter().map(|(id, c)| (id.clone(), c.into())).collect();

    let mut backends = Backends::new();
    for (id, cfg) in configs {
        backends.insert(id, Gateway::from_config(cfg)?);
    }
    let store = RunStore::open(&run_dir, &manifest)?;
    let options = RunOptions {
        workers: a.workers,
        stop_after: a.stop_after,
        dump_prompts: a.dump_prompts,
        keyword_table: None,
    };
    let summary = run(&ds, &manifest, &backends, &store, &options)?;
    let records = read_records(&run_dir.join(RECORDS_FILE))?;
    let invalid = records.iter().filter(|r| !r.response.is_valid()).count();
    let invalid_rate = if records.is_empty() { 0.0 } else { invalid as f64 / records.len() as f64 };
    match format {
        Format::Json => print_json(&json!({
            "summary": summary,
            "records": records.len(),
            "invalid_rate": invalid_rate,
        }))?,
        _ => {
            println!("run {}: {} of {} cells done ({} new, {} backend calls){}",
                summary.run_id,
                summary.already_done + summary.new_records,
                summary.total_cells,
                summary.new_records,
                summary.backend_calls,
                if summary.complete { "" } else { ", incomplete" });
            for (status, n) in &summary.status_counts {
                println!("  {status}: {n}");
            }
            println!("invalid: {:.1}% of {} records", 100.0 * invalid_rate, records.len());
            if !summary.skipped.is_empty() {
                println!("skipped: {}", summary.skipped.join(", "));
            }
        }
    }
    Ok(())
}

struct EstimateArgs {
    exp: ExperimentId,
    spec: Option<PathBuf>,
    mnl: bool,
    draws: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

fn cmd_estimate(ds: &Dataset, a: EstimateArgs, file: &FileConfig, format: Format) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => read_json::<ModelSpec>(p)?,
        None if a.mnl => ModelSpec::mnl_for(a.exp),
        None => ModelSpec::default_for(a.exp),
    };
    if spec.experiment_id != a.exp {
        bail!("model spec is for {}, not {}", spec.experiment_id, a.exp);
    }
    if a.mnl {
        spec.random_coefficients.clear();
    }
    if let Some(r) = a.draws {
        spec.n_draws = r;
    }
    if let Some(s) = a.seed.or(file.seed) {
        spec.seed = s;
    }
    let data = ChoiceData::from_dataset(ds, &spec)?;
    let fit = if spec.random_coefficients.is_empty() { estimate_mnl(&spec, &data)? } else { estimate_mixl(&spec, &data)? };
    let text = serde_json::to_string_pretty(&fit)?;
    if let Some(out) = &a.out {
        write_file(out, &text)?;
    }
    match format {
        Format::Json => println!("{text}"),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(std::io::stdout());
            w.write_record(["parameter", "estimate", "std_error", "t_stat"])?;
            for (i, name) in fit.parameter_names.iter().enumerate() {
                w.write_record([
                    name.clone(),
                    fit.estimates[i].to_string(),
                    fit.std_errors[i].to_string(),
                    fit.t_stats[i].to_string(),
                ])?;
            }
            w.flush()?;
        }
        Format::Text => print!("{}", fit.summary_table()),
    }
    if !fit.converged {
        log::warn!("fit did not converge: {}", fit.note.as_deref().unwrap_or("unknown reason"));
    }
    Ok(())
}

fn cmd_filter(fits: &[PathBuf], alpha: f64, out: Option<&Path>, format: Format) -> Result<()> {
    let mut selections = Vec::new();
    for p in fits {
        let fit: ChoiceModelFit = read_json(p)?;
        selections.push(significant_factors(&fit, alpha).with_context(|| p.display().to_string())?);
    }
    let map = factor_filter_map(&selections);
    let text = serde_json::to_string_pretty(&map)?;
    if let Some(out) = out {
        write_file(out, &text)?;
    }
    match format {
        Format::Text => {
            for s in &selections {
                let items: Vec<&str> = s.factor_items.iter().map(String::as_str).collect();
                println!("{} (alpha {}, |t| > {:.3}): {}", s.experiment_id, s.alpha, s.critical_value, items.join(", "));
                if let Some(w) = &s.warning {
                    println!("  warning: {w}");
                }
            }
        }
        _ => println!("{text}"),
    }
    Ok(())
}

fn cmd_predict(ds: &Dataset, fit: &Path, run_id: &str, out: Option<&Path>, format: Format) -> Result<()> {
    let fit: ChoiceModelFit = read_json(fit)?;
    let set = predict_choices(&fit, ds)?;
    let mut jsonl = String::new();
    for r in set.to_records(run_id) {
        jsonl.push_str(&serde_json::to_string(&r)?);
        jsonl.push('\n');
    }
    match out {
        Some(p) => write_file(p, &jsonl)?,
        None if format == Format::Json => {}
        None => print!("{jsonl}"),
    }
    let summary = json!({
        "experiment": set.experiment_id,
        "predictions": set.predictions.len(),
        "skipped": set.skipped,
        "accuracy": set.accuracy(),
    });
    match format {
        Format::Json => print_json(&summary)?,
        _ if out.is_some() => println!(
            "{}: {} prediction(s), accuracy {}",
            set.experiment_id,
            set.predictions.len(),
            set.accuracy().map_or("n/a".into(), |a| format!("{a:.4}"))
        ),
        _ => {}
    }
    Ok(())
}

fn read_jsonl_records(path: &Path) -> Result<Vec<SimulationRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

fn cmd_report(ds: &Dataset, run_dirs: &[PathBuf], predictions: &[PathBuf], out_dir: Option<&Path>, format: Format) -> Result<()> {
    if run_dirs.is_empty() && predictions.is_empty() {
        bail!("nothing to report: give --run-dir or --predictions");
    }
    let mut records = Vec::new();
    for d in run_dirs {
        let (_, recs) = RunStore::existing(d).with_context(|| d.display().to_string())?;
        records.extend(recs);
    }
    for p in predictions {
        records.extend(read_jsonl_records(p)?);
    }
    let report = build_report(&records, ds, &Criterion::ALL);
    match format {
        Format::Json => println!("{}", report.to_json()),
        Format::Text => print!("{}", report.to_text()),
        Format::Csv => {
            let tables = report.to_csv();
            match out_dir {
                Some(dir) => {
                    for (name, csv) in &tables {
                        write_file(&dir.join(format!("{name}.csv")), csv)?;
                    }
                }
                None => {
                    let mut stdout = std::io::stdout().lock();
                    for (name, csv) in &tables {
                        writeln!(stdout, "# {name}\n{csv}")?;
                    }
                }
            }
        }
    }
    Ok(())
}

fn cmd_synth(spec: Option<&Path>, n: Option<usize>, seed: Option<u64>, out: &Path, oracle: Option<PathBuf>, format: Format) -> Result<()> {
    let mut pop: PopulationSpec = match spec {
        Some(p) => read_json(p)?,
        None => PopulationSpec::new(n.ok_or_else(|| anyhow!("missing --respondents or --spec"))?, seed.unwrap_or(0)),
    };
    if let Some(n) = n {
        pop.n_respondents = n;
    }
    if let Some(s) = seed {
        pop.seed = s;
    }
    let (ds, truth) = generate_population(&pop)?;
    let oracle_path = oracle.unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".oracle.json");
        PathBuf::from(s)
    });
    write_file(out, &to_json_string(&ds))?;
    write_file(&oracle_path, &truth.to_json())?;
    match format {
        Format::Json => print_json(&json!({
            "dataset": out,
            "oracle": oracle_path,
            "respondents": ds.respondents.len(),
        }))?,
        _ => println!("wrote {} respondent(s) to {} (oracle {})", ds.respondents.len(), out.display(), oracle_path.display()),
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let format = cli.format;
    let dataset = |flag: Option<PathBuf>| -> Result<Dataset> {
        Ok(load_dataset(pick(flag, file.dataset.clone(), "dataset")?)?)
    };
    match cli.command {
        Command::Validate { dataset: d } => return cmd_validate(&pick(d, file.dataset.clone(), "dataset")?, format),
        Command::Render { dataset: d, respondent, experiment, scenario, filters } => {
            cmd_render(&dataset(d)?, &respondent, experiment, scenario, filters.as_deref(), format)?
        }
        Command::Run(a) => cmd_run(a, &file, format)?,
        Command::Estimate { dataset: d, experiment, spec, mnl, draws, seed, out } => {
            let args = EstimateArgs { exp: experiment, spec, mnl, draws, seed, out };
            cmd_estimate(&dataset(d)?, args, &file, format)?
        }
        Command::Filter { fits, alpha, out } => cmd_filter(&fits, alpha, out.as_deref(), format)?,
        Command::Predict { fit, dataset: d, run_id, out } => cmd_predict(&dataset(d)?, &fit, &run_id, out.as_deref(), format)?,
        Command::Report { run_dirs, dataset: d, predictions, out_dir } => {
            cmd_report(&dataset(d)?, &run_dirs, &predictions, out_dir.as_deref(), format)?
        }
        Command::Synth { spec, respondents, seed, out, oracle } => {
            cmd_synth(spec.as_deref(), respondents, seed, &out, oracle, format)?
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", json!({ "error": format!("{e:#}") }));
            ExitCode::FAILURE
        }
    }
}
