use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use finpop_core::diagnostics::{posterior_predictive_check, Quantity};
use finpop_core::estimators::{estimate, EstimateOptions, Method, SubpopulationFilter};
use finpop_core::frames::{load_population, load_sample, transform_outcome, CovariateSchema, OutcomeTransform};
use finpop_core::samplers::{FitReport, SamplerConfig};
use finpop_core::simlab::{run_study, ScenarioId, ScenarioSpec, StudyConfig, StudyMethod};
use finpop_core::Error;

#[derive(Parser)]
#[command(name = "finpop", version, about = "Finite-population mean estimation from non-probability samples")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a population or subpopulation mean.
    Fit(FitArgs),
    /// Run a simulation study on an artificial population.
    Simulate(SimulateArgs),
    /// Posterior predictive check of a tree model.
    Ppc(PpcArgs),
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    population: PathBuf,
    #[arg(long)]
    sample: PathBuf,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    transform: Option<OutcomeTransform>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Filter such as `age>=65`.
    #[arg(long)]
    subpop: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Write per-iteration draws of tree methods to this CSV.
    #[arg(long)]
    dump_draws: Option<PathBuf>,
}

#[derive(Args)]
struct PpcArgs {
    #[command(flatten)]
    data: DataArgs,
    /// CSV of realized and predictive quantities.
    #[arg(long)]
    out: PathBuf,
    /// p-value summary; defaults to the CSV path with a `.json` extension.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: ScenarioId,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    #[arg(long, value_delimiter = ',', required = true)]
    methods: Vec<StudyMethod>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Parallel replicates; results do not depend on this.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// JSON file with sampler overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Per-replicate estimates as CSV.
    #[arg(long)]
    rows_csv: Option<PathBuf>,
    /// Draw a new population in every replicate.
    #[arg(long)]
    regenerate_population: bool,
    #[arg(long)]
    population_size: Option<usize>,
    #[arg(long)]
    sample_size: Option<usize>,
}

/// Contents of `--config`; command-line flags take precedence.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    schema: Option<CovariateSchema>,
    #[serde(skip_serializing_if = "Option::is_none")]
    method: Option<Method>,
    sampler: SamplerConfig,
    transform: OutcomeTransform,
    #[serde(skip_serializing_if = "Option::is_none")]
    subpop: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Estimation(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Estimation(e.to_string())
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn read_config(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Input(format!("config {}: {e}", path.display())))
}

fn digest(config: &Value) -> String {
    let bytes = serde_json::to_vec(config).expect("serializable config");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn envelope(command: &str, config: Value, seed: u64, result: Value) -> Value {
    json!({
        "tool": { "name": "finpop", "version": env!("CARGO_PKG_VERSION"), "command": command },
        "config_sha256": digest(&config),
        "config": config,
        "seed": seed,
        "result": result,
    })
}

fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable output");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))
}

fn report_json(report: &FitReport) -> Value {
    json!({
        "n_draws": report.n_draws,
        "structure_acceptance": report.moves.structure_acceptance(),
        "mean_tau": report.mean_tau,
    })
}

/// Merge flags into the config file and load both frames.
fn prepare(
    data: &DataArgs,
    subpop: Option<&str>,
) -> CliResult<(RunConfig, Method, finpop_core::frames::PopulationFrame, finpop_core::frames::SampleFrame)> {
    let mut cfg = read_config(&data.config)?;
    if let Some(m) = data.method {
        cfg.method = Some(m);
    }
    if let Some(t) = data.transform {
        cfg.transform = t;
    }
    if let Some(f) = subpop {
        cfg.subpop = Some(f.to_string());
    }
    let seed = data.seed.or(cfg.seed).unwrap_or(cfg.sampler.seed);
    cfg.seed = Some(seed);
    cfg.sampler.seed = seed;
    cfg.sampler.validate()?;
    let method = cfg
        .method
        .ok_or_else(|| Failure::Input("no method given (use --method or `method` in the config)".into()))?;
    let schema = cfg
        .schema
        .clone()
        .ok_or_else(|| Failure::Input("config field `schema` is required".into()))?;
    let population = load_population(&data.population, &schema)?;
    let sample = load_sample(&data.sample, &schema, &population)?;
    let sample = transform_outcome(&sample, cfg.transform)?;
    Ok((cfg, method, population, sample))
}

fn cmd_fit(args: &FitArgs) -> CliResult<()> {
    let (cfg, method, population, sample) = prepare(&args.data, args.subpop.as_deref())?;
    let filter: Option<SubpopulationFilter> = cfg.subpop.as_deref().map(str::parse).transpose()?;
    let options = EstimateOptions {
        sampler: cfg.sampler.clone(),
        ..Default::default()
    };
    let est = estimate(method, &population, &sample, &options, filter.as_ref())?;
    if let Some(path) = &args.dump_draws {
        match &est.draws {
            Some(d) => d.write_csv(path)?,
            None => return Err(Failure::Input(format!("method {method} has no posterior draws to dump"))),
        }
    }
    let mut result = serde_json::to_value(&est.estimate).expect("serializable estimate");
    result["transform"] = json!(cfg.transform);
    if let Some(r) = &est.report {
        result["chain"] = report_json(r);
    }
    let config = serde_json::to_value(&cfg).expect("serializable config");
    write_json(&args.out, &envelope("fit", config, cfg.sampler.seed, result))
}

fn cmd_ppc(args: &PpcArgs) -> CliResult<()> {
    let (cfg, method, population, sample) = prepare(&args.data, None)?;
    if cfg.subpop.is_some() {
        return Err(Failure::Input("ppc does not take a subpopulation filter".into()));
    }
    let options = EstimateOptions {
        sampler: cfg.sampler.clone(),
        ..Default::default()
    };
    let (res, report) = posterior_predictive_check(method, &population, &sample, &options)?;
    res.write_csv(&args.out)?;
    let mut pvalues = serde_json::Map::new();
    for q in Quantity::ALL {
        pvalues.insert(q.to_string(), json!(res.p_value(q)));
    }
    let result = json!({
        "method": method,
        "n_draws": res.n_draws,
        "p_values": pvalues,
        "chain": report_json(&report),
    });
    let summary = args.summary.clone().unwrap_or_else(|| args.out.with_extension("json"));
    let config = serde_json::to_value(&cfg).expect("serializable config");
    write_json(&summary, &envelope("ppc", config, cfg.sampler.seed, result))
}

fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let cfg = match &args.config {
        Some(p) => read_config(p)?,
        None => RunConfig::default(),
    };
    if cfg.schema.is_some() || cfg.method.is_some() || cfg.subpop.is_some() || cfg.transform != OutcomeTransform::None {
        return Err(Failure::Input(
            "simulate reads only `sampler` and `seed` from the config".into(),
        ));
    }
    let seed = args.seed.or(cfg.seed).unwrap_or(cfg.sampler.seed);
    let mut scenario = ScenarioSpec::new(args.scenario);
    if let Some(n) = args.population_size {
        scenario.population_size = n;
    }
    if let Some(n) = args.sample_size {
        scenario.sample_size = n;
    }
    let mut study = StudyConfig::new(scenario, args.methods.clone(), args.replicates, seed);
    study.sampler = SamplerConfig { seed, ..cfg.sampler };
    study.jobs = args.jobs;
    study.regenerate_population = args.regenerate_population;
    let res = run_study(&study)?;
    if let Some(p) = &args.rows_csv {
        res.write_rows_csv(p)?;
    }
    let mut result = serde_json::to_value(&res).expect("serializable study");
    let config = result
        .as_object_mut()
        .and_then(|o| o.remove("config"))
        .expect("study config present");
    write_json(&args.out, &envelope("simulate", config, seed, result))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Ppc(a) => cmd_ppc(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Estimation(msg)) => {
            eprintln!("estimation failed: {msg}");
            ExitCode::from(3)
        }
    }
}
