use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use serde::Deserialize;

use splitplan::cost_model::{
    build_preset, calibrate, profile as build_profile, reference_devices, CostMetric, DeviceSpec,
    ModelSpec,
};
use splitplan::evaluator::{
    geometric_deadlines, read_sweep_csv, run_sweep_with_jobs, write_sweep_csv,
};
use splitplan::planner::{plan as run_planner, plan_dp_with, DpOptions, Location, PlannerKind};
use splitplan::problem::build_problem;
use splitplan::throughput_sim::{
    capacity_for_requests, compare_variants, scenario_table, simulate as run_simulation, SimConfig,
    SimResult, Variant, DEFAULT_EXEC_COUNT_MAX,
};
use splitplan::{ModelProfile, Scenario, SweepGrid};

use crate::output::{to_json, RunManifest, Sink};
use crate::CliError;

fn read_json<T: for<'de> Deserialize<'de>>(path: &PathBuf) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::unreadable(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// Preset name or path to a model JSON file.
    #[arg(long)]
    model: String,
    #[arg(long)]
    seq_len: u64,
    #[arg(long, default_value = "flop")]
    metric: CostMetric,
    /// Client throughput in FLOP/s.
    #[arg(long, conflicts_with = "calibrate_client")]
    client_tput: Option<f64>,
    /// Server throughput in FLOP/s.
    #[arg(long, conflicts_with = "calibrate_server")]
    server_tput: Option<f64>,
    /// Pick the client throughput so the whole model takes this many seconds.
    #[arg(long)]
    calibrate_client: Option<f64>,
    /// Pick the server throughput so the whole model takes this many seconds.
    #[arg(long)]
    calibrate_server: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

fn load_model(model: &str, seq_len: u64) -> Result<ModelSpec, CliError> {
    if model.ends_with(".json") || Path::new(model).is_file() {
        let spec: ModelSpec = read_json(&PathBuf::from(model))?;
        let spec = spec.with_seq_len(seq_len);
        spec.validate()?;
        Ok(spec)
    } else {
        Ok(build_preset(model, seq_len)?)
    }
}

fn device(
    name: &str,
    spec: &ModelSpec,
    tput: Option<f64>,
    target: Option<f64>,
    fallback: DeviceSpec<f64>,
) -> Result<DeviceSpec<f64>, CliError> {
    Ok(match (tput, target) {
        (Some(t), _) => DeviceSpec::new(name, t)?,
        (None, Some(seconds)) => calibrate(name, spec, seconds)?,
        (None, None) => fallback,
    })
}

pub fn profile(args: ProfileArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let spec = load_model(&args.model, args.seq_len)?;
    let (ref_client, ref_server) = reference_devices::<f64>();
    let client = device(
        "client",
        &spec,
        args.client_tput,
        args.calibrate_client,
        ref_client,
    )?;
    let server = device(
        "server",
        &spec,
        args.server_tput,
        args.calibrate_server,
        ref_server,
    )?;
    let prof = build_profile(&spec, &client, &server, args.metric);
    log::info!(
        "{}: {} layers, client {:.4} s, server {:.4} s",
        prof.model,
        prof.layers.len(),
        prof.total_client_time(),
        prof.total_server_time()
    );
    let sink = Sink::parse(&args.out);
    sink.write(&to_json(&prof))?;
    let mut manifest = RunManifest::new("profile", started);
    manifest.inputs.push(args.model);
    manifest.outputs.push(sink.describe());
    manifest.write_beside(&sink)
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    scenario: PathBuf,
    /// dp, greedy, oracle, all-server or all-client.
    #[arg(long, default_value = "dp")]
    planner: PlannerKind,
    /// Force the last layer onto one side (dp only): client or server.
    #[arg(long, value_parser = parse_location)]
    must_end_at: Option<Location>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_location(s: &str) -> Result<Location, String> {
    match s {
        "client" => Ok(Location::Client),
        "server" => Ok(Location::Server),
        other => Err(format!("expected client or server, got `{other}`")),
    }
}

pub fn plan(args: PlanArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let prof: ModelProfile = read_json(&args.profile)?;
    let scenario: Scenario = read_json(&args.scenario)?;
    let built = build_problem(
        &prof,
        &scenario.link()?,
        scenario.deadline_s,
        &scenario.options(),
    )?;
    let policy = match (args.planner, args.must_end_at) {
        (PlannerKind::Dp, end) => plan_dp_with(&built.problem, DpOptions { must_end_at: end })?,
        (_, Some(_)) => {
            return Err(CliError::config(
                "--must-end-at applies to the dp planner only",
            ))
        }
        (kind, None) => run_planner(kind, &built.problem)?,
    };
    let sink = Sink::parse(&args.out);
    sink.write(&to_json(&policy))?;
    let mut manifest = RunManifest::new("plan", started);
    manifest.inputs = vec![
        args.profile.display().to_string(),
        args.scenario.display().to_string(),
    ];
    manifest.outputs.push(sink.describe());
    manifest.write_beside(&sink)?;
    if policy.feasible {
        Ok(())
    } else {
        Err(CliError {
            code: CliError::INFEASIBLE,
            message: format!(
                "no placement meets the deadline (best latency {} units > budget {})",
                policy.integer_latency, built.problem.budget
            ),
        })
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Replace the grid's deadlines with this value halved repeatedly.
    #[arg(long, requires = "deadline_count")]
    deadline_max: Option<f64>,
    #[arg(long, requires = "deadline_max")]
    deadline_count: Option<usize>,
}

pub fn sweep(args: SweepArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let mut grid: serde_json::Value = read_json(&args.grid)?;
    if let (Some(max), Some(count)) = (args.deadline_max, args.deadline_count) {
        grid["deadlines_s"] =
            serde_json::to_value(geometric_deadlines(max, count)).expect("numbers");
    } else if grid.get("deadlines_s").is_none() {
        return Err(CliError::config(
            "grid has no deadlines_s and no --deadline-max/--deadline-count",
        ));
    }
    let grid: SweepGrid = serde_json::from_value(grid)
        .map_err(|e| CliError::config(format!("{}: {e}", args.grid.display())))?;
    let cells = run_sweep_with_jobs(&grid, args.jobs)?;
    let mut buf = Vec::new();
    write_sweep_csv(&cells, &mut buf)?;
    let sink = Sink::parse(&args.out);
    sink.write(&buf)?;
    let mut manifest = RunManifest::new("sweep", started);
    manifest.inputs.push(args.grid.display().to_string());
    manifest.outputs.push(sink.describe());
    manifest.write_beside(&sink)
}

/// Simulation settings that may come from a JSON file instead of flags.
#[derive(Debug, Default, Deserialize)]
struct SimFile {
    beta: Option<f64>,
    capacity_requests: Option<f64>,
    seed: Option<u64>,
    variant: Option<String>,
    horizon: Option<usize>,
    exec_count_max: Option<u32>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Sweep CSV to draw scenarios from.
    #[arg(long)]
    scenarios: PathBuf,
    /// JSON file with any of beta, capacity_requests, seed, variant, horizon, exec_count_max.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Arrivals per millisecond.
    #[arg(long)]
    beta: Option<f64>,
    /// Capacity expressed as a number of average no-split requests.
    #[arg(long)]
    capacity_requests: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// dp, greedy, nosplit or compare.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    exec_count_max: Option<u32>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn write_sim_outputs(
    dir: &Path,
    variant: Variant,
    result: &SimResult,
    outputs: &mut Vec<String>,
) -> Result<(), CliError> {
    let name = variant.as_str();
    let csv_err = |e: csv::Error| CliError::config(e.to_string());

    let mut requests = csv::Writer::from_writer(Vec::new());
    for record in &result.records {
        requests.serialize(record).map_err(csv_err)?;
    }
    let requests = requests
        .into_inner()
        .map_err(|e| CliError::config(e.to_string()))?;

    let mut cumulative = csv::Writer::from_writer(Vec::new());
    cumulative
        .write_record(["request_id", "arrival_ms", "cumulative_wait_ms"])
        .map_err(csv_err)?;
    for (id, arrival, total) in result.cumulative_wait() {
        cumulative
            .write_record([id.to_string(), arrival.to_string(), total.to_string()])
            .map_err(csv_err)?;
    }
    let cumulative = cumulative
        .into_inner()
        .map_err(|e| CliError::config(e.to_string()))?;

    let files = [
        (format!("{name}_requests.csv"), requests),
        (format!("{name}_summary.json"), to_json(&result.summary())),
        (format!("{name}_cumulative.csv"), cumulative),
    ];
    for (file, bytes) in files {
        let path = dir.join(&file);
        Sink::File(path.clone()).write(&bytes)?;
        outputs.push(path.display().to_string());
    }
    Ok(())
}

pub fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let file: SimFile = match &args.config {
        Some(path) => read_json(path)?,
        None => SimFile::default(),
    };
    let missing = |what: &str| CliError::config(format!("--{what} is required (flag or --config)"));
    let beta = args.beta.or(file.beta).ok_or_else(|| missing("beta"))?;
    let seed = args.seed.or(file.seed).ok_or_else(|| missing("seed"))?;
    let horizon = args
        .horizon
        .or(file.horizon)
        .ok_or_else(|| missing("horizon"))?;
    let capacity_requests = args
        .capacity_requests
        .or(file.capacity_requests)
        .unwrap_or(500.0);
    let exec_count_max = args
        .exec_count_max
        .or(file.exec_count_max)
        .unwrap_or(DEFAULT_EXEC_COUNT_MAX);
    let variant = args
        .variant
        .or(file.variant)
        .unwrap_or_else(|| "compare".to_string());
    let compare = variant == "compare";
    let single: Variant = if compare {
        Variant::Dp
    } else {
        variant.parse()?
    };

    let input =
        fs::File::open(&args.scenarios).map_err(|e| CliError::unreadable(&args.scenarios, e))?;
    let records = read_sweep_csv(input)?;
    let table = scenario_table(&records)?;
    let config = SimConfig {
        beta,
        capacity: capacity_for_requests(&table, capacity_requests),
        seed,
        variant: single,
        horizon,
        scenario_table: table,
        exec_count_max,
        record_timeline: false,
    };
    let runs = if compare {
        compare_variants(&config)?
    } else {
        vec![(single, run_simulation(&config)?)]
    };

    fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::unwritable(&args.out_dir.display().to_string(), e))?;
    let mut manifest = RunManifest::new("simulate", started);
    manifest.seed = Some(seed);
    manifest.inputs.push(args.scenarios.display().to_string());
    if let Some(path) = &args.config {
        manifest.inputs.push(path.display().to_string());
    }
    for (variant, result) in &runs {
        log::info!(
            "{}: served {}, mean wait {:.3} ms, max wait {:.3} ms",
            variant.as_str(),
            result.served,
            result.mean_wait_ms,
            result.max_wait_ms
        );
        write_sim_outputs(&args.out_dir, *variant, result, &mut manifest.outputs)?;
    }
    manifest.wall_clock_s = started.elapsed().as_secs_f64();
    manifest.write_into(&args.out_dir)
}
