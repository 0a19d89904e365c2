use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{run_cell, window_sweep_plan, write_sweep_csv, write_sweep_json, ContestEstimate};
use crate::domain::PollDataset;
use crate::error::{Error, Result};
use crate::ingest::{build_dataset, parse_polls, parse_results, ColumnMapping, Issue};
use crate::models::{ModelSpec, ParamState};
use crate::par::{with_workers, Exec};
use crate::sampler::Summary;
use crate::simulate::{simulate_dataset, write_ingest_csv, SimConfig};

use super::config::{ModelRun, SimSettings};
use super::{
    create_run_dir, digest, manifest, write_manifest, Completion, FitArgs, IngestArgs, InputDigest, OutputArgs,
    ReplayArgs, RunManifest, SimulateArgs, RHAT_WARNING,
};

/// Files produced by a command, written only once the whole run succeeded.
struct Outputs {
    files: Vec<(&'static str, Vec<u8>)>,
    warnings: Vec<String>,
}

impl Outputs {
    fn new() -> Self {
        Outputs {
            files: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn json(&mut self, name: &'static str, value: &impl Serialize) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.files.push((name, bytes));
        Ok(())
    }
}

fn ensure_fresh(output: &OutputArgs) -> Result<()> {
    match &output.run_dir {
        Some(dir) if dir.exists() => Err(Error::InvalidConfig(format!(
            "run directory {} already exists",
            dir.display()
        ))),
        _ => Ok(()),
    }
}

fn finish(output: &OutputArgs, subcommand: &str, seed: u64, run: Outputs, record: RunManifest) -> Result<Completion> {
    let dir = create_run_dir(output, subcommand, seed)?;
    for (name, bytes) in &run.files {
        std::fs::write(dir.join(name), bytes)?;
    }
    write_manifest(&dir, &record)?;
    println!("{}", dir.display());
    Ok(if run.warnings.is_empty() {
        Completion::Clean
    } else {
        Completion::Warnings(run.warnings)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IngestRun {
    mapping: ColumnMapping,
}

pub fn ingest(args: &IngestArgs) -> Result<Completion> {
    ensure_fresh(&args.output)?;
    let mapping = match &args.mapping {
        Some(p) => ColumnMapping::load(p)?,
        None => ColumnMapping::default(),
    };
    let mut inputs = vec![digest("polls", &args.polls)?, digest("results", &args.results)?];
    if let Some(p) = &args.mapping {
        inputs.push(digest("mapping", p)?);
    }
    let run = IngestRun { mapping };
    let out = execute_ingest(&run, &args.polls, &args.results)?;
    finish(&args.output, "ingest", 0, out, manifest("ingest", &run, inputs)?)
}

fn execute_ingest(run: &IngestRun, polls: &Path, results: &Path) -> Result<Outputs> {
    let (records, issues) = parse_polls(polls, &run.mapping)?;
    let results = parse_results(results)?;
    let data = build_dataset(&records, &results)?;
    let mut out = Outputs::new();
    out.json("dataset.json", &data)?;
    out.files.push(("issues.csv", issues_csv(&issues)?));
    if !issues.is_empty() {
        eprintln!("{} rows skipped; see issues.csv", issues.len());
    }
    Ok(out)
}

fn issues_csv(issues: &[Issue]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(["row", "field", "reason"])?;
    for i in issues {
        w.serialize(i)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn load_dataset(path: &Path) -> Result<PollDataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot open dataset {}: {e}", path.display())))?;
    let data: PollDataset = serde_json::from_reader(std::io::BufReader::new(file))?;
    data.validate()?;
    Ok(data)
}

fn restrict(data: PollDataset, year: Option<i32>) -> Result<PollDataset> {
    let data = match year {
        Some(y) => data.restrict_to_year(y),
        None => data,
    };
    if data.contests.is_empty() {
        return Err(Error::InvalidDataset("no contests left after the year filter".into()));
    }
    Ok(data)
}

pub fn fit(args: &FitArgs) -> Result<Completion> {
    ensure_fresh(&args.output)?;
    let run = ModelRun::resolve(args)?;
    let inputs = vec![digest("data", &args.data)?];
    let out = with_workers(args.output.workers, || execute_fit(&run, &args.data))?;
    finish(&args.output, "fit", run.sampler.seed, out, manifest("fit", &run, inputs)?)
}

fn execute_fit(run: &ModelRun, data_path: &Path) -> Result<Outputs> {
    let family = match run.models.as_slice() {
        [m] => *m,
        _ => {
            return Err(Error::InvalidConfig(
                "fit takes exactly one model; use sweep to compare models".into(),
            ))
        }
    };
    let data = restrict(load_dataset(data_path)?, run.year)?;
    let window = match run.window {
        Some(t) => t,
        None => data.polls.iter().map(|p| p.t).max().ok_or(Error::EmptyDataset)?,
    };
    let spec = run.spec(family);
    let (fit, cell) = run_cell(&data, &spec, window, &run.sampler, Exec::Parallel)?;

    let mut out = Outputs::new();
    let mut summary = csv::Writer::from_writer(Vec::new());
    summary.write_record(SUMMARY_HEADER)?;
    for (name, s) in fit.layout.names.iter().zip(&fit.summaries) {
        summary.write_record(summary_row(name, s))?;
    }
    out.files.push(("summary.csv", summary.into_inner().map_err(|e| Error::Io(e.into_error()))?));
    out.files.push(("contests.csv", contests_csv(&cell.contests, &cell.pooled_bias)?));

    let flagged: Vec<FlaggedParam> = fit
        .layout
        .names
        .iter()
        .zip(&fit.summaries)
        .filter_map(|(n, s)| s.rhat.filter(|&r| r > RHAT_WARNING).map(|rhat| FlaggedParam {
            parameter: n.clone(),
            rhat,
        }))
        .collect();
    for f in &flagged {
        out.warnings.push(format!("R-hat {:.3} for {} exceeds {RHAT_WARNING}", f.rhat, f.parameter));
    }
    let diagnostics = FitDiagnostics {
        spec,
        window,
        seed: fit.metadata.seed,
        rhat_threshold: RHAT_WARNING,
        convergence_warning: !flagged.is_empty(),
        max_rhat: cell.diagnostics.max_rhat,
        worst_param: cell.diagnostics.worst_param.clone(),
        flagged,
        clamp_activations: cell.diagnostics.clamp_activations,
        acceptance: fit.metadata.acceptance.clone(),
    };
    out.json("diagnostics.json", &diagnostics)?;
    Ok(out)
}

const SUMMARY_HEADER: [&str; 10] = [
    "parameter", "mean", "sd", "q025", "q50", "q975", "rhat", "ess", "mcse_mean", "mcse_sd",
];

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn summary_row(name: &str, s: &Summary) -> Vec<String> {
    vec![
        name.to_string(),
        s.mean.to_string(),
        s.sd.to_string(),
        s.q025.to_string(),
        s.q50.to_string(),
        s.q975.to_string(),
        opt(s.rhat),
        opt(s.ess),
        opt(s.mcse_mean),
        opt(s.mcse_sd),
    ]
}

fn contests_csv(contests: &[ContestEstimate], pooled: &Summary) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "contest", "polls", "error_mean", "error_sd", "error_q025", "error_q50", "error_q975", "moe_mean", "moe_sd",
        "moe_q025", "moe_q50", "moe_q975",
    ])?;
    let stats = |s: &Summary| [s.mean, s.sd, s.q025, s.q50, s.q975].map(|x| x.to_string());
    for c in contests {
        let mut row = vec![c.contest.to_string(), c.polls.to_string()];
        row.extend(stats(&c.error));
        row.extend(stats(&c.excess_moe));
        w.write_record(row)?;
    }
    let mut row = vec!["_pooled".to_string(), String::new()];
    row.extend(stats(pooled));
    row.extend(std::iter::repeat_n(String::new(), 5));
    w.write_record(row)?;
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[derive(Debug, Serialize)]
struct FlaggedParam {
    parameter: String,
    rhat: f64,
}

#[derive(Debug, Serialize)]
struct FitDiagnostics {
    spec: ModelSpec,
    window: u32,
    seed: u64,
    rhat_threshold: f64,
    convergence_warning: bool,
    max_rhat: Option<f64>,
    worst_param: Option<String>,
    flagged: Vec<FlaggedParam>,
    clamp_activations: u64,
    acceptance: Vec<Vec<(String, f64)>>,
}

pub fn sweep(args: &FitArgs) -> Result<Completion> {
    ensure_fresh(&args.output)?;
    let run = ModelRun::resolve(args)?;
    let inputs = vec![digest("data", &args.data)?];
    let out = with_workers(args.output.workers, || execute_sweep(&run, &args.data))?;
    finish(&args.output, "sweep", run.sampler.seed, out, manifest("sweep", &run, inputs)?)
}

fn execute_sweep(run: &ModelRun, data_path: &Path) -> Result<Outputs> {
    let data = restrict(load_dataset(data_path)?, run.year)?;
    let plan: Vec<(ModelSpec, Vec<u32>)> = run.models.iter().map(|&m| (run.spec(m), run.windows_for(m))).collect();
    let result = window_sweep_plan(&data, &plan, &run.sampler, Exec::Parallel)?;

    let failures: Vec<String> = result
        .failures()
        .map(|(c, e)| format!("{} at T={}: {e}", c.model.label(), c.window))
        .collect();
    if failures.len() == result.cells.len() {
        return Err(Error::InvalidDataset(format!("every sweep cell failed: {}", failures.join("; "))));
    }
    for f in &failures {
        eprintln!("cell failed: {f}");
    }

    let mut out = Outputs::new();
    let mut csv_bytes = Vec::new();
    write_sweep_csv(&result, &mut csv_bytes)?;
    out.files.push(("sweep.csv", csv_bytes));
    let mut json_bytes = Vec::new();
    write_sweep_json(&result, &mut json_bytes)?;
    out.files.push(("sweep.json", json_bytes));

    for cell in &result.cells {
        if let Ok(fit) = &cell.outcome {
            if let (Some(r), Some(p)) = (fit.diagnostics.max_rhat, &fit.diagnostics.worst_param) {
                if r > RHAT_WARNING {
                    out.warnings.push(format!(
                        "R-hat {r:.3} for {p} ({} at T={}) exceeds {RHAT_WARNING}",
                        cell.model.label(),
                        cell.window
                    ));
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct SimTruth<'a> {
    config: &'a SimConfig,
    truncations: u64,
    truth: &'a ParamState,
}

pub fn simulate(args: &SimulateArgs) -> Result<Completion> {
    ensure_fresh(&args.output)?;
    let settings = SimSettings::resolve(args)?;
    let out = execute_simulate(&settings)?;
    finish(&args.output, "simulate", settings.seed, out, manifest("simulate", &settings, Vec::new())?)
}

fn execute_simulate(settings: &SimSettings) -> Result<Outputs> {
    let config = settings.to_config()?;
    let sim = simulate_dataset(&config)?;
    let mut polls = Vec::new();
    let mut results = Vec::new();
    write_ingest_csv(&sim, &mut polls, &mut results)?;
    let mut out = Outputs::new();
    out.files.push(("polls.csv", polls));
    out.files.push(("results.csv", results));
    out.json("dataset.json", &sim.data)?;
    out.json(
        "truth.json",
        &SimTruth {
            config: &config,
            truncations: sim.truncations,
            truth: &sim.truth,
        },
    )?;
    if sim.truncations > 0 {
        eprintln!("{} simulated polls were truncated to [0, 1]", sim.truncations);
    }
    Ok(out)
}

fn input_path(record: &RunManifest, role: &str) -> Result<PathBuf> {
    let input = record
        .inputs
        .iter()
        .find(|i| i.role == role)
        .ok_or_else(|| Error::InvalidConfig(format!("manifest lists no '{role}' input")))?;
    Ok(input.path.clone())
}

fn verify_inputs(inputs: &[InputDigest]) -> Result<()> {
    for input in inputs {
        let now = super::sha256_file(&input.path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read input {}: {e}", input.path.display())))?;
        if now != input.sha256 {
            return Err(Error::InvalidConfig(format!(
                "input {} has changed since the original run (sha256 {} != {})",
                input.path.display(),
                now,
                input.sha256
            )));
        }
    }
    Ok(())
}

pub fn replay(args: &ReplayArgs) -> Result<Completion> {
    ensure_fresh(&args.output)?;
    let text = std::fs::read_to_string(&args.manifest)
        .map_err(|e| Error::InvalidConfig(format!("cannot read manifest {}: {e}", args.manifest.display())))?;
    let record: RunManifest = serde_json::from_str(&text)?;
    if record.tool != env!("CARGO_PKG_NAME") {
        return Err(Error::InvalidConfig(format!("manifest was written by '{}'", record.tool)));
    }
    if record.version != env!("CARGO_PKG_VERSION") {
        eprintln!(
            "manifest version {} differs from this build ({})",
            record.version,
            env!("CARGO_PKG_VERSION")
        );
    }
    verify_inputs(&record.inputs)?;
    let config = record.config.clone();
    let workers = args.output.workers;
    let (seed, out) = match record.subcommand.as_str() {
        "ingest" => {
            let run: IngestRun = serde_json::from_value(config)?;
            (0, execute_ingest(&run, &input_path(&record, "polls")?, &input_path(&record, "results")?)?)
        }
        "fit" | "sweep" => {
            let run: ModelRun = serde_json::from_value(config)?;
            run.validate()?;
            let data = input_path(&record, "data")?;
            let out = with_workers(workers, || {
                if record.subcommand == "fit" {
                    execute_fit(&run, &data)
                } else {
                    execute_sweep(&run, &data)
                }
            })?;
            (run.sampler.seed, out)
        }
        "simulate" => {
            let settings: SimSettings = serde_json::from_value(config)?;
            (settings.seed, execute_simulate(&settings)?)
        }
        other => return Err(Error::InvalidConfig(format!("unknown subcommand '{other}' in manifest"))),
    };
    let subcommand = record.subcommand.clone();
    finish(&args.output, &subcommand, seed, out, record)
}
