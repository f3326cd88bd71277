//! Command implementations behind the `simgap` binary.
//!
//! Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;
use serde::Deserialize;

use simgap_core::ingest::{self, Finding};
use simgap_core::kinematics::{self, ControllerConfig, MotionScript, NoiseConfig, ScriptedChannels};
use simgap_core::metrics::{self, EvaluationConfig, MetricSet, PoseMetricConfig, StaticnessConfig};
use simgap_core::report::{self, SubgroupReport, SubmissionInfo, TaskRecord};
use simgap_core::trajectory::{Metadata, RepeatSet, Source, TASK_COUNT};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Invalid combination of arguments, reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser, Debug)]
#[command(
    name = "simgap",
    version,
    about = "Quantify the gap between simulated and recorded manipulation runs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check repeat bundles for format problems.
    Validate(ValidateArgs),
    /// Compare simulation bundles with dataset bundles.
    Evaluate(EvaluateArgs),
    /// Produce a synthetic 20-repeat bundle with the kinematic simulator.
    Generate(GenerateArgs),
    /// Rebuild subgroup tables from per-task appendix files.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct Selection {
    /// Comma-separated task ids.
    #[arg(long, value_delimiter = ',', conflicts_with = "subgroup")]
    pub tasks: Option<Vec<u8>>,
    /// Every task of subgroup 1 or 2.
    #[arg(long)]
    pub subgroup: Option<u8>,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// Bundle directory.
    #[arg(long = "dataset", value_name = "DIR")]
    pub dir: PathBuf,
    #[command(flatten)]
    pub selection: Selection,
}

#[derive(Args, Debug, Default)]
pub struct EvaluateArgs {
    /// TOML file with defaults for any of the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub sim: Option<PathBuf>,
    #[command(flatten)]
    pub selection: Selection,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Length scale of the pose metric.
    #[arg(long)]
    pub r: Option<f64>,
    /// Object speed (m/s) below which a sample counts as static.
    #[arg(long = "static-eps")]
    pub static_eps: Option<f64>,
    /// Consecutive samples required for a moving run.
    #[arg(long = "static-window")]
    pub static_window: Option<usize>,
    /// Recorded in the run config; evaluation itself draws no random numbers.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulator name for the report.
    #[arg(long)]
    pub simulator: Option<String>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Chain description file.
    #[arg(long)]
    pub chain: PathBuf,
    /// TOML file with `[script]`, optional `[channels]` and `[noise]`.
    #[arg(long)]
    pub script: PathBuf,
    #[arg(long)]
    pub task: u8,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-repeat position noise, meters.
    #[arg(long = "position-sigma")]
    pub position_sigma: Option<f64>,
    /// Per-repeat rotation noise, radians.
    #[arg(long = "rotation-sigma")]
    pub rotation_sigma: Option<f64>,
    /// `dataset` or `simulation`.
    #[arg(long, default_value = "simulation")]
    pub source: Source,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Directory holding `taskNN_appendix.json` files.
    #[arg(long = "from", value_name = "DIR")]
    pub from: PathBuf,
    #[arg(long)]
    pub subgroup: Option<u8>,
    /// Defaults to the input directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub simulator: Option<String>,
}

/// Optional settings file; every key may be overridden on the command line.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub dataset: Option<PathBuf>,
    pub sim: Option<PathBuf>,
    pub tasks: Option<Vec<u8>>,
    pub subgroup: Option<u8>,
    pub out: Option<PathBuf>,
    pub r: Option<f64>,
    pub static_eps: Option<f64>,
    pub static_window: Option<usize>,
    pub seed: Option<u64>,
    pub noise: Option<NoiseConfig>,
    pub submission: Option<SubmissionInfo>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TaskSelection {
    Tasks(Vec<u8>),
    Subgroup(u8),
}

impl TaskSelection {
    fn resolve(tasks: Option<Vec<u8>>, subgroup: Option<u8>) -> anyhow::Result<Option<Self>> {
        match (tasks, subgroup) {
            (Some(_), Some(_)) => Err(usage("--tasks and --subgroup are mutually exclusive")),
            (Some(t), None) => {
                if t.is_empty() {
                    return Err(usage("task selection is empty"));
                }
                if let Some(bad) = t.iter().find(|&&id| !(1..=TASK_COUNT).contains(&id)) {
                    return Err(usage(format!("task {bad} outside 1..={TASK_COUNT}")));
                }
                let mut t = t;
                t.sort_unstable();
                t.dedup();
                Ok(Some(Self::Tasks(t)))
            }
            (None, Some(k)) => {
                report::subgroup_tasks(k).map_err(|e| usage(e.to_string()))?;
                Ok(Some(Self::Subgroup(k)))
            }
            (None, None) => Ok(None),
        }
    }

    pub fn task_ids(&self) -> Vec<u8> {
        match self {
            Self::Tasks(t) => t.clone(),
            Self::Subgroup(k) => report::subgroup_tasks(*k).map(|r| r.collect()).unwrap_or_default(),
        }
    }
}

/// Fully resolved settings for one evaluation run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub sim: PathBuf,
    pub selection: TaskSelection,
    pub evaluation: EvaluationConfig,
    pub noise: NoiseConfig,
    pub out: PathBuf,
    pub seed: u64,
    pub submission: SubmissionInfo,
}

impl RunConfig {
    /// Merges the optional config file with flags; flags win.
    pub fn from_args(args: &EvaluateArgs) -> anyhow::Result<Self> {
        let file = match &args.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let dataset = args
            .dataset
            .clone()
            .or(file.dataset)
            .ok_or_else(|| usage("--dataset is required"))?;
        let sim = args
            .sim
            .clone()
            .or(file.sim)
            .ok_or_else(|| usage("--sim is required"))?;
        let out = args
            .out
            .clone()
            .or(file.out)
            .ok_or_else(|| usage("--out is required"))?;
        let selection = match TaskSelection::resolve(args.selection.tasks.clone(), args.selection.subgroup)? {
            Some(s) => s,
            None => TaskSelection::resolve(file.tasks, file.subgroup)?
                .ok_or_else(|| usage("select tasks with --tasks or --subgroup"))?,
        };
        let pose = PoseMetricConfig::new(args.r.or(file.r).unwrap_or(PoseMetricConfig::default().r))
            .map_err(|e| usage(e.to_string()))?;
        let defaults = StaticnessConfig::default();
        let staticness = StaticnessConfig::new(
            args.static_eps.or(file.static_eps).unwrap_or(defaults.speed_threshold),
            args.static_window.or(file.static_window).unwrap_or(defaults.window),
        )
        .map_err(|e| usage(e.to_string()))?;
        let mut submission = file.submission.unwrap_or_default();
        if let Some(name) = &args.simulator {
            submission.simulator = name.clone();
        }
        Ok(Self {
            dataset,
            sim,
            selection,
            evaluation: EvaluationConfig { pose, staticness },
            noise: file.noise.unwrap_or_default(),
            out,
            seed: args.seed.or(file.seed).unwrap_or(0),
            submission,
        })
    }
}

fn print_findings(out: &mut dyn Write, findings: &[Finding]) -> std::io::Result<()> {
    for f in findings {
        writeln!(out, "{f}")?;
    }
    Ok(())
}

/// Validates the selected task bundles in `dir` (all present tasks when no
/// selection is given). Returns the exit code.
pub fn cmd_validate(dir: &Path, selection: Option<&TaskSelection>, out: &mut dyn Write) -> anyhow::Result<i32> {
    let tasks = match selection {
        Some(s) => s.task_ids(),
        None => ingest::tasks_in_dir(dir)?,
    };
    if tasks.is_empty() {
        writeln!(out, "{}: no repeat files found", dir.display())?;
        return Ok(EXIT_FAILURE);
    }
    let manifests = tasks
        .par_iter()
        .map(|&t| ingest::validate_bundle(dir, t))
        .collect::<simgap_core::Result<Vec<_>>>()?;
    let mut failed = false;
    for m in &manifests {
        print_findings(out, &m.findings)?;
        let errors = m.errors().count();
        let warnings = m.findings.len() - errors;
        writeln!(
            out,
            "task {:02}: {} files, {errors} errors, {warnings} warnings",
            m.task_id,
            m.files.len()
        )?;
        failed |= errors > 0;
    }
    Ok(if failed { EXIT_FAILURE } else { EXIT_OK })
}

/// What an evaluation run produced.
#[derive(Debug)]
pub struct EvaluateSummary {
    pub metrics: Vec<MetricSet>,
    pub reports: Vec<SubgroupReport>,
    pub written: Vec<PathBuf>,
}

fn load(dir: &Path, task: u8) -> anyhow::Result<RepeatSet> {
    let loaded = ingest::load_repeat_set(dir, task).with_context(|| format!("task {task} in {}", dir.display()))?;
    for f in &loaded.manifest.findings {
        warn!("{f}");
    }
    Ok(loaded.set)
}

/// Evaluates every selected task and writes per-task appendices plus a
/// table and appendix for each fully covered subgroup.
pub fn cmd_evaluate(cfg: &RunConfig) -> anyhow::Result<EvaluateSummary> {
    let same_dir = match (fs::canonicalize(&cfg.dataset), fs::canonicalize(&cfg.sim)) {
        (Ok(a), Ok(b)) => a == b,
        _ => cfg.dataset == cfg.sim,
    };
    if same_dir {
        warn!("dataset and simulation directories are the same; every error will be zero");
    }
    let tasks = cfg.selection.task_ids();

    let outcomes: Vec<(u8, anyhow::Result<TaskRecord>)> = tasks
        .par_iter()
        .map(|&task| {
            let result = (|| {
                let dataset = load(&cfg.dataset, task)?;
                let sim = if same_dir {
                    dataset.clone()
                } else {
                    load(&cfg.sim, task)?
                };
                let evaluation = metrics::evaluate_task(&dataset, &sim, &cfg.evaluation)
                    .with_context(|| format!("evaluating task {task}"))?;
                if let Some(w) = &evaluation.length_warning {
                    warn!("task {task}: {w}");
                }
                Ok(TaskRecord::from(&evaluation))
            })();
            (task, result)
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (task, outcome) in outcomes {
        match outcome {
            Ok(r) => records.push(r),
            Err(e) => failures.push(format!("task {task}: {e:#}")),
        }
    }
    if !failures.is_empty() {
        bail!("{}", failures.join("\n"));
    }

    let mut reports = Vec::new();
    for k in 1..=2u8 {
        let members = report::subgroup_tasks(k)?;
        let in_group: Vec<TaskRecord> = records
            .iter()
            .filter(|r| members.contains(&r.metrics.task_id))
            .cloned()
            .collect();
        if in_group.is_empty() {
            continue;
        }
        match report::aggregate_records(in_group, cfg.submission.clone()) {
            Ok(r) => reports.push(r),
            Err(e) if cfg.selection == TaskSelection::Subgroup(k) => {
                return Err(e).context(format!("subgroup {k}"));
            }
            Err(e) => info!("no subgroup {k} report: {e}"),
        }
    }

    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let mut written = Vec::new();
    let mut write = |name: String, text: String| -> anyhow::Result<()> {
        let path = cfg.out.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
        Ok(())
    };
    for r in &records {
        write(
            report::task_appendix_file_name(r.metrics.task_id),
            report::export_task_record(r)?,
        )?;
    }
    for r in &reports {
        write(report::report_file_name(r.subgroup()), report::render_table(r))?;
        write(report::appendix_file_name(r.subgroup()), report::export_appendix(r)?)?;
    }

    Ok(EvaluateSummary {
        metrics: records.iter().map(|r| r.metrics).collect(),
        reports,
        written,
    })
}

/// Script file read by `generate`.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScriptFile {
    pub script: MotionScript,
    pub channels: ScriptedChannels,
    pub noise: Option<NoiseConfig>,
    pub controller: Option<ControllerConfig>,
    pub metadata: Option<ScriptMetadata>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScriptMetadata {
    pub timestamp: String,
    pub temperature: Option<f64>,
    pub humidity: Option<f64>,
    pub description: String,
}

impl Default for ScriptMetadata {
    fn default() -> Self {
        Self {
            timestamp: "2000-01-01T00:00:00Z".into(),
            temperature: None,
            humidity: None,
            description: "kinematic simulation".into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GenerateOptions {
    pub chain: PathBuf,
    pub script: PathBuf,
    pub task: u8,
    pub out: PathBuf,
    pub seed: u64,
    /// Replaces the script file's `[noise]` when set.
    pub noise: Option<NoiseConfig>,
    pub source: Source,
}

impl GenerateOptions {
    pub fn from_args(args: &GenerateArgs) -> anyhow::Result<Self> {
        let file = match &args.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        if !(1..=TASK_COUNT).contains(&args.task) {
            return Err(usage(format!("task {} outside 1..={TASK_COUNT}", args.task)));
        }
        let noise = match (args.position_sigma, args.rotation_sigma, file.noise) {
            (None, None, base) => base,
            (p, r, base) => {
                let base = base.unwrap_or_default();
                Some(NoiseConfig {
                    position_sigma: p.unwrap_or(base.position_sigma),
                    rotation_sigma: r.unwrap_or(base.rotation_sigma),
                })
            }
        };
        Ok(Self {
            chain: args.chain.clone(),
            script: args.script.clone(),
            task: args.task,
            out: args.out.clone(),
            seed: args.seed.or(file.seed).unwrap_or(0),
            noise,
            source: args.source,
        })
    }
}

/// Simulates the script once and writes 20 perturbed repeats.
pub fn cmd_generate(opts: &GenerateOptions) -> anyhow::Result<Vec<PathBuf>> {
    let chain_text = fs::read_to_string(&opts.chain).with_context(|| format!("reading {}", opts.chain.display()))?;
    let chain = kinematics::parse_chain(&chain_text).with_context(|| format!("parsing {}", opts.chain.display()))?;
    let script_text = fs::read_to_string(&opts.script).with_context(|| format!("reading {}", opts.script.display()))?;
    let script: ScriptFile =
        toml::from_str(&script_text).with_context(|| format!("parsing {}", opts.script.display()))?;

    let meta = script.metadata.unwrap_or_default();
    let metadata = Metadata {
        task_id: opts.task,
        repeat_id: 1,
        timestamp: meta.timestamp,
        temperature: meta.temperature,
        humidity: meta.humidity,
        description: meta.description,
        source: opts.source,
    };
    let controller = script.controller.unwrap_or_default();
    let output = kinematics::simulate_task(&chain, &script.script, &controller, &script.channels, metadata)?;
    for f in &output.findings {
        warn!("{f}");
    }
    let noise = opts.noise.or(script.noise).unwrap_or_default();
    let set = kinematics::generate_repeats(&output.recording, &noise, opts.seed)?;
    Ok(ingest::write_repeat_files(&opts.out, set.repeats())?)
}

/// Aggregates per-task appendix files from `dir` into subgroup tables.
pub fn cmd_report(
    dir: &Path,
    subgroup: Option<u8>,
    out: &Path,
    info: SubmissionInfo,
) -> anyhow::Result<Vec<SubgroupReport>> {
    let groups: Vec<u8> = match subgroup {
        Some(k) => {
            report::subgroup_tasks(k).map_err(|e| usage(e.to_string()))?;
            vec![k]
        }
        None => vec![1, 2],
    };
    let mut reports = Vec::new();
    for k in groups {
        let mut records = Vec::new();
        for task in report::subgroup_tasks(k)? {
            let path = dir.join(report::task_appendix_file_name(task));
            if !path.is_file() {
                continue;
            }
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            records.push(report::import_task_record(&text).with_context(|| format!("parsing {}", path.display()))?);
        }
        if records.is_empty() && subgroup.is_none() {
            continue;
        }
        reports.push(report::aggregate_records(records, info.clone()).with_context(|| format!("subgroup {k}"))?);
    }
    if reports.is_empty() {
        bail!("no task appendix files in {}", dir.display());
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for r in &reports {
        fs::write(
            out.join(report::report_file_name(r.subgroup())),
            report::render_table(r),
        )?;
        fs::write(
            out.join(report::appendix_file_name(r.subgroup())),
            report::export_appendix(r)?,
        )?;
    }
    Ok(reports)
}

fn dispatch(cli: Cli, stdout: &mut dyn Write) -> anyhow::Result<i32> {
    match cli.command {
        Command::Validate(args) => {
            let selection = TaskSelection::resolve(args.selection.tasks, args.selection.subgroup)?;
            cmd_validate(&args.dir, selection.as_ref(), stdout)
        }
        Command::Evaluate(args) => {
            let cfg = RunConfig::from_args(&args)?;
            let summary = cmd_evaluate(&cfg)?;
            for r in &summary.reports {
                write!(stdout, "{}", report::render_table(r))?;
            }
            for p in &summary.written {
                info!("wrote {}", p.display());
            }
            Ok(EXIT_OK)
        }
        Command::Generate(args) => {
            let opts = GenerateOptions::from_args(&args)?;
            let files = cmd_generate(&opts)?;
            writeln!(stdout, "wrote {} files to {}", files.len(), opts.out.display())?;
            Ok(EXIT_OK)
        }
        Command::Report(args) => {
            let out = args.out.clone().unwrap_or_else(|| args.from.clone());
            let info = SubmissionInfo {
                simulator: args.simulator.unwrap_or_default(),
                ..Default::default()
            };
            for r in cmd_report(&args.from, args.subgroup, &out, info)? {
                write!(stdout, "{}", report::render_table(&r))?;
            }
            Ok(EXIT_OK)
        }
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            }
        }
    }
}
