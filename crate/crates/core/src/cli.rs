//! The `cascade-minimax` command line: run one experiment, sweep a parameter,
//! or run the inequality suite, writing CSV and JSON artifacts.
//!
//! Exit codes: 0 success, 1 failed check or I/O error, 2 unreadable or
//! invalid configuration, 3 instance construction error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::experiment::{
    fit_sweep, run_suite, sweep, Experiment, ExperimentConfig, ExperimentResult, ScalingFit, SuiteOptions,
};
use crate::instances::SweepAxis;
use crate::policy::IndexRule;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Columns of the per-trial results CSV, in order.
pub const RESULT_COLUMNS: [&str; 12] = [
    "run_id",
    "policy",
    "metric",
    "instance_kind",
    "L",
    "K",
    "n",
    "chi",
    "trial",
    "checkpoint_round",
    "cum_regret",
    "seed",
];

/// Columns of the sweep summary CSV, in order.
pub const SUMMARY_COLUMNS: [&str; 15] = [
    "run_id",
    "policy",
    "metric",
    "instance_kind",
    "L",
    "K",
    "n",
    "chi",
    "seed",
    "axis",
    "axis_value",
    "mean_terminal_regret",
    "stderr",
    "fit_exponent",
    "fit_r2",
];

/// Columns of the check report CSV, in order.
pub const REPORT_COLUMNS: [&str; 5] = ["claim", "passed", "worst_slack", "evaluations", "detail"];

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const REPORT_FILE: &str = "check_report.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_COPY_FILE: &str = "config.json";

#[derive(Debug, Parser)]
#[command(name = "cascade-minimax", version, about = "Cascading bandit regret experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write per-trial regret traces.
    Run(RunArgs),
    /// Run an experiment at several values of K, n or L and fit the scaling.
    Sweep(SweepArgs),
    /// Run the numeric inequality suite.
    Check(CheckArgs),
    /// Print the tool version.
    Version,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads for trials (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Axis to sweep: K, n or L.
    #[arg(long)]
    pub axis: SweepAxis,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<u64>,
    /// Comma-separated policies to sweep (klucb, ucb1, oracle, uniform);
    /// defaults to the configured policy.
    #[arg(long, value_delimiter = ',')]
    pub policies: Vec<String>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Directory for the report; printed only when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Constant of the KL lower-bound check (mutation testing).
    #[arg(long, default_value_t = 12.0, hide = true)]
    pub kl_lower_constant: f64,
}

/// Provenance written next to every run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
}

/// A command failure and its exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Instance(String),
    Other(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Instance(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Instance(m) | Failure::Other(m) => m,
        }
    }

    fn from_build(error: Error) -> Self {
        match error {
            Error::InvalidConfig(_) => Failure::Config(error.to_string()),
            other => Failure::Instance(other.to_string()),
        }
    }
}

fn io_failure(path: &Path, error: impl std::fmt::Display) -> Failure {
    Failure::Other(format!("{}: {error}", path.display()))
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.exit_code())
        }
    }
}

/// Runs a parsed command; `Ok` carries the exit code of a completed command.
pub fn execute(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Run(args) => cmd_run(&args).map(|_| 0),
        Command::Sweep(args) => cmd_sweep(&args).map(|_| 0),
        Command::Check(args) => cmd_check(&args),
        Command::Version => {
            println!("cascade-minimax {TOOL_VERSION}");
            Ok(0)
        }
    }
}

/// Reads and validates an experiment configuration. Parse errors name the
/// offending key.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text).map_err(|m| Failure::Config(format!("{}: {m}", path.display())))
}

fn parse_config(text: &str) -> Result<ExperimentConfig, String> {
    let mut de = serde_json::Deserializer::from_str(text);
    let config: ExperimentConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        if let Some(precise) = locate_tagged_error(text, &path) {
            precise
        } else if path == "." {
            e.inner().to_string()
        } else {
            format!("at `{path}`: {}", e.inner())
        }
    })?;
    de.end().map_err(|e| e.to_string())?;
    Ok(config)
}

/// Internally tagged enums buffer their fields, so a bad field inside
/// `instance` or `policy` is reported at the enum itself. Re-parse that object
/// against a plain struct for its kind to find the field.
fn locate_tagged_error(text: &str, path: &str) -> Option<String> {
    let value: serde_json::Value = serde_json::from_str(text).ok()?;
    let mut object = value.get(path)?.as_object()?.clone();
    let kind = object.remove("kind")?;
    let fields = serde_json::Value::Object(object);
    let located = match (path, kind.as_str()?) {
        ("instance", "two_level") => tagged::locate::<tagged::TwoLevel>(fields),
        ("instance", "theorem3") => tagged::locate::<tagged::Theorem3>(fields),
        ("instance", "lower_bound_family") => tagged::locate::<tagged::LowerBoundFamily>(fields),
        ("instance", "explicit") => tagged::locate::<tagged::Explicit>(fields),
        ("policy", "ucb1") => tagged::locate::<tagged::Ucb1>(fields),
        ("policy", "klucb" | "oracle" | "uniform") => tagged::locate::<tagged::Empty>(fields),
        _ => None,
    }?;
    Some(format!("at `{path}.{located}"))
}

mod tagged {
    use serde::de::DeserializeOwned;
    use serde::Deserialize;

    pub(super) fn locate<T: DeserializeOwned>(fields: serde_json::Value) -> Option<String> {
        let err = serde_path_to_error::deserialize::<_, T>(fields).err()?;
        let path = err.path().to_string();
        Some(if path == "." { format!("`: {}", err.inner()) } else { format!("{path}`: {}", err.inner()) })
    }

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    #[allow(non_snake_case, dead_code)]
    pub(super) struct TwoLevel {
        L: usize,
        K: usize,
        p: f64,
        delta: f64,
    }

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    #[allow(non_snake_case, dead_code)]
    pub(super) struct Theorem3 {
        L: usize,
        K: usize,
        n: Option<u64>,
        chi: Option<f64>,
    }

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    #[allow(non_snake_case, dead_code)]
    pub(super) struct LowerBoundFamily {
        L: usize,
        K: usize,
        n: Option<u64>,
        m: Vec<usize>,
    }

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    #[allow(non_snake_case, dead_code)]
    pub(super) struct Explicit {
        K: usize,
        weights: Vec<f64>,
    }

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    #[allow(dead_code)]
    pub(super) struct Ucb1 {
        scale: Option<f64>,
    }

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    pub(super) struct Empty {}
}

fn with_workers<T: Send>(workers: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    match workers {
        None => Ok(job()),
        Some(0) => Err(Failure::Config("--workers must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Failure::Other(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Identifier of a configuration: the first 12 hex digits of its hash.
pub fn run_id(config: &ExperimentConfig) -> String {
    sha256_hex(&config.canonical_json())[..12].to_string()
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn csv_bytes(writer: csv::Writer<Vec<u8>>) -> Vec<u8> {
    writer.into_inner().expect("writing to memory cannot fail")
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut file = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_failure(dir, e))?;
    file.write_all(bytes).map_err(|e| io_failure(path, e))?;
    file.persist(path).map_err(|e| io_failure(path, e.error))?;
    Ok(())
}

fn identity_fields(config: &ExperimentConfig) -> [String; 8] {
    let instance = &config.instance;
    [
        run_id(config),
        config.policy.name().to_string(),
        config.metric.as_str().to_string(),
        instance.kind_name().to_string(),
        instance.num_items().to_string(),
        instance.list_size().to_string(),
        config.horizon.to_string(),
        instance.chi().map(format_float).unwrap_or_default(),
    ]
}

fn write_trace_rows(
    writer: &mut csv::Writer<Vec<u8>>,
    config: &ExperimentConfig,
    result: &ExperimentResult,
) -> csv::Result<()> {
    let identity = identity_fields(config);
    for trace in &result.traces {
        for (round, regret) in result.checkpoints.iter().zip(&trace.cumulative) {
            let mut row: Vec<String> = identity.to_vec();
            row.extend([
                trace.trial_index.to_string(),
                round.to_string(),
                format_float(*regret),
                trace.seed.to_string(),
            ]);
            writer.write_record(&row)?;
        }
    }
    Ok(())
}

/// Per-trial results CSV for a set of experiments.
pub fn results_csv<'a>(runs: impl IntoIterator<Item = (&'a ExperimentConfig, &'a ExperimentResult)>) -> Vec<u8> {
    let mut writer = csv_writer();
    writer.write_record(RESULT_COLUMNS).expect("in-memory write");
    for (config, result) in runs {
        write_trace_rows(&mut writer, config, result).expect("in-memory write");
    }
    csv_bytes(writer)
}

fn prepare_out_dir(out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))
}

fn write_manifest(out: &Path, mut manifest: RunManifest) -> Result<(), Failure> {
    manifest.finished_at = now();
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_atomic(&out.join(MANIFEST_FILE), text.as_bytes())
}

fn config_copy(value: &impl Serialize) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("config serializes");
    text.push('\n');
    text.into_bytes()
}

fn effective_config(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut config = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(config)
}

fn print_warnings(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

/// `run`: one experiment, written as `results.csv`, `manifest.json` and a
/// copy of the effective configuration.
pub fn cmd_run(args: &RunArgs) -> Result<RunManifest, Failure> {
    let started_at = now();
    let config = effective_config(args)?;
    let experiment = Experiment::new(config.clone()).map_err(Failure::from_build)?;
    print_warnings(experiment.warnings());
    let result = with_workers(args.workers, || experiment.run())?.map_err(|e| Failure::Other(e.to_string()))?;

    prepare_out_dir(&args.out)?;
    write_atomic(&args.out.join(RESULTS_FILE), &results_csv([(&config, &result)]))?;
    write_atomic(&args.out.join(CONFIG_COPY_FILE), &config_copy(&config))?;
    let manifest = RunManifest {
        command: "run".into(),
        config_hash: sha256_hex(&config.canonical_json()),
        tool_version: TOOL_VERSION.into(),
        started_at,
        finished_at: String::new(),
        outputs: vec![RESULTS_FILE.into(), CONFIG_COPY_FILE.into()],
        warnings: experiment.warnings().to_vec(),
    };
    write_manifest(&args.out, manifest.clone())?;
    println!(
        "{} on {}: mean regret {:.4} (stderr {:.4}) over {} trials at n={}",
        config.policy.name(),
        config.instance.kind_name(),
        result.terminal_mean(),
        result.terminal_stderr(),
        config.trials,
        config.horizon
    );
    Ok(manifest)
}

/// Parses a policy name as used by `--policies`.
pub fn parse_policy(name: &str) -> Result<IndexRule, Failure> {
    match name.trim() {
        "klucb" => Ok(IndexRule::Klucb),
        "ucb1" => Ok(IndexRule::ucb1()),
        "oracle" => Ok(IndexRule::Oracle),
        "uniform" => Ok(IndexRule::Uniform),
        other => Err(Failure::Config(format!("unknown policy `{other}` (expected klucb, ucb1, oracle or uniform)"))),
    }
}

#[derive(Serialize)]
struct SweepRequest<'a> {
    base: &'a ExperimentConfig,
    axis: SweepAxis,
    values: &'a [u64],
    policies: Vec<IndexRule>,
}

/// `run` at each axis value for each policy: `results.csv` holds every trace,
/// `summary.csv` one row per (policy, value) with the policy's log-log fit.
pub fn cmd_sweep(args: &SweepArgs) -> Result<RunManifest, Failure> {
    let started_at = now();
    let base = effective_config(&args.run)?;
    let policies = if args.policies.is_empty() {
        vec![base.policy]
    } else {
        args.policies.iter().map(|p| parse_policy(p)).collect::<Result<Vec<_>, _>>()?
    };

    let mut groups = Vec::with_capacity(policies.len());
    for &policy in &policies {
        let mut config = base.clone();
        config.policy = policy;
        config.validate().map_err(|e| Failure::Config(e.to_string()))?;
        let points =
            with_workers(args.run.workers, || sweep(&config, args.axis, &args.values))?.map_err(Failure::from_build)?;
        let fit = fit_sweep(&points);
        groups.push((points, fit));
    }

    let mut warnings = Vec::new();
    for (points, _) in &groups {
        for p in points {
            warnings.extend(p.warnings.iter().map(|w| format!("{}={}: {w}", args.axis.as_str(), p.axis_value)));
        }
    }
    warnings.sort();
    warnings.dedup();
    print_warnings(&warnings);

    let results = results_csv(groups.iter().flat_map(|(points, _)| points.iter().map(|p| (&p.config, &p.result))));
    let summary = summary_csv(args.axis, &groups);
    prepare_out_dir(&args.run.out)?;
    write_atomic(&args.run.out.join(RESULTS_FILE), &results)?;
    write_atomic(&args.run.out.join(SUMMARY_FILE), &summary)?;
    let request = SweepRequest { base: &base, axis: args.axis, values: &args.values, policies };
    write_atomic(&args.run.out.join(CONFIG_COPY_FILE), &config_copy(&request))?;
    let manifest = RunManifest {
        command: "sweep".into(),
        config_hash: sha256_hex(&serde_json::to_string(&request).expect("request serializes")),
        tool_version: TOOL_VERSION.into(),
        started_at,
        finished_at: String::new(),
        outputs: vec![RESULTS_FILE.into(), SUMMARY_FILE.into(), CONFIG_COPY_FILE.into()],
        warnings,
    };
    write_manifest(&args.run.out, manifest.clone())?;

    for (points, fit) in &groups {
        let name = points.first().map(|p| p.config.policy.name()).unwrap_or_default();
        match fit {
            Some(f) => println!(
                "{name}: regret ~ {}^{:.4} (r2 {:.4}, {} points)",
                args.axis.as_str(),
                f.exponent,
                f.r_squared,
                f.points_used
            ),
            None => println!("{name}: no fit (fewer than two points with positive regret)"),
        }
    }
    Ok(manifest)
}

type SweepGroup = (Vec<crate::experiment::SweepPoint>, Option<ScalingFit>);

fn summary_csv(axis: SweepAxis, groups: &[SweepGroup]) -> Vec<u8> {
    let mut writer = csv_writer();
    writer.write_record(SUMMARY_COLUMNS).expect("in-memory write");
    for (points, fit) in groups {
        let (exponent, r2) = match fit {
            Some(f) => (format_float(f.exponent), format_float(f.r_squared)),
            None => (String::new(), String::new()),
        };
        for p in points {
            let mut row: Vec<String> = identity_fields(&p.config).to_vec();
            row.extend([
                p.config.seed.to_string(),
                axis.as_str().to_string(),
                p.axis_value.to_string(),
                format_float(p.mean_terminal_regret()),
                format_float(p.stderr()),
                exponent.clone(),
                r2.clone(),
            ]);
            writer.write_record(&row).expect("in-memory write");
        }
    }
    csv_bytes(writer)
}

/// `check`: runs the inequality suite, prints one line per claim and
/// optionally writes `check_report.csv`. Exit code 1 if any claim fails.
pub fn cmd_check(args: &CheckArgs) -> Result<u8, Failure> {
    let options = SuiteOptions { kl_lower_constant: args.kl_lower_constant, ..SuiteOptions::default() };
    let checks = run_suite(&options);
    let mut writer = csv_writer();
    writer.write_record(REPORT_COLUMNS).expect("in-memory write");
    for c in &checks {
        println!(
            "{} {:<22} worst slack {:>12.4e}  {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.worst_slack,
            c.detail
        );
        writer
            .write_record([
                c.name.clone(),
                c.passed.to_string(),
                format_float(c.worst_slack),
                c.evaluations.to_string(),
                c.detail.clone(),
            ])
            .expect("in-memory write");
    }
    if let Some(out) = &args.out {
        prepare_out_dir(out)?;
        write_atomic(&out.join(REPORT_FILE), &csv_bytes(writer))?;
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        println!("all {} claims hold", checks.len());
        Ok(0)
    } else {
        eprintln!("failed: {}", failed.join(", "));
        Ok(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_seventeen_significant_digits() {
        assert_eq!(format_float(0.1), "1.0000000000000001e-1");
        assert_eq!(format_float(0.0), "0.0000000000000000e0");
        for x in [0.1, 1.0 / 3.0, 12345.678, 2.5e-300, f64::MAX] {
            assert_eq!(format_float(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn parse_errors_name_the_key() {
        let text = r#"{"instance":{"kind":"two_level","L":4,"K":2,"p":"high","delta":0.1},
            "policy":{"kind":"klucb"},"horizon":10,"trials":1,"seed":0}"#;
        let message = parse_config(text).unwrap_err();
        assert!(message.contains("instance.p"), "{message}");

        let text = r#"{"instance":{"kind":"two_level","L":4,"K":2,"p":0.5,"delta":0.1},
            "policy":{"kind":"klucb"},"horizon":10,"trials":1,"seed":0,"sed":1}"#;
        let message = parse_config(text).unwrap_err();
        assert!(message.contains("sed"), "{message}");

        let text = r#"{"instance":{"kind":"theorem3","L":4,"K":2,"chi":4,"xi":1},
            "policy":{"kind":"ucb1","scale":1.5},"horizon":10,"trials":1,"seed":0}"#;
        let message = parse_config(text).unwrap_err();
        assert!(message.contains("xi"), "{message}");

        let text = r#"{"instance":{"kind":"theorem3","L":4,"K":2},
            "policy":{"kind":"ucb1","scale":"wide"},"horizon":10,"trials":1,"seed":0}"#;
        let message = parse_config(text).unwrap_err();
        assert!(message.contains("policy.scale"), "{message}");
    }

    #[test]
    fn policy_names() {
        assert_eq!(parse_policy("ucb1").unwrap(), IndexRule::ucb1());
        assert_eq!(parse_policy(" klucb").unwrap(), IndexRule::Klucb);
        assert_eq!(parse_policy("thompson").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn build_errors_map_to_exit_codes() {
        assert_eq!(Failure::from_build(Error::InvalidConfig("x".into())).exit_code(), 2);
        assert_eq!(Failure::from_build(Error::InvalidInstance("x".into())).exit_code(), 3);
    }
}
