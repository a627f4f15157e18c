//! `lightfdg` command-line front end.
//!
//! Exit codes: 0 success, 1 input or usage error, 2 infeasible provisioning.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detection::trace::{read_trace, replay, write_trace, ReplayDetector, TraceError};
use crate::detection::{DetectorConfig, DetectorMode, SamplingConfig};
use crate::engine::{self, write_summary_csv, EngineError, MetricsReport, Policy};
use crate::provisioning::{ProvisionError, ProvisionOptions};
use crate::traffic::{flows_to_packet_events, generate_flows, ScenarioConfig, ScenarioError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "lightfdg",
    version,
    about = "WDM-FSO leaf-spine flow simulator with elephant-flow detection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Provision MF and EF lightpaths for a scenario and write the table.
    Provision(ProvisionArgs),
    /// Run policies over seeds and write per-flow and summary CSVs.
    Simulate(SimulateArgs),
    /// Replay a packet-event CSV through a detector.
    DetectReplay(ReplayArgs),
    /// Write the packet-event trace of a scenario's flows.
    GenTrace(GenTraceArgs),
}

#[derive(Debug, Args)]
pub struct ProvisionArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Lightpath table (JSON); a text summary is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k_paths: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DetectorFlags {
    #[arg(long)]
    pub threshold_bytes: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub ack_sample_rate: Option<u32>,
    #[arg(long)]
    pub no_stop_useless: bool,
    #[arg(long)]
    pub no_preclassify: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    InNetwork,
    Centralized,
}

impl DetectorFlags {
    fn apply(&self, d: &mut DetectorConfig) {
        if let Some(th) = self.threshold_bytes {
            d.threshold_bytes = th;
        }
        if let Some(m) = self.mode {
            d.mode = match m {
                ModeArg::InNetwork => DetectorMode::InNetwork,
                ModeArg::Centralized => DetectorMode::Centralized,
            };
        }
        if let Some(s) = self.ack_sample_rate {
            d.ack_sample_rate = s;
        }
        if self.no_stop_useless {
            d.stop_useless = false;
        }
        if self.no_preclassify {
            d.preclassify = false;
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// ecmp, ecmp-fso, fg-fso or lightfdg; repeatable. Defaults to the
    /// scenario's `policies`.
    #[arg(long = "policy", value_parser = parse_policy)]
    pub policies: Vec<Policy>,
    /// Repeatable. Defaults to the scenario's `seed`.
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub k_paths: Option<usize>,
    #[command(flatten)]
    pub detector: DetectorFlags,
    /// Worker threads for independent runs (default: available cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DetectorKind {
    /// TCP-ACK sequence analysis.
    Ack,
    /// Random packet sampling baseline.
    Sampling,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "ack")]
    pub detector: DetectorKind,
    /// Detector configuration JSON; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub flags: DetectorFlags,
    /// Sampling baseline: one in N packets.
    #[arg(long, default_value_t = 1000)]
    pub sample_rate: u32,
    #[arg(long, default_value_t = crate::detection::sampling::DEFAULT_EXPORT_INTERVAL_NS)]
    pub export_interval_ns: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GenTraceArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Constant per-flow sending rate (default: the scenario's FSO link rate).
    #[arg(long)]
    pub rate_bps: Option<f64>,
}

fn parse_policy(s: &str) -> Result<Policy, String> {
    s.parse()
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Input(String),
    Infeasible(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Input(_) => EXIT_INPUT,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Input(m) | CliError::Infeasible(m) => m,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn provision_err(e: ProvisionError) -> CliError {
    match e {
        ProvisionError::TooFewWavelengths { .. } | ProvisionError::Infeasible { .. } => {
            CliError::Infeasible(e.to_string())
        }
        other => CliError::Input(other.to_string()),
    }
}

fn scenario_err(e: ScenarioError) -> CliError {
    match e {
        ScenarioError::Provision(p) => provision_err(p),
        ScenarioError::Grooming(crate::grooming::GroomingError::Demand(p)) => provision_err(p),
        other => CliError::Input(other.to_string()),
    }
}

fn engine_err(e: EngineError) -> CliError {
    match e {
        EngineError::Scenario(s) => scenario_err(s),
        EngineError::Provision(p) => provision_err(p),
        EngineError::Unprovisioned { .. } => CliError::Infeasible(e.to_string()),
        other => CliError::Input(other.to_string()),
    }
}

fn trace_err(path: &Path, e: TraceError) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn load_scenario(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    ScenarioConfig::from_json(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Inventory of one CLI run's outputs. Written last.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario: Option<String>,
    pub trace: Option<String>,
    pub policies: Vec<String>,
    pub seeds: Vec<u64>,
    pub out_dir: String,
    pub generated_unix_s: u64,
    pub files: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl RunManifest {
    fn new(command: &str, out_dir: &Path) -> Self {
        RunManifest {
            command: command.to_string(),
            scenario: None,
            trace: None,
            policies: Vec::new(),
            seeds: Vec::new(),
            out_dir: out_dir.display().to_string(),
            generated_unix_s: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            files: Vec::new(),
        }
    }

    /// Write `data` to `dir/name` and record its digest.
    fn emit(&mut self, dir: &Path, name: &str, data: &[u8]) -> Result<(), CliError> {
        let path = dir.join(name);
        fs::write(&path, data).map_err(|e| io_err(&path, e))?;
        self.files.push(ManifestEntry {
            path: name.to_string(),
            bytes: data.len() as u64,
            sha256: sha256_hex(data),
        });
        Ok(())
    }

    fn finish(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE)).map_err(|e| e.to_string())?;
        serde_json::from_str(&text).map_err(|e| e.to_string())
    }

    /// Check every listed file exists and matches its digest.
    pub fn verify(&self, dir: &Path) -> Result<(), String> {
        for f in &self.files {
            let data = fs::read(dir.join(&f.path)).map_err(|e| format!("{}: {e}", f.path))?;
            if data.len() as u64 != f.bytes || sha256_hex(&data) != f.sha256 {
                return Err(format!("{}: digest mismatch", f.path));
            }
        }
        Ok(())
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

pub fn cmd_provision(args: &ProvisionArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = load_scenario(&args.scenario)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(k) = args.k_paths {
        cfg.k_paths = k;
    }
    cfg.validate().map_err(scenario_err)?;
    let topology = cfg.topology().map_err(scenario_err)?;
    let flows = generate_flows(&cfg).map_err(scenario_err)?;
    let demand = cfg.demand_matrix(&flows).map_err(scenario_err)?;
    let result = crate::provisioning::provision_all_with(
        &topology,
        &demand,
        ProvisionOptions {
            k_paths: cfg.k_paths,
            seed: cfg.seed,
            ..ProvisionOptions::default()
        },
    )
    .map_err(provision_err)?;
    let violations = result.audit();
    if !violations.is_empty() {
        return Err(CliError::Infeasible(format!(
            "provisioning audit failed:\n  {}",
            violations.join("\n  ")
        )));
    }
    let json = serde_json::to_string_pretty(&result.to_document()).expect("document serializes");
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(&args.out, json + "\n").map_err(|e| io_err(&args.out, e))?;
    let summary = result.summary();
    let summary_path = args.out.with_extension("summary.txt");
    fs::write(&summary_path, &summary).map_err(|e| io_err(&summary_path, e))?;
    let _ = write!(out, "{summary}");
    let _ = writeln!(
        out,
        "wrote {} lightpaths to {}",
        result.lightpaths.len(),
        args.out.display()
    );
    Ok(())
}

fn flows_file(policy: Policy, seed: u64) -> String {
    format!("flows-{policy}-seed{seed}.csv")
}

pub fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = load_scenario(&args.scenario)?;
    if let Some(k) = args.k_paths {
        cfg.k_paths = k;
    }
    if let Some(th) = args.detector.threshold_bytes {
        cfg.threshold_bytes = th;
    }
    args.detector.apply(&mut cfg.detector);
    cfg.validate().map_err(scenario_err)?;
    let policies = if args.policies.is_empty() {
        cfg.policies.clone()
    } else {
        args.policies.clone()
    };
    if policies.is_empty() {
        return Err(CliError::Usage(
            "no policy given: pass --policy (ecmp, ecmp-fso, fg-fso, lightfdg) or list `policies` in the scenario"
                .into(),
        ));
    }
    let seeds = if args.seeds.is_empty() {
        vec![cfg.seed]
    } else {
        args.seeds.clone()
    };
    let runs: Vec<(Policy, u64)> = policies
        .iter()
        .flat_map(|&p| seeds.iter().map(move |&s| (p, s)))
        .collect();

    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, runs.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<MetricsReport, EngineError>>>> =
        Mutex::new((0..runs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(policy, seed)) = runs.get(i) else {
                    break;
                };
                let r = engine::run(&cfg, policy, seed);
                results.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    let mut reports = Vec::with_capacity(runs.len());
    for r in results.into_inner().expect("workers joined") {
        reports.push(r.expect("every run executed").map_err(engine_err)?);
    }

    create_dir(&args.out)?;
    let mut manifest = RunManifest::new("simulate", &args.out);
    manifest.scenario = Some(args.scenario.display().to_string());
    manifest.policies = policies.iter().map(|p| p.to_string()).collect();
    manifest.seeds = seeds;
    for r in &reports {
        let mut buf = Vec::new();
        r.write_flows_csv(&mut buf)
            .map_err(|e| CliError::Input(e.to_string()))?;
        manifest.emit(&args.out, &flows_file(r.policy, r.seed), &buf)?;
        let mf = r.class(crate::FlowClass::Mice);
        let ef = r.class(crate::FlowClass::Elephant);
        let _ = writeln!(
            out,
            "{:<9} seed {:<4} MF deadline {:.4}  MF {:.3e} b/s  EF {:.3e} b/s",
            r.policy.to_string(),
            r.seed,
            mf.deadline_satisfaction,
            mf.throughput_bps,
            ef.throughput_bps
        );
    }
    let mut buf = Vec::new();
    write_summary_csv(&reports, &mut buf).map_err(|e| CliError::Input(e.to_string()))?;
    manifest.emit(&args.out, "summary.csv", &buf)?;
    manifest.finish(&args.out)
}

fn detector_config(args: &ReplayArgs) -> Result<DetectorConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            serde_json::from_str(&text).map_err(|e| io_err(p, e))?
        }
        None => DetectorConfig::default(),
    };
    args.flags.apply(&mut cfg);
    cfg.validate().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(cfg)
}

pub fn cmd_detect_replay(args: &ReplayArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let det_cfg = detector_config(args)?;
    let threshold = det_cfg.threshold_bytes;
    let detector = match args.detector {
        DetectorKind::Ack => ReplayDetector::Ack(det_cfg),
        DetectorKind::Sampling => ReplayDetector::Sampling(SamplingConfig {
            sample_rate: args.sample_rate,
            threshold_bytes: threshold,
            export_interval_ns: args.export_interval_ns,
            seed: args.seed,
        }),
    };
    let file = fs::File::open(&args.trace).map_err(|e| io_err(&args.trace, e))?;
    let events = read_trace(BufReader::new(file)).map_err(|e| trace_err(&args.trace, e))?;
    let report = replay(events, &detector, threshold).map_err(|e| trace_err(&args.trace, e))?;

    create_dir(&args.out)?;
    let mut manifest = RunManifest::new("detect-replay", &args.out);
    manifest.trace = Some(args.trace.display().to_string());
    let mut buf = Vec::new();
    report
        .write_detection_csv(&mut buf)
        .map_err(|e| trace_err(&args.trace, e))?;
    manifest.emit(&args.out, "detection.csv", &buf)?;
    let mut buf = Vec::new();
    report
        .write_overhead_csv(&mut buf)
        .map_err(|e| trace_err(&args.trace, e))?;
    manifest.emit(&args.out, "overhead.csv", &buf)?;
    manifest.finish(&args.out)?;
    let (s, m) = (report.stats, report.metrics);
    let _ = writeln!(
        out,
        "{} flows, {} packets, {} captured, {} notifications, TN {}, FP {}, accuracy {:.4}",
        m.flows,
        s.packets_total,
        s.packets_captured,
        s.notifications,
        m.true_negatives,
        m.false_positives,
        m.accuracy
    );
    Ok(())
}

pub fn cmd_gen_trace(args: &GenTraceArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = load_scenario(&args.scenario)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let rate = args.rate_bps.unwrap_or(cfg.fso_link_bps);
    if !(rate.is_finite() && rate > 0.0) {
        return Err(CliError::Usage(format!(
            "--rate-bps must be positive, got {rate}"
        )));
    }
    let flows = generate_flows(&cfg).map_err(scenario_err)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let file = fs::File::create(&args.out).map_err(|e| io_err(&args.out, e))?;
    let n = write_trace(
        BufWriter::new(file),
        flows_to_packet_events(&flows, &cfg.packets, rate),
    )
    .map_err(|e| trace_err(&args.out, e))?;
    let _ = writeln!(
        out,
        "wrote {n} packet events for {} flows to {}",
        flows.len(),
        args.out.display()
    );
    Ok(())
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Provision(a) => cmd_provision(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::DetectReplay(a) => cmd_detect_replay(a, out),
        Command::GenTrace(a) => cmd_gen_trace(a, out),
    }
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    match execute(&cli, &mut lock) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
