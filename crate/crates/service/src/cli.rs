//! The `bmbe` command line.
//!
//! Every subcommand writes its report to the supplied writer, so tests can
//! call [`run_from`] in-process and inspect the output. `--kb` arguments
//! take either a path to a KB JSON file or the name of a shipped fixture
//! (`minimal`, `separable`, `twin`, `ddx_shaped`).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use bmbe::eval::{
    classify_failures, cross_kb_eval, default_grid, metrics_csv, metrics_row, run_cohort, scaling_experiment,
    stratify_prevalence, summarize_failures, sweep_threshold, ResponderKind, RunSet, DEFAULT_GAMMA,
};
use bmbe::fixtures::shipped_kbs;
use bmbe::kb::{
    build_from_records, import_elicited, kb_stats, load_kb, match_features, BuildOptions, ElicitedTables, Feature,
    KbSchema, Record,
};
use bmbe::patient::{generate_cohort, load_profiles, stratified_subset, Archetype, PatientProfile, Persona};
use bmbe::policy::score_features;
use bmbe::sensor::{ExternalClientConfig, Sensor};
use bmbe::session::{read_trace_jsonl, write_trace_jsonl, Session, TraceHeader};
use bmbe::{AskedSet, KnowledgeBase, PolicyConfig, SessionConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::state::{AppState, ServiceConfig};

/// Environment variable naming the completion endpoint for `--sensor external`.
pub const ENDPOINT_ENV: &str = "BMBE_EXTERNAL_ENDPOINT";

#[derive(Debug, Parser)]
#[command(name = "bmbe", version, about = "Bayesian belief engine for diagnostic dialogue")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one session per patient and write traces, results and metrics.
    Run(RunArgs),
    /// Sample or subset patient cohorts.
    #[command(subcommand)]
    Patients(PatientsCmd),
    /// Metrics and experiments over run results.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Knowledge-base construction and inspection.
    #[command(subcommand)]
    Kb(KbCmd),
    /// Question-selection diagnostics.
    #[command(subcommand)]
    Policy(PolicyCmd),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SensorKind {
    /// Ground-truth answers at full confidence, no text.
    Oracle,
    /// Simulated patients parsed by the local pattern tier only.
    Patterns,
    /// Simulated patients, pattern tier then the external completion endpoint.
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Global,
    Focused,
}

impl PolicyArg {
    fn config(self) -> PolicyConfig {
        match self {
            PolicyArg::Global => PolicyConfig::default(),
            PolicyArg::Focused => PolicyConfig::focused(),
        }
    }
}

#[derive(Debug, Args)]
pub struct SessionArgs {
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    #[arg(long, default_value_t = 12)]
    pub tmin: u32,
    #[arg(long, default_value_t = 20)]
    pub tmax: u32,
    #[arg(long, value_enum, default_value_t = PolicyArg::Global)]
    pub policy: PolicyArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl SessionArgs {
    fn config(&self) -> SessionConfig {
        SessionConfig {
            tau: self.tau,
            t_min: self.tmin,
            t_max: self.tmax,
            policy: self.policy.config(),
            seed: self.seed,
            ..SessionConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct ResponderArgs {
    #[arg(long, value_enum, default_value_t = SensorKind::Oracle)]
    pub sensor: SensorKind,
    /// Persona archetype for simulated patients.
    #[arg(long, default_value = "plain")]
    pub persona: Archetype,
    /// Completion endpoint for `--sensor external`; falls back to $BMBE_EXTERNAL_ENDPOINT.
    #[arg(long)]
    pub endpoint: Option<String>,
}

impl ResponderArgs {
    fn resolve(&self) -> Result<(Sensor, ResponderKind)> {
        let persona = Persona::preset(self.persona);
        Ok(match self.sensor {
            SensorKind::Oracle => (Sensor::airgapped(), ResponderKind::Oracle),
            SensorKind::Patterns => (Sensor::airgapped(), ResponderKind::Patient { persona }),
            SensorKind::External => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .or_else(|| std::env::var(ENDPOINT_ENV).ok())
                    .context("--sensor external needs --endpoint or $BMBE_EXTERNAL_ENDPOINT")?;
                let sensor = Sensor::from_config(&ExternalClientConfig {
                    endpoint,
                    enabled: true,
                    ..ExternalClientConfig::default()
                })?;
                (sensor, ResponderKind::Patient { persona })
            }
        })
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub kb: String,
    /// Profiles as JSON lines or a JSON array; sampled from the KB when absent.
    #[arg(long)]
    pub patients: Option<PathBuf>,
    /// Patients per disease when sampling.
    #[arg(long, default_value_t = 20)]
    pub per_disease: usize,
    #[command(flatten)]
    pub responder: ResponderArgs,
    #[command(flatten)]
    pub session: SessionArgs,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Output folder; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Leave out wall-clock timestamps so identical inputs give identical bytes.
    #[arg(long)]
    pub canonical: bool,
}

#[derive(Debug, Subcommand)]
pub enum PatientsCmd {
    /// Ancestral samples, `--per-disease` for every disease, as JSON lines.
    Sample {
        #[arg(long)]
        kb: String,
        #[arg(long, default_value_t = 20)]
        per_disease: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// A random subset with at least one patient per disease.
    Stratify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum EvalCmd {
    /// One metrics row: the sessions' own decisions, or a fixed `--tau`.
    Metrics {
        /// A run folder or its `results.json`.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
    },
    /// Metrics at every grid threshold, as CSV; `--json` adds tau*.
    Sweep {
        #[arg(long)]
        results: PathBuf,
        /// Comma-separated thresholds; defaults to 0.00, 0.05, ..., 0.95.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long)]
        json: bool,
    },
    /// Metrics per prevalence tercile.
    Strata {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        kb: String,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
    },
    /// Failure categories for committed misdiagnoses.
    Failures {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        kb: String,
        /// Defaults to the run folder's `patients.jsonl`.
        #[arg(long)]
        patients: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
    },
    /// Top-1 accuracy on random disease subsets of each size.
    Scaling {
        #[arg(long)]
        kb: String,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[command(flatten)]
        responder: ResponderArgs,
        #[command(flatten)]
        session: SessionArgs,
    },
    /// Evaluate `--native` on patients sampled from `--foreign`.
    CrossKb {
        #[arg(long)]
        native: String,
        #[arg(long)]
        foreign: String,
        #[arg(long, default_value_t = 5)]
        per_disease: usize,
        #[command(flatten)]
        responder: ResponderArgs,
        #[command(flatten)]
        session: SessionArgs,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
    },
}

#[derive(Debug, Subcommand)]
pub enum KbCmd {
    /// Count a KB out of labelled records.
    Build {
        #[arg(long)]
        schema: PathBuf,
        /// Records as JSON lines or a JSON array.
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value_t = 20)]
        top_m: usize,
        /// Treat a binary feature missing from a record as not recorded.
        #[arg(long)]
        absent_is_unknown: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert elicited probability tables; dropped entries are reported.
    ImportElicited {
        #[arg(long)]
        tables: PathBuf,
        /// Feature schema as a JSON array; inferred when absent.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Discriminability summary as JSON, or per-feature CSV with `--csv`.
    Stats {
        #[arg(long)]
        kb: String,
        #[arg(long)]
        csv: bool,
    },
    /// Feature matching between two KBs.
    Match {
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum PolicyCmd {
    /// The full question-scoring table for a session's current belief.
    Score {
        /// Trace JSONL path, or a session id under `--data-dir`.
        #[arg(long)]
        session: String,
        #[arg(long)]
        kb: String,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Overrides the policy recorded in the trace.
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Session, KB and run storage; sessions are restored from here on start.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Require `Authorization: Bearer <token>`; falls back to $BMBE_TOKEN.
    #[arg(long)]
    pub token: Option<String>,
    /// Extra KBs as `name=path`.
    #[arg(long = "kb", value_parser = parse_named_path)]
    pub kbs: Vec<(String, PathBuf)>,
    /// Profiles that simulated sessions can reference by id.
    #[arg(long)]
    pub patients: Option<PathBuf>,
    /// Completion endpoint for the external sensor tier.
    #[arg(long)]
    pub endpoint: Option<String>,
}

fn parse_named_path(s: &str) -> Result<(String, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or_else(|| format!("expected name=path, got `{s}`"))?;
    Ok((name.to_owned(), PathBuf::from(path)))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli, out),
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            write!(out, "{e}")?;
            Ok(())
        }
        Err(e) => Err(e.into()),
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Run(args) => run(&args, out),
        Command::Patients(cmd) => patients(cmd, out),
        Command::Eval(cmd) => eval(cmd, out),
        Command::Kb(cmd) => kb(cmd, out),
        Command::Policy(cmd) => policy(cmd, out),
        Command::Serve(args) => serve(args, out),
    }
}

/// A KB file path, or the name of a shipped fixture.
pub fn resolve_kb(arg: &str) -> Result<KnowledgeBase> {
    let path = Path::new(arg);
    if path.exists() {
        return load_kb(path).with_context(|| format!("loading {arg}"));
    }
    shipped_kbs()
        .into_iter()
        .find(|(name, _)| *name == arg)
        .map(|(_, kb)| kb)
        .with_context(|| format!("`{arg}` is neither a KB file nor a shipped fixture"))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// JSON array or JSON lines.
fn read_json_items<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()));
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

fn write_json(out: &mut dyn Write, value: &impl Serialize) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn profiles_jsonl(profiles: &[PatientProfile]) -> Result<String> {
    let mut s = String::new();
    for p in profiles {
        s.push_str(&serde_json::to_string(p)?);
        s.push('\n');
    }
    Ok(s)
}

fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => Ok(out.write_all(text.as_bytes())?),
    }
}

/// A run folder or a `results.json` inside one.
fn load_results(path: &Path) -> Result<RunSet> {
    let file = if path.is_dir() { path.join("results.json") } else { path.to_path_buf() };
    read_json(&file)
}

fn run(args: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let kb = Arc::new(resolve_kb(&args.kb)?);
    let cfg = args.session.config();
    let profiles = match &args.patients {
        Some(p) => load_profiles(p)?,
        None => generate_cohort(&kb, args.per_disease, args.session.seed)?,
    };
    let (sensor, kind) = args.responder.resolve()?;
    let rs = run_cohort(&kb, &sensor, &profiles, &kind, &cfg)?;

    let dir = &args.out;
    let traces = dir.join("traces");
    std::fs::create_dir_all(&traces).with_context(|| format!("creating {}", traces.display()))?;
    let timestamp = (!args.canonical).then(|| chrono::Utc::now().to_rfc3339());
    for r in &rs.results {
        let header = TraceHeader {
            session_id: r.result.session_id.clone(),
            config: cfg.clone(),
            prior_strategy: cfg.prior_strategy.clone(),
            kb_hash: rs.kb_ref.clone(),
            profile_id: Some(r.profile_id.clone()),
            intake: r.result.intake_triples.clone(),
            awaiting_opening: false,
            timestamp: timestamp.clone(),
        };
        let mut buf = Vec::new();
        write_trace_jsonl(&mut buf, &header, &r.result.trace)?;
        std::fs::write(traces.join(format!("{}.jsonl", r.result.session_id)), buf)?;
    }
    std::fs::write(dir.join("results.json"), serde_json::to_string_pretty(&rs)?)?;
    std::fs::write(dir.join("patients.jsonl"), profiles_jsonl(&profiles)?)?;
    let own = metrics_row(&rs, None, args.alpha)?;
    std::fs::write(dir.join("metrics.csv"), metrics_csv(&[own]))?;
    let (rows, tau_star) = sweep_threshold(&rs, &default_grid(), args.alpha)?;
    std::fs::write(dir.join("sweep.csv"), metrics_csv(&rows))?;

    let mut manifest = json!({
        "kb": args.kb,
        "kb_hash": rs.kb_ref,
        "cohort": {
            "source": args.patients.as_ref().map_or_else(|| "sampled".to_owned(), |p| p.display().to_string()),
            "n_patients": profiles.len(),
        },
        "config": cfg,
        "seeds": { "session": args.session.seed },
        "sensor": format!("{:?}", args.responder.sensor).to_lowercase(),
        "persona": args.responder.persona,
        "tau_star": tau_star,
    });
    if let Some(t) = timestamp {
        manifest["created_at"] = json!(t);
    }
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;

    writeln!(
        out,
        "{} sessions: sel_acc {:.3} coverage {:.3} dhs {:.3} top1 {:.3}; tau* {tau_star}; wrote {}",
        rs.len(),
        own.selective_accuracy,
        own.coverage,
        own.dhs,
        own.top1,
        dir.display()
    )?;
    Ok(())
}

fn patients(cmd: PatientsCmd, out: &mut dyn Write) -> Result<()> {
    match cmd {
        PatientsCmd::Sample {
            kb,
            per_disease,
            seed,
            out: path,
        } => {
            let kb = resolve_kb(&kb)?;
            let cohort = generate_cohort(&kb, per_disease, seed)?;
            emit(out, path.as_deref(), &profiles_jsonl(&cohort)?)
        }
        PatientsCmd::Stratify { input, n, seed, out: path } => {
            let all = load_profiles(&input)?;
            let subset = stratified_subset(&all, n, seed)?;
            emit(out, path.as_deref(), &profiles_jsonl(&subset)?)
        }
    }
}

fn eval(cmd: EvalCmd, out: &mut dyn Write) -> Result<()> {
    match cmd {
        EvalCmd::Metrics { results, tau, alpha } => {
            let rs = load_results(&results)?;
            out.write_all(metrics_csv(&[metrics_row(&rs, tau, alpha)?]).as_bytes())?;
        }
        EvalCmd::Sweep {
            results,
            grid,
            alpha,
            json,
        } => {
            let rs = load_results(&results)?;
            let grid = if grid.is_empty() { default_grid() } else { grid };
            let (rows, tau_star) = sweep_threshold(&rs, &grid, alpha)?;
            if json {
                write_json(out, &json!({ "rows": rows, "tau_star": tau_star }))?;
            } else {
                out.write_all(metrics_csv(&rows).as_bytes())?;
            }
        }
        EvalCmd::Strata {
            results,
            kb,
            tau,
            alpha,
        } => {
            let rs = load_results(&results)?;
            write_json(out, &stratify_prevalence(&rs, &resolve_kb(&kb)?, tau, alpha)?)?;
        }
        EvalCmd::Failures {
            results,
            kb,
            patients,
            gamma,
        } => {
            let rs = load_results(&results)?;
            let patients = match patients {
                Some(p) => p,
                None if results.is_dir() => results.join("patients.jsonl"),
                None => results.parent().unwrap_or(Path::new(".")).join("patients.jsonl"),
            };
            let profiles = load_profiles(&patients)?;
            let tags = classify_failures(&rs, &resolve_kb(&kb)?, &profiles, gamma)?;
            write_json(out, &json!({ "summary": summarize_failures(&tags), "tags": tags }))?;
        }
        EvalCmd::Scaling {
            kb,
            sizes,
            seeds,
            responder,
            session,
        } => {
            let kb = resolve_kb(&kb)?;
            let (sensor, kind) = responder.resolve()?;
            let rows = scaling_experiment(&kb, &sizes, &seeds, &sensor, &kind, &session.config())?;
            writeln!(out, "size,seed,n_patients,top1")?;
            for r in rows {
                writeln!(out, "{},{},{},{}", r.size, r.seed, r.n_patients, r.top1)?;
            }
        }
        EvalCmd::CrossKb {
            native,
            foreign,
            per_disease,
            responder,
            session,
            alpha,
        } => {
            let native = Arc::new(resolve_kb(&native)?);
            let foreign = resolve_kb(&foreign)?;
            let patients = generate_cohort(&foreign, per_disease, session.seed)?;
            let (sensor, kind) = responder.resolve()?;
            let report = cross_kb_eval(
                &native,
                &patients,
                &match_features(&foreign, &native),
                &sensor,
                &kind,
                &session.config(),
                alpha,
            )?;
            write_json(
                out,
                &json!({
                    "metrics": report.metrics,
                    "mean_feature_coverage": report.mean_feature_coverage,
                    "feature_coverage": report.feature_coverage,
                    "warning": report.warning,
                }),
            )?;
        }
    }
    Ok(())
}

fn kb(cmd: KbCmd, out: &mut dyn Write) -> Result<()> {
    match cmd {
        KbCmd::Build {
            schema,
            records,
            top_m,
            absent_is_unknown,
            out: path,
        } => {
            let schema: KbSchema = read_json(&schema)?;
            let records: Vec<Record> = read_json_items(&records)?;
            let options = BuildOptions {
                absent_binary_is_no: !absent_is_unknown,
                multi_choice_top_m: top_m,
            };
            let kb = build_from_records(&schema, records, &options)?;
            std::fs::write(&path, kb.to_json_pretty())?;
            write_json(
                out,
                &json!({ "kb_hash": kb.content_hash(), "n_diseases": kb.n_diseases(), "n_features": kb.n_features() }),
            )?;
        }
        KbCmd::ImportElicited { tables, features, out: path } => {
            let tables: ElicitedTables = read_json(&tables)?;
            let features: Option<Vec<Feature>> = features.map(|f| read_json(&f)).transpose()?;
            let report = import_elicited(&tables, features)?;
            std::fs::write(&path, report.kb.to_json_pretty())?;
            write_json(out, &json!({ "accepted": report.accepted, "warnings": report.warnings }))?;
        }
        KbCmd::Stats { kb, csv } => {
            let kb = resolve_kb(&kb)?;
            let stats = kb_stats(&kb);
            if csv {
                writeln!(out, "feature_id,variance,range")?;
                for (f, v) in &stats.per_feature_variance {
                    writeln!(out, "{f},{v},{}", stats.per_feature_range[f])?;
                }
            } else {
                write_json(out, &stats)?;
            }
        }
        KbCmd::Match { a, b } => {
            write_json(out, &match_features(&resolve_kb(&a)?, &resolve_kb(&b)?))?;
        }
    }
    Ok(())
}

/// Scores are computed from the belief the trace replays to; intake and
/// asked features are excluded. The focus column is empty while focus is
/// inactive.
fn policy(cmd: PolicyCmd, out: &mut dyn Write) -> Result<()> {
    let PolicyCmd::Score {
        session,
        kb,
        data_dir,
        policy,
    } = cmd;
    let path = match &data_dir {
        Some(dir) if !Path::new(&session).exists() => dir.join("sessions").join(format!("{session}.jsonl")),
        _ => PathBuf::from(&session),
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let (header, records) = read_trace_jsonl(&text)?;
    let kb = Arc::new(resolve_kb(&kb)?);
    let restored = Session::restore(kb.clone(), Sensor::airgapped(), &header, &records)?;
    let mut asked = AskedSet::new();
    for t in &header.intake {
        asked.insert(t.feature_id.clone());
    }
    for r in &records {
        asked.insert(r.asked_feature.clone());
    }
    let cfg = policy.map_or(header.config.policy, PolicyArg::config);
    let scores = score_features(restored.belief(), &kb, &asked, &cfg)?;
    writeln!(out, "feature_id,eig_global,eig_focus,score")?;
    for s in scores {
        let focus = s.eig_focus.map(|e| e.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{focus},{}", s.feature_id, s.eig_global, s.score)?;
    }
    Ok(())
}

fn serve(args: ServeArgs, out: &mut dyn Write) -> Result<()> {
    let mut kbs = Vec::new();
    for (name, path) in &args.kbs {
        kbs.push((name.clone(), load_kb(path).with_context(|| format!("loading {}", path.display()))?));
    }
    let sensor = match &args.endpoint {
        Some(endpoint) => Sensor::from_config(&ExternalClientConfig {
            endpoint: endpoint.clone(),
            enabled: true,
            ..ExternalClientConfig::default()
        })?,
        None => Sensor::airgapped(),
    };
    let cfg = ServiceConfig {
        data_dir: args.data_dir.clone(),
        token: args.token.clone().or_else(|| std::env::var("BMBE_TOKEN").ok()),
        sensor,
        profiles: args.patients.as_ref().map(load_profiles).transpose()?.unwrap_or_default(),
        kbs,
    };
    let state = AppState::new(cfg)?;
    for w in state.restore_warnings() {
        writeln!(out, "warning: could not restore {w}")?;
    }
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port)).await?;
        writeln!(
            out,
            "listening on http://{} (external tier {})",
            listener.local_addr()?,
            if state.sensor().has_external() { "on" } else { "off" }
        )?;
        out.flush()?;
        crate::routes::serve(listener, state).await?;
        Ok::<(), anyhow::Error>(())
    })
}
