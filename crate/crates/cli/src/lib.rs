//! The `recengine` command line: generate or validate logs, train and
//! evaluate scorers, draft recommendation batches and analyze outcomes.

pub mod config;
pub mod provenance;
pub mod stages;

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};

use recengine_core::analysis::{
    build_outcome_panel, effect_size, estimate_effect, group_difference_report, load_panel, power_at,
    required_sample_size, save_panel, BootstrapConfig, EffectEstimate, EffectMethod, EffectSizeInput, OutcomeKind,
    PanelSpec, PanelUnit, PowerRequest, UnitKind,
};
use recengine_core::event_log::{generate_synthetic_log, parse_event_log, write_event_log, EventLog};
use recengine_core::feedback::{build_training_samples, write_samples, Corpus, SampleFileHeader};
use recengine_core::models::{ModelKind, ScorerModel};
use recengine_core::Error as CoreError;

use crate::config::{load_config, RunConfig};
use crate::provenance::Provenance;

/// A problem with the invocation or its inputs rather than with the computation.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// 1 for bad invocations, configs and input files; 2 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::Parse { .. }
                | CoreError::UnknownKind { .. }
                | CoreError::InvalidRecord(_)
                | CoreError::InvalidConfig(_)
                | CoreError::MissingEmbedding(_)
                | CoreError::Format(_)
                | CoreError::MissingMetadata(_) => 1,
                _ => 2,
            };
        }
    }
    2
}

#[derive(Parser, Debug)]
#[command(
    name = "recengine",
    version,
    about = "Peer recommendations for online health communities"
)]
pub struct Cli {
    /// TOML run configuration; RECENGINE_SECTION__KEY variables override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed, copied into every seeded stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// Directory for all default outputs and provenance records.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct LogArg {
    /// JSON-lines event log.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArg {
    /// Model file written by `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic event log from the `[synthetic]` config section.
    Generate {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse an event log and report its contents.
    Validate {
        #[command(flatten)]
        log: LogArg,
    },
    /// Write labelled training samples for the training split.
    Extract {
        #[command(flatten)]
        log: LogArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a scorer on the training split.
    Train {
        #[command(flatten)]
        log: LogArg,
        /// Scorer to fit; defaults to `model.kind`.
        #[arg(long)]
        kind: Option<ModelKind>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank the test split with a model and the configured baselines.
    Evaluate {
        #[command(flatten)]
        log: LogArg,
        #[command(flatten)]
        model: ModelArg,
    },
    /// Diversity of uncapped top-k sets at one instant.
    Coverage {
        #[command(flatten)]
        log: LogArg,
        #[command(flatten)]
        model: ModelArg,
        /// Instant in ms; defaults to 12 hours after the end of training.
        #[arg(long)]
        at: Option<i64>,
    },
    /// Draft a capped recommendation batch and render its emails.
    Recommend {
        #[command(flatten)]
        log: LogArg,
        #[command(flatten)]
        model: ModelArg,
        /// Participant ids, one per line; defaults to a sample of eligible, active authors.
        #[arg(long)]
        participants: Option<PathBuf>,
        #[arg(long)]
        batch_id: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Outcome panels, effect estimates and study statistics.
    Analyze {
        #[command(subcommand)]
        command: AnalyzeCommand,
    },
    /// Sample size needed to detect a point-biserial correlation.
    Power(PowerArgs),
    /// Generate or load a log, train, evaluate and draft one batch.
    Pipeline,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum UnitKindArg {
    Author,
    Site,
}

impl From<UnitKindArg> for UnitKind {
    fn from(k: UnitKindArg) -> Self {
        match k {
            UnitKindArg::Author => UnitKind::Author,
            UnitKindArg::Site => UnitKind::Site,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum MethodArg {
    Raw,
    Ols,
    DoublyRobust,
    All,
}

#[derive(Subcommand, Debug)]
pub enum AnalyzeCommand {
    /// Bootstrap effect estimates from a panel CSV.
    Effects {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        method: MethodArg,
        #[arg(long)]
        n_bootstrap: Option<usize>,
        #[arg(long)]
        confidence: Option<f64>,
    },
    /// Build an outcome panel CSV from a log and a units CSV (id,treated,event_ts,batch).
    Panel {
        #[command(flatten)]
        log: LogArg,
        #[arg(long)]
        units: PathBuf,
        #[arg(long, value_enum)]
        unit_kind: UnitKindArg,
        #[arg(long)]
        outcome: OutcomeKind,
        /// Keep only the latest visit per user, site and day.
        #[arg(long)]
        daily_visits: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two groups per metric from a CSV of metric,group,value rows.
    Groups {
        #[arg(long)]
        input: PathBuf,
    },
    /// Cohen's d, simple or difference-in-differences.
    EffectSize(EffectSizeArgs),
    /// Same as the top-level `power`.
    Power(PowerArgs),
}

#[derive(Args, Debug, Clone)]
pub struct PowerArgs {
    /// Point-biserial effect size.
    #[arg(long)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.8)]
    pub power: f64,
    #[arg(long, default_value_t = 1)]
    pub tails: u8,
}

#[derive(Args, Debug, Clone)]
pub struct EffectSizeArgs {
    /// Mean of the treated group (simple mode).
    #[arg(long, conflicts_with_all = ["control_before", "control_after", "treated_before", "treated_after"])]
    pub mean: Option<f64>,
    #[arg(long, requires_all = ["control_after", "treated_before", "treated_after"])]
    pub control_before: Option<f64>,
    #[arg(long)]
    pub control_after: Option<f64>,
    #[arg(long)]
    pub treated_before: Option<f64>,
    #[arg(long)]
    pub treated_after: Option<f64>,
    /// Standard deviation (pooled in difference-in-differences mode).
    #[arg(long)]
    pub sd: f64,
}

/// Result of one command, printed as text or JSON.
struct Report {
    json: serde_json::Value,
    text: String,
}

impl Report {
    fn new(value: &impl Serialize, text: impl Into<String>) -> anyhow::Result<Self> {
        Ok(Report {
            json: serde_json::to_value(value)?,
            text: text.into(),
        })
    }
}

/// Runs the CLI with process arguments and environment; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with_env(args, std::env::vars())
}

pub fn run_with_env<I, T>(args: I, vars: impl IntoIterator<Item = (String, String)>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let arg_strings: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, &arg_strings, vars) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn execute(cli: &Cli, args: &[String], vars: impl IntoIterator<Item = (String, String)>) -> anyhow::Result<()> {
    let mut cfg = load_config(cli.config.as_deref(), vars).map_err(|e| usage(format!("{e:#}")))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    cfg.propagate_seed();
    cfg.validate().map_err(|e| usage(format!("{e:#}")))?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be >= 1"));
        }
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("thread pool already initialised");
        }
    }
    let name = command_name(&cli.command);
    let mut prov = Provenance::new(&name, args, &cfg);
    let report = dispatch(&cli.command, &mut cfg, &mut prov)?;
    prov.write(&cfg.output_dir)?;
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&report.json)?);
    } else {
        print!("{}", report.text);
        if !report.text.ends_with('\n') {
            println!();
        }
    }
    Ok(())
}

fn command_name(c: &Command) -> String {
    let name = match c {
        Command::Generate { .. } => "generate",
        Command::Validate { .. } => "validate",
        Command::Extract { .. } => "extract",
        Command::Train { .. } => "train",
        Command::Evaluate { .. } => "evaluate",
        Command::Coverage { .. } => "coverage",
        Command::Recommend { .. } => "recommend",
        Command::Power(_) => "power",
        Command::Pipeline => "pipeline",
        Command::Analyze { command } => {
            return format!(
                "analyze-{}",
                match command {
                    AnalyzeCommand::Effects { .. } => "effects",
                    AnalyzeCommand::Panel { .. } => "panel",
                    AnalyzeCommand::Groups { .. } => "groups",
                    AnalyzeCommand::EffectSize(_) => "effect-size",
                    AnalyzeCommand::Power(_) => "power",
                }
            )
        }
    };
    name.to_string()
}

/// The input file named by `flag`, falling back to the config; must exist.
fn input_path(flag: &str, given: &Option<PathBuf>, configured: &Option<PathBuf>) -> anyhow::Result<PathBuf> {
    let Some(p) = given.clone().or_else(|| configured.clone()) else {
        return Err(usage(format!(
            "--{flag} is required (or set paths.{flag} in the config)"
        )));
    };
    if !p.is_file() {
        return Err(usage(format!("--{flag}: no such file {}", p.display())));
    }
    Ok(p)
}

fn must_exist(flag: &str, p: &Path) -> anyhow::Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(usage(format!("--{flag}: no such file {}", p.display())))
    }
}

fn out_path(cfg: &RunConfig, given: &Option<PathBuf>, default: &str) -> PathBuf {
    given.clone().unwrap_or_else(|| cfg.output_dir.join(default))
}

fn ensure_parent(p: &Path) -> anyhow::Result<()> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn load_log(log: &LogArg, cfg: &RunConfig, prov: &mut Provenance) -> anyhow::Result<EventLog> {
    let path = input_path("log", &log.log, &cfg.paths.log)?;
    prov.input(&path)?;
    let log = parse_event_log(&path)?;
    info!("read {} events from {}", log.len(), path.display());
    Ok(log)
}

/// A saved model, or an untrained heuristic when `model.kind` needs no fitting.
fn load_model(model: &ModelArg, cfg: &RunConfig, prov: &mut Provenance) -> anyhow::Result<ScorerModel> {
    if model.model.is_none() && cfg.paths.model.is_none() && cfg.model.kind.is_heuristic() {
        return Ok(ScorerModel::heuristic(cfg.model.kind, cfg.seed)?);
    }
    let path = input_path("model", &model.model, &cfg.paths.model)?;
    prov.input(&path)?;
    Ok(ScorerModel::load(&path)?)
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    ensure_parent(path)?;
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct LogSummary {
    n_events: usize,
    reordered: usize,
    n_users: usize,
    n_sites: usize,
    n_initiations: usize,
    first_ts: Option<i64>,
    last_ts: Option<i64>,
    content_sha256: String,
}

impl LogSummary {
    fn new(corpus: &Corpus) -> Self {
        let log = corpus.log();
        let h = corpus.history();
        LogSummary {
            n_events: log.len(),
            reordered: log.reordered(),
            n_users: h.n_users(),
            n_sites: h.n_sites(),
            n_initiations: corpus.initiations().len(),
            first_ts: log.first_ts(),
            last_ts: log.last_ts(),
            content_sha256: log.content_hash(),
        }
    }

    fn text(&self) -> String {
        format!(
            "{} events ({} reordered), {} users, {} sites, {} initiations\ncontent hash {}",
            self.n_events, self.reordered, self.n_users, self.n_sites, self.n_initiations, self.content_sha256
        )
    }
}

#[derive(Serialize)]
struct EffectJson {
    method: EffectMethod,
    point: f64,
    ci: [f64; 2],
    n: usize,
    n_treated: usize,
    n_control: usize,
    n_bootstrap: usize,
    n_failed: usize,
    confidence: f64,
    seed: u64,
}

impl EffectJson {
    fn new(e: &EffectEstimate, confidence: f64) -> Self {
        EffectJson {
            method: e.method,
            point: e.point,
            ci: [e.ci_low, e.ci_high],
            n: e.n_treated + e.n_control,
            n_treated: e.n_treated,
            n_control: e.n_control,
            n_bootstrap: e.n_bootstrap,
            n_failed: e.n_failed,
            confidence,
            seed: e.seed,
        }
    }
}

#[derive(Deserialize)]
struct GroupRow {
    metric: String,
    group: String,
    value: f64,
}

#[derive(Serialize)]
struct PowerJson {
    request: PowerRequest,
    n: u64,
    achieved_power: f64,
}

fn power_report(a: &PowerArgs) -> anyhow::Result<Report> {
    let req = PowerRequest {
        effect_size_rho: a.rho,
        alpha: a.alpha,
        power: a.power,
        tails: a.tails,
    };
    let n = required_sample_size(&req)?;
    let out = PowerJson {
        request: req,
        n,
        achieved_power: power_at(&req, n),
    };
    let text = format!("rho {} -> n = {n} (power {:.4})", a.rho, out.achieved_power);
    Report::new(&out, text)
}

fn read_groups(path: &Path) -> anyhow::Result<Vec<(String, Vec<f64>, Vec<f64>)>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut labels: Vec<String> = Vec::new();
    let mut metrics: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    for (i, row) in rdr.deserialize::<GroupRow>().enumerate() {
        let row = row.map_err(|e| usage(format!("{}: row {}: {e}", path.display(), i + 2)))?;
        let g = match labels.iter().position(|l| *l == row.group) {
            Some(g) => g,
            None if labels.len() < 2 => {
                labels.push(row.group.clone());
                labels.len() - 1
            }
            None => return Err(usage(format!("{}: more than two groups", path.display()))),
        };
        let m = match metrics.iter().position(|m| m.0 == row.metric) {
            Some(m) => m,
            None => {
                metrics.push((row.metric.clone(), Vec::new(), Vec::new()));
                metrics.len() - 1
            }
        };
        if g == 0 {
            metrics[m].1.push(row.value);
        } else {
            metrics[m].2.push(row.value);
        }
    }
    if labels.len() != 2 {
        return Err(usage(format!("{}: expected exactly two groups", path.display())));
    }
    Ok(metrics)
}

fn analyze(cmd: &AnalyzeCommand, cfg: &RunConfig, prov: &mut Provenance) -> anyhow::Result<Report> {
    match cmd {
        AnalyzeCommand::Effects {
            panel,
            method,
            n_bootstrap,
            confidence,
        } => {
            must_exist("panel", panel)?;
            prov.input(panel)?;
            let p = load_panel(panel)?;
            let bcfg = BootstrapConfig {
                n_bootstrap: n_bootstrap.unwrap_or(cfg.analysis.n_bootstrap),
                confidence: confidence.unwrap_or(0.95),
                ..BootstrapConfig::new(cfg.seed)
            };
            let methods: Vec<EffectMethod> = match method {
                MethodArg::Raw => vec![EffectMethod::Raw],
                MethodArg::Ols => vec![EffectMethod::Ols],
                MethodArg::DoublyRobust => vec![EffectMethod::DoublyRobust],
                MethodArg::All => EffectMethod::ALL.to_vec(),
            };
            let mut out = Vec::new();
            let mut text = String::new();
            for m in methods {
                let e = estimate_effect(&p, m, &bcfg)?;
                text.push_str(&format!(
                    "{:<14} {:>10.4}  [{:.4}, {:.4}]  n={} ({} treated)\n",
                    m.as_str(),
                    e.point,
                    e.ci_low,
                    e.ci_high,
                    e.n_treated + e.n_control,
                    e.n_treated
                ));
                out.push(EffectJson::new(&e, bcfg.confidence));
            }
            Report::new(&out, text)
        }
        AnalyzeCommand::Panel {
            log,
            units,
            unit_kind,
            outcome,
            daily_visits,
            out,
        } => {
            let ev = load_log(log, cfg, prov)?;
            must_exist("units", units)?;
            prov.input(units)?;
            let mut rdr = csv::Reader::from_path(units).with_context(|| format!("reading {}", units.display()))?;
            let rows = rdr
                .deserialize::<PanelUnit>()
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| usage(format!("--units: {e}")))?;
            let spec = PanelSpec {
                pre_weeks: cfg.analysis.pre_weeks,
                post_weeks: cfg.analysis.post_weeks,
                daily_visits: *daily_visits,
                ..PanelSpec::new((*unit_kind).into(), *outcome, cfg.seed)
            };
            let (panel, stats) = build_outcome_panel(&ev, &rows, &spec)?;
            let path = out_path(cfg, out, &format!("panel-{outcome}.csv"));
            ensure_parent(&path)?;
            save_panel(&panel, &path)?;
            prov.output(&path)?;
            let text = format!(
                "{} units ({} treated, {} control), {} excluded -> {}",
                panel.rows.len(),
                panel.n_treated(),
                panel.n_control(),
                stats.excluded,
                path.display()
            );
            Report::new(
                &serde_json::json!({"path": path, "n_treated": panel.n_treated(), "n_control": panel.n_control(), "stats": stats}),
                text,
            )
        }
        AnalyzeCommand::Groups { input } => {
            must_exist("input", input)?;
            prov.input(input)?;
            let rows = group_difference_report(&read_groups(input)?)?;
            let mut text = format!(
                "{:<24} {:>9} {:>9} {:>18} {:>18} {:>10} {:>9} {:>7}\n",
                "metric", "median a", "median b", "mean a (sd)", "mean b (sd)", "diff", "welch p", "CLES"
            );
            for r in &rows {
                text.push_str(&format!(
                    "{:<24} {:>9.3} {:>9.3} {:>9.3} ({:>6.3}) {:>9.3} ({:>6.3}) {:>10.3} {:>9.4} {:>6.1}%\n",
                    r.metric,
                    r.median_a,
                    r.median_b,
                    r.mean_a,
                    r.sd_a,
                    r.mean_b,
                    r.sd_b,
                    r.mean_difference,
                    r.welch_p,
                    100.0 * r.cles
                ));
            }
            Report::new(&rows, text)
        }
        AnalyzeCommand::EffectSize(a) => {
            let input = match (a.mean, a.control_before) {
                (Some(mean), None) => EffectSizeInput::Simple { mean, sd: a.sd },
                (None, Some(control_before)) => EffectSizeInput::DiffInDiff {
                    control_before,
                    control_after: a.control_after.unwrap_or_default(),
                    treated_before: a.treated_before.unwrap_or_default(),
                    treated_after: a.treated_after.unwrap_or_default(),
                    sd_pooled: a.sd,
                },
                _ => return Err(usage("give either --mean or the four --control-*/--treated-* values")),
            };
            let d = effect_size(&input)?;
            Report::new(&serde_json::json!({"input": input, "d": d}), format!("d = {d:.4}"))
        }
        AnalyzeCommand::Power(a) => power_report(a),
    }
}

fn dispatch(command: &Command, cfg: &mut RunConfig, prov: &mut Provenance) -> anyhow::Result<Report> {
    match command {
        Command::Generate { out } => {
            let log = generate_synthetic_log(&cfg.synthetic)?;
            let path = out_path(cfg, out, "log.jsonl");
            ensure_parent(&path)?;
            write_event_log(&log, &path)?;
            prov.output(&path)?;
            let text = format!("{} events -> {}", log.len(), path.display());
            Report::new(
                &serde_json::json!({"path": path, "n_events": log.len(), "content_sha256": log.content_hash()}),
                text,
            )
        }
        Command::Validate { log } => {
            let corpus = Corpus::new(load_log(log, cfg, prov)?);
            let s = LogSummary::new(&corpus);
            Report::new(&s, s.text())
        }
        Command::Extract { log, out } => {
            let corpus = Corpus::new(load_log(log, cfg, prov)?);
            let (_, splits) = stages::split(cfg, &corpus)?;
            let set = build_training_samples(&corpus, &splits.train, cfg.seed);
            let path = out_path(cfg, out, "samples.jsonl");
            ensure_parent(&path)?;
            let header = SampleFileHeader::new(cfg.seed, corpus.log(), splits.train.len(), &set);
            write_samples(&path, &header, &set)?;
            prov.output(&path)?;
            let text = format!(
                "{} samples ({} positive) from {} training initiations -> {}",
                set.samples.len(),
                set.n_positive(),
                splits.train.len(),
                path.display()
            );
            Report::new(&header, text)
        }
        Command::Train { log, kind, out } => {
            let corpus = Corpus::new(load_log(log, cfg, prov)?);
            let (_, splits) = stages::split(cfg, &corpus)?;
            let kind = kind.unwrap_or(cfg.model.kind);
            let trained = stages::train(cfg, &corpus, kind, &splits.train)?;
            let path = out_path(cfg, out, "model.bin");
            ensure_parent(&path)?;
            trained.model.save(&path)?;
            prov.output(&path)?;
            let summary = serde_json::json!({
                "model": kind.to_string(),
                "path": path,
                "samples": trained.samples,
                "trace": trained.trace,
            });
            let best = trained.trace.as_ref().map(|t| {
                format!(
                    ", best epoch {} (hold-out loss {:.4})",
                    t.best_epoch, t.holdout_loss[t.best_epoch]
                )
            });
            let text = format!(
                "{kind} trained on {} samples{} -> {}",
                trained.samples.n_samples,
                best.unwrap_or_default(),
                path.display()
            );
            Report::new(&summary, text)
        }
        Command::Evaluate { log, model } => {
            let corpus = Corpus::new(load_log(log, cfg, prov)?);
            let model = load_model(model, cfg, prov)?;
            let (spec, splits) = stages::split(cfg, &corpus)?;
            let metrics = stages::evaluate(cfg, &corpus, &model, &spec, &splits)?;
            let path = cfg.output_dir.join("metrics.json");
            write_json(&path, &metrics)?;
            prov.output(&path)?;
            Report::new(&metrics, metrics.table())
        }
        Command::Coverage { log, model, at } => {
            let corpus = Corpus::new(load_log(log, cfg, prov)?);
            let model = load_model(model, cfg, prov)?;
            let t = match at {
                Some(t) => *t,
                None => stages::split(cfg, &corpus)?.0.train_end_ts + recengine_core::evaluation::COVERAGE_OFFSET_MS,
            };
            let fx = recengine_core::features::FeatureExtractor::new(&corpus, &model.features)?;
            let report = recengine_core::evaluation::coverage_eval(
                &model,
                &fx,
                t,
                &recengine_core::evaluation::CoverageConfig {
                    n_authors: cfg.evaluation.coverage_authors,
                    k: cfg.evaluation.k,
                    seed: cfg.seed,
                },
            )?;
            let text = format!(
                "{}: |R| = {}, %Unique = {:.2}%, MMST = {:.1} weeks, siloed ratio = {}",
                model.kind,
                report.r_size,
                100.0 * report.pct_unique,
                report.mmst_weeks,
                report.siloed_ratio.map_or("n/a".into(), |r| format!("{r:.2}"))
            );
            Report::new(&report, text)
        }
        Command::Recommend {
            log,
            model,
            participants,
            batch_id,
            out,
        } => {
            if let Some(id) = batch_id {
                cfg.batch.batch_id = id.clone();
                cfg.batch.validate().map_err(|e| usage(e.to_string()))?;
                prov.config = cfg.clone();
                prov.config_sha256 = cfg.sha256();
            }
            let corpus = Corpus::new(load_log(log, cfg, prov)?);
            let model = load_model(model, cfg, prov)?;
            let people = match participants {
                Some(p) => {
                    must_exist("participants", p)?;
                    prov.input(p)?;
                    Some(stages::read_participants(p)?)
                }
                None => None,
            };
            let t = stages::recommend_at(cfg, corpus.log())?;
            let dir = out
                .clone()
                .unwrap_or_else(|| cfg.output_dir.join("batches").join(&cfg.batch.batch_id));
            let summary = stages::recommend(cfg, &corpus, &model, people, t, &dir)?;
            prov.output(&dir)?;
            let text = format!(
                "batch {}: {} participants, {} distinct sites, most-used site in {} sets -> {}",
                summary.batch_id,
                summary.n_participants,
                summary.n_sites,
                summary.max_site_count,
                dir.display()
            );
            Report::new(&summary, text)
        }
        Command::Analyze { command } => analyze(command, cfg, prov),
        Command::Power(a) => power_report(a),
        Command::Pipeline => pipeline(cfg, prov),
    }
}

/// Fixed file names under the output directory so repeated runs are comparable.
fn pipeline(cfg: &RunConfig, prov: &mut Provenance) -> anyhow::Result<Report> {
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let log = match &cfg.paths.log {
        Some(p) => {
            prov.input(p)?;
            parse_event_log(p)?
        }
        None => {
            let log = generate_synthetic_log(&cfg.synthetic)?;
            let p = out.join("log.jsonl");
            write_event_log(&log, &p)?;
            prov.output(&p)?;
            log
        }
    };
    let corpus = Corpus::new(log);
    let (spec, splits) = stages::split(cfg, &corpus)?;
    let trained = stages::train(cfg, &corpus, cfg.model.kind, &splits.train)?;
    let model_path = out.join("model.bin");
    trained.model.save(&model_path)?;
    prov.output(&model_path)?;
    let training_path = out.join("training.json");
    write_json(
        &training_path,
        &serde_json::json!({"model": cfg.model.kind.to_string(), "samples": trained.samples, "trace": trained.trace}),
    )?;
    prov.output(&training_path)?;
    let metrics = stages::evaluate(cfg, &corpus, &trained.model, &spec, &splits)?;
    let metrics_path = out.join("metrics.json");
    write_json(&metrics_path, &metrics)?;
    prov.output(&metrics_path)?;
    let t = stages::recommend_at(cfg, corpus.log())?;
    let batch_dir = out.join("batches").join(&cfg.batch.batch_id);
    let batch = stages::recommend(cfg, &corpus, &trained.model, None, t, &batch_dir)?;
    prov.output(&batch_dir)?;
    let text = format!(
        "{}\nbatch {}: {} participants, {} distinct sites -> {}",
        metrics.table().trim_end(),
        batch.batch_id,
        batch.n_participants,
        batch.n_sites,
        batch_dir.display()
    );
    Report::new(&serde_json::json!({"metrics": metrics, "batch": batch}), text)
}
