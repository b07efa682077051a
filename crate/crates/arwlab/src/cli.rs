//! The `arwlab` command line.
//!
//! Settings resolve as flag, then environment (`ARWLAB_OUT` only), then
//! the `--config` JSON file, then built-in defaults. Exit codes: 0 success,
//! 1 configuration error, 2 a run did not stabilize, 3 refused certificate.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

use arwlab_core::df::{RunOptions, RunStatus, TapeLaw, World};
use arwlab_core::kernels::KernelTable1d;
use arwlab_core::lattice::{dyadic_annuli, kernel_triple, Paving, Site, SiteBox};
use arwlab_core::multiscale::{decay_certificate, CertificateError, DensityLadder, RecursionParams, ScaleTable};
use arwlab_core::slt::{couple_walks_to_cloud, CouplingSpec};
use arwlab_core::ssm::{MessageKind, Network, SsmRunOptions};

use crate::config::*;
use crate::experiments::{self, DdSpec, EscapeSpec, FixationSpec, Model, Start};
use crate::output::{self, config_hash, site_cell, ArwSnapshot, OutputSet, SsmSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// CSV data plus a JSON sidecar.
    Csv,
    /// A single JSON file.
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "arwlab", version, about = "Activated random walk and stochastic sandpile experiments")]
pub struct Cli {
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Trials per estimate.
    #[arg(long, global = true)]
    pub trials: Option<u64>,
    /// Worker threads; all available cores by default.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory (env ARWLAB_OUT).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// JSON file with settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Store wall time in the JSON output. Outputs then differ run to run.
    #[arg(long, global = true)]
    pub record_runtime: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Kernel boxes of one tile and dyadic annuli.
    Geometry(GeometryArgs),
    /// Stabilize one configuration and write a snapshot.
    Stabilize(StabilizeArgs),
    /// Estimate the probability that some particle reaches the box boundary.
    EstimateEscape(EscapeArgs),
    /// Tails of the number of changes at the origin.
    Fixation(FixationArgs),
    /// Driven-dissipative box: insert, stabilize, record.
    Dd(DdArgs),
    /// Replay the multiscale recursion and certify decay.
    Recursion(RecursionArgs),
    /// Couple walk endpoints to a Poisson cloud with soft local times.
    SltDemo(SltArgs),
    /// Tabulate the continuous-time walk kernel.
    KernelTable(KernelArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GeometryArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub side: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ring: Option<u64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<Vec<i64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub i0: Option<u32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub i_max: Option<u32>,
}

#[derive(Debug, Args, Serialize)]
pub struct StabilizeArgs {
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelName>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<u64>,
    /// Initial particles as inline JSON, e.g. `[{"site":[0],"count":2}]`.
    #[arg(long)]
    #[serde(skip)]
    pub initial: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyName>,
}

#[derive(Debug, Args, Serialize)]
pub struct EscapeArgs {
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelName>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub box_side: Option<u64>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<StartName>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyName>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct FixationArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_ladder: Option<Vec<u64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_grid: Option<Vec<u64>>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rates: Option<RatesName>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct DdArgs {
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelName>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub insertions: Option<u64>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyName>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct RecursionArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l0: Option<u64>,
    /// Exponent as `num/den`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<u32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c3: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c4: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kbar: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ln_p_kbar: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeta0: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct SltArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeta_prime: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guard: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cloud_height: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct KernelArgs {
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<u64>,
}

#[derive(Debug)]
pub enum Failure {
    Config(String),
    NonStabilized(String),
    Refused(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::NonStabilized(_) => 2,
            Failure::Refused(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::NonStabilized(m) | Failure::Refused(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<output::OutputError> for Failure {
    fn from(e: output::OutputError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<experiments::ExperimentError> for Failure {
    fn from(e: experiments::ExperimentError) -> Self {
        Failure::Config(e.to_string())
    }
}

/// Settings shared by every subcommand after resolution.
struct Session {
    out: PathBuf,
    format: Format,
    record_runtime: bool,
    file: Map<String, Value>,
    seed: Option<u64>,
    trials: Option<u64>,
}

impl Session {
    fn new(cli: &Cli) -> Result<Self, Failure> {
        let mut file = match &cli.config {
            None => Map::new(),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
                if text.trim().is_empty() {
                    Map::new()
                } else {
                    match serde_json::from_str(&text) {
                        Ok(Value::Object(m)) => m,
                        Ok(_) => return Err(Failure::Config("config file must hold a JSON object".into())),
                        Err(e) => return Err(Failure::Config(format!("{}: {e}", path.display()))),
                    }
                }
            }
        };
        let file_out = file.remove("out");
        let file_jobs = file.remove("jobs");
        let file_format = file.remove("format");
        let out = match (&cli.out, std::env::var_os("ARWLAB_OUT"), file_out) {
            (Some(p), _, _) => p.clone(),
            (None, Some(env), _) => PathBuf::from(env),
            (None, None, Some(Value::String(s))) => PathBuf::from(s),
            (None, None, Some(_)) => return Err(Failure::Config("out must be a string".into())),
            (None, None, None) => PathBuf::from("out"),
        };
        let format = match (cli.format, file_format) {
            (Some(f), _) => f,
            (None, Some(v)) => serde_json::from_value(v).map_err(|e| Failure::Config(format!("format: {e}")))?,
            (None, None) => Format::Csv,
        };
        let jobs = match (cli.jobs, file_jobs) {
            (Some(j), _) => Some(j),
            (None, Some(v)) => Some(serde_json::from_value(v).map_err(|e| Failure::Config(format!("jobs: {e}")))?),
            (None, None) => None,
        };
        if let Some(j) = jobs {
            if j == 0 {
                return Err(Failure::Config("jobs must be positive".into()));
            }
            // a second call in the same process keeps the first pool
            let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
        }
        Ok(Self { out, format, record_runtime: cli.record_runtime, file, seed: cli.seed, trials: cli.trials })
    }

    /// File settings overlaid with flag overrides, then defaults.
    /// `--seed` and `--trials` apply only to subcommands that take them.
    fn resolve<C: DeserializeOwned + Serialize + Default>(&self, overrides: &impl Serialize) -> Result<C, Failure> {
        let mut map = self.file.clone();
        let known = serde_json::to_value(C::default()).map_err(|e| Failure::Config(e.to_string()))?;
        for (key, v) in [("seed", self.seed), ("trials", self.trials)] {
            if let (Some(v), Some(_)) = (v, known.get(key)) {
                map.insert(key.into(), json!(v));
            }
        }
        if let Value::Object(o) = serde_json::to_value(overrides).map_err(|e| Failure::Config(e.to_string()))? {
            map.extend(o);
        }
        serde_json::from_value(Value::Object(map)).map_err(|e| Failure::Config(format!("config: {e}")))
    }

    fn outputs<C: Serialize>(&self, experiment: &str, config: &C, started: Instant) -> Result<OutputSet, Failure> {
        let hash = config_hash(config)?;
        let runtime = self.record_runtime.then(|| started.elapsed().as_secs_f64());
        Ok(OutputSet::new(&self.out, experiment, hash).with_runtime(runtime))
    }
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

pub fn run(cli: Cli) -> ExitCode {
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("arwlab: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let session = Session::new(cli)?;
    let started = Instant::now();
    match &cli.command {
        Command::Geometry(a) => geometry(&session, session.resolve(a)?, started),
        Command::Stabilize(a) => {
            let mut s = session;
            if let Some(inline) = &a.initial {
                let v: Value = serde_json::from_str(inline).map_err(|e| Failure::Config(format!("--initial: {e}")))?;
                s.file.insert("initial".into(), v);
            }
            let cfg = s.resolve(a)?;
            stabilize(&s, cfg, started)
        }
        Command::EstimateEscape(a) => estimate_escape(&session, session.resolve(a)?, started),
        Command::Fixation(a) => fixation(&session, session.resolve(a)?, started),
        Command::Dd(a) => dd(&session, session.resolve(a)?, started),
        Command::Recursion(a) => recursion(&session, session.resolve(a)?, started),
        Command::SltDemo(a) => slt_demo(&session, session.resolve(a)?, started),
        Command::KernelTable(a) => kernel_table(&session, session.resolve(a)?, started),
    }
}

fn geometry(s: &Session, cfg: GeometryConfig, started: Instant) -> Result<(), Failure> {
    let index = match &cfg.index {
        Some(i) => site(i, cfg.d)?,
        None => Site::new(&vec![0; cfg.d]).map_err(|e| Failure::Config(e.to_string()))?,
    };
    let triple = kernel_triple(cfg.side, cfg.ring, &index).map_err(|e| Failure::Config(e.to_string()))?;
    let annuli = dyadic_annuli(cfg.i0, cfg.i_max).map_err(|e| Failure::Config(e.to_string()))?;
    let paving = Paving::new(cfg.side, Site::origin(cfg.d)).map_err(|e| Failure::Config(e.to_string()))?;
    let half = paving.half_kernel(&index);
    let ball_volume = |r: u64| (2 * r + 1).checked_pow(cfg.d as u32);
    let mut rows = Vec::new();
    for (name, b) in [("C0", triple.outer), ("C1", triple.middle), ("C2", triple.inner)].into_iter().chain(half.map(|h| ("half_kernel", h))) {
        rows.push(vec![name.to_string(), String::new(), String::new(), site_cell(&b.lower()), b.side(0).to_string(), b.volume().to_string()]);
    }
    let mut annulus_json = Vec::new();
    for a in &annuli {
        let vol = match (ball_volume(a.outer), a.inner.map(ball_volume)) {
            (Some(o), None) => Some(o),
            (Some(o), Some(Some(i))) => Some(o - i),
            _ => None,
        };
        let vol_cell = vol.map_or_else(String::new, |v| v.to_string());
        rows.push(vec![
            format!("annulus_{}", a.index),
            a.inner.map_or_else(String::new, |r| r.to_string()),
            a.outer.to_string(),
            String::new(),
            String::new(),
            vol_cell,
        ]);
        annulus_json.push(json!({"index": a.index, "inner": a.inner, "outer": a.outer, "sites": vol}));
    }
    let boxj = |b: &SiteBox| serde_json::to_value(BoxConfig::from_box(b)).expect("plain data");
    let body = json!({
        "kernel_boxes": {"outer": boxj(&triple.outer), "middle": boxj(&triple.middle), "inner": boxj(&triple.inner)},
        "half_kernel": half.as_ref().map(boxj),
        "annuli": annulus_json,
    });
    let out = s.outputs("geometry", &cfg, started)?;
    let mut paths = Vec::new();
    if s.format == Format::Csv {
        paths.push(out.write_csv(&["piece", "inner_radius", "outer_radius", "lower", "side", "sites"], &rows)?);
    }
    paths.push(out.write_json(&cfg, &body)?);
    report(&paths);
    Ok(())
}

fn stabilize(s: &Session, cfg: StabilizeConfig, started: Instant) -> Result<(), Failure> {
    let initial = cfg.particles()?;
    let domain = cfg.domain.as_ref().map(|b| b.to_box(cfg.d)).transpose()?;
    if domain.is_none() && cfg.budget.is_none() {
        return Err(Failure::Config("an unbounded lattice needs a step budget".into()));
    }
    let policy = cfg.policy.policy(cfg.seed);
    let model = model(cfg.model, cfg.lambda, cfg.kappa)?;
    let (stable, body) = match model {
        Model::Arw { lambda } => {
            let tapes = cfg.tapes(TapeLaw::Arw { lambda, d: cfg.d })?;
            let mut w = World::new(initial, tapes, domain);
            let status = w
                .run(policy, &RunOptions { budget: cfg.budget, escape: None })
                .map_err(|e| Failure::Config(e.to_string()))?;
            let stable = status == RunStatus::Stable;
            let snap = ArwSnapshot {
                stable,
                particles: w.config.total_particles(),
                config: output::config_entries(&w.config),
                odometer: output::odometer_entries(&w.odometer),
                dissipated: w.dissipated,
                steps: w.steps,
            };
            (stable, serde_json::to_value(snap))
        }
        Model::Ssm { kappa } => {
            let tapes = cfg.tapes(TapeLaw::Directions { d: cfg.d })?;
            if initial.iter().any(|(_, v)| *v == arwlab_core::arw::SiteValue::Sleeping) {
                return Err(Failure::Config("sandpile grains cannot sleep".into()));
            }
            let msgs: Vec<(Site, MessageKind)> = initial
                .iter()
                .flat_map(|(x, v)| (0..v.particles()).map(move |_| (*x, MessageKind::Ordinary)))
                .collect();
            let mut net = Network::new(kappa, tapes, domain).map_err(|e| Failure::Config(e.to_string()))?;
            let status = net
                .run(&msgs, policy, &SsmRunOptions { budget: cfg.budget, escape: None })
                .map_err(|e| Failure::Config(e.to_string()))?;
            let stable = status == RunStatus::Stable;
            let snap = SsmSnapshot {
                stable,
                retained: net.total_retained(),
                processors: output::processor_entries(net.states(), kappa),
                dissipated: net.dissipated,
                processed: net.processed,
            };
            (stable, serde_json::to_value(snap))
        }
    };
    let body = body.map_err(|e| Failure::Config(e.to_string()))?;
    let out = s.outputs("stabilize", &cfg, started)?;
    report(&[out.write_json(&cfg, &body)?]);
    if stable {
        Ok(())
    } else {
        Err(Failure::NonStabilized("step budget exhausted before stabilization".into()))
    }
}

fn estimate_escape(s: &Session, cfg: EscapeConfig, started: Instant) -> Result<(), Failure> {
    if cfg.trials == 0 {
        return Err(Failure::Config("trials must be positive".into()));
    }
    let escape_box = cfg.escape_box()?;
    let start = match cfg.start {
        StartName::Poisson => {
            let region = match &cfg.region {
                Some(r) => r.to_box(cfg.d)?,
                None => escape_box.shrink(1).ok_or_else(|| Failure::Config("escape box has no interior".into()))?,
            };
            Start::Poisson { zeta: cfg.zeta, region }
        }
        StartName::Fixed => Start::Fixed(cfg.sites.iter().map(|x| site(x, cfg.d)).collect::<Result<_, _>>()?),
    };
    let spec = EscapeSpec {
        model: model(cfg.model, cfg.lambda, cfg.kappa)?,
        start,
        escape_box,
        trials: cfg.trials,
        seed: cfg.seed,
        policy: cfg.policy.policy(cfg.seed),
        budget: cfg.budget,
    };
    let rep = experiments::estimate_escape(&spec)?;
    let out = s.outputs("estimate-escape", &cfg, started)?;
    let mut paths = Vec::new();
    match s.format {
        Format::Csv => {
            let rows: Vec<Vec<String>> = rep
                .records
                .iter()
                .map(|r| vec![r.trial.to_string(), r.seed.to_string(), r.particles.to_string(), outcome_cell(r.outcome)])
                .collect();
            paths.push(out.write_csv(&["trial", "seed", "particles", "outcome"], &rows)?);
            paths.push(out.write_json(&cfg, &rep)?);
        }
        Format::Json => {
            let mut body = serde_json::to_value(&rep).map_err(|e| Failure::Config(e.to_string()))?;
            body["records"] = serde_json::to_value(&rep.records).map_err(|e| Failure::Config(e.to_string()))?;
            paths.push(out.write_json(&cfg, &body)?);
        }
    }
    report(&paths);
    println!(
        "escape estimate {:.6} [{:.6}, {:.6}] from {} trials ({} flagged)",
        rep.estimate, rep.interval[0], rep.interval[1], rep.trials, rep.flagged
    );
    Ok(())
}

fn outcome_cell(o: experiments::Outcome) -> String {
    serde_json::to_value(o).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

fn fixation(s: &Session, cfg: FixationConfig, started: Instant) -> Result<(), Failure> {
    let spec = FixationSpec {
        d: cfg.d,
        zeta: cfg.zeta,
        lambda: cfg.lambda,
        m_ladder: cfg.m_ladder.clone(),
        horizon: cfg.horizon,
        l_grid: cfg.l_grid.clone(),
        trials: cfg.trials,
        seed: cfg.seed,
        rates: cfg.rates.convention(),
        budget: cfg.budget,
    };
    let table = experiments::fixation_tail(&spec)?;
    let out = s.outputs("fixation", &cfg, started)?;
    let body = json!({"trials": cfg.trials, "flagged": table.flagged, "cells": table.cells});
    let mut paths = Vec::new();
    if s.format == Format::Csv {
        let rows: Vec<Vec<String>> = table
            .cells
            .iter()
            .map(|c| vec![c.m.to_string(), c.l.to_string(), c.changes_tail.to_string(), c.activity_tail.to_string()])
            .collect();
        paths.push(out.write_csv(&["m", "l", "changes_tail", "activity_tail"], &rows)?);
    }
    paths.push(out.write_json(&cfg, &body)?);
    report(&paths);
    Ok(())
}

fn dd(s: &Session, cfg: DdConfig, started: Instant) -> Result<(), Failure> {
    if cfg.d == 0 || cfg.d > arwlab_core::lattice::MAX_DIM {
        return Err(Failure::Config("unsupported dimension".into()));
    }
    let spec = DdSpec {
        n: cfg.n,
        d: cfg.d,
        model: model(cfg.model, cfg.lambda, cfg.kappa)?,
        insertions: cfg.insertions,
        seed: cfg.seed,
        policy: cfg.policy.policy(cfg.seed),
        budget: cfg.budget,
    };
    let st = experiments::driven_dissipation(&spec)?;
    let out = s.outputs("dd", &cfg, started)?;
    let body = json!({"aborted": st.aborted, "curve": st.curve});
    let mut paths = Vec::new();
    if s.format == Format::Csv {
        let rows: Vec<Vec<String>> = st
            .curve
            .iter()
            .map(|p| vec![p.inserted.to_string(), p.remaining.to_string(), p.dissipated.to_string()])
            .collect();
        paths.push(out.write_csv(&["inserted", "remaining", "dissipated"], &rows)?);
        paths.push(out.write_json(&cfg, &json!({"aborted": st.aborted, "points": st.curve.len()}))?);
    } else {
        paths.push(out.write_json(&cfg, &body)?);
    }
    report(&paths);
    if st.aborted {
        return Err(Failure::NonStabilized(format!("budget exhausted at insertion {}", st.curve.len() + 1)));
    }
    Ok(())
}

fn recursion(s: &Session, cfg: RecursionConfig, started: Instant) -> Result<(), Failure> {
    if cfg.k_max < cfg.kbar {
        return Err(Failure::Config(format!("k_max = {} is below kbar = {}", cfg.k_max, cfg.kbar)));
    }
    let table = ScaleTable::new(cfg.l0, gamma(&cfg.gamma)?, cfg.k_max).map_err(|e| Failure::Config(e.to_string()))?;
    let ladder = DensityLadder::new(rational(&cfg.zeta0)?, cfg.k_max).map_err(|e| Failure::Config(e.to_string()))?;
    let params = RecursionParams { d: cfg.d, c3: cfg.c3, c4: cfg.c4 };
    let ln_p = cfg.ln_p_kbar.unwrap_or_else(|| -table.ln_length(cfg.kbar).powi(2));
    let (rows, refusal) = match decay_certificate(cfg.kbar, ln_p, &params, &table, cfg.k_max) {
        Ok(rows) => (rows, None),
        Err(CertificateError::Refused { k, reason, rows }) => (rows, Some((k, reason))),
        Err(CertificateError::Input(e)) => return Err(Failure::Config(e.to_string())),
    };
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.k.to_string(),
                table.length(r.k).to_string(),
                table.ring(r.k).map_or_else(String::new, |x| x.to_string()),
                ladder.zeta[r.k].to_string(),
                r.ln_p.to_string(),
                r.ln_threshold.to_string(),
                r.margin.to_string(),
                r.induction_slack.to_string(),
            ]
        })
        .collect();
    let body = json!({
        "granted": refusal.is_none(),
        "refused_at": refusal.map(|(k, _)| k),
        "reason": refusal.map(|(_, r)| format!("{r:?}")),
        "rows": rows.iter().zip(&csv_rows).map(|(r, c)| json!({
            "k": r.k, "L_k": c[1], "R_k": c[2], "zeta_k": c[3],
            "ln_p": r.ln_p, "ln_threshold": r.ln_threshold, "margin": r.margin, "induction_slack": r.induction_slack,
        })).collect::<Vec<_>>(),
    });
    let out = s.outputs("recursion", &cfg, started)?;
    let mut paths = Vec::new();
    if s.format == Format::Csv {
        paths.push(out.write_csv(
            &["k", "L_k", "R_k", "zeta_k", "ln_p", "ln_threshold", "margin", "induction_slack"],
            &csv_rows,
        )?);
    }
    paths.push(out.write_json(&cfg, &body)?);
    report(&paths);
    match refusal {
        None => {
            println!("certificate granted for k = {}..={}", cfg.kbar, cfg.k_max);
            Ok(())
        }
        Some((k, reason)) => Err(Failure::Refused(format!("certificate refused at k = {k} ({reason:?})"))),
    }
}

fn slt_demo(s: &Session, cfg: SltConfig, started: Instant) -> Result<(), Failure> {
    let spec = CouplingSpec {
        starts: cfg.starts.iter().map(|x| site(x, cfg.d)).collect::<Result<_, _>>()?,
        t: cfg.t,
        zeta_prime: cfg.zeta_prime,
        domain: cfg.domain.to_box(cfg.d)?,
        window: cfg.window.as_ref().map(|w| w.to_box(cfg.d)).transpose()?,
        eps: cfg.eps,
        scale: cfg.scale,
        guard: cfg.guard,
        cloud_height: cfg.cloud_height,
        seed: cfg.seed,
    };
    let rep = couple_walks_to_cloud(&spec).map_err(|e| Failure::Config(e.to_string()))?;
    let picks: Vec<Value> = rep.picks.iter().map(|(x, v)| json!({"site": x.coords(), "v": v})).collect();
    let body = json!({
        "g_max": rep.g_max,
        "zeta_prime": rep.zeta_prime,
        "dominated": rep.dominated,
        "cloud_size": rep.cloud_size,
        "cloud_in_domain": rep.cloud_in_domain,
        "window": BoxConfig::from_box(&rep.window),
        "picks": picks,
    });
    let out = s.outputs("slt-demo", &cfg, started)?;
    let mut paths = Vec::new();
    if s.format == Format::Csv {
        let rows: Vec<Vec<String>> = rep
            .picks
            .iter()
            .enumerate()
            .map(|(j, (x, v))| vec![j.to_string(), site_cell(x), v.to_string(), spec.domain.contains(x).to_string()])
            .collect();
        paths.push(out.write_csv(&["walker", "site", "v", "in_domain"], &rows)?);
    }
    paths.push(out.write_json(&cfg, &body)?);
    report(&paths);
    println!("max G over domain {:.6}, zeta' {:.6}, dominated {}", rep.g_max, rep.zeta_prime, rep.dominated);
    Ok(())
}

fn kernel_table(s: &Session, cfg: KernelConfig, started: Instant) -> Result<(), Failure> {
    if cfg.d == 0 || cfg.d > arwlab_core::lattice::MAX_DIM {
        return Err(Failure::Config("unsupported dimension".into()));
    }
    if cfg.t.iter().any(|t| !(*t >= 0.0 && t.is_finite())) || !(cfg.eps > 0.0 && cfg.eps < 1.0) {
        return Err(Failure::Config("times must be nonnegative and eps in (0, 1)".into()));
    }
    let mut rows = Vec::new();
    for &t in &cfg.t {
        let table = KernelTable1d::new(t, cfg.eps);
        let r = cfg.radius.map_or(table.radius(), |r| r.min(table.radius())) as i64;
        let window = SiteBox::cube(Site::splat(cfg.d, -r), (2 * r + 1) as u64).map_err(|e| Failure::Config(e.to_string()))?;
        for x in window.sites() {
            let mut row = vec![t.to_string()];
            row.extend(x.coords().iter().map(i64::to_string));
            row.push(table.get_d(&x).to_string());
            rows.push(row);
        }
    }
    let mut header = vec!["t".to_string()];
    header.extend((1..=cfg.d).map(|a| format!("x{a}")));
    header.push("p".into());
    let out = s.outputs("kernel-table", &cfg, started)?;
    let path = match s.format {
        Format::Csv => out.write_csv(&header.iter().map(String::as_str).collect::<Vec<_>>(), &rows)?,
        Format::Json => out.write_json(&cfg, &json!({"columns": header, "rows": rows}))?,
    };
    report(&[path]);
    Ok(())
}
