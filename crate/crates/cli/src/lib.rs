//! The `agentguard` command line.
//!
//! Exit codes: 0 ok, 1 usage, 2 configuration error, 3 runtime error,
//! 4 threshold violation present at exit.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use agentguard_core::checker::{check, CheckSettings, VerificationResult};
use agentguard_core::config::{GuardConfig, QueueFullPolicy};
use agentguard_core::engine::{any_violation, replay_trace, Alert, CycleReport, Guard, ReplayOptions, Sink, Speed, BUILTIN_COMMANDS};
use agentguard_core::mdp::ModelSnapshot;
use agentguard_core::pctl::Property;
use agentguard_core::prism::{export_prism, import_prism};
use agentguard_core::sim::{Scenario, Simulator};
use agentguard_server::{Api, ServerOptions, DEFAULT_LISTEN};
use clap::{Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_VIOLATION: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "agentguard", version, about = "Runtime probabilistic assurance for agent workflows")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Monitor a live agent through the HTTP API until interrupted.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "AGENTGUARD_LISTEN", default_value = DEFAULT_LISTEN)]
        listen: String,
        /// Append every processed event to this JSONL trace.
        #[arg(long)]
        trace_log: Option<PathBuf>,
    },
    /// Reprocess a recorded JSONL trace and print the final results.
    Replay {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        /// Write the final model in PRISM language.
        #[arg(long)]
        emit_prism: Option<PathBuf>,
        /// Skip malformed lines instead of aborting.
        #[arg(long)]
        lenient: bool,
        /// Replay at recorded speed divided by this factor.
        #[arg(long)]
        speed: Option<f64>,
        /// Print the results of every cycle, not only the last.
        #[arg(long)]
        each_cycle: bool,
    },
    /// Check one property against a saved model.
    Check {
        /// Snapshot JSON or PRISM-language file.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        property: String,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Write a synthetic JSONL trace to stdout.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        events: u64,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// An error carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

fn fail(code: i32) -> impl FnOnce(anyhow::Error) -> Failure {
    move |error| Failure { code, error }
}

trait Code<T> {
    fn code(self, code: i32) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Code<T> for Result<T, E> {
    fn code(self, code: i32) -> Result<T, Failure> {
        self.map_err(|e| fail(code)(e.into()))
    }
}

/// Parses `args` and runs the command, returning the exit code.
pub fn main_with(args: impl IntoIterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    // not locked: the run sink prints from the analyzer thread
    match execute(cli.command, &mut io::stdout()) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            f.code
        }
    }
}

pub fn execute(cmd: Cmd, out: &mut dyn Write) -> Result<i32, Failure> {
    match cmd {
        Cmd::Run { config, listen, trace_log } => run(&config, &listen, trace_log.as_deref()),
        Cmd::Replay {
            config,
            trace,
            emit_prism,
            lenient,
            speed,
            each_cycle,
        } => {
            let opts = ReplayOptions {
                strict: !lenient,
                speed: speed.map_or(Speed::AsFastAsPossible, Speed::Multiplier),
            };
            replay(&config, &trace, emit_prism.as_deref(), opts, each_cycle, out)
        }
        Cmd::Check { model, property, epsilon } => check_model(&model, &property, epsilon, out),
        Cmd::Simulate { scenario, events, seed } => simulate(&scenario, events, seed, out),
    }
}

fn load_config(path: &Path) -> Result<GuardConfig, Failure> {
    GuardConfig::from_path(path).code(EXIT_CONFIG)
}

/// Registers a logging callback for every custom `on_violation` command so
/// a config can name responses the CLI has no code for.
fn register_logging_actuators(guard: &Guard) {
    let names: Vec<String> = guard
        .config()
        .properties
        .iter()
        .filter_map(|p| p.on_violation.clone())
        .filter(|n| !BUILTIN_COMMANDS.contains(&n.as_str()))
        .collect();
    for name in names {
        let n = name.clone();
        guard.register_actuator(&name, move |d| {
            log::warn!("on_violation `{n}` at revision {}", d.revision);
            Ok(())
        });
    }
}

struct Console<W: Write + Send> {
    out: Mutex<W>,
}

impl<W: Write + Send> Sink for Console<W> {
    fn on_cycle(&self, report: &CycleReport, alerts: &[Alert]) {
        let mut out = self.out.lock().unwrap_or_else(|e| e.into_inner());
        for r in &report.results {
            let _ = writeln!(out, "{}", r.to_json_line());
        }
        let _ = out.flush();
        for a in alerts {
            log::warn!("alert {}: {} = {:?} violates {:?}", a.id, a.property, a.value, a.threshold);
        }
    }
}

fn run(config: &Path, listen: &str, trace_log: Option<&Path>) -> Result<i32, Failure> {
    let cfg = load_config(config)?;
    let guard = Arc::new(Guard::new(cfg));
    register_logging_actuators(&guard);
    if let Some(path) = trace_log {
        let f = File::create(path).code(EXIT_RUNTIME)?;
        guard.set_trace_log(Box::new(BufWriter::new(f)));
    }
    guard.add_sink(Arc::new(Console { out: Mutex::new(io::stdout()) }));
    let api = Api::new(guard.clone(), ServerOptions::default());
    guard.start().code(EXIT_CONFIG)?;
    let rt = tokio::runtime::Runtime::new().code(EXIT_RUNTIME)?;
    let served = rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(listen).await?;
        eprintln!("agentguard listening on http://{}", listener.local_addr()?);
        agentguard_server::serve(api, listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    });
    let report = guard.stop().code(EXIT_RUNTIME)?;
    served.code(EXIT_RUNTIME)?;
    Ok(if report.violation() { EXIT_VIOLATION } else { EXIT_OK })
}

fn replay(
    config: &Path,
    trace: &Path,
    emit_prism: Option<&Path>,
    opts: ReplayOptions,
    each_cycle: bool,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let cfg = load_config(config)?;
    let input = BufReader::new(File::open(trace).code(EXIT_RUNTIME)?);
    let guard = Guard::with_queue_policy(cfg, Some(QueueFullPolicy::Block));
    register_logging_actuators(&guard);
    let lines = Arc::new(Console { out: Mutex::new(Vec::<u8>::new()) });
    if each_cycle {
        guard.add_sink(lines.clone());
    }
    let report = replay_trace(&guard, input, opts).code(EXIT_RUNTIME)?;
    if each_cycle {
        out.write_all(&lines.out.lock().unwrap_or_else(|e| e.into_inner())).code(EXIT_RUNTIME)?;
    } else {
        for r in &report.results {
            writeln!(out, "{}", r.to_json_line()).code(EXIT_RUNTIME)?;
        }
    }
    if let Some(path) = emit_prism {
        let snap = match (&report.snapshot, &report.model) {
            (Some(s), _) => (**s).clone(),
            (None, Some(m)) => m.snapshot(),
            (None, None) => return Err(fail(EXIT_RUNTIME)(anyhow::anyhow!("no model to export"))),
        };
        let text = export_prism(&snap).code(EXIT_RUNTIME)?;
        std::fs::write(path, text).code(EXIT_RUNTIME)?;
    }
    Ok(if report.violation() { EXIT_VIOLATION } else { EXIT_OK })
}

/// Reads a snapshot document, or PRISM text when the file does not start
/// with `{`.
pub fn read_model(path: &Path) -> anyhow::Result<ModelSnapshot> {
    let text = std::fs::read_to_string(path)?;
    if text.trim_start().starts_with('{') {
        Ok(ModelSnapshot::from_json(&text)?)
    } else {
        Ok(import_prism(&text)?)
    }
}

fn check_model(model: &Path, property: &str, epsilon: Option<f64>, out: &mut dyn Write) -> Result<i32, Failure> {
    let prop = Property::parse(property, property).code(EXIT_USAGE)?;
    let snap = read_model(model).code(EXIT_CONFIG)?;
    let mut settings = CheckSettings::default();
    if let Some(e) = epsilon {
        settings.epsilon = e;
    }
    settings.validate().code(EXIT_USAGE)?;
    let result: VerificationResult = check(&snap, &prop, &settings).code(EXIT_RUNTIME)?;
    writeln!(out, "{}", result.to_json_line()).code(EXIT_RUNTIME)?;
    Ok(if any_violation([&result]) { EXIT_VIOLATION } else { EXIT_OK })
}

fn simulate(scenario: &Path, events: u64, seed: Option<u64>, out: &mut dyn Write) -> Result<i32, Failure> {
    let mut sc = Scenario::from_path(scenario).code(EXIT_CONFIG)?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    let mut w = BufWriter::new(out);
    for rec in Simulator::new(&sc).take(events as usize) {
        writeln!(w, "{}", rec.to_json_line()).code(EXIT_RUNTIME)?;
    }
    w.flush().code(EXIT_RUNTIME)?;
    Ok(EXIT_OK)
}
