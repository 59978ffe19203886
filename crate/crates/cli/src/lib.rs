//! Batch front-end: JSON configs in, CSV/JSON results and a run manifest out.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{Map, Value};

pub mod commands;
pub mod config;
pub mod manifest;

use config::{hash_value, Config};
use manifest::{inventory, Check, RunManifest};

/// Failure classes, one per exit code.
#[derive(Clone, Debug, PartialEq)]
pub enum CliError {
    /// Exit 1.
    Io(String),
    /// Exit 2: unreadable, malformed or invalid configuration.
    Config(String),
    /// Exit 3: the surface or a symbol failed its audit.
    Audit(String),
    /// Exit 4: a numerical routine gave up.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Audit(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(m) => write!(f, "io error: {m}"),
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Audit(m) => write!(f, "audit failed: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<smoothlab::Error> for CliError {
    fn from(e: smoothlab::Error) -> Self {
        use smoothlab::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidInput(_)
            | E::GridTooLarge { .. }
            | E::OrderUnavailable { .. }
            | E::ResolutionTooCoarse(_)
            | E::EmptyRegion(_) => CliError::Config(msg),
            E::AuditFailed { .. } | E::SymbolAuditFailed { .. } | E::AuditRequired => CliError::Audit(msg),
            E::NonFiniteSymbol { .. }
            | E::KrylovBreakdown { .. }
            | E::UnitarityLost { .. }
            | E::BoundaryMassExceeded { .. }
            | E::DomainTooSmall { .. }
            | E::NotConverged { .. }
            | E::SubspaceTooSmall { .. }
            | E::IllConditionedGram { .. } => CliError::Numerical(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "smoothlab", version, about = "Local smoothing experiments on degenerate surfaces of revolution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Suppress per-check and eigenvalue output.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Propagate one initial state and evaluate the smoothing functionals.
    Simulate,
    /// Coherent-state frequency sweep.
    Sweep,
    /// Symbol lower-bound scan and dyadic resolvent floors.
    Resolvent,
    /// Low-lying eigenvalues of the per-mode oscillator.
    Oscillator {
        #[arg(long)]
        m: u32,
        /// Comma-separated frequencies.
        #[arg(long, value_delimiter = ',', required = true)]
        eta: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        k: usize,
    },
    /// Weyl-calculus checks for the escape-function pair.
    Symcheck,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::Resolvent => "resolvent",
            Command::Oscillator { .. } => "oscillator",
            Command::Symcheck => "symcheck",
        }
    }
}

/// Files, checks and scalar results accumulated by a command.
pub struct Run {
    out: PathBuf,
    files: Vec<PathBuf>,
    checks: Vec<Check>,
    summary: Map<String, Value>,
}

impl Run {
    fn new(out: &Path) -> Run {
        Run { out: out.to_path_buf(), files: Vec::new(), checks: Vec::new(), summary: Map::new() }
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    pub fn path(&self, rel: &str) -> Result<PathBuf, CliError> {
        let p = self.out.join(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        }
        Ok(p)
    }

    pub fn write_csv<T: Serialize>(&mut self, rel: &str, rows: &[T]) -> Result<(), CliError> {
        let p = self.path(rel)?;
        let mut w = csv::Writer::from_path(&p)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        self.files.push(p);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, v: &T) -> Result<(), CliError> {
        let p = self.path(rel)?;
        let mut text = serde_json::to_string_pretty(v).expect("output serializes");
        text.push('\n');
        std::fs::write(&p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        self.files.push(p);
        Ok(())
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let p = self.path(rel)?;
        std::fs::write(&p, bytes).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        self.files.push(p);
        Ok(())
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn record(&mut self, key: &str, v: impl Serialize) {
        self.summary.insert(key.into(), serde_json::to_value(v).expect("summary serializes"));
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let go = || execute(&cli);
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(go),
            Err(e) => Err(CliError::Config(format!("--threads: {e}"))),
        },
        None => go(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let start = Instant::now();
    let name = cli.command.name();
    let mut config = match (&cli.command, &cli.config) {
        (Command::Oscillator { .. }, None) => None,
        (Command::Oscillator { .. }, Some(_)) => return Err(CliError::Config("oscillator takes inline flags only".into())),
        (_, Some(p)) => Some(Config::load(p)?),
        (_, None) => return Err(CliError::Config(format!("{name} requires --config"))),
    };
    if let (Some(c), Some(s)) = (config.as_mut(), cli.seed) {
        c.seed = s;
    }
    std::fs::create_dir_all(&cli.out).map_err(|e| CliError::Io(format!("{}: {e}", cli.out.display())))?;
    let mut run = Run::new(&cli.out);
    let outcome = match (&cli.command, config.as_mut()) {
        (Command::Oscillator { m, eta, k }, _) => commands::oscillator(&mut run, *m, eta, *k, !cli.quiet),
        (Command::Simulate, Some(c)) => commands::simulate(&mut run, c),
        (Command::Sweep, Some(c)) => commands::sweep(&mut run, c),
        (Command::Resolvent, Some(c)) => commands::resolvent(&mut run, c),
        (Command::Symcheck, Some(c)) => commands::symcheck(&mut run, c),
        _ => unreachable!("config presence checked above"),
    };
    let resolved = match (&cli.command, &config) {
        (Command::Oscillator { m, eta, k }, _) => serde_json::json!({ "m": m, "eta": eta, "k": k }),
        (_, Some(c)) => c.to_value(),
        _ => Value::Null,
    };
    let code = match &outcome {
        Err(e @ (CliError::Config(_) | CliError::Io(_))) => return Err(e.clone()),
        Err(e) => {
            eprintln!("{e}");
            run.record("error", e.to_string());
            e.exit_code()
        }
        Ok(()) if run.checks.iter().all(|c| c.pass) => 0,
        Ok(()) => 4,
    };
    let manifest = RunManifest {
        command: name.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: hash_value(&resolved),
        config: resolved,
        seed: config.as_ref().map_or(0, |c| c.seed),
        checks: run.checks.clone(),
        summary: Value::Object(run.summary.clone()),
        wall_clock_s: start.elapsed().as_secs_f64(),
        outputs: inventory(&run.out, &run.files)?,
        exit_code: code,
    };
    for c in manifest.checks.iter().filter(|_| !cli.quiet) {
        println!("{} {}: {:e} {} {:e}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.relation.symbol(), c.tol);
    }
    if code == 4 && outcome.is_ok() {
        eprintln!("failed checks: {}", manifest.failed_checks().join(", "));
    }
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    let p = cli.out.join("manifest.json");
    std::fs::write(&p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
    Ok(code)
}
