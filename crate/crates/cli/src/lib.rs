//! The `idtrace` command line.
//!
//! Every command that writes files takes `--out DIR` and finishes by
//! writing `DIR/run.json` ([`manifest::RunManifest`]). Data goes to files,
//! logs go to stderr, and short summaries go to stdout.
//!
//! Exit codes: 0 success, 1 partial failure, 2 usage or configuration error.

pub mod args;
mod commands;
pub mod config;
pub mod manifest;
pub mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use args::Cli;
use args::{Command, RerunArgs};
use config::RunConfig;
use idtrace_core::gateway::BackendKind;
use manifest::{diff_outputs, input_hash, tree_hashes, RunManifest, MANIFEST_FILE, SCHEMA_VERSION};

pub const EXIT_OK: u8 = 0;
pub const EXIT_PARTIAL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

/// A command failure and the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    Usage(anyhow::Error),
    Failed(anyhow::Error),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failed(_) => EXIT_PARTIAL,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            CliError::Usage(e) | CliError::Failed(e) => e,
        }
    }
}

pub(crate) trait ErrorKind<T> {
    fn usage(self) -> Result<T, CliError>;
    fn failed(self) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> ErrorKind<T> for Result<T, E> {
    fn usage(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Usage(e.into()))
    }

    fn failed(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Failed(e.into()))
    }
}

/// What a command that ran to the end reports back.
#[derive(Debug, Default)]
pub(crate) struct Outcome {
    pub failures: Vec<String>,
    pub label: Option<String>,
    pub gateway: Option<serde_json::Value>,
}

pub fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("IDTRACE_LOG", level))
        .format_timestamp(None)
        .try_init();
}

pub fn run(cli: Cli) -> u8 {
    if let Command::Rerun(a) = &cli.command {
        return rerun(a, &cli.global.cache_dir);
    }
    let mut config = match RunConfig::load(cli.global.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_USAGE;
        }
    };
    config.apply_globals(&cli.global);
    execute(cli.command, config)
}

fn execute(command: Command, mut config: RunConfig) -> u8 {
    for p in command.inputs() {
        if !p.exists() {
            eprintln!("error: no such file: {}", p.display());
            return EXIT_USAGE;
        }
    }
    config.apply_command(&command);
    let started_at = chrono::Utc::now();
    let t0 = Instant::now();
    let inputs = match command
        .inputs()
        .into_iter()
        .map(|p| Ok((p.display().to_string(), input_hash(p)?)))
        .collect::<anyhow::Result<_>>()
    {
        Ok(i) => i,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_USAGE;
        }
    };
    let result = commands::dispatch(&command, &config);
    let (code, outcome) = match result {
        Ok(o) if o.failures.is_empty() => (EXIT_OK, o),
        Ok(o) => {
            eprintln!("{} failure(s):", o.failures.len());
            for f in &o.failures {
                eprintln!("  {f}");
            }
            (EXIT_PARTIAL, o)
        }
        Err(e) => {
            eprintln!("error: {:#}", e.error());
            if let CliError::Usage(_) = e {
                return EXIT_USAGE;
            }
            let failures = vec![format!("{:#}", e.error())];
            (e.code(), Outcome { failures, ..Outcome::default() })
        }
    };
    let Some(out) = command.out_dir() else {
        return code;
    };
    if !out.is_dir() {
        return code;
    }
    let manifest = (|| -> anyhow::Result<()> {
        let m = RunManifest {
            schema_version: SCHEMA_VERSION,
            run_id: uuid::Uuid::new_v4().to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.name().to_string(),
            label: outcome.label,
            cwd: std::env::current_dir()?,
            invocation: command.clone(),
            config,
            inputs,
            outputs: tree_hashes(out)?,
            failures: outcome.failures,
            exit_code: code,
            gateway: outcome.gateway,
            started_at: started_at.to_rfc3339(),
            finished_at: chrono::Utc::now().to_rfc3339(),
            elapsed_ms: t0.elapsed().as_millis() as u64,
        };
        m.write(out)
    })();
    match manifest {
        Ok(()) => code,
        Err(e) => {
            eprintln!("error: writing {}: {e:#}", out.join(MANIFEST_FILE).display());
            EXIT_PARTIAL
        }
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Runs a recorded invocation again with the replay backend and reports
/// whether every output came out byte-identical.
fn rerun(a: &RerunArgs, cache_dir: &Option<PathBuf>) -> u8 {
    let m = match RunManifest::load(&a.manifest) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_USAGE;
        }
    };
    let mut config = m.config.clone();
    config.gateway.backend = BackendKind::Replay;
    if let Some(d) = cache_dir {
        config.gateway.cache_dir = Some(absolute(d));
    }
    if config.gateway.cache_dir.is_none() {
        eprintln!("error: the recorded run has no fixture directory; pass --cache-dir");
        return EXIT_USAGE;
    }
    let mut command = m.invocation.clone();
    if matches!(command, Command::Rerun(_) | Command::Report(_)) {
        eprintln!("error: '{}' runs cannot be replayed", m.command);
        return EXIT_USAGE;
    }
    let out = absolute(&a.out);
    command.set_out(out.clone());
    if let Err(e) = std::env::set_current_dir(&m.cwd) {
        eprintln!("error: entering {}: {e}", m.cwd.display());
        return EXIT_USAGE;
    }
    let code = execute(command, config);
    if code == EXIT_USAGE {
        return code;
    }
    let replayed = match RunManifest::load(&out.join(MANIFEST_FILE)) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_PARTIAL;
        }
    };
    let diff = diff_outputs(&m.outputs, &replayed.outputs);
    if diff.is_empty() {
        println!("identical: {} output file(s) match {}", m.outputs.len(), a.manifest.display());
        code
    } else {
        eprintln!("{} output file(s) differ from the recorded run:", diff.len());
        for d in &diff {
            eprintln!("  {d}");
        }
        EXIT_PARTIAL
    }
}
