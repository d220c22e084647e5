//! `ballpiston` command-line driver.
//!
//! Exit codes: 0 success, 1 configuration error, 2 parameter outside its
//! domain, 3 numerical failure.

mod commands;
mod options;

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use ballpiston::error::ErrorCategory;
use ballpiston::geometry::reference_rho;
use ballpiston::sampling::Seed;
use clap::Parser;
use serde_json::{json, Value};

use commands::{Body, Outcome};
use options::{merge, read_config, Cli, Command, Common, Format};

pub const OUTPUT_DIR_VAR: &str = "BALLPISTON_OUTPUT_DIR";

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Domain(String),
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Domain(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Domain(m) => write!(f, "domain error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<ballpiston::Error> for CliError {
    fn from(e: ballpiston::Error) -> Self {
        match e.category() {
            ErrorCategory::Domain => CliError::Domain(e.to_string()),
            ErrorCategory::Numerical => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

fn destination(common: &Common, command: &str, format: Format) -> Option<PathBuf> {
    if let Some(p) = &common.output {
        return Some(p.clone());
    }
    let dir = std::env::var_os(OUTPUT_DIR_VAR)?;
    let ext = match format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    Some(PathBuf::from(dir).join(format!("{command}.{ext}")))
}

fn render(command: &str, seed: Option<u64>, rho: f64, outcome: Outcome) -> Vec<u8> {
    let meta = json!({
        "version": concat!("ballpiston ", env!("CARGO_PKG_VERSION")),
        "command": command,
        "seed": seed,
        "rho": rho,
        "config": outcome.settings,
    });
    match outcome.body {
        Body::Csv(body) => {
            let mut out = Vec::new();
            for (k, v) in meta.as_object().unwrap() {
                let _ = writeln!(out, "# {k}: {}", v.as_str().map(str::to_owned).unwrap_or_else(|| v.to_string()));
            }
            out.extend(body);
            out
        }
        Body::Json(v) => {
            // single records keep their fields at top level
            let doc = match v {
                Value::Object(mut m) => {
                    m.insert("meta".into(), meta);
                    Value::Object(m)
                }
                rows => json!({ "meta": meta, "rows": rows }),
            };
            let mut out = serde_json::to_vec_pretty(&doc).expect("json");
            out.push(b'\n');
            out
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.common.config {
        Some(path) => read_config(path)?,
        None => toml::Table::new(),
    };
    let common = merge(&cli.common, &file)?;
    let format = common.format.unwrap_or(Format::Csv);
    let rho = common.rho.unwrap_or_else(reference_rho);
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let name = cli.command.name();
    let seed = match (common.seed, cli.command.is_stochastic()) {
        (Some(s), _) => Some(Seed(s)),
        (None, true) => return Err(CliError::Config(format!("{name} needs --seed"))),
        (None, false) => None,
    };
    let outcome = match cli.command {
        Command::Geometry(a) => commands::geometry(merge(&a, &file)?, rho, format),
        Command::Mft(a) => commands::mft(merge(&a, &file)?, rho, seed.unwrap(), format),
        Command::CondMft(a) => commands::cond_mft(merge(&a, &file)?, rho, seed.unwrap(), format),
        Command::PhiScan(a) => commands::phi(merge(&a, &file)?, rho, seed.unwrap(), format),
        Command::Relax(a) => commands::relax(merge(&a, &file)?, rho, seed.unwrap(), format),
        Command::Kernel(a) => commands::kernel(merge(&a, &file)?, rho, format),
        Command::Gillespie(a) => commands::jump_path(merge(&a, &file)?, rho, seed.unwrap(), format),
        Command::Master(a) => commands::master(merge(&a, &file)?, rho, format),
    }?;
    let bytes = render(name, common.seed, rho, outcome);
    match destination(&common, name, format) {
        Some(path) => std::fs::write(&path, bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        None => io::stdout().write_all(&bytes)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ballpiston: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
