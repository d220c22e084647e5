//! Command-line flags and the optional TOML config file.
//!
//! Every flag can also be given as a key of the same name in the config
//! file. Flags win over file values.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "ballpiston", version, about = "Ball-piston billiard experiments")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Common {
    /// TOML file of defaults; keys are the long flag names
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Output file; without it, `$BALLPISTON_OUTPUT_DIR/<command>.<format>` or stdout
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Required by every stochastic command
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Disc radius (default: the reference radius (sqrt 33 - 2)/(5 sqrt 2))
    #[arg(long, global = true)]
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grid {
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelMode {
    /// Jump density in the outgoing piston energy
    Density,
    /// Closed-form moments next to their quadrature values
    Moments,
    /// Canonical-average identities
    Canonical,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form volumes, areas and mean free times
    Geometry(GeometryArgs),
    /// Mean free times from long equilibrium runs
    Mft(MftArgs),
    /// Mean time to the next ball-piston collision at fixed piston energy
    CondMft(CondMftArgs),
    /// Rescaled collision frequency against its analytic curve
    PhiScan(PhiScanArgs),
    /// Angular relaxation after one return to the piston
    Relax(RelaxArgs),
    /// Energy-exchange kernel of the rare-interaction limit
    Kernel(KernelArgs),
    /// Sample path of the jump process
    Gillespie(GillespieArgs),
    /// Master equation on a piston-energy grid
    Master(MasterArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Geometry(_) => "geometry",
            Command::Mft(_) => "mft",
            Command::CondMft(_) => "cond-mft",
            Command::PhiScan(_) => "phi-scan",
            Command::Relax(_) => "relax",
            Command::Kernel(_) => "kernel",
            Command::Gillespie(_) => "gillespie",
            Command::Master(_) => "master",
        }
    }

    pub fn is_stochastic(&self) -> bool {
        !matches!(self, Command::Geometry(_) | Command::Kernel(_) | Command::Master(_))
    }
}

// Flags that take a list accept `--flag a,b,c`; the config file accepts a
// scalar or an array.
fn one_or_many<'de, D: Deserializer<'de>, T: Deserialize<'de>>(d: D) -> Result<Option<Vec<T>>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(Option::<OneOrMany<T>>::deserialize(d)?.map(|v| match v {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(xs) => xs,
    }))
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Deltas {
    /// Penetration lengths, comma separated
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    #[serde(default, deserialize_with = "one_or_many", skip_serializing_if = "Option::is_none")]
    pub delta: Option<Vec<f64>>,
    /// `paper`: 0.325, 0.2, 0.175, 0.1, 0.05, 0.0125
    #[arg(long, value_enum, conflicts_with = "delta")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_grid: Option<Grid>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Energies {
    /// Piston energies in (0, 1/2), comma separated
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    #[serde(default, deserialize_with = "one_or_many", skip_serializing_if = "Option::is_none")]
    pub ep: Option<Vec<f64>>,
    /// `paper`: the 59 reference energies (k/100 plus dyadic points near both ends)
    #[arg(long, value_enum, conflicts_with = "ep")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ep_grid: Option<Grid>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct GeometryArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub deltas: Deltas,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct MftArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub deltas: Deltas,
    /// Events per run [default: 1000000]
    #[arg(long)]
    pub events: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct CondMftArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub deltas: Deltas,
    #[command(flatten)]
    #[serde(flatten)]
    pub energies: Energies,
    /// Trajectories per point [default: 10000]
    #[arg(long)]
    pub samples: Option<usize>,
    /// Draw the initial piston energy uniformly from a window of this width
    #[arg(long)]
    pub window: Option<f64>,
    /// Give up on a trajectory after this many events [default: 100000000]
    #[arg(long)]
    pub max_events: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct PhiScanArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub deltas: Deltas,
    #[command(flatten)]
    #[serde(flatten)]
    pub energies: Energies,
    /// Trajectories per point [default: 10000]
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RelaxArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub deltas: Deltas,
    #[command(flatten)]
    #[serde(flatten)]
    pub energies: Energies,
    /// Exponents of the initial angular densities [default: 0]
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    #[serde(default, deserialize_with = "one_or_many")]
    pub n: Option<Vec<u32>>,
    /// Trajectories per point [default: 10000]
    #[arg(long)]
    pub samples: Option<usize>,
    /// Bins per angular branch [default: 1000]
    #[arg(long)]
    pub bins: Option<usize>,
    /// Give up on a trajectory after this many events [default: 100000000]
    #[arg(long)]
    pub max_events: Option<u64>,
    /// Emit the histograms instead of the divergence summary
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub histograms: bool,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct KernelArgs {
    #[arg(long, value_enum)]
    pub mode: Option<KernelMode>,
    /// Penetration length, which sets the kernel prefactor [default: 0.1]
    #[arg(long)]
    pub delta: Option<f64>,
    /// Ball energy before the jump (density, moments)
    #[arg(long)]
    pub eb: Option<f64>,
    /// Piston energy before the jump (density, moments)
    #[arg(long)]
    pub ep: Option<f64>,
    /// Grid points in the outgoing piston energy [default: 200]
    #[arg(long)]
    pub points: Option<usize>,
    /// Inverse temperatures (canonical) [default: 1]
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    #[serde(default, deserialize_with = "one_or_many")]
    pub beta: Option<Vec<f64>>,
    /// Relative quadrature tolerance [default: 1e-9]
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct GillespieArgs {
    /// Penetration length, which sets the time scale [default: 0.1]
    #[arg(long)]
    pub delta: Option<f64>,
    /// Initial ball energy
    #[arg(long)]
    pub eb: Option<f64>,
    /// Initial piston energy
    #[arg(long)]
    pub ep: Option<f64>,
    /// Stop after this many jumps
    #[arg(long, conflicts_with = "time")]
    pub jumps: Option<u64>,
    /// Stop at this time
    #[arg(long)]
    pub time: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct MasterArgs {
    /// Penetration length, which sets the time scale [default: 0.1]
    #[arg(long)]
    pub delta: Option<f64>,
    /// Total energy of the pair [default: 0.5]
    #[arg(long)]
    pub total: Option<f64>,
    /// Grid cells in the piston energy [default: 200]
    #[arg(long)]
    pub cells: Option<usize>,
    /// Time step [default: a quarter of the inverse largest exit rate]
    #[arg(long)]
    pub dt: Option<f64>,
    /// Number of steps
    #[arg(long, conflicts_with = "time")]
    pub steps: Option<usize>,
    /// Evolve until this time
    #[arg(long)]
    pub time: Option<f64>,
    /// Start from all mass in the cell holding this piston energy [default: stationary start]
    #[arg(long)]
    pub initial_ep: Option<f64>,
}

/// Flag values over file values, key by key.
pub fn merge<T: Serialize + DeserializeOwned>(flags: &T, file: &toml::Table) -> Result<T, CliError> {
    let mut merged = match serde_json::to_value(file).map_err(|e| CliError::Config(e.to_string()))? {
        serde_json::Value::Object(m) => m,
        _ => unreachable!(),
    };
    if let serde_json::Value::Object(m) = serde_json::to_value(flags).map_err(|e| CliError::Config(e.to_string()))? {
        for (k, v) in m {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(serde_json::Value::Object(merged)).map_err(|e| CliError::Config(format!("config: {e}")))
}

/// Reads the config file and rejects keys that no flag carries.
pub fn read_config(path: &Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let cmd = Cli::command();
    let mut known: BTreeSet<String> = BTreeSet::new();
    for c in std::iter::once(&cmd).chain(cmd.get_subcommands()) {
        known.extend(c.get_arguments().filter_map(|a| a.get_long()).map(str::to_owned));
    }
    known.remove("config");
    for key in table.keys() {
        if !known.contains(key) {
            return Err(CliError::Config(format!("{}: unknown key `{key}`", path.display())));
        }
    }
    Ok(table)
}
