//! Command-line flags and the TOML config file that mirrors them.

use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use geofindr::audit::BackendKind;

use crate::UsageError;

#[derive(Debug, Parser)]
#[command(name = "geofindr", version, about = "Audit the declared location of a cloud VM from network delays")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one audit and print its JSON report.
    Audit(AuditArgs),
    /// Run audits over a range of one parameter and emit a CSV table.
    Sweep(SweepArgs),
    /// Generate a simulated world and write its catalog, mesh and scenario.
    SimulateWorld(SimulateArgs),
    /// Remove every landmark within a radius of a center from a catalog and mesh.
    MakeDeadzone(DeadzoneArgs),
    /// Snapshot RIPE Atlas anchors and their mesh pings.
    FetchAtlas(FetchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Sim,
    Replay,
    Icmp,
}

impl From<Backend> for BackendKind {
    fn from(b: Backend) -> Self {
        match b {
            Backend::Sim => BackendKind::Sim,
            Backend::Replay => BackendKind::Replay,
            Backend::Icmp => BackendKind::Icmp,
        }
    }
}

/// Flags shared by `audit` and `sweep`. Every one may also come from `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonFlags {
    /// TOML file with defaults for any of these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Convergence tolerance in km.
    #[arg(long, visible_alias = "tolerance-km")]
    pub tolerance: Option<f64>,
    /// Initial radius of the landmark zone in km.
    #[arg(long, visible_alias = "zone-size-km")]
    pub zone_size: Option<f64>,
    /// Number of dispersed audit landmarks per iteration.
    #[arg(long)]
    pub nb_lm: Option<usize>,
    /// Half-width of the delay similarity interval, in percent.
    #[arg(long)]
    pub interval_percent: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long, value_enum)]
    pub backend: Option<Backend>,
    /// Simulated world: a world spec or a scenario JSON (the latter needs --catalog).
    #[arg(long, visible_alias = "world")]
    pub scenario: Option<PathBuf>,
    /// Landmark catalog (JSON lines).
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Landmark mesh RTTs (CSV src_id,dst_id,rtt_ms).
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// Recorded measurements for the replay backend (CSV landmark_id,rtt_ms).
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Proxy address pinged for in-cloud readings.
    #[arg(long, visible_alias = "proxy-address")]
    pub proxy: Option<Ipv4Addr>,
    /// Known true position ("lat,lon" or city); the simulated truth is used otherwise.
    #[arg(long)]
    pub truth: Option<String>,
    /// Seed of the simulated world.
    #[arg(long, env = "GEOFINDR_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "GEOFINDR_ATLAS_URL")]
    pub atlas_url: Option<String>,
    /// Where to write the result; stdout otherwise.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Declared position: "lat,lon" or the name of a bundled city.
    #[arg(long, visible_alias = "declared-position", allow_hyphen_values = true)]
    pub declared: Option<String>,
    #[command(flatten)]
    pub common: CommonFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
pub enum SweepParameter {
    #[value(name = "tolerance")]
    #[serde(rename = "tolerance")]
    Tolerance,
    #[value(name = "zone_size", alias = "zone-size")]
    #[serde(rename = "zone_size")]
    ZoneSize,
    #[value(name = "nb_lm", alias = "nb-lm")]
    #[serde(rename = "nb_lm")]
    NbLm,
    #[value(name = "interval_percent", alias = "interval-percent")]
    #[serde(rename = "interval_percent")]
    IntervalPercent,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::Tolerance => "tolerance",
            SweepParameter::ZoneSize => "zone_size",
            SweepParameter::NbLm => "nb_lm",
            SweepParameter::IntervalPercent => "interval_percent",
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub parameter: Option<SweepParameter>,
    /// Comma-separated values, or an inclusive range "start..end:step".
    #[arg(long, allow_hyphen_values = true)]
    pub values: Option<String>,
    /// Runs per (value, position) pair.
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// Declared positions, repeatable; all bundled cities when absent.
    #[arg(long = "declared", allow_hyphen_values = true)]
    pub declared: Vec<String>,
    /// Number of audits run concurrently.
    #[arg(long)]
    pub parallel: Option<usize>,
    #[command(flatten)]
    pub common: CommonFlags,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// World spec JSON; the Paris-dense preset otherwise.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Jitter fraction of the preset.
    #[arg(long, default_value_t = 0.1)]
    pub jitter: f64,
    /// Lower bound of the preset's per-node offsets, in ms.
    #[arg(long, default_value_t = 0.0)]
    pub offset_min: f64,
    /// Upper bound of the preset's per-node offsets, in ms.
    #[arg(long, default_value_t = 0.2)]
    pub offset_max: f64,
    #[arg(long, env = "GEOFINDR_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct DeadzoneArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub mesh: PathBuf,
    /// Center of the dead zone: "lat,lon" or a city name.
    #[arg(long, allow_hyphen_values = true)]
    pub center: String,
    #[arg(long, visible_alias = "radius-km")]
    pub radius: f64,
    #[arg(long)]
    pub out_catalog: PathBuf,
    #[arg(long)]
    pub out_mesh: PathBuf,
}

#[derive(Debug, Args)]
pub struct FetchArgs {
    #[arg(long, env = "GEOFINDR_ATLAS_URL")]
    pub atlas_url: Option<String>,
    /// Stop after this many mesh measurements.
    #[arg(long)]
    pub max_measurements: Option<usize>,
    #[arg(long)]
    pub out_catalog: PathBuf,
    #[arg(long)]
    pub out_mesh: PathBuf,
}

/// Contents of a `--config` file. Keys are the flag names with underscores.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(alias = "declared_position")]
    pub declared: Option<DeclaredList>,
    #[serde(alias = "tolerance_km")]
    pub tolerance: Option<f64>,
    #[serde(alias = "zone_size_km")]
    pub zone_size: Option<f64>,
    pub nb_lm: Option<usize>,
    pub interval_percent: Option<f64>,
    pub max_iterations: Option<usize>,
    pub backend: Option<Backend>,
    #[serde(alias = "world")]
    pub scenario: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub mesh: Option<PathBuf>,
    pub replay: Option<PathBuf>,
    #[serde(alias = "proxy_address")]
    pub proxy: Option<Ipv4Addr>,
    pub truth: Option<String>,
    pub seed: Option<u64>,
    pub atlas_url: Option<String>,
    pub output: Option<PathBuf>,
    pub parameter: Option<SweepParameter>,
    pub values: Option<String>,
    pub repetitions: Option<usize>,
    pub parallel: Option<usize>,
}

/// `declared` is a single position for `audit` and may be a list for `sweep`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum DeclaredList {
    One(String),
    Many(Vec<String>),
}

impl DeclaredList {
    pub fn into_vec(self) -> Vec<String> {
        match self {
            DeclaredList::One(s) => vec![s],
            DeclaredList::Many(v) => v,
        }
    }
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())))
    }
}

impl CommonFlags {
    /// Fills every unset flag from the config file, if one was given.
    pub fn resolve(mut self) -> Result<(Self, FileConfig), UsageError> {
        let file = match &self.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        macro_rules! fill {
            ($($f:ident),*) => { $( if self.$f.is_none() { self.$f = file.$f.clone(); } )* };
        }
        fill!(
            tolerance,
            zone_size,
            nb_lm,
            interval_percent,
            max_iterations,
            backend,
            scenario,
            catalog,
            mesh,
            replay,
            proxy,
            truth,
            seed,
            atlas_url,
            output
        );
        Ok((self, file))
    }
}
